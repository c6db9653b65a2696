//! First-order alternating optimization of network weights and
//! architecture logits, with genotype-stability early stopping.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{simulate_many, split, AccelMode, Dataset, Sample};
use crate::error::{Error, Result};
use crate::gradcore::{AdamConfig, AdamState, Graph, Real};
use crate::model::{discretize, AlphaParams, Genotype, ModelKind, Network, NetworkConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub network: NetworkConfig,
    /// Share of the slices used for weight updates; the rest drive `alpha`.
    pub fraction: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_optimizer: AdamConfig,
    pub alpha_optimizer: AdamConfig,
    pub accel: AccelMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            network: NetworkConfig::nas(),
            fraction: 0.5,
            batch_size: 2,
            max_epochs: 50,
            patience: 5,
            weight_optimizer: AdamConfig::default(),
            alpha_optimizer: AdamConfig {
                lr: 3e-4,
                weight_decay: 1e-3,
                ..AdamConfig::default()
            },
            accel: AccelMode::Random,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.kind != ModelKind::Nas {
            return Err(Error::invalid("search needs a nas network config"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::invalid(
                "batch_size, max_epochs and patience must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Supernet with its two optimizers and the per-epoch genotypes.
#[derive(Clone, Debug)]
pub struct SearchState<T: Real> {
    pub network: Network<T>,
    pub weight_opt: AdamState<T>,
    pub alpha_opt: AdamState<T>,
    pub epoch: usize,
    pub history: Vec<Genotype>,
}

/// L1 losses seen by the two halves of one step, before each update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub omega: f64,
    pub alpha: f64,
}

impl<T: Real> SearchState<T> {
    pub fn new<R: Rng + ?Sized>(config: &SearchConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let network = Network::new(config.network.clone(), None, rng)?;
        Ok(Self::from_network(network, config))
    }

    pub fn from_network(network: Network<T>, config: &SearchConfig) -> Self {
        let weight_opt = AdamState::new(config.weight_optimizer, network.store(), network.weight_ids());
        let alpha_opt = AdamState::new(config.alpha_optimizer, network.store(), network.alpha_ids());
        SearchState {
            network,
            weight_opt,
            alpha_opt,
            epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn alpha(&self) -> AlphaParams {
        self.network.alpha().expect("search state holds a supernet")
    }
}

fn update<T: Real>(
    network: &mut Network<T>,
    opt: &mut AdamState<T>,
    batch: &[&Sample],
) -> Result<f64> {
    let mask = network.mask_for(opt.params());
    let (loss, grads) = {
        let mut g = Graph::with_trainable(network.store(), mask);
        let loss = network.loss(&mut g, batch)?;
        let value = g.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
        (value, g.backward(loss)?)
    };
    opt.step(network.store_mut(), &grads);
    Ok(loss)
}

/// One weight update on `batch_omega` (logits frozen), then one logit
/// update on `batch_alpha` (weights frozen).
pub fn search_step<T: Real>(
    state: &mut SearchState<T>,
    batch_omega: &[&Sample],
    batch_alpha: &[&Sample],
) -> Result<StepLosses> {
    if batch_omega.is_empty() || batch_alpha.is_empty() {
        return Err(Error::invalid("search step needs two non-empty batches"));
    }
    let omega = update(&mut state.network, &mut state.weight_opt, batch_omega)?;
    let alpha = update(&mut state.network, &mut state.alpha_opt, batch_alpha)?;
    Ok(StepLosses { omega, alpha })
}

/// True iff the last `patience + 1` genotypes are identical.
pub fn genotype_stable(history: &[Genotype], patience: usize) -> bool {
    let need = patience + 1;
    if history.len() < need {
        return false;
    }
    let tail = &history[history.len() - need..];
    tail.iter().all(|g| g == &tail[0])
}

/// Architecture logits after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSnapshot {
    pub epoch: usize,
    pub alpha: AlphaParams,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub genotype: Genotype,
    pub history: Vec<Genotype>,
    pub alpha_trace: Vec<AlphaSnapshot>,
    /// Mean step losses per epoch.
    pub losses: Vec<StepLosses>,
    pub stopped_early: bool,
    /// Slice ids used for weight and logit updates.
    pub omega_ids: Vec<usize>,
    pub alpha_ids: Vec<usize>,
}

fn batches(ids: &[usize], batch: usize, steps: usize) -> Vec<Vec<usize>> {
    // Cycles through `ids` when more steps than batches are needed.
    (0..steps)
        .map(|s| (0..batch).map(|k| ids[(s * batch + k) % ids.len()]).collect())
        .collect()
}

/// Full search loop.
pub fn run_search<T: Real, R: Rng + ?Sized>(
    config: &SearchConfig,
    dataset: &Dataset,
    rng: &mut R,
) -> Result<SearchOutcome> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::invalid("search needs at least 2 slices"));
    }
    let parts = split(dataset, config.fraction, rng)?;
    let mut state = SearchState::<T>::new(config, rng)?;
    let mut trace = Vec::new();
    let mut losses = Vec::new();
    let mut stopped_early = false;
    let b = config.batch_size;

    while state.epoch < config.max_epochs {
        let mut omega = parts.omega.clone();
        let mut alpha = parts.alpha.clone();
        omega.shuffle(rng);
        alpha.shuffle(rng);
        let omega_samples = simulate_many(dataset, &omega, config.accel, rng)?;
        let alpha_samples = simulate_many(dataset, &alpha, config.accel, rng)?;
        let steps = omega.len().max(alpha.len()).div_ceil(b);
        let positions_o: Vec<usize> = (0..omega.len()).collect();
        let positions_a: Vec<usize> = (0..alpha.len()).collect();
        let (mut sum_o, mut sum_a) = (0.0, 0.0);
        for (bo, ba) in batches(&positions_o, b.min(omega.len()), steps)
            .into_iter()
            .zip(batches(&positions_a, b.min(alpha.len()), steps))
        {
            let batch_o: Vec<&Sample> = bo.iter().map(|&i| &omega_samples[i]).collect();
            let batch_a: Vec<&Sample> = ba.iter().map(|&i| &alpha_samples[i]).collect();
            let l = search_step(&mut state, &batch_o, &batch_a)?;
            sum_o += l.omega;
            sum_a += l.alpha;
        }
        losses.push(StepLosses {
            omega: sum_o / steps as f64,
            alpha: sum_a / steps as f64,
        });
        state.epoch += 1;
        let current = state.alpha();
        state.history.push(discretize(&current)?);
        trace.push(AlphaSnapshot {
            epoch: state.epoch,
            alpha: current,
        });
        if genotype_stable(&state.history, config.patience) {
            stopped_early = true;
            break;
        }
    }

    Ok(SearchOutcome {
        genotype: state.history.last().cloned().expect("at least one epoch"),
        history: state.history,
        alpha_trace: trace,
        losses,
        stopped_early,
        omega_ids: parts.omega,
        alpha_ids: parts.alpha,
    })
}

/// CSV of softmax probabilities: `epoch,node,edge,op,probability`.
pub fn alpha_trace_csv(trace: &[AlphaSnapshot]) -> String {
    let mut out = String::from("epoch,node,edge,op,probability\n");
    for snap in trace {
        let ops = snap.alpha.space().ops();
        for i in 0..snap.alpha.nodes() {
            for j in 0..i + 2 {
                for (k, p) in snap.alpha.probabilities(i, j).iter().enumerate() {
                    writeln!(out, "{},{},{},{},{}", snap.epoch, i, j, ops[k], p).expect("string write");
                }
            }
        }
    }
    out
}
