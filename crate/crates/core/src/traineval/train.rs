use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{simulate_many, AccelMode, Dataset, Sample};
use crate::error::{Error, Result};
use crate::gradcore::{AdamConfig, AdamState, Graph, Real};
use crate::model::Network;

/// Two-phase Adam schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub batch_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs_phase1: 40,
            epochs_phase2: 40,
            lr_phase1: 1e-3,
            lr_phase2: 1e-4,
            batch_size: 2,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_phase1 + self.epochs_phase2 == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "schedule needs at least one epoch and a positive batch size",
            ));
        }
        if !(self.lr_phase1 >= 0.0 && self.lr_phase2 >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.epochs_phase1 {
            self.lr_phase1
        } else {
            self.lr_phase2
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
}

/// Trains every convolution weight of `network` with L1 loss on the
/// real/imaginary channels. Masks are redrawn for every slice each epoch.
pub fn train<T: Real, R: Rng + ?Sized>(
    network: &mut Network<T>,
    dataset: &Dataset,
    schedule: &TrainSchedule,
    accel: AccelMode,
    rng: &mut R,
) -> Result<TrainReport> {
    schedule.validate()?;
    let params = network.weight_ids();
    let mask = network.mask_for(&params);
    let mut opt = AdamState::new(
        AdamConfig {
            lr: schedule.lr_phase1,
            ..AdamConfig::default()
        },
        network.store(),
        params,
    );
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(schedule.epochs());
    for epoch in 0..schedule.epochs() {
        opt.set_lr(schedule.lr_at(epoch));
        order.shuffle(rng);
        let samples = simulate_many(dataset, &order, accel, rng)?;
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in samples.chunks(schedule.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().collect();
            let grads = {
                let mut g = Graph::with_trainable(network.store(), mask.clone());
                let loss = network.loss(&mut g, &batch)?;
                total += g.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
                g.backward(loss)?
            };
            opt.step(network.store_mut(), &grads);
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(TrainReport { losses })
}
