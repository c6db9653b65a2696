use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use csnas::data::AccelMode;
use csnas::gradcore::AdamConfig;
use csnas::kspace::Lambda;
use csnas::model::{ModelKind, NetworkConfig, SearchSpace};
use csnas::search::SearchConfig;
use csnas::traineval::{TrainSchedule, Tv};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub fraction: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_optimizer: AdamConfig,
    pub alpha_optimizer: AdamConfig,
}

impl Default for SearchOptions {
    fn default() -> Self {
        let d = SearchConfig::default();
        SearchOptions {
            fraction: d.fraction,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            patience: d.patience,
            weight_optimizer: d.weight_optimizer,
            alpha_optimizer: d.alpha_optimizer,
        }
    }
}

/// One run's effective settings; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Evaluation slices; falls back to `dataset`.
    pub testset: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub precision: Precision,
    /// Acceleration drawn for training and search samples.
    pub accel: AccelMode,
    pub network: NetworkConfig,
    pub schedule: TrainSchedule,
    pub search: SearchOptions,
    pub tv: Tv,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data.csmri"),
            testset: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            precision: Precision::default(),
            accel: AccelMode::default(),
            network: NetworkConfig::default(),
            schedule: TrainSchedule::default(),
            search: SearchOptions::default(),
            tv: Tv::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(path, e))
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            network: self.network.clone(),
            fraction: self.search.fraction,
            batch_size: self.search.batch_size,
            max_epochs: self.search.max_epochs,
            patience: self.search.patience,
            weight_optimizer: self.search.weight_optimizer,
            alpha_optimizer: self.search.alpha_optimizer,
            accel: self.accel,
        }
    }

    pub fn testset_path(&self) -> &Path {
        self.testset.as_deref().unwrap_or(&self.dataset)
    }

    /// Single-line JSON used as the provenance echo in every artifact.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Flags shared by every command; each one overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub testset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// Training acceleration: random, full, 4 or 8.
    #[arg(long, global = true)]
    pub accel: Option<AccelMode>,
    /// nas, dccnn or rdn.
    #[arg(long, global = true)]
    pub model: Option<ModelKind>,
    #[arg(long, global = true)]
    pub blocks: Option<usize>,
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    #[arg(long, global = true)]
    pub modules: Option<usize>,
    #[arg(long, global = true)]
    pub cells: Option<usize>,
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    /// A, B, extended, or a comma-separated op list.
    #[arg(long, global = true)]
    pub space: Option<SearchSpace>,
    /// Data-consistency weight; `inf` for hard replacement.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub share_weights: Option<bool>,
    #[arg(long, global = true)]
    pub epochs1: Option<usize>,
    #[arg(long, global = true)]
    pub epochs2: Option<usize>,
    #[arg(long, global = true)]
    pub lr1: Option<f64>,
    #[arg(long, global = true)]
    pub lr2: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    #[arg(long, global = true)]
    pub fraction: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.dataset, self.dataset.clone());
        if self.testset.is_some() {
            c.testset = self.testset.clone();
        }
        set(&mut c.out_dir, self.out_dir.clone());
        set(&mut c.seed, self.seed);
        set(&mut c.precision, self.precision);
        set(&mut c.accel, self.accel);
        let n = &mut c.network;
        set(&mut n.kind, self.model);
        set(&mut n.blocks, self.blocks);
        set(&mut n.channels, self.channels);
        set(&mut n.modules, self.modules);
        set(&mut n.cells_per_module, self.cells);
        set(&mut n.nodes_per_cell, self.nodes);
        set(&mut n.search_space, self.space.clone());
        set(&mut n.share_module_weights, self.share_weights);
        if let Some(l) = self.lambda {
            n.lambda = Lambda::new(l).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        let s = &mut c.schedule;
        set(&mut s.epochs_phase1, self.epochs1);
        set(&mut s.epochs_phase2, self.epochs2);
        set(&mut s.lr_phase1, self.lr1);
        set(&mut s.lr_phase2, self.lr2);
        set(&mut s.batch_size, self.batch_size);
        let q = &mut c.search;
        set(&mut q.batch_size, self.batch_size);
        set(&mut q.max_epochs, self.max_epochs);
        set(&mut q.patience, self.patience);
        set(&mut q.fraction, self.fraction);
        Ok(c)
    }
}
