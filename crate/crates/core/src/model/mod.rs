//! Candidate operations, cells, reconstruction modules, the cascaded
//! network with data consistency, and FLOPs/parameter accounting.

mod count;
mod genotype;
mod network;
mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::Lambda;

pub use count::{count_flops, count_params, module_layers};
pub use genotype::{discretize, AlphaParams, Genotype, GenotypeNode};
pub use network::{CellBody, CellWeights, ModuleWeights, Network};
pub use ops::{op_conv_shapes, CandidateOp, Conv, ConvShape, OpKind, SearchSpace};

/// Reconstruction module family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Searched cells (a supernet when no genotype is given).
    #[default]
    Nas,
    /// Residual blocks of two 3x3 convs.
    Dccnn,
    /// One weight-shared block of dilated convs applied recursively.
    Rdn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nas => "nas",
            ModelKind::Dccnn => "dccnn",
            ModelKind::Rdn => "rdn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nas" => Ok(ModelKind::Nas),
            "dccnn" => Ok(ModelKind::Dccnn),
            "rdn" => Ok(ModelKind::Rdn),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub kind: ModelKind,
    pub modules: usize,
    pub cells_per_module: usize,
    pub nodes_per_cell: usize,
    pub channels: usize,
    /// Residual blocks (dccnn) or recursions (rdn).
    pub blocks: usize,
    pub search_space: SearchSpace,
    /// One set of module weights reused by every module.
    pub share_module_weights: bool,
    pub lambda: Lambda,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            kind: ModelKind::Nas,
            modules: 3,
            cells_per_module: 3,
            nodes_per_cell: 3,
            channels: 32,
            blocks: 3,
            search_space: SearchSpace::A,
            share_module_weights: false,
            lambda: Lambda::HARD,
        }
    }
}

impl NetworkConfig {
    pub fn nas() -> Self {
        NetworkConfig::default()
    }

    pub fn dccnn(blocks: usize) -> Self {
        NetworkConfig {
            kind: ModelKind::Dccnn,
            blocks,
            ..NetworkConfig::default()
        }
    }

    /// DCCNN blocks with all modules sharing weights.
    pub fn modl(blocks: usize) -> Self {
        NetworkConfig {
            share_module_weights: true,
            ..NetworkConfig::dccnn(blocks)
        }
    }

    pub fn rdn(blocks: usize) -> Self {
        NetworkConfig {
            kind: ModelKind::Rdn,
            blocks,
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("modules", self.modules),
            ("cells_per_module", self.cells_per_module),
            ("nodes_per_cell", self.nodes_per_cell),
            ("channels", self.channels),
            ("blocks", self.blocks),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        Ok(())
    }

    /// Number of distinct module weight sets.
    pub fn weight_sets(&self) -> usize {
        if self.share_module_weights {
            1
        } else {
            self.modules
        }
    }
}
