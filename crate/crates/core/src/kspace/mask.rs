use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the outer (non-center) lines are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPattern {
    /// Uniform choice without replacement.
    #[default]
    Random,
    /// Evenly spread over the outer columns.
    Equispaced,
}

/// Column (phase-encode line) sampling pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartesianMask {
    sampled: Vec<bool>,
    /// 1 for a fully sampled mask.
    accel: u32,
    center_fraction: f64,
}

impl CartesianMask {
    /// Every column sampled.
    pub fn full(width: usize) -> Self {
        CartesianMask {
            sampled: vec![true; width],
            accel: 1,
            center_fraction: 1.0,
        }
    }

    pub fn from_columns(sampled: Vec<bool>, accel: u32, center_fraction: f64) -> Self {
        CartesianMask {
            sampled,
            accel,
            center_fraction,
        }
    }

    /// Only the fully sampled center block of a `make_mask` mask.
    pub fn center_only(width: usize, accel: u32) -> Result<Self> {
        let cf = center_fraction_for(accel)?;
        let (start, len) = center_block(width, cf);
        let mut sampled = vec![false; width];
        sampled[start..start + len].fill(true);
        Ok(CartesianMask {
            sampled,
            accel,
            center_fraction: cf,
        })
    }

    pub fn width(&self) -> usize {
        self.sampled.len()
    }

    pub fn accel(&self) -> u32 {
        self.accel
    }

    pub fn center_fraction(&self) -> f64 {
        self.center_fraction
    }

    pub fn is_sampled(&self, col: usize) -> bool {
        self.sampled[col]
    }

    pub fn columns(&self) -> &[bool] {
        &self.sampled
    }

    pub fn sampled_count(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }
}

pub(crate) fn center_fraction_for(accel: u32) -> Result<f64> {
    match accel {
        4 => Ok(0.08),
        8 => Ok(0.04),
        other => Err(Error::invalid(format!(
            "acceleration must be 4 or 8, got {other}"
        ))),
    }
}

/// `(start, len)` of the centered block of `round(cf * w)` columns around `w/2`.
pub(crate) fn center_block(width: usize, center_fraction: f64) -> (usize, usize) {
    let len = ((center_fraction * width as f64).round() as usize).min(width);
    let start = (width / 2).saturating_sub(len / 2).min(width - len);
    (start, len)
}

/// Random Cartesian mask with `round(w / accel)` sampled columns.
pub fn make_mask<R: Rng + ?Sized>(width: usize, accel: u32, rng: &mut R) -> Result<CartesianMask> {
    make_mask_with(width, accel, MaskPattern::Random, rng)
}

pub fn make_mask_with<R: Rng + ?Sized>(
    width: usize,
    accel: u32,
    pattern: MaskPattern,
    rng: &mut R,
) -> Result<CartesianMask> {
    let cf = center_fraction_for(accel)?;
    if width == 0 {
        return Err(Error::invalid("mask width must be positive"));
    }
    let budget = (width as f64 / accel as f64).round() as usize;
    let (start, len) = center_block(width, cf);
    if budget < len {
        return Err(Error::invalid(format!(
            "line budget {budget} smaller than center block {len} for width {width}"
        )));
    }
    let mut sampled = vec![false; width];
    sampled[start..start + len].fill(true);
    let outer: Vec<usize> = (0..width).filter(|&c| !sampled[c]).collect();
    let extra = budget - len;
    match pattern {
        MaskPattern::Random => {
            for i in index::sample(rng, outer.len(), extra).into_iter() {
                sampled[outer[i]] = true;
            }
        }
        MaskPattern::Equispaced => {
            for i in 0..extra {
                let pick = ((2 * i + 1) * outer.len()) / (2 * extra);
                sampled[outer[pick]] = true;
            }
        }
    }
    Ok(CartesianMask {
        sampled,
        accel,
        center_fraction: cf,
    })
}
