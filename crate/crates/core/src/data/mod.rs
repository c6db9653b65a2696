//! Synthetic phantoms, acquisition simulation, search splits and dataset
//! files.

mod io;
mod phantom;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{
    apply_mask, fft2c, ifft2c, make_mask_with, normalize, CartesianMask, ComplexImage,
    KSpaceGrid, MaskPattern,
};

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC};
pub use phantom::{gen_phantom, gen_phantom_with, PhaseMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    File,
}

/// Non-empty collection of equally sized complex slices.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    slices: Vec<ComplexImage>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(slices: Vec<ComplexImage>, provenance: Provenance) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::invalid("dataset must contain at least one slice"))?;
        let dims = first.dims();
        if let Some((i, s)) = slices.iter().enumerate().find(|(_, s)| s.dims() != dims) {
            return Err(Error::invalid(format!(
                "slice {i} has shape {:?}, expected {:?}",
                s.dims(),
                dims
            )));
        }
        Ok(Dataset { slices, provenance })
    }

    /// `count` seeded phantoms of size `h x w`.
    pub fn synthetic<R: Rng + ?Sized>(
        count: usize,
        h: usize,
        w: usize,
        phase: PhaseMode,
        rng: &mut R,
    ) -> Result<Self> {
        let slices = (0..count)
            .map(|_| gen_phantom_with(rng, h, w, phase))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(slices, Provenance::Synthetic)
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.slices[0].dims()
    }

    pub fn slices(&self) -> &[ComplexImage] {
        &self.slices
    }

    pub fn slice(&self, i: usize) -> &ComplexImage {
        &self.slices[i]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// New dataset holding the given slice indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Dataset::new(
            indices.iter().map(|&i| self.slices[i].clone()).collect(),
            self.provenance,
        )
    }
}

/// Acceleration used when simulating an acquisition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Acceleration {
    /// Every column sampled (debug mode).
    Full,
    /// 4- or 8-fold Cartesian mask.
    Fold(u32),
}

impl Acceleration {
    pub fn factor(self) -> u32 {
        match self {
            Acceleration::Full => 1,
            Acceleration::Fold(a) => a,
        }
    }
}

/// How the acceleration of each simulated acquisition is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AccelMode {
    /// 4 or 8 with equal probability, drawn per slice.
    #[default]
    Random,
    /// Always fully sampled.
    Full,
    Fixed(u32),
}

impl AccelMode {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> Acceleration {
        match self {
            AccelMode::Random => Acceleration::Fold(if rng.gen_bool(0.5) { 4 } else { 8 }),
            AccelMode::Full => Acceleration::Full,
            AccelMode::Fixed(a) => Acceleration::Fold(a),
        }
    }
}

impl std::str::FromStr for AccelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(AccelMode::Random),
            "full" => Ok(AccelMode::Full),
            "4" => Ok(AccelMode::Fixed(4)),
            "8" => Ok(AccelMode::Fixed(8)),
            other => Err(Error::invalid(format!(
                "acceleration mode must be random, full, 4 or 8, got {other:?}"
            ))),
        }
    }
}

impl TryFrom<String> for AccelMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AccelMode> for String {
    fn from(m: AccelMode) -> String {
        match m {
            AccelMode::Random => "random".into(),
            AccelMode::Full => "full".into(),
            AccelMode::Fixed(a) => a.to_string(),
        }
    }
}

/// Acquisitions of `indices` with one fresh acceleration and mask per slice.
pub fn simulate_many<R: Rng + ?Sized>(
    dataset: &Dataset,
    indices: &[usize],
    mode: AccelMode,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    indices
        .iter()
        .map(|&i| {
            let accel = mode.draw(rng);
            simulate_acquisition(dataset.slice(i), accel, rng)
        })
        .collect()
}

/// One training/evaluation example derived from a fully sampled slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Normalized fully sampled image.
    pub target: ComplexImage,
    /// Masked k-space of `target`.
    pub s: KSpaceGrid,
    pub mask: CartesianMask,
    pub zero_filled: ComplexImage,
    /// Factor that was applied by normalization.
    pub scale: f64,
}

impl Sample {
    /// Rebuilds the derived fields from `target` and `mask`.
    pub fn from_target(target: ComplexImage, mask: CartesianMask, scale: f64) -> Result<Self> {
        let s = apply_mask(&fft2c(&target), &mask)?;
        let zero_filled = ifft2c(&s);
        Ok(Sample {
            target,
            s,
            mask,
            zero_filled,
            scale,
        })
    }

    /// True when `s` and `zero_filled` are exactly what `target` and
    /// `mask` imply.
    pub fn is_consistent(&self) -> bool {
        match Sample::from_target(self.target.clone(), self.mask.clone(), self.scale) {
            Ok(r) => r.s == self.s && r.zero_filled == self.zero_filled,
            Err(_) => false,
        }
    }

    pub fn accel(&self) -> u32 {
        self.mask.accel()
    }
}

/// normalize -> fft2c -> mask -> zero-filled reconstruction.
pub fn simulate_acquisition<R: Rng + ?Sized>(
    img: &ComplexImage,
    accel: Acceleration,
    rng: &mut R,
) -> Result<Sample> {
    simulate_acquisition_with(img, accel, MaskPattern::Random, rng)
}

pub fn simulate_acquisition_with<R: Rng + ?Sized>(
    img: &ComplexImage,
    accel: Acceleration,
    pattern: MaskPattern,
    rng: &mut R,
) -> Result<Sample> {
    let (target, scale) = normalize(img)?;
    let mask = match accel {
        Acceleration::Full => CartesianMask::full(img.width()),
        Acceleration::Fold(a) => make_mask_with(img.width(), a, pattern, rng)?,
    };
    Sample::from_target(target, mask, scale)
}

/// Disjoint index sets for weight and architecture updates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub omega: Vec<usize>,
    pub alpha: Vec<usize>,
}

/// Seeded shuffle of `0..n`, first `ceil(n * fraction)` indices to `omega`,
/// the rest to `alpha`. Both parts are kept non-empty.
pub fn split<R: Rng + ?Sized>(dataset: &Dataset, fraction: f64, rng: &mut R) -> Result<Split> {
    split_indices(dataset.len(), fraction, rng)
}

pub fn split_indices<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Result<Split> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 slices to split, got {n}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    // The small slack keeps e.g. 0.7 * 10 = 7.000000000000001 at 7.
    let first = ((n as f64 * fraction - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let alpha = order.split_off(first);
    Ok(Split {
        omega: order,
        alpha,
    })
}
