use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{simulate_acquisition, Acceleration, Dataset, Sample};
use crate::error::{Error, Result};
use crate::gradcore::Real;
use crate::kspace::ComplexImage;
use crate::model::Network;

use super::metrics::{mse, nmse, psnr_from_mse, ssim};
use super::tv::tv_reconstruct;

/// Anything that maps an undersampled sample to an image estimate.
pub trait Reconstructor {
    fn name(&self) -> String;
    fn reconstruct(&self, sample: &Sample) -> Result<ComplexImage>;
    /// `(params, flops)` for an `h x w` input, when meaningful.
    fn complexity(&self, _h: usize, _w: usize) -> Result<Option<(u64, u64)>> {
        Ok(None)
    }
}

/// Inverse FFT of the zero-filled k-space.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroFilled;

impl Reconstructor for ZeroFilled {
    fn name(&self) -> String {
        "zero_filled".into()
    }

    fn reconstruct(&self, sample: &Sample) -> Result<ComplexImage> {
        Ok(sample.zero_filled.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tv {
    pub weight: f64,
    pub iters: usize,
}

impl Default for Tv {
    fn default() -> Self {
        Tv {
            weight: 0.01,
            iters: 200,
        }
    }
}

impl Reconstructor for Tv {
    fn name(&self) -> String {
        "tv".into()
    }

    fn reconstruct(&self, sample: &Sample) -> Result<ComplexImage> {
        tv_reconstruct(&sample.s, &sample.mask, self.weight, self.iters)
    }
}

impl<T: Real> Reconstructor for Network<T> {
    fn name(&self) -> String {
        self.config().kind.to_string()
    }

    fn reconstruct(&self, sample: &Sample) -> Result<ComplexImage> {
        Network::reconstruct(self, sample)
    }

    fn complexity(&self, h: usize, w: usize) -> Result<Option<(u64, u64)>> {
        Ok(Some((self.param_count(), self.measured_flops(h, w)?)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceMetrics {
    pub slice_id: usize,
    pub accel: u32,
    pub mse: f64,
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean and population standard deviation of each metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub mse: (f64, f64),
    pub nmse: (f64, f64),
    pub psnr: (f64, f64),
    pub ssim: (f64, f64),
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Aggregate {
    fn of(rows: &[&SliceMetrics]) -> Aggregate {
        let it = rows.iter();
        Aggregate {
            count: rows.len(),
            mse: mean_std(it.clone().map(|r| r.mse)),
            nmse: mean_std(it.clone().map(|r| r.nmse)),
            psnr: mean_std(it.clone().map(|r| r.psnr)),
            ssim: mean_std(it.map(|r| r.ssim)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub rows: Vec<SliceMetrics>,
    pub params: Option<u64>,
    pub flops: Option<u64>,
}

impl MetricsReport {
    pub fn aggregate(&self) -> Aggregate {
        Aggregate::of(&self.rows.iter().collect::<Vec<_>>())
    }

    pub fn by_accel(&self, accel: u32) -> Aggregate {
        Aggregate::of(&self.rows.iter().filter(|r| r.accel == accel).collect::<Vec<_>>())
    }

    /// Per-slice rows followed by `mean` and `std` footer rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice_id,accel,mse,nmse,psnr,ssim\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{},{}", r.slice_id, r.accel, r.mse, r.nmse, r.psnr, r.ssim)
                .expect("string write");
        }
        let a = self.aggregate();
        writeln!(out, "mean,all,{},{},{},{}", a.mse.0, a.nmse.0, a.psnr.0, a.ssim.0)
            .expect("string write");
        writeln!(out, "std,all,{},{},{},{}", a.mse.1, a.nmse.1, a.psnr.1, a.ssim.1)
            .expect("string write");
        out
    }
}

/// Seeded test acquisitions: after a shuffle the first half (rounded up)
/// is sampled at 4-fold, the rest at 8-fold. Returns `(slice_id, sample)`.
pub fn test_samples<R: Rng + ?Sized>(
    testset: &Dataset,
    rng: &mut R,
) -> Result<Vec<(usize, Sample)>> {
    if testset.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let mut order: Vec<usize> = (0..testset.len()).collect();
    order.shuffle(rng);
    let half = testset.len().div_ceil(2);
    order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let accel = Acceleration::Fold(if k < half { 4 } else { 8 });
            Ok((i, simulate_acquisition(testset.slice(i), accel, rng)?))
        })
        .collect()
}

pub fn evaluate_samples<Rc: Reconstructor + ?Sized>(
    rec: &Rc,
    samples: &[(usize, Sample)],
) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(samples.len());
    for (id, sample) in samples {
        let x = rec.reconstruct(sample)?;
        let peak = sample.target.max_magnitude();
        let m = mse(&x, &sample.target)?;
        rows.push(SliceMetrics {
            slice_id: *id,
            accel: sample.accel(),
            mse: m,
            nmse: nmse(&x, &sample.target)?,
            psnr: psnr_from_mse(peak, m),
            ssim: ssim(&x, &sample.target)?,
        });
    }
    let complexity = match samples.first() {
        Some((_, s)) => rec.complexity(s.target.height(), s.target.width())?,
        None => None,
    };
    Ok(MetricsReport {
        model: rec.name(),
        rows,
        params: complexity.map(|c| c.0),
        flops: complexity.map(|c| c.1),
    })
}

pub fn evaluate<Rc: Reconstructor + ?Sized, R: Rng + ?Sized>(
    rec: &Rc,
    testset: &Dataset,
    rng: &mut R,
) -> Result<MetricsReport> {
    evaluate_samples(rec, &test_samples(testset, rng)?)
}
