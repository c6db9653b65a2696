//! Fidelity metrics on magnitude images; `b` is always the reference.

use crate::error::{Error, Result};
use crate::kspace::ComplexImage;

const WIN: usize = 7;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn magnitudes(a: &ComplexImage, b: &ComplexImage) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "metric shapes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a.magnitude(), b.magnitude()))
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn mse(a: &ComplexImage, b: &ComplexImage) -> Result<f64> {
    let (a, b) = magnitudes(a, b)?;
    Ok(sq_diff(&a, &b) / a.len() as f64)
}

pub fn nmse(a: &ComplexImage, b: &ComplexImage) -> Result<f64> {
    let (a, b) = magnitudes(a, b)?;
    let norm: f64 = b.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return Err(Error::DegenerateInput("nmse against an all-zero reference".into()));
    }
    Ok(sq_diff(&a, &b) / norm)
}

/// `10 log10(peak^2 / mse)`; `+inf` when `mse` is zero.
pub fn psnr_from_mse(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(a: &ComplexImage, b: &ComplexImage) -> Result<f64> {
    Ok(psnr_from_mse(b.max_magnitude(), mse(a, b)?))
}

/// Mean SSIM over all fully contained 7x7 windows, with sample
/// (co)variances and data range `max |b|`.
pub fn ssim(a: &ComplexImage, b: &ComplexImage) -> Result<f64> {
    let (x, y) = magnitudes(a, b)?;
    let (h, w) = b.dims();
    if h < WIN || w < WIN {
        return Err(Error::invalid(format!(
            "ssim needs at least {WIN}x{WIN} pixels, got {h}x{w}"
        )));
    }
    let range = y.iter().copied().fold(0.0, f64::max);
    if range == 0.0 {
        return Err(Error::DegenerateInput("ssim against an all-zero reference".into()));
    }
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let n = (WIN * WIN) as f64;
    let cov_norm = n / (n - 1.0);

    let stats = |u: &[f64], v: &[f64], r0: usize, c0: usize| -> (f64, f64, f64) {
        let (mut su, mut sv, mut suv) = (0.0, 0.0, 0.0);
        for r in r0..r0 + WIN {
            for c in c0..c0 + WIN {
                let (p, q) = (u[r * w + c], v[r * w + c]);
                su += p;
                sv += q;
                suv += p * q;
            }
        }
        let (mu, mv) = (su / n, sv / n);
        (mu, mv, cov_norm * (suv / n - mu * mv))
    };

    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=h - WIN {
        for c0 in 0..=w - WIN {
            let (mx, _, vx) = stats(&x, &x, r0, c0);
            let (my, _, vy) = stats(&y, &y, r0, c0);
            let (_, _, cxy) = stats(&x, &y, r0, c0);
            let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
