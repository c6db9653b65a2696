//! Total-variation regularized reconstruction by proximal gradient.
//!
//! Minimizes `0.5 * ||M F x - s||^2 + weight * TV(x)` with isotropic TV
//! over complex pixels. Each outer iteration takes a unit gradient step on
//! the data term and then approximates the TV prox with a few projected
//! gradient iterations on its dual, warm-started from the previous outer
//! iteration.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kspace::{apply_mask, fft2c, ifft2c, CartesianMask, ComplexImage, KSpaceGrid};

const INNER_ITERS: usize = 10;
const DUAL_STEP: f64 = 1.0 / 8.0;

/// Forward differences with a zero last row/column.
fn gradient(x: &[Complex64], h: usize, w: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut gy = vec![Complex64::new(0.0, 0.0); h * w];
    let mut gx = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if r + 1 < h {
                gy[i] = x[i + w] - x[i];
            }
            if c + 1 < w {
                gx[i] = x[i + 1] - x[i];
            }
        }
    }
    (gy, gx)
}

/// Negative adjoint of [`gradient`].
fn divergence(py: &[Complex64], px: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut d = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut v = Complex64::new(0.0, 0.0);
            if r + 1 < h {
                v += py[i];
            }
            if r > 0 {
                v -= py[i - w];
            }
            if c + 1 < w {
                v += px[i];
            }
            if c > 0 {
                v -= px[i - 1];
            }
            d[i] = v;
        }
    }
    d
}

/// Isotropic TV: sum over pixels of `sqrt(|dy|^2 + |dx|^2)`.
pub fn total_variation(x: &ComplexImage) -> f64 {
    let (h, w) = x.dims();
    let (gy, gx) = gradient(x.data(), h, w);
    gy.iter()
        .zip(&gx)
        .map(|(a, b)| (a.norm_sqr() + b.norm_sqr()).sqrt())
        .sum()
}

/// `s` is expected to be zero off the sampled columns.
pub fn tv_objective(
    x: &ComplexImage,
    s: &KSpaceGrid,
    mask: &CartesianMask,
    weight: f64,
) -> Result<f64> {
    let k = apply_mask(&fft2c(x), mask)?;
    let data: f64 = k
        .data()
        .iter()
        .zip(s.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(0.5 * data + weight * total_variation(x))
}

/// Approximate `argmin_x 0.5 ||x - z||^2 + weight * TV(x)`; `p` is the dual
/// variable, updated in place.
fn tv_prox(
    z: &[Complex64],
    weight: f64,
    h: usize,
    w: usize,
    p: &mut (Vec<Complex64>, Vec<Complex64>),
) -> Vec<Complex64> {
    let primal = |p: &(Vec<Complex64>, Vec<Complex64>)| -> Vec<Complex64> {
        let d = divergence(&p.0, &p.1, h, w);
        z.iter().zip(&d).map(|(zi, di)| zi + weight * di).collect()
    };
    for _ in 0..INNER_ITERS {
        let x = primal(p);
        let (gy, gx) = gradient(&x, h, w);
        let scale = DUAL_STEP / weight;
        for i in 0..h * w {
            let qy = p.0[i] + scale * gy[i];
            let qx = p.1[i] + scale * gx[i];
            let norm = (qy.norm_sqr() + qx.norm_sqr()).sqrt();
            let shrink = norm.max(1.0);
            p.0[i] = qy / shrink;
            p.1[i] = qx / shrink;
        }
    }
    primal(p)
}

/// Objective after each outer iteration, plus the initial value.
#[derive(Clone, Debug, PartialEq)]
pub struct TvTrace {
    pub objective: Vec<f64>,
    /// Iterations whose candidate raised the objective and was rejected.
    pub rejected: usize,
}

pub fn tv_reconstruct(
    s: &KSpaceGrid,
    mask: &CartesianMask,
    weight: f64,
    iters: usize,
) -> Result<ComplexImage> {
    tv_reconstruct_traced(s, mask, weight, iters).map(|(x, _)| x)
}

pub fn tv_reconstruct_traced(
    s: &KSpaceGrid,
    mask: &CartesianMask,
    weight: f64,
    iters: usize,
) -> Result<(ComplexImage, TvTrace)> {
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(Error::invalid(format!("TV weight must be positive, got {weight}")));
    }
    if iters == 0 {
        return Err(Error::invalid("TV needs at least one iteration"));
    }
    let s = &apply_mask(s, mask)?;
    let (h, w) = s.dims();
    let mut x = ifft2c(s);
    let mut obj = tv_objective(&x, s, mask, weight)?;
    let mut trace = TvTrace {
        objective: vec![obj],
        rejected: 0,
    };
    let zero = Complex64::new(0.0, 0.0);
    let mut dual = (vec![zero; h * w], vec![zero; h * w]);
    for _ in 0..iters {
        let mut residual = apply_mask(&fft2c(&x), mask)?;
        for (r, m) in residual.data_mut().iter_mut().zip(s.data()) {
            *r -= m;
        }
        let step = ifft2c(&apply_mask(&residual, mask)?);
        let z: Vec<Complex64> = x.data().iter().zip(step.data()).map(|(a, b)| a - b).collect();
        let candidate = ComplexImage::from_raw(h, w, tv_prox(&z, weight, h, w, &mut dual));
        let cand_obj = tv_objective(&candidate, s, mask, weight)?;
        // Inexact prox steps can overshoot; keep the previous iterate then.
        if cand_obj <= obj {
            x = candidate;
            obj = cand_obj;
        } else {
            trace.rejected += 1;
        }
        trace.objective.push(obj);
    }
    Ok((x, trace))
}
