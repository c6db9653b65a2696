use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::{ComplexImage, KSpaceGrid};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// `out[(i + n/2) % n] = in[i]` along both axes.
fn fftshift(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for y in 0..h {
        let ty = (y + h / 2) % h;
        for x in 0..w {
            out[ty * w + (x + w / 2) % w] = data[y * w + x];
        }
    }
    out
}

/// Inverse of [`fftshift`]: `out[i] = in[(i + n/2) % n]`.
fn ifftshift(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for y in 0..h {
        let sy = (y + h / 2) % h;
        for x in 0..w {
            out[y * w + x] = data[sy * w + (x + w / 2) % w];
        }
    }
    out
}

fn transpose(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = data[y * w + x];
        }
    }
    out
}

/// Unnormalized 2-D DFT in place over a row-major `h x w` buffer.
fn fft2_in_place(data: &mut Vec<Complex64>, h: usize, w: usize, direction: FftDirection) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let rows = planner.plan_fft(w, direction);
        rows.process(data);
        let mut t = transpose(data, h, w);
        let cols = planner.plan_fft(h, direction);
        cols.process(&mut t);
        *data = transpose(&t, w, h);
    });
}

fn centered(data: &[Complex64], h: usize, w: usize, direction: FftDirection) -> Vec<Complex64> {
    let mut buf = ifftshift(data, h, w);
    fft2_in_place(&mut buf, h, w, direction);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in &mut buf {
        *v *= scale;
    }
    fftshift(&buf, h, w)
}

/// Centered, orthonormal forward 2-D FFT. The DC term lands at `(h/2, w/2)`.
pub fn fft2c(img: &ComplexImage) -> KSpaceGrid {
    let (h, w) = img.dims();
    KSpaceGrid::from_raw(h, w, centered(img.data(), h, w, FftDirection::Forward))
}

/// Centered, orthonormal inverse 2-D FFT.
pub fn ifft2c(k: &KSpaceGrid) -> ComplexImage {
    let (h, w) = k.dims();
    ComplexImage::from_raw(h, w, centered(k.data(), h, w, FftDirection::Inverse))
}
