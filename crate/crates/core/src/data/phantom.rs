use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::ComplexImage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Low-order polynomial phase field.
    #[default]
    Smooth,
    /// Purely real phantom.
    Zero,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (du, dv) = (u - self.cx, v - self.cy);
        let p = (du * self.cos + dv * self.sin) / self.a;
        let q = (-du * self.sin + dv * self.cos) / self.b;
        p * p + q * q <= 1.0
    }
}

/// Sum of 5..=12 random ellipses with a smooth random phase.
pub fn gen_phantom<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Result<ComplexImage> {
    gen_phantom_with(rng, h, w, PhaseMode::Smooth)
}

pub fn gen_phantom_with<R: Rng + ?Sized>(
    rng: &mut R,
    h: usize,
    w: usize,
    phase: PhaseMode,
) -> Result<ComplexImage> {
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!(
            "phantom needs at least 16x16 pixels, got {h}x{w}"
        )));
    }
    let count = rng.gen_range(5..=12);
    // Semi-axes of at least 0.1 (in [-1, 1] coordinates) always cover the
    // pixel nearest the center once h, w >= 16.
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| {
            let theta = rng.gen_range(0.0..PI);
            Ellipse {
                cx: rng.gen_range(-0.6..=0.6),
                cy: rng.gen_range(-0.6..=0.6),
                a: rng.gen_range(0.1..=0.5),
                b: rng.gen_range(0.1..=0.5),
                cos: theta.cos(),
                sin: theta.sin(),
                intensity: rng.gen_range(0.2..=1.0),
            }
        })
        .collect();
    let coeffs: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-PI / 2.0..=PI / 2.0));

    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        let v = (2 * y + 1) as f64 / h as f64 - 1.0;
        for x in 0..w {
            let u = (2 * x + 1) as f64 / w as f64 - 1.0;
            let mag: f64 = ellipses
                .iter()
                .filter(|e| e.contains(u, v))
                .map(|e| e.intensity)
                .sum();
            let value = match phase {
                PhaseMode::Zero => Complex64::new(mag, 0.0),
                PhaseMode::Smooth => {
                    let [c0, c1, c2, c3, c4, c5] = coeffs;
                    let phi = c0 + c1 * u + c2 * v + c3 * u * u + c4 * u * v + c5 * v * v;
                    Complex64::from_polar(mag, phi)
                }
            };
            data.push(value);
        }
    }
    ComplexImage::new(h, w, data)
}
