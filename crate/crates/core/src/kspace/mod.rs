//! Image- and Fourier-domain data, Cartesian line masks and the closed-form
//! data-consistency operator.

mod dc_layer;
mod fft;
mod mask;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Real, Tensor};

pub use dc_layer::DataConsistencyLayer;
pub use fft::{fft2c, ifft2c};
pub use mask::{make_mask, make_mask_with, CartesianMask, MaskPattern};

/// Target peak magnitude after [`normalize`].
pub const NORMALIZED_PEAK: f64 = 6.0;

macro_rules! complex_grid {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            h: usize,
            w: usize,
            data: Vec<Complex64>,
        }

        impl $name {
            pub fn zeros(h: usize, w: usize) -> Self {
                $name { h, w, data: vec![Complex64::default(); h * w] }
            }

            pub fn new(h: usize, w: usize, data: Vec<Complex64>) -> Result<Self> {
                if h == 0 || w == 0 {
                    return Err(Error::invalid(format!("grid dimensions must be positive, got {h}x{w}")));
                }
                if data.len() != h * w {
                    return Err(Error::invalid(format!(
                        "grid data length {} does not match {h}x{w}",
                        data.len()
                    )));
                }
                if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                    return Err(Error::invalid("grid entries must be finite"));
                }
                Ok($name { h, w, data })
            }

            pub(crate) fn from_raw(h: usize, w: usize, data: Vec<Complex64>) -> Self {
                debug_assert_eq!(data.len(), h * w);
                $name { h, w, data }
            }

            /// `(height, width)`
            pub fn dims(&self) -> (usize, usize) {
                (self.h, self.w)
            }

            pub fn height(&self) -> usize {
                self.h
            }

            pub fn width(&self) -> usize {
                self.w
            }

            pub fn data(&self) -> &[Complex64] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [Complex64] {
                &mut self.data
            }

            pub fn get(&self, y: usize, x: usize) -> Complex64 {
                self.data[y * self.w + x]
            }

            pub fn set(&mut self, y: usize, x: usize, v: Complex64) {
                self.data[y * self.w + x] = v;
            }

            pub fn scaled(&self, factor: f64) -> Self {
                $name {
                    h: self.h,
                    w: self.w,
                    data: self.data.iter().map(|v| v * factor).collect(),
                }
            }

            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                self.data
                    .iter()
                    .zip(&other.data)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max)
            }

            pub fn energy(&self) -> f64 {
                self.data.iter().map(|v| v.norm_sqr()).sum()
            }
        }
    };
}

complex_grid!(
    /// Complex image-domain slice, `h x w`, row-major.
    ComplexImage
);

complex_grid!(
    /// Complex k-space grid with DC at the center.
    KSpaceGrid
);

impl ComplexImage {
    pub fn from_real(h: usize, w: usize, values: &[f64]) -> Result<Self> {
        ComplexImage::new(h, w, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm()).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn check_width(k: &KSpaceGrid, m: &CartesianMask) -> Result<()> {
    if k.width() != m.width() {
        return Err(Error::invalid(format!(
            "mask width {} does not match k-space width {}",
            m.width(),
            k.width()
        )));
    }
    Ok(())
}

/// Keeps sampled columns and zeroes the rest.
pub fn apply_mask(k: &KSpaceGrid, m: &CartesianMask) -> Result<KSpaceGrid> {
    check_width(k, m)?;
    let mut out = k.clone();
    let w = k.width();
    for (i, v) in out.data.iter_mut().enumerate() {
        if !m.is_sampled(i % w) {
            *v = Complex64::default();
        }
    }
    Ok(out)
}

/// Inverse FFT of the masked k-space.
pub fn zero_filled(s: &KSpaceGrid, m: &CartesianMask) -> Result<ComplexImage> {
    Ok(ifft2c(&apply_mask(s, m)?))
}

/// Validated data-consistency weight; `f64::INFINITY` means hard replacement.
fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!(
            "data-consistency weight must be non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// Closed-form data consistency on the network estimate `x_cnn`.
///
/// With `k = fft2c(x_cnn)`, sampled columns become `(k + lambda * s) / (1 +
/// lambda)` (exactly `s` for infinite `lambda`) and unsampled columns keep
/// `k`.
pub fn data_consistency(
    x_cnn: &ComplexImage,
    s: &KSpaceGrid,
    m: &CartesianMask,
    lambda: f64,
) -> Result<ComplexImage> {
    check_lambda(lambda)?;
    if x_cnn.dims() != s.dims() {
        return Err(Error::invalid(format!(
            "image {:?} and k-space {:?} shapes differ",
            x_cnn.dims(),
            s.dims()
        )));
    }
    check_width(s, m)?;
    if lambda == 0.0 {
        return Ok(x_cnn.clone());
    }
    let mut k = fft2c(x_cnn);
    let w = k.width();
    for (i, (kv, &sv)) in k.data.iter_mut().zip(&s.data).enumerate() {
        if m.is_sampled(i % w) {
            *kv = if lambda.is_infinite() {
                sv
            } else {
                (*kv + sv * lambda) / (1.0 + lambda)
            };
        }
    }
    Ok(ifft2c(&k))
}

/// Scales the image so its peak magnitude is [`NORMALIZED_PEAK`]; returns
/// the scaled image and the factor applied.
pub fn normalize(img: &ComplexImage) -> Result<(ComplexImage, f64)> {
    let peak = img.max_magnitude();
    if peak == 0.0 {
        return Err(Error::DegenerateInput("cannot normalize an all-zero image".into()));
    }
    let scale = NORMALIZED_PEAK / peak;
    if scale == 1.0 {
        return Ok((img.clone(), 1.0));
    }
    Ok((img.scaled(scale), scale))
}

/// Packs real and imaginary parts as a `1 x 2 x h x w` tensor.
pub fn to_channels<T: Real>(img: &ComplexImage) -> Tensor<T> {
    let (h, w) = img.dims();
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend(img.data.iter().map(|v| T::from_f64_lossy(v.re)));
    data.extend(img.data.iter().map(|v| T::from_f64_lossy(v.im)));
    Tensor::from_vec([1, 2, h, w], data).expect("length matches")
}

/// Unpacks batch item `n` of a 2-channel tensor.
pub fn from_channels_item<T: Real>(t: &Tensor<T>, n: usize) -> Result<ComplexImage> {
    let [batch, c, h, w] = t.shape();
    if c != 2 {
        return Err(Error::invalid(format!("expected 2 channels, got {c}")));
    }
    if n >= batch {
        return Err(Error::invalid(format!("batch index {n} out of range for {batch}")));
    }
    let item = t.item(n);
    let p = h * w;
    let data = (0..p)
        .map(|i| {
            Complex64::new(
                item[i].to_f64().unwrap_or(f64::NAN),
                item[p + i].to_f64().unwrap_or(f64::NAN),
            )
        })
        .collect();
    Ok(ComplexImage::from_raw(h, w, data))
}

/// Inverse of [`to_channels`] for a single-item tensor.
pub fn from_channels<T: Real>(t: &Tensor<T>) -> Result<ComplexImage> {
    if t.shape()[0] != 1 {
        return Err(Error::invalid(format!(
            "expected a single batch item, got {}",
            t.shape()[0]
        )));
    }
    from_channels_item(t, 0)
}

/// Data-consistency weight as stored in configs: a finite value or `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LambdaRepr", into = "LambdaRepr")]
pub struct Lambda(f64);

impl Lambda {
    pub const HARD: Lambda = Lambda(f64::INFINITY);

    pub fn new(v: f64) -> Result<Self> {
        check_lambda(v)?;
        Ok(Lambda(v))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::HARD
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<LambdaRepr> for Lambda {
    type Error = String;

    fn try_from(r: LambdaRepr) -> std::result::Result<Self, String> {
        let v = match r {
            LambdaRepr::Number(v) => v,
            LambdaRepr::Text(s) if s == "inf" || s == "infinity" => f64::INFINITY,
            LambdaRepr::Text(s) => s.parse::<f64>().map_err(|e| format!("bad lambda {s:?}: {e}"))?,
        };
        Lambda::new(v).map_err(|e| e.to_string())
    }
}

impl From<Lambda> for LambdaRepr {
    fn from(l: Lambda) -> Self {
        if l.0.is_infinite() {
            LambdaRepr::Text("inf".into())
        } else {
            LambdaRepr::Number(l.0)
        }
    }
}
