//! Dense 2-D cross-correlation with "same" zero padding, dilation and groups.
//!
//! Grouped convolutions go through im2col + GEMM; depthwise convolutions
//! (one input and one output channel per group) use shifted-row loops.

use crate::error::{Error, Result};

use super::{Real, Tensor};

/// Validated shape information for one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(
        x_shape: [usize; 4],
        k_shape: [usize; 4],
        bias_len: Option<usize>,
        dilation: usize,
        groups: usize,
    ) -> Result<Self> {
        let [batch, ci, h, w] = x_shape;
        let [co, cig, kh, kw] = k_shape;
        if dilation == 0 {
            return Err(Error::invalid("dilation must be positive"));
        }
        if groups == 0 {
            return Err(Error::invalid("groups must be positive"));
        }
        if ci % groups != 0 {
            return Err(Error::invalid(format!(
                "input channels {ci} not divisible by groups {groups}"
            )));
        }
        if co % groups != 0 {
            return Err(Error::invalid(format!(
                "output channels {co} not divisible by groups {groups}"
            )));
        }
        if cig != ci / groups {
            return Err(Error::invalid(format!(
                "kernel input-channel dimension is {cig}, expected {}",
                ci / groups
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel height/width must be odd for same padding, got {kh}x{kw}"
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::invalid("spatial dimensions must be positive"));
        }
        if (kh - 1) * dilation + 1 > 2 * h - 1 {
            return Err(Error::invalid(format!(
                "effective kernel height {} exceeds 2*height-1 = {}",
                (kh - 1) * dilation + 1,
                2 * h - 1
            )));
        }
        if (kw - 1) * dilation + 1 > 2 * w - 1 {
            return Err(Error::invalid(format!(
                "effective kernel width {} exceeds 2*width-1 = {}",
                (kw - 1) * dilation + 1,
                2 * w - 1
            )));
        }
        if let Some(b) = bias_len {
            if b != co {
                return Err(Error::invalid(format!(
                    "bias length {b} does not match output channels {co}"
                )));
            }
        }
        Ok(ConvGeometry {
            batch,
            in_channels: ci,
            out_channels: co,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            dilation,
            groups,
        })
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// im2col rows per group.
    fn patch_len(&self) -> usize {
        self.in_per_group() * self.kernel_h * self.kernel_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1
    }

    fn is_depthwise(&self) -> bool {
        self.in_per_group() == 1 && self.out_per_group() == 1
    }

    /// Spatial offset of tap `(ky, kx)` relative to the output position.
    fn tap_offset(&self, ky: usize, kx: usize) -> (isize, isize) {
        let d = self.dilation as isize;
        let ph = (self.kernel_h as isize - 1) / 2 * d;
        let pw = (self.kernel_w as isize - 1) / 2 * d;
        (ky as isize * d - ph, kx as isize * d - pw)
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.height, self.width]
    }

    /// Multiply-adds plus bias adds for one forward pass.
    pub fn flops(&self) -> u64 {
        let per_output = (self.kernel_h * self.kernel_w * self.in_per_group()) as u64 + 1;
        per_output * (self.batch * self.out_channels * self.plane()) as u64
    }
}

/// Output index range `[lo, hi)` for which `o + off` stays in `[0, len)`.
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Calls `f(out_range_start, in_range_start, run_len)` for every output row
/// segment whose shifted input segment is in bounds.
#[inline]
fn for_each_shifted_row(
    h: usize,
    w: usize,
    off: (isize, isize),
    mut f: impl FnMut(usize, usize, usize),
) {
    let (y0, y1) = valid_range(h, off.0);
    let (x0, x1) = valid_range(w, off.1);
    if x1 <= x0 {
        return;
    }
    for y in y0..y1 {
        let out = y * w + x0;
        let inp = ((y as isize + off.0) as usize) * w + (x0 as isize + off.1) as usize;
        f(out, inp, x1 - x0);
    }
}

fn im2col<T: Real>(geo: &ConvGeometry, planes: &[T], cols: &mut [T]) {
    let p = geo.plane();
    cols.fill(T::zero());
    let mut row = 0;
    for c in 0..geo.in_per_group() {
        let src = &planes[c * p..(c + 1) * p];
        for ky in 0..geo.kernel_h {
            for kx in 0..geo.kernel_w {
                let dst = &mut cols[row * p..(row + 1) * p];
                for_each_shifted_row(geo.height, geo.width, geo.tap_offset(ky, kx), |o, i, n| {
                    dst[o..o + n].copy_from_slice(&src[i..i + n]);
                });
                row += 1;
            }
        }
    }
}

fn col2im_add<T: Real>(geo: &ConvGeometry, cols: &[T], planes: &mut [T]) {
    let p = geo.plane();
    let mut row = 0;
    for c in 0..geo.in_per_group() {
        let dst = &mut planes[c * p..(c + 1) * p];
        for ky in 0..geo.kernel_h {
            for kx in 0..geo.kernel_w {
                let src = &cols[row * p..(row + 1) * p];
                for_each_shifted_row(geo.height, geo.width, geo.tap_offset(ky, kx), |o, i, n| {
                    for (d, &s) in dst[i..i + n].iter_mut().zip(&src[o..o + n]) {
                        *d += s;
                    }
                });
                row += 1;
            }
        }
    }
}

/// Forward convolution. `bias` may be `None`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    dilation: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let geo = ConvGeometry::new(
        x.shape(),
        kernel.shape(),
        bias.map(|b| b.len()),
        dilation,
        groups,
    )?;
    Ok(forward_with(&geo, x, kernel, bias))
}

pub(crate) fn forward_with<T: Real>(
    geo: &ConvGeometry,
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Tensor<T> {
    let p = geo.plane();
    let mut out = Tensor::zeros(geo.output_shape());
    let kdata = kernel.data();
    let cig = geo.in_per_group();
    let cog = geo.out_per_group();
    let klen = geo.patch_len();

    let mut cols = if geo.is_pointwise() || geo.is_depthwise() {
        Vec::new()
    } else {
        vec![T::zero(); klen * p]
    };

    for n in 0..geo.batch {
        let xin = x.item(n);
        let yout = out.item_mut(n);
        if geo.is_depthwise() {
            let taps = geo.kernel_h * geo.kernel_w;
            for c in 0..geo.out_channels {
                let src = &xin[c * p..(c + 1) * p];
                let dst = &mut yout[c * p..(c + 1) * p];
                for ky in 0..geo.kernel_h {
                    for kx in 0..geo.kernel_w {
                        let wt = kdata[c * taps + ky * geo.kernel_w + kx];
                        for_each_shifted_row(geo.height, geo.width, geo.tap_offset(ky, kx), |o, i, len| {
                            for (d, &s) in dst[o..o + len].iter_mut().zip(&src[i..i + len]) {
                                *d += wt * s;
                            }
                        });
                    }
                }
            }
        } else {
            for g in 0..geo.groups {
                let planes = &xin[g * cig * p..(g + 1) * cig * p];
                let rhs: &[T] = if geo.is_pointwise() {
                    planes
                } else {
                    im2col(geo, planes, &mut cols);
                    &cols
                };
                let wg = &kdata[g * cog * klen..(g + 1) * cog * klen];
                let dst = &mut yout[g * cog * p..(g + 1) * cog * p];
                T::gemm(
                    cog,
                    klen,
                    p,
                    T::one(),
                    wg,
                    klen as isize,
                    1,
                    rhs,
                    p as isize,
                    1,
                    T::zero(),
                    dst,
                    p as isize,
                    1,
                );
            }
        }
        if let Some(b) = bias {
            for (c, &bv) in b.data().iter().enumerate() {
                for v in &mut yout[c * p..(c + 1) * p] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradients produced by [`conv2d_backward`]; entries are `None` when not
/// requested.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Vector-Jacobian product of the convolution.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
    dilation: usize,
    groups: usize,
    need_input: bool,
    need_params: bool,
) -> Result<ConvGrads<T>> {
    let geo = ConvGeometry::new(
        x.shape(),
        kernel.shape(),
        has_bias.then_some(kernel.shape()[0]),
        dilation,
        groups,
    )?;
    if grad_out.shape() != geo.output_shape() {
        return Err(Error::invalid(format!(
            "gradient shape {:?} does not match conv output {:?}",
            grad_out.shape(),
            geo.output_shape()
        )));
    }
    Ok(backward_with(&geo, x, kernel, has_bias, grad_out, need_input, need_params))
}

pub(crate) fn backward_with<T: Real>(
    geo: &ConvGeometry,
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_params: bool,
) -> ConvGrads<T> {
    let p = geo.plane();
    let cig = geo.in_per_group();
    let cog = geo.out_per_group();
    let klen = geo.patch_len();
    let kdata = kernel.data();

    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut dk = need_params.then(|| Tensor::zeros(kernel.shape()));
    let mut db = (need_params && has_bias).then(|| Tensor::zeros([1, 1, 1, geo.out_channels]));

    if let Some(db) = db.as_mut() {
        let dbd = db.data_mut();
        for n in 0..geo.batch {
            let g = grad_out.item(n);
            for (c, acc) in dbd.iter_mut().enumerate() {
                *acc += g[c * p..(c + 1) * p].iter().copied().sum::<T>();
            }
        }
    }

    if geo.is_depthwise() {
        let taps = geo.kernel_h * geo.kernel_w;
        for n in 0..geo.batch {
            let xin = x.item(n);
            let gout = grad_out.item(n);
            for c in 0..geo.out_channels {
                let src = &xin[c * p..(c + 1) * p];
                let g = &gout[c * p..(c + 1) * p];
                for ky in 0..geo.kernel_h {
                    for kx in 0..geo.kernel_w {
                        let tap = c * taps + ky * geo.kernel_w + kx;
                        let off = geo.tap_offset(ky, kx);
                        if let Some(dk) = dk.as_mut() {
                            let mut acc = T::zero();
                            for_each_shifted_row(geo.height, geo.width, off, |o, i, len| {
                                for (&gv, &sv) in g[o..o + len].iter().zip(&src[i..i + len]) {
                                    acc += gv * sv;
                                }
                            });
                            dk.data_mut()[tap] += acc;
                        }
                        if let Some(dx) = dx.as_mut() {
                            let wt = kdata[tap];
                            let dst = &mut dx.item_mut(n)[c * p..(c + 1) * p];
                            for_each_shifted_row(geo.height, geo.width, off, |o, i, len| {
                                for (d, &gv) in dst[i..i + len].iter_mut().zip(&g[o..o + len]) {
                                    *d += wt * gv;
                                }
                            });
                        }
                    }
                }
            }
        }
        return ConvGrads { input: dx, kernel: dk, bias: db };
    }

    let mut cols = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); klen * p]
    };
    for n in 0..geo.batch {
        let xin = x.item(n);
        let gout = grad_out.item(n);
        for g in 0..geo.groups {
            let planes = &xin[g * cig * p..(g + 1) * cig * p];
            let gy = &gout[g * cog * p..(g + 1) * cog * p];
            if let Some(dk) = dk.as_mut() {
                let rhs: &[T] = if geo.is_pointwise() {
                    planes
                } else {
                    im2col(geo, planes, &mut cols);
                    &cols
                };
                let dst = &mut dk.data_mut()[g * cog * klen..(g + 1) * cog * klen];
                // dW[co, r] += sum_p gy[co, p] * cols[r, p]
                T::gemm(
                    cog,
                    p,
                    klen,
                    T::one(),
                    gy,
                    p as isize,
                    1,
                    rhs,
                    1,
                    p as isize,
                    T::one(),
                    dst,
                    klen as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                let wg = &kdata[g * cog * klen..(g + 1) * cog * klen];
                let dst = &mut dx.item_mut(n)[g * cig * p..(g + 1) * cig * p];
                if geo.is_pointwise() {
                    T::gemm(
                        klen,
                        cog,
                        p,
                        T::one(),
                        wg,
                        1,
                        klen as isize,
                        gy,
                        p as isize,
                        1,
                        T::zero(),
                        dst,
                        p as isize,
                        1,
                    );
                } else {
                    T::gemm(
                        klen,
                        cog,
                        p,
                        T::one(),
                        wg,
                        1,
                        klen as isize,
                        gy,
                        p as isize,
                        1,
                        T::zero(),
                        &mut cols,
                        p as isize,
                        1,
                    );
                    col2im_add(geo, &cols, dst);
                }
            }
        }
    }
    ConvGrads { input: dx, kernel: dk, bias: db }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct summation over every tap; independent of im2col/GEMM.
    fn naive_conv(
        x: &Tensor<f64>,
        k: &Tensor<f64>,
        b: Option<&Tensor<f64>>,
        d: usize,
        g: usize,
    ) -> Tensor<f64> {
        let [n, ci, h, w] = x.shape();
        let [co, cig, kh, kw] = k.shape();
        let cog = co / g;
        let mut out = Tensor::zeros([n, co, h, w]);
        let (ph, pw) = (((kh - 1) / 2 * d) as isize, ((kw - 1) / 2 * d) as isize);
        assert_eq!(cig * g, ci);
        for b_ in 0..n {
            for o in 0..co {
                let grp = o / cog;
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = b.map(|b| b.data()[o]).unwrap_or(0.0);
                        for c in 0..cig {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = y as isize + (ky * d) as isize - ph;
                                    let ix = xx as isize + (kx * d) as isize - pw;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += k.get(o, c, ky, kx)
                                        * x.get(b_, grp * cig + c, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set(b_, o, y, xx, acc);
                    }
                }
            }
        }
        out
    }

    fn pseudo_random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..shape.iter().product::<usize>())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn ones_kernel_on_ones_image() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
        let k = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
        let b = Tensor::<f64>::zeros([1, 1, 1, 1]);
        let y = conv2d_forward(&x, &k, Some(&b), 1, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn centered_delta_kernel_is_identity() {
        let x = pseudo_random([2, 1, 5, 6], 3);
        let mut k = Tensor::<f64>::zeros([1, 1, 3, 3]);
        k.set(0, 0, 1, 1, 1.0);
        let y = conv2d_forward(&x, &k, None, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dilated_delta_response() {
        let mut x = Tensor::<f64>::zeros([1, 1, 5, 5]);
        x.set(0, 0, 2, 2, 1.0);
        let k = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &k, None, 2, 1).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let expected = if r % 2 == 0 && c % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(y.get(0, 0, r, c), expected, "({r},{c})");
            }
        }
    }

    #[test]
    fn matches_direct_summation() {
        let cases = [
            // (n, ci, co, h, w, kh, kw, dil, groups)
            (2, 3, 4, 6, 5, 3, 3, 1, 1),
            (1, 4, 4, 7, 7, 3, 3, 2, 4),
            (1, 4, 4, 9, 8, 3, 3, 3, 4),
            (2, 6, 4, 5, 5, 1, 1, 1, 2),
            (1, 2, 2, 10, 10, 9, 1, 1, 2),
            (1, 2, 2, 10, 10, 1, 9, 1, 2),
            (1, 4, 6, 6, 6, 3, 3, 1, 2),
        ];
        for (i, &(n, ci, co, h, w, kh, kw, d, g)) in cases.iter().enumerate() {
            let x = pseudo_random([n, ci, h, w], i as u64);
            let k = pseudo_random([co, ci / g, kh, kw], 100 + i as u64);
            let b = pseudo_random([1, 1, 1, co], 200 + i as u64);
            let fast = conv2d_forward(&x, &k, Some(&b), d, g).unwrap();
            let slow = naive_conv(&x, &k, Some(&b), d, g);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "case {i}");
        }
    }

    #[test]
    fn shape_errors_name_the_dimension() {
        let x = Tensor::<f64>::zeros([1, 3, 4, 4]);
        let k = Tensor::<f64>::zeros([2, 2, 3, 3]);
        let err = conv2d_forward(&x, &k, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("input-channel"), "{err}");
        let err = conv2d_forward(&x, &k, None, 1, 2).unwrap_err().to_string();
        assert!(err.contains("not divisible"), "{err}");
        let k = Tensor::<f64>::zeros([2, 3, 3, 3]);
        let b = Tensor::<f64>::zeros([1, 1, 1, 5]);
        let err = conv2d_forward(&x, &k, Some(&b), 1, 1).unwrap_err().to_string();
        assert!(err.contains("bias"), "{err}");
        let err = conv2d_forward(&x, &k, None, 4, 1).unwrap_err().to_string();
        assert!(err.contains("effective kernel"), "{err}");
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), gy> == <x, dX(gy)> and == <k, dK(gy)> for a linear map.
        let cases = [(2, 4, 4, 3, 3, 2, 4), (1, 3, 5, 3, 3, 1, 1), (2, 4, 6, 1, 1, 1, 2)];
        for (i, &(n, ci, co, kh, kw, d, g)) in cases.iter().enumerate() {
            let x = pseudo_random([n, ci, 6, 7], 10 + i as u64);
            let k = pseudo_random([co, ci / g, kh, kw], 20 + i as u64);
            let gy = pseudo_random([n, co, 6, 7], 30 + i as u64);
            let y = conv2d_forward(&x, &k, None, d, g).unwrap();
            let grads = conv2d_backward(&x, &k, false, &gy, d, g, true, true).unwrap();
            let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
            let dx = grads.input.unwrap();
            let dk = grads.kernel.unwrap();
            let via_x: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            let via_k: f64 = k.data().iter().zip(dk.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-10, "case {i}: {lhs} vs {via_x}");
            assert!((lhs - via_k).abs() < 1e-10, "case {i}: {lhs} vs {via_k}");
        }
    }

    #[test]
    fn flop_count_for_dense_3x3() {
        let geo = ConvGeometry::new([1, 32, 320, 320], [32, 32, 3, 3], Some(32), 1, 1).unwrap();
        assert_eq!(geo.flops(), 946_995_200);
    }
}
