use crate::error::{Error, Result};
use crate::gradcore::{AffineMap, Real, Tensor};

use super::{
    data_consistency, fft2c, from_channels_item, ifft2c, to_channels, CartesianMask, KSpaceGrid,
};

/// Data consistency over a batch of 2-channel images, usable as a graph node.
///
/// The map is affine in the network estimate; its linear part is
/// `F^H D F` with `D` diagonal and real, which is self-adjoint.
#[derive(Clone, Debug)]
pub struct DataConsistencyLayer {
    items: Vec<(KSpaceGrid, CartesianMask)>,
    lambda: f64,
}

impl DataConsistencyLayer {
    pub fn new(items: Vec<(KSpaceGrid, CartesianMask)>, lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::invalid(format!(
                "data-consistency weight must be non-negative, got {lambda}"
            )));
        }
        Ok(DataConsistencyLayer { items, lambda })
    }

    fn check<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = x.shape();
        if n != self.items.len() || c != 2 {
            return Err(Error::invalid(format!(
                "data consistency expects [{}, 2, h, w], got {:?}",
                self.items.len(),
                x.shape()
            )));
        }
        if let Some((s, _)) = self.items.iter().find(|(s, _)| s.dims() != (h, w)) {
            return Err(Error::invalid(format!(
                "k-space {:?} does not match image {h}x{w}",
                s.dims()
            )));
        }
        Ok(())
    }

    fn map_items<T: Real>(
        &self,
        x: &Tensor<T>,
        mut f: impl FnMut(usize, super::ComplexImage) -> Result<super::ComplexImage>,
    ) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut outs = Vec::with_capacity(self.items.len());
        for n in 0..self.items.len() {
            let img = from_channels_item(x, n)?;
            outs.push(to_channels::<T>(&f(n, img)?));
        }
        Tensor::stack(&outs)
    }
}

impl<T: Real> AffineMap<T> for DataConsistencyLayer {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.map_items(x, |n, img| {
            let (s, m) = &self.items[n];
            data_consistency(&img, s, m, self.lambda)
        })
    }

    fn transpose_linear(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        if self.lambda == 0.0 {
            return Ok(g.clone());
        }
        let keep = if self.lambda.is_infinite() {
            0.0
        } else {
            1.0 / (1.0 + self.lambda)
        };
        self.map_items(g, |n, img| {
            let (_, m) = &self.items[n];
            let mut k = fft2c(&img);
            let w = k.width();
            for (i, v) in k.data_mut().iter_mut().enumerate() {
                if m.is_sampled(i % w) {
                    *v *= keep;
                }
            }
            Ok(ifft2c(&k))
        })
    }
}

