use serde::{Deserialize, Serialize};

use super::{Gradients, ParamId, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    params: Vec<ParamId>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>, params: Vec<ParamId>) -> Self {
        let m = params.iter().map(|&p| Tensor::zeros(store.get(p).shape())).collect();
        let v = params.iter().map(|&p| Tensor::zeros(store.get(p).shape())).collect();
        AdamState {
            config,
            step: 0,
            params,
            m,
            v,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn first_moment(&self, i: usize) -> &Tensor<T> {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor<T> {
        &self.v[i]
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One bias-corrected Adam update of every tracked parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let lr = T::from_f64_lossy(c.lr);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let eps = T::from_f64_lossy(c.eps);
        let wd = T::from_f64_lossy(c.weight_decay);
        let bc1 = T::from_f64_lossy(bc1);
        let bc2 = T::from_f64_lossy(bc2);

        for (i, &pid) in self.params.iter().enumerate() {
            let g = grads.get(pid);
            let param = store.get_mut(pid);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((p, &gv), mv), vv) in param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gv = gv + wd * *p;
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::Graph;

    fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(v));
        (s, id)
    }

    /// Gradients of `loss = slope * p`.
    fn linear_grads(store: &ParamStore<f64>, id: ParamId, slope: f64) -> Gradients<f64> {
        let mut g = Graph::new(store);
        let p = g.param(id);
        let y = g.scale(p, slope);
        let loss = g.sum(y);
        g.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, id) = scalar_store(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &store, vec![id]);
        for _ in 0..3 {
            let grads = linear_grads(&store, id, 0.0);
            adam.step(&mut store, &grads);
        }
        assert_eq!(store.get(id).data()[0], 0.7);
        assert_eq!(adam.step, 3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store, vec![id]);
        let grads = linear_grads(&store, id, 1.0);
        adam.step(&mut store, &grads);
        let delta = store.get(id).data()[0];
        assert!((delta + 0.001).abs() < 1e-6, "delta {delta}");
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn constant_gradient_steps_stay_near_lr() {
        // With constant g, mhat = g and vhat = g^2 exactly, so |step| =
        // lr * |g| / (|g| + eps).
        let (mut store, id) = scalar_store(0.0);
        let lr = 0.001;
        let mut adam = AdamState::new(AdamConfig::default(), &store, vec![id]);
        let mut prev = 0.0;
        for _ in 0..2 {
            let grads = linear_grads(&store, id, 0.5);
            adam.step(&mut store, &grads);
            let now = store.get(id).data()[0];
            let delta = (now - prev).abs();
            assert!((0.9 * lr..=lr).contains(&delta), "delta {delta}");
            prev = now;
        }
    }

    #[test]
    fn moments_match_parameter_shapes() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::zeros([2, 3, 3, 3]));
        let b = store.add("b", Tensor::zeros([1, 1, 1, 2]));
        let adam = AdamState::new(AdamConfig::default(), &store, vec![a, b]);
        assert_eq!(adam.first_moment(0).shape(), [2, 3, 3, 3]);
        assert_eq!(adam.second_moment(1).shape(), [1, 1, 1, 2]);
    }
}
