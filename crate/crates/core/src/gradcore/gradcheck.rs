//! Central finite-difference verification of graph gradients.

use crate::error::Result;

use super::{Graph, NodeId, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` per checked
    /// parameter, in the order given.
    pub relative_errors: Vec<f64>,
    /// The same ratio over all checked parameters taken as one vector.
    pub global_relative_error: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences with the given step, for each parameter in `params`.
pub fn check_gradients<F>(
    store: &ParamStore<f64>,
    params: &[ParamId],
    step: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = build(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let mut relative_errors = Vec::with_capacity(params.len());
    let mut work = store.clone();
    let (mut num_all, mut ana_all, mut diff_all) = (0.0, 0.0, 0.0);
    for &pid in params {
        let len = store.get(pid).len();
        let mut num = 0.0;
        let mut ana = 0.0;
        let mut diff = 0.0;
        for i in 0..len {
            let orig = store.get(pid).data()[i];
            work.get_mut(pid).data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(pid).data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(pid).data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let an = analytic.get(pid).data()[i];
            num += fd * fd;
            ana += an * an;
            diff += (fd - an) * (fd - an);
        }
        relative_errors.push(ratio(diff, num, ana));
        num_all += num;
        ana_all += ana;
        diff_all += diff;
    }
    Ok(GradCheckReport {
        relative_errors,
        global_relative_error: ratio(diff_all, num_all, ana_all),
    })
}

fn ratio(diff: f64, num: f64, ana: f64) -> f64 {
    let scale = num.sqrt().max(ana.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}
