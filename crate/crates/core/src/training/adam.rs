use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, in canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update in place. `grads[i]` of `None` is an error
/// naming parameter `i`.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<(), usize> {
    if let Some(i) = grads.iter().position(Option::is_none) {
        return Err(i);
    }
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "state matches parameters");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].as_ref().expect("checked above");
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let gi = g.data()[i].as_f64();
            let mi = hyper.beta1 * m[i].as_f64() + (1.0 - hyper.beta1) * gi;
            let vi = hyper.beta2 * v[i].as_f64() + (1.0 - hyper.beta2) * gi * gi;
            m[i] = T::from_f64_lossy(mi);
            v[i] = T::from_f64_lossy(vi);
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + hyper.eps);
            *w = T::from_f64_lossy(w.as_f64() - update);
        }
    }
    Ok(())
}
