use crate::error::AutogradError;
use crate::params::{ParamGrads, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let first: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            step: 0,
            second: first.clone(),
            first,
        }
    }

    /// First and second moments, aligned with the parameter set.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// Rebuilds a saved state; moment shapes must mirror `params`.
    pub fn from_parts(params: &ParamSet, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<Self, AutogradError> {
        let fits = |m: &[Tensor]| {
            m.len() == params.len() && m.iter().zip(params.iter()).all(|(a, (_, _, p))| a.shape() == p.shape())
        };
        if !fits(&first) || !fits(&second) {
            return Err(AutogradError::Layout("optimizer moments do not mirror the parameters".into()));
        }
        Ok(Self { step, first, second })
    }
}

/// One bias-corrected Adam step. Parameters without a gradient are treated as
/// having a zero gradient. A non-finite gradient aborts the step before any
/// parameter is touched.
pub fn adam_update(
    params: &mut ParamSet,
    grads: &ParamGrads,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<(), AutogradError> {
    assert_eq!(grads.len(), params.len(), "gradient set does not match parameters");
    assert_eq!(state.first.len(), params.len(), "optimizer state does not match parameters");
    for (id, g) in grads.iter() {
        if let Some(g) = g {
            if !g.is_finite() {
                return Err(AutogradError::NonFiniteGradient(params.name(id).to_string()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let ids: Vec<_> = grads.iter().map(|(id, _)| id).collect();
    for id in ids {
        let m = &mut state.first[id.0];
        let v = &mut state.second[id.0];
        let g = grads.get(id);
        let p = params.get_mut(id);
        for k in 0..p.len() {
            let gk = g.map_or(0.0, |g| g.as_slice()[k]);
            let mk = &mut m.as_mut_slice()[k];
            let vk = &mut v.as_mut_slice()[k];
            *mk = config.beta1 * *mk + (1.0 - config.beta1) * gk;
            *vk = config.beta2 * *vk + (1.0 - config.beta2) * gk * gk;
            let m_hat = *mk / bc1;
            let v_hat = *vk / bc2;
            p.as_mut_slice()[k] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
