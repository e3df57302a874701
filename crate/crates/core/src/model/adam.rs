//! Adam with bias-corrected moments.

use ndarray::Zip;

use super::params::ModelParams;
use crate::error::{QstError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        AdamState { m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// Applies update number `step_index` (1-based). Non-finite gradients are
/// rejected before anything is modified.
pub fn adam_step(
    config: &AdamConfig,
    state: &mut AdamState,
    params: &mut ModelParams,
    grads: &ModelParams,
    step_index: u64,
) -> Result<()> {
    if step_index == 0 {
        return Err(QstError::InvalidConfig("adam step index is 1-based".into()));
    }
    let grad_blocks = grads.named_blocks();
    if let Some((name, _)) = grad_blocks.iter().find(|(_, g)| g.iter().any(|x| !x.is_finite())) {
        return Err(QstError::NonFiniteGradient(name.clone()));
    }
    let AdamConfig { learning_rate, beta1, beta2, eps } = *config;
    let t = step_index as i32;
    let c1 = 1.0 / (1.0 - beta1.powi(t));
    let c2 = 1.0 / (1.0 - beta2.powi(t));
    for (((p, m), v), (_, g)) in params
        .blocks_mut()
        .into_iter()
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut())
        .zip(grad_blocks)
    {
        Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= learning_rate * (*m * c1) / ((*v * c2).sqrt() + eps);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{init_model, ModelConfig};

    fn params() -> ModelParams {
        init_model(&ModelConfig { n_qubits: 3, hidden_size: 4, n_layers: 1, seed: 1 }).unwrap()
    }

    fn filled(p: &ModelParams, f: impl Fn(usize) -> f64) -> ModelParams {
        let mut g = p.zeros_like();
        let mut k = 0;
        for block in g.blocks_mut() {
            block.iter_mut().for_each(|x| {
                *x = f(k);
                k += 1;
            });
        }
        g
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        let mut p = params();
        let before = p.clone();
        let g = filled(&p, |k| if k % 2 == 0 { 0.7 } else { -2.5 });
        let mut state = AdamState::new(&p);
        adam_step(&AdamConfig::default(), &mut state, &mut p, &g, 1).unwrap();
        for (((_, a), (_, b)), (_, gb)) in p.named_blocks().iter().zip(before.named_blocks()).zip(g.named_blocks()) {
            for ((x, y), gv) in a.iter().zip(b.iter()).zip(gb.iter()) {
                assert!(((x - y) + 1e-3 * gv.signum()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params();
        let before = p.clone();
        let g = p.zeros_like();
        let mut state = AdamState::new(&p);
        for t in 1..=3 {
            adam_step(&AdamConfig::default(), &mut state, &mut p, &g, t).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = params();
        let mut g = p.zeros_like();
        g.backward.layers[0].u_r[[1, 2]] = f64::NAN;
        let before = p.clone();
        let err = adam_step(&AdamConfig::default(), &mut AdamState::new(&p), &mut p, &g, 1).unwrap_err();
        assert!(matches!(err, QstError::NonFiniteGradient(ref n) if n == "bwd.layer0.u_r"));
        assert_eq!(p, before);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut p = params();
            let mut state = AdamState::new(&p);
            for t in 1..=5 {
                let g = filled(&p, |k| ((k as f64) * 0.37 + t as f64).sin());
                adam_step(&AdamConfig::default(), &mut state, &mut p, &g, t).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
