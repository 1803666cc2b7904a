//! AdamW with decoupled weight decay, cosine learning-rate annealing, global
//! gradient clipping, and an EMA shadow of the parameters.

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter first/second moment accumulators plus the shared schedule.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub weight_decay: f64,
    pub base_lr: f64,
    /// Total number of steps the cosine schedule anneals over.
    pub horizon: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, base_lr: f64, weight_decay: f64, horizon: u64) -> Self {
        let m = store.param_ids().map(|id| Tensor::zeros(store.get(id).shape().to_vec())).collect();
        let v = store.param_ids().map(|id| Tensor::zeros(store.get(id).shape().to_vec())).collect();
        OptimizerState { m, v, step: 0, weight_decay, base_lr, horizon }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Cosine-annealed learning rate for the *next* step: starts at
    /// `base_lr`, reaches 0 at `horizon`.
    pub fn lr_now(&self) -> f64 {
        cosine_lr(self.base_lr, self.step, self.horizon)
    }
}

/// lr(t) = base * 0.5 * (1 + cos(pi * t / horizon)), clamped past the horizon.
pub fn cosine_lr(base: f64, step: u64, horizon: u64) -> f64 {
    if horizon == 0 {
        return base;
    }
    let frac = (step as f64 / horizon as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Scales all gradients in place so the global Euclidean norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// One decoupled-weight-decay Adam step over every parameter.
///
/// `grads[i]` pairs with the i-th parameter of the store; callers clip the
/// global norm to 1.0 before entry. NaN gradients abort with the offending
/// parameter's name.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr_now: f64,
) -> Result<()> {
    let ids: Vec<ParamId> = store.param_ids().collect();
    if grads.len() != ids.len() {
        return Err(CoreError::usage(format!(
            "adamw_step: {} gradients for {} parameters",
            grads.len(),
            ids.len()
        )));
    }
    for (i, &id) in ids.iter().enumerate() {
        if grads[i].shape() != store.get(id).shape() {
            return Err(CoreError::usage(format!(
                "adamw_step: gradient shape {:?} != parameter {:?} for {}",
                grads[i].shape(),
                store.get(id).shape(),
                store.name(id)
            )));
        }
        if !grads[i].all_finite() {
            return Err(CoreError::numerics(format!(
                "non-finite gradient for parameter {}",
                store.name(id)
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for (i, &id) in ids.iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.get_mut(id).data_mut();
        let g = grads[i].data();
        for j in 0..p.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr_now * (m_hat / (v_hat.sqrt() + ADAM_EPS) + state.weight_decay * p[j]);
        }
    }
    Ok(())
}

/// AdamW step restricted to the parameters where `active(id)` holds; frozen
/// parameters keep their values and accumulators untouched.
pub fn adamw_step_filtered(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr_now: f64,
    active: impl Fn(ParamId) -> bool,
) -> Result<()> {
    let ids: Vec<ParamId> = store.param_ids().collect();
    if grads.len() != ids.len() {
        return Err(CoreError::usage(format!(
            "adamw_step_filtered: {} gradients for {} parameters",
            grads.len(),
            ids.len()
        )));
    }
    for (i, &id) in ids.iter().enumerate() {
        if active(id) && !grads[i].all_finite() {
            return Err(CoreError::numerics(format!(
                "non-finite gradient for parameter {}",
                store.name(id)
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for (i, &id) in ids.iter().enumerate() {
        if !active(id) {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.get_mut(id).data_mut();
        let g = grads[i].data();
        for j in 0..p.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr_now * (m_hat / (v_hat.sqrt() + ADAM_EPS) + state.weight_decay * p[j]);
        }
    }
    Ok(())
}

/// Exponential moving average of the parameters, used at inference for the
/// generative head.
#[derive(Debug, Clone)]
pub struct EmaState {
    shadow: Vec<Tensor>,
    pub decay: f64,
}

impl EmaState {
    /// Initializes the shadow to a copy of the current parameters.
    pub fn new(store: &ParamStore, decay: f64) -> Self {
        assert!(decay > 0.0 && decay < 1.0, "EMA decay must lie in (0,1)");
        EmaState { shadow: store.param_ids().map(|id| store.get(id).clone()).collect(), decay }
    }

    /// shadow <- decay * shadow + (1 - decay) * params
    pub fn update(&mut self, store: &ParamStore) -> Result<()> {
        for (sh, id) in self.shadow.iter_mut().zip(store.param_ids()) {
            let p = store.get(id);
            if sh.shape() != p.shape() {
                return Err(CoreError::usage(format!(
                    "ema_update: shadow shape {:?} != parameter {:?} ({})",
                    sh.shape(),
                    p.shape(),
                    store.name(id)
                )));
            }
            for (s, &pv) in sh.data_mut().iter_mut().zip(p.data()) {
                *s = self.decay * *s + (1.0 - self.decay) * pv;
            }
        }
        Ok(())
    }

    pub fn shadow(&self, idx: usize) -> &Tensor {
        &self.shadow[idx]
    }

    pub fn shadows(&self) -> &[Tensor] {
        &self.shadow
    }

    /// Copies the shadow values into the store (inference-time weights).
    pub fn apply_to(&self, store: &mut ParamStore) {
        for (sh, id) in self.shadow.iter().zip(store.param_ids().collect::<Vec<_>>()) {
            store.get_mut(id).data_mut().copy_from_slice(sh.data());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param_store(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("p", Tensor::from_vec(vec![value]));
        store
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // Bias-corrected moments give a unit-magnitude normalized step.
        let mut store = single_param_store(0.0);
        let mut state = OptimizerState::new(&store, 1e-3, 0.0, 100);
        let grads = vec![Tensor::from_vec(vec![1.0])];
        adamw_step(&mut store, &grads, &mut state, 1e-3).unwrap();
        let p = store.get(ParamId(0)).data()[0];
        assert!((p + 1e-3).abs() < 1e-9, "expected p near -1e-3, got {p}");
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut store = single_param_store(0.37);
        let mut state = OptimizerState::new(&store, 1e-3, 0.0, 100);
        for _ in 0..5 {
            let grads = vec![Tensor::from_vec(vec![0.0])];
            adamw_step(&mut store, &grads, &mut state, 1e-3).unwrap();
        }
        assert_eq!(store.get(ParamId(0)).data()[0], 0.37);
    }

    #[test]
    fn cosine_schedule_hits_zero_at_horizon() {
        assert!((cosine_lr(1e-3, 0, 200) - 1e-3).abs() < 1e-18);
        assert!(cosine_lr(1e-3, 200, 200).abs() < 1e-12);
        assert!(cosine_lr(1e-3, 100, 200) > 0.0);
    }

    #[test]
    fn nan_gradient_aborts_with_parameter_name() {
        let mut store = single_param_store(0.0);
        let mut state = OptimizerState::new(&store, 1e-3, 0.0, 10);
        let grads = vec![Tensor::from_vec(vec![f64::NAN])];
        let err = adamw_step(&mut store, &grads, &mut state, 1e-3).unwrap_err();
        assert!(err.to_string().contains('p'), "diagnostic should name the parameter: {err}");
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut grads = vec![Tensor::from_vec(vec![3.0, 4.0])];
        let pre = clip_global_norm(&mut grads, 1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        let post: f64 = grads[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((post - 1.0).abs() < 1e-12);
        // Below the threshold nothing changes.
        let mut small = vec![Tensor::from_vec(vec![0.3])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data()[0], 0.3);
    }

    #[test]
    fn ema_single_update_and_geometric_decay() {
        let store = single_param_store(1.0);
        let mut ema = EmaState::new(&store, 0.999);
        // shadow starts at the parameter value; reset it to 0 via a fresh store.
        let zero_store = single_param_store(0.0);
        let mut ema0 = EmaState::new(&zero_store, 0.999);
        ema0.update(&store).unwrap();
        assert!((ema0.shadow(0).data()[0] - 0.001).abs() < 1e-15);

        // shadow=1, param=0, 1000 updates -> 0.999^1000.
        for _ in 0..1000 {
            ema.update(&zero_store).unwrap();
        }
        let expect = 0.999f64.powi(1000);
        assert!((ema.shadow(0).data()[0] - expect).abs() < 1e-6, "got {}", ema.shadow(0).data()[0]);
    }

    #[test]
    fn ema_converges_monotonically_to_constant() {
        let target = single_param_store(2.5);
        let start = single_param_store(0.0);
        let mut ema = EmaState::new(&start, 0.999);
        let mut prev_gap = 2.5;
        for _ in 0..200 {
            ema.update(&target).unwrap();
            let gap = (2.5 - ema.shadow(0).data()[0]).abs();
            assert!(gap <= prev_gap + 1e-15);
            prev_gap = gap;
        }
    }
}
