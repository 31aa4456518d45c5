//! Update rules: the secant-curvature (EAGLE) rule, reference Adam,
//! SGD with momentum, and the per-scalar switching mechanism.
//!
//! All arithmetic is `f64`. The EAGLE branch divides by the gradient
//! difference, which amplifies rounding; 32-bit would not survive the
//! exact-quadratic tests.

use serde::{Deserialize, Serialize};

use crate::EagleError;

/// Hyperparameters for the switched optimizer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EagleConfig {
    /// Adam learning rate.
    pub alpha: f64,
    /// First-moment decay rate.
    pub beta1: f64,
    /// Second-moment decay rate.
    pub beta2: f64,
    /// Adam denominator guard.
    pub epsilon: f64,
    /// Gradient-difference guard: below this |Δg| the scalar routes to Adam.
    pub threshold: f64,
}

impl Default for EagleConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            threshold: 0.0005,
        }
    }
}

impl EagleConfig {
    // `!(x > 0)` deliberately rejects NaN as well
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), EagleError> {
        if !(self.alpha > 0.0) {
            return Err(EagleError::Config("alpha must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(EagleError::Config("beta1 must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(EagleError::Config("beta2 must be in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(EagleError::Config("epsilon must be > 0".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(EagleError::Config("threshold must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-scalar optimizer history plus Adam moments.
///
/// `grad_prev`, `m`, and `v` start at exactly zero; the zero previous
/// gradient is what forces the first step onto the Adam branch everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Update count; 0 before the first update.
    pub step: u64,
    pub param_prev: Vec<f64>,
    pub grad_prev: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(n_params: usize, initial_params: &[f64]) -> Self {
        assert_eq!(n_params, initial_params.len());
        Self {
            step: 0,
            param_prev: initial_params.to_vec(),
            grad_prev: vec![0.0; n_params],
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn len(&self) -> usize {
        self.param_prev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.param_prev.is_empty()
    }
}

/// Which rule a scalar takes this step, with the conditions that decided it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleChoice {
    pub rule: Rule,
    /// Gradient-difference guard |Δg| < threshold.
    pub cond1_fired: bool,
    /// Loss-landscape sign test.
    pub cond2_fired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Adam,
    Eagle,
}

/// Secant update step for one scalar: ((θ − θ_prev) / (g − g_prev)) · g.
///
/// The caller subtracts the result from the current parameter. No learning
/// rate applies to this branch. Callers must route through [`select_rule`]
/// first; condition1 guarantees |Δg| ≥ threshold here.
pub fn eagle_delta(param_curr: f64, param_prev: f64, grad_curr: f64, grad_prev: f64) -> f64 {
    debug_assert!(
        grad_curr != grad_prev,
        "eagle_delta called with equal gradients; caller skipped select_rule"
    );
    (param_curr - param_prev) / (grad_curr - grad_prev) * grad_curr
}

/// Decide the update rule for one scalar.
///
/// condition1: |Δg| < threshold (strict).
/// condition2: (g_prev·g_curr ≥ 0) ∧ (g_curr·Δg ≥ 0).
/// Adam iff condition1 ∨ condition2.
pub fn select_rule(grad_prev: f64, grad_curr: f64, threshold: f64) -> RuleChoice {
    let dg = grad_curr - grad_prev;
    let cond1 = dg.abs() < threshold;
    let cond2 = grad_prev * grad_curr >= 0.0 && grad_curr * dg >= 0.0;
    RuleChoice {
        rule: if cond1 || cond2 {
            Rule::Adam
        } else {
            Rule::Eagle
        },
        cond1_fired: cond1,
        cond2_fired: cond2,
    }
}

/// Advance the Adam moments for every scalar and return the per-scalar
/// Adam deltas (the caller subtracts them).
///
/// `state.step` must already hold the 1-based index of this update; bias
/// correction divides by 1 − βⁿ.
pub fn adam_delta(state: &mut OptimizerState, grad_curr: &[f64], config: &EagleConfig) -> Vec<f64> {
    assert_eq!(state.len(), grad_curr.len(), "gradient length mismatch");
    assert!(state.step >= 1, "adam_delta requires an incremented step");
    let bc1 = 1.0 - config.beta1.powi(state.step as i32);
    let bc2 = 1.0 - config.beta2.powi(state.step as i32);
    let mut delta = vec![0.0; grad_curr.len()];
    for i in 0..grad_curr.len() {
        let g = grad_curr[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        delta[i] = config.alpha * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    delta
}

/// One switched update over a flat parameter vector.
///
/// Adam moments advance for every scalar regardless of which branch the
/// scalar takes. Returns the number of scalars that took the EAGLE branch.
pub fn eagle_step(
    state: &mut OptimizerState,
    params: &mut [f64],
    grads: &[f64],
    config: &EagleConfig,
) -> usize {
    eagle_step_impl(state, params, grads, config, true)
}

/// [`eagle_step`] with the condition1 guard disabled. Test hook for
/// observing the divergence the guard exists to prevent; not for training.
#[doc(hidden)]
pub fn eagle_step_unguarded(
    state: &mut OptimizerState,
    params: &mut [f64],
    grads: &[f64],
    config: &EagleConfig,
) -> usize {
    eagle_step_impl(state, params, grads, config, false)
}

fn eagle_step_impl(
    state: &mut OptimizerState,
    params: &mut [f64],
    grads: &[f64],
    config: &EagleConfig,
    cond1_enabled: bool,
) -> usize {
    assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
    assert_eq!(params.len(), state.len(), "state length mismatch");

    state.step += 1;
    let adam = adam_delta(state, grads, config);

    let mut usage = 0usize;
    for i in 0..params.len() {
        let choice = select_rule(state.grad_prev[i], grads[i], config.threshold);
        let take_adam = if cond1_enabled {
            choice.rule == Rule::Adam
        } else {
            choice.cond2_fired
        };
        let curr = params[i];
        if take_adam {
            params[i] = curr - adam[i];
        } else {
            params[i] = curr - eagle_delta(curr, state.param_prev[i], grads[i], state.grad_prev[i]);
            usage += 1;
        }
        // the next secant needs this step's pre-update parameter and gradient
        state.param_prev[i] = curr;
        state.grad_prev[i] = grads[i];
    }
    usage
}

/// SGD momentum buffer and hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentumState {
    pub velocity: Vec<f64>,
    pub mu: f64,
    pub lr: f64,
}

impl MomentumState {
    pub fn new(n_params: usize, mu: f64, lr: f64) -> Self {
        Self {
            velocity: vec![0.0; n_params],
            mu,
            lr,
        }
    }
}

/// Polyak momentum: v ← μv + g; θ ← θ − lr·v.
pub fn sgd_momentum_step(state: &mut MomentumState, params: &mut [f64], grads: &[f64]) {
    assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
    assert_eq!(params.len(), state.velocity.len(), "state length mismatch");
    for i in 0..params.len() {
        state.velocity[i] = state.mu * state.velocity[i] + grads[i];
        params[i] -= state.lr * state.velocity[i];
    }
}

/// Standalone reference Adam, independent of the switching path.
///
/// Kept arithmetically identical, expression for expression, to the Adam
/// branch of [`eagle_step`] so the threshold = ∞ equivalence is bitwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamOptimizer {
    pub config: EagleConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamOptimizer {
    pub fn new(n_params: usize, config: EagleConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
        assert_eq!(params.len(), self.m.len(), "state length mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.config.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.config.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.config.beta1 * self.m[i] + (1.0 - self.config.beta1) * g;
            self.v[i] = self.config.beta2 * self.v[i] + (1.0 - self.config.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.config.alpha * m_hat / (v_hat.sqrt() + self.config.epsilon);
        }
    }
}
