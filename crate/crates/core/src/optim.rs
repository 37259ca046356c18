//! The optimizer zoo (SGD, Adam, AdamW, Yogi, LAMB) and learning-rate
//! schedules.
//!
//! Every optimizer runs in two roles: locally on gradients, and centrally on
//! pseudo-gradients (negated aggregated deltas). One [`step`] implementation
//! serves both; the caller supplies an `lr_scale` from a schedule so the same
//! scheduler drives per-batch local steps and per-round central steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKind {
    Sgd,
    Adam,
    Adamw,
    Yogi,
    Lamb,
}

impl std::fmt::Display for OptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OptKind::Sgd => "sgd",
            OptKind::Adam => "adam",
            OptKind::Adamw => "adamw",
            OptKind::Yogi => "yogi",
            OptKind::Lamb => "lamb",
        };
        f.write_str(s)
    }
}

/// Optimizer hyperparameters. Fields irrelevant to `kind` are stored but
/// ignored, so a spec round-trips through serialization unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub kind: OptKind,
    pub lr: f64,
    /// SGD only.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// AdamW and LAMB only.
    pub weight_decay: f64,
    /// LAMB trust-ratio clip bounds applied to the parameter norm.
    pub trust_clip: (f64, f64),
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            kind: OptKind::Sgd,
            lr: 0.1,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            trust_clip: (0.0, 10.0),
        }
    }
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        Self { kind: OptKind::Sgd, lr, ..Self::default() }
    }

    pub fn adam(lr: f64, epsilon: f64) -> Self {
        Self { kind: OptKind::Adam, lr, epsilon, ..Self::default() }
    }

    pub fn with_kind(kind: OptKind, lr: f64) -> Self {
        Self { kind, lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("optimizer lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("beta1/beta2 must be in [0,1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.trust_clip.0 < 0.0 || self.trust_clip.1 < self.trust_clip.0 {
            return Err(Error::InvalidConfig("trust_clip bounds must satisfy 0 <= lo <= hi".into()));
        }
        Ok(())
    }

    fn uses_momentum_buffer(&self) -> bool {
        match self.kind {
            OptKind::Sgd => self.momentum > 0.0,
            _ => true,
        }
    }

    fn uses_second_moment(&self) -> bool {
        !matches!(self.kind, OptKind::Sgd)
    }
}

/// Mutable optimizer state. Buffer presence matches the kind: plain SGD has
/// none, SGD with momentum has `m`, the Adam family has `m` and `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step_count: u64,
    pub m: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(spec: &OptimizerSpec, param_len: usize) -> Self {
        Self {
            step_count: 0,
            m: spec.uses_momentum_buffer().then(|| vec![0.0; param_len]),
            v: spec.uses_second_moment().then(|| vec![0.0; param_len]),
        }
    }
}

/// Extra param-sized state buffers the optimizer keeps: 0 for plain SGD,
/// 1 for SGD with momentum, 2 for the Adam family.
pub fn state_memory_report(spec: &OptimizerSpec) -> usize {
    spec.uses_momentum_buffer() as usize + spec.uses_second_moment() as usize
}

/// Peak param-sized allocations during a step, counting the parameters, the
/// state buffers, and a materialized gradient for the adaptive family (the
/// SGD variants stream the gradient into the update). Yields 1x for plain
/// SGD, 2x with momentum, 4x for LAMB.
pub fn memory_multiplier(spec: &OptimizerSpec) -> usize {
    let grad_buffer = spec.uses_second_moment() as usize;
    1 + state_memory_report(spec) + grad_buffer
}

/// Apply one optimizer step. `lr_scale` multiplies `spec.lr`; schedules
/// produce it. The gradient may be a true gradient or a pseudo-gradient.
pub fn step(
    spec: &OptimizerSpec,
    state: &mut OptimizerState,
    params: &mut ParamVector,
    grad: &[f64],
    lr_scale: f64,
) -> Result<()> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "optimizer step gradient".into(),
            expected: params.len(),
            got: grad.len(),
        });
    }
    for e in params.layout().entries() {
        if grad[e.offset..e.offset + e.len].iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient, layer {}", e.name)));
        }
    }
    state.step_count += 1;
    let t = state.step_count;
    let lr = spec.lr * lr_scale;

    match spec.kind {
        OptKind::Sgd => {
            let theta = params.values_mut();
            if spec.momentum > 0.0 {
                let m = state.m.as_mut().expect("sgd momentum state");
                for i in 0..theta.len() {
                    m[i] = spec.momentum * m[i] + grad[i];
                    theta[i] -= lr * m[i];
                }
            } else {
                for i in 0..theta.len() {
                    theta[i] -= lr * grad[i];
                }
            }
        }
        OptKind::Adam | OptKind::Adamw | OptKind::Yogi => {
            let m = state.m.as_mut().expect("adam m state");
            let v = state.v.as_mut().expect("adam v state");
            let bc1 = 1.0 - spec.beta1.powi(t as i32);
            let bc2 = 1.0 - spec.beta2.powi(t as i32);
            let theta = params.values_mut();
            for i in 0..theta.len() {
                let g = grad[i];
                let g2 = g * g;
                m[i] = spec.beta1 * m[i] + (1.0 - spec.beta1) * g;
                v[i] = if spec.kind == OptKind::Yogi {
                    // sign-controlled second moment; equals Adam's at t=1
                    v[i] - (1.0 - spec.beta2) * (v[i] - g2).signum_or_zero() * g2
                } else {
                    spec.beta2 * v[i] + (1.0 - spec.beta2) * g2
                };
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let mut update = m_hat / (v_hat.sqrt() + spec.epsilon);
                if spec.kind == OptKind::Adamw {
                    // decoupled decay, taken at the pre-update value
                    update += spec.weight_decay * theta[i];
                }
                theta[i] -= lr * update;
            }
        }
        OptKind::Lamb => {
            let m = state.m.as_mut().expect("lamb m state");
            let v = state.v.as_mut().expect("lamb v state");
            let bc1 = 1.0 - spec.beta1.powi(t as i32);
            let bc2 = 1.0 - spec.beta2.powi(t as i32);
            let (lo, hi) = spec.trust_clip;
            let layout = std::sync::Arc::clone(params.layout());
            let theta = params.values_mut();
            let mut update = vec![0.0; grad.len()];
            for i in 0..theta.len() {
                let g = grad[i];
                m[i] = spec.beta1 * m[i] + (1.0 - spec.beta1) * g;
                v[i] = spec.beta2 * v[i] + (1.0 - spec.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                update[i] = m_hat / (v_hat.sqrt() + spec.epsilon) + spec.weight_decay * theta[i];
            }
            for e in layout.entries() {
                let r = e.offset..e.offset + e.len;
                let theta_norm = crate::params::l2_norm(&theta[r.clone()]);
                let update_norm = crate::params::l2_norm(&update[r.clone()]);
                let trust = if theta_norm > 0.0 && update_norm > 0.0 {
                    theta_norm.clamp(lo, hi) / update_norm
                } else {
                    1.0
                };
                for i in r {
                    theta[i] -= lr * trust * update[i];
                }
            }
        }
    }
    Ok(())
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    /// `signum` with `0.0.signum() == 0.0`, so a zero difference leaves the
    /// second moment untouched.
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Warmup,
    WarmupDecay,
}

/// Learning-rate schedule. `base_lr` is the value emitted at the warmup
/// endpoint; set it to 1.0 to use the schedule as a pure multiplier on the
/// optimizer's own lr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { kind: ScheduleKind::Constant, base_lr: 1.0, warmup_steps: 0, total_steps: 0 }
    }
}

impl ScheduleSpec {
    pub fn constant(base_lr: f64) -> Self {
        Self { kind: ScheduleKind::Constant, base_lr, ..Self::default() }
    }

    pub fn warmup(base_lr: f64, warmup_steps: u64) -> Self {
        Self { kind: ScheduleKind::Warmup, base_lr, warmup_steps, ..Self::default() }
    }

    pub fn warmup_decay(base_lr: f64, warmup_steps: u64) -> Self {
        Self { kind: ScheduleKind::WarmupDecay, base_lr, warmup_steps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.base_lr.is_finite() || self.base_lr < 0.0 {
            return Err(Error::InvalidConfig("schedule base_lr must be finite and >= 0".into()));
        }
        if self.total_steps > 0 && self.warmup_steps > self.total_steps {
            return Err(Error::InvalidConfig("warmup_steps must be <= total_steps".into()));
        }
        if matches!(self.kind, ScheduleKind::Warmup | ScheduleKind::WarmupDecay)
            && self.warmup_steps == 0
        {
            return Err(Error::InvalidConfig("warmup schedules need warmup_steps >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate at a 1-based step. Warmup ramps linearly to `base_lr`;
/// warmup-decay continues with inverse-square-root decay, continuous at the
/// warmup boundary.
pub fn lr_at(spec: &ScheduleSpec, step: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::InvalidConfig("schedule step must be >= 1".into()));
    }
    let s = step as f64;
    Ok(match spec.kind {
        ScheduleKind::Constant => spec.base_lr,
        ScheduleKind::Warmup => {
            let w = spec.warmup_steps.max(1) as f64;
            spec.base_lr * (s / w).min(1.0)
        }
        ScheduleKind::WarmupDecay => {
            let w = spec.warmup_steps.max(1) as f64;
            spec.base_lr * (s / w).min((w / s).sqrt())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LayerLayout;
    use std::sync::Arc;

    fn vector(values: Vec<f64>) -> ParamVector {
        let layout =
            Arc::new(LayerLayout::from_lengths([("w", values.len())]).unwrap());
        ParamVector::new(values, layout).unwrap()
    }

    fn two_layer_vector(a: Vec<f64>, b: Vec<f64>) -> ParamVector {
        let layout =
            Arc::new(LayerLayout::from_lengths([("a", a.len()), ("b", b.len())]).unwrap());
        let mut values = a;
        values.extend(b);
        ParamVector::new(values, layout).unwrap()
    }

    #[test]
    fn sgd_textbook_step() {
        let spec = OptimizerSpec::sgd(0.1);
        let mut state = OptimizerState::new(&spec, 2);
        let mut p = vector(vec![5.0, -3.0]);
        step(&spec, &mut state, &mut p, &[10.0, -6.0], 1.0).unwrap();
        assert_eq!(p.values(), &[4.0, -2.4]);
        assert!(state.m.is_none() && state.v.is_none());
    }

    #[test]
    fn adam_first_step_matches_scalar_formulas() {
        // Independent scalar evaluation: m=0.01, m_hat=0.1, v=1e-5,
        // v_hat=0.01, update = 1e-3 * 0.1 / (0.1 + 0.01).
        let spec = OptimizerSpec {
            kind: OptKind::Adam,
            lr: 1e-3,
            epsilon: 0.01,
            ..OptimizerSpec::default()
        };
        let mut state = OptimizerState::new(&spec, 3);
        let mut p = vector(vec![0.0; 3]);
        step(&spec, &mut state, &mut p, &[0.1; 3], 1.0).unwrap();
        let expected = -1e-3 * 0.1 / (0.1 + 0.01);
        for v in p.values() {
            assert!((v - expected).abs() < 1e-18, "got {v}, want {expected}");
        }
    }

    #[test]
    fn adamw_without_decay_equals_adam() {
        let adam = OptimizerSpec { kind: OptKind::Adam, lr: 0.01, ..OptimizerSpec::default() };
        let adamw = OptimizerSpec { kind: OptKind::Adamw, weight_decay: 0.0, ..adam.clone() };
        let mut sa = OptimizerState::new(&adam, 4);
        let mut sw = OptimizerState::new(&adamw, 4);
        let mut pa = vector(vec![0.3, -0.2, 1.0, 0.0]);
        let mut pw = pa.clone();
        let mut rng_state = 42u64;
        for _ in 0..10 {
            let grad: Vec<f64> = (0..4)
                .map(|_| {
                    rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    ((rng_state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
                })
                .collect();
            step(&adam, &mut sa, &mut pa, &grad, 1.0).unwrap();
            step(&adamw, &mut sw, &mut pw, &grad, 1.0).unwrap();
        }
        for (a, w) in pa.values().iter().zip(pw.values()) {
            assert!((a - w).abs() <= 1e-15);
        }
    }

    #[test]
    fn yogi_first_step_equals_adam() {
        let adam = OptimizerSpec { kind: OptKind::Adam, lr: 0.05, ..OptimizerSpec::default() };
        let yogi = OptimizerSpec { kind: OptKind::Yogi, ..adam.clone() };
        let mut sa = OptimizerState::new(&adam, 3);
        let mut sy = OptimizerState::new(&yogi, 3);
        let mut pa = vector(vec![1.0, -2.0, 0.5]);
        let mut py = pa.clone();
        let grad = [0.3, -0.1, 0.7];
        step(&adam, &mut sa, &mut pa, &grad, 1.0).unwrap();
        step(&yogi, &mut sy, &mut py, &grad, 1.0).unwrap();
        for (a, y) in pa.values().iter().zip(py.values()) {
            assert!((a - y).abs() <= 1e-15);
        }
        assert_eq!(sa.v, sy.v);
    }

    #[test]
    fn lamb_update_norm_identity() {
        let spec = OptimizerSpec {
            kind: OptKind::Lamb,
            lr: 0.01,
            weight_decay: 0.1,
            trust_clip: (0.0, 10.0),
            ..OptimizerSpec::default()
        };
        let mut state = OptimizerState::new(&spec, 5);
        let before = two_layer_vector(vec![0.6, -0.8], vec![1.0, 2.0, -2.0]);
        let mut p = before.clone();
        step(&spec, &mut state, &mut p, &[0.5, -0.25, 0.1, 0.9, -0.3], 1.0).unwrap();
        for e in before.layout().entries() {
            let r = e.offset..e.offset + e.len;
            let theta_norm = crate::params::l2_norm(&before.values()[r.clone()]);
            let clipped = theta_norm.clamp(spec.trust_clip.0, spec.trust_clip.1);
            let applied: Vec<f64> = p.values()[r.clone()]
                .iter()
                .zip(&before.values()[r])
                .map(|(a, b)| a - b)
                .collect();
            let applied_norm = crate::params::l2_norm(&applied);
            assert!(
                (applied_norm - spec.lr * clipped).abs() < 1e-10,
                "layer {}: {applied_norm} vs {}",
                e.name,
                spec.lr * clipped
            );
        }
    }

    #[test]
    fn memory_report_counts() {
        let sgd = OptimizerSpec::sgd(0.1);
        let sgdm = OptimizerSpec { momentum: 0.9, ..OptimizerSpec::sgd(0.1) };
        let counts: Vec<usize> = [
            sgd.clone(),
            sgdm.clone(),
            OptimizerSpec::with_kind(OptKind::Adam, 0.1),
            OptimizerSpec::with_kind(OptKind::Adamw, 0.1),
            OptimizerSpec::with_kind(OptKind::Yogi, 0.1),
            OptimizerSpec::with_kind(OptKind::Lamb, 0.1),
        ]
        .iter()
        .map(state_memory_report)
        .collect();
        assert_eq!(counts, vec![0, 1, 2, 2, 2, 2]);
        assert_eq!(memory_multiplier(&sgd), 1);
        assert_eq!(memory_multiplier(&sgdm), 2);
        assert_eq!(memory_multiplier(&OptimizerSpec::with_kind(OptKind::Lamb, 0.1)), 4);
    }

    #[test]
    fn epsilon_monotone_update_magnitude() {
        let grads = [0.4, -1.3, 0.02];
        let mut last: Option<Vec<f64>> = None;
        for eps in [1e-8, 1e-5, 0.01, 0.1] {
            let spec = OptimizerSpec { kind: OptKind::Adam, lr: 0.1, epsilon: eps, ..OptimizerSpec::default() };
            let mut state = OptimizerState::new(&spec, 3);
            let mut p = vector(vec![0.0; 3]);
            step(&spec, &mut state, &mut p, &grads, 1.0).unwrap();
            let mags: Vec<f64> = p.values().iter().map(|v| v.abs()).collect();
            if let Some(prev) = &last {
                for (m, pm) in mags.iter().zip(prev) {
                    assert!(m <= pm);
                }
            }
            last = Some(mags);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [OptKind::Sgd, OptKind::Adam, OptKind::Adamw, OptKind::Yogi, OptKind::Lamb] {
            let spec = OptimizerSpec { weight_decay: 0.0, ..OptimizerSpec::with_kind(kind, 0.1) };
            let mut state = OptimizerState::new(&spec, 3);
            let mut p = vector(vec![0.4, -0.7, 2.0]);
            step(&spec, &mut state, &mut p, &[0.0; 3], 1.0).unwrap();
            assert_eq!(p.values(), &[0.4, -0.7, 2.0], "{kind}");
        }
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let spec = OptimizerSpec::sgd(0.1);
        let mut state = OptimizerState::new(&spec, 5);
        let mut p = two_layer_vector(vec![0.0, 0.0], vec![0.0, 0.0, 0.0]);
        let err = step(&spec, &mut state, &mut p, &[0.0, 0.0, 0.0, f64::NAN, 0.0], 1.0)
            .unwrap_err();
        assert!(err.to_string().contains("layer b"), "{err}");
    }

    #[test]
    fn deterministic_steps() {
        let spec = OptimizerSpec::with_kind(OptKind::Yogi, 0.02);
        let run = || {
            let mut state = OptimizerState::new(&spec, 3);
            let mut p = vector(vec![0.1, 0.2, 0.3]);
            for i in 0..5 {
                let g = [0.1 * i as f64, -0.2, 0.05];
                step(&spec, &mut state, &mut p, &g, 1.0).unwrap();
            }
            p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_contract() {
        let wu = ScheduleSpec::warmup(0.4, 8);
        assert_eq!(lr_at(&wu, 8).unwrap(), 0.4);
        assert_eq!(lr_at(&wu, 4).unwrap(), 0.2);
        assert_eq!(lr_at(&wu, 100).unwrap(), 0.4);

        let wd = ScheduleSpec::warmup_decay(0.4, 8);
        assert_eq!(lr_at(&wd, 8).unwrap(), 0.4);
        assert!((lr_at(&wd, 32).unwrap() - 0.2).abs() <= 1e-15);

        let c = ScheduleSpec::constant(0.05);
        assert_eq!(lr_at(&c, 1).unwrap(), 0.05);
        assert_eq!(lr_at(&c, 10_000).unwrap(), 0.05);

        assert!(lr_at(&c, 0).is_err());
    }

    #[test]
    fn spec_round_trips() {
        let spec = OptimizerSpec {
            kind: OptKind::Lamb,
            lr: 0.3,
            momentum: 0.5,
            weight_decay: 0.01,
            trust_clip: (0.1, 5.0),
            ..OptimizerSpec::default()
        };
        let text = serde_json::to_string(&spec).unwrap();
        let back: OptimizerSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
