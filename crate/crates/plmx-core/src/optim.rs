//! Adam with bias correction and the warmup/decay learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-parameter Adam accumulators. One state per parameter tensor; `t`
/// advances by exactly one on every [`adam_step`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with the standard constants β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn with_constants(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1, beta2, epsilon }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One Adam update:
/// m ← β1·m + (1-β1)·g,  v ← β2·v + (1-β2)·g²,
/// θ ← θ - lr·m̂/(√v̂ + ε) with bias-corrected m̂, v̂.
///
/// `lr == 0` leaves the parameters bit-identical (the schedule endpoints
/// rely on this), though the moments and step counter still advance.
pub fn adam_step(param: &mut Tensor, grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if grad.len() != param.numel() {
        return Err(Error::Shape(format!(
            "adam_step: gradient length {} does not match parameter length {}",
            grad.len(),
            param.numel()
        )));
    }
    if state.m.len() != param.numel() {
        return Err(Error::Shape(format!(
            "adam_step: state length {} does not match parameter length {}",
            state.m.len(),
            param.numel()
        )));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::Parameter(format!("adam_step: lr must be ≥ 0, got {lr}")));
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - libm::pow(state.beta1, t);
    let bc2 = 1.0 - libm::pow(state.beta2, t);
    let data = param.data_mut();
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= lr * m_hat / (libm::sqrt(v_hat) + state.epsilon);
    }
    Ok(())
}

/// Piecewise-linear schedule: warmup from 0 to `max_lr` over the first 10%
/// of `total_steps` (rounded up), then linear decay to 0 at `total_steps`.
/// The peak value `max_lr` is attained exactly once, at the warmup boundary.
pub fn lr_at_step(step: usize, total_steps: usize, max_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Parameter("lr_at_step: total_steps must be ≥ 1".into()));
    }
    if step > total_steps {
        return Err(Error::Parameter(format!(
            "lr_at_step: step {step} exceeds total_steps {total_steps}"
        )));
    }
    if !max_lr.is_finite() || max_lr < 0.0 {
        return Err(Error::Parameter(format!("lr_at_step: max_lr must be ≥ 0, got {max_lr}")));
    }
    let warmup = total_steps.div_ceil(10); // ceil(0.1 · total), exact in integers
    let lr = if step <= warmup {
        max_lr * step as f64 / warmup as f64
    } else {
        max_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    };
    Ok(lr)
}

/// Scales all gradients by `max_norm / ‖g‖₂` when the global L2 norm
/// exceeds `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for &v in g {
            sq += v * v;
        }
    }
    let norm = libm::sqrt(sq);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn adam_first_step_matches_hand_evaluation() {
        // θ=1, g=0.5, lr=0.01: one-step evaluation of the recurrence gives
        // m̂ = g, v̂ = g², θ' = θ - lr·g/(|g| + ε) ≈ θ - lr·sign(g)
        let mut p = Tensor::scalar(1.0).unwrap();
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[0.5], &mut st, 0.01).unwrap();
        let m_hat: f64 = (0.1 * 0.5) / (1.0 - 0.9);
        let v_hat: f64 = (0.001 * 0.25) / (1.0 - 0.999);
        let want = 1.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert_eq!(p.data()[0], want);
        assert!((p.data()[0] - (1.0 - 0.01)).abs() < 1e-8, "≈ θ - lr·sign(g)");
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_fresh_state_keeps_params() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.data().to_vec();
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0, 0.0, 0.0], &mut st, 0.1).unwrap();
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn adam_zero_lr_keeps_params_for_any_gradient() {
        let mut p = Tensor::new(vec![2], vec![3.0, -4.0]).unwrap();
        let before = p.data().to_vec();
        let mut st = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[123.0, -9.0], &mut st, 0.0).unwrap();
        }
        assert_eq!(p.data(), &before[..]);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn adam_two_steps_equal_replayed_sequence() {
        let grads = [[0.3, -0.7], [-0.1, 0.2]];
        let run = || {
            let mut p = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
            let mut st = AdamState::new(2);
            for g in &grads {
                adam_step(&mut p, g, &mut st, 0.05).unwrap();
            }
            p.data().to_vec()
        };
        assert_eq!(run(), run(), "bit-for-bit determinism");
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut p = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let mut st = AdamState::new(2);
        assert!(matches!(
            adam_step(&mut p, &[1.0], &mut st, 0.1),
            Err(Error::Shape(_))
        ));
        let mut st3 = AdamState::new(3);
        assert!(matches!(
            adam_step(&mut p, &[1.0, 1.0], &mut st3, 0.1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn lr_schedule_endpoints_and_peak() {
        assert_eq!(lr_at_step(0, 100, 0.005).unwrap(), 0.0);
        // peak exactly at ceil(0.1·total)
        assert_eq!(lr_at_step(10, 100, 0.005).unwrap(), 0.005);
        assert_eq!(lr_at_step(100, 100, 0.005).unwrap(), 0.0);
        assert_eq!(lr_at_step(3, 30, 0.005).unwrap(), 0.005);
    }

    #[test]
    fn lr_schedule_midway_decay_matches_formula() {
        // direct evaluation of the piecewise-linear formula
        let total = 200;
        let warmup = 20;
        let step = 110; // midway through decay
        let want = 0.005 * (total - step) as f64 / (total - warmup) as f64;
        assert_eq!(lr_at_step(step, total, 0.005).unwrap(), want);
    }

    #[test]
    fn lr_schedule_is_continuous_nonnegative_single_peak() {
        let total = 73;
        let max_lr = 0.005;
        let mut prev = lr_at_step(0, total, max_lr).unwrap();
        let mut peaks = 0;
        for step in 1..=total {
            let lr = lr_at_step(step, total, max_lr).unwrap();
            assert!(lr >= 0.0);
            assert!((lr - prev).abs() <= max_lr / 7.0 + 1e-12, "continuity at {step}");
            if lr == max_lr {
                peaks += 1;
            }
            prev = lr;
        }
        assert_eq!(peaks, 1, "maximum attained exactly once");
    }

    #[test]
    fn lr_schedule_rejects_zero_total() {
        assert!(matches!(lr_at_step(0, 0, 0.005), Err(Error::Parameter(_))));
    }

    #[test]
    fn lr_schedule_degenerate_single_step() {
        assert_eq!(lr_at_step(0, 1, 0.01).unwrap(), 0.0);
        assert_eq!(lr_at_step(1, 1, 0.01).unwrap(), 0.01);
    }

    #[test]
    fn clip_leaves_small_gradients_alone_and_scales_large() {
        let mut g = vec![vec![0.3, 0.4]];
        let norm = clip_global_norm(&mut g, 1.0);
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(g[0], vec![0.3, 0.4]);

        let mut g = vec![vec![3.0], vec![4.0]];
        let norm = clip_global_norm(&mut g, 1.0);
        assert!((norm - 5.0).abs() < 1e-15);
        let clipped = (g[0][0] * g[0][0] + g[1][0] * g[1][0]).sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);
    }
}
