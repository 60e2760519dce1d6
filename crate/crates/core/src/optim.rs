//! Adam, the warmup + cosine learning-rate schedule, and global-norm clipping.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with the canonical defaults.
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            step: 0,
            beta1,
            beta2,
            eps,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {i}: {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - libm::pow(b1, t as f64);
    let c2 = 1.0 - libm::pow(b2, t as f64);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= lr * mhat / (libm::sqrt(vhat) + eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `peak`, then cosine decay to 0 at `total`.
pub fn lr_schedule(step: usize, warmup: usize, total: usize, peak: f64) -> Result<f64> {
    if warmup == 0 || warmup >= total {
        return Err(Error::InvalidSchedule { warmup, total });
    }
    if step > total {
        return Err(Error::StepOutOfRange { step, total });
    }
    if step <= warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(0.5 * peak * (1.0 + libm::cos(core::f64::consts::PI * progress)))
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = libm::sqrt(
        grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>(),
    );
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
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
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::new(&[2], vec![0.3, -1.2])];
        let g = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert_eq!(p[0].data(), &[0.3, -1.2]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.02] {
            let mut p = vec![Tensor::scalar(1.0)];
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &[Tensor::scalar(g)], &mut st, 0.01).unwrap();
            let delta = p[0].item() - 1.0;
            let expected = -0.01 * g.signum();
            assert!(((delta - expected) / expected).abs() < 1e-6, "{delta}");
        }
    }

    #[test]
    fn two_steps_match_hand_simulation() {
        // Hand simulation with g = 0.5, lr = 0.1, p0 = 2.
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64, 0.5f64);
        let mut p_ref = 2.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p_ref -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = vec![Tensor::scalar(2.0)];
        let mut st = AdamState::new(&p);
        for _ in 0..2 {
            adam_step(&mut p, &[Tensor::scalar(g)], &mut st, lr).unwrap();
        }
        assert!((p[0].item() - p_ref).abs() < 1e-12);
        assert!(st.second_moments()[0].item() >= 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st, 0.1);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn schedule_landmarks() {
        let (w, t, peak) = (10, 110, 3e-3);
        assert_eq!(lr_schedule(0, w, t, peak).unwrap(), 0.0);
        assert_eq!(lr_schedule(w, w, t, peak).unwrap(), peak);
        assert!((lr_schedule((w + t) / 2, w, t, peak).unwrap() - peak / 2.0).abs() < 1e-15);
        assert!(lr_schedule(t, w, t, peak).unwrap().abs() < 1e-18);
        assert!(matches!(
            lr_schedule(t + 1, w, t, peak),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(lr_schedule(0, 0, t, peak).is_err());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::new(&[2], vec![3.0, 4.0])];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let mut small = vec![Tensor::new(&[1], vec![0.5])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].item(), 0.5);
    }
}
