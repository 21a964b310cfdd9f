//! AdamW with decoupled weight decay and bias-corrected moments.
//!
//! ```text
//! θ ← θ − lr·wd·θ
//! m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
//! θ ← θ − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
//! ```

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderGrads, EncoderParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One AdamW update of `params` in place. `step` is 1-based. Returns false
/// if any updated parameter is not finite.
pub fn adamw_update(
    params: &mut [f64],
    grads: Option<&[f64]>,
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &AdamWConfig,
) -> bool {
    debug_assert_eq!(params.len(), m.len());
    debug_assert_eq!(params.len(), v.len());
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    let mut finite = true;
    for i in 0..params.len() {
        let g = grads.map_or(0.0, |g| g[i]);
        let mut p = params[i] * decay;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        finite &= p.is_finite();
        params[i] = p;
    }
    finite
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Moment estimates for every tensor of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOptimizer {
    emb: Moments,
    proj_w: Moments,
    proj_b: Moments,
}

impl EncoderOptimizer {
    pub fn new(params: &EncoderParams) -> Self {
        let [emb, w, b] = params.tensors();
        Self {
            emb: Moments::zeros(emb.len()),
            proj_w: Moments::zeros(w.len()),
            proj_b: Moments::zeros(b.len()),
        }
    }

    /// Dense update of every parameter; embedding rows absent from the sparse
    /// gradient are stepped with a zero gradient.
    pub fn step(
        &mut self,
        params: &mut EncoderParams,
        grads: &EncoderGrads,
        step: u64,
        lr: f64,
        cfg: &AdamWConfig,
    ) -> bool {
        let d = params.dim();
        let [emb, w, b] = params.tensors_mut();
        let mut ok = true;
        for (row, ((p, m), v)) in emb
            .chunks_mut(d)
            .zip(self.emb.m.chunks_mut(d))
            .zip(self.emb.v.chunks_mut(d))
            .enumerate()
        {
            let g = grads.emb_rows.get(&(row as u32)).map(Vec::as_slice);
            ok &= adamw_update(p, g, m, v, step, lr, cfg);
        }
        ok &= adamw_update(
            w,
            Some(&grads.proj_w),
            &mut self.proj_w.m,
            &mut self.proj_w.v,
            step,
            lr,
            cfg,
        );
        ok &= adamw_update(
            b,
            Some(&grads.proj_b),
            &mut self.proj_b.m,
            &mut self.proj_b.v,
            step,
            lr,
            cfg,
        );
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = vec![0.3, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 1..=3 {
            assert!(adamw_update(
                &mut p,
                Some(&[0.0, 0.0]),
                &mut m,
                &mut v,
                t,
                1e-3,
                &cfg
            ));
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn zero_grad_with_decay_shrinks() {
        let cfg = AdamWConfig::default();
        let lr = 2e-5;
        let mut p = vec![0.5, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adamw_update(&mut p, None, &mut m, &mut v, 1, lr, &cfg);
        assert_eq!(p, vec![0.5 * (1.0 - lr * 0.01), -2.0 * (1.0 - lr * 0.01)]);
    }

    #[test]
    fn matches_hand_recurrence() {
        let cfg = AdamWConfig::default();
        let lr = 0.1;
        let grads = [0.5, -0.25, 1.5];
        let mut p = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        for (t, g) in grads.iter().enumerate() {
            adamw_update(&mut p, Some(&[*g]), &mut m, &mut v, t as u64 + 1, lr, &cfg);
        }
        // Hand-stepped:
        // t=1: θ=1·(1−0.001)=0.999; m=0.05; v=0.00025; m̂=0.5; v̂=0.25; θ=0.999−0.1·0.5/(0.5+1e-8)
        let mut theta = 1.0_f64;
        let (mut mm, mut vv) = (0.0_f64, 0.0_f64);
        for (t, g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            theta -= lr * 0.01 * theta;
            mm = 0.9 * mm + 0.1 * g;
            vv = 0.999 * vv + 0.001 * g * g;
            let m_hat = mm / (1.0 - 0.9_f64.powi(t));
            let v_hat = vv / (1.0 - 0.999_f64.powi(t));
            theta -= lr * m_hat / (v_hat.sqrt() + 1e-8);
        }
        assert!((p[0] - theta).abs() < 1e-10, "{} vs {theta}", p[0]);
        let first = 0.999 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!(first > 0.0 && first < 0.999);
    }

    #[test]
    fn reports_non_finite() {
        let mut p = [f64::MAX];
        let (mut m, mut v) = ([0.0], [0.0]);
        assert!(!adamw_update(
            &mut p,
            Some(&[f64::NAN]),
            &mut m,
            &mut v,
            1,
            0.1,
            &AdamWConfig::default()
        ));
    }
}
