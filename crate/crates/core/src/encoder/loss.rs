//! Cosine similarity, margin contrastive loss and exact gradients through
//! both encoders.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{EncoderParams, Forward};
use super::EncoderError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Margin on the cosine distance `1 - cos`, in (0, 1].
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { margin: 0.5 }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, EncoderError> {
    if u.len() != v.len() {
        return Err(EncoderError::Shape(format!(
            "cosine of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(EncoderError::ZeroNorm);
    }
    Ok(dot(u, v) / (nu * nv))
}

/// `½(y·D² + (1−y)·max(m−D, 0)²)` for cosine distance `D`.
pub fn contrastive_loss(distance: f64, label: u8, cfg: &LossConfig) -> f64 {
    let y = f64::from(label);
    let hinge = (cfg.margin - distance).max(0.0);
    0.5 * (y * distance * distance + (1.0 - y) * hinge * hinge)
}

/// d loss / d D.
fn loss_slope(distance: f64, label: u8, cfg: &LossConfig) -> f64 {
    if label == 1 {
        distance
    } else {
        -(cfg.margin - distance).max(0.0)
    }
}

/// One (rule-side input, text) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub rule_tokens: Vec<u32>,
    pub text_tokens: Vec<u32>,
    pub label: u8,
}

/// Gradient of one encoder's parameters. Embedding rows are sparse: only rows
/// of tokens seen in the batch are present.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub emb_rows: BTreeMap<u32, Vec<f64>>,
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(dim: usize) -> Self {
        Self {
            emb_rows: BTreeMap::new(),
            proj_w: vec![0.0; dim * dim],
            proj_b: vec![0.0; dim],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.emb_rows
            .values()
            .flatten()
            .chain(&self.proj_w)
            .chain(&self.proj_b)
            .all(|&g| g == 0.0)
    }

    fn is_finite(&self) -> bool {
        self.emb_rows
            .values()
            .flatten()
            .chain(&self.proj_w)
            .chain(&self.proj_b)
            .all(|g| g.is_finite())
    }
}

/// Accumulates `scale * d out` back through `tanh`, the projection and mean pooling.
fn backprop(
    params: &EncoderParams,
    tokens: &[u32],
    fwd: &Forward,
    d_out: &[f64],
    grads: &mut EncoderGrads,
) {
    let d = params.dim();
    let d_z: Vec<f64> = d_out
        .iter()
        .zip(&fwd.out)
        .map(|(g, o)| g * (1.0 - o * o))
        .collect();
    let mut d_pooled = vec![0.0; d];
    for (i, &dz) in d_z.iter().enumerate() {
        grads.proj_b[i] += dz;
        let w_row = &params.proj_w[i * d..(i + 1) * d];
        let g_row = &mut grads.proj_w[i * d..(i + 1) * d];
        for j in 0..d {
            g_row[j] += dz * fwd.pooled[j];
            d_pooled[j] += w_row[j] * dz;
        }
    }
    let inv_n = 1.0 / tokens.len() as f64;
    for &t in tokens {
        let row = grads.emb_rows.entry(t).or_insert_with(|| vec![0.0; d]);
        for (r, g) in row.iter_mut().zip(&d_pooled) {
            *r += g * inv_n;
        }
    }
}

/// d cos(u, v) / d u.
fn cosine_grad(u: &[f64], v: &[f64], cos: f64) -> Vec<f64> {
    let (nu, nv) = (norm(u), norm(v));
    u.iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - cos * a / (nu * nu))
        .collect()
}

/// Loss of one pair, computed forward only.
pub fn pair_loss(
    rule: &EncoderParams,
    text: &EncoderParams,
    pair: &PairExample,
    cfg: &LossConfig,
) -> Result<f64, EncoderError> {
    let r = rule.encode(&pair.rule_tokens)?;
    let t = text.encode(&pair.text_tokens)?;
    let cos = cosine_sim(r.as_slice(), t.as_slice())?;
    Ok(contrastive_loss(1.0 - cos, pair.label, cfg))
}

/// Mean batch loss, forward only.
pub fn batch_loss(
    rule: &EncoderParams,
    text: &EncoderParams,
    batch: &[PairExample],
    cfg: &LossConfig,
) -> Result<f64, EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let mut total = 0.0;
    for pair in batch {
        total += pair_loss(rule, text, pair, cfg)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean batch loss and its exact gradients for the rule and text encoders.
pub fn loss_and_grads(
    rule: &EncoderParams,
    text: &EncoderParams,
    batch: &[PairExample],
    cfg: &LossConfig,
) -> Result<(f64, EncoderGrads, EncoderGrads), EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut g_rule = EncoderGrads::zeros(rule.dim());
    let mut g_text = EncoderGrads::zeros(text.dim());
    let mut total = 0.0;
    for (index, pair) in batch.iter().enumerate() {
        let non_finite = || EncoderError::NonFinite { index };
        let fr = rule.forward(&pair.rule_tokens)?;
        let ft = text.forward(&pair.text_tokens)?;
        let cos = cosine_sim(&fr.out, &ft.out).map_err(|e| match e {
            EncoderError::ZeroNorm => non_finite(),
            other => other,
        })?;
        let distance = 1.0 - cos;
        let loss = contrastive_loss(distance, pair.label, cfg);
        if !loss.is_finite() {
            return Err(non_finite());
        }
        total += loss;
        // dL/dcos = -dL/dD
        let coef = -loss_slope(distance, pair.label, cfg) * scale;
        if coef == 0.0 {
            continue;
        }
        let d_r: Vec<f64> = cosine_grad(&fr.out, &ft.out, cos)
            .into_iter()
            .map(|g| g * coef)
            .collect();
        let d_t: Vec<f64> = cosine_grad(&ft.out, &fr.out, cos)
            .into_iter()
            .map(|g| g * coef)
            .collect();
        backprop(rule, &pair.rule_tokens, &fr, &d_r, &mut g_rule);
        backprop(text, &pair.text_tokens, &ft, &d_t, &mut g_text);
    }
    if !g_rule.is_finite() || !g_text.is_finite() {
        return Err(EncoderError::NonFinite {
            index: batch.len() - 1,
        });
    }
    Ok((total * scale, g_rule, g_text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(EncoderError::ZeroNorm)
        ));
    }

    #[test]
    fn loss_examples() {
        let cfg = LossConfig { margin: 0.5 };
        assert_eq!(contrastive_loss(0.0, 1, &cfg), 0.0);
        assert_eq!(contrastive_loss(0.5, 0, &cfg), 0.0);
        assert_eq!(contrastive_loss(1.7, 0, &cfg), 0.0);
        assert!((contrastive_loss(0.2, 0, &cfg) - 0.045).abs() < 1e-15);
        assert!((contrastive_loss(0.4, 1, &cfg) - 0.08).abs() < 1e-15);
    }

    fn encoders(seed: u64) -> (EncoderParams, EncoderParams) {
        let cfg = EncoderConfig {
            buckets: 32,
            dim: 6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            EncoderParams::init(cfg, &mut rng),
            EncoderParams::init(cfg, &mut rng),
        )
    }

    #[test]
    fn satisfied_margin_gives_zero_gradients() {
        let (r, t) = encoders(4);
        let cfg = LossConfig { margin: 1e-9 };
        let batch: Vec<PairExample> = (0..3)
            .map(|i| PairExample {
                rule_tokens: vec![0, 2 + i],
                text_tokens: vec![5 + i, 9],
                label: 0,
            })
            .collect();
        // With a tiny margin every negative pair sits at D >= m unless nearly parallel.
        for p in &batch {
            let d = 1.0
                - cosine_sim(
                    r.encode(&p.rule_tokens).unwrap().as_slice(),
                    t.encode(&p.text_tokens).unwrap().as_slice(),
                )
                .unwrap();
            assert!(d >= cfg.margin);
        }
        let (loss, gr, gt) = loss_and_grads(&r, &t, &batch, &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert!(gr.is_zero() && gt.is_zero());
        assert!(gr.emb_rows.is_empty());
    }

    #[test]
    fn only_touched_rows_receive_gradient() {
        let (r, t) = encoders(5);
        let batch = vec![PairExample {
            rule_tokens: vec![0, 3, 3],
            text_tokens: vec![7],
            label: 1,
        }];
        let (_, gr, gt) = loss_and_grads(&r, &t, &batch, &LossConfig::default()).unwrap();
        assert_eq!(gr.emb_rows.keys().copied().collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(gt.emb_rows.keys().copied().collect::<Vec<_>>(), vec![7]);
    }

    #[test]
    fn loss_matches_forward_only_path() {
        let (r, t) = encoders(6);
        let batch = vec![
            PairExample {
                rule_tokens: vec![0, 4],
                text_tokens: vec![8, 9],
                label: 1,
            },
            PairExample {
                rule_tokens: vec![0, 5, 1, 6],
                text_tokens: vec![10],
                label: 0,
            },
        ];
        let cfg = LossConfig { margin: 0.9 };
        let (loss, _, _) = loss_and_grads(&r, &t, &batch, &cfg).unwrap();
        assert!((loss - batch_loss(&r, &t, &batch, &cfg).unwrap()).abs() < 1e-15);
        assert!(matches!(
            loss_and_grads(&r, &t, &[], &cfg),
            Err(EncoderError::EmptyBatch)
        ));
    }
}
