use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::{Tokenizer, DEFAULT_BUCKETS};
use super::EncoderError;

pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Hashed vocabulary buckets; the embedding table has `buckets + 2` rows.
    pub buckets: u32,
    pub dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            buckets: DEFAULT_BUCKETS,
            dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.buckets)
    }

    pub fn rows(&self) -> usize {
        self.tokenizer().vocab_rows()
    }
}

/// A fixed-size sentence embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Trainable parameters of one encoder: mean-pooled token embeddings followed
/// by `tanh(W h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub(crate) config: EncoderConfig,
    /// `rows x dim`, row-major.
    pub(crate) emb: Vec<f64>,
    /// `dim x dim`, row-major, output index first.
    pub(crate) proj_w: Vec<f64>,
    pub(crate) proj_b: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    pub pooled: Vec<f64>,
    pub out: Vec<f64>,
}

impl EncoderParams {
    /// Seeded uniform(-0.05, 0.05) initialization of every parameter.
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Self {
        assert!(config.dim >= 2, "embedding width must be at least 2");
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))
                .collect()
        };
        let emb = draw(config.rows() * config.dim);
        let proj_w = draw(config.dim * config.dim);
        let proj_b = draw(config.dim);
        Self {
            config,
            emb,
            proj_w,
            proj_b,
        }
    }

    pub fn zeros(config: EncoderConfig) -> Self {
        Self {
            config,
            emb: vec![0.0; config.rows() * config.dim],
            proj_w: vec![0.0; config.dim * config.dim],
            proj_b: vec![0.0; config.dim],
        }
    }

    pub fn from_parts(
        config: EncoderConfig,
        emb: Vec<f64>,
        proj_w: Vec<f64>,
        proj_b: Vec<f64>,
    ) -> Result<Self, EncoderError> {
        let d = config.dim;
        if d < 2 || emb.len() != config.rows() * d || proj_w.len() != d * d || proj_b.len() != d {
            return Err(EncoderError::Shape(format!(
                "dim {d}, rows {}: emb {}, proj_w {}, proj_b {}",
                config.rows(),
                emb.len(),
                proj_w.len(),
                proj_b.len()
            )));
        }
        Ok(Self {
            config,
            emb,
            proj_w,
            proj_b,
        })
    }

    pub fn config(&self) -> EncoderConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.config.tokenizer()
    }

    pub fn embedding_row(&self, id: u32) -> &[f64] {
        let d = self.config.dim;
        &self.emb[id as usize * d..(id as usize + 1) * d]
    }

    pub fn proj_w(&self) -> &[f64] {
        &self.proj_w
    }

    pub fn proj_b(&self) -> &[f64] {
        &self.proj_b
    }

    /// Every tensor, in checkpoint order.
    pub fn tensors(&self) -> [&[f64]; 3] {
        [&self.emb, &self.proj_w, &self.proj_b]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.emb, &mut self.proj_w, &mut self.proj_b]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn quantize(&mut self) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = f64::from(*x as f32);
            }
        }
    }

    pub(crate) fn forward(&self, tokens: &[u32]) -> Result<Forward, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let d = self.config.dim;
        let rows = self.config.rows();
        let mut pooled = vec![0.0; d];
        for &t in tokens {
            if t as usize >= rows {
                return Err(EncoderError::TokenOutOfRange { token: t, rows });
            }
            for (p, e) in pooled.iter_mut().zip(self.embedding_row(t)) {
                *p += e;
            }
        }
        let n = tokens.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        let out = (0..d)
            .map(|i| {
                let row = &self.proj_w[i * d..(i + 1) * d];
                let z: f64 =
                    row.iter().zip(&pooled).map(|(w, h)| w * h).sum::<f64>() + self.proj_b[i];
                z.tanh()
            })
            .collect();
        Ok(Forward { pooled, out })
    }

    pub fn encode(&self, tokens: &[u32]) -> Result<Embedding, EncoderError> {
        Ok(Embedding(self.forward(tokens)?.out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderConfig {
        EncoderConfig {
            buckets: 16,
            dim: 4,
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = EncoderParams::init(small(), &mut ChaCha8Rng::seed_from_u64(3));
        let b = EncoderParams::init(small(), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a
            .tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.abs() <= INIT_RANGE)));
        assert_eq!(a.emb.len(), 18 * 4);
    }

    #[test]
    fn single_token_matches_closed_form() {
        let p = EncoderParams::init(small(), &mut ChaCha8Rng::seed_from_u64(1));
        let out = p.encode(&[5]).unwrap();
        let e = p.embedding_row(5);
        for i in 0..4 {
            let z: f64 = (0..4).map(|j| p.proj_w[i * 4 + j] * e[j]).sum::<f64>() + p.proj_b[i];
            assert_eq!(out.0[i], z.tanh());
        }
    }

    #[test]
    fn mean_pooling_ignores_order() {
        let p = EncoderParams::init(small(), &mut ChaCha8Rng::seed_from_u64(2));
        let a = p.encode(&[2, 7, 9, 7]).unwrap();
        let b = p.encode(&[7, 7, 9, 2]).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_give_tanh_bias() {
        let mut p = EncoderParams::zeros(small());
        p.proj_b = vec![0.5, -1.0, 0.0, 2.0];
        for tokens in [&[3u32][..], &[4, 5, 6]] {
            let out = p.encode(tokens).unwrap();
            assert_eq!(out.0, p.proj_b.iter().map(|b| b.tanh()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        let p = EncoderParams::zeros(small());
        assert!(matches!(p.encode(&[]), Err(EncoderError::EmptyInput)));
        assert!(matches!(
            p.encode(&[18]),
            Err(EncoderError::TokenOutOfRange { .. })
        ));
    }
}
