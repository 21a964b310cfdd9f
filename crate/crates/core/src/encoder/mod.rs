//! Hashed tokenizer, mean-pooling encoder, contrastive loss with analytic
//! gradients, and the checkpoint format.

mod checkpoint;
mod loss;
mod params;
mod tokenizer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, manifest_path, save_checkpoint, Manifest, TrainedModel, MAGIC,
};
pub use loss::{
    batch_loss, contrastive_loss, cosine_sim, loss_and_grads, pair_loss, EncoderGrads, LossConfig,
    PairExample,
};
pub use params::{Embedding, EncoderConfig, EncoderParams, INIT_RANGE};
pub use tokenizer::{Tokenizer, CLS, DEFAULT_BUCKETS, RESERVED, SEP};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cannot encode an empty token sequence")]
    EmptyInput,
    #[error("empty batch")]
    EmptyBatch,
    #[error("token id {token} outside embedding table of {rows} rows")]
    TokenOutOfRange { token: u32, rows: usize },
    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,
    #[error("non-finite value at batch index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The rule encoder and the text encoder, independently parameterized.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub rule: EncoderParams,
    pub text: EncoderParams,
}

impl DualEncoder {
    /// Independent seeded initializations: the rule encoder draws first from
    /// one stream, the text encoder continues it.
    pub fn init(config: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rule = EncoderParams::init(config, &mut rng);
        let text = EncoderParams::init(config, &mut rng);
        Self { rule, text }
    }

    pub fn config(&self) -> EncoderConfig {
        self.rule.config()
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.rule.tokenizer()
    }
}
