//! Supervised training of the dual encoder with AdamW, a warmup-then-cosine
//! learning rate, and early stopping on validation macro-F1.

mod adamw;
mod schedule;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adamw::{adamw_update, AdamWConfig, EncoderOptimizer};
pub use schedule::{lr_at, warmup_steps};

use crate::corpus::{Corpus, Split};
use crate::encoder::{
    loss_and_grads, DualEncoder, EncoderConfig, EncoderError, LossConfig, PairExample, TrainedModel,
};
use crate::exemplars::{build_rule_input, ExemplarError, ExemplarMap, InputConfig};
use crate::grounding::{
    calibrate_threshold, Calibration, ExemplarIndex, Fallback, GroundingError, InferenceConfig,
    Predictor,
};
use crate::rules::Ruleset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_frac: f64,
    pub margin: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dim: usize,
    pub buckets: u32,
    pub max_len: usize,
    pub fallback_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        let enc = EncoderConfig::default();
        let input = InputConfig::default();
        Self {
            lr: 2e-5,
            weight_decay: adam.weight_decay,
            batch_size: 8,
            max_epochs: 10,
            warmup_frac: 0.1,
            margin: 0.5,
            seed: 0,
            patience: 3,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            dim: enc.dim,
            buckets: enc.buckets,
            max_len: input.max_len,
            fallback_count: input.fallback_count,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup_frac must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.dim == 0 || self.buckets == 0 {
            return bad("dim and buckets must be positive");
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            buckets: self.buckets,
            dim: self.dim,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn input(&self) -> InputConfig {
        InputConfig {
            tokenizer: self.encoder().tokenizer(),
            fallback_count: self.fallback_count,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("train split has no labeled documents")]
    EmptyTrain,
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
    #[error("step {step}: {source}")]
    Encoder {
        step: u64,
        #[source]
        source: EncoderError,
    },
    #[error("step {step}: parameter update produced a non-finite value")]
    NonFinite { step: u64 },
    #[error("validation: {0}")]
    Validation(#[from] GroundingError),
}

/// History JSONL record; `lr` is the rate the step was taken with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the untrained initialization.
    pub epoch: usize,
    pub mean_loss: Option<f64>,
    pub val: Option<Calibration>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The checkpoint with the best validation macro-F1, or the last one
    /// when the validation split cannot be scored.
    pub model: TrainedModel,
    pub best_epoch: usize,
    /// Optimizer steps taken before the best checkpoint was recorded.
    pub best_step: u64,
    pub history: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub total_steps: u64,
}

impl TrainOutcome {
    pub fn best_val(&self) -> Option<Calibration> {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .and_then(|e| e.val)
    }
}

/// Validation macro-F1 with a threshold calibrated on the same split, or
/// `None` when the split lacks one of the classes.
pub fn validate_model(
    model: &TrainedModel,
    ruleset: &Ruleset,
    emap: &ExemplarMap,
    corpus: &Corpus,
    split: Split,
    cfg: &InferenceConfig,
) -> Result<Option<Calibration>, GroundingError> {
    let index = ExemplarIndex::build(model, emap, corpus, &cfg.input)?;
    let predictor = Predictor::new(model, ruleset, emap, corpus, &index, *cfg)?;
    let scored = predictor.score_labeled(corpus.split_docs(split))?;
    match calibrate_threshold(&scored) {
        Ok(c) => Ok(Some(c)),
        Err(GroundingError::SingleClass) => Ok(None),
        Err(e) => Err(e),
    }
}

struct Instance<'a> {
    id: &'a str,
    tokens: Vec<u32>,
    fired: Vec<String>,
    label: u8,
}

pub fn train(
    corpus: &Corpus,
    ruleset: &Ruleset,
    emap: &ExemplarMap,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if emap.is_empty() {
        return Err(ExemplarError::Empty.into());
    }
    let tokenizer = cfg.encoder().tokenizer();
    let instances: Vec<Instance> = corpus
        .split_docs(Split::Train)
        .filter_map(|d| {
            d.label.map(|label| Instance {
                id: &d.id,
                tokens: tokenizer.tokenize(&d.text),
                fired: ruleset.fired_ids(&d.text),
                label,
            })
        })
        .collect();
    if instances.is_empty() {
        return Err(TrainError::EmptyTrain);
    }

    let input_cfg = cfg.input();
    let infer_cfg = InferenceConfig {
        input: input_cfg,
        fallback: Fallback::Nearest,
    };
    let loss_cfg = LossConfig { margin: cfg.margin };
    let adam = cfg.adamw();
    let batches_per_epoch = instances.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = cfg.max_epochs as u64 * batches_per_epoch;

    let mut enc = DualEncoder::init(cfg.encoder(), cfg.seed);
    let mut opt_rule = EncoderOptimizer::new(&enc.rule);
    let mut opt_text = EncoderOptimizer::new(&enc.text);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // keep the data stream apart from the initialization stream
    rng.set_stream(1);

    let initial = TrainedModel::new(enc.clone());
    let val0 = validate_model(&initial, ruleset, emap, corpus, Split::Val, &infer_cfg)?;
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        mean_loss: None,
        val: val0,
    }];
    let mut best = (initial, 0usize, 0u64, val0.map(|c| c.macro_f1));
    let mut history = Vec::with_capacity(total_steps as usize);
    let mut step: u64 = 0;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..instances.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let inst = &instances[i];
                let input =
                    build_rule_input(inst.id, &inst.fired, emap, corpus, &input_cfg, &mut rng)?;
                batch.push(PairExample {
                    rule_tokens: input.tokens,
                    text_tokens: inst.tokens.clone(),
                    label: inst.label,
                });
            }
            let (loss, g_rule, g_text) = loss_and_grads(&enc.rule, &enc.text, &batch, &loss_cfg)
                .map_err(|source| TrainError::Encoder { step, source })?;
            let lr = lr_at(step, total_steps, cfg.lr, cfg.warmup_frac);
            let t = step + 1;
            let ok_r = opt_rule.step(&mut enc.rule, &g_rule, t, lr, &adam);
            let ok_t = opt_text.step(&mut enc.text, &g_text, t, lr, &adam);
            if !(ok_r && ok_t) {
                return Err(TrainError::NonFinite { step });
            }
            history.push(StepRecord { step, loss, lr });
            epoch_loss += loss;
            step += 1;
        }
        let mean_loss = epoch_loss / batches_per_epoch as f64;
        let current = TrainedModel::new(enc.clone());
        let val = validate_model(&current, ruleset, emap, corpus, Split::Val, &infer_cfg)?;
        epochs.push(EpochRecord {
            epoch,
            mean_loss: Some(mean_loss),
            val,
        });
        info!(
            "epoch {epoch}: loss {mean_loss:.5}, val macro-F1 {}",
            val.map_or("n/a".to_owned(), |c| format!(
                "{:.4} at tau {:.4}",
                c.macro_f1, c.tau
            ))
        );
        match (val.map(|c| c.macro_f1), best.3) {
            (Some(f), Some(b)) if f > b => {
                best = (current, epoch, step, Some(f));
                stale = 0;
            }
            (Some(_), Some(_)) => {
                stale += 1;
                if stale >= cfg.patience {
                    debug!("no improvement for {stale} epochs, stopping");
                    break;
                }
            }
            // without a usable validation split the latest model is kept
            _ => best = (current, epoch, step, None),
        }
    }

    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        best_step: best.2,
        history,
        epochs,
        total_steps,
    })
}
