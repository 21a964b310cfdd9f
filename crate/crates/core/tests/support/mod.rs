//! Independent oracles shared by the integration tests and the acceptance
//! runner.

#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbe_core::encoder::{
    batch_loss, loss_and_grads, EncoderConfig, EncoderGrads, EncoderParams, LossConfig, PairExample,
};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

pub fn random_params<R: Rng>(cfg: EncoderConfig, range: f64, rng: &mut R) -> EncoderParams {
    let mut draw =
        |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-range..range)).collect() };
    let emb = draw(cfg.rows() * cfg.dim);
    let w = draw(cfg.dim * cfg.dim);
    let b = draw(cfg.dim);
    EncoderParams::from_parts(cfg, emb, w, b).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub batch: usize,
}

fn analytic(grads: &EncoderGrads, tensor: usize, i: usize, dim: usize) -> f64 {
    match tensor {
        0 => grads
            .emb_rows
            .get(&((i / dim) as u32))
            .map_or(0.0, |r| r[i % dim]),
        1 => grads.proj_w[i],
        _ => grads.proj_b[i],
    }
}

fn with_value(p: &EncoderParams, tensor: usize, i: usize, value: f64) -> EncoderParams {
    let mut parts: Vec<Vec<f64>> = p.tensors().iter().map(|t| t.to_vec()).collect();
    parts[tensor][i] = value;
    let b = parts.pop().unwrap();
    let w = parts.pop().unwrap();
    let e = parts.pop().unwrap();
    EncoderParams::from_parts(p.config(), e, w, b).unwrap()
}

/// Compares the analytic gradient of every parameter of both encoders with a
/// central difference, on one seeded configuration with `dim = 8` and a batch
/// of 1 to 4 pairs.
pub fn grad_check(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EncoderConfig { buckets: 6, dim: 8 };
    let rule = random_params(cfg, 0.5, &mut rng);
    let text = random_params(cfg, 0.5, &mut rng);
    let loss_cfg = LossConfig {
        margin: rng.random_range(0.25..1.5),
    };
    let n = rng.random_range(1..=4);
    let rows = cfg.rows() as u32;
    let seq = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        (0..rng.random_range(1..=6))
            .map(|_| rng.random_range(0..rows))
            .collect()
    };
    let batch: Vec<PairExample> = (0..n)
        .map(|_| PairExample {
            rule_tokens: seq(&mut rng),
            text_tokens: seq(&mut rng),
            label: rng.random_range(0..=1),
        })
        .collect();
    let (_, g_rule, g_text) = loss_and_grads(&rule, &text, &batch, &loss_cfg).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for side in 0..2 {
        let (params, grads) = if side == 0 {
            (&rule, &g_rule)
        } else {
            (&text, &g_text)
        };
        for tensor in 0..3 {
            for i in 0..params.tensors()[tensor].len() {
                let x = params.tensors()[tensor][i];
                let loss = |v: f64| {
                    let p = with_value(params, tensor, i, v);
                    let (r, t) = if side == 0 { (&p, &text) } else { (&rule, &p) };
                    batch_loss(r, t, &batch, &loss_cfg).unwrap()
                };
                let numeric = (loss(x + FD_STEP) - loss(x - FD_STEP)) / (2.0 * FD_STEP);
                let a = analytic(grads, tensor, i, cfg.dim);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    GradReport {
        max_rel_err: worst,
        checked,
        batch: n,
    }
}

/// A rule over known tokens, evaluated by scanning token windows.
#[derive(Debug, Clone)]
pub enum OracleRule {
    Contains(Vec<String>),
    Not(Box<OracleRule>),
    And(Vec<OracleRule>),
    Or(Vec<OracleRule>),
}

impl OracleRule {
    pub fn eval(&self, tokens: &[String]) -> bool {
        match self {
            OracleRule::Contains(g) => (0..tokens.len())
                .any(|i| i + g.len() <= tokens.len() && tokens[i..i + g.len()] == g[..]),
            OracleRule::Not(e) => !e.eval(tokens),
            OracleRule::And(xs) => xs.iter().all(|x| x.eval(tokens)),
            OracleRule::Or(xs) => xs.iter().any(|x| x.eval(tokens)),
        }
    }

    /// DSL source with random keyword case and quote style.
    pub fn render<R: Rng>(&self, rng: &mut R) -> String {
        let kw = |rng: &mut R, k: &str| {
            if rng.random_bool(0.5) {
                k.to_owned()
            } else {
                k.to_lowercase()
            }
        };
        match self {
            OracleRule::Contains(g) => {
                let shown: Vec<String> = g
                    .iter()
                    .map(|w| {
                        if rng.random_bool(0.3) {
                            w.to_uppercase()
                        } else {
                            w.clone()
                        }
                    })
                    .collect();
                if rng.random_bool(0.5) {
                    format!("contains(\"{}\")", shown.join(" "))
                } else {
                    format!("contains('{}')", shown.join(" "))
                }
            }
            OracleRule::Not(e) => format!("{} ({})", kw(rng, "NOT"), e.render(rng)),
            OracleRule::And(xs) | OracleRule::Or(xs) => {
                let op = if matches!(self, OracleRule::And(_)) {
                    "AND"
                } else {
                    "OR"
                };
                let parts: Vec<String> =
                    xs.iter().map(|x| format!("({})", x.render(rng))).collect();
                parts.join(&format!(" {} ", kw(rng, op)))
            }
        }
    }
}

pub const VOCAB: &[&str] = &[
    "hate", "women", "are", "vermin", "i", "love", "dumb", "people", "x1", "ok",
];

pub fn random_rule<R: Rng>(rng: &mut R, depth: usize) -> OracleRule {
    if depth == 0 || rng.random_bool(0.35) {
        let n = rng.random_range(1..=3);
        return OracleRule::Contains(
            (0..n)
                .map(|_| (*VOCAB.choose(rng).unwrap()).to_owned())
                .collect(),
        );
    }
    match rng.random_range(0..3) {
        0 => OracleRule::Not(Box::new(random_rule(rng, depth - 1))),
        k => {
            let xs = (0..rng.random_range(2..=3))
                .map(|_| random_rule(rng, depth - 1))
                .collect();
            if k == 1 {
                OracleRule::And(xs)
            } else {
                OracleRule::Or(xs)
            }
        }
    }
}

/// Lowercase tokens and a rendering of them with random case and punctuation.
pub fn random_text<R: Rng>(rng: &mut R) -> (Vec<String>, String) {
    const SEPS: &[&str] = &[" ", "  ", ", ", "!! ", " -- ", "...", "\n", "'"];
    let n = rng.random_range(0..=12);
    let tokens: Vec<String> = (0..n)
        .map(|_| (*VOCAB.choose(rng).unwrap()).to_owned())
        .collect();
    let mut text = String::new();
    if rng.random_bool(0.3) {
        text.push('#');
    }
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            text.push_str(SEPS.choose(rng).unwrap());
        }
        if rng.random_bool(0.3) {
            text.push_str(&t.to_uppercase());
        } else {
            text.push_str(t);
        }
    }
    if rng.random_bool(0.3) {
        text.push('?');
    }
    (tokens, text)
}
