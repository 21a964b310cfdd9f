use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use rbe_core::corpus::{load_corpus, save_corpus, Corpus, Document, Split};
use rbe_core::encoder::{load_checkpoint, save_checkpoint, TrainedModel};
use rbe_core::evalkit::{confusion, metrics, Confusion, Metrics};
use rbe_core::exemplars::{select_exemplars, ExemplarMap};
use rbe_core::grounding::{
    calibrate_threshold, ExemplarIndex, Fallback, GroundingError, InferenceConfig, Prediction,
    Predictor, DEFAULT_K, DEFAULT_TAU,
};
use rbe_core::induce::{induce_ruleset, load_rationales};
use rbe_core::jsonl;
use rbe_core::rulefile::{load_ruleset, save_ruleset};
use rbe_core::rules::{apply_ruleset, Ruleset};
use rbe_core::synth::{make_synthetic, synth_report, SynthConfig};
use rbe_core::train::{train, TrainConfig};
use rbe_core::weak::{
    concat_key, concat_texts, distance_filter, k_grid, label_by_similarity, load_embedding_cache,
    rule_embedding_concat, rule_embedding_mean, save_embedding_cache, sweep_similarity,
    EmbeddingCache, RuleVector, Strategy, SweepPoint, WeakLabelSet,
};

use crate::exit::invalid;
use crate::service;

#[derive(Debug, Parser)]
#[command(
    name = "rbe",
    version,
    about = "Explainable text rules paired with a contrastively trained dual encoder"
)]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with a planted ruleset.
    Synth(SynthArgs),
    /// Build a ruleset from annotator rationales.
    Induce(InduceArgs),
    /// Pair every rule with exemplars it correctly fires on.
    SelectExemplars(SelectArgs),
    /// Train the dual encoder.
    Train(TrainArgs),
    /// Predict labels with a trained checkpoint.
    Label(LabelArgs),
    /// Predict with traces to fired rules and nearest exemplars.
    Ground(GroundArgs),
    /// Weak labels from rule exemplars and an embedding cache.
    WeakLabel(WeakLabelArgs),
    /// Fill an embedding cache with a checkpoint's text encoder.
    Embed(EmbedArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Weak-label size and quality over a grid of thresholds.
    Sweep(SweepArgs),
    /// Serve the ruleset, predictions and weak-label previews over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 600)]
    pub train: usize,
    #[arg(long, default_value_t = 200)]
    pub val: usize,
    #[arg(long, default_value_t = 400)]
    pub test: usize,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InduceArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub rationales: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub top_n: usize,
    /// Minimum number of rationales an n-gram must occur in.
    #[arg(long, default_value_t = 1)]
    pub min_df: usize,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub rules: PathBuf,
    /// Exemplars per rule.
    #[arg(short, long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Ruleset with exemplar ids.
    #[arg(long)]
    pub rules: PathBuf,
    /// JSON training config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub buckets: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for model.bin, model.json, history.jsonl and metrics.json.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FallbackArg {
    Nearest,
    Random,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Decision threshold; calibrated on the val split when omitted.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value = "nearest")]
    pub fallback: FallbackArg,
    #[arg(long, default_value_t = 0)]
    pub fallback_seed: u64,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Only documents of this split; all documents when omitted.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub split: Option<Split>,
    /// Ground one scratch text and print the trace instead of writing a file.
    #[arg(long, conflicts_with = "out")]
    pub text: Option<String>,
    /// Nearest exemplars per trace.
    #[arg(short, long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(short, long, required_unless_present = "text")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Mean,
    Concat,
    Distance,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Mean => Strategy::Mean,
            StrategyArg::Concat => Strategy::Concat,
            StrategyArg::Distance => Strategy::Distance,
        }
    }
}

#[derive(Debug, Args)]
pub struct WeakLabelArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(short, long, allow_hyphen_values = true)]
    pub k: f64,
    /// Average distance over all cover pairs instead of id-order neighbours.
    #[arg(long)]
    pub all_pairs: bool,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also embed each rule's concatenated exemplars.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions JSONL of {"id","pred"} records.
    #[arg(long)]
    pub pred: PathBuf,
    /// Corpus with gold labels.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long)]
    pub all_pairs: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding corpus.jsonl, rules.jsonl, model.bin and optionally cache.jsonl.
    #[arg(long)]
    pub state_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub tau: Option<f64>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Induce(a) => induce(a),
        Command::SelectExemplars(a) => select(a),
        Command::Train(a) => train_cmd(a),
        Command::Label(a) => label(a),
        Command::Ground(a) => ground(a),
        Command::WeakLabel(a) => weak_label(a),
        Command::Embed(a) => embed(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Serve(a) => serve(a),
    }
}

pub fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(invalid(format!("{} does not exist", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let s = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    ensure_parent(path)?;
    Ok(jsonl::write(path, records)?)
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    load_corpus(existing(path)?).with_context(|| format!("corpus {}", path.display()))
}

pub fn read_rules(path: &Path) -> Result<(Ruleset, ExemplarMap)> {
    load_ruleset(existing(path)?).with_context(|| format!("ruleset {}", path.display()))
}

pub fn read_model(path: &Path) -> Result<TrainedModel> {
    let (model, manifest) = load_checkpoint(existing(path)?)
        .with_context(|| format!("checkpoint {}", path.display()))?;
    if manifest.is_none() {
        warn!(
            "no manifest next to {}, checkpoint not verified",
            path.display()
        );
    }
    Ok(model)
}

fn docs_in(corpus: &Corpus, split: Option<Split>) -> Vec<&Document> {
    corpus
        .docs()
        .iter()
        .filter(|d| split.is_none_or(|s| d.split == s))
        .collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let s = make_synthetic(&cfg);
    fs::create_dir_all(&a.out)?;
    save_corpus(&a.out.join("corpus.jsonl"), &s.corpus)?;
    save_ruleset(&a.out.join("rules.jsonl"), &s.ruleset, &ExemplarMap::new())?;
    write_jsonl(&a.out.join("rationales.jsonl"), &s.rationales)?;
    let report = BTreeMap::from([
        ("train", synth_report(&s, Split::Train)),
        ("val", synth_report(&s, Split::Val)),
        ("test", synth_report(&s, Split::Test)),
    ]);
    write_json(&a.out.join("report.json"), &report)?;
    info!(
        "wrote {} documents and {} rules to {}",
        s.corpus.len(),
        s.ruleset.len(),
        a.out.display()
    );
    Ok(())
}

fn induce(a: InduceArgs) -> Result<()> {
    if a.top_n == 0 {
        return Err(invalid("--top-n must be at least 1"));
    }
    let corpus = read_corpus(&a.corpus)?;
    let rationales = load_rationales(existing(&a.rationales)?)?;
    let rs = induce_ruleset(&rationales, &corpus, a.top_n, a.min_df)?;
    ensure_parent(&a.out)?;
    save_ruleset(&a.out, &rs, &ExemplarMap::new())?;
    info!(
        "induced {} rules from {} rationales",
        rs.len(),
        rationales.len()
    );
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    if a.n == 0 {
        return Err(invalid("-n must be at least 1"));
    }
    let corpus = read_corpus(&a.corpus)?;
    let (rs, _) = read_rules(&a.rules)?;
    let emap = select_exemplars(&rs, &corpus, a.n, a.seed);
    ensure_parent(&a.out)?;
    save_ruleset(&a.out, &rs, &emap)?;
    info!(
        "{} of {} rules received {} exemplars in total",
        emap.len(),
        rs.len(),
        emap.exemplar_count()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainMetrics<'a> {
    best_epoch: usize,
    best_step: u64,
    total_steps: u64,
    steps_taken: usize,
    tau: f64,
    val_macro_f1: Option<f64>,
    checkpoint_sha256: &'a str,
    epochs: &'a [rbe_core::train::EpochRecord],
    config: &'a TrainConfig,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(existing(p)?)?)
            .map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($f:ident => $field:ident),*) => { $(if let Some(v) = a.$f { cfg.$field = v; })* };
    }
    set!(lr => lr, epochs => max_epochs, batch_size => batch_size, patience => patience, weight_decay => weight_decay, dim => dim, buckets => buckets, seed => seed);
    cfg.validate()?;
    let corpus = read_corpus(&a.corpus)?;
    let (rs, emap) = read_rules(&a.rules)?;
    emap.validate(&rs, &corpus)?;
    let out = train(&corpus, &rs, &emap, &cfg)?;
    fs::create_dir_all(&a.out)?;
    let model_path = a.out.join("model.bin");
    save_checkpoint(&model_path, &out.model, cfg.seed, out.best_step)?;
    write_jsonl(&a.out.join("history.jsonl"), &out.history)?;
    let val = out.best_val();
    write_json(
        &a.out.join("metrics.json"),
        &TrainMetrics {
            best_epoch: out.best_epoch,
            best_step: out.best_step,
            total_steps: out.total_steps,
            steps_taken: out.history.len(),
            tau: val.map_or(DEFAULT_TAU, |c| c.tau),
            val_macro_f1: val.map(|c| c.macro_f1),
            checkpoint_sha256: out.model.digest(),
            epochs: &out.epochs,
            config: &cfg,
        },
    )?;
    info!(
        "best epoch {} written to {}",
        out.best_epoch,
        model_path.display()
    );
    Ok(())
}

/// Loaded state for scoring documents with one checkpoint.
pub struct Loaded {
    pub corpus: Corpus,
    pub ruleset: Ruleset,
    pub emap: ExemplarMap,
    pub model: TrainedModel,
    pub index: ExemplarIndex,
    pub infer: InferenceConfig,
}

impl Loaded {
    pub fn open(
        corpus: &Path,
        rules: &Path,
        checkpoint: &Path,
        fallback: Fallback,
    ) -> Result<Self> {
        let corpus = read_corpus(corpus)?;
        let (ruleset, emap) = read_rules(rules)?;
        emap.validate(&ruleset, &corpus)?;
        let model = read_model(checkpoint)?;
        let mut infer = InferenceConfig {
            fallback,
            ..Default::default()
        };
        infer.input.tokenizer = model.encoders().tokenizer();
        let index = ExemplarIndex::build(&model, &emap, &corpus, &infer.input)?;
        Ok(Self {
            corpus,
            ruleset,
            emap,
            model,
            index,
            infer,
        })
    }

    pub fn predictor(&self) -> Result<Predictor<'_>, GroundingError> {
        Predictor::new(
            &self.model,
            &self.ruleset,
            &self.emap,
            &self.corpus,
            &self.index,
            self.infer,
        )
    }

    /// `explicit`, else the threshold calibrated on the val split, else the default.
    pub fn resolve_tau(&self, explicit: Option<f64>) -> Result<f64> {
        if let Some(t) = explicit {
            if !(-1.0..=1.0).contains(&t) {
                return Err(invalid(format!("--tau {t} outside [-1, 1]")));
            }
            return Ok(t);
        }
        let scored = self
            .predictor()?
            .score_labeled(self.corpus.split_docs(Split::Val))?;
        match calibrate_threshold(&scored) {
            Ok(c) => {
                info!(
                    "calibrated tau {:.4} (val macro-F1 {:.4})",
                    c.tau, c.macro_f1
                );
                Ok(c.tau)
            }
            Err(GroundingError::SingleClass) => {
                info!("val split cannot calibrate a threshold, using {DEFAULT_TAU}");
                Ok(DEFAULT_TAU)
            }
            Err(e) => Err(e.into()),
        }
    }
}

fn open_model(m: &ModelArgs) -> Result<Loaded> {
    let fallback = match m.fallback {
        FallbackArg::Nearest => Fallback::Nearest,
        FallbackArg::Random => Fallback::Random {
            seed: m.fallback_seed,
        },
    };
    Loaded::open(&m.corpus, &m.rules, &m.checkpoint, fallback)
}

fn label(a: LabelArgs) -> Result<()> {
    let loaded = open_model(&a.model)?;
    let tau = loaded.resolve_tau(a.model.tau)?;
    let predictor = loaded.predictor()?;
    let preds = docs_in(&loaded.corpus, a.split)
        .into_iter()
        .map(|d| {
            let (pred, score) = predictor.predict(d, tau)?;
            Ok(Prediction {
                id: d.id.clone(),
                pred,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&a.out, &preds)?;
    info!("labeled {} documents at tau {tau:.4}", preds.len());
    Ok(())
}

fn ground(a: GroundArgs) -> Result<()> {
    let loaded = open_model(&a.model)?;
    let tau = loaded.resolve_tau(a.model.tau)?;
    let predictor = loaded.predictor()?;
    if let Some(text) = &a.text {
        let trace = predictor.ground("scratch", text, tau, a.k)?;
        println!("{}", serde_json::to_string_pretty(&trace)?);
        return Ok(());
    }
    let traces = docs_in(&loaded.corpus, a.split)
        .into_iter()
        .map(|d| Ok(predictor.ground(&d.id, &d.text, tau, a.k)?))
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(
        a.out
            .as_deref()
            .expect("clap requires --out without --text"),
        &traces,
    )?;
    Ok(())
}

pub fn rule_vectors(
    strategy: Strategy,
    rs: &Ruleset,
    emap: &ExemplarMap,
    corpus: &Corpus,
    cache: &EmbeddingCache,
) -> Result<Vec<RuleVector>> {
    let mut out = Vec::new();
    for rule in rs.iter().filter(|r| emap.contains_rule(&r.id)) {
        out.push(match strategy {
            Strategy::Concat => rule_embedding_concat(&rule.id, emap, corpus, cache)?,
            _ => rule_embedding_mean(&rule.id, emap, cache)?,
        });
    }
    if out.is_empty() {
        return Err(invalid("no rule has exemplars"));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct WeakSummary {
    pub strategy: Strategy,
    pub k: f64,
    pub total: usize,
    pub positives: usize,
    pub rule_positives: usize,
    pub eliminated: Vec<String>,
    pub metrics: Option<Metrics>,
}

/// Which weak labeler to run and at what threshold.
#[derive(Debug, Clone, Copy)]
pub struct WeakQuery {
    pub strategy: Strategy,
    pub k: f64,
    /// Distance only: average over all cover pairs.
    pub all_pairs: bool,
}

/// Weak labels over `targets` and a summary comparing them with plain rule votes.
pub fn weak_labels(
    WeakQuery {
        strategy,
        k,
        all_pairs,
    }: WeakQuery,
    rs: &Ruleset,
    emap: &ExemplarMap,
    corpus: &Corpus,
    cache: &EmbeddingCache,
    targets: &[&Document],
) -> Result<(WeakLabelSet, WeakSummary)> {
    let ids = targets.iter().map(|d| d.id.as_str());
    let target_corpus = Corpus::new(targets.iter().map(|d| (*d).clone()).collect())?;
    let application = apply_ruleset(rs, &target_corpus);
    let rule_positives = application
        .fired
        .iter()
        .filter(|f| !f.rule_ids.is_empty())
        .count();
    let (set, eliminated) = match strategy {
        Strategy::Distance => {
            let out = distance_filter(&application.cover_sets, ids, cache, k, all_pairs)?;
            let gone = out
                .rules
                .iter()
                .filter(|r| r.eliminated)
                .map(|r| r.rule_id.clone())
                .collect();
            (out.labels, gone)
        }
        s => (
            label_by_similarity(s, &rule_vectors(s, rs, emap, corpus, cache)?, ids, cache, k)?,
            Vec::new(),
        ),
    };
    let summary = WeakSummary {
        strategy,
        k,
        total: set.labels.len(),
        positives: set.positives(),
        rule_positives,
        eliminated,
        metrics: set.score(corpus),
    };
    Ok((set, summary))
}

fn weak_label(a: WeakLabelArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let (rs, emap) = read_rules(&a.rules)?;
    let cache = load_embedding_cache(existing(&a.cache)?)?;
    let targets = docs_in(&corpus, a.split);
    let (set, summary) = weak_labels(
        WeakQuery {
            strategy: a.strategy.into(),
            k: a.k,
            all_pairs: a.all_pairs,
        },
        &rs,
        &emap,
        &corpus,
        &cache,
        &targets,
    )?;
    write_jsonl(&a.out, &set.to_documents(&corpus)?)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let model = read_model(&a.checkpoint)?;
    let tokenizer = model.encoders().tokenizer();
    let mut cache = EmbeddingCache::new();
    for doc in corpus.docs() {
        cache.insert(
            doc.id.clone(),
            model.text().encode(&tokenizer.tokenize(&doc.text))?.0,
        );
    }
    if let Some(rules) = &a.rules {
        let (rs, emap) = read_rules(rules)?;
        for rule in rs.iter().filter(|r| emap.contains_rule(&r.id)) {
            let texts = concat_texts(&rule.id, &emap, &corpus)?;
            let vec = model
                .text()
                .encode(&tokenizer.tokenize(&texts.join(" ")))?
                .0;
            cache.insert(concat_key(&texts), vec);
        }
    }
    ensure_parent(&a.out)?;
    save_embedding_cache(&a.out, &cache)?;
    info!("cached {} embeddings", cache.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    metrics: Metrics,
    confusion: Confusion,
}

/// The fields of a prediction record that scoring needs; `score` is optional.
#[derive(Deserialize)]
struct PredRecord {
    id: String,
    pred: u8,
}

fn eval(a: EvalArgs) -> Result<()> {
    let corpus = read_corpus(&a.gold)?;
    let preds: BTreeMap<String, u8> = jsonl::read::<PredRecord>(existing(&a.pred)?)?
        .into_iter()
        .map(|(_, p)| (p.id, p.pred))
        .collect();
    let golds: BTreeMap<String, u8> = docs_in(&corpus, a.split)
        .into_iter()
        .filter_map(|d| d.label.map(|l| (d.id.clone(), l)))
        .collect();
    let c = confusion(&preds, &golds)?;
    let out = EvalOutput {
        metrics: metrics(&c),
        confusion: c,
    };
    match &a.out {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    if a.points == 0 {
        return Err(invalid("--points must be at least 1"));
    }
    let corpus = read_corpus(&a.corpus)?;
    let (rs, emap) = read_rules(&a.rules)?;
    let cache = load_embedding_cache(existing(&a.cache)?)?;
    let strategy: Strategy = a.strategy.into();
    let (lo, hi) = match strategy {
        Strategy::Distance => (a.lo.unwrap_or(0.0), a.hi.unwrap_or(2.0)),
        _ => (a.lo.unwrap_or(-1.0), a.hi.unwrap_or(1.0)),
    };
    let grid = k_grid(lo, hi, a.points);
    let points: Vec<SweepPoint> = match strategy {
        Strategy::Distance => {
            let targets: Vec<&Document> = corpus.docs().iter().collect();
            grid.iter()
                .map(|&k| {
                    let (set, _) = weak_labels(
                        WeakQuery {
                            strategy,
                            k,
                            all_pairs: a.all_pairs,
                        },
                        &rs,
                        &emap,
                        &corpus,
                        &cache,
                        &targets,
                    )?;
                    Ok(SweepPoint {
                        k,
                        positives: set.positives(),
                        metrics: set.score(&corpus),
                    })
                })
                .collect::<Result<_>>()?
        }
        s => sweep_similarity(
            s,
            &rule_vectors(s, &rs, &emap, &corpus, &cache)?,
            &corpus,
            &cache,
            &grid,
        )?,
    };
    write_jsonl(&a.out, &points)?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let state = service::AppState::open(&a.state_dir, a.tau)?;
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        info!("listening on http://{addr}");
        axum::serve(listener, service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
