use std::collections::BTreeMap;
use std::time::Instant;

use rbe_core::corpus::Split;
use rbe_core::evalkit::{confusion, metrics};
use rbe_core::exemplars::select_exemplars;
use rbe_core::grounding::{ExemplarIndex, InferenceConfig, Predictor};
use rbe_core::synth::{make_synthetic, synth_report, SynthConfig};
use rbe_core::train::{train, TrainConfig};

#[test]
fn trained_model_beats_planted_rules() {
    let started = Instant::now();
    let s = make_synthetic(&SynthConfig::default());
    let rules_only = synth_report(&s, Split::Test).rules_only_macro_f1;
    assert!(rules_only <= 0.8);

    let emap = select_exemplars(&s.ruleset, &s.corpus, 2, 0);
    let cfg = TrainConfig {
        lr: 5e-3,
        ..Default::default()
    };
    let out = train(&s.corpus, &s.ruleset, &emap, &cfg).unwrap();
    let tau = out.best_val().unwrap().tau;

    let infer = InferenceConfig::default();
    let index = ExemplarIndex::build(&out.model, &emap, &s.corpus, &infer.input).unwrap();
    let predictor =
        Predictor::new(&out.model, &s.ruleset, &emap, &s.corpus, &index, infer).unwrap();
    let mut preds = BTreeMap::new();
    let mut golds = BTreeMap::new();
    for doc in s.corpus.split_docs(Split::Test) {
        preds.insert(doc.id.clone(), predictor.predict(doc, tau).unwrap().0);
        golds.insert(doc.id.clone(), doc.label.unwrap());
    }
    let m = metrics(&confusion(&preds, &golds).unwrap());
    eprintln!(
        "rules-only {rules_only:.4}, trained {:.4}, best epoch {}, {:?}",
        m.macro_f1,
        out.best_epoch,
        started.elapsed()
    );
    assert!(m.macro_f1 >= rules_only + 0.10);
}
