mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbe_core::rules::{evaluate, parse, Expr, Provenance, Rule};

#[test]
fn evaluation_matches_token_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..500 {
        let oracle = support::random_rule(&mut rng, 3);
        let src = oracle.render(&mut rng);
        let rule =
            Rule::parse("r", &src, Provenance::Manual).unwrap_or_else(|e| panic!("{src}: {e}"));
        let (tokens, text) = support::random_text(&mut rng);
        assert_eq!(
            evaluate(&rule, &text),
            oracle.eval(&tokens),
            "case {i}: {src} on {text:?}"
        );
    }
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "hate", "women", "are", "vermin", "dumb", "people", "x9",
    ])
    .prop_map(str::to_owned)
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        prop::collection::vec(word(), 1..=3).prop_map(|ws| Expr::contains(&ws.join(" ")).unwrap()),
        prop::sample::select(vec![r"^rt\b", r"\d+", "a|b", r#"say "hi""#, r"back\\slash"])
            .prop_map(|p| Expr::regex(p).unwrap()),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::not),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::or(a, b)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn print_parse_round_trip(e in expr()) {
        let printed = e.to_string();
        let reparsed = parse(&printed).unwrap();
        prop_assert_eq!(&reparsed, &e);
        prop_assert_eq!(reparsed.to_string(), printed);
    }

    #[test]
    fn composition_laws(a in expr(), b in expr(), text in "[a-z ]{0,30}") {
        let fires = |e: &Expr| evaluate(&Rule::new("r", e.clone(), Provenance::Manual), &text);
        prop_assert_eq!(fires(&Expr::and(a.clone(), b.clone())), fires(&a) && fires(&b));
        prop_assert_eq!(fires(&Expr::or(a.clone(), b.clone())), fires(&a) || fires(&b));
        prop_assert_eq!(fires(&Expr::not(a.clone())), !fires(&a));
    }
}
