//! Cross-cutting grammar properties checked over randomly generated
//! valid grammars.

mod common;

use common::random_plain_grammar;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use netlang::induction::{induce, log_likelihood, InductionConfig};
use netlang::symbol::Layer;
use netlang::trace::Corpus;

#[test]
fn derivations_contain_only_terminals() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let g = random_plain_grammar(&mut rng, 3);
        for seed in 0..5u64 {
            let frontier = g.sample_derivation(seed).unwrap();
            for sym in &frontier {
                assert!(g.terminals.contains(sym), "non-terminal {sym} in frontier");
            }
        }
    }
}

#[test]
fn or_free_grammars_sample_seed_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    for _ in 0..60 {
        let g = random_plain_grammar(&mut rng, 0);
        let base = g.sample_derivation(0).unwrap();
        for seed in 1..100u64 {
            assert_eq!(g.sample_derivation(seed).unwrap(), base);
        }
        checked += 1;
    }
    assert_eq!(checked, 60);
}

#[test]
fn valid_grammars_export_deterministic_dot() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let g = random_plain_grammar(&mut rng, 3);
        assert!(g.validate().is_empty());
        let dot = g.export_dot().unwrap();
        assert_eq!(dot, g.export_dot().unwrap());
    }
}

#[test]
fn node_count_ignores_unreachable_terminals() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let g = random_plain_grammar(&mut rng, 2);
        let before = g.node_count();
        let mut padded = g.clone();
        padded.add_terminal("zz_unused");
        assert_eq!(padded.node_count(), before);
    }
}

/// Induction on random corpora: the posterior never decreases, the
/// loop halts, and every training path stays derivable after every
/// accepted fragment.
#[test]
fn induction_preserves_coverage_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..30 {
        let alphabet = ["a", "b", "c", "d", "e"];
        let n_records = 3 + (case % 6);
        let records: Vec<Vec<&str>> = (0..n_records)
            .map(|_| {
                let len = 1 + (rand::Rng::random_range(&mut rng, 0..6));
                (0..len)
                    .map(|_| alphabet[rand::Rng::random_range(&mut rng, 0..alphabet.len())])
                    .collect()
            })
            .collect();
        let refs: Vec<&[&str]> = records.iter().map(|r| r.as_slice()).collect();
        let corpus = Corpus::from_paths(&refs);
        let config = InductionConfig { alpha: 0.05, segment_cost: 0.05, ..Default::default() };
        let (g, log) = induce(&corpus, &config, Layer::Spatial).unwrap();
        assert!(g.validate().is_empty(), "case {case}: invalid final grammar");
        let mut last = f64::NEG_INFINITY;
        for row in &log {
            assert!(row.log_posterior >= last, "case {case}: posterior decreased");
            last = row.log_posterior;
        }
        assert!(
            log_likelihood(&g, &corpus).unwrap() > f64::NEG_INFINITY,
            "case {case}: a training path became underivable"
        );
        assert!(log.len() < config.max_iterations + 4);
    }
}
