use admgeo_core::metrics::{
    metric_bin, perplexity_over, predict_action, BinLabel, MetricKind, DEFAULT_PERPLEXITY_WINDOW,
};
use admgeo_core::{ActionId, ScoreVector};
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.0f64..10.0).prop_filter("non-zero sum", |s| s.iter().sum::<f64>() > 1e-6)
}

/// First index holding the maximum.
fn oracle_argmax(s: &[f64; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if s[i] > s[best] {
            best = i;
        }
    }
    best
}

/// Perplexity straight from the definition, with the same probability floor.
fn oracle_perplexity(seq: &[[f64; 4]], idx: usize, window: usize) -> f64 {
    let n = window.min(idx + 1);
    let window = &seq[idx + 1 - n..=idx];
    let mean_log: f64 = window
        .iter()
        .map(|s| {
            let total: f64 = s.iter().sum();
            (s[oracle_argmax(s)] / total).max(1e-9).ln()
        })
        .sum::<f64>()
        / n as f64;
    (-mean_log).exp()
}

#[test]
fn worked_argmax_example() {
    let s = ScoreVector([0.14, 0.35, 0.82, 0.46]);
    assert_eq!(predict_action(&s).unwrap(), ActionId::TurnLeft);
}

#[test]
fn uniform_and_certain_windows() {
    let uniform = vec![ScoreVector([0.25; 4]); 7];
    let p = perplexity_over(&uniform, 6, 7).unwrap();
    assert!((p - 4.0).abs() <= 1e-9);
    let certain = vec![ScoreVector([1.0, 0.0, 0.0, 0.0]); 7];
    assert_eq!(perplexity_over(&certain, 6, 7).unwrap(), 1.0);
}

#[test]
fn worked_binning_examples() {
    let bin = |v| metric_bin(v, MetricKind::Accuracy).unwrap().to_string();
    assert_eq!(bin(0.64), "60-70");
    assert_eq!(bin(0.70), "70-80");
    assert_eq!(bin(1.00), "90-100");
    assert_eq!(bin(0.0), "0-10");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn argmax_matches_oracle(s in scores()) {
        let got = predict_action(&ScoreVector(s)).unwrap();
        prop_assert_eq!(got.slot(), oracle_argmax(&s));
        prop_assert_eq!(got.code() as usize, oracle_argmax(&s) + 1);
    }

    #[test]
    fn argmax_is_scale_invariant(s in scores(), k in 1e-3f64..1e3) {
        let scaled = s.map(|v| v * k);
        // Scaling can only merge near-ties through rounding; skip those.
        let mut sorted = s;
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-9 * sorted[0]);
        prop_assert_eq!(
            predict_action(&ScoreVector(s)).unwrap(),
            predict_action(&ScoreVector(scaled)).unwrap()
        );
    }

    #[test]
    fn perplexity_matches_definition(seq in prop::collection::vec(scores(), 1..20), w in 1usize..10) {
        let vs: Vec<ScoreVector> = seq.iter().map(|s| ScoreVector(*s)).collect();
        for idx in 0..seq.len() {
            let got = perplexity_over(&vs, idx, w).unwrap();
            prop_assert!((1.0..=4.0).contains(&got), "{}", got);
            let want = oracle_perplexity(&seq, idx, w).clamp(1.0, 4.0);
            prop_assert!((got - want).abs() <= 1e-12 * want, "{} vs {}", got, want);
        }
    }

    #[test]
    fn single_frame_perplexity_is_inverse_probability(s in scores()) {
        let p = s[oracle_argmax(&s)] / s.iter().sum::<f64>();
        let got = perplexity_over(&[ScoreVector(s)], 0, DEFAULT_PERPLEXITY_WINDOW).unwrap();
        prop_assert!((got - 1.0 / p).abs() <= 1e-12 * (1.0 / p));
    }

    #[test]
    fn accuracy_bins_cover_the_unit_interval(v in 0.0f64..=1.0) {
        let label = metric_bin(v, MetricKind::Accuracy).unwrap();
        let lo = f64::from(label.lower()) / 100.0;
        prop_assert!(v + 1e-9 >= lo);
        if label != BinLabel::from_index(9).unwrap() {
            prop_assert!(v < lo + 0.1);
        }
    }

    #[test]
    fn perplexity_bins_follow_the_rescaling(p in 1.0f64..=4.0) {
        let label = metric_bin(p, MetricKind::Perplexity).unwrap();
        let pct = ((p - 1.0) / 3.0 * 100.0).min(100.0);
        let expected = ((pct + 1e-9) / 10.0).floor().min(9.0) as usize;
        prop_assert_eq!(label.index(), expected);
    }
}
