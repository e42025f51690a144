use proptest::prelude::*;
use swiftlearn::{importance_distribution, LogitStore, SampleId};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(1000)
}

fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1e3f64, 1..max_len)
}

fn score_of(prev: &[f64], cur: &[f64]) -> f64 {
    let mut store = LogitStore::new(1, prev.len());
    store.record_logits(SampleId(0), prev, 0).unwrap();
    store.record_logits(SampleId(0), cur, 1).unwrap();
    store.change_score(SampleId(0)).unwrap()
}

fn vec_pair(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-100.0..100.0f64, dim),
        prop::collection::vec(-100.0..100.0f64, dim),
    )
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn distribution_sums_to_one(s in scores(10_000), t in 0.0..10.0f64) {
        let p = importance_distribution(&s, t).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9, "sum {total}");
        // Positivity holds wherever exp of the largest gap is representable.
        let spread = s.iter().copied().fold(f64::MIN, f64::max) - s.iter().copied().fold(f64::MAX, f64::min);
        if t * spread < 700.0 {
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn distribution_is_shift_invariant(s in scores(200), t in 0.0..10.0f64, c in -1e3..1e3f64) {
        let p = importance_distribution(&s, t).unwrap();
        let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
        let q = importance_distribution(&shifted, t).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_temperature_is_uniform(s in scores(500)) {
        let p = importance_distribution(&s, 0.0).unwrap();
        let u = 1.0 / s.len() as f64;
        prop_assert!(p.iter().all(|&x| (x - u).abs() <= 1e-12));
    }

    #[test]
    fn distribution_is_monotone(s in prop::collection::vec(0.0..5.0f64, 2..50), t in 0.01..10.0f64) {
        let p = importance_distribution(&s, t).unwrap();
        for i in 0..s.len() {
            for j in 0..s.len() {
                if s[i] > s[j] {
                    prop_assert!(p[i] >= p[j]);
                    // Strict unless exp underflows both to the same value.
                    if (t * (s[i] - s[j])) > 1e-12 {
                        prop_assert!(p[i] > p[j], "s {} > {} but p {} <= {}", s[i], s[j], p[i], p[j]);
                    }
                } else if s[i] == s[j] {
                    prop_assert_eq!(p[i], p[j]);
                }
            }
        }
    }

    #[test]
    fn ordering_matches_scores(s in prop::collection::vec(0.0..5.0f64, 1..50), t in 0.01..10.0f64) {
        let p = importance_distribution(&s, t).unwrap();
        let mut by_score: Vec<usize> = (0..s.len()).collect();
        by_score.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        let mut by_prob: Vec<usize> = (0..s.len()).collect();
        by_prob.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        prop_assert_eq!(by_score, by_prob);
    }

    #[test]
    fn change_score_is_symmetric((a, b) in (1usize..16).prop_flat_map(vec_pair)) {
        prop_assert_eq!(score_of(&a, &b), score_of(&b, &a));
        prop_assert!(score_of(&a, &b) >= 0.0);
        prop_assert_eq!(score_of(&a, &a), 0.0);
    }

    #[test]
    fn change_score_triangle_inequality(
        (a, b, c) in (1usize..16).prop_flat_map(|d| (
            prop::collection::vec(-100.0..100.0f64, d),
            prop::collection::vec(-100.0..100.0f64, d),
            prop::collection::vec(-100.0..100.0f64, d),
        ))
    ) {
        let ab = score_of(&a, &b);
        let bc = score_of(&b, &c);
        let ac = score_of(&a, &c);
        prop_assert!(ac <= ab + bc + 1e-9 * (ab + bc).max(1.0));
    }

    #[test]
    fn change_score_scales_with_abs_factor((a, b) in (1usize..16).prop_flat_map(vec_pair), k in -10.0..10.0f64) {
        let sa: Vec<f64> = a.iter().map(|x| x * k).collect();
        let sb: Vec<f64> = b.iter().map(|x| x * k).collect();
        let base = score_of(&a, &b);
        prop_assert!((score_of(&sa, &sb) - k.abs() * base).abs() <= 1e-9 * base.max(1.0) * k.abs().max(1.0));
    }
}
