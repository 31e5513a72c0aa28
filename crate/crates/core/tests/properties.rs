use proptest::prelude::*;

use attribution_robustness::attribution::Method;
use attribution_robustness::dare::within_budget;
use attribution_robustness::data::preprocess;
use attribution_robustness::metrics::{cosine_similarity, rows_from_csv, rows_to_csv, MeanStd, RobustnessRow};
use attribution_robustness::robust::attacked_count;

fn vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-1e3f64..1e3, n),
            prop::collection::vec(-1e3f64..1e3, n),
        )
    })
}

proptest! {
    #[test]
    fn cosine_is_bounded_and_symmetric((a, b) in vectors()) {
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
    }

    #[test]
    fn cosine_ignores_positive_scale((a, b) in vectors(), k in 0.01f64..100.0) {
        let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
        let d = cosine_similarity(&a, &b).unwrap() - cosine_similarity(&scaled, &b).unwrap();
        prop_assert!(d.abs() < 1e-9);
    }

    #[test]
    fn preprocessing_is_idempotent(text in "\\PC{0,60}") {
        let once = preprocess(&text);
        prop_assert_eq!(preprocess(&once), once.clone());
        prop_assert!(!once.contains("  ") && !once.starts_with(' ') && !once.ends_with(' '));
    }

    #[test]
    fn budget_is_the_ratio_of_substituted_words(n in 0usize..50, len in 1usize..50, rho in 0.01f64..1.0) {
        prop_assert_eq!(within_budget(n, len, rho), n as f64 / len as f64 <= rho);
        if within_budget(n + 1, len, rho) {
            prop_assert!(within_budget(n, len, rho));
        }
    }

    #[test]
    fn attacked_count_stays_within_the_batch(ratio in 0.0f64..=1.0, batch in 0usize..200) {
        let k = attacked_count(ratio, batch);
        prop_assert!(k <= batch);
        prop_assert!(k as f64 <= ratio * batch as f64 + 1e-6);
        prop_assert!(k as f64 > ratio * batch as f64 - 1.0);
    }

    #[test]
    fn rows_survive_csv(values in prop::collection::vec((-1.0f64..1.0, 0.0f64..1.0, 0.0f64..50.0, 0usize..8), 0..20)) {
        let rows: Vec<RobustnessRow> = values
            .iter()
            .enumerate()
            .map(|(i, &(cos, similarity, r, n))| RobustnessRow {
                regime: "far".into(),
                method: Method::ALL[i % 4],
                fold: i % 3,
                sample_id: format!("s,{i}"),
                cos,
                similarity,
                r,
                n,
                length: 8,
            })
            .collect();
        prop_assert_eq!(rows_from_csv(&rows_to_csv(&rows).unwrap()).unwrap(), rows);
    }

    #[test]
    fn population_std_of_a_constant_is_zero(v in -1e6f64..1e6, n in 1usize..30) {
        let m = MeanStd::of(&vec![v; n]);
        prop_assert!((m.mean - v).abs() <= 1e-9 * v.abs().max(1.0));
        prop_assert!(m.std <= 1e-9 * v.abs().max(1.0));
    }
}
