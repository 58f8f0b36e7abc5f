mod common;

use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 32,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

macro_rules! seeded {
    ($($name:ident),* $(,)?) => {
        proptest! {
            #![proptest_config(config())]
            $(
                #[test]
                fn $name(seed in any::<u64>()) {
                    common::invariants::$name(seed).map_err(TestCaseError::fail)?;
                }
            )*
        }
    };
}

seeded!(
    subset_chain,
    length_monotonicity,
    threshold_monotonicity,
    softmax_normalization,
    scale_invariance,
    shift_invariance,
    metric_bounds,
    auc_monotone_transform,
    window_locality,
    guard_keeps_one,
);

proptest! {
    #![proptest_config(config())]

    #[test]
    fn stages_match_reference(seed in any::<u64>()) {
        common::oracle_case(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn keep_count_formula(n in 1usize..100_000, gamma in 0.01f64..1.0, m_max in 1usize..10_000) {
        let k = focus_core::prioritize::keep_count(n, gamma, m_max);
        let want = ((gamma * n as f64 + 1e-9).floor() as usize).max(1).min(m_max).min(n);
        prop_assert_eq!(k, want);
        prop_assert!(k >= 1 && k <= n);
    }
}
