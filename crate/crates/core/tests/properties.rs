mod common;

use proptest::prelude::*;

use common::{brute_force_auc, check_refinement, role_schema, tiny_params};
use sgctr_core::data::EncodedSample;
use sgctr_core::eval::auc;
use sgctr_core::hash::hash_encode;
use sgctr_core::refine::{gamma, infer, mask_count_sequence, InferenceMode, MaskScheduleKind};
use sgctr_core::schema::FeatureSchema;

fn kind() -> impl Strategy<Value = MaskScheduleKind> {
    prop::sample::select(MaskScheduleKind::ALL.to_vec())
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.9, 1.0]), 0.0..1.0f64], n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_equals_pair_counting((scores, labels) in scored_labels()) {
        let pos = labels.iter().filter(|&&y| y == 1).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let fast = auc(&scores, &labels).unwrap();
        prop_assert!((fast - brute_force_auc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn negating_scores_complements_auc((scores, labels) in scored_labels()) {
        let pos = labels.iter().filter(|&&y| y == 1).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((a + auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_to_monotone_maps((scores, labels) in scored_labels()) {
        let pos = labels.iter().filter(|&&y| y == 1).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 2.0).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
    }

    #[test]
    fn gamma_is_monotone(k in kind(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (g_lo, g_hi) = (gamma(k, lo).unwrap(), gamma(k, hi).unwrap());
        prop_assert!(g_hi <= g_lo);
        prop_assert!((0.0..=1.0).contains(&g_lo));
    }

    #[test]
    fn mask_counts_are_feasible(k in kind(), steps in 1usize..=16, m0 in 1usize..=64) {
        let seq = mask_count_sequence(k, steps, m0).unwrap();
        prop_assert_eq!(seq.len(), steps);
        prop_assert_eq!(*seq.last().unwrap(), 0);
        prop_assert!(seq[0] <= m0);
        prop_assert!(seq.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn hash_encode_stays_in_range(field in "[a-z]{1,8}", raw in ".{0,12}", vocab in 2u32..100_000) {
        let t = hash_encode(&field, &raw, vocab);
        if raw.is_empty() {
            prop_assert_eq!(t, 0);
        } else {
            prop_assert!(t >= 1 && t < vocab);
        }
        prop_assert_eq!(t, hash_encode(&field, &raw, vocab));
    }

    #[test]
    fn schema_text_round_trips(n_user in 0usize..4, n_item in 0usize..4, n_cross in 0usize..3, buckets in 1u32..1000) {
        prop_assume!(n_user + n_item + n_cross > 0);
        let s = role_schema(n_user, n_item, n_cross, buckets);
        let back = FeatureSchema::parse(&s.to_text()).unwrap();
        prop_assert_eq!(back.hash(), s.hash());
        prop_assert_eq!(back, s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn refinement_state_machine(
        n_user in 0usize..3,
        n_item in 1usize..5,
        n_cross in 0usize..3,
        steps in 1usize..8,
        k in kind(),
        seed in 0u64..1000,
        raw in prop::collection::vec(0u32..6, 10),
    ) {
        let schema = role_schema(n_user, n_item, n_cross, 5);
        let params = tiny_params(&schema, 4, 1, seed);
        let sample = EncodedSample::new(raw[..schema.n_features()].to_vec(), 0);
        if let Err(e) = check_refinement(&sample, &schema, &params, steps, k) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn single_step_refinement_is_one_step(
        n_item in 1usize..4,
        seed in 0u64..1000,
        k in kind(),
        raw in prop::collection::vec(0u32..6, 6),
    ) {
        let schema = role_schema(2, n_item, 1, 5);
        let params = tiny_params(&schema, 4, 2, seed);
        let sample = EncodedSample::new(raw[..schema.n_features()].to_vec(), 1);
        let a = infer(&sample, &schema, &params, InferenceMode::OneStep).unwrap();
        let b = infer(&sample, &schema, &params, InferenceMode::Sgctr { steps: 1, schedule: k }).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!(a > 0.0 && a < 1.0);
    }
}
