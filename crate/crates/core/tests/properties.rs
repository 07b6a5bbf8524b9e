use arbitrage_core::calibrate::{fit_lambda, LambdaGrid, RiskBudget};
use arbitrage_core::cost::{hybrid_input_tokens, routed_cost, single_cost, Model, Price, PriceSheet, TokenCounts};
use arbitrage_core::exec::rng_from;
use arbitrage_core::providers::perturb_ties;
use arbitrage_core::route::{decide, gap_route, Actor, GapRoute, RoutingPolicy, Variant};
use arbitrage_core::scores::{
    binarize_guardian, candidate_set, gap_exceeds, normalize_scores, residual_loss, score_gap, Labels, MEMBERSHIP_EPS,
    ScoreVector, ScoredInstance,
};
use proptest::prelude::*;

const CASES: u32 = 10_000;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: CASES,
        ..ProptestConfig::default()
    }
}

/// Scores drawn from a coarse lattice half the time so ties and exact gap
/// equalities actually occur.
fn score() -> impl Strategy<Value = f64> {
    prop_oneof![(0u32..=10).prop_map(|k| f64::from(k) / 10.0), 0.0f64..=1.0]
}

fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(score(), 1..=max_len)
}

fn lambda() -> impl Strategy<Value = f64> {
    prop_oneof![(0u32..=12).prop_map(|k| f64::from(k) / 10.0), 0.0f64..=1.2]
}

fn instance() -> impl Strategy<Value = ScoredInstance> {
    (1usize..=7)
        .prop_flat_map(|n| (prop::collection::vec(score(), n), prop::collection::vec(score(), n), 0..n))
        .prop_map(|(p, g, correct)| {
            ScoredInstance::from_scores("x", &p, &g)
                .unwrap()
                .with_labels(Labels {
                    correct_index: Some(correct),
                    ..Labels::default()
                })
                .unwrap()
        })
}

fn sv(v: Vec<f64>) -> ScoreVector {
    ScoreVector::new(v).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn candidate_sets_grow_with_lambda(p in scores(8), a in lambda(), b in lambda()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p = sv(p);
        let small = candidate_set(&p, lo).unwrap();
        let large = candidate_set(&p, hi).unwrap();
        prop_assert!(small.indices().iter().all(|i| large.contains(*i)));
    }

    #[test]
    fn every_argmax_is_a_candidate(p in scores(8), l in lambda()) {
        let p = sv(p);
        let set = candidate_set(&p, l).unwrap();
        let top = p.max();
        for (i, &v) in p.values().iter().enumerate() {
            if v == top {
                prop_assert!(set.contains(i));
            }
        }
    }

    #[test]
    fn singleton_iff_gap_exceeds(p in scores(8), l in lambda()) {
        let p = sv(p);
        let set = candidate_set(&p, l).unwrap();
        prop_assert_eq!(set.is_singleton(), gap_exceeds(score_gap(&p), l));
    }

    #[test]
    fn singleton_iff_strict_gap_off_the_boundary(p in scores(8), l in 0.0f64..=1.2) {
        let p = sv(p);
        let gap = score_gap(&p);
        prop_assume!((gap - l).abs() > 1e-9);
        prop_assert_eq!(candidate_set(&p, l).unwrap().is_singleton(), gap > l);
    }

    #[test]
    fn residual_loss_is_monotone_and_bounded(inst in instance(), a in lambda(), b in lambda()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let g = inst.guardian().unwrap();
        let l_lo = residual_loss(&inst, lo).unwrap();
        let l_hi = residual_loss(&inst, hi).unwrap();
        prop_assert!(l_hi <= l_lo);
        prop_assert!(l_lo >= 0.0 && l_lo <= g.max() - g.min());
        prop_assert_eq!(residual_loss(&inst, inst.primary().range()).unwrap(), 0.0);
    }

    #[test]
    fn binarized_loss_is_the_error_indicator(inst in instance(), l in lambda()) {
        let bin = binarize_guardian(&inst).unwrap();
        let correct = inst.labels().correct_index.unwrap();
        let guardian_right = inst.guardian().unwrap().argmax() == correct;
        let covered = candidate_set(inst.primary(), l).unwrap().contains(correct);
        let expected = if guardian_right && !covered { 1.0 } else { 0.0 };
        prop_assert_eq!(residual_loss(&bin, l).unwrap(), expected);
    }

    #[test]
    fn fitted_lambda_grows_as_alpha_shrinks(
        insts in prop::collection::vec(instance(), 10..40),
        a in 0.1f64..0.9,
        b in 0.1f64..0.9,
    ) {
        let (small, large) = if a <= b { (a, b) } else { (b, a) };
        let grid = LambdaGrid::unit(0.01).unwrap();
        let profiles: Vec<_> = insts.iter().map(|i| i.loss_profile().unwrap()).collect();
        let tight = fit_lambda(&profiles, RiskBudget::with_unit_bound(small).unwrap(), &grid).unwrap();
        let loose = fit_lambda(&profiles, RiskBudget::with_unit_bound(large).unwrap(), &grid).unwrap();
        prop_assert!(tight.lambda_hat >= loose.lambda_hat);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2_000, ..ProptestConfig::default() })]

    #[test]
    fn fitted_lambda_is_minimal(insts in prop::collection::vec(instance(), 10..40), alpha in 0.1f64..0.9) {
        let grid = LambdaGrid::unit(0.01).unwrap();
        let budget = RiskBudget::with_unit_bound(alpha).unwrap();
        let profiles: Vec<_> = insts.iter().map(|i| i.loss_profile().unwrap()).collect();
        let fit = fit_lambda(&profiles, budget, &grid).unwrap();
        if fit.feasible && fit.lambda_index > 0 {
            prop_assert!(!budget.admits(fit.risk_curve[fit.lambda_index - 1].1, profiles.len()));
        }
    }

    #[test]
    fn normalized_scores_sum_to_one(raw in prop::collection::vec(0.0f64..100.0, 1..10)) {
        let v = normalize_scores(&raw).unwrap();
        prop_assert!((v.values().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        if raw.iter().sum::<f64>() > 0.0 {
            let top = raw.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!(raw[v.argmax()], top);
        }
    }

    #[test]
    fn routers_differ_only_on_the_boundary(inst in instance(), l in lambda()) {
        let acts_alone = decide(&inst, &RoutingPolicy::restricted(l).unwrap()).unwrap().actor == Actor::Primary;
        let gap_acts = matches!(gap_route(inst.primary(), l), GapRoute::Act(_));
        let gap = score_gap(inst.primary());
        let on_boundary = gap.is_finite() && (gap - l).abs() <= MEMBERSHIP_EPS;
        prop_assert_eq!(acts_alone != gap_acts, on_boundary);
        if on_boundary {
            prop_assert!(gap_acts && !acts_alone);
        }
    }

    #[test]
    fn wider_menu_never_hurts_the_guardian(inst in instance(), l in lambda()) {
        let g = inst.guardian().unwrap();
        let r = decide(&inst, &RoutingPolicy::new(l, Variant::Restricted).unwrap()).unwrap();
        let u = decide(&inst, &RoutingPolicy::new(l, Variant::Unrestricted).unwrap()).unwrap();
        prop_assert!(g.values()[u.chosen_index] >= g.values()[r.chosen_index]);
    }

    #[test]
    fn zero_lambda_unique_max_means_primary(p in prop::collection::vec(0.0f64..1.0, 1..8)) {
        let inst = ScoredInstance::from_scores("x", &p, &p).unwrap();
        let top = inst.primary().max();
        prop_assume!(p.iter().filter(|&&v| v == top).count() == 1);
        let d = decide(&inst, &RoutingPolicy::restricted(0.0).unwrap()).unwrap();
        prop_assert_eq!(d.actor, Actor::Primary);
    }

    #[test]
    fn lambda_over_range_means_guardian(p in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let inst = ScoredInstance::from_scores("x", &p, &p).unwrap();
        let d = decide(&inst, &RoutingPolicy::restricted(inst.primary().range()).unwrap()).unwrap();
        prop_assert_eq!(d.actor, Actor::Guardian);
    }

    #[test]
    fn perturbed_ties_are_distinct_and_close(p in scores(6), seed in any::<u64>()) {
        let v = sv(p.clone());
        let a = perturb_ties(&v, &mut rng_from(seed));
        let b = perturb_ties(&v, &mut rng_from(seed));
        prop_assert_eq!(&a, &b);
        let vals = a.values();
        for i in 0..vals.len() {
            for j in i + 1..vals.len() {
                prop_assert!(vals[i] != vals[j]);
            }
            prop_assert!((vals[i] - p[i]).abs() <= 0.01 * p.len() as f64 + 1e-12);
        }
    }

    #[test]
    fn routed_cost_covers_primary_and_scales_linearly(
        toks in (0u64..10_000, 0u64..10_000, 0u64..10_000, 0u64..10_000, 0u64..10_000),
        prices in prop::array::uniform4(0u64..50_000_000),
        inst in instance(),
        l in lambda(),
        factor in 1u64..1000,
    ) {
        let tokens = TokenCounts::all(toks.0, toks.1, toks.2, toks.3, toks.4);
        let sheet = PriceSheet {
            primary_in_price: Price::from_picos(prices[0]),
            primary_out_price: Price::from_picos(prices[1]),
            guardian_in_price: Price::from_picos(prices[2]),
            guardian_out_price: Price::from_picos(prices[3]),
        };
        let d = decide(&inst, &RoutingPolicy::restricted(l).unwrap()).unwrap();
        let routed = routed_cost(&tokens, &sheet, &d).unwrap();
        prop_assert!(routed >= single_cost(&tokens, &sheet, Model::Primary).unwrap());
        let scaled = routed_cost(&tokens, &sheet.scaled(factor), &d).unwrap();
        prop_assert_eq!(scaled.picos(), routed.picos() * u128::from(factor));
    }

    #[test]
    fn hybrid_tokens_monotone_and_bounded(full in 0u64..1_000_000, n in 1usize..20) {
        let mut last = 0;
        for m in 1..=n {
            let t = hybrid_input_tokens(full, m, n).unwrap();
            prop_assert!(t >= last && t <= full);
            last = t;
        }
        prop_assert_eq!(last, full);
    }
}
