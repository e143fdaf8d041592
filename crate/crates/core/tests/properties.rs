use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use bundle_menu::envelope::{
    dominance_weight, intersection_order_check, ratio_condition, solve_minimal_menu,
};
use bundle_menu::model::EndpointProfile;
use bundle_menu::oracle::random_parametric_model;
use bundle_menu::pricing::{build_prices, compute_breakpoints, expected_revenue, verify_ic_ir, IC_SLACK};
use bundle_menu::structure::{
    additive_nested_menu, check_full_tree, classify, sold_alone, MenuShape, ROOT_RESIDUAL,
};
use bundle_menu::{Bundle, Curve, TypeDistribution, VirtualModel};

fn unit() -> TypeDistribution {
    TypeDistribution::uniform(0.0, 1.0).unwrap()
}

fn kept_set(m: &VirtualModel) -> BTreeSet<Bundle> {
    solve_minimal_menu(m, true).unwrap().kept.into_iter().collect()
}

/// Relabels goods: good g becomes perm[g - 1].
fn relabel(b: Bundle, perm: &[usize]) -> Bundle {
    let goods: Vec<usize> = b.goods().map(|g| perm[g - 1]).collect();
    Bundle::from_goods(&goods, b.n()).unwrap()
}

fn permuted(m: &VirtualModel, perm: &[usize], reverse: bool) -> VirtualModel {
    let mut rows: Vec<(Bundle, f64, f64)> = m
        .entries()
        .iter()
        .map(|&b| {
            let (a, c) = m.parametric_coeffs(b).unwrap();
            (relabel(b, perm), a, c)
        })
        .collect();
    if reverse {
        rows.reverse();
    }
    VirtualModel::parametric(m.n(), unit(), true, rows, Curve::Identity, Curve::Zero).unwrap()
}

fn perm_strategy() -> impl Strategy<Value = (usize, u64, Vec<usize>)> {
    (2usize..=5, any::<u64>()).prop_flat_map(|(n, seed)| {
        (Just(n), Just(seed), Just((1..=n).collect::<Vec<_>>()).prop_shuffle())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn menu_is_invariant_under_relabeling((n, seed, perm) in perm_strategy(), reverse in any::<bool>()) {
        let m = random_parametric_model(n, seed).unwrap();
        let kept = kept_set(&m);
        let mapped: BTreeSet<Bundle> = kept.iter().map(|&b| relabel(b, &perm)).collect();
        prop_assert_eq!(kept_set(&permuted(&m, &perm, reverse)), mapped);
    }

    #[test]
    fn certificates_verify(n in 2usize..=6, seed in any::<u64>()) {
        let m = random_parametric_model(n, seed).unwrap();
        let sol = solve_minimal_menu(&m, false).unwrap();
        prop_assert_eq!(sol.kept.len() + sol.removed.len(), m.entries().len());
        for c in &sol.removed {
            prop_assert!(c.verify(&m).unwrap(), "{:?}", c);
        }
        // every interior survivor fails the removal test against its neighbors
        let profiles = m.profiles_of(&sol.kept).unwrap();
        for w in profiles.windows(3) {
            prop_assert!(!ratio_condition(&w[0], &w[1], &w[2]).unwrap());
        }
    }

    #[test]
    fn revenue_identity_and_incentives(n in 2usize..=5, seed in any::<u64>()) {
        let m = random_parametric_model(n, seed).unwrap();
        let sol = solve_minimal_menu(&m, false).unwrap();
        let s = build_prices(&m, &compute_breakpoints(&m, &sol).unwrap()).unwrap();
        let (env, price) = expected_revenue(&m, &s, 1e-10).unwrap();
        prop_assert!((env - price).abs() <= 1e-7f64.max(1e-6 * env.abs()), "{} vs {}", env, price);
        prop_assert!(verify_ic_ir(&m, &s, 501, IC_SLACK).unwrap().holds());
        // the assignment is monotone and the lowest type keeps zero surplus
        let (lo, hi) = m.support();
        let mut last = 0;
        for k in 0..=200 {
            let t = lo + (hi - lo) * k as f64 / 200.0;
            let i = s.breakpoints.interval(t);
            prop_assert!(i >= last);
            last = i;
        }
        let u0 = m.eval_value(s.menu[0], lo).unwrap() - s.prices[0];
        prop_assert!(u0.abs() < 1e-8);
    }

    #[test]
    fn marginal_revenue_duality(n in 2usize..=4, seed in any::<u64>(), pick in any::<u32>(), t in 0.0f64..=1.0) {
        let m = random_parametric_model(n, seed).unwrap();
        let b = m.entries()[pick as usize % m.entries().len()];
        let phi = m.eval_virtual(b, t).unwrap();
        let q = 1.0 - m.distribution().cdf(t);
        prop_assert!((m.marginal_revenue(b, q).unwrap() - phi).abs() < 1e-10);
    }

    #[test]
    fn virtual_value_recomputed_from_values(n in 2usize..=4, seed in any::<u64>(), pick in any::<u32>(), t in 0.01f64..=0.99) {
        // φ = v - (1 - F) v' / f with a central difference for v'
        let m = random_parametric_model(n, seed).unwrap();
        let b = m.entries()[pick as usize % m.entries().len()];
        let h = 1e-4;
        let dv = (m.eval_value(b, t + h).unwrap() - m.eval_value(b, t - h).unwrap()) / (2.0 * h);
        let phi = m.eval_value(b, t).unwrap() - (1.0 - t) * dv;
        prop_assert!((phi - m.eval_virtual(b, t).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn ratio_test_matches_crossing_order(
        lo in prop::array::uniform3(-5.0f64..5.0),
        hi in prop::array::uniform3(-5.0f64..5.0),
    ) {
        // three lines on [0,1] ordered as the envelope sweep sees them
        let mut lines: Vec<(f64, f64)> = lo.iter().copied().zip(hi.iter().copied()).collect();
        lines.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ok = lines.windows(2).all(|w| w[0].0 - w[1].0 > 1e-3 && w[1].1 - w[0].1 > 1e-3);
        prop_assume!(ok);
        let n = 2;
        let bs: Vec<Bundle> = (1..=3u32).map(|m| Bundle::new(m, n).unwrap()).collect();
        let model = VirtualModel::virtual_curves(
            n,
            unit(),
            false,
            bs.iter().zip(&lines).map(|(&b, &(l, h))| (b, Curve::affine(h - l, l))),
        )
        .unwrap();
        let p: Vec<EndpointProfile> = bs.iter().map(|&b| model.endpoint_profile(b).unwrap()).collect();
        let by_ratio = ratio_condition(&p[0], &p[1], &p[2]).unwrap();
        let by_order = intersection_order_check(&model, bs[0], bs[1], bs[2]).unwrap();
        prop_assert_eq!(by_ratio, by_order);
        if by_ratio {
            let w = dominance_weight(&p[0], &p[1], &p[2]).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn quantity_roots_are_tight(n in 2usize..=4, seed in any::<u64>()) {
        let m = random_parametric_model(n, seed).unwrap();
        for &b in m.entries().iter().filter(|b| !b.is_empty()) {
            let s = sold_alone(&m, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.q));
            if let Some(t) = s.t_b {
                prop_assert!(m.eval_virtual(b, t).unwrap().abs() < ROOT_RESIDUAL);
                assert_abs_diff_eq!(s.q, 1.0 - t, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn classification_matches_pairwise_definition(masks in prop::collection::vec(0u32..16, 1..7)) {
        let n = 4;
        let menu: Vec<Bundle> = masks.iter().map(|&m| Bundle::new(m, n).unwrap()).collect();
        let label = classify(&menu).unwrap();
        let mut rev = menu.clone();
        rev.reverse();
        prop_assert_eq!(&classify(&rev).unwrap(), &label);

        let members: Vec<Bundle> = menu.iter().copied().filter(|b| !b.is_empty()).collect();
        let chain = members.iter().all(|&a| members.iter().all(|&b| a.is_subset_of(b) || b.is_subset_of(a)));
        let root = members.iter().copied().find(|&r| members.iter().all(|&b| r.is_subset_of(b)));
        let expect = if !members.is_empty() && members.iter().all(|b| b.is_grand()) {
            MenuShape::Pure
        } else if chain {
            MenuShape::Nested
        } else if root.is_some() {
            MenuShape::Tree
        } else {
            MenuShape::Other
        };
        prop_assert_eq!(label.label, expect);
        if label.label == MenuShape::Tree {
            let r = label.root.unwrap();
            prop_assert!(members.iter().all(|&b| r.is_subset_of(b)));
            let (x, y) = label.incomparable_witness.unwrap();
            prop_assert!(x.is_incomparable(y));
        }
    }

    #[test]
    fn additive_menu_is_the_solved_menu(
        singles in prop::collection::vec((0.5f64..6.0, -2.0f64..-0.1), 1..=4),
        with_negative_top in any::<bool>(),
    ) {
        let n = singles.len();
        // g1 exceeds |g2| so every singleton sells at the top, unless the
        // first one is pushed below zero to exercise the failure path
        let mut singles: Vec<(f64, f64)> = singles.iter().map(|&(x, c)| (x - c, c)).collect();
        if with_negative_top {
            singles[0].0 = -0.5 * singles[0].1;
        }
        let rows: Vec<(Bundle, f64, f64)> = Bundle::all(n)
            .unwrap()
            .map(|b| {
                let (a, c) = b.goods().fold((0.0, 0.0), |(a, c), g| (a + singles[g - 1].0, c + singles[g - 1].1));
                (b, a, c)
            })
            .collect();
        let m = VirtualModel::parametric(n, unit(), true, rows, Curve::Identity, Curve::Zero).unwrap();
        let (menu, report) = additive_nested_menu(&m).unwrap();
        if with_negative_top {
            prop_assert!(!report.holds());
            return Ok(());
        }
        prop_assume!(report.holds());
        let menu: BTreeSet<Bundle> = menu.into_iter().collect();
        prop_assert_eq!(kept_set(&m), menu);
    }

    #[test]
    fn convex_tree_keeps_every_intermediate(
        x1 in 0.05f64..0.95,
        x2 in 0.05f64..0.95,
        power in 1.2f64..4.0,
        outsiders in prop::array::uniform3(0.0f64..2.9),
    ) {
        prop_assume!((x1 - x2).abs() > 0.02);
        // root {1} at (lo, hi) = (4, 5), grand bundle at (1, 7)
        let point = |x: f64| {
            let (hi, lo) = (5.0 + 2.0 * x, 4.0 - 3.0 * x.powf(power));
            (hi - lo, lo)
        };
        let (a12, c12) = point(x1);
        let (a13, c13) = point(x2);
        let g = |v: &[usize]| Bundle::from_goods(v, 3).unwrap();
        let rows = vec![
            (g(&[1]), 1.0, 4.0),
            (g(&[1, 2]), a12, c12),
            (g(&[1, 3]), a13, c13),
            (g(&[1, 2, 3]), 6.0, 1.0),
            (g(&[2]), 1.0, outsiders[0]),
            (g(&[3]), 1.0, outsiders[1]),
            (g(&[2, 3]), 1.0, outsiders[2]),
        ];
        let m = VirtualModel::parametric(3, unit(), true, rows, Curve::Identity, Curve::Zero).unwrap();
        let r = check_full_tree(&m).unwrap();
        prop_assert!(r.holds(), "{:?}", r);
        let want: BTreeSet<Bundle> = [g(&[1]), g(&[1, 2]), g(&[1, 3]), g(&[1, 2, 3])].into_iter().collect();
        let kept = solve_minimal_menu(&m, false).unwrap().kept;
        prop_assert_eq!(kept.iter().copied().collect::<BTreeSet<_>>(), want);
        prop_assert_eq!(classify(&kept).unwrap().label, MenuShape::Tree);
    }
}
