//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bundle_menu::envelope::{intersection_order_check, ratio_condition, solve_minimal_menu};
use bundle_menu::oracle::{
    builtin_fixture, compare, grid_envelope, grid_envelope_integral, random_parametric_model, strict_best_response_set,
};
use bundle_menu::pricing::{build_prices, compute_breakpoints, expected_revenue, verify_ic_ir, IC_SLACK};
use bundle_menu::structure::{additive_nested_menu, check_full_tree, check_least_favorite_tree, normalized_coordinates};
use bundle_menu::{Bundle, Curve, Stage, TypeDistribution, VirtualModel};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn b(goods: &[usize], n: usize) -> Bundle {
    Bundle::from_goods(goods, n).unwrap()
}

fn set(bs: &[Bundle]) -> BTreeSet<Bundle> {
    bs.iter().copied().collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what}: {got} vs {want} (tol {tol:e})"))
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn e<T: std::fmt::Debug>(x: T) -> String {
    format!("{x:?}")
}

fn three_good_menu() -> Check {
    let start = Instant::now();
    let m = builtin_fixture("f4_tree3").map_err(e)?;
    let sol = solve_minimal_menu(&m, false).map_err(e)?;
    let elapsed = start.elapsed();
    let want = set(&[b(&[1], 3), b(&[1, 2], 3), b(&[1, 3], 3), b(&[1, 2, 3], 3)]);
    ensure(set(&sol.kept) == want, || format!("kept {:?}", sol.kept))?;
    ensure(sol.removed.iter().any(|c| c.removed.is_empty()), || "∅ not eliminated".into())?;
    // endpoints come straight from g1 h1 + g2, so only rounding separates
    // them from the rationals
    for (g, lo, hi) in [
        (&[1][..], 4.0, 5.0),
        (&[1, 2], 11.0 / 3.0, 17.0 / 3.0),
        (&[1, 3], 13.0 / 4.0, 6.0),
        (&[1, 2, 3], 1.0, 7.0),
    ] {
        let p = m.endpoint_profile(b(g, 3)).map_err(e)?;
        let ulps = |x: f64, y: f64| (x - y).abs() <= 4.0 * f64::EPSILON * y.abs();
        ensure(ulps(p.phi_lo, lo) && ulps(p.phi_hi, hi), || format!("{:?} endpoints {p:?}", g))?;
    }
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("kept {:?} in {elapsed:?}", sol.kept))
}

fn four_good_menu() -> Check {
    let start = Instant::now();
    let m = builtin_fixture("f4_tree4").map_err(e)?;
    let sol = solve_minimal_menu(&m, false).map_err(e)?;
    let elapsed = start.elapsed();
    let want = set(&[b(&[1], 4), b(&[1, 4], 4), b(&[1, 2, 3], 4), b(&[1, 2, 3, 4], 4)]);
    ensure(set(&sol.kept) == want, || format!("kept {:?}", sol.kept))?;
    let cert = sol
        .removed
        .iter()
        .find(|c| c.removed == b(&[1, 3, 4], 4))
        .ok_or("{1,3,4} not removed")?;
    ensure(cert.stage == Stage::Mixture, || format!("{cert:?}"))?;
    close(cert.weight, 0.5, 1e-12, "mixture weight")?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("kept {:?}; {{1,3,4}} mixed by {:?} at λ = {}", sol.kept, cert.dominators, cert.weight))
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut bad = Vec::new();
    for seed in 0..200u64 {
        let n = 2 + (seed % 5) as usize;
        let m = random_parametric_model(n, seed).map_err(e)?;
        let sol = solve_minimal_menu(&m, false).map_err(e)?;
        let env = grid_envelope(&m, 10_001).map_err(e)?;
        if !compare(&m, &sol, &env).map_err(e)?.holds() {
            bad.push(seed);
        }
    }
    let elapsed = start.elapsed();
    ensure(bad.is_empty(), || format!("mismatched seeds {bad:?}"))?;
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("200 models agree in {elapsed:?}"))
}

fn pricing_identity() -> Check {
    let mut detail = Vec::new();
    for name in ["f4_tree3", "f4_tree4"] {
        let m = builtin_fixture(name).map_err(e)?;
        let sol = solve_minimal_menu(&m, false).map_err(e)?;
        let s = build_prices(&m, &compute_breakpoints(&m, &sol).map_err(e)?).map_err(e)?;
        if name == "f4_tree3" {
            let cuts = [1.0 / 3.0, 5.0 / 9.0, 9.0 / 13.0];
            ensure(s.breakpoints.cuts.len() == 3, || format!("cuts {:?}", s.breakpoints.cuts))?;
            for (got, want) in s.breakpoints.cuts.iter().zip(cuts) {
                close(*got, want, 1e-10, "breakpoint")?;
            }
            for (g, p) in [(&[1][..], 4.5), (&[1, 2], 29.0 / 6.0), (&[1, 3], 5.0), (&[1, 2, 3], 5.5)] {
                let got = s.price_of(b(g, 3)).ok_or("missing price")?;
                close(got, p, 1e-9, "price")?;
            }
        }
        let r = verify_ic_ir(&m, &s, 2001, IC_SLACK).map_err(e)?;
        ensure(r.holds() && r.witnesses.is_empty(), || format!("{name}: {r:?}"))?;
        let (env, pay) = expected_revenue(&m, &s, 1e-10).map_err(e)?;
        close(env, pay, 1e-7, "revenue identity")?;
        detail.push(format!("{name} revenue {env:.9}"));
    }
    Ok(detail.join("; "))
}

fn ratio_matches_crossings() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2;
    let bs: Vec<Bundle> = (1..=3u32).map(|k| Bundle::new(k, n).unwrap()).collect();
    let unit = TypeDistribution::uniform(0.0, 1.0).map_err(e)?;
    let (mut tested, mut agree, mut removable) = (0, 0, 0);
    while tested < 1000 {
        // a valid triple: bottom values fall and top values rise along it
        let mut lo: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut hi: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        lo.sort_by(|a, b| b.total_cmp(a));
        hi.sort_by(|a, b| a.total_cmp(b));
        if lo.windows(2).any(|w| w[0] - w[1] < 1e-3) || hi.windows(2).any(|w| w[1] - w[0] < 1e-3) {
            continue;
        }
        let curves = bs.iter().enumerate().map(|(i, &x)| (x, Curve::affine(hi[i] - lo[i], lo[i])));
        let m = VirtualModel::virtual_curves(n, unit.clone(), false, curves).map_err(e)?;
        let p: Vec<_> = bs.iter().map(|&x| m.endpoint_profile(x).unwrap()).collect();
        let by_ratio = ratio_condition(&p[0], &p[1], &p[2]).map_err(e)?;
        let by_order = intersection_order_check(&m, bs[0], bs[1], bs[2]).map_err(e)?;
        tested += 1;
        agree += usize::from(by_ratio == by_order);
        removable += usize::from(by_ratio);
    }
    ensure(agree == tested, || format!("{} disagreements", tested - agree))?;
    Ok(format!("{tested} triples, 0 disagreements ({removable} removable)"))
}

fn tree_conditions() -> Check {
    let m3 = builtin_fixture("f4_tree3").map_err(e)?;
    let full = check_full_tree(&m3).map_err(e)?;
    ensure(full.holds(), || format!("{full:?}"))?;
    let coords = normalized_coordinates(&m3, b(&[1], 3)).map_err(e)?;
    let want = [(b(&[1, 2], 3), 1.0 / 3.0), (b(&[1, 3], 3), 1.0 / 2.0)];
    for (bundle, lambda) in want {
        let c = coords.iter().find(|c| c.bundle == bundle).ok_or("missing coordinates")?;
        close(c.lambda, lambda, 1e-12, "lambda")?;
        close(c.mu, lambda * lambda, 1e-12, "mu on x^2")?;
    }

    let m4 = builtin_fixture("f4_tree4").map_err(e)?;
    let lf = check_least_favorite_tree(&m4).map_err(e)?;
    ensure(lf.holds(), || format!("{lf:?}"))?;
    let chain = lf.witnesses.iter().find(|w| w.kind == "chain").ok_or("no chain witness")?;
    ensure(chain.values.len() == 3, || format!("{chain:?}"))?;
    for (got, want) in chain.values.iter().zip([0.5, 0.75, 1.75]) {
        close(*got, want, 1e-12, "chain")?;
    }
    Ok("full tree on x^2 and least-favorite chain 1/2 < 3/4 < 7/4".into())
}

fn additive_menu_agrees() -> Check {
    let m = builtin_fixture("additive_demo").map_err(e)?;
    let (menu, report) = additive_nested_menu(&m).map_err(e)?;
    ensure(report.holds(), || format!("{report:?}"))?;
    let want = vec![Bundle::empty(3).unwrap(), b(&[3], 3), b(&[2, 3], 3), b(&[1, 2, 3], 3)];
    ensure(menu == want, || format!("menu {menu:?}"))?;
    let kept = solve_minimal_menu(&m, false).map_err(e)?.kept;
    ensure(set(&kept) == set(&want), || format!("solve kept {kept:?}"))?;
    let support = grid_envelope(&m, 10_001).map_err(e)?.support;
    ensure(support == set(&want), || format!("oracle support {support:?}"))?;
    Ok(format!("{menu:?}"))
}

fn counterexamples() -> Check {
    let e6 = builtin_fixture("e6").map_err(e)?;
    let strict = strict_best_response_set(&e6, 10_001).map_err(e)?;
    ensure(strict.is_empty(), || format!("strict best responses {strict:?}"))?;
    let pair = grid_envelope_integral(&e6, &[b(&[1], 2), b(&[2], 2)], 10_001).map_err(e)?;
    let joint = grid_envelope_integral(&e6, &[b(&[1, 2], 2)], 10_001).map_err(e)?;
    close(pair, joint, 1e-9, "envelope integrals")?;

    let scd = builtin_fixture("e2").map_err(e)?.check_scd_star().map_err(e)?;
    ensure(!scd.holds(), || format!("e2 {scd:?}"))?;

    let md = builtin_fixture("e7").map_err(e)?.check_monotonic_differences(201).map_err(e)?;
    ensure(!md.holds(), || format!("e7 {md:?}"))?;
    let w = md.witnesses.first().ok_or("no witness")?;
    let t = w.values[1];
    ensure(t > 0.0 && t < 2.0, || format!("witness type {t}"))?;

    let dir = tempfile::tempdir().map_err(e)?;
    for name in ["e6", "e2", "e7"] {
        let status = Command::new(env!("CARGO_BIN_EXE_bundle-menu"))
            .args(["solve", "--model", &format!("fixture:{name}"), "--out"])
            .arg(dir.path())
            .output()
            .map_err(e)?
            .status;
        ensure(status.code() == Some(2), || format!("{name}: exit {status:?}"))?;
    }
    Ok(format!("integrals {pair:.12} = {joint:.12}; MD witness at t = {t}; all refused"))
}

fn collinear_collapse() -> Check {
    let g = |v: &[usize]| b(v, 3);
    // intermediates at (λ, μ) = (1/3, 1/3) and (1/2, 1/2)
    let rows = vec![
        (g(&[1]), 1.0, 4.0),
        (g(&[1, 2]), 8.0 / 3.0, 3.0),
        (g(&[1, 3]), 3.5, 2.5),
        (g(&[1, 2, 3]), 6.0, 1.0),
        (g(&[2]), 1.0, 1.0),
        (g(&[3]), 1.0, 2.0),
        (g(&[2, 3]), 1.0, 3.0),
    ];
    let unit = TypeDistribution::uniform(0.0, 1.0).map_err(e)?;
    let m = VirtualModel::parametric(3, unit, true, rows, Curve::Identity, Curve::Zero).map_err(e)?;
    let sol = solve_minimal_menu(&m, false).map_err(e)?;
    ensure(set(&sol.kept) == set(&[g(&[1]), g(&[1, 2, 3])]), || format!("kept {:?}", sol.kept))?;
    for x in [g(&[1, 2]), g(&[1, 3])] {
        let c = sol.removed.iter().find(|c| c.removed == x).ok_or("intermediate not removed")?;
        ensure(c.stage == Stage::Mixture, || format!("{c:?}"))?;
    }
    Ok(format!("kept {:?}", sol.kept))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("three-good tree menu", three_good_menu),
        ("four-good tree menu", four_good_menu),
        ("oracle equivalence on 200 random models", oracle_equivalence),
        ("pricing identity", pricing_identity),
        ("ratio test matches crossing order", ratio_matches_crossings),
        ("tree conditions", tree_conditions),
        ("additive nested menu", additive_menu_agrees),
        ("counterexamples", counterexamples),
        ("collinear intermediates", collinear_collapse),
    ];
    let mut failed = 0;
    for (i, (title, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {}: {title}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {title}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
