//! Brute-force ground truth: grid argmax of virtual values over the whole
//! bundle universe, plus built-in fixtures and a seeded random model
//! generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bundle::Bundle;
use crate::curve::Curve;
use crate::distribution::TypeDistribution;
use crate::envelope::MenuSolution;
use crate::error::{Error, Result};
use crate::model::{DerivativeMode, VirtualModel};
use crate::numeric::linspace;
use crate::report::{ConditionReport, Verdict, Witness};

/// Values within this (relative) distance of the maximum tie.
pub const TIE_TOL: f64 = 1e-10;

/// Mismatches whose envelope gap is below this are borderline.
pub const BORDERLINE_GAP: f64 = 1e-7;

pub const FIXTURES: &[&str] = &[
    "e2",
    "e5",
    "e6",
    "e7",
    "f4_tree3",
    "f4_tree4",
    "additive_demo",
    "pure_demo",
];

#[derive(Clone, Debug)]
pub struct GridEnvelope {
    pub grid: Vec<f64>,
    /// Bundles considered, in increasing mask order.
    pub bundles: Vec<Bundle>,
    /// Indices into `bundles` of the maximizers at each grid point.
    pub winners: Vec<Vec<usize>>,
    pub envelope: Vec<f64>,
    /// Best value minus runner-up at each grid point.
    pub margin: Vec<f64>,
    /// Bundles that are the unique maximizer at some grid point.
    pub support: BTreeSet<Bundle>,
    /// Probability mass of the cells each bundle wins (ties go to the
    /// smallest mask).
    pub measure: BTreeMap<Bundle, f64>,
}

fn tie_tol(best: f64) -> f64 {
    TIE_TOL * best.abs().max(1.0)
}

/// Cell boundaries halfway between grid points, clipped to the support.
fn cell_masses(dist: &TypeDistribution, grid: &[f64]) -> Vec<f64> {
    let (lo, hi) = dist.support();
    let m = grid.len();
    (0..m)
        .map(|i| {
            let a = if i == 0 { lo } else { 0.5 * (grid[i - 1] + grid[i]) };
            let b = if i + 1 == m { hi } else { 0.5 * (grid[i] + grid[i + 1]) };
            dist.cdf(b) - dist.cdf(a)
        })
        .collect()
}

/// Grid argmax over the model's bundles (or over `subset` when given).
pub fn grid_envelope_over(model: &VirtualModel, subset: Option<&[Bundle]>, grid_size: usize) -> Result<GridEnvelope> {
    if grid_size < 11 {
        return Err(Error::Argument(format!("grid size {grid_size} below 11")));
    }
    let bundles: Vec<Bundle> = match subset {
        Some(s) => {
            let mut v = s.to_vec();
            v.sort();
            v.dedup();
            v
        }
        None => model.bundles().to_vec(),
    };
    if bundles.is_empty() {
        return Err(Error::Argument("no bundles to envelope".into()));
    }
    let (lo, hi) = model.support();
    let grid = linspace(lo, hi, grid_size);
    let use_all = subset.is_none();
    let rows: Vec<(Vec<usize>, f64, f64)> = grid
        .par_iter()
        .map(|&t| {
            let vals = if use_all {
                model.eval_all(t)?
            } else {
                bundles.iter().map(|&b| model.eval_virtual(b, t)).collect::<Result<Vec<_>>>()?
            };
            Ok(argmax_set(&vals))
        })
        .collect::<Result<_>>()?;

    let masses = cell_masses(model.distribution(), &grid);
    let mut measure = BTreeMap::new();
    let mut support = BTreeSet::new();
    let mut winners = Vec::with_capacity(rows.len());
    let mut envelope = Vec::with_capacity(rows.len());
    let mut margin = Vec::with_capacity(rows.len());
    for ((w, best, gap), mass) in rows.into_iter().zip(masses) {
        *measure.entry(bundles[w[0]]).or_insert(0.0) += mass;
        if w.len() == 1 && gap > tie_tol(best) {
            support.insert(bundles[w[0]]);
        }
        winners.push(w);
        envelope.push(best);
        margin.push(gap);
    }
    Ok(GridEnvelope {
        grid,
        bundles,
        winners,
        envelope,
        margin,
        support,
        measure,
    })
}

/// `(indices within tolerance of the max, max, max minus runner-up)`.
fn argmax_set(vals: &[f64]) -> (Vec<usize>, f64, f64) {
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = tie_tol(best);
    let winners: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] >= best - tol).collect();
    let top = winners[0];
    let runner = vals
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    (winners, best, best - runner)
}

pub fn grid_envelope(model: &VirtualModel, grid_size: usize) -> Result<GridEnvelope> {
    grid_envelope_over(model, None, grid_size)
}

/// `∫ max_{b ∈ menu} φ(b,t) dF(t)` by cell-mass weighting on the grid.
pub fn grid_envelope_integral(model: &VirtualModel, menu: &[Bundle], grid_size: usize) -> Result<f64> {
    let env = grid_envelope_over(model, Some(menu), grid_size)?;
    let masses = cell_masses(model.distribution(), &env.grid);
    Ok(env.envelope.iter().zip(masses).map(|(v, m)| v * m).sum())
}

pub fn strict_best_response_set(model: &VirtualModel, grid_size: usize) -> Result<BTreeSet<Bundle>> {
    Ok(grid_envelope(model, grid_size)?.support)
}

/// Largest amount by which `b` beats every other bundle in `env`, over the
/// grid and a fine local search around the best grid point.
fn best_margin(model: &VirtualModel, env: &GridEnvelope, b: Bundle) -> Result<f64> {
    let k = env
        .bundles
        .iter()
        .position(|&x| x == b)
        .ok_or_else(|| Error::Argument(format!("{b} is not in the envelope")))?;
    let margin_at = |t: f64| -> Result<f64> {
        let vals = model.eval_all(t)?;
        let own = vals[k];
        let rest = vals
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(own - rest)
    };
    let mut best = f64::NEG_INFINITY;
    let mut at = 0;
    for (i, &t) in env.grid.iter().enumerate() {
        let m = margin_at(t)?;
        if m > best {
            best = m;
            at = i;
        }
    }
    let a = env.grid[at.saturating_sub(1)];
    let c = env.grid[(at + 1).min(env.grid.len() - 1)];
    for t in linspace(a, c, 401) {
        best = best.max(margin_at(t)?);
    }
    Ok(best)
}

/// Compares a solved menu with the grid support. Bundles in only one of the
/// two sets whose best margin is within `BORDERLINE_GAP` of zero are noted
/// as borderline rather than counted as mismatches.
pub fn compare(model: &VirtualModel, menu: &MenuSolution, env: &GridEnvelope) -> Result<ConditionReport> {
    let kept: BTreeSet<Bundle> = menu.kept.iter().copied().collect();
    let mut report = ConditionReport::new("oracle_agreement", Verdict::Holds).with_method("grid");
    if env.bundles.len() != model.bundles().len() {
        return Err(Error::Argument("envelope was not computed over the full universe".into()));
    }
    let mut mismatch = false;
    let diffs: BTreeMap<Bundle, &str> = kept
        .difference(&env.support)
        .map(|&b| (b, "kept_not_in_support"))
        .chain(env.support.difference(&kept).map(|&b| (b, "support_not_kept")))
        .collect();
    for (b, side) in diffs {
        let gap = best_margin(model, env, b)?;
        if gap.abs() < BORDERLINE_GAP {
            report.note(format!("{b} is borderline ({side}, margin {gap:e})"));
            report.witnesses.push(Witness::new("borderline", &[b], vec![gap]));
        } else {
            mismatch = true;
            report.witnesses.push(Witness::new(side, &[b], vec![gap]));
        }
    }
    if mismatch {
        report.holds = Verdict::Fails;
        if menu.forced {
            report.note("menu was solved with failing assumptions; mismatch is expected");
        }
    }
    Ok(report)
}

/// CSV rows `t, winner, envelope` with the smallest-mask winner.
pub fn envelope_csv(env: &GridEnvelope) -> String {
    let mut out = String::from("t,winner,envelope\n");
    for ((t, w), v) in env.grid.iter().zip(&env.winners).zip(&env.envelope) {
        let _ = writeln!(out, "{},{},{}", fmt12(*t), csv_key(env.bundles[w[0]]), fmt12(*v));
    }
    out
}

/// A bundle key as a CSV field, quoted when it holds a comma.
pub fn csv_key(b: Bundle) -> String {
    if b.len() > 1 {
        format!("\"{}\"", b.key())
    } else {
        b.key()
    }
}

/// Twelve significant digits, trailing zeros trimmed.
pub fn fmt12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{:.*e}", 11, x);
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{exp}")
    }
}

fn unit() -> TypeDistribution {
    TypeDistribution::uniform(0.0, 1.0).expect("valid support")
}

fn bundle(goods: &[usize], n: usize) -> Bundle {
    Bundle::from_goods(goods, n).expect("fixture bundle")
}

fn v_shape(left: [f64; 2], right: [f64; 2]) -> Curve {
    // coefficients are [intercept, slope]; the kink sits at 1/2
    Curve::piecewise(vec![0.5], vec![left.to_vec(), right.to_vec()]).expect("fixture curve")
}

fn tree_model(n: usize, table: &[(&[usize], f64, f64)]) -> Result<VirtualModel> {
    VirtualModel::parametric(
        n,
        unit(),
        true,
        table.iter().map(|&(g, a, c)| (bundle(g, n), a, c)),
        Curve::Identity,
        Curve::Zero,
    )
}

pub fn builtin_fixture(name: &str) -> Result<VirtualModel> {
    match name {
        "f4_tree3" => tree_model(
            3,
            &[
                (&[1], 1.0, 4.0),
                (&[1, 2], 2.0, 11.0 / 3.0),
                (&[1, 3], 11.0 / 4.0, 13.0 / 4.0),
                (&[1, 2, 3], 6.0, 1.0),
                (&[2], 1.0, 1.0),
                (&[3], 1.0, 2.0),
                (&[2, 3], 1.0, 3.0),
            ],
        ),
        "f4_tree4" => tree_model(
            4,
            &[
                (&[1], 1.0, 4.0),
                (&[1, 4], 13.0 / 6.0, 7.0 / 2.0),
                (&[1, 3], 8.0 / 3.0, 3.0),
                (&[1, 2], 29.0 / 12.0, 13.0 / 4.0),
                (&[1, 2, 4], 3.0, 3.0),
                (&[1, 3, 4], 23.0 / 8.0, 25.0 / 8.0),
                (&[1, 2, 3], 43.0 / 12.0, 11.0 / 4.0),
                (&[1, 2, 3, 4], 6.0, 1.0),
                // bundles without good 1: g1 = 1 and g2 below 4
                (&[2], 1.0, 0.5),
                (&[3], 1.0, 1.0),
                (&[2, 3], 1.0, 1.5),
                (&[4], 1.0, 2.0),
                (&[2, 4], 1.0, 2.5),
                (&[3, 4], 1.0, 3.0),
                (&[2, 3, 4], 1.0, 3.5),
            ],
        ),
        "e2" | "e5" | "e6" => {
            let n = if name == "e5" { 3 } else { 2 };
            let third = match name {
                "e6" => v_shape([1.0, -1.0], [0.0, 1.0]),
                _ => v_shape([2.0 / 3.0, -1.0 / 3.0], [1.0 / 3.0, 1.0 / 3.0]),
            };
            let mut curves = vec![
                (bundle(&[1], n), Curve::Identity),
                (bundle(&[2], n), Curve::affine(-1.0, 1.0)),
                (bundle(&[1, 2], n), third),
            ];
            if name == "e5" {
                curves.push((bundle(&[3], n), v_shape([7.0 / 8.0, -3.0 / 4.0], [1.0 / 8.0, 3.0 / 4.0])));
            }
            VirtualModel::virtual_curves(n, unit(), false, curves)
        }
        "e7" => VirtualModel::direct(
            1,
            TypeDistribution::uniform(0.0, 2.0)?,
            true,
            [(
                bundle(&[1], 1),
                Curve::Polynomial {
                    coeffs: vec![1.0, 2.0, -1.0],
                },
            )],
            DerivativeMode::Analytic,
        ),
        "additive_demo" => {
            let single = [(2.0, -1.0), (3.0, -1.2), (5.0, -1.5)];
            let params = Bundle::all(3)?.map(|b| {
                let (a, c) = b.goods().fold((0.0, 0.0), |(a, c), g| (a + single[g - 1].0, c + single[g - 1].1));
                (b, a, c)
            });
            VirtualModel::parametric(3, unit(), true, params, Curve::Identity, Curve::Zero)
        }
        "pure_demo" => {
            let params = Bundle::all(3)?.map(|b| {
                let k = b.len() as f64;
                (b, 2.0 * k, -k)
            });
            VirtualModel::parametric(3, unit(), true, params, Curve::Identity, Curve::Zero)
        }
        other => Err(Error::Argument(format!(
            "unknown fixture {other:?}; expected one of {}",
            FIXTURES.join(", ")
        ))),
    }
}

/// Random parametric model on the uniform unit interval with `h1(t) = t`:
/// `g1` grows with bundle size (plus noise, always positive) and `g2` is
/// arbitrary. Includes ∅.
pub fn random_parametric_model(n: usize, seed: u64) -> Result<VirtualModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<(Bundle, f64, f64)> = Bundle::all(n)?
        .map(|b| {
            let k = b.len() as f64;
            let g1 = k + rng.random_range(-0.45..0.45);
            let g2 = rng.random_range(-0.6..0.6) - 0.8 * k;
            (b, g1, g2)
        })
        .collect();
    VirtualModel::parametric(n, unit(), true, params, Curve::Identity, Curve::Zero)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        for name in FIXTURES {
            builtin_fixture(name).unwrap();
        }
        assert!(matches!(builtin_fixture("nope"), Err(Error::Argument(_))));
    }

    #[test]
    fn fixture_spot_values() {
        let e6 = builtin_fixture("e6").unwrap();
        assert_eq!(e6.eval_virtual(bundle(&[1, 2], 2), 0.25).unwrap(), 0.75);
        let t3 = builtin_fixture("f4_tree3").unwrap();
        let p = t3.endpoint_profile(bundle(&[1, 3], 3)).unwrap();
        assert_eq!((p.phi_lo, p.phi_hi), (3.25, 6.0));
        let e7 = builtin_fixture("e7").unwrap();
        assert!((e7.eval_virtual(bundle(&[1], 1), 4.0 / 3.0).unwrap() - 7.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn fmt12_examples() {
        assert_eq!(fmt12(1.0), "1");
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(-2.5), "-2.5");
        assert_eq!(fmt12(1e-9), "1e-9");
        assert_eq!(fmt12(123456.789), "123456.789");
    }

    #[test]
    fn single_bundle_envelope() {
        let m = VirtualModel::parametric(
            1,
            unit(),
            false,
            [(bundle(&[1], 1), 1.0, 0.0)],
            Curve::Identity,
            Curve::Zero,
        )
        .unwrap();
        let env = grid_envelope(&m, 11).unwrap();
        assert_eq!(env.support.len(), 1);
        assert!((env.measure[&bundle(&[1], 1)] - 1.0).abs() < 1e-15);
        assert!(grid_envelope(&m, 10).is_err());
    }

    #[test]
    fn random_models_are_reproducible() {
        let a = random_parametric_model(3, 7).unwrap();
        let b = random_parametric_model(3, 7).unwrap();
        assert_eq!(a.profiles().unwrap(), b.profiles().unwrap());
    }
}
