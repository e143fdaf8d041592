//! Menu shapes (pure, nested, tree) and the sufficient conditions that
//! predict them from endpoint values and sold-alone quantities.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::Bundle;
use crate::error::{Error, Result};
use crate::model::{ModelForm, VirtualModel};
use crate::numeric::bisect;
use crate::report::{ConditionReport, Verdict, Witness};

/// Ties between quantities, margins and top-type values.
pub const TIE_TOL: f64 = 1e-9;

/// Largest |φ(b, t_b)| accepted for a reported root.
pub const ROOT_RESIDUAL: f64 = 1e-10;

/// Strictness margin for the discrete convexity test.
pub const SLOPE_TOL: f64 = 1e-9;

/// Slack on the least-favorite chain and region inequalities.
pub const REGION_TOL: f64 = 1e-12;

pub const ADDITIVE_TOL: f64 = 1e-8;

/// Slack on the weak monotonicity of value ratios.
pub const RATIO_TOL: f64 = 1e-8;

const SIGN_PROBES: usize = 201;
const ADDITIVE_PROBES: usize = 21;
const RATIO_PROBES: usize = 201;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MenuShape {
    Pure,
    Nested,
    Tree,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MenuStructureLabel {
    pub label: MenuShape,
    pub root: Option<Bundle>,
    pub incomparable_witness: Option<(Bundle, Bundle)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormalizedCoordinates {
    pub bundle: Bundle,
    /// Position of φ(b, t_hi) between the root and the grand bundle.
    pub lambda: f64,
    /// Same at t_lo.
    pub mu: f64,
}

/// Sold-alone quantity of one bundle.
///
/// `margin` breaks ties between bundles that sell to everyone or to no one:
/// it is φ(t_lo) when `q = 1`, φ(t_hi) when `q = 0`, and zero otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SoldAlone {
    pub q: f64,
    pub t_b: Option<f64>,
    pub margin: f64,
}

impl SoldAlone {
    /// Orders by quantity, then by margin, treating near-ties as equal.
    pub fn cmp_key(&self, other: &SoldAlone) -> Ordering {
        if (self.q - other.q).abs() > TIE_TOL {
            return self.q.total_cmp(&other.q);
        }
        let scale = 1f64.max(self.margin.abs()).max(other.margin.abs());
        if (self.margin - other.margin).abs() > TIE_TOL * scale {
            return self.margin.total_cmp(&other.margin);
        }
        Ordering::Equal
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct QuantityTable {
    pub q: BTreeMap<Bundle, f64>,
    pub root_type: BTreeMap<Bundle, Option<f64>>,
    pub margin: BTreeMap<Bundle, f64>,
}

impl QuantityTable {
    pub fn get(&self, b: Bundle) -> Option<SoldAlone> {
        Some(SoldAlone {
            q: *self.q.get(&b)?,
            t_b: *self.root_type.get(&b)?,
            margin: *self.margin.get(&b)?,
        })
    }
}

pub fn classify(menu: &[Bundle]) -> Result<MenuStructureLabel> {
    let first = menu.first().ok_or_else(|| Error::Argument("cannot classify an empty menu".into()))?;
    if menu.iter().any(|b| b.n() != first.n()) {
        return Err(Error::Argument("menu mixes bundle universes".into()));
    }
    let mut members: Vec<Bundle> = menu.iter().copied().filter(|b| !b.is_empty()).collect();
    members.sort();
    members.dedup();
    members.sort_by_key(|b| (b.len(), b.mask()));

    let incomparable = members
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| members[i + 1..].iter().map(move |&b| (a, b)))
        .find(|&(a, b)| a.is_incomparable(b));
    // the smallest member is the only possible root
    let root = members.first().copied().filter(|&r| members.iter().all(|&b| r.is_subset_of(b)));

    let label = if members.len() == 1 && members[0].is_grand() {
        MenuShape::Pure
    } else if incomparable.is_none() {
        MenuShape::Nested
    } else if root.is_some() {
        MenuShape::Tree
    } else {
        MenuShape::Other
    };
    Ok(MenuStructureLabel {
        label,
        root: if label == MenuShape::Other { None } else { root },
        incomparable_witness: incomparable,
    })
}

pub fn sold_alone_quantity(model: &VirtualModel, b: Bundle) -> Result<(f64, Option<f64>)> {
    let s = sold_alone(model, b)?;
    Ok((s.q, s.t_b))
}

/// Root of φ(b,·) located from a sign probe. The quantity is the mass of
/// types with positive virtual value, so an increasing curve sells
/// `1 - F(t_b)`.
pub fn sold_alone(model: &VirtualModel, b: Bundle) -> Result<SoldAlone> {
    if b.is_empty() {
        return Err(Error::Argument("the sold-alone quantity of ∅ is undefined".into()));
    }
    let dist = model.distribution();
    let (lo, hi) = model.support();
    let grid = model.probe_grid(SIGN_PROBES);
    let vals: Vec<f64> = grid.iter().map(|&t| model.eval_virtual(b, t)).collect::<Result<_>>()?;
    let nonzero: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Ambiguity(format!("φ({b},·) vanishes on the whole probe grid")));
    }
    let changes: Vec<(usize, usize)> = nonzero
        .windows(2)
        .filter(|w| vals[w[0]].signum() != vals[w[1]].signum())
        .map(|w| (w[0], w[1]))
        .collect();
    match changes.as_slice() {
        [] => {
            let positive = vals[nonzero[0]] > 0.0;
            Ok(if positive {
                SoldAlone { q: 1.0, t_b: None, margin: vals[0] }
            } else {
                SoldAlone { q: 0.0, t_b: None, margin: vals[vals.len() - 1] }
            })
        }
        &[(i, j)] => {
            let t_b = match j - i {
                1 => bisect(|t| model.eval_virtual(b, t), grid[i], grid[j])?,
                2 => grid[i + 1],
                _ => {
                    return Err(Error::Ambiguity(format!(
                        "φ({b},·) vanishes on [{}, {}]",
                        grid[i + 1],
                        grid[j - 1]
                    )))
                }
            };
            let residual = model.eval_virtual(b, t_b)?;
            if residual.abs() >= ROOT_RESIDUAL {
                return Err(Error::numeric(format!("root of φ({b},·) at t = {t_b}"), residual));
            }
            let below = dist.cdf(t_b.clamp(lo, hi));
            let q = if vals[j] > 0.0 { 1.0 - below } else { below };
            Ok(SoldAlone { q, t_b: Some(t_b), margin: 0.0 })
        }
        _ => Err(Error::Ambiguity(format!(
            "φ({b},·) changes sign {} times on the probe grid",
            changes.len()
        ))),
    }
}

/// Sold-alone quantities of every non-empty bundle in the model.
pub fn quantity_table(model: &VirtualModel) -> Result<QuantityTable> {
    let bundles: Vec<Bundle> = model.entries().iter().copied().filter(|b| !b.is_empty()).collect();
    let rows: Vec<SoldAlone> = bundles.par_iter().map(|&b| sold_alone(model, b)).collect::<Result<_>>()?;
    let mut table = QuantityTable::default();
    for (b, s) in bundles.into_iter().zip(rows) {
        table.q.insert(b, s.q);
        table.root_type.insert(b, s.t_b);
        table.margin.insert(b, s.margin);
    }
    Ok(table)
}

fn top_value(model: &VirtualModel, b: Bundle) -> Result<f64> {
    model.eval_value(b, model.support().1)
}

fn top_values(model: &VirtualModel) -> Result<BTreeMap<Bundle, f64>> {
    model.entries().iter().map(|&b| Ok((b, top_value(model, b)?))).collect()
}

fn value_tol(a: f64, b: f64) -> f64 {
    TIE_TOL * 1f64.max(a.abs()).max(b.abs())
}

/// First pair `b ⊊ b'` (both passing `keep`) whose top-type values are not
/// increasing. With a full bundle universe single-good extensions suffice.
fn top_value_violation(
    model: &VirtualModel,
    top: &BTreeMap<Bundle, f64>,
    strict: bool,
    keep: impl Fn(Bundle) -> bool,
) -> Option<(Bundle, Bundle)> {
    let n = model.n();
    let full = top.len() == 1usize << n;
    let bad = |b: Bundle, c: Bundle| {
        let (vb, vc) = (top[&b], top[&c]);
        let tol = value_tol(vb, vc);
        if strict {
            vc <= vb + tol
        } else {
            vc < vb - tol
        }
    };
    for &b in top.keys().filter(|&&b| keep(b)) {
        if full {
            for g in (1..=n).filter(|&g| !b.contains_good(g)) {
                let c = b.with_good(g);
                if keep(c) && bad(b, c) {
                    return Some((b, c));
                }
            }
        } else {
            for &c in top.keys() {
                if c != b && b.is_subset_of(c) && keep(c) && bad(b, c) {
                    return Some((b, c));
                }
            }
        }
    }
    None
}

/// Outcome of the root search shared by the tree checks.
struct RootSearch {
    root: Option<Bundle>,
    quantities: QuantityTable,
    top: BTreeMap<Bundle, f64>,
    witnesses: Vec<Witness>,
    outsiders_below: bool,
}

fn find_root(model: &VirtualModel) -> Result<RootSearch> {
    let quantities = quantity_table(model)?;
    let top = top_values(model)?;
    let mut witnesses = Vec::new();
    let mut ranked: Vec<(Bundle, SoldAlone)> =
        quantities.q.keys().map(|&b| (b, quantities.get(b).expect("tabulated"))).collect();
    ranked.sort_by(|x, y| y.1.cmp_key(&x.1).then(x.0.cmp(&y.0)));
    let root = match ranked.as_slice() {
        [] => None,
        [(b, s)] => Some((*b, *s)),
        [(b, s), (c, t), ..] => {
            if s.cmp_key(t) == Ordering::Equal {
                witnesses.push(Witness::new("quantity_tie", &[*b, *c], vec![s.q, s.margin, t.q, t.margin]));
                None
            } else {
                Some((*b, *s))
            }
        }
    };
    let mut outsiders_below = false;
    if let Some((r, s)) = root {
        witnesses.push(Witness::new("root", &[r], vec![s.q, s.margin]));
        let vr = top[&r];
        let offender = top
            .iter()
            .find(|&(&b, &vb)| !b.is_superset_of(r) && vb >= vr - value_tol(vb, vr));
        match offender {
            Some((&b, &vb)) => witnesses.push(Witness::new("outsider_top_value", &[b, r], vec![vb, vr])),
            None => outsiders_below = true,
        }
    }
    Ok(RootSearch {
        root: root.map(|(r, _)| r),
        quantities,
        top,
        witnesses,
        outsiders_below,
    })
}

/// Whether the minimal menu must be a tree or nested: a unique largest
/// sold-alone quantity picks the root, and either every bundle outside the
/// root's upper set is worth less to the top type than the root, or top-type
/// values increase with inclusion and the partial union quantity condition
/// holds for the root.
pub fn check_tree_or_nested_conditions(model: &VirtualModel) -> Result<ConditionReport> {
    let search = find_root(model)?;
    let mut report = ConditionReport::new("tree_or_nested", Verdict::Fails);
    report.witnesses = search.witnesses.clone();
    let Some(root) = search.root else {
        report.note("no unique bundle with the largest sold-alone quantity");
        return Ok(report);
    };

    let increasing = top_value_violation(model, &search.top, true, |_| true);
    if let Some((b, c)) = increasing {
        report.witnesses.push(Witness::new("top_value_order", &[b, c], vec![search.top[&b], search.top[&c]]));
    }
    let qr = search.quantities.get(root).expect("root tabulated");
    let mut union_ok = true;
    for (&b, _) in search.quantities.q.iter().filter(|(&b, _)| !b.is_superset_of(root)) {
        let u = b.union(root);
        let (Some(qb), Some(qu)) = (search.quantities.get(b), search.quantities.get(u)) else {
            report.note(format!("union {u} missing from the model"));
            union_ok = false;
            continue;
        };
        let lower = if qb.cmp_key(&qr) == Ordering::Less { qb } else { qr };
        if qu.cmp_key(&lower) == Ordering::Less {
            report
                .witnesses
                .push(Witness::new("partial_union_quantity", &[b, root, u], vec![qb.q, qr.q, qu.q]));
            union_ok = false;
            break;
        }
    }
    let union_route = increasing.is_none() && union_ok;
    let method = match (search.outsiders_below, union_route) {
        (true, true) => "both",
        (true, false) => "outsider_values",
        (false, true) => "partial_union",
        (false, false) => return Ok(report),
    };
    report.holds = Verdict::Holds;
    Ok(report.with_method(method))
}

/// Normalized coordinates of every bundle strictly between `root` and the
/// grand bundle.
pub fn normalized_coordinates(model: &VirtualModel, root: Bundle) -> Result<Vec<NormalizedCoordinates>> {
    let grand = model.grand();
    let (r, g) = (model.endpoint_profile(root)?, model.endpoint_profile(grand)?);
    let (dh, dl) = (g.phi_hi - r.phi_hi, g.phi_lo - r.phi_lo);
    for (what, d, a, b) in [("t_hi", dh, g.phi_hi, r.phi_hi), ("t_lo", dl, g.phi_lo, r.phi_lo)] {
        if d.abs() <= 1e-12 * 1f64.max(a.abs()).max(b.abs()) {
            return Err(Error::Degenerate(format!("φ({grand}) = φ({root}) at {what}")));
        }
    }
    let mut out = Vec::new();
    for &b in model.entries() {
        if b != root && b != grand && b.is_superset_of(root) {
            let p = model.endpoint_profile(b)?;
            out.push(NormalizedCoordinates {
                bundle: b,
                lambda: (p.phi_hi - r.phi_hi) / dh,
                mu: (p.phi_lo - r.phi_lo) / dl,
            });
        }
    }
    Ok(out)
}

/// Shared hypotheses of the two tree checks: the root from the quantity
/// ranking, outsiders below the root at the top type, and top-type values
/// strictly increasing between root and grand bundle.
fn tree_hypotheses(model: &VirtualModel, report: &mut ConditionReport) -> Result<Option<Bundle>> {
    let search = find_root(model)?;
    report.witnesses.extend(search.witnesses.iter().cloned());
    let Some(root) = search.root else {
        report.note("no unique bundle with the largest sold-alone quantity");
        return Ok(None);
    };
    if !search.outsiders_below {
        report.note("a bundle without the root is worth as much to the top type as the root");
        return Ok(None);
    }
    if let Some((b, c)) = top_value_violation(model, &search.top, true, |b| b.is_superset_of(root)) {
        report.witnesses.push(Witness::new("top_value_order", &[b, c], vec![search.top[&b], search.top[&c]]));
        return Ok(None);
    }
    if root.is_grand() {
        report.note("the root is the grand bundle");
        return Ok(None);
    }
    Ok(Some(root))
}

/// Every bundle between root and grand bundle survives when the normalized
/// coordinates lie on an increasing, strictly convex curve through (0,0)
/// and (1,1).
pub fn check_full_tree(model: &VirtualModel) -> Result<ConditionReport> {
    let mut report = ConditionReport::new("full_tree", Verdict::Fails);
    let Some(root) = tree_hypotheses(model, &mut report)? else {
        return Ok(report);
    };
    let mut pts = normalized_coordinates(model, root)?;
    pts.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.bundle.cmp(&b.bundle)));
    for p in &pts {
        report.witnesses.push(Witness::new("coordinates", &[p.bundle], vec![p.lambda, p.mu]));
    }
    if pts.len() < 2 {
        report.note(format!("only {} bundle(s) strictly between root and grand bundle", pts.len()));
        return Ok(report);
    }
    if let Some(p) = pts.iter().find(|p| !(p.lambda > 0.0 && p.lambda < 1.0)) {
        report.witnesses.push(Witness::new("lambda_out_of_range", &[p.bundle], vec![p.lambda]));
        return Ok(report);
    }
    // chain including the virtual endpoints
    let mut xs = vec![0.0];
    let mut ys = vec![0.0];
    xs.extend(pts.iter().map(|p| p.lambda));
    ys.extend(pts.iter().map(|p| p.mu));
    xs.push(1.0);
    ys.push(1.0);
    let label = |k: usize| -> Vec<Bundle> {
        if k == 0 || k > pts.len() {
            Vec::new()
        } else {
            vec![pts[k - 1].bundle]
        }
    };
    for k in 1..xs.len() {
        if ys[k] <= ys[k - 1] + SLOPE_TOL || xs[k] <= xs[k - 1] + SLOPE_TOL {
            let mut bs = label(k - 1);
            bs.extend(label(k));
            report
                .witnesses
                .push(Witness::new("not_increasing", &bs, vec![xs[k - 1], ys[k - 1], xs[k], ys[k]]));
            return Ok(report);
        }
    }
    let slopes: Vec<f64> = (1..xs.len()).map(|k| (ys[k] - ys[k - 1]) / (xs[k] - xs[k - 1])).collect();
    for k in 1..slopes.len() {
        if slopes[k] <= slopes[k - 1] + SLOPE_TOL {
            report.witnesses.push(Witness::new("not_strictly_convex", &label(k), vec![slopes[k - 1], slopes[k]]));
            return Ok(report);
        }
    }
    report.holds = Verdict::Holds;
    Ok(report.with_method("discrete_convexity"))
}

fn strictly_less(a: f64, b: f64) -> bool {
    a < b - REGION_TOL
}

/// The least-favorite good `i` splits the tree into two upgrade paths,
/// `root ∪ {i}` and `b* ∖ {i}`, both of which survive when the chain and
/// region inequalities hold.
pub fn check_least_favorite_tree(model: &VirtualModel) -> Result<ConditionReport> {
    let n = model.n();
    if n < 3 {
        return Err(Error::Argument(format!("a least-favorite tree needs at least 3 goods, got {n}")));
    }
    let mut report = ConditionReport::new("least_favorite_tree", Verdict::Fails);
    let Some(root) = tree_hypotheses(model, &mut report)? else {
        return Ok(report);
    };
    let grand = model.grand();

    // argmax over j of v(b* \ {j}, t_hi)
    let mut drops = Vec::with_capacity(n);
    for j in 1..=n {
        drops.push((j, top_value(model, grand.without_good(j))?));
    }
    drops.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if drops.len() > 1 && drops[0].1 - drops[1].1 <= value_tol(drops[0].1, drops[1].1) {
        return Err(Error::Ambiguity(format!(
            "goods {} and {} tie for the most valuable removal",
            drops[0].0, drops[1].0
        )));
    }
    let i = drops[0].0;

    // argmin over j outside the root of v(root ∪ {j}, t_hi); ties go to the
    // larger bottom-type virtual value
    let mut adds = Vec::new();
    for j in (1..=n).filter(|&j| !root.contains_good(j)) {
        let b = root.with_good(j);
        let p = model.endpoint_profile(b)?;
        adds.push((j, top_value(model, b)?, p.phi_lo));
    }
    let least = adds.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
    let mut tied: Vec<_> = adds.iter().filter(|a| a.1 - least <= value_tol(a.1, least)).collect();
    if tied.len() > 1 {
        tied.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        if tied[0].2 - tied[1].2 <= value_tol(tied[0].2, tied[1].2) {
            return Err(Error::Ambiguity(format!(
                "goods {} and {} tie for the cheapest addition to the root",
                tied[0].0, tied[1].0
            )));
        }
        report.note(format!(
            "{} goods tie for the cheapest addition to the root; good {} has the largest bottom-type virtual value",
            tied.len(),
            tied[0].0
        ));
    }
    let i_add = tied[0].0;
    let single = Bundle::from_goods(&[i], n)?;
    if i_add != i {
        report.witnesses.push(Witness::new(
            "least_favorite_mismatch",
            &[single, Bundle::from_goods(&[i_add], n)?],
            vec![],
        ));
        return Ok(report);
    }

    let first = root.with_good(i);
    let second = grand.without_good(i);
    let coords = normalized_coordinates(model, root)?;
    let find = |b: Bundle| {
        coords
            .iter()
            .find(|c| c.bundle == b)
            .copied()
            .ok_or_else(|| Error::MissingParameter(b.to_string()))
    };
    let (c1, c2) = (find(first)?, find(second)?);
    let (l1, m1, l2, m2) = (c1.lambda, c1.mu, c2.lambda, c2.mu);
    report.witnesses.push(Witness::new("least_favorite", &[single, first, second], vec![l1, m1, l2, m2]));

    let mut failures = Vec::new();
    for (name, v) in [("lambda1", l1), ("mu1", m1), ("lambda2", l2), ("mu2", m2)] {
        if !(v > REGION_TOL && v < 1.0 - REGION_TOL) {
            failures.push(format!("{name} in (0,1)"));
        }
    }
    if !strictly_less(l1, l2) {
        failures.push("lambda1 < lambda2".into());
    }
    if failures.is_empty() {
        let left = m1 / l1;
        let mid = (m2 - m1) / (l2 - l1);
        let right = (1.0 - m2) / (1.0 - l2);
        report.witnesses.push(Witness::new("chain", &[first, second], vec![left, mid, right]));
        if !strictly_less(left, mid) {
            failures.push("mu1/lambda1 < (mu2-mu1)/(lambda2-lambda1)".into());
        }
        if !strictly_less(mid, right) {
            failures.push("(mu2-mu1)/(lambda2-lambda1) < (1-mu2)/(1-lambda2)".into());
        }
        if failures.is_empty() {
            for c in coords.iter().filter(|c| c.bundle != first && c.bundle != second) {
                let (x, y) = (c.lambda, c.mu);
                let inside = y > left * x + REGION_TOL
                    && y > right * x + (m2 - l2) / (1.0 - l2) + REGION_TOL
                    && x >= l1 - REGION_TOL
                    && y <= m2 + REGION_TOL;
                if !inside {
                    report.witnesses.push(Witness::new("outside_region", &[c.bundle], vec![x, y]));
                    failures.push(format!("{} outside the admissible region", c.bundle));
                }
            }
        }
    }
    if failures.is_empty() {
        report.holds = Verdict::Holds;
        return Ok(report.with_method("chain_and_region"));
    }
    for f in failures {
        report.note(format!("violated: {f}"));
    }
    Ok(report)
}

/// Confirms that every multi-good bundle's curve is the sum of its
/// singletons': values for direct models, virtual values otherwise.
fn check_additive(model: &VirtualModel) -> Result<()> {
    let n = model.n();
    let grid = model.probe_grid(ADDITIVE_PROBES);
    let direct = matches!(model.form(), ModelForm::Direct { .. });
    let eval = |b: Bundle, t: f64| if direct { model.eval_value(b, t) } else { model.eval_virtual(b, t) };
    let singles: Vec<Bundle> = (1..=n).map(|g| Bundle::from_goods(&[g], n)).collect::<Result<_>>()?;
    for s in &singles {
        if !model.has_bundle(*s) {
            return Err(Error::Argument(format!("additivity needs singleton {s}")));
        }
    }
    for &b in model.entries().iter().filter(|b| b.len() >= 2) {
        for &t in &grid {
            let whole = eval(b, t)?;
            let mut sum = 0.0;
            for g in b.goods() {
                sum += eval(singles[g - 1], t)?;
            }
            if (whole - sum).abs() > ADDITIVE_TOL * 1f64.max(sum.abs()) {
                return Err(Error::Argument(format!(
                    "model is not additive: {b} at t = {t} is {whole}, singletons sum to {sum}"
                )));
            }
        }
    }
    Ok(())
}

/// Nested menu for additive values: singletons enter in increasing order of
/// φ(t_hi)/φ(t_lo).
pub fn additive_nested_menu(model: &VirtualModel) -> Result<(Vec<Bundle>, ConditionReport)> {
    check_additive(model)?;
    let n = model.n();
    let mut report = ConditionReport::new("additive_nested", Verdict::Holds).with_method("ratio_order");
    let mut ratios = Vec::with_capacity(n);
    for g in 1..=n {
        let s = Bundle::from_goods(&[g], n)?;
        let p = model.endpoint_profile(s)?;
        if p.phi_lo >= 0.0 {
            report.holds = Verdict::Fails;
            report
                .witnesses
                .push(Witness::new("nonnegative_bottom_value", &[s], vec![p.phi_lo]));
        }
        if p.phi_hi <= 0.0 {
            report.holds = Verdict::Fails;
            report.witnesses.push(Witness::new("nonpositive_top_value", &[s], vec![p.phi_hi]));
        }
        ratios.push((s, p.phi_hi / p.phi_lo));
    }
    ratios.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for w in ratios.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b.1 - a.1 <= TIE_TOL * 1f64.max(a.1.abs()).max(b.1.abs()) {
            report.holds = Verdict::Fails;
            report.witnesses.push(Witness::new("ratio_tie", &[a.0, b.0], vec![a.1, b.1]));
        }
    }
    let mut menu = Vec::with_capacity(n + 1);
    let mut acc = Bundle::empty(n)?;
    if model.include_empty() {
        menu.push(acc);
    }
    for (s, _) in &ratios {
        acc = acc.union(*s);
        if !model.has_bundle(acc) {
            return Err(Error::MissingParameter(acc.to_string()));
        }
        menu.push(acc);
    }
    Ok((menu, report))
}

/// Pure bundling: the grand bundle is the top type's unique favorite and
/// has a weakly largest sold-alone quantity. On success the predicted menu
/// is reported as a `predicted_menu` witness.
pub fn check_pure_bundling(model: &VirtualModel) -> Result<ConditionReport> {
    let grand = model.grand();
    let mut report = ConditionReport::new("pure_bundling", Verdict::Holds).with_method("quantity_order");
    let top = top_values(model)?;
    let vg = *top.get(&grand).ok_or_else(|| Error::MissingParameter(grand.to_string()))?;
    if let Some((&b, &vb)) = top.iter().find(|&(&b, &vb)| b != grand && vb >= vg - value_tol(vb, vg)) {
        report.holds = Verdict::Fails;
        report.witnesses.push(Witness::new("top_value_not_unique", &[b, grand], vec![vb, vg]));
    }
    let quantities = quantity_table(model)?;
    let qg = quantities.get(grand).expect("grand tabulated");
    for (&b, _) in quantities.q.iter().filter(|(&b, _)| b != grand) {
        let qb = quantities.get(b).expect("tabulated");
        if qg.cmp_key(&qb) == Ordering::Less {
            report.holds = Verdict::Fails;
            report
                .witnesses
                .push(Witness::new("quantity_above_grand", &[b, grand], vec![qb.q, qb.margin, qg.q, qg.margin]));
            break;
        }
    }
    if report.holds() {
        let mut menu = vec![grand];
        if model.include_empty() {
            menu.insert(0, Bundle::empty(model.n())?);
        }
        report.witnesses.push(Witness::new("predicted_menu", &menu, vec![]));
    }
    Ok(report)
}

/// Union quantity condition over all bundle pairs plus weakly increasing
/// top-type values. Returns the cumulative-union menu in descending
/// quantity order; it contains the minimal menu but may be larger.
pub fn check_union_quantity(model: &VirtualModel) -> Result<(ConditionReport, Vec<Bundle>)> {
    let quantities = quantity_table(model)?;
    let top = top_values(model)?;
    let mut report = ConditionReport::new("union_quantity", Verdict::Holds).with_method("pairwise");
    if let Some((b, c)) = top_value_violation(model, &top, false, |_| true) {
        report.holds = Verdict::Fails;
        report.witnesses.push(Witness::new("top_value_order", &[b, c], vec![top[&b], top[&c]]));
    }
    let bundles: Vec<Bundle> = quantities.q.keys().copied().collect();
    let pairs: Vec<(Bundle, Bundle)> = bundles
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| bundles[i + 1..].iter().map(move |&b| (a, b)))
        .filter(|(a, b)| a.is_incomparable(*b))
        .collect();
    let outcomes: Vec<Option<Witness>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let u = a.union(b);
            let (qa, qb) = (quantities.get(a)?, quantities.get(b)?);
            let Some(qu) = quantities.get(u) else {
                return Some(Witness::new("union_missing", &[a, b, u], vec![]));
            };
            let lower = if qa.cmp_key(&qb) == Ordering::Less { qa } else { qb };
            (qu.cmp_key(&lower) == Ordering::Less)
                .then(|| Witness::new("union_quantity", &[a, b, u], vec![qa.q, qb.q, qu.q]))
        })
        .collect();
    if let Some(w) = outcomes.into_iter().flatten().next() {
        report.holds = Verdict::Fails;
        report.witnesses.push(w);
    }

    let mut ranked: Vec<(Bundle, SoldAlone)> = bundles.iter().map(|&b| (b, quantities.get(b).expect("tabulated"))).collect();
    ranked.sort_by(|x, y| y.1.cmp_key(&x.1).then(x.0.cmp(&y.0)));
    let mut menu = Vec::new();
    let mut acc = Bundle::empty(model.n())?;
    if model.include_empty() {
        menu.push(acc);
    }
    for (b, _) in ranked {
        let next = acc.union(b);
        if next != acc {
            acc = next;
            menu.push(acc);
        }
    }
    Ok((report, menu))
}

/// First grid step where `r` breaks the requested monotonicity.
fn ratio_break(r: &[(f64, f64)], kind: RatioTrend) -> Option<(f64, f64, f64, f64)> {
    r.windows(2).find_map(|w| {
        let ((t0, a), (t1, b)) = (w[0], w[1]);
        let ok = match kind {
            RatioTrend::NonDecreasing => b >= a - RATIO_TOL * 1f64.max(a.abs()),
            RatioTrend::StrictlyDecreasing => b < a,
            RatioTrend::StrictlyIncreasing => b > a,
        };
        (!ok).then_some((t0, a, t1, b))
    })
}

#[derive(Clone, Copy)]
enum RatioTrend {
    NonDecreasing,
    StrictlyDecreasing,
    StrictlyIncreasing,
}

/// Valuation-ratio conditions under which an inclusion-ordered menu ending
/// in the grand bundle is the minimal menu for every admissible type
/// distribution. Grid points where a denominator vanishes are skipped.
pub fn check_robust_ratios(model: &VirtualModel, menu: &[Bundle]) -> Result<ConditionReport> {
    let grand = model.grand();
    if menu.last() != Some(&grand) {
        return Err(Error::Argument("menu must end with the grand bundle".into()));
    }
    if let Some(w) = menu.windows(2).find(|w| !(w[0].is_subset_of(w[1]) && w[0] != w[1])) {
        return Err(Error::Argument(format!("menu is not inclusion-ordered at {} then {}", w[0], w[1])));
    }
    let grid = model.probe_grid(RATIO_PROBES);
    let values = |b: Bundle| -> Result<Vec<f64>> { grid.iter().map(|&t| model.eval_value(b, t)).collect() };
    let mut cache: BTreeMap<Bundle, Vec<f64>> = BTreeMap::new();
    let mut lookup = |b: Bundle| -> Result<Vec<f64>> {
        if let Some(v) = cache.get(&b) {
            return Ok(v.clone());
        }
        let v = values(b)?;
        cache.insert(b, v.clone());
        Ok(v)
    };
    let vg = lookup(grand)?;
    let scale = vg.iter().fold(1f64, |m, v| m.max(v.abs()));
    let ratio = |num: &[f64], den: &[f64]| -> Vec<(f64, f64)> {
        grid.iter()
            .zip(num.iter().zip(den))
            .filter(|(_, (_, d))| d.abs() > 1e-9 * scale)
            .map(|(&t, (n, d))| (t, n / d))
            .collect()
    };
    let mut report = ConditionReport::new("robust_ratios", Verdict::Holds).with_method("grid");
    let fail = |report: &mut ConditionReport, w: Witness| {
        report.holds = Verdict::Fails;
        report.witnesses.push(w);
    };

    // the grand bundle is everyone's favorite
    for &b in model.entries() {
        let vb = lookup(b)?;
        if let Some(k) = (0..grid.len()).find(|&k| vb[k] > vg[k] + RATIO_TOL * 1f64.max(vg[k].abs())) {
            fail(&mut report, Witness::new("above_grand", &[b, grand], vec![grid[k], vb[k], vg[k]]));
            break;
        }
    }
    for w in menu.windows(2) {
        let (a, b) = (top_value(model, w[0])?, top_value(model, w[1])?);
        if b <= a + value_tol(a, b) {
            fail(&mut report, Witness::new("top_value_order", &[w[0], w[1]], vec![a, b]));
        }
    }

    // (i) bundles outside the menu
    for &b in model.entries().iter().filter(|b| !menu.contains(b)) {
        if let Some((t0, a, t1, c)) = ratio_break(&ratio(&lookup(b)?, &vg), RatioTrend::NonDecreasing) {
            fail(&mut report, Witness::new("outside_ratio_decreases", &[b, grand], vec![t0, a, t1, c]));
        }
    }
    // (ii) consecutive members; a zero-valued ∅ gives no ratio
    for w in menu.windows(2).filter(|w| !w[0].is_empty()) {
        let r = ratio(&lookup(w[0])?, &lookup(w[1])?);
        if let Some((t0, a, t1, c)) = ratio_break(&r, RatioTrend::StrictlyDecreasing) {
            fail(&mut report, Witness::new("adjacent_ratio_not_decreasing", &[w[0], w[1]], vec![t0, a, t1, c]));
        }
    }
    // (iii) spread of the neighbors relative to the middle member
    for w in menu.windows(3) {
        let (p, m, x) = (lookup(w[0])?, lookup(w[1])?, lookup(w[2])?);
        let spread: Vec<f64> = p.iter().zip(&x).map(|(a, b)| a - b).collect();
        if let Some((t0, a, t1, c)) = ratio_break(&ratio(&spread, &m), RatioTrend::StrictlyIncreasing) {
            fail(&mut report, Witness::new("spread_ratio_not_increasing", w, vec![t0, a, t1, c]));
        }
    }
    Ok(report)
}
