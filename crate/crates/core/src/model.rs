//! Virtual value models: evaluation of φ, v and marginal revenue, plus the
//! monotonic-differences and single-crossing assumption checks.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::curve::Curve;
use crate::distribution::TypeDistribution;
use crate::error::{Error, Result};
use crate::numeric::{integrate_split, linspace, QUAD_TOL};
use crate::report::{ConditionReport, Verdict, Witness};

/// Endpoint pairs closer than this in both coordinates are duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;

/// Probe points used when checking that `h1` is monotone.
const H1_PROBES: usize = 101;

/// Probe grid for the single-crossing detection.
const SCD_GRID: usize = 201;

/// Mixture falsification is only attempted up to this many bundles.
const SCD_MIXTURE_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelForm {
    /// `φ(b,t) = g1(b) h1(t) + g2(b) + h2(t)`.
    Parametric {
        g1: Vec<f64>,
        g2: Vec<f64>,
        h1: Curve,
        h2: Curve,
    },
    /// Value curves `v(b,·)`; φ follows from the hazard-rate transform.
    Direct {
        values: Vec<Curve>,
        derivative: DerivativeMode,
    },
    /// Virtual value curves given outright; `v` is reconstructed.
    Virtual { curves: Vec<Curve> },
}

impl ModelForm {
    pub fn name(&self) -> &'static str {
        match self {
            ModelForm::Parametric { .. } => "parametric",
            ModelForm::Direct { .. } => "direct",
            ModelForm::Virtual { .. } => "virtual",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EndpointProfile {
    pub bundle: Bundle,
    pub phi_lo: f64,
    pub phi_hi: f64,
}

#[derive(Clone, Debug)]
pub struct VirtualModel {
    n: usize,
    dist: TypeDistribution,
    include_empty: bool,
    form: ModelForm,
    /// Every bundle with data, sorted by mask; form vectors share this order.
    entries: Vec<Bundle>,
    index: HashMap<u32, usize>,
    /// The bundle universe the algorithm runs on (entries minus duplicates).
    active: Vec<Bundle>,
    /// Slot in `entries` of each active bundle.
    active_slots: Vec<usize>,
    aliases: BTreeMap<Bundle, Bundle>,
    notes: Vec<String>,
}

impl VirtualModel {
    pub fn parametric(
        n: usize,
        dist: TypeDistribution,
        include_empty: bool,
        params: impl IntoIterator<Item = (Bundle, f64, f64)>,
        h1: Curve,
        h2: Curve,
    ) -> Result<Self> {
        let mut notes = Vec::new();
        let mut table: BTreeMap<Bundle, (f64, f64)> = BTreeMap::new();
        for (b, a, c) in params {
            if !(a.is_finite() && c.is_finite()) {
                return Err(Error::Validation(format!("non-finite parameters for {b}")));
            }
            if table.insert(b, (a, c)).is_some() {
                return Err(Error::Validation(format!("bundle {b} given twice")));
            }
        }
        let (lo, hi) = dist.support();
        if !h1.is_monotone_on(lo, hi, H1_PROBES) {
            return Err(Error::Validation("h1 is not monotone on the support".into()));
        }
        normalize_empty(n, include_empty, &mut table, (0.0, 0.0), &mut notes, |&(a, c)| {
            a == 0.0 && c == 0.0
        })?;
        let entries: Vec<Bundle> = table.keys().copied().collect();
        let g1 = table.values().map(|p| p.0).collect();
        let g2 = table.values().map(|p| p.1).collect();
        VirtualModel::finish(n, dist, include_empty, ModelForm::Parametric { g1, g2, h1, h2 }, entries, notes)
    }

    pub fn direct(
        n: usize,
        dist: TypeDistribution,
        include_empty: bool,
        values: impl IntoIterator<Item = (Bundle, Curve)>,
        derivative: DerivativeMode,
    ) -> Result<Self> {
        let (entries, curves, notes) = curve_table(n, include_empty, values)?;
        VirtualModel::finish(
            n,
            dist,
            include_empty,
            ModelForm::Direct {
                values: curves,
                derivative,
            },
            entries,
            notes,
        )
    }

    pub fn virtual_curves(
        n: usize,
        dist: TypeDistribution,
        include_empty: bool,
        curves: impl IntoIterator<Item = (Bundle, Curve)>,
    ) -> Result<Self> {
        let (entries, curves, notes) = curve_table(n, include_empty, curves)?;
        VirtualModel::finish(n, dist, include_empty, ModelForm::Virtual { curves }, entries, notes)
    }

    fn finish(
        n: usize,
        dist: TypeDistribution,
        include_empty: bool,
        form: ModelForm,
        entries: Vec<Bundle>,
        mut notes: Vec<String>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Validation("model has no bundles".into()));
        }
        for b in &entries {
            if b.n() != n {
                return Err(Error::Validation(format!("bundle {b} does not belong to {n} goods")));
            }
        }
        let index = entries.iter().enumerate().map(|(i, b)| (b.mask(), i)).collect();
        let mut model = VirtualModel {
            n,
            dist,
            include_empty,
            form,
            active: entries.clone(),
            active_slots: (0..entries.len()).collect(),
            entries,
            index,
            aliases: BTreeMap::new(),
            notes: Vec::new(),
        };

        let profiles = model.profiles_of(&model.entries)?;
        for p in &profiles {
            if !(p.phi_lo.is_finite() && p.phi_hi.is_finite()) {
                return Err(Error::Validation(format!(
                    "virtual value of {} is not finite at an endpoint",
                    p.bundle
                )));
            }
        }

        // Duplicates: sort by phi_lo so candidates sit in a narrow window.
        let mut order: Vec<usize> = (0..profiles.len()).collect();
        order.sort_by(|&a, &b| profiles[a].phi_lo.total_cmp(&profiles[b].phi_lo));
        let mut dropped: BTreeMap<Bundle, Bundle> = BTreeMap::new();
        for (pos, &i) in order.iter().enumerate() {
            for &j in &order[pos + 1..] {
                if profiles[j].phi_lo - profiles[i].phi_lo >= DUPLICATE_TOL {
                    break;
                }
                if (profiles[j].phi_hi - profiles[i].phi_hi).abs() < DUPLICATE_TOL {
                    let (keep, drop) = if profiles[i].bundle < profiles[j].bundle {
                        (profiles[i].bundle, profiles[j].bundle)
                    } else {
                        (profiles[j].bundle, profiles[i].bundle)
                    };
                    dropped.entry(drop).and_modify(|k| *k = (*k).min(keep)).or_insert(keep);
                }
            }
        }
        // Chase chains so each alias points at a surviving bundle.
        let resolve = |mut b: Bundle| {
            while let Some(&k) = dropped.get(&b) {
                b = k;
            }
            b
        };
        let aliases: BTreeMap<Bundle, Bundle> = dropped.keys().map(|&d| (d, resolve(d))).collect();
        for (d, k) in &aliases {
            notes.push(format!("{d} duplicates the endpoint profile of {k} and was dropped"));
        }
        model.active.retain(|b| !aliases.contains_key(b));
        model.active_slots = model.active.iter().map(|b| model.index[&b.mask()]).collect();
        model.aliases = aliases;

        let positive_bottom: Vec<String> = profiles
            .iter()
            .filter(|p| !p.bundle.is_empty() && p.phi_lo >= 0.0)
            .map(|p| p.bundle.to_string())
            .take(8)
            .collect();
        if !positive_bottom.is_empty() {
            notes.push(format!(
                "lowest type has nonnegative virtual value for {} (normalization not enforced)",
                positive_bottom.join(" ")
            ));
        }
        model.notes = notes;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn distribution(&self) -> &TypeDistribution {
        &self.dist
    }

    pub fn support(&self) -> (f64, f64) {
        self.dist.support()
    }

    pub fn include_empty(&self) -> bool {
        self.include_empty
    }

    pub fn form(&self) -> &ModelForm {
        &self.form
    }

    /// The active bundle universe in increasing mask order.
    pub fn bundles(&self) -> &[Bundle] {
        &self.active
    }

    /// Every bundle with data, including dropped duplicates.
    pub fn entries(&self) -> &[Bundle] {
        &self.entries
    }

    pub fn aliases(&self) -> &BTreeMap<Bundle, Bundle> {
        &self.aliases
    }

    /// Maps a dropped duplicate to the bundle that represents it.
    pub fn resolve(&self, b: Bundle) -> Bundle {
        self.aliases.get(&b).copied().unwrap_or(b)
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn has_bundle(&self, b: Bundle) -> bool {
        b.n() == self.n && self.index.contains_key(&b.mask())
    }

    pub fn grand(&self) -> Bundle {
        Bundle::grand(self.n).expect("model size validated")
    }

    fn slot(&self, b: Bundle) -> Result<usize> {
        if b.n() != self.n {
            return Err(Error::MissingParameter(format!("{b} (universe of {} goods)", b.n())));
        }
        self.index
            .get(&b.mask())
            .copied()
            .ok_or_else(|| Error::MissingParameter(b.to_string()))
    }

    fn check_type(&self, t: f64) -> Result<f64> {
        let (lo, hi) = self.support();
        let slack = 1e-12 * (hi - lo);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::Domain {
                what: "type",
                value: t,
                lo,
                hi,
            });
        }
        Ok(t.clamp(lo, hi))
    }

    /// Interior points where some curve or the density has a kink.
    pub fn kinks(&self) -> Vec<f64> {
        let mut ks = self.dist.kinks();
        match &self.form {
            ModelForm::Parametric { h1, h2, .. } => {
                ks.extend(h1.kinks());
                ks.extend(h2.kinks());
            }
            ModelForm::Direct { values: cs, .. } | ModelForm::Virtual { curves: cs } => {
                for c in cs {
                    ks.extend(c.kinks());
                }
            }
        }
        let (lo, hi) = self.support();
        ks.retain(|&k| k > lo && k < hi);
        ks.sort_by(f64::total_cmp);
        ks.dedup();
        ks
    }

    /// φ at slot `i`, with `t` already validated.
    fn phi_slot(&self, i: usize, t: f64) -> f64 {
        if self.entries[i].is_empty() {
            return 0.0;
        }
        match &self.form {
            ModelForm::Parametric { g1, g2, h1, h2 } => g1[i] * h1.eval(t) + g2[i] + h2.eval(t),
            ModelForm::Direct { values, derivative } => {
                let c = &values[i];
                let v = c.eval(t);
                let tail = 1.0 - self.dist.cdf(t);
                if tail == 0.0 {
                    return v;
                }
                let vt = match derivative {
                    DerivativeMode::Analytic => c.derivative(t),
                    DerivativeMode::FiniteDifference => self.finite_difference(c, t),
                };
                v - tail / self.dist.density(t) * vt
            }
            ModelForm::Virtual { curves } => curves[i].eval(t),
        }
    }

    fn finite_difference(&self, c: &Curve, t: f64) -> f64 {
        let (lo, hi) = self.support();
        let h = 1e-5 * (hi - lo);
        if t - h < lo {
            (c.eval(t + h) - c.eval(t)) / h
        } else if t + h > hi {
            (c.eval(t) - c.eval(t - h)) / h
        } else {
            (c.eval(t + h) - c.eval(t - h)) / (2.0 * h)
        }
    }

    pub fn eval_virtual(&self, b: Bundle, t: f64) -> Result<f64> {
        let t = self.check_type(t)?;
        let i = self.slot(b)?;
        finite(self.phi_slot(i, t), b, t)
    }

    /// φ of every active bundle at `t`, in `bundles()` order.
    pub fn eval_all(&self, t: f64) -> Result<Vec<f64>> {
        let t = self.check_type(t)?;
        let mut out = Vec::with_capacity(self.active.len());
        match &self.form {
            ModelForm::Parametric { g1, g2, h1, h2 } => {
                let (a, c) = (h1.eval(t), h2.eval(t));
                for (b, &i) in self.active.iter().zip(&self.active_slots) {
                    out.push(if b.is_empty() { 0.0 } else { g1[i] * a + g2[i] + c });
                }
            }
            _ => {
                for &i in &self.active_slots {
                    out.push(self.phi_slot(i, t));
                }
            }
        }
        if let Some(k) = out.iter().position(|v| !v.is_finite()) {
            return finite(out[k], self.active[k], t).map(|_| out);
        }
        Ok(out)
    }

    pub fn eval_value(&self, b: Bundle, t: f64) -> Result<f64> {
        let t = self.check_type(t)?;
        let i = self.slot(b)?;
        if b.is_empty() {
            return Ok(0.0);
        }
        let v = match &self.form {
            ModelForm::Direct { values, .. } => values[i].eval(t),
            _ => self.reconstruct_value(i, t)?,
        };
        finite(v, b, t)
    }

    /// `v(b,t) = E[φ(b,s) | s ≥ t]`, integrated on the conditional quantile
    /// scale so the `1 - F(t)` division never appears.
    fn reconstruct_value(&self, i: usize, t: f64) -> Result<f64> {
        let (_, hi) = self.support();
        if t >= hi {
            return Ok(self.phi_slot(i, hi));
        }
        let base = self.dist.cdf(t);
        let tail = 1.0 - base;
        let point = |w: f64| -> f64 {
            let q = (base + tail * w).min(1.0);
            self.dist.quantile(q).unwrap_or(hi)
        };
        let integrand = |w: f64| -> Result<f64> {
            let v = self.phi_slot(i, point(w));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::numeric(format!("non-finite virtual value at w = {w}"), v))
            }
        };
        let cuts: Vec<f64> = self
            .kinks()
            .into_iter()
            .filter(|&k| k > t)
            .map(|k| (self.dist.cdf(k) - base) / tail)
            .collect();
        integrate_split(&integrand, 0.0, 1.0, &cuts, QUAD_TOL)
    }

    pub fn endpoint_profile(&self, b: Bundle) -> Result<EndpointProfile> {
        let (lo, hi) = self.support();
        Ok(EndpointProfile {
            bundle: b,
            phi_lo: self.eval_virtual(b, lo)?,
            phi_hi: self.eval_virtual(b, hi)?,
        })
    }

    /// Endpoint profiles of `bundles`, evaluated in parallel.
    pub fn profiles_of(&self, bundles: &[Bundle]) -> Result<Vec<EndpointProfile>> {
        bundles.par_iter().map(|&b| self.endpoint_profile(b)).collect()
    }

    /// Endpoint profiles of the active universe.
    pub fn profiles(&self) -> Result<Vec<EndpointProfile>> {
        self.profiles_of(&self.active)
    }

    pub fn marginal_revenue(&self, b: Bundle, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Domain {
                what: "quantity",
                value: q,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let t = self.dist.quantile(1.0 - q)?;
        self.eval_virtual(b, t)
    }

    /// Probe grid of `count` points plus every interior kink.
    pub fn probe_grid(&self, count: usize) -> Vec<f64> {
        let (lo, hi) = self.support();
        let mut g = linspace(lo, hi, count);
        g.extend(self.kinks());
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }

    /// φ of the active universe on `grid`, one row per bundle.
    fn phi_matrix(&self, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        let cols: Vec<Vec<f64>> = grid.par_iter().map(|&t| self.eval_all(t)).collect::<Result<_>>()?;
        Ok((0..self.active.len()).map(|r| cols.iter().map(|c| c[r]).collect()).collect())
    }

    pub fn check_monotonic_differences(&self, grid_size: usize) -> Result<ConditionReport> {
        const NAME: &str = "monotonic_differences";
        if grid_size < 3 {
            return Err(Error::Argument(format!("grid size {grid_size} below 3")));
        }
        if matches!(self.form, ModelForm::Parametric { .. }) {
            return Ok(ConditionReport::new(NAME, Verdict::Holds)
                .with_method("structural")
                .with_note("differences are affine in a monotone h1"));
        }
        let grid = self.probe_grid(grid_size);
        let rows = self.phi_matrix(&grid)?;
        let tol = 1e-9 * matrix_scale(&rows);
        let n = rows.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let worst = pairs
            .par_iter()
            .filter_map(|&(a, b)| {
                let d: Vec<f64> = rows[a].iter().zip(&rows[b]).map(|(x, y)| x - y).collect();
                turn_violation(&d).map(|v| (a, b, v))
            })
            .max_by(|x, y| x.2 .0.total_cmp(&y.2 .0).then(y.0.cmp(&x.0)).then(y.1.cmp(&x.1)));
        match worst {
            Some((a, b, (size, [i, j, k]))) if size > tol => {
                let d = |m: usize| rows[a][m] - rows[b][m];
                Ok(ConditionReport::new(NAME, Verdict::Fails)
                    .with_method("grid")
                    .with_witness(Witness::new(
                        "non_monotone_difference",
                        &[self.active[a], self.active[b]],
                        vec![grid[i], grid[j], grid[k], d(i), d(j), d(k)],
                    ))
                    .with_note(format!("difference turns by {size:e} at t = {}", grid[j])))
            }
            _ => Ok(ConditionReport::new(NAME, Verdict::Holds)
                .with_method("grid")
                .with_note(format!("{} pairs on {} points", pairs.len(), grid.len()))),
        }
    }

    pub fn check_scd_star(&self) -> Result<ConditionReport> {
        const NAME: &str = "scd_star";
        if matches!(self.form, ModelForm::Parametric { .. }) {
            return Ok(ConditionReport::new(NAME, Verdict::Holds)
                .with_method("structural")
                .with_note("multiplicative-additive form with monotone h1"));
        }
        let grid = self.probe_grid(SCD_GRID);
        let rows = self.phi_matrix(&grid)?;
        let scale = matrix_scale(&rows);
        let n = rows.len();
        if n <= 1 {
            return Ok(ConditionReport::new(NAME, Verdict::Holds).with_method("trivial"));
        }
        let diffs: Vec<Vec<f64>> = rows[1..]
            .iter()
            .map(|r| r.iter().zip(&rows[0]).map(|(x, y)| x - y).collect())
            .collect();

        let (residual, w) = rank_one(&diffs);
        if residual < 1e-8 * scale && sign_monotone(&w, 1e-8 * max_abs(&w)).is_none() {
            return Ok(ConditionReport::new(NAME, Verdict::Holds)
                .with_method("rank_one")
                .with_note(format!("differences span one single-crossing curve (residual {residual:e})")));
        }
        let centered: Vec<Vec<f64>> = diffs
            .iter()
            .map(|r| {
                let m = r.iter().sum::<f64>() / r.len() as f64;
                r.iter().map(|x| x - m).collect()
            })
            .collect();
        let (residual, w) = rank_one(&centered);
        if residual < 1e-8 * scale && is_monotone(&w, 1e-8 * max_abs(&w)) {
            return Ok(ConditionReport::new(NAME, Verdict::Holds)
                .with_method("affine")
                .with_note(format!("affine in a monotone basis curve (residual {residual:e})")));
        }

        let zero = 1e-10 * scale;
        let fail = |bundles: &[Bundle], lambda: f64, x: &[f64], idx: [usize; 3]| {
            let mut values = vec![lambda];
            values.extend(idx.iter().map(|&i| grid[i]));
            values.extend(idx.iter().map(|&i| x[i]));
            ConditionReport::new(NAME, Verdict::Fails)
                .with_method("falsified")
                .with_witness(Witness::new("non_single_crossing", bundles, values))
        };
        for a in 0..n {
            for b in a + 1..n {
                let x: Vec<f64> = rows[a].iter().zip(&rows[b]).map(|(p, q)| p - q).collect();
                if let Some(idx) = sign_monotone(&x, zero) {
                    return Ok(fail(&[self.active[a], self.active[b]], 1.0, &x, idx));
                }
            }
        }
        if n <= SCD_MIXTURE_LIMIT {
            for m in 0..n {
                for a in 0..n {
                    for b in a + 1..n {
                        if a == m || b == m {
                            continue;
                        }
                        for k in 1..20 {
                            let lambda = k as f64 / 20.0;
                            let x: Vec<f64> = (0..grid.len())
                                .map(|g| rows[m][g] - (lambda * rows[a][g] + (1.0 - lambda) * rows[b][g]))
                                .collect();
                            if let Some(idx) = sign_monotone(&x, zero) {
                                return Ok(fail(
                                    &[self.active[m], self.active[a], self.active[b]],
                                    lambda,
                                    &x,
                                    idx,
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(ConditionReport::new(NAME, Verdict::Unknown)
            .with_method("affine")
            .with_note(format!("no affine representation found (residual {residual:e})")))
    }

    /// The same model re-expressed on the quantile scale with a standard
    /// uniform distribution.
    pub fn to_quantile_space(&self) -> Result<VirtualModel> {
        if self.dist.is_standard_uniform() {
            return Ok(self.clone());
        }
        let reparam = |c: &Curve| Curve::Reparam {
            inner: Box::new(c.clone()),
            distribution: self.dist.clone(),
        };
        let form = match &self.form {
            ModelForm::Parametric { g1, g2, h1, h2 } => ModelForm::Parametric {
                g1: g1.clone(),
                g2: g2.clone(),
                h1: reparam(h1),
                h2: reparam(h2),
            },
            ModelForm::Direct { values, derivative } => ModelForm::Direct {
                values: values.iter().map(reparam).collect(),
                derivative: *derivative,
            },
            ModelForm::Virtual { curves } => ModelForm::Virtual {
                curves: curves.iter().map(reparam).collect(),
            },
        };
        let mut out = self.clone();
        out.dist = TypeDistribution::uniform(0.0, 1.0)?;
        out.form = form;
        for (i, b) in out.entries.iter().enumerate() {
            for q in [0.0, 1.0] {
                let v = out.phi_slot(i, q);
                if !v.is_finite() {
                    return Err(Error::numeric(format!("quantile transform of {b} fails at q = {q}"), v));
                }
            }
        }
        Ok(out)
    }

    /// Parametric coefficients of `b`, if the model is parametric.
    pub fn parametric_coeffs(&self, b: Bundle) -> Option<(f64, f64)> {
        match &self.form {
            ModelForm::Parametric { g1, g2, .. } => {
                let i = self.slot(b).ok()?;
                Some((g1[i], g2[i]))
            }
            _ => None,
        }
    }
}

fn finite(v: f64, b: Bundle, t: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(format!("non-finite value for {b} at t = {t}"), v))
    }
}

/// Forces the empty bundle's entry to the zero curve (or drops it when the
/// model excludes ∅).
fn normalize_empty<T>(
    n: usize,
    include_empty: bool,
    table: &mut BTreeMap<Bundle, T>,
    zero: T,
    notes: &mut Vec<String>,
    is_zero: impl Fn(&T) -> bool,
) -> Result<()> {
    let empty = Bundle::empty(n)?;
    match (include_empty, table.get(&empty)) {
        (true, Some(v)) if !is_zero(v) => {
            notes.push("parameters given for ∅ were overridden with zero".into());
            table.insert(empty, zero);
        }
        (true, None) => {
            table.insert(empty, zero);
        }
        (false, Some(_)) => {
            notes.push("∅ excluded by include_empty = false; its entry was ignored".into());
            table.remove(&empty);
        }
        _ => {}
    }
    Ok(())
}

type CurveTable = (Vec<Bundle>, Vec<Curve>, Vec<String>);

fn curve_table(
    n: usize,
    include_empty: bool,
    curves: impl IntoIterator<Item = (Bundle, Curve)>,
) -> Result<CurveTable> {
    let mut notes = Vec::new();
    let mut table = BTreeMap::new();
    for (b, c) in curves {
        if table.insert(b, c).is_some() {
            return Err(Error::Validation(format!("bundle {b} given twice")));
        }
    }
    normalize_empty(n, include_empty, &mut table, Curve::Zero, &mut notes, Curve::is_zero)?;
    let entries = table.keys().copied().collect();
    Ok((entries, table.into_values().collect(), notes))
}

fn matrix_scale(rows: &[Vec<f64>]) -> f64 {
    rows.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()))
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Largest "turn" of a sampled curve: the biggest amount by which some
/// interior sample rises above (or dips below) samples on both sides.
/// Returns the size and the witnessing index triple.
fn turn_violation(d: &[f64]) -> Option<(f64, [usize; 3])> {
    let m = d.len();
    if m < 3 {
        return None;
    }
    let mut pre_min = vec![0usize; m];
    let mut pre_max = vec![0usize; m];
    for j in 1..m {
        pre_min[j] = if d[j] < d[pre_min[j - 1]] { j } else { pre_min[j - 1] };
        pre_max[j] = if d[j] > d[pre_max[j - 1]] { j } else { pre_max[j - 1] };
    }
    let mut suf_min = vec![m - 1; m];
    let mut suf_max = vec![m - 1; m];
    for j in (0..m - 1).rev() {
        suf_min[j] = if d[j] < d[suf_min[j + 1]] { j } else { suf_min[j + 1] };
        suf_max[j] = if d[j] > d[suf_max[j + 1]] { j } else { suf_max[j + 1] };
    }
    let mut best: Option<(f64, [usize; 3])> = None;
    for j in 1..m - 1 {
        let (a, c) = (pre_min[j - 1], suf_min[j + 1]);
        let peak = (d[j] - d[a]).min(d[j] - d[c]);
        let (e, g) = (pre_max[j - 1], suf_max[j + 1]);
        let valley = (d[e] - d[j]).min(d[g] - d[j]);
        for (size, idx) in [(peak, [a, j, c]), (valley, [e, j, g])] {
            if size > 0.0 && best.is_none_or(|b| size > b.0) {
                best = Some((size, idx));
            }
        }
    }
    best
}

/// Sign of `x` with a dead zone of `zero` around 0.
fn sign(x: f64, zero: f64) -> i8 {
    if x > zero {
        1
    } else if x < -zero {
        -1
    } else {
        0
    }
}

/// `None` when the sign sequence of `x` is monotone (the curve crosses zero
/// at most once); otherwise an index triple whose signs go up then down or
/// down then up.
fn sign_monotone(x: &[f64], zero: f64) -> Option<[usize; 3]> {
    let s: Vec<i8> = x.iter().map(|&v| sign(v, zero)).collect();
    let mut first_change: Option<(usize, usize, i8)> = None;
    let mut last = 0usize;
    for j in 1..s.len() {
        if s[j] == s[last] {
            last = j;
            continue;
        }
        let dir = (s[j] - s[last]).signum();
        match first_change {
            None => first_change = Some((last, j, dir)),
            Some((i, _, d)) if d != dir => return Some([i, last, j]),
            _ => {}
        }
        last = j;
    }
    None
}

fn is_monotone(x: &[f64], tol: f64) -> bool {
    let up = x.windows(2).all(|w| w[1] >= w[0] - tol);
    let down = x.windows(2).all(|w| w[1] <= w[0] + tol);
    up || down
}

/// Best rank-one approximation of the row set: the max-abs residual and the
/// dominant right singular vector.
fn rank_one(rows: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return (0.0, Vec::new());
    }
    let m = DMatrix::from_fn(r, c, |i, j| rows[i][j]);
    let svd = m.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return (f64::INFINITY, Vec::new()),
    };
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(k, _)| k);
    let s = svd.singular_values[k];
    let approx = u.column(k) * vt.row(k) * s;
    let residual = (m - approx).amax();
    (residual, vt.row(k).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> TypeDistribution {
        TypeDistribution::uniform(0.0, 1.0).unwrap()
    }

    fn b(goods: &[usize], n: usize) -> Bundle {
        Bundle::from_goods(goods, n).unwrap()
    }

    #[test]
    fn sign_pattern_detection() {
        assert!(sign_monotone(&[1.0, 0.0, -1.0], 0.0).is_none());
        assert!(sign_monotone(&[-1.0, -1.0, 0.0, 0.0, 2.0], 0.0).is_none());
        assert_eq!(sign_monotone(&[1.0, 0.5, 0.0, 0.5], 0.0), Some([1, 2, 3]));
        assert_eq!(sign_monotone(&[-1.0, 1.0, -1.0], 0.0), Some([0, 1, 2]));
    }

    #[test]
    fn turn_detection() {
        let (size, idx) = turn_violation(&[0.0, 2.0, 1.0, 1.5]).unwrap();
        assert_eq!(size, 1.0);
        assert_eq!(idx[1], 1);
        assert!(turn_violation(&[0.0, 1.0, 1.0, 3.0]).is_none());
    }

    #[test]
    fn empty_bundle_forced_to_zero() {
        let m = VirtualModel::parametric(
            1,
            uniform(),
            true,
            [(b(&[], 1), 3.0, 1.0), (b(&[1], 1), 2.0, -1.0)],
            Curve::Identity,
            Curve::Constant { value: 0.5 },
        )
        .unwrap();
        assert_eq!(m.eval_virtual(b(&[], 1), 0.3).unwrap(), 0.0);
        assert_eq!(m.eval_value(b(&[], 1), 0.3).unwrap(), 0.0);
        assert!(m.notes().iter().any(|n| n.contains("overridden")));
    }

    #[test]
    fn non_monotone_h1_rejected() {
        let r = VirtualModel::parametric(
            1,
            uniform(),
            false,
            [(b(&[1], 1), 1.0, 0.0)],
            Curve::Polynomial {
                coeffs: vec![0.0, 1.0, -1.0],
            },
            Curve::Zero,
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn duplicates_drop_larger_mask() {
        let m = VirtualModel::parametric(
            2,
            uniform(),
            false,
            [(b(&[1], 2), 1.0, 1.0), (b(&[2], 2), 1.0, 1.0), (b(&[1, 2], 2), 2.0, 0.0)],
            Curve::Identity,
            Curve::Zero,
        )
        .unwrap();
        assert_eq!(m.bundles(), &[b(&[1], 2), b(&[1, 2], 2)]);
        assert_eq!(m.resolve(b(&[2], 2)), b(&[1], 2));
        // dropped bundles still evaluate
        assert_eq!(m.eval_virtual(b(&[2], 2), 0.5).unwrap(), 1.5);
    }

    #[test]
    fn direct_value_reproduces_virtual_value() {
        // v = g1 (1 + t) / 2 + g2 gives φ = g1 t + g2 under the uniform law
        let v = Curve::affine(1.0, 2.0);
        let m = VirtualModel::direct(1, uniform(), false, [(b(&[1], 1), v)], DerivativeMode::Analytic).unwrap();
        assert!((m.eval_virtual(b(&[1], 1), 0.25).unwrap() - 1.5).abs() < 1e-15);
        let fd = VirtualModel::direct(
            1,
            uniform(),
            false,
            [(b(&[1], 1), Curve::affine(1.0, 2.0))],
            DerivativeMode::FiniteDifference,
        )
        .unwrap();
        for t in [0.0, 0.5, 1.0] {
            let a = m.eval_virtual(b(&[1], 1), t).unwrap();
            let c = fd.eval_virtual(b(&[1], 1), t).unwrap();
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn reconstructed_value_under_power_law() {
        // F = t^2 on [0,1], φ = t: v(t) = E[s | s ≥ t] = (2/3)(1 - t^3)/(1 - t^2)
        let d = TypeDistribution::power(2.0, 0.0, 1.0).unwrap();
        let m = VirtualModel::virtual_curves(1, d, false, [(b(&[1], 1), Curve::Identity)]).unwrap();
        for t in [0.0, 0.3, 0.9] {
            let exact = 2.0 / 3.0 * (1.0 - t * t * t) / (1.0 - t * t);
            assert!((m.eval_value(b(&[1], 1), t).unwrap() - exact).abs() < 1e-8);
        }
        assert_eq!(m.eval_value(b(&[1], 1), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn domain_and_missing_errors() {
        let m = VirtualModel::parametric(2, uniform(), false, [(b(&[1], 2), 1.0, 0.0)], Curve::Identity, Curve::Zero)
            .unwrap();
        assert!(matches!(m.eval_virtual(b(&[1], 2), 1.5), Err(Error::Domain { .. })));
        assert!(matches!(m.eval_virtual(b(&[2], 2), 0.5), Err(Error::MissingParameter(_))));
        assert!(matches!(m.marginal_revenue(b(&[1], 2), -0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn scd_detects_affine_direct_model() {
        let n = 2;
        let vals = [(b(&[1], n), 1.0, 4.0), (b(&[2], n), 2.0, 1.0), (b(&[1, 2], n), 3.0, 2.5)];
        let m = VirtualModel::direct(
            n,
            uniform(),
            true,
            vals.iter().map(|&(bb, g1, g2)| (bb, Curve::affine(g1 / 2.0, g1 / 2.0 + g2))),
            DerivativeMode::Analytic,
        )
        .unwrap();
        let r = m.check_scd_star().unwrap();
        assert!(r.holds(), "{r:?}");
        assert_eq!(r.method.as_deref(), Some("affine"));
        assert!(m.check_monotonic_differences(201).unwrap().holds());
    }
}
