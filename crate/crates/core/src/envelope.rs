//! Dominance elimination on endpoint profiles: the minimal optimal menu is
//! what survives pure endpoint dominance followed by repeated removal of
//! bundles lying on or below the chord joining their neighbours.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bundle::Bundle;
use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::model::{EndpointProfile, ModelForm, VirtualModel};
use crate::numeric::bisect;

/// Slack for endpoint dominance and certificate checks.
pub const DOMINANCE_TOL: f64 = 1e-9;

/// Relative slack in the ratio comparison, so exact collinearity counts as
/// removable despite rounding.
const RATIO_RTOL: f64 = 1e-12;

/// Slack when comparing crossing points.
const CROSSING_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Endpoint,
    Mixture,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominanceCertificate {
    #[serde(rename = "bundle")]
    pub removed: Bundle,
    pub dominators: Vec<Bundle>,
    /// Weight on the first dominator; 1 for a single dominator.
    pub weight: f64,
    pub stage: Stage,
}

impl DominanceCertificate {
    /// Re-checks the dominance inequalities at both endpoints.
    pub fn verify(&self, model: &VirtualModel) -> Result<bool> {
        let target = model.endpoint_profile(self.removed)?;
        let doms = self
            .dominators
            .iter()
            .map(|&b| model.endpoint_profile(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.verify_profiles(&target, &doms))
    }

    pub fn verify_profiles(&self, target: &EndpointProfile, doms: &[EndpointProfile]) -> bool {
        if !(0.0..=1.0).contains(&self.weight) {
            return false;
        }
        let (lo, hi) = match doms {
            [d] => (d.phi_lo, d.phi_hi),
            [d1, d2] => (
                self.weight * d1.phi_lo + (1.0 - self.weight) * d2.phi_lo,
                self.weight * d1.phi_hi + (1.0 - self.weight) * d2.phi_hi,
            ),
            _ => return false,
        };
        lo >= target.phi_lo - DOMINANCE_TOL && hi >= target.phi_hi - DOMINANCE_TOL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MenuSolution {
    /// Descending φ at the bottom type, ascending at the top type.
    pub kept: Vec<Bundle>,
    pub removed: Vec<DominanceCertificate>,
    pub iterations: usize,
    /// An assumption check failed and the caller forced the run; the
    /// optimality guarantees do not apply.
    pub forced: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MenuSolution {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("menu serializes")
    }

    /// Reloads a serialized solution for a universe of `n` goods.
    pub fn from_json(value: &Value, n: usize) -> Result<MenuSolution> {
        let bad = |what: &str| Error::Validation(format!("menu JSON: {what}"));
        let keys = |v: &Value| -> Result<Vec<Bundle>> {
            v.as_array()
                .ok_or_else(|| bad("expected an array of bundle keys"))?
                .iter()
                .map(|k| Bundle::parse_key(k.as_str().ok_or_else(|| bad("bundle key must be a string"))?, n))
                .collect()
        };
        let kept = keys(value.get("kept").ok_or_else(|| bad("missing kept"))?)?;
        let mut removed = Vec::new();
        for r in value.get("removed").and_then(Value::as_array).into_iter().flatten() {
            let key = r.get("bundle").and_then(Value::as_str).ok_or_else(|| bad("removed entry needs bundle"))?;
            removed.push(DominanceCertificate {
                removed: Bundle::parse_key(key, n)?,
                dominators: keys(r.get("dominators").unwrap_or(&json!([])))?,
                weight: r.get("weight").and_then(Value::as_f64).ok_or_else(|| bad("removed entry needs weight"))?,
                stage: serde_json::from_value(r.get("stage").cloned().unwrap_or(Value::Null))?,
            });
        }
        Ok(MenuSolution {
            kept,
            removed,
            iterations: value.get("iterations").and_then(Value::as_u64).unwrap_or(0) as usize,
            forced: value.get("forced").and_then(Value::as_bool).unwrap_or(false),
            notes: Vec::new(),
        })
    }
}

fn dominates(p: &EndpointProfile, b: &EndpointProfile) -> bool {
    p.phi_lo >= b.phi_lo - DOMINANCE_TOL && p.phi_hi >= b.phi_hi - DOMINANCE_TOL
}

/// Step 1: drop every bundle weakly dominated at both endpoints by another.
/// Near-ties in both coordinates drop the larger mask. Returns the frontier
/// (descending `phi_lo`) and one certificate per removed bundle, naming the
/// smallest-mask frontier bundle that dominates it.
pub fn prune_pure_dominated(
    profiles: &[EndpointProfile],
) -> Result<(Vec<EndpointProfile>, Vec<DominanceCertificate>)> {
    if profiles.is_empty() {
        return Err(Error::Argument("no bundles to prune".into()));
    }
    let mut order: Vec<&EndpointProfile> = profiles.iter().collect();
    order.sort_by(|a, b| {
        b.phi_lo
            .total_cmp(&a.phi_lo)
            .then(b.phi_hi.total_cmp(&a.phi_hi))
            .then(a.bundle.cmp(&b.bundle))
    });
    // prefix_max[i]: largest phi_hi among order[..i]
    let mut prefix_max = Vec::with_capacity(order.len() + 1);
    prefix_max.push(f64::NEG_INFINITY);
    for p in &order {
        let last = *prefix_max.last().unwrap();
        prefix_max.push(p.phi_hi.max(last));
    }

    let beats = |p: &EndpointProfile, b: &EndpointProfile| {
        p.bundle != b.bundle && dominates(p, b) && (!dominates(b, p) || p.bundle < b.bundle)
    };
    let mut kept = Vec::new();
    let mut losers = Vec::new();
    for (i, b) in order.iter().enumerate() {
        // Everything that could dominate sits in order[..end].
        let end = order.partition_point(|p| p.phi_lo >= b.phi_lo - DOMINANCE_TOL);
        let best = order[i + 1..end.max(i + 1)]
            .iter()
            .fold(prefix_max[i], |m, p| m.max(p.phi_hi));
        let dominated = if best > b.phi_hi + DOMINANCE_TOL {
            true
        } else if best >= b.phi_hi - DOMINANCE_TOL {
            // Near-tie band: decide pairwise.
            order[..end].iter().enumerate().any(|(j, p)| j != i && beats(p, b))
        } else {
            false
        };
        if dominated {
            losers.push(**b);
        } else {
            kept.push(**b);
        }
    }

    let mut removed = Vec::with_capacity(losers.len());
    for b in &losers {
        let witness = kept
            .iter()
            .filter(|p| dominates(p, b))
            .map(|p| p.bundle)
            .min()
            .or_else(|| order.iter().filter(|p| beats(p, b)).map(|p| p.bundle).min())
            .ok_or_else(|| Error::Logic(format!("no dominator recorded for {}", b.bundle)))?;
        removed.push(DominanceCertificate {
            removed: b.bundle,
            dominators: vec![witness],
            weight: 1.0,
            stage: Stage::Endpoint,
        });
    }
    Ok((kept, removed))
}

/// Whether `mid` is weakly dominated by a mixture of its neighbours: the
/// rise in `phi_hi` after `mid`, relative to the rise before it, is at least
/// the matching fall in `phi_lo`.
pub fn ratio_condition(prev: &EndpointProfile, mid: &EndpointProfile, next: &EndpointProfile) -> Result<bool> {
    let (a, c, x, y) = gaps(prev, mid, next)?;
    let (lhs, rhs) = (a * y, x * c);
    Ok(lhs <= rhs + RATIO_RTOL * lhs.abs().max(rhs.abs()))
}

/// `(a, c, x, y)`: the `phi_hi` rises into and out of `mid` and the `phi_lo`
/// falls into and out of `mid`, all positive.
fn gaps(prev: &EndpointProfile, mid: &EndpointProfile, next: &EndpointProfile) -> Result<(f64, f64, f64, f64)> {
    let checks = [
        (prev.phi_lo > mid.phi_lo, "phi_lo(prev) > phi_lo(mid)"),
        (mid.phi_lo > next.phi_lo, "phi_lo(mid) > phi_lo(next)"),
        (prev.phi_hi < mid.phi_hi, "phi_hi(prev) < phi_hi(mid)"),
        (mid.phi_hi < next.phi_hi, "phi_hi(mid) < phi_hi(next)"),
    ];
    for (ok, what) in checks {
        if !ok {
            return Err(Error::Argument(format!(
                "triple {} {} {} violates {what}",
                prev.bundle, mid.bundle, next.bundle
            )));
        }
    }
    Ok((
        mid.phi_hi - prev.phi_hi,
        next.phi_hi - mid.phi_hi,
        prev.phi_lo - mid.phi_lo,
        mid.phi_lo - next.phi_lo,
    ))
}

/// A weight `λ` on `next` with `λ next + (1 - λ) prev ≥ mid` at both
/// endpoints: the midpoint of the feasible interval.
pub fn dominance_weight(prev: &EndpointProfile, mid: &EndpointProfile, next: &EndpointProfile) -> Result<f64> {
    if !ratio_condition(prev, mid, next)? {
        return Err(Error::Logic(format!(
            "{} is not dominated by a mixture of {} and {}",
            mid.bundle, prev.bundle, next.bundle
        )));
    }
    let (a, c, x, y) = gaps(prev, mid, next)?;
    let lo = a / (a + c);
    let hi = x / (x + y);
    // Rounding can invert an exactly degenerate interval.
    Ok((0.5 * (lo + hi)).clamp(0.0, 1.0))
}

/// Step 2: sweep interior bundles left to right, removing any that satisfy
/// the ratio condition (neighbours re-link at once), until a sweep removes
/// nothing. Returns the survivors, their certificates and the sweep count.
pub fn eliminate_mixed_dominated(
    kept: Vec<EndpointProfile>,
) -> Result<(Vec<EndpointProfile>, Vec<DominanceCertificate>, usize)> {
    let mut list = kept;
    let mut removed = Vec::new();
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let before = removed.len();
        let mut i = 1;
        while i + 1 < list.len() {
            let (prev, mid, next) = (list[i - 1], list[i], list[i + 1]);
            if ratio_condition(&prev, &mid, &next)? {
                let lambda = dominance_weight(&prev, &mid, &next)?;
                removed.push(DominanceCertificate {
                    removed: mid.bundle,
                    dominators: vec![prev.bundle, next.bundle],
                    weight: 1.0 - lambda,
                    stage: Stage::Mixture,
                });
                list.remove(i);
            } else {
                i += 1;
            }
        }
        if removed.len() == before {
            break;
        }
    }
    Ok((list, removed, sweeps))
}

/// Runs both elimination steps on the model's bundle universe. Refuses
/// unless both assumption checks hold, or `force` is set.
pub fn solve_minimal_menu(model: &VirtualModel, force: bool) -> Result<MenuSolution> {
    let md = model.check_monotonic_differences(201)?;
    let scd = model.check_scd_star()?;
    let mut notes = Vec::new();
    let mut forced = false;
    for report in [md, scd] {
        if !report.holds() {
            if !force {
                return Err(Error::Refused(Box::new(report)));
            }
            forced = true;
            notes.push(format!("{} is {:?}; guarantees void", report.name, report.holds));
        }
    }
    solve_profiles(model, forced, notes)
}

fn solve_profiles(model: &VirtualModel, forced: bool, notes: Vec<String>) -> Result<MenuSolution> {
    let profiles = model.profiles()?;
    let (frontier, mut removed) = prune_pure_dominated(&profiles)?;
    let (kept, mixed, iterations) = eliminate_mixed_dominated(frontier)?;
    removed.extend(mixed);
    for (&dup, &rep) in model.aliases() {
        removed.push(DominanceCertificate {
            removed: dup,
            dominators: vec![rep],
            weight: 1.0,
            stage: Stage::Endpoint,
        });
    }
    Ok(MenuSolution {
        kept: kept.iter().map(|p| p.bundle).collect(),
        removed,
        iterations,
        forced,
        notes,
    })
}

/// Type at which the virtual values of `b` and `b2` cross.
pub fn crossing_point(model: &VirtualModel, b: Bundle, b2: Bundle) -> Result<f64> {
    let (lo, hi) = model.support();
    let d = |t: f64| -> Result<f64> { Ok(model.eval_virtual(b, t)? - model.eval_virtual(b2, t)?) };
    let (d_lo, d_hi) = (d(lo)?, d(hi)?);
    if d_lo == 0.0 {
        return Ok(lo);
    }
    if d_hi == 0.0 {
        return Ok(hi);
    }
    if d_lo.signum() == d_hi.signum() {
        return Err(Error::Bracket {
            lo,
            hi,
            f_lo: d_lo,
            f_hi: d_hi,
        });
    }
    if let ModelForm::Parametric {
        h1: Curve::Identity, ..
    } = model.form()
    {
        if let (Some((a1, c1)), Some((a2, c2))) = (model.parametric_coeffs(b), model.parametric_coeffs(b2)) {
            if !b.is_empty() && !b2.is_empty() && a1 != a2 {
                return Ok(((c2 - c1) / (a1 - a2)).clamp(lo, hi));
            }
        }
    }
    bisect(d, lo, hi)
}

/// Crossing-order form of the mixture test: `mid` is removable when it
/// meets `next` no later than it meets `prev`.
pub fn intersection_order_check(model: &VirtualModel, prev: Bundle, mid: Bundle, next: Bundle) -> Result<bool> {
    let left = crossing_point(model, prev, mid)?;
    let right = crossing_point(model, mid, next)?;
    Ok(right <= left + CROSSING_TOL)
}

/// A certificate that `target` is weakly dominated at both endpoints by a
/// point of the convex hull of `others`, preferring a single dominator.
pub fn dominated_by_hull(target: &EndpointProfile, others: &[EndpointProfile]) -> Result<Option<DominanceCertificate>> {
    let pool: Vec<EndpointProfile> = others.iter().filter(|p| p.bundle != target.bundle).copied().collect();
    if pool.is_empty() {
        return Ok(None);
    }
    let (frontier, _) = prune_pure_dominated(&pool)?;
    if let Some(d) = frontier.iter().filter(|p| dominates(p, target)).map(|p| p.bundle).min() {
        return Ok(Some(DominanceCertificate {
            removed: target.bundle,
            dominators: vec![d],
            weight: 1.0,
            stage: Stage::Endpoint,
        }));
    }
    let (hull, _, _) = eliminate_mixed_dominated(frontier)?;
    for pair in hull.windows(2) {
        let (p, q) = (&pair[0], &pair[1]);
        // Weight λ on q: p + λ (q - p) ≥ target - tol in both coordinates.
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for (base, step, goal) in [
            (p.phi_lo, q.phi_lo - p.phi_lo, target.phi_lo),
            (p.phi_hi, q.phi_hi - p.phi_hi, target.phi_hi),
        ] {
            let need = goal - DOMINANCE_TOL - base;
            if step > 0.0 {
                lo = lo.max(need / step);
            } else if step < 0.0 {
                hi = hi.min(need / step);
            } else if need > 0.0 {
                hi = -1.0;
            }
        }
        if lo <= hi {
            let lambda = 0.5 * (lo + hi);
            return Ok(Some(DominanceCertificate {
                removed: target.bundle,
                dominators: vec![p.bundle, q.bundle],
                weight: 1.0 - lambda,
                stage: Stage::Mixture,
            }));
        }
    }
    Ok(None)
}
