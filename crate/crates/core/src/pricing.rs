//! Prices implementing a solved menu: breakpoints between adjacent menu
//! bundles, telescoping prices anchored at the lowest type, an IC/IR grid
//! check, and revenue computed two independent ways.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::bundle::Bundle;
use crate::envelope::{crossing_point, MenuSolution};
use crate::error::{Error, Result};
use crate::model::VirtualModel;
use crate::numeric::{integrate_split, linspace};
use crate::oracle::{csv_key, fmt12};
use crate::report::{ConditionReport, Verdict, Witness};

/// Absolute slack for IC and IR.
pub const IC_SLACK: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Breakpoints {
    /// `cuts[i]` separates `assignment[i]` from `assignment[i + 1]`.
    pub cuts: Vec<f64>,
    pub assignment: Vec<Bundle>,
}

impl Breakpoints {
    /// Interval index of type `t`; a type at a cut joins the lower interval.
    pub fn interval(&self, t: f64) -> usize {
        self.cuts.partition_point(|&c| c < t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriceSchedule {
    /// Menu bundles in assignment order with their prices.
    pub menu: Vec<Bundle>,
    pub prices: Vec<f64>,
    pub breakpoints: Breakpoints,
    pub base_bundle: Bundle,
    /// Utility of the lowest type from the base bundle.
    pub base_utility: f64,
}

impl PriceSchedule {
    pub fn price_of(&self, b: Bundle) -> Option<f64> {
        self.menu.iter().position(|&x| x == b).map(|i| self.prices[i])
    }

    pub fn to_json(&self) -> Value {
        let prices: BTreeMap<String, f64> = self.menu.iter().map(|b| b.key()).zip(self.prices.iter().copied()).collect();
        json!({
            "prices": prices,
            "breakpoints": self.breakpoints.cuts,
            "order": self.menu.iter().map(|b| b.key()).collect::<Vec<_>>(),
            "base_bundle": self.base_bundle.key(),
            "base_utility": self.base_utility,
        })
    }

    /// A copy with the price of `b` shifted by `delta`.
    pub fn perturbed(&self, b: Bundle, delta: f64) -> Result<PriceSchedule> {
        let i = self
            .menu
            .iter()
            .position(|&x| x == b)
            .ok_or_else(|| Error::Argument(format!("{b} is not on the menu")))?;
        let mut out = self.clone();
        out.prices[i] += delta;
        Ok(out)
    }
}

pub fn compute_breakpoints(model: &VirtualModel, menu: &MenuSolution) -> Result<Breakpoints> {
    if menu.kept.is_empty() {
        return Err(Error::Argument("empty menu".into()));
    }
    let mut cuts = Vec::with_capacity(menu.kept.len() - 1);
    for w in menu.kept.windows(2) {
        cuts.push(crossing_point(model, w[0], w[1])?);
    }
    if let Some(i) = cuts.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::Consistency(format!(
            "breakpoints {} and {} are not increasing ({} then {})",
            cuts[i],
            cuts[i + 1],
            menu.kept[i + 1],
            menu.kept[i + 2]
        )));
    }
    Ok(Breakpoints {
        cuts,
        assignment: menu.kept.clone(),
    })
}

/// Telescoping prices: the lowest interval's bundle extracts the lowest
/// type's full value (price 0 for ∅), and each later bundle adds the value
/// gap between it and its predecessor at their shared breakpoint.
pub fn build_prices(model: &VirtualModel, cuts: &Breakpoints) -> Result<PriceSchedule> {
    let menu = &cuts.assignment;
    let (lo, _) = model.support();
    let base = menu[0];
    let mut prices = Vec::with_capacity(menu.len());
    prices.push(if base.is_empty() { 0.0 } else { model.eval_value(base, lo)? });
    for (i, &t) in cuts.cuts.iter().enumerate() {
        let step = model.eval_value(menu[i + 1], t)? - model.eval_value(menu[i], t)?;
        prices.push(prices[i] + step);
    }
    let base_utility = model.eval_value(base, lo)? - prices[0];
    Ok(PriceSchedule {
        menu: menu.clone(),
        prices,
        breakpoints: cuts.clone(),
        base_bundle: base,
        base_utility,
    })
}

/// Per-type utilities of every menu bundle at `t`.
fn utilities(model: &VirtualModel, schedule: &PriceSchedule, t: f64) -> Result<Vec<f64>> {
    schedule
        .menu
        .iter()
        .zip(&schedule.prices)
        .map(|(&b, &p)| Ok(model.eval_value(b, t)? - p))
        .collect()
}

/// Checks on `grid_size` types that the assigned bundle is a best response
/// within `slack` and yields nonnegative utility.
pub fn verify_ic_ir(model: &VirtualModel, schedule: &PriceSchedule, grid_size: usize, slack: f64) -> Result<ConditionReport> {
    if grid_size < 2 {
        return Err(Error::Argument(format!("grid size {grid_size} below 2")));
    }
    let (lo, hi) = model.support();
    let grid = linspace(lo, hi, grid_size);
    struct Worst {
        ic: (f64, f64, usize, usize),
        ir: (f64, f64, usize),
    }
    let rows: Vec<(f64, usize, Vec<f64>)> = grid
        .par_iter()
        .map(|&t| {
            let u = utilities(model, schedule, t)?;
            Ok((t, schedule.breakpoints.interval(t), u))
        })
        .collect::<Result<_>>()?;
    let mut worst = Worst {
        ic: (0.0, lo, 0, 0),
        ir: (0.0, lo, 0),
    };
    for (t, k, u) in &rows {
        let (j, best) = u
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &x)| if x > acc.1 { (j, x) } else { acc });
        let ic = best - u[*k];
        if ic > worst.ic.0 {
            worst.ic = (ic, *t, *k, j);
        }
        let ir = -u[*k];
        if ir > worst.ir.0 {
            worst.ir = (ir, *t, *k);
        }
    }
    let fails = worst.ic.0 > slack || worst.ir.0 > slack;
    let mut report = ConditionReport::new("ic_ir", Verdict::from_bool(!fails)).with_method("grid");
    let (v, t, k, j) = worst.ic;
    if v > 0.0 {
        report.witnesses.push(Witness::new(
            "ic",
            &[schedule.menu[k], schedule.menu[j]],
            vec![t, v],
        ));
        if v <= slack {
            report.note(format!("IC shortfall {v:e} at t = {t} is within slack"));
        }
    }
    let (v, t, k) = worst.ir;
    if v > 0.0 {
        report.witnesses.push(Witness::new("ir", &[schedule.menu[k]], vec![t, v]));
        if v <= slack {
            report.note(format!("IR shortfall {v:e} at t = {t} is within slack"));
        }
    }
    report.note(format!("{} types checked", grid.len()));
    Ok(report)
}

/// `(∫ max_{b ∈ menu} φ(b,t) dF, Σ p_i (F(t_i) - F(t_{i-1})))`.
pub fn expected_revenue(model: &VirtualModel, schedule: &PriceSchedule, tol: f64) -> Result<(f64, f64)> {
    let (lo, hi) = model.support();
    let dist = model.distribution();
    let integrand = |t: f64| -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for &b in &schedule.menu {
            best = best.max(model.eval_virtual(b, t)?);
        }
        Ok(best * dist.density(t))
    };
    let mut cuts = schedule.breakpoints.cuts.clone();
    cuts.extend(model.kinks());
    let envelope = integrate_split(&integrand, lo, hi, &cuts, tol)?;

    let mut edges = vec![lo];
    edges.extend(&schedule.breakpoints.cuts);
    edges.push(hi);
    let price = schedule
        .prices
        .iter()
        .zip(edges.windows(2))
        .map(|(p, w)| p * (dist.cdf(w[1]) - dist.cdf(w[0])))
        .sum();
    Ok((envelope, price))
}

/// Expected payment when each type picks its best response under
/// `schedule` (ties go to the assigned bundle, opting out pays nothing).
/// Choices are probed on `grid_size` points and every switch is located
/// by bisection, so the result is exact up to switches hidden inside a
/// single grid cell. Used to probe price perturbations.
pub fn grid_revenue(model: &VirtualModel, schedule: &PriceSchedule, grid_size: usize) -> Result<f64> {
    if grid_size < 2 {
        return Err(Error::Argument(format!("grid size {grid_size} below 2")));
    }
    let (lo, hi) = model.support();
    let grid = linspace(lo, hi, grid_size);
    let dist = model.distribution();
    let opt_out = schedule.menu.len();
    let choice = |t: f64| -> Result<usize> {
        let u = utilities(model, schedule, t)?;
        let mut pick = schedule.breakpoints.interval(t);
        for (j, &x) in u.iter().enumerate() {
            if x > u[pick] + 1e-12 {
                pick = j;
            }
        }
        Ok(if u[pick] < -1e-12 { opt_out } else { pick })
    };
    let pay = |c: usize| if c == opt_out { 0.0 } else { schedule.prices[c] };
    let picks: Vec<usize> = grid.par_iter().map(|&t| choice(t)).collect::<Result<_>>()?;

    let mut revenue = 0.0;
    let (mut start, mut current) = (lo, picks[0]);
    for i in 1..grid.len() {
        let (mut a, b) = (grid[i - 1], grid[i]);
        while current != picks[i] {
            // last type in [a, b] still choosing `current`
            let (mut x, mut y) = (a, b);
            for _ in 0..100 {
                let m = 0.5 * (x + y);
                if m <= x || m >= y {
                    break;
                }
                if choice(m)? == current {
                    x = m;
                } else {
                    y = m;
                }
            }
            revenue += pay(current) * (dist.cdf(y) - dist.cdf(start));
            start = y;
            current = choice(y)?;
            a = y;
        }
    }
    revenue += pay(current) * (dist.cdf(hi) - dist.cdf(start));
    Ok(revenue)
}

/// CSV rows `t, bundle, utility, payment` for the assigned bundle.
pub fn allocation_csv(model: &VirtualModel, schedule: &PriceSchedule, grid_size: usize) -> Result<String> {
    let (lo, hi) = model.support();
    let mut out = String::from("t,bundle,utility,payment\n");
    for t in linspace(lo, hi, grid_size) {
        let k = schedule.breakpoints.interval(t);
        let b = schedule.menu[k];
        let p = schedule.prices[k];
        let u = model.eval_value(b, t)? - p;
        let _ = writeln!(out, "{},{},{},{}", fmt12(t), csv_key(b), fmt12(u), fmt12(p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Curve;
    use crate::distribution::TypeDistribution;
    use crate::envelope::solve_minimal_menu;

    fn half_model() -> VirtualModel {
        // φ(b,t) = 2t - 1 against ∅
        VirtualModel::parametric(
            1,
            TypeDistribution::uniform(0.0, 1.0).unwrap(),
            true,
            [(Bundle::grand(1).unwrap(), 2.0, -1.0)],
            Curve::Identity,
            Curve::Zero,
        )
        .unwrap()
    }

    #[test]
    fn single_indifference_menu() {
        let m = half_model();
        let sol = solve_minimal_menu(&m, false).unwrap();
        assert_eq!(sol.kept.len(), 2);
        let cuts = compute_breakpoints(&m, &sol).unwrap();
        assert_eq!(cuts.cuts, vec![0.5]);
        let s = build_prices(&m, &cuts).unwrap();
        assert_eq!(s.prices[0], 0.0);
        // v(b,t) = (1 + t) - 1 = t under the uniform law, so p = v(b, 1/2)
        assert!((s.prices[1] - 0.5).abs() < 1e-12);
        let (env, price) = expected_revenue(&m, &s, 1e-10).unwrap();
        assert!((env - 0.25).abs() < 1e-9);
        assert!((price - 0.25).abs() < 1e-12);
        assert!(verify_ic_ir(&m, &s, 101, IC_SLACK).unwrap().holds());
    }

    #[test]
    fn empty_only_menu() {
        let m = VirtualModel::parametric(
            1,
            TypeDistribution::uniform(0.0, 1.0).unwrap(),
            true,
            [(Bundle::grand(1).unwrap(), 1.0, -3.0)],
            Curve::Identity,
            Curve::Zero,
        )
        .unwrap();
        let sol = solve_minimal_menu(&m, false).unwrap();
        assert_eq!(sol.kept, vec![Bundle::empty(1).unwrap()]);
        let cuts = compute_breakpoints(&m, &sol).unwrap();
        assert!(cuts.cuts.is_empty());
        let s = build_prices(&m, &cuts).unwrap();
        assert_eq!(expected_revenue(&m, &s, 1e-9).unwrap(), (0.0, 0.0));
        let r = verify_ic_ir(&m, &s, 11, IC_SLACK).unwrap();
        assert!(r.holds());
        assert!(r.witnesses.is_empty());
    }
}
