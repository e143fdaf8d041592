//! Scalar root finding and quadrature.

use crate::error::{Error, Result};

/// Absolute panel tolerance for adaptive Simpson quadrature.
pub const QUAD_TOL: f64 = 1e-9;

const MAX_DEPTH: u32 = 48;

/// Bracketed bisection. Returns an endpoint directly when `f` vanishes
/// there; otherwise requires a strict sign change and halves the bracket
/// until the midpoint no longer moves.
pub fn bisect<F>(mut f: F, lo: f64, hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a)?;
    let fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(Error::Bracket {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }
    for _ in 0..2000 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    // Both ends straddle the root at machine resolution; report the one with
    // the smaller residual.
    let (ra, rb) = (f(a)?.abs(), f(b)?.abs());
    Ok(if ra <= rb { a } else { b })
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`, with each panel held to
/// `tol` by Richardson comparison.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::numeric(
            format!("non-finite integrand on [{a}, {b}]"),
            delta,
        ));
    }
    if delta.abs() <= 15.0 * tol || (b - a) <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::numeric(
            format!("quadrature did not converge on [{a}, {b}]"),
            delta.abs(),
        ));
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?;
    Ok(l + r)
}

/// Integrates over `[a, b]` in separate panels split at `cuts` (cuts outside
/// the interval are ignored).
pub fn integrate_split<F>(f: &F, a: f64, b: f64, cuts: &[f64], tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut knots: Vec<f64> = cuts.iter().copied().filter(|&c| c > a && c < b).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut total = 0.0;
    let mut left = a;
    for k in knots.into_iter().chain(std::iter::once(b)) {
        total += adaptive_simpson(f, left, k, tol)?;
        left = k;
    }
    Ok(total)
}

/// `count` equally spaced points from `lo` to `hi` inclusive, with exact
/// endpoints.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|i| {
                    if i == count - 1 {
                        hi
                    } else {
                        lo + step * i as f64
                    }
                })
                .collect()
        }
    }
}
