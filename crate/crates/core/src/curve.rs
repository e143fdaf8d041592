//! Scalar curves of the type variable: the `h1`/`h2` shape functions of
//! parametric models, tabulated value curves of direct models, and virtual
//! value curves given outright.

use serde::{Deserialize, Serialize};

use crate::distribution::TypeDistribution;
use crate::error::{Error, Result};
use crate::numeric::linspace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Curve {
    Zero,
    Identity,
    Constant {
        value: f64,
    },
    /// `t^alpha`.
    Power {
        alpha: f64,
    },
    /// `sum_k coeffs[k] * t^k`.
    Polynomial {
        coeffs: Vec<f64>,
    },
    Piecewise(PiecewisePoly),
    /// `inner(quantile(q))`: a curve re-expressed on the quantile scale of
    /// `distribution`.
    Reparam {
        inner: Box<Curve>,
        distribution: TypeDistribution,
    },
}

/// Polynomial pieces separated at `breaks`. Piece `i` covers
/// `(breaks[i-1], breaks[i]]`; the first and last pieces extend without
/// bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePoly {
    pub breaks: Vec<f64>,
    pub pieces: Vec<Piece>,
}

/// `sum_k coeffs[k] * (t - origin)^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    #[serde(default)]
    pub origin: f64,
    pub coeffs: Vec<f64>,
}

impl Piece {
    fn eval(&self, t: f64) -> f64 {
        horner(&self.coeffs, t - self.origin)
    }

    fn derivative(&self, t: f64) -> f64 {
        let x = t - self.origin;
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * x + k as f64 * c;
        }
        acc
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl PiecewisePoly {
    pub fn new(breaks: Vec<f64>, pieces: Vec<Piece>) -> Result<Self> {
        if pieces.len() != breaks.len() + 1 {
            return Err(Error::Validation(format!(
                "{} breaks need {} pieces, got {}",
                breaks.len(),
                breaks.len() + 1,
                pieces.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("piece breaks must increase strictly".into()));
        }
        if pieces.iter().any(|p| p.coeffs.iter().any(|c| !c.is_finite())) {
            return Err(Error::Validation("non-finite polynomial coefficient".into()));
        }
        Ok(PiecewisePoly { breaks, pieces })
    }

    fn piece(&self, t: f64) -> &Piece {
        let i = self.breaks.partition_point(|&b| b < t);
        &self.pieces[i]
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.piece(t).eval(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.piece(t).derivative(t)
    }
}

impl Curve {
    /// Affine curve `slope * t + intercept`.
    pub fn affine(slope: f64, intercept: f64) -> Curve {
        Curve::Polynomial {
            coeffs: vec![intercept, slope],
        }
    }

    /// Piecewise polynomial in global `t` coefficients; piece `i` applies on
    /// `(breaks[i-1], breaks[i]]`.
    pub fn piecewise(breaks: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Curve> {
        let pieces = coeffs
            .into_iter()
            .map(|coeffs| Piece { origin: 0.0, coeffs })
            .collect();
        Ok(Curve::Piecewise(PiecewisePoly::new(breaks, pieces)?))
    }

    /// Linear interpolation through the samples.
    pub fn linear_interp(t: &[f64], v: &[f64]) -> Result<Curve> {
        check_samples(t, v)?;
        let pieces = t
            .windows(2)
            .zip(v.windows(2))
            .map(|(tw, vw)| Piece {
                origin: tw[0],
                coeffs: vec![vw[0], (vw[1] - vw[0]) / (tw[1] - tw[0])],
            })
            .collect();
        Ok(Curve::Piecewise(PiecewisePoly::new(interior(t), pieces)?))
    }

    /// Monotone piecewise-cubic Hermite interpolation (Fritsch-Carlson
    /// slopes). Reproduces linear data exactly and never overshoots
    /// monotone data.
    pub fn monotone_spline(t: &[f64], v: &[f64]) -> Result<Curve> {
        check_samples(t, v)?;
        let m = t.len();
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..m - 1).map(|k| (v[k + 1] - v[k]) / h[k]).collect();
        let mut d = vec![0.0; m];
        if m == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..m - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[m - 1] = end_slope(h[m - 2], h[m - 3], delta[m - 2], delta[m - 3]);
        }
        let pieces = (0..m - 1)
            .map(|k| {
                let c2 = (3.0 * delta[k] - 2.0 * d[k] - d[k + 1]) / h[k];
                let c3 = (d[k] + d[k + 1] - 2.0 * delta[k]) / (h[k] * h[k]);
                Piece {
                    origin: t[k],
                    coeffs: vec![v[k], d[k], c2, c3],
                }
            })
            .collect();
        Ok(Curve::Piecewise(PiecewisePoly::new(interior(t), pieces)?))
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Curve::Zero => 0.0,
            Curve::Identity => t,
            Curve::Constant { value } => *value,
            Curve::Power { alpha } => power(t, *alpha),
            Curve::Polynomial { coeffs } => horner(coeffs, t),
            Curve::Piecewise(p) => p.eval(t),
            Curve::Reparam {
                inner,
                distribution,
            } => inner.eval(quantile_clamped(distribution, t)),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Curve::Zero | Curve::Constant { .. } => 0.0,
            Curve::Identity => 1.0,
            Curve::Power { alpha } => alpha * power(t, alpha - 1.0),
            Curve::Polynomial { coeffs } => Piece {
                origin: 0.0,
                coeffs: coeffs.clone(),
            }
            .derivative(t),
            Curve::Piecewise(p) => p.derivative(t),
            Curve::Reparam {
                inner,
                distribution,
            } => {
                let x = quantile_clamped(distribution, t);
                inner.derivative(x) / distribution.density(x)
            }
        }
    }

    /// Interior points where the curve may fail to be smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Curve::Piecewise(p) => p.breaks.clone(),
            Curve::Reparam {
                inner,
                distribution,
            } => inner
                .kinks()
                .into_iter()
                .chain(distribution.kinks())
                .map(|x| distribution.cdf(x))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Whether the curve is weakly monotone (either direction) on `count`
    /// probe points of `[lo, hi]`.
    pub fn is_monotone_on(&self, lo: f64, hi: f64, count: usize) -> bool {
        let values: Vec<f64> = linspace(lo, hi, count).into_iter().map(|t| self.eval(t)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-12 * scale;
        let up = values.windows(2).all(|w| w[1] >= w[0] - tol);
        let down = values.windows(2).all(|w| w[1] <= w[0] + tol);
        up || down
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Curve::Zero => true,
            Curve::Constant { value } => *value == 0.0,
            Curve::Polynomial { coeffs } => coeffs.iter().all(|&c| c == 0.0),
            Curve::Reparam { inner, .. } => inner.is_zero(),
            _ => false,
        }
    }
}

fn power(t: f64, alpha: f64) -> f64 {
    if alpha.fract() == 0.0 && alpha.abs() < i32::MAX as f64 {
        t.powi(alpha as i32)
    } else {
        t.powf(alpha)
    }
}

fn quantile_clamped(d: &TypeDistribution, q: f64) -> f64 {
    d.quantile(q.clamp(0.0, 1.0)).unwrap_or(f64::NAN)
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

fn interior(t: &[f64]) -> Vec<f64> {
    t[1..t.len() - 1].to_vec()
}

fn check_samples(t: &[f64], v: &[f64]) -> Result<()> {
    if t.len() != v.len() || t.len() < 2 {
        return Err(Error::Validation(
            "samples need matching t and v columns of length >= 2".into(),
        ));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("sample abscissae must increase strictly".into()));
    }
    if t.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::Validation("non-finite sample".into()));
    }
    Ok(())
}
