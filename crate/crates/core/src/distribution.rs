//! Consumer type distributions on a bounded support.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numeric::linspace;

#[derive(Clone, Debug, PartialEq)]
pub enum DistributionKind {
    Uniform,
    /// `F(t) = ((t - lo) / (hi - lo))^k`.
    Power { k: f64 },
    /// Piecewise-linear CDF through `(t[i], cdf[i])`; the density is
    /// piecewise constant.
    PiecewiseLinearCdf { t: Vec<f64>, cdf: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionSpec", into = "DistributionSpec")]
pub struct TypeDistribution {
    kind: DistributionKind,
    lo: f64,
    hi: f64,
}

impl TypeDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        TypeDistribution::new(DistributionKind::Uniform, lo, hi)
    }

    pub fn power(k: f64, lo: f64, hi: f64) -> Result<Self> {
        TypeDistribution::new(DistributionKind::Power { k }, lo, hi)
    }

    pub fn piecewise_linear(t: Vec<f64>, cdf: Vec<f64>) -> Result<Self> {
        let (lo, hi) = match (t.first(), t.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::Validation("empty CDF table".into())),
        };
        TypeDistribution::new(DistributionKind::PiecewiseLinearCdf { t, cdf }, lo, hi)
    }

    pub fn new(kind: DistributionKind, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!("support [{lo}, {hi}] is not an interval")));
        }
        match &kind {
            DistributionKind::Uniform => {}
            DistributionKind::Power { k } => {
                if !(k.is_finite() && *k > 0.0) {
                    return Err(Error::Validation(format!("power exponent {k} must be positive")));
                }
            }
            DistributionKind::PiecewiseLinearCdf { t, cdf } => {
                if t.len() != cdf.len() || t.len() < 2 {
                    return Err(Error::Validation(
                        "CDF table needs matching t and cdf columns of length >= 2".into(),
                    ));
                }
                if t[0] != lo || t[t.len() - 1] != hi {
                    return Err(Error::Validation("CDF table must span the support".into()));
                }
                if cdf[0] != 0.0 || cdf[cdf.len() - 1] != 1.0 {
                    return Err(Error::Validation("CDF table must run from 0 to 1".into()));
                }
                for w in t.windows(2) {
                    if !(w[1] > w[0]) {
                        return Err(Error::Validation("CDF knots must increase strictly".into()));
                    }
                }
                for w in cdf.windows(2) {
                    if !(w[1] > w[0]) {
                        return Err(Error::Validation(
                            "CDF must increase strictly (zero density is not allowed)".into(),
                        ));
                    }
                }
            }
        }
        let dist = TypeDistribution { kind, lo, hi };
        // Zero density is tolerated only at the support endpoints.
        for t in linspace(lo, hi, 101).into_iter().skip(1).take(99) {
            let f = dist.density(t);
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::Validation(format!("density {f} at t = {t} is not positive")));
            }
        }
        Ok(dist)
    }

    pub fn kind(&self) -> &DistributionKind {
        &self.kind
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }

    pub fn is_standard_uniform(&self) -> bool {
        self.kind == DistributionKind::Uniform && self.lo == 0.0 && self.hi == 1.0
    }

    fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= self.lo {
            return 0.0;
        }
        if t >= self.hi {
            return 1.0;
        }
        let x = (t - self.lo) / self.width();
        match &self.kind {
            DistributionKind::Uniform => x,
            DistributionKind::Power { k } => x.powf(*k),
            DistributionKind::PiecewiseLinearCdf { t: ts, cdf } => {
                let i = segment(ts, t);
                let s = (t - ts[i]) / (ts[i + 1] - ts[i]);
                cdf[i] + s * (cdf[i + 1] - cdf[i])
            }
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        if t < self.lo || t > self.hi {
            return 0.0;
        }
        let x = (t - self.lo) / self.width();
        match &self.kind {
            DistributionKind::Uniform => 1.0 / self.width(),
            DistributionKind::Power { k } => k * x.powf(k - 1.0) / self.width(),
            DistributionKind::PiecewiseLinearCdf { t: ts, cdf } => {
                let i = segment(ts, t);
                (cdf[i + 1] - cdf[i]) / (ts[i + 1] - ts[i])
            }
        }
    }

    /// Inverse CDF; exact at `q = 0` and `q = 1`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Domain {
                what: "quantile",
                value: q,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if q == 0.0 {
            return Ok(self.lo);
        }
        if q == 1.0 {
            return Ok(self.hi);
        }
        let t = match &self.kind {
            DistributionKind::Uniform => self.lo + q * self.width(),
            DistributionKind::Power { k } => self.lo + q.powf(1.0 / k) * self.width(),
            DistributionKind::PiecewiseLinearCdf { t: ts, cdf } => {
                let i = segment(cdf, q);
                let s = (q - cdf[i]) / (cdf[i + 1] - cdf[i]);
                ts[i] + s * (ts[i + 1] - ts[i])
            }
        };
        if !t.is_finite() {
            return Err(Error::numeric(format!("quantile inversion failed at q = {q}"), f64::NAN));
        }
        Ok(t.clamp(self.lo, self.hi))
    }

    /// Interior points where the density is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match &self.kind {
            DistributionKind::PiecewiseLinearCdf { t, .. } => t[1..t.len() - 1].to_vec(),
            _ => Vec::new(),
        }
    }
}

/// Index `i` with `xs[i] <= x < xs[i + 1]`, clamped to the last segment.
fn segment(xs: &[f64], x: f64) -> usize {
    let i = xs.partition_point(|&v| v <= x);
    i.saturating_sub(1).min(xs.len() - 2)
}

#[derive(Serialize, Deserialize)]
struct DistributionSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    params: Value,
    support: [f64; 2],
}

impl TryFrom<DistributionSpec> for TypeDistribution {
    type Error = Error;

    fn try_from(spec: DistributionSpec) -> Result<Self> {
        let [lo, hi] = spec.support;
        let param = |name: &str| -> Result<Value> {
            spec.params
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Validation(format!("distribution {} needs params.{name}", spec.kind)))
        };
        let kind = match spec.kind.as_str() {
            "uniform" => DistributionKind::Uniform,
            "power" => DistributionKind::Power {
                k: serde_json::from_value(param("k")?)?,
            },
            "piecewise-linear-cdf" | "piecewise_linear_cdf" => DistributionKind::PiecewiseLinearCdf {
                t: serde_json::from_value(param("t")?)?,
                cdf: serde_json::from_value(param("cdf")?)?,
            },
            other => return Err(Error::Validation(format!("unknown distribution kind {other:?}"))),
        };
        TypeDistribution::new(kind, lo, hi)
    }
}

impl From<TypeDistribution> for DistributionSpec {
    fn from(d: TypeDistribution) -> Self {
        let (kind, params) = match d.kind {
            DistributionKind::Uniform => ("uniform", Value::Null),
            DistributionKind::Power { k } => ("power", json!({ "k": k })),
            DistributionKind::PiecewiseLinearCdf { t, cdf } => {
                ("piecewise-linear-cdf", json!({ "t": t, "cdf": cdf }))
            }
        };
        DistributionSpec {
            kind: kind.to_string(),
            params,
            support: [d.lo, d.hi],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe_round_trip(d: &TypeDistribution) {
        for t in linspace(d.lo(), d.hi(), 257) {
            let back = d.quantile(d.cdf(t)).unwrap();
            assert!((back - t).abs() < 1e-9, "{d:?}: t={t} back={back}");
        }
        assert_eq!(d.cdf(d.lo()), 0.0);
        assert_eq!(d.cdf(d.hi()), 1.0);
    }

    #[test]
    fn uniform_basics() {
        let d = TypeDistribution::uniform(0.0, 2.0).unwrap();
        assert_eq!(d.cdf(0.5), 0.25);
        assert_eq!(d.density(1.3), 0.5);
        probe_round_trip(&d);
    }

    #[test]
    fn power_quantile_is_root() {
        let d = TypeDistribution::power(2.0, 0.0, 1.0).unwrap();
        assert!((d.quantile(0.25).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(d.quantile(1.0).unwrap(), 1.0);
        probe_round_trip(&d);
    }

    #[test]
    fn piecewise_cdf_round_trip() {
        let d = TypeDistribution::piecewise_linear(vec![1.0, 2.0, 4.0], vec![0.0, 0.7, 1.0]).unwrap();
        assert!((d.density(1.5) - 0.7).abs() < 1e-15);
        assert!((d.density(3.0) - 0.15).abs() < 1e-15);
        assert_eq!(d.kinks(), vec![2.0]);
        probe_round_trip(&d);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(TypeDistribution::uniform(1.0, 1.0).is_err());
        assert!(TypeDistribution::power(0.0, 0.0, 1.0).is_err());
        // flat CDF segment means zero density
        assert!(TypeDistribution::piecewise_linear(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 0.5]).is_err());
        assert!(TypeDistribution::piecewise_linear(vec![0.0, 0.5, 1.0], vec![0.0, 0.6, 0.9]).is_err());
    }

    #[test]
    fn quantile_domain() {
        let d = TypeDistribution::uniform(0.0, 1.0).unwrap();
        assert!(matches!(d.quantile(1.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn json_shape() {
        let d: TypeDistribution =
            serde_json::from_str(r#"{"kind":"power","params":{"k":2},"support":[0,1]}"#).unwrap();
        assert_eq!(d, TypeDistribution::power(2.0, 0.0, 1.0).unwrap());
        let back: TypeDistribution = serde_json::from_value(serde_json::to_value(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        let u: TypeDistribution = serde_json::from_str(r#"{"kind":"uniform","support":[0,2]}"#).unwrap();
        assert_eq!(u.hi(), 2.0);
    }
}
