//! JSON model files.
//!
//! ```json
//! {"n": 2, "distribution": {"kind": "uniform", "support": [0, 1]},
//!  "form": "parametric", "g1": {"1": 1, "2": 2, "1,2": 3},
//!  "g2": {"1": -0.5, "2": -1, "1,2": -1.6},
//!  "h1": {"kind": "identity"}, "h2": {"kind": "zero"}, "include_empty": true}
//! ```
//!
//! Direct models carry `"values": {key: {"t": [...], "v": [...]}}` sampled
//! value curves (monotone cubic interpolation) or `{key: <curve>}`; the
//! `virtual` form takes `"curves"` in the same shape.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::bundle::Bundle;
use crate::curve::Curve;
use crate::distribution::TypeDistribution;
use crate::error::{Error, Result};
use crate::model::{DerivativeMode, ModelForm, VirtualModel};

const TOP_KEYS: &[&str] = &[
    "n",
    "goods",
    "distribution",
    "form",
    "g1",
    "g2",
    "h1",
    "h2",
    "values",
    "curves",
    "derivative",
    "include_empty",
];

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

/// Builds a model from a parsed JSON document.
pub fn model_from_json(doc: &Value) -> Result<VirtualModel> {
    let obj = doc.as_object().ok_or_else(|| invalid("model file must be a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !TOP_KEYS.contains(&k.as_str())) {
        return Err(invalid(format!("unknown model field {k:?}")));
    }
    let n = obj
        .get("n")
        .and_then(Value::as_u64)
        .ok_or_else(|| invalid("model needs a positive integer n"))? as usize;
    if let Some(goods) = obj.get("goods") {
        let names = goods.as_array().ok_or_else(|| invalid("goods must be an array of names"))?;
        if names.len() != n {
            return Err(invalid(format!("goods lists {} names for n = {n}", names.len())));
        }
    }
    let dist = match obj.get("distribution") {
        Some(d) => serde_json::from_value::<TypeDistribution>(d.clone())?,
        None => TypeDistribution::uniform(0.0, 1.0)?,
    };
    let include_empty = match obj.get("include_empty") {
        None => true,
        Some(v) => v.as_bool().ok_or_else(|| invalid("include_empty must be a boolean"))?,
    };
    let form = obj.get("form").and_then(Value::as_str).unwrap_or("parametric");
    match form {
        "parametric" => {
            let g1 = coefficient_table(obj, "g1", n)?;
            let g2 = coefficient_table(obj, "g2", n)?;
            for b in g1.keys().chain(g2.keys()) {
                if !(g1.contains_key(b) && g2.contains_key(b)) {
                    return Err(Error::MissingParameter(b.key()));
                }
            }
            let h1 = optional_curve(obj, "h1", Curve::Identity)?;
            let h2 = optional_curve(obj, "h2", Curve::Zero)?;
            let rows = g1.into_iter().map(|(b, a)| (b, a, g2[&b]));
            VirtualModel::parametric(n, dist, include_empty, rows, h1, h2)
        }
        "direct" => {
            let derivative = match obj.get("derivative").and_then(Value::as_str) {
                None | Some("analytic") => DerivativeMode::Analytic,
                Some("finite_difference") | Some("finite-difference") => DerivativeMode::FiniteDifference,
                Some(other) => return Err(invalid(format!("unknown derivative mode {other:?}"))),
            };
            let values = curve_table(obj, "values", n)?;
            VirtualModel::direct(n, dist, include_empty, values, derivative)
        }
        "virtual" => {
            let curves = curve_table(obj, "curves", n)?;
            VirtualModel::virtual_curves(n, dist, include_empty, curves)
        }
        other => Err(invalid(format!("unknown model form {other:?}"))),
    }
}

/// Parses a model file's text.
pub fn model_from_str(text: &str) -> Result<VirtualModel> {
    model_from_json(&serde_json::from_str(text)?)
}

/// Serializes a model so that [`model_from_json`] rebuilds it. Dropped
/// duplicates are written too, so the reload drops them again.
pub fn model_to_json(model: &VirtualModel) -> Value {
    let mut doc = Map::new();
    doc.insert("n".into(), json!(model.n()));
    doc.insert("distribution".into(), serde_json::to_value(model.distribution()).expect("distribution serializes"));
    doc.insert("include_empty".into(), json!(model.include_empty()));
    doc.insert("form".into(), json!(model.form().name()));
    let keyed = |vals: &[f64]| -> Value {
        model.entries().iter().zip(vals).map(|(b, v)| (b.key(), json!(v))).collect::<Map<_, _>>().into()
    };
    let curves = |cs: &[Curve]| -> Value {
        model
            .entries()
            .iter()
            .zip(cs)
            .map(|(b, c)| (b.key(), serde_json::to_value(c).expect("curve serializes")))
            .collect::<Map<_, _>>()
            .into()
    };
    match model.form() {
        ModelForm::Parametric { g1, g2, h1, h2 } => {
            doc.insert("g1".into(), keyed(g1));
            doc.insert("g2".into(), keyed(g2));
            doc.insert("h1".into(), serde_json::to_value(h1).expect("curve serializes"));
            doc.insert("h2".into(), serde_json::to_value(h2).expect("curve serializes"));
        }
        ModelForm::Direct { values, derivative } => {
            doc.insert("values".into(), curves(values));
            let mode = match derivative {
                DerivativeMode::Analytic => "analytic",
                DerivativeMode::FiniteDifference => "finite_difference",
            };
            doc.insert("derivative".into(), json!(mode));
        }
        ModelForm::Virtual { curves: cs } => {
            doc.insert("curves".into(), curves(cs));
        }
    }
    Value::Object(doc)
}

fn table<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Map<String, Value>> {
    obj.get(field)
        .ok_or_else(|| invalid(format!("model needs field {field}")))?
        .as_object()
        .ok_or_else(|| invalid(format!("{field} must map bundle keys to entries")))
}

fn coefficient_table(obj: &Map<String, Value>, field: &str, n: usize) -> Result<BTreeMap<Bundle, f64>> {
    let mut out = BTreeMap::new();
    for (key, v) in table(obj, field)? {
        let b = Bundle::parse_key(key, n)?;
        let x = v.as_f64().ok_or_else(|| invalid(format!("{field}[{key:?}] is not a number")))?;
        if out.insert(b, x).is_some() {
            return Err(invalid(format!("{field} lists bundle {b} twice")));
        }
    }
    Ok(out)
}

fn curve_table(obj: &Map<String, Value>, field: &str, n: usize) -> Result<Vec<(Bundle, Curve)>> {
    let mut seen = BTreeMap::new();
    for (key, v) in table(obj, field)? {
        let b = Bundle::parse_key(key, n)?;
        if seen.insert(b, curve_entry(v, field, key)?).is_some() {
            return Err(invalid(format!("{field} lists bundle {b} twice")));
        }
    }
    Ok(seen.into_iter().collect())
}

fn curve_entry(v: &Value, field: &str, key: &str) -> Result<Curve> {
    if v.get("kind").is_some() {
        return Ok(serde_json::from_value(v.clone())?);
    }
    let samples = |name: &str| -> Result<Vec<f64>> {
        let arr = v
            .get(name)
            .ok_or_else(|| invalid(format!("{field}[{key:?}] needs samples {name}")))?;
        Ok(serde_json::from_value(arr.clone())?)
    };
    let (t, vals) = (samples("t")?, samples("v")?);
    match v.get("interpolation").and_then(Value::as_str) {
        None | Some("monotone_spline") => Curve::monotone_spline(&t, &vals),
        Some("linear") => Curve::linear_interp(&t, &vals),
        Some(other) => Err(invalid(format!("unknown interpolation {other:?}"))),
    }
}

fn optional_curve(obj: &Map<String, Value>, field: &str, default: Curve) -> Result<Curve> {
    match obj.get(field) {
        None => Ok(default),
        Some(v) => Ok(serde_json::from_value(v.clone())?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::builtin_fixture;

    #[test]
    fn parametric_round_trip() {
        for name in ["f4_tree3", "f4_tree4", "e7"] {
            let m = builtin_fixture(name).unwrap();
            let back = model_from_json(&model_to_json(&m)).unwrap();
            assert_eq!(back.entries(), m.entries());
            assert_eq!(back.form(), m.form());
            assert_eq!(back.distribution(), m.distribution());
        }
    }

    #[test]
    fn sampled_direct_model() {
        let doc = json!({
            "n": 1, "form": "direct",
            "values": {"1": {"t": [0.0, 0.5, 1.0], "v": [0.0, 1.0, 2.0]}}
        });
        let m = model_from_json(&doc).unwrap();
        let b = Bundle::parse_key("1", 1).unwrap();
        // v = 2t gives φ = 2t - 2(1 - t) = 4t - 2
        assert!((m.eval_virtual(b, 0.75).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_documents() {
        let base = json!({"n": 1, "g1": {"1": 1.0}, "g2": {"1": -0.5}});
        assert!(model_from_json(&base).is_ok());
        let mut extra = base.clone();
        extra["colour"] = json!("red");
        assert!(matches!(model_from_json(&extra), Err(Error::Validation(_))));
        let mut missing = base.clone();
        missing["g2"] = json!({});
        assert!(matches!(model_from_json(&missing), Err(Error::MissingParameter(_))));
        let mut goods = base.clone();
        goods["goods"] = json!(["a", "b"]);
        assert!(model_from_json(&goods).is_err());
        let mut form = base;
        form["form"] = json!("cubic");
        assert!(model_from_json(&form).is_err());
    }
}
