//! Pass/fail verdicts for assumption and hypothesis checks.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bundle::Bundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Fails,
    Unknown,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    }

    pub fn is_true(self) -> bool {
        self == Verdict::Holds
    }
}

// JSON shape: `true`, `false` or `"unknown"`.
impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Verdict::Holds => s.serialize_bool(true),
            Verdict::Fails => s.serialize_bool(false),
            Verdict::Unknown => s.serialize_str("unknown"),
        }
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Bool(b) => Ok(Verdict::from_bool(b)),
            serde_json::Value::String(s) if s == "unknown" => Ok(Verdict::Unknown),
            other => Err(serde::de::Error::custom(format!("bad verdict {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub kind: String,
    pub bundles: Vec<String>,
    pub values: Vec<f64>,
}

impl Witness {
    pub fn new(kind: impl Into<String>, bundles: &[Bundle], values: Vec<f64>) -> Self {
        Witness {
            kind: kind.into(),
            bundles: bundles.iter().map(|b| b.key()).collect(),
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub holds: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default)]
    pub witnesses: Vec<Witness>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ConditionReport {
    pub fn new(name: impl Into<String>, holds: Verdict) -> Self {
        ConditionReport {
            name: name.into(),
            holds,
            method: None,
            witnesses: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn holds(&self) -> bool {
        self.holds.is_true()
    }

    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = Some(method.into());
        self
    }

    pub fn with_witness(mut self, w: Witness) -> Self {
        self.witnesses.push(w);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_json() {
        let r = ConditionReport::new("x", Verdict::Unknown).with_method("affine");
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["holds"], "unknown");
        let back: ConditionReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        let t = serde_json::to_value(ConditionReport::new("y", Verdict::Holds)).unwrap();
        assert_eq!(t["holds"], true);
        assert!(t.get("method").is_none());
    }
}
