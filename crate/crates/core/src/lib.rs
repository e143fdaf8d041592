//! Minimal optimal bundling menus for a multi-good monopolist facing
//! one-dimensional consumer types.
//!
//! The optimal menu is the support of the upper envelope of the bundles'
//! virtual value curves. [`envelope::solve_minimal_menu`] computes it from
//! endpoint values alone; [`pricing`] turns it into prices, [`structure`]
//! classifies it and [`oracle`] checks it against brute force.

pub mod bundle;
pub mod curve;
pub mod distribution;
pub mod envelope;
pub mod error;
pub mod model;
pub mod model_json;
pub mod numeric;
pub mod oracle;
pub mod pricing;
pub mod report;
pub mod structure;

pub use bundle::{Bundle, StochasticBundle, MAX_GOODS};
pub use curve::Curve;
pub use distribution::{DistributionKind, TypeDistribution};
pub use envelope::{solve_minimal_menu, DominanceCertificate, MenuSolution, Stage};
pub use error::{Error, Result};
pub use model::{DerivativeMode, EndpointProfile, ModelForm, VirtualModel};
pub use model_json::{model_from_json, model_from_str, model_to_json};
pub use report::{ConditionReport, Verdict, Witness};
pub use structure::{classify, MenuShape, MenuStructureLabel};
