use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString};
use serde_json::Value;

use menu::envelope::solve_minimal_menu;
use menu::oracle::{builtin_fixture, compare, grid_envelope, random_parametric_model};
use menu::pricing::{build_prices, compute_breakpoints, expected_revenue, verify_ic_ir, IC_SLACK};
use menu::structure::{
    additive_nested_menu, check_full_tree, check_least_favorite_tree, check_pure_bundling, check_robust_ratios,
    check_tree_or_nested_conditions, check_union_quantity, sold_alone,
};
use menu::{model_from_json, model_to_json, Bundle, Error};

create_exception!(bundle_menu, BundleMenuError, PyException);
create_exception!(bundle_menu, RefusedError, BundleMenuError);

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Refused(report) => {
            let text = serde_json::to_string(&report).unwrap_or_default();
            RefusedError::new_err((format!("refusing to solve: {} does not hold", report.name), text))
        }
        Error::Validation(_) | Error::Argument(_) | Error::Domain { .. } | Error::MissingParameter(_) | Error::Size { .. } => {
            PyValueError::new_err(err.to_string())
        }
        other => BundleMenuError::new_err(format!("{}: {other}", other.kind())),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(pythonize::pythonize(py, v)?)
}

fn ser<T: serde::Serialize>(py: Python<'_>, x: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| BundleMenuError::new_err(e.to_string()))?;
    Ok(json_to_py(py, &v)?.unbind())
}

fn keys(bs: &[Bundle]) -> Vec<String> {
    bs.iter().map(|b| b.key()).collect()
}

/// A validated model of virtual value curves over bundles of `n` goods.
#[pyclass(frozen, module = "bundle_menu")]
struct Model {
    inner: menu::VirtualModel,
}

impl Model {
    fn bundle(&self, key: &str) -> PyResult<Bundle> {
        Bundle::parse_key(key, self.inner.n()).map_err(to_py)
    }

    fn bundles_of(&self, ks: &[String]) -> PyResult<Vec<Bundle>> {
        ks.iter().map(|k| self.bundle(k)).collect()
    }
}

#[pymethods]
impl Model {
    /// Builds a model from a JSON string or an equivalent dict.
    #[staticmethod]
    fn from_json(doc: &Bound<'_, PyAny>) -> PyResult<Self> {
        let value: Value = if let Ok(s) = doc.cast::<PyString>() {
            serde_json::from_str(s.to_str()?).map_err(|e| PyValueError::new_err(e.to_string()))?
        } else {
            pythonize::depythonize(doc)?
        };
        Ok(Model {
            inner: model_from_json(&value).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        Ok(Model {
            inner: builtin_fixture(name).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn random(n: usize, seed: u64) -> PyResult<Self> {
        Ok(Model {
            inner: random_parametric_model(n, seed).map_err(to_py)?,
        })
    }

    fn to_json(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        Ok(json_to_py(py, &model_to_json(&self.inner))?.unbind())
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn support(&self) -> (f64, f64) {
        self.inner.support()
    }

    #[getter]
    fn form(&self) -> &'static str {
        self.inner.form().name()
    }

    /// Keys of the bundles the solver considers.
    fn bundles(&self) -> Vec<String> {
        keys(self.inner.bundles())
    }

    #[getter]
    fn notes(&self) -> Vec<String> {
        self.inner.notes().to_vec()
    }

    fn virtual_value(&self, bundle: &str, t: f64) -> PyResult<f64> {
        self.inner.eval_virtual(self.bundle(bundle)?, t).map_err(to_py)
    }

    fn value(&self, bundle: &str, t: f64) -> PyResult<f64> {
        self.inner.eval_value(self.bundle(bundle)?, t).map_err(to_py)
    }

    /// Virtual value at the bottom and top types.
    fn endpoints(&self, bundle: &str) -> PyResult<(f64, f64)> {
        let p = self.inner.endpoint_profile(self.bundle(bundle)?).map_err(to_py)?;
        Ok((p.phi_lo, p.phi_hi))
    }

    fn check_scd_star(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        ser(py, &self.inner.check_scd_star().map_err(to_py)?)
    }

    #[pyo3(signature = (grid_size = 201))]
    fn check_monotonic_differences(&self, py: Python<'_>, grid_size: usize) -> PyResult<Py<PyAny>> {
        ser(py, &self.inner.check_monotonic_differences(grid_size).map_err(to_py)?)
    }

    /// Sold-alone quantity and the root type of `bundle`.
    fn sold_alone(&self, bundle: &str) -> PyResult<(f64, Option<f64>)> {
        let s = sold_alone(&self.inner, self.bundle(bundle)?).map_err(to_py)?;
        Ok((s.q, s.t_b))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n={}, form={}, bundles={})",
            self.inner.n(),
            self.inner.form().name(),
            self.inner.bundles().len()
        )
    }
}

/// A minimal optimal menu with one removal certificate per dropped bundle.
#[pyclass(frozen, module = "bundle_menu")]
struct MenuSolution {
    inner: menu::MenuSolution,
}

#[pymethods]
impl MenuSolution {
    #[getter]
    fn kept(&self) -> Vec<String> {
        keys(&self.inner.kept)
    }

    #[getter]
    fn forced(&self) -> bool {
        self.inner.forced
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    fn to_json(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        Ok(json_to_py(py, &self.inner.to_json())?.unbind())
    }

    #[staticmethod]
    fn from_json(doc: &Bound<'_, PyAny>, n: usize) -> PyResult<Self> {
        let value: Value = pythonize::depythonize(doc)?;
        Ok(MenuSolution {
            inner: menu::MenuSolution::from_json(&value, n).map_err(to_py)?,
        })
    }

    /// Shape of the menu: pure, nested, tree or other.
    fn classify(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        ser(py, &menu::classify(&self.inner.kept).map_err(to_py)?)
    }

    fn __repr__(&self) -> String {
        format!("MenuSolution(kept={:?})", keys(&self.inner.kept))
    }
}

#[pyclass(frozen, module = "bundle_menu")]
struct PriceSchedule {
    inner: menu::pricing::PriceSchedule,
}

#[pymethods]
impl PriceSchedule {
    #[getter]
    fn prices<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (b, p) in self.inner.menu.iter().zip(&self.inner.prices) {
            d.set_item(b.key(), p)?;
        }
        Ok(d)
    }

    #[getter]
    fn breakpoints(&self) -> Vec<f64> {
        self.inner.breakpoints.cuts.clone()
    }

    /// Menu bundles in the order types move through them.
    #[getter]
    fn order(&self) -> Vec<String> {
        keys(&self.inner.menu)
    }

    fn to_json(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        Ok(json_to_py(py, &self.inner.to_json())?.unbind())
    }

    fn __repr__(&self) -> String {
        format!("PriceSchedule(order={:?}, prices={:?})", keys(&self.inner.menu), self.inner.prices)
    }
}

/// Runs the envelope algorithm; raises RefusedError when an assumption
/// check fails and `force` is false.
#[pyfunction]
#[pyo3(signature = (model, force = false))]
fn solve(py: Python<'_>, model: &Model, force: bool) -> PyResult<MenuSolution> {
    let inner = py.detach(|| solve_minimal_menu(&model.inner, force)).map_err(to_py)?;
    Ok(MenuSolution { inner })
}

#[pyfunction]
fn price(model: &Model, solution: &MenuSolution) -> PyResult<PriceSchedule> {
    let cuts = compute_breakpoints(&model.inner, &solution.inner).map_err(to_py)?;
    Ok(PriceSchedule {
        inner: build_prices(&model.inner, &cuts).map_err(to_py)?,
    })
}

/// IC/IR report for a price schedule on a grid of types.
#[pyfunction]
#[pyo3(signature = (model, schedule, grid_size = 2001, tol_ic = IC_SLACK))]
fn verify(py: Python<'_>, model: &Model, schedule: &PriceSchedule, grid_size: usize, tol_ic: f64) -> PyResult<Py<PyAny>> {
    let r = verify_ic_ir(&model.inner, &schedule.inner, grid_size, tol_ic).map_err(to_py)?;
    ser(py, &r)
}

/// Expected revenue as the envelope integral and as collected payments.
#[pyfunction]
fn revenue(model: &Model, schedule: &PriceSchedule) -> PyResult<(f64, f64)> {
    expected_revenue(&model.inner, &schedule.inner, 1e-10).map_err(to_py)
}

/// One structural check by name. `menu` is used by "robust_ratios".
#[pyfunction]
#[pyo3(signature = (model, name, menu = None))]
fn check(py: Python<'_>, model: &Model, name: &str, menu: Option<Vec<String>>) -> PyResult<Py<PyAny>> {
    let m = &model.inner;
    let report = match name {
        "tree_or_nested" => check_tree_or_nested_conditions(m),
        "full_tree" => check_full_tree(m),
        "least_favorite_tree" => check_least_favorite_tree(m),
        "pure_bundling" => check_pure_bundling(m),
        "union_quantity" => check_union_quantity(m).map(|(r, _)| r),
        "additive_nested" => additive_nested_menu(m).map(|(_, r)| r),
        "robust_ratios" => {
            let ks = menu.ok_or_else(|| PyValueError::new_err("robust_ratios needs a menu"))?;
            check_robust_ratios(m, &model.bundles_of(&ks)?)
        }
        other => return Err(PyValueError::new_err(format!("unknown check {other:?}"))),
    }
    .map_err(to_py)?;
    ser(py, &report)
}

/// Nested menu predicted for an additive model, with its report.
#[pyfunction]
fn additive_menu(py: Python<'_>, model: &Model) -> PyResult<(Vec<String>, Py<PyAny>)> {
    let (menu, report) = additive_nested_menu(&model.inner).map_err(to_py)?;
    Ok((keys(&menu), ser(py, &report)?))
}

#[pyfunction]
fn classify(py: Python<'_>, menu: Vec<String>, n: usize) -> PyResult<Py<PyAny>> {
    let bs = menu
        .iter()
        .map(|k| Bundle::parse_key(k, n))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    ser(py, &menu::classify(&bs).map_err(to_py)?)
}

/// Brute-force envelope on a grid: support and agreement with `solution`.
#[pyfunction]
#[pyo3(signature = (model, solution, grid_size = 10001))]
fn oracle(py: Python<'_>, model: &Model, solution: &MenuSolution, grid_size: usize) -> PyResult<Py<PyAny>> {
    let (support, report) = py
        .detach(|| {
            let env = grid_envelope(&model.inner, grid_size)?;
            let report = compare(&model.inner, &solution.inner, &env)?;
            Ok::<_, Error>((env.support.into_iter().collect::<Vec<_>>(), report))
        })
        .map_err(to_py)?;
    let out = serde_json::json!({ "support": keys(&support), "report": report });
    Ok(json_to_py(py, &out)?.unbind())
}

#[pymodule]
#[pyo3(name = "bundle_menu")]
fn bundle_menu_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<MenuSolution>()?;
    m.add_class::<PriceSchedule>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(price, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(revenue, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(additive_menu, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add("BundleMenuError", m.py().get_type::<BundleMenuError>())?;
    m.add("RefusedError", m.py().get_type::<RefusedError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
