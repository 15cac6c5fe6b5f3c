//! Python bindings: curve algebra, the fractal-bucket mapping, and the
//! scenario pipeline (report / sweep / validate / replicate), kept as a
//! thin layer over the core crate. Reports cross the boundary as JSON
//! strings; infinite bounds surface as `float('inf')`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use wsncalc_core::curve as core_curve;
use wsncalc_core::node::Convention;
use wsncalc_core::regulators::FractalConstants;
use wsncalc_core::report as core_report;
use wsncalc_core::scenario as core_scenario;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bound_to_f64(b: core_curve::Bound) -> f64 {
    match b {
        core_curve::Bound::Finite(v) => v,
        core_curve::Bound::Infinite => f64::INFINITY,
    }
}

/// Piecewise-affine wide-sense-increasing curve on [0, inf).
#[pyclass(frozen)]
#[derive(Clone)]
struct Curve {
    inner: core_curve::Curve,
}

#[pymethods]
impl Curve {
    /// Envelope `burst + rate * t` (Mbps, Kb).
    #[staticmethod]
    fn token_bucket(rate: f64, burst: f64) -> PyResult<Self> {
        let env = core_curve::TokenBucketEnvelope::single(rate, burst).map_err(value_err)?;
        Ok(Curve { inner: env.to_curve() })
    }

    /// Multi-piece envelope: min over `(rate, burst)` pieces.
    #[staticmethod]
    fn token_bucket_pieces(pieces: Vec<(f64, f64)>) -> PyResult<Self> {
        let env = core_curve::TokenBucketEnvelope::new(pieces).map_err(value_err)?;
        Ok(Curve { inner: env.to_curve() })
    }

    /// Service curve `rate * (t - latency)` after `latency`, zero before.
    #[staticmethod]
    fn rate_latency(rate: f64, latency: f64) -> PyResult<Self> {
        let c = core_curve::RateLatencyCurve::new(rate, latency).map_err(value_err)?;
        Ok(Curve { inner: c.to_curve() })
    }

    /// Fixed-delay element: zero up to `delay`, infinite after.
    #[staticmethod]
    fn burst_delay(delay: f64) -> PyResult<Self> {
        let c = core_curve::BurstDelayCurve::new(delay).map_err(value_err)?;
        Ok(Curve { inner: c.to_curve() })
    }

    /// Value at time `t` in ms (inf past a burst-delay horizon).
    fn eval(&self, t: f64) -> PyResult<f64> {
        if t < 0.0 {
            return Err(value_err("curves are defined on [0, inf)"));
        }
        Ok(bound_to_f64(self.inner.eval(t)))
    }

    /// Min-plus convolution with another curve.
    fn convolve(&self, other: &Curve) -> Curve {
        Curve { inner: self.inner.convolve(&other.inner) }
    }

    /// Pointwise minimum.
    fn min_of(&self, other: &Curve) -> Curve {
        Curve { inner: self.inner.min_of(&other.inner) }
    }

    /// Pointwise sum.
    fn sum_of(&self, other: &Curve) -> Curve {
        Curve { inner: self.inner.sum_of(&other.inner) }
    }

    /// Backlog bound: sup of `self - beta` (inf when unstable).
    fn v_dev(&self, beta: &Curve) -> f64 {
        bound_to_f64(self.inner.v_dev(&beta.inner))
    }

    /// Delay bound: max horizontal gap from `self` to `beta` (inf when
    /// unstable).
    fn h_dev(&self, beta: &Curve) -> f64 {
        bound_to_f64(self.inner.h_dev(&beta.inner))
    }

    /// Breakpoints as `(start_ms, value_kb, slope_mbps)` triples.
    fn segments(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .segments()
            .iter()
            .map(|s| (s.start, s.value, s.slope))
            .collect()
    }

    /// Time after which the curve is infinite, if any.
    fn infinite_after(&self) -> Option<f64> {
        self.inner.infinite_after()
    }

    fn __repr__(&self) -> String {
        format!(
            "Curve(segments={:?}, infinite_after={:?})",
            self.segments(),
            self.inner.infinite_after()
        )
    }
}

/// Maps self-similar traffic statistics (mean Mbps, std-dev Kb, Hurst)
/// onto token-bucket parameters `(rate_mbps, burst_kb)`.
#[pyfunction]
#[pyo3(signature = (mean, std_dev, hurst, gamma = 6.0))]
fn fractal_to_token_bucket(
    mean: f64,
    std_dev: f64,
    hurst: f64,
    gamma: f64,
) -> PyResult<(f64, f64)> {
    let consts = FractalConstants::new(gamma).map_err(value_err)?;
    wsncalc_core::regulators::fractal_to_token_bucket(mean, std_dev, hurst, &consts)
        .map_err(value_err)
}

/// The dimensionless mapping coefficients `(rate_coef, burst_coef)`.
#[pyfunction]
#[pyo3(signature = (hurst, gamma = 6.0))]
fn fractal_coefficients(hurst: f64, gamma: f64) -> PyResult<(f64, f64)> {
    let consts = FractalConstants::new(gamma).map_err(value_err)?;
    wsncalc_core::regulators::fractal_coefficients(hurst, &consts).map_err(value_err)
}

/// Names of the bundled replication scenarios.
#[pyfunction]
fn list_scenarios() -> Vec<&'static str> {
    core_scenario::BUILTIN_NAMES.to_vec()
}

/// JSON text of a bundled scenario.
#[pyfunction]
fn builtin_scenario(name: &str) -> PyResult<&'static str> {
    core_scenario::builtin_scenario(name)
        .ok_or_else(|| value_err(format!("no bundled scenario named '{name}'")))
}

fn parse_with_overrides(
    text: &str,
    convention: Option<&str>,
) -> PyResult<core_scenario::ScenarioDocument> {
    let mut doc = core_scenario::parse_scenario(text).map_err(value_err)?;
    if let Some(conv) = convention {
        doc.convention = match conv {
            "strict" => Convention::Strict,
            "paper" => Convention::Paper,
            other => return Err(value_err(format!("unknown convention '{other}'"))),
        };
    }
    Ok(doc)
}

/// Full bounds report for a scenario document, as a JSON string.
#[pyfunction]
#[pyo3(signature = (scenario_text, scope = "all", convention = None))]
fn report_json(scenario_text: &str, scope: &str, convention: Option<&str>) -> PyResult<String> {
    let doc = parse_with_overrides(scenario_text, convention)?;
    let scope: core_report::Scope = scope.parse().map_err(value_err)?;
    let report = core_report::run_report(&doc, scope).map_err(value_err)?;
    Ok(report.to_json())
}

/// Bounds report rendered as CSV.
#[pyfunction]
#[pyo3(signature = (scenario_text, scope = "all", convention = None))]
fn report_csv(scenario_text: &str, scope: &str, convention: Option<&str>) -> PyResult<String> {
    let doc = parse_with_overrides(scenario_text, convention)?;
    let scope: core_report::Scope = scope.parse().map_err(value_err)?;
    let report = core_report::run_report(&doc, scope).map_err(value_err)?;
    Ok(report.to_csv())
}

/// Parameter sweep as CSV (`param,flow,Q,D,e,DD,dD,ee`).
#[pyfunction]
#[pyo3(signature = (scenario_text, param, start, stop, step))]
fn sweep_csv(
    scenario_text: &str,
    param: &str,
    start: f64,
    stop: f64,
    step: f64,
) -> PyResult<String> {
    let doc = core_scenario::parse_scenario(scenario_text).map_err(value_err)?;
    let param: core_report::SweepParam = param.parse().map_err(value_err)?;
    core_report::sweep(&doc, param, start, stop, step).map_err(value_err)
}

/// Runs the grid oracle against every closed-form bound of the scenario;
/// returns `(passed, report_json)`.
#[pyfunction]
#[pyo3(signature = (scenario_text, grid_step = 0.05, horizon_factor = 4.0))]
fn validate_json(
    scenario_text: &str,
    grid_step: f64,
    horizon_factor: f64,
) -> PyResult<(bool, String)> {
    let doc = core_scenario::parse_scenario(scenario_text).map_err(value_err)?;
    let report = core_report::validate(&doc, grid_step, horizon_factor).map_err(value_err)?;
    let json = serde_json_string(&report)?;
    Ok((report.passed(), json))
}

/// Recomputes the bundled scenarios against their pinned expected values;
/// returns `(all_passed, rows_json)`.
#[pyfunction]
fn replicate_json() -> PyResult<(bool, String)> {
    let rows = core_report::replicate().map_err(value_err)?;
    let pass = rows.iter().all(|r| r.pass);
    let json = serde_json_string(&rows)?;
    Ok((pass, json))
}

fn serde_json_string<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string_pretty(value).map_err(value_err)
}

#[pymodule]
fn wsncalc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Curve>()?;
    m.add_function(wrap_pyfunction!(fractal_to_token_bucket, m)?)?;
    m.add_function(wrap_pyfunction!(fractal_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(report_json, m)?)?;
    m.add_function(wrap_pyfunction!(report_csv, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_csv, m)?)?;
    m.add_function(wrap_pyfunction!(validate_json, m)?)?;
    m.add_function(wrap_pyfunction!(replicate_json, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
