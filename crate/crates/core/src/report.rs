//! Report generation, parameter sweeps, oracle-backed validation, and the
//! replication runner.
//!
//! Output is deterministic: rows are sorted (node order, then flow id; or
//! parameter value, then flow id), and the text formats print values at
//! four significant digits (correctly-rounded decimal form of the
//! underlying binary value). CSV uses a period decimal separator, comma
//! delimiter, a header row, and LF line endings.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::curve::Bound;
use crate::node::{Convention, NodeError};
use crate::oracle::{
    greedy_trace, grid_hdev, grid_vdev, simulate_server, GridCurve, OracleError,
};
use crate::qos::{
    self, node_bounds, path_bounds, EeMode, NodeBounds, PathBounds, QosError,
};
use crate::regulators::flow_envelope;
use crate::scenario::{
    builtin_scenario, parse_scenario, replication_targets, ReplicationTarget, ScenarioDocument,
    ScenarioError, TargetMetric, BUILTIN_NAMES,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Qos(#[from] QosError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("sweep range is empty or invalid: from={from}, to={to}, step={step}")]
    BadRange { from: f64, to: f64, step: f64 },
    #[error("sweep parameter {param} does not apply: {detail}")]
    ParamNotApplicable { param: char, detail: String },
}

impl ReportError {
    /// Exit code the CLI maps this error to (input error 4, instability 3).
    pub fn exit_code(&self) -> i32 {
        match self {
            ReportError::Qos(QosError::Node(NodeError::Unstable { .. })) => 3,
            ReportError::Scenario(ScenarioError::Qos(QosError::Node(
                NodeError::Unstable { .. },
            ))) => 3,
            _ => 4,
        }
    }
}

/// Formats a value at four significant digits; large magnitudes keep all
/// their integer digits.
pub fn format_sig4(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.000".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (3 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn format_bound(b: Bound) -> String {
    match b {
        Bound::Finite(v) => format_sig4(v),
        Bound::Infinite => "inf".into(),
    }
}

/// Which bounds a report includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Node,
    Path,
    All,
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "node" => Ok(Scope::Node),
            "path" => Ok(Scope::Path),
            "all" => Ok(Scope::All),
            other => Err(format!("unknown scope '{other}' (node|path|all)")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeBoundsRow {
    pub node_id: String,
    #[serde(flatten)]
    pub bounds: NodeBounds,
}

/// A full bounds report: every value is reproducible from the echoed
/// scenario alone.
#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub tool_version: String,
    pub scenario: ScenarioDocument,
    pub node_bounds: Vec<NodeBoundsRow>,
    pub path_bounds: Vec<PathBounds>,
}

/// Computes node and/or path bounds for a document.
pub fn run_report(doc: &ScenarioDocument, scope: Scope) -> Result<BoundsReport, ReportError> {
    let model = doc.to_path_scenario()?;
    let mut node_rows = Vec::new();
    if matches!(scope, Scope::Node | Scope::All) {
        for node in model.nodes() {
            for b in node_bounds(node, model.convention())? {
                node_rows.push(NodeBoundsRow { node_id: node.id.clone(), bounds: b });
            }
        }
    }
    let path_rows = if matches!(scope, Scope::Path | Scope::All) {
        path_bounds(&model, doc.ee_mode)?
    } else {
        Vec::new()
    };
    Ok(BoundsReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: doc.clone(),
        node_bounds: node_rows,
        path_bounds: path_rows,
    })
}

impl BoundsReport {
    /// Human-readable aligned table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let conv = match self.scenario.convention {
            Convention::Strict => "strict",
            Convention::Paper => "paper",
        };
        let ee = match self.scenario.ee_mode {
            EeMode::Literal => "literal",
            EeMode::Aggregate => "aggregate",
        };
        let _ = writeln!(
            out,
            "bounds report (convention {conv}, ee mode {ee}, units Kb/ms/Mbps)"
        );
        if !self.node_bounds.is_empty() {
            let _ = writeln!(out, "\nnode bounds");
            let _ = writeln!(
                out,
                "  {:<8} {:<8} {:>10} {:>10} {:>10}",
                "node", "flow", "Q", "D", "e"
            );
            for r in &self.node_bounds {
                let _ = writeln!(
                    out,
                    "  {:<8} {:<8} {:>10} {:>10} {:>10}",
                    r.node_id,
                    r.bounds.flow_id,
                    format_sig4(r.bounds.backlog),
                    format_sig4(r.bounds.delay),
                    format_sig4(r.bounds.effective_bandwidth),
                );
            }
        }
        if !self.path_bounds.is_empty() {
            let _ = writeln!(out, "\npath bounds");
            let _ = writeln!(
                out,
                "  {:<8} {:>10} {:>10} {:>10} {:>10}",
                "flow", "DD", "dD", "ee", "Dc"
            );
            for r in &self.path_bounds {
                let _ = writeln!(
                    out,
                    "  {:<8} {:>10} {:>10} {:>10} {:>10}",
                    r.flow_id,
                    format_sig4(r.delay),
                    format_sig4(r.jitter),
                    format_sig4(r.effective_bandwidth),
                    format_sig4(r.fixed_delay_sum),
                );
            }
        }
        out
    }

    /// CSV with one row per bound set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,node,flow,Q,D,e,DD,dD,ee,Dc\n");
        for r in &self.node_bounds {
            let _ = writeln!(
                out,
                "node,{},{},{},{},{},,,,",
                r.node_id,
                r.bounds.flow_id,
                format_sig4(r.bounds.backlog),
                format_sig4(r.bounds.delay),
                format_sig4(r.bounds.effective_bandwidth),
            );
        }
        for r in &self.path_bounds {
            let _ = writeln!(
                out,
                "path,,{},,,,{},{},{},{}",
                r.flow_id,
                format_sig4(r.delay),
                format_sig4(r.jitter),
                format_sig4(r.effective_bandwidth),
                format_sig4(r.fixed_delay_sum),
            );
        }
        out
    }

    /// Machine-readable JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

/// Sweepable scenario parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Service rate of every node.
    R,
    /// Latency of every node.
    T,
    /// Every fixed inter-node delay.
    D,
    /// Hop count: the path becomes N copies of the first node.
    N,
    /// Hurst parameter of every fractal micro-flow.
    H,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "R" | "r" => Ok(SweepParam::R),
            "T" | "t" => Ok(SweepParam::T),
            "D" | "d" => Ok(SweepParam::D),
            "N" | "n" => Ok(SweepParam::N),
            "H" | "h" => Ok(SweepParam::H),
            other => Err(format!("unknown sweep parameter '{other}' (R|T|d|N|H)")),
        }
    }
}

impl SweepParam {
    fn letter(&self) -> char {
        match self {
            SweepParam::R => 'R',
            SweepParam::T => 'T',
            SweepParam::D => 'd',
            SweepParam::N => 'N',
            SweepParam::H => 'H',
        }
    }
}

fn apply_param(
    doc: &ScenarioDocument,
    param: SweepParam,
    value: f64,
) -> Result<ScenarioDocument, ReportError> {
    use crate::regulators::MicroFlowKind;
    let mut out = doc.clone();
    match param {
        SweepParam::R => {
            for n in &mut out.nodes {
                n.service_rate = value;
            }
        }
        SweepParam::T => {
            for n in &mut out.nodes {
                n.latency = value;
            }
        }
        SweepParam::D => {
            for d in &mut out.fixed_delays {
                *d = value;
            }
        }
        SweepParam::N => {
            let n = value.round() as usize;
            if n == 0 || (value - value.round()).abs() > 1e-9 {
                return Err(ReportError::ParamNotApplicable {
                    param: param.letter(),
                    detail: format!("hop count must be a positive integer (got {value})"),
                });
            }
            let template = out
                .nodes
                .iter()
                .find(|d| d.id == out.path[0])
                .expect("validated path")
                .clone();
            let per_hop_delay = out.fixed_delays.first().copied().unwrap_or(0.0);
            out.nodes = (1..=n)
                .map(|i| crate::scenario::NodeDecl {
                    id: format!("n{i}"),
                    service_rate: template.service_rate,
                    latency: template.latency,
                })
                .collect();
            out.path = out.nodes.iter().map(|d| d.id.clone()).collect();
            out.fixed_delays = vec![per_hop_delay; n - 1];
        }
        SweepParam::H => {
            let mut touched = 0;
            for f in &mut out.flows {
                for m in &mut f.micro_flows {
                    if let MicroFlowKind::Fractal { hurst, .. } = &mut m.kind {
                        *hurst = value;
                        touched += 1;
                    }
                }
            }
            if touched == 0 {
                return Err(ReportError::ParamNotApplicable {
                    param: param.letter(),
                    detail: "the scenario has no fractal micro-flows".into(),
                });
            }
        }
    }
    Ok(out)
}

/// Runs the document once per parameter value and emits one CSV row per
/// value per flow: `param,flow,Q,D,e,DD,dD,ee` (node bounds taken at the
/// path's entry node; unstable points print as `inf`).
pub fn sweep(
    doc: &ScenarioDocument,
    param: SweepParam,
    from: f64,
    to: f64,
    step: f64,
) -> Result<String, ReportError> {
    if !(step > 0.0) || from > to || !from.is_finite() || !to.is_finite() {
        return Err(ReportError::BadRange { from, to, step });
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    let mut out = String::from("param,flow,Q,D,e,DD,dD,ee\n");
    let mut flow_ids: Vec<String> = doc.flows.iter().map(|f| f.id.clone()).collect();
    flow_ids.sort();
    for k in 0..count {
        let value = from + k as f64 * step;
        let varied = apply_param(doc, param, value)?;
        let model = varied.to_path_scenario()?;
        let entry = &model.nodes()[0];
        let sum_d = model.fixed_delay_sum();
        for flow in &flow_ids {
            let q = qos::node_backlog_bound(entry, flow, model.convention())?;
            let d = qos::node_delay_bound(entry, flow, model.convention())?;
            let e = qos::node_effective_bandwidth_bound(entry, flow, model.convention())?;
            let (dd, jd, ee) = match qos::path_delay_bound(&model, flow) {
                Ok(dd) => {
                    let ee = qos::path_effective_bandwidth_bound(&model, flow, varied.ee_mode)?;
                    (
                        Bound::Finite(dd),
                        Bound::Finite(dd - sum_d),
                        Bound::Finite(ee),
                    )
                }
                Err(QosError::Node(NodeError::Unstable { .. })) => {
                    (Bound::Infinite, Bound::Infinite, Bound::Infinite)
                }
                Err(e) => return Err(e.into()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                format_sig4(value),
                flow,
                format_bound(q),
                format_bound(d),
                format_bound(e),
                format_bound(dd),
                format_bound(jd),
                format_bound(ee),
            );
        }
    }
    Ok(out)
}

/// What a validation entry measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationKind {
    /// Grid-scan vertical deviation vs the closed-form backlog.
    BacklogGrid,
    /// Grid-scan horizontal deviation vs the closed-form delay.
    DelayGrid,
    /// Greedy-source simulated backlog vs the closed-form bound.
    BacklogSim,
    /// Greedy-source simulated delay vs the closed-form bound.
    DelaySim,
}

impl ValidationKind {
    pub fn label(&self) -> &'static str {
        match self {
            ValidationKind::BacklogGrid => "Q/grid",
            ValidationKind::DelayGrid => "D/grid",
            ValidationKind::BacklogSim => "Q/sim",
            ValidationKind::DelaySim => "D/sim",
        }
    }

    fn is_grid(&self) -> bool {
        matches!(self, ValidationKind::BacklogGrid | ValidationKind::DelayGrid)
    }
}

/// One closed-form-vs-oracle comparison.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationEntry {
    pub node_id: String,
    pub flow_id: String,
    pub kind: ValidationKind,
    pub closed_form: f64,
    pub observed: f64,
    /// One grid cell in the entry's unit (Kb for backlog, ms for delay).
    pub cell: f64,
}

impl ValidationEntry {
    pub fn margin(&self) -> f64 {
        self.closed_form - self.observed
    }

    /// Grid entries must agree with the closed form within one cell;
    /// simulation entries must never exceed the closed form.
    pub fn passes(&self) -> bool {
        let tol = 1e-9 * (1.0 + self.closed_form.abs());
        if self.observed > self.closed_form + tol {
            return false;
        }
        if self.kind.is_grid() {
            self.margin() <= self.cell + tol
        } else {
            true
        }
    }
}

/// Oracle validation report for a scenario.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub grid_step: f64,
    pub horizon: f64,
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passes())
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "oracle validation (grid step {} ms, horizon {} ms)",
            format_sig4(self.grid_step),
            format_sig4(self.horizon)
        );
        let _ = writeln!(
            out,
            "  {:<8} {:<6} {:<7} {:>12} {:>12} {:>10}  result",
            "node", "flow", "check", "closed", "observed", "margin"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "  {:<8} {:<6} {:<7} {:>12} {:>12} {:>10}  {}",
                e.node_id,
                e.flow_id,
                e.kind.label(),
                format_sig4(e.closed_form),
                format_sig4(e.observed),
                format_sig4(e.margin()),
                if e.passes() { "pass" } else { "FAIL" },
            );
        }
        let _ = writeln!(
            out,
            "overall: {}",
            if self.passed() { "pass" } else { "FAIL" }
        );
        out
    }
}

/// Runs the grid oracle against every closed-form node bound of the
/// scenario: exact vs grid deviations, and a greedy-source worst-case
/// FIFO simulation against each bound. Duplicate `(R, T)` hops are
/// checked once.
pub fn validate(
    doc: &ScenarioDocument,
    grid_step: f64,
    horizon_factor: f64,
) -> Result<ValidationReport, ReportError> {
    let model = doc.to_path_scenario()?;
    let conv = model.convention();
    let mut distinct: Vec<&crate::node::NodeSpec> = Vec::new();
    for node in model.nodes() {
        if !distinct
            .iter()
            .any(|n| n.service_rate == node.service_rate && n.latency == node.latency)
        {
            distinct.push(node);
        }
    }
    // horizon covers the largest closed-form delay bound in the scenario
    let mut max_delay: f64 = 1.0;
    for node in &distinct {
        for b in node_bounds(node, conv)? {
            max_delay = max_delay.max(b.delay);
        }
    }
    let horizon = horizon_factor * max_delay;
    let mut entries = Vec::new();
    for node in &distinct {
        let residuals = crate::node::residual_services(node, conv).map_err(QosError::from)?;
        for (flow, res) in node.flows.iter().zip(&residuals) {
            let alpha = flow_envelope(flow, &node.fractal)
                .map_err(NodeError::from)
                .map_err(QosError::from)?;
            let beta = res.curve().to_curve();
            let closed_q = alpha.v_dev(&beta).expect_finite("stable backlog");
            let closed_d = alpha.h_dev(&beta).expect_finite("stable delay");
            let ga = GridCurve::discretize(&alpha, grid_step, horizon)?;
            let gb = GridCurve::discretize(&beta, grid_step, horizon)?;
            let grid_q = grid_vdev(&ga, &gb)?;
            let grid_d = grid_hdev(&ga, &gb)?;
            let trace = greedy_trace(&alpha, grid_step, horizon)?;
            let sim = simulate_server(&trace, &gb)?;
            let slope_sum = alpha.last_slope() + res.rate;
            let cell_kb = grid_step * slope_sum;
            entries.push(ValidationEntry {
                node_id: node.id.clone(),
                flow_id: flow.id.clone(),
                kind: ValidationKind::BacklogGrid,
                closed_form: closed_q,
                observed: grid_q,
                cell: cell_kb,
            });
            entries.push(ValidationEntry {
                node_id: node.id.clone(),
                flow_id: flow.id.clone(),
                kind: ValidationKind::DelayGrid,
                closed_form: closed_d,
                observed: grid_d,
                cell: grid_step,
            });
            entries.push(ValidationEntry {
                node_id: node.id.clone(),
                flow_id: flow.id.clone(),
                kind: ValidationKind::BacklogSim,
                closed_form: closed_q,
                observed: sim.max_backlog,
                cell: cell_kb,
            });
            entries.push(ValidationEntry {
                node_id: node.id.clone(),
                flow_id: flow.id.clone(),
                kind: ValidationKind::DelaySim,
                closed_form: closed_d,
                observed: sim.max_delay,
                cell: grid_step,
            });
        }
    }
    Ok(ValidationReport { grid_step, horizon, entries })
}

/// One expected-vs-actual row of the replication run.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicationRow {
    pub target: ReplicationTarget,
    pub actual: f64,
    pub pass: bool,
}

/// Recomputes every pinned expected value across the bundled scenarios.
pub fn replicate() -> Result<Vec<ReplicationRow>, ReportError> {
    let mut rows = Vec::new();
    for name in BUILTIN_NAMES {
        let doc = parse_scenario(builtin_scenario(name).expect("bundled"))?;
        let model = doc.to_path_scenario()?;
        let node_rows = node_bounds(&model.nodes()[0], model.convention())?;
        let path_rows = path_bounds(&model, doc.ee_mode)?;
        for t in replication_targets().iter().filter(|t| t.scenario == name) {
            let actual = match t.metric {
                TargetMetric::NodeDelay => lookup_node(&node_rows, t.flow)?.delay,
                TargetMetric::NodeEffectiveBandwidth => {
                    lookup_node(&node_rows, t.flow)?.effective_bandwidth
                }
                TargetMetric::PathDelay => lookup_path(&path_rows, t.flow)?.delay,
                TargetMetric::PathJitter => lookup_path(&path_rows, t.flow)?.jitter,
                TargetMetric::PathEffectiveBandwidth => {
                    lookup_path(&path_rows, t.flow)?.effective_bandwidth
                }
            };
            rows.push(ReplicationRow {
                target: *t,
                actual,
                pass: (actual - t.expected).abs() <= t.tolerance,
            });
        }
    }
    Ok(rows)
}

fn lookup_node<'a>(rows: &'a [NodeBounds], flow: &str) -> Result<&'a NodeBounds, ReportError> {
    rows.iter().find(|r| r.flow_id == flow).ok_or_else(|| {
        ReportError::Qos(QosError::Node(NodeError::UnknownFlow {
            node_id: "entry".into(),
            flow_id: flow.into(),
        }))
    })
}

fn lookup_path<'a>(rows: &'a [PathBounds], flow: &str) -> Result<&'a PathBounds, ReportError> {
    rows.iter().find(|r| r.flow_id == flow).ok_or_else(|| {
        ReportError::Qos(QosError::Node(NodeError::UnknownFlow {
            node_id: "path".into(),
            flow_id: flow.into(),
        }))
    })
}

/// Renders replication rows as an aligned table, one line per target.
pub fn replication_table(rows: &[ReplicationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<6} {:<4} {:>10} {:>10} {:>8}  result",
        "scenario", "flow", "", "expected", "actual", "tol"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:<6} {:<4} {:>10} {:>10} {:>8}  {}",
            r.target.scenario,
            r.target.flow,
            r.target.metric.label(),
            format_sig4(r.target.expected),
            format_sig4(r.actual),
            format_sig4(r.target.tolerance),
            if r.pass { "pass" } else { "FAIL" },
        );
    }
    out
}
