//! Scenario documents: a self-describing JSON format with an explicit
//! units block, validated and normalised to canonical units (Mbps/Kb/ms)
//! on ingestion, plus the bundled replication scenarios and their pinned
//! expected values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{Convention, NodeSpec};
use crate::qos::{EeMode, PathScenario, QosError};
use crate::regulators::{FlowSpec, FractalConstants, MicroFlowKind, RegulatorError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported scenario version '{0}' (expected \"1\")")]
    Version(String),
    #[error("{location}: {detail}")]
    Field { location: String, detail: String },
    #[error(transparent)]
    Regulator(#[from] RegulatorError),
    #[error(transparent)]
    Qos(#[from] QosError),
}

fn field_err(location: impl Into<String>, detail: impl Into<String>) -> ScenarioError {
    ScenarioError::Field { location: location.into(), detail: detail.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateUnit {
    Kbps,
    Mbps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataUnit {
    Kb,
    Mb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum TimeUnit {
    ms,
    s,
}

/// Units the document's numbers are quoted in; converted to Mbps/Kb/ms on
/// parse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsDecl {
    pub rate: RateUnit,
    pub data: DataUnit,
    pub time: TimeUnit,
}

impl UnitsDecl {
    pub const CANONICAL: UnitsDecl = UnitsDecl {
        rate: RateUnit::Mbps,
        data: DataUnit::Kb,
        time: TimeUnit::ms,
    };

    fn rate_to_mbps(&self, v: f64) -> f64 {
        match self.rate {
            RateUnit::Kbps => v / 1000.0,
            RateUnit::Mbps => v,
        }
    }

    fn data_to_kb(&self, v: f64) -> f64 {
        match self.data {
            DataUnit::Kb => v,
            DataUnit::Mb => v * 1000.0,
        }
    }

    fn time_to_ms(&self, v: f64) -> f64 {
        match self.time {
            TimeUnit::ms => v,
            TimeUnit::s => v * 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDecl {
    pub id: String,
    pub service_rate: f64,
    pub latency: f64,
}

fn default_gamma() -> f64 {
    FractalConstants::default().gamma
}

/// A parsed scenario: nodes, flows, the path as an ordered node-id list,
/// fixed inter-node delays, and the computation conventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub version: String,
    pub units: UnitsDecl,
    pub nodes: Vec<NodeDecl>,
    pub flows: Vec<FlowSpec>,
    pub path: Vec<String>,
    #[serde(default)]
    pub fixed_delays: Vec<f64>,
    #[serde(default)]
    pub convention: Convention,
    #[serde(default)]
    pub ee_mode: EeMode,
    #[serde(default = "default_gamma")]
    pub fractal_gamma: f64,
}

fn check_id(location: &str, id: &str) -> Result<(), ScenarioError> {
    if id.is_empty() {
        return Err(field_err(location, "id must not be empty"));
    }
    if !id
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
    {
        return Err(field_err(
            location,
            format!("id '{id}' may only contain ASCII letters, digits, '_', '.', '-'"),
        ));
    }
    Ok(())
}

/// Parses, validates, and unit-normalises a scenario document. The
/// returned document is always in canonical units.
pub fn parse_scenario(text: &str) -> Result<ScenarioDocument, ScenarioError> {
    let mut doc: ScenarioDocument = serde_json::from_str(text)?;
    if doc.version != "1" {
        return Err(ScenarioError::Version(doc.version));
    }
    doc.normalize()?;
    doc.validate()?;
    Ok(doc)
}

impl ScenarioDocument {
    /// Converts every quantity to canonical units and stamps the units
    /// block accordingly.
    fn normalize(&mut self) -> Result<(), ScenarioError> {
        let units = self.units;
        for n in &mut self.nodes {
            n.service_rate = units.rate_to_mbps(n.service_rate);
            n.latency = units.time_to_ms(n.latency);
        }
        for f in &mut self.flows {
            for m in &mut f.micro_flows {
                match &mut m.kind {
                    MicroFlowKind::TokenBucket { rate, burst } => {
                        *rate = units.rate_to_mbps(*rate);
                        *burst = units.data_to_kb(*burst);
                    }
                    MicroFlowKind::Fractal { mean, std_dev, .. } => {
                        *mean = units.rate_to_mbps(*mean);
                        *std_dev = units.data_to_kb(*std_dev);
                    }
                }
            }
        }
        for d in &mut self.fixed_delays {
            *d = units.time_to_ms(*d);
        }
        self.units = UnitsDecl::CANONICAL;
        Ok(())
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.nodes.is_empty() {
            return Err(field_err("nodes", "at least one node is required"));
        }
        if self.flows.is_empty() {
            return Err(field_err("flows", "at least one flow is required"));
        }
        if self.path.is_empty() {
            return Err(field_err("path", "path must list at least one node id"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let loc = format!("nodes[{i}]");
            check_id(&loc, &n.id)?;
            if self.nodes[..i].iter().any(|o| o.id == n.id) {
                return Err(field_err(loc, format!("duplicate node id '{}'", n.id)));
            }
            if !(n.service_rate > 0.0) || !n.service_rate.is_finite() {
                return Err(field_err(
                    format!("{loc}.service_rate"),
                    "service rate must be positive",
                ));
            }
            if !(n.latency >= 0.0) || !n.latency.is_finite() {
                return Err(field_err(
                    format!("{loc}.latency"),
                    "latency must be >= 0",
                ));
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            let loc = format!("flows[{i}]");
            check_id(&loc, &f.id)?;
            if self.flows[..i].iter().any(|o| o.id == f.id) {
                return Err(field_err(loc.clone(), format!("duplicate flow id '{}'", f.id)));
            }
            for (j, m) in f.micro_flows.iter().enumerate() {
                check_id(&format!("{loc}.micro_flows[{j}]"), &m.id)?;
            }
            f.validate().map_err(|e| match e {
                RegulatorError::HurstOutOfRange(h) => field_err(
                    format!("{loc}.micro_flows"),
                    format!("Hurst parameter must satisfy 0.5 < H < 1 (got {h})"),
                ),
                other => ScenarioError::Regulator(other),
            })?;
        }
        for (i, id) in self.path.iter().enumerate() {
            if !self.nodes.iter().any(|n| &n.id == id) {
                return Err(field_err(
                    format!("path[{i}]"),
                    format!("unknown node id '{id}'"),
                ));
            }
        }
        for (i, d) in self.fixed_delays.iter().enumerate() {
            if !(*d >= 0.0) || !d.is_finite() {
                return Err(field_err(
                    format!("fixed_delays[{i}]"),
                    "fixed delays must be >= 0",
                ));
            }
        }
        if !(self.fractal_gamma > 0.0) || !self.fractal_gamma.is_finite() {
            return Err(field_err("fractal_gamma", "gamma must be positive"));
        }
        Ok(())
    }

    /// Serialises the (canonical) document back to JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serialises") + "\n"
    }

    /// Builds the computational model: each path hop becomes a node
    /// carrying the shared flow set and the document's fractal constants.
    pub fn to_path_scenario(&self) -> Result<PathScenario, ScenarioError> {
        let consts = FractalConstants::new(self.fractal_gamma)?;
        let nodes = self
            .path
            .iter()
            .map(|id| {
                let decl = self
                    .nodes
                    .iter()
                    .find(|n| &n.id == id)
                    .expect("path ids validated");
                NodeSpec {
                    id: decl.id.clone(),
                    service_rate: decl.service_rate,
                    latency: decl.latency,
                    flows: self.flows.clone(),
                    fractal: consts,
                }
            })
            .collect();
        Ok(PathScenario::new(
            nodes,
            self.fixed_delays.clone(),
            self.convention,
        )?)
    }
}

/// Names of the bundled replication scenarios.
pub const BUILTIN_NAMES: [&str; 7] = [
    "case2",
    "case1_N10_R200",
    "case1_N10_R50",
    "singlehop",
    "fractal_H075",
    "fractal_H095",
    "fractal_mixed",
];

/// Returns the JSON text of a bundled scenario.
pub fn builtin_scenario(name: &str) -> Option<&'static str> {
    match name {
        "case2" => Some(include_str!("../scenarios/case2.json")),
        "case1_N10_R200" => Some(include_str!("../scenarios/case1_N10_R200.json")),
        "case1_N10_R50" => Some(include_str!("../scenarios/case1_N10_R50.json")),
        "singlehop" => Some(include_str!("../scenarios/singlehop.json")),
        "fractal_H075" => Some(include_str!("../scenarios/fractal_H075.json")),
        "fractal_H095" => Some(include_str!("../scenarios/fractal_H095.json")),
        "fractal_mixed" => Some(include_str!("../scenarios/fractal_mixed.json")),
        _ => None,
    }
}

/// Which bound a replication target pins down. Node metrics are measured
/// at the path's entry node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetric {
    NodeDelay,
    NodeEffectiveBandwidth,
    PathDelay,
    PathJitter,
    PathEffectiveBandwidth,
}

impl TargetMetric {
    pub fn label(&self) -> &'static str {
        match self {
            TargetMetric::NodeDelay => "D",
            TargetMetric::NodeEffectiveBandwidth => "e",
            TargetMetric::PathDelay => "DD",
            TargetMetric::PathJitter => "dD",
            TargetMetric::PathEffectiveBandwidth => "ee",
        }
    }
}

/// One pinned expected value for a bundled scenario.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReplicationTarget {
    pub scenario: &'static str,
    pub flow: &'static str,
    pub metric: TargetMetric,
    pub expected: f64,
    pub tolerance: f64,
}

macro_rules! targets {
    ($($scenario:literal, $flow:literal, $metric:ident, $expected:expr, $tol:expr;)*) => {
        &[$(ReplicationTarget {
            scenario: $scenario,
            flow: $flow,
            metric: TargetMetric::$metric,
            expected: $expected,
            tolerance: $tol,
        }),*]
    };
}

/// The full expected-value table the `replicate-paper` command diffs
/// against (delays in ms, bandwidths in Mbps).
pub fn replication_targets() -> &'static [ReplicationTarget] {
    targets![
        "case2", "A1", PathDelay, 58.9, 0.1;
        "case2", "A2", PathDelay, 59.4, 0.1;
        "case2", "A3", PathDelay, 58.2, 0.1;
        "case2", "A1", PathJitter, 47.3, 0.1;
        "case2", "A2", PathJitter, 47.8, 0.1;
        "case2", "A3", PathJitter, 46.6, 0.1;
        "case2", "A1", PathEffectiveBandwidth, 8.15, 0.02;
        "case2", "A2", PathEffectiveBandwidth, 11.78, 0.02;
        "case2", "A3", PathEffectiveBandwidth, 3.43, 0.02;
        "case1_N10_R200", "A1", PathDelay, 100.0, 1.0;
        "case1_N10_R200", "A2", PathDelay, 102.0, 1.0;
        "case1_N10_R200", "A3", PathDelay, 99.0, 1.0;
        "case1_N10_R50", "A1", PathDelay, 315.0, 1.0;
        "case1_N10_R50", "A2", PathDelay, 320.0, 1.0;
        "case1_N10_R50", "A3", PathDelay, 309.0, 1.0;
        "case1_N10_R200", "A1", NodeDelay, 10.3, 0.1;
        "case1_N10_R200", "A2", NodeDelay, 11.4, 0.1;
        "case1_N10_R200", "A3", NodeDelay, 8.9, 0.1;
        "case1_N10_R50", "A1", NodeDelay, 38.7, 0.5;
        "case1_N10_R50", "A2", NodeDelay, 43.3, 0.3;
        "case1_N10_R50", "A3", NodeDelay, 32.8, 0.3;
        "case1_N10_R50", "A1", NodeEffectiveBandwidth, 12.41, 0.1;
        "case1_N10_R50", "A2", NodeEffectiveBandwidth, 16.17, 0.1;
        "case1_N10_R50", "A3", NodeEffectiveBandwidth, 6.10, 0.1;
        "case1_N10_R200", "A1", NodeEffectiveBandwidth, 46.47, 0.2;
        "case1_N10_R200", "A2", NodeEffectiveBandwidth, 61.18, 0.2;
        "case1_N10_R200", "A3", NodeEffectiveBandwidth, 22.44, 0.2;
        "singlehop", "A1", PathDelay, 21.0, 1.0;
        "singlehop", "A2", PathDelay, 23.0, 1.0;
        "singlehop", "A3", PathDelay, 18.0, 1.0;
        "singlehop", "A1", PathEffectiveBandwidth, 23.2, 0.2;
        "singlehop", "A2", PathEffectiveBandwidth, 30.5, 0.2;
        "singlehop", "A3", PathEffectiveBandwidth, 11.2, 0.2;
        "fractal_H075", "A1", PathDelay, 215.9, 0.5;
        "fractal_H075", "A2", PathDelay, 218.9, 0.5;
        "fractal_H075", "A3", PathDelay, 212.1, 0.5;
        "fractal_H095", "A1", PathDelay, 129.0, 1.0;
        "fractal_H095", "A2", PathDelay, 131.0, 1.0;
        "fractal_H095", "A3", PathDelay, 127.0, 1.0;
        "fractal_mixed", "A1", PathDelay, 222.0, 1.0;
        "fractal_mixed", "A2", PathDelay, 226.0, 1.0;
        "fractal_mixed", "A3", PathDelay, 218.0, 1.0;
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_case2_round_trips_to_reference_parameters() {
        let doc = parse_scenario(builtin_scenario("case2").unwrap()).unwrap();
        assert_eq!(doc.nodes.len(), 5);
        assert_eq!(doc.nodes[0].service_rate, 540.0);
        assert_eq!(doc.nodes[1].latency, 7.8);
        assert_eq!(doc.flows.len(), 3);
        let a1 = &doc.flows[0];
        assert_eq!(a1.micro_flows.len(), 3);
        match a1.micro_flows[0].kind {
            MicroFlowKind::TokenBucket { rate, burst } => {
                assert_eq!(rate, 0.5);
                assert_eq!(burst, 30.0);
            }
            _ => panic!("expected token bucket"),
        }
        assert_eq!(doc.fixed_delays.iter().sum::<f64>(), 11.6);
        assert_eq!(doc.convention, Convention::Paper);
    }

    #[test]
    fn all_builtins_parse_and_build() {
        for name in BUILTIN_NAMES {
            let doc = parse_scenario(builtin_scenario(name).unwrap())
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            doc.to_path_scenario()
                .unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn kbps_inputs_convert_to_mbps() {
        let text = r#"{
            "version": "1",
            "units": {"rate": "Kbps", "data": "Kb", "time": "ms"},
            "nodes": [{"id": "n1", "service_rate": 100000.0, "latency": 1.0}],
            "flows": [{"id": "F", "micro_flows": [
                {"id": "F.1", "kind": "token_bucket", "rate": 500.0, "burst": 30.0}
            ]}],
            "path": ["n1"]
        }"#;
        let doc = parse_scenario(text).unwrap();
        assert_eq!(doc.units, UnitsDecl::CANONICAL);
        assert_eq!(doc.nodes[0].service_rate, 100.0);
        match doc.flows[0].micro_flows[0].kind {
            MicroFlowKind::TokenBucket { rate, burst } => {
                assert_eq!(rate, 0.5);
                assert_eq!(burst, 30.0);
            }
            _ => panic!("expected token bucket"),
        }
    }

    #[test]
    fn seconds_and_megabits_convert() {
        let text = r#"{
            "version": "1",
            "units": {"rate": "Mbps", "data": "Mb", "time": "s"},
            "nodes": [{"id": "n1", "service_rate": 100.0, "latency": 0.001}],
            "flows": [{"id": "F", "micro_flows": [
                {"id": "F.1", "kind": "token_bucket", "rate": 0.5, "burst": 0.03}
            ]}],
            "path": ["n1"],
            "fixed_delays": [0.002]
        }"#;
        let doc = parse_scenario(text).unwrap();
        assert_eq!(doc.nodes[0].latency, 1.0);
        assert_eq!(doc.fixed_delays[0], 2.0);
        match doc.flows[0].micro_flows[0].kind {
            MicroFlowKind::TokenBucket { burst, .. } => {
                assert!((burst - 30.0).abs() < 1e-9)
            }
            _ => panic!("expected token bucket"),
        }
    }

    #[test]
    fn round_trip_is_identity_on_canonical_documents() {
        for name in BUILTIN_NAMES {
            let doc = parse_scenario(builtin_scenario(name).unwrap()).unwrap();
            let again = parse_scenario(&doc.to_json()).unwrap();
            assert_eq!(doc, again, "{name}");
        }
    }

    #[test]
    fn empty_flow_list_is_schema_error() {
        let text = r#"{
            "version": "1",
            "units": {"rate": "Mbps", "data": "Kb", "time": "ms"},
            "nodes": [{"id": "n1", "service_rate": 100.0, "latency": 1.0}],
            "flows": [],
            "path": ["n1"]
        }"#;
        let err = parse_scenario(text).unwrap_err();
        assert!(matches!(err, ScenarioError::Field { .. }), "{err}");
    }

    #[test]
    fn unknown_path_id_is_located() {
        let text = r#"{
            "version": "1",
            "units": {"rate": "Mbps", "data": "Kb", "time": "ms"},
            "nodes": [{"id": "n1", "service_rate": 100.0, "latency": 1.0}],
            "flows": [{"id": "F", "micro_flows": [
                {"id": "F.1", "kind": "token_bucket", "rate": 0.5, "burst": 30.0}
            ]}],
            "path": ["nX"]
        }"#;
        let err = parse_scenario(text).unwrap_err().to_string();
        assert!(err.contains("path[0]") && err.contains("nX"), "{err}");
    }

    #[test]
    fn hurst_out_of_range_is_located() {
        let text = r#"{
            "version": "1",
            "units": {"rate": "Mbps", "data": "Kb", "time": "ms"},
            "nodes": [{"id": "n1", "service_rate": 100.0, "latency": 1.0}],
            "flows": [{"id": "F", "micro_flows": [
                {"id": "F.1", "kind": "fractal", "mean": 0.5, "std_dev": 30.0, "hurst": 1.2}
            ]}],
            "path": ["n1"]
        }"#;
        let err = parse_scenario(text).unwrap_err().to_string();
        assert!(err.contains("flows[0]") && err.contains("Hurst"), "{err}");
    }

    #[test]
    fn bad_unit_reports_position() {
        let text = r#"{
            "version": "1",
            "units": {"rate": "Gbps", "data": "Kb", "time": "ms"},
            "nodes": [], "flows": [], "path": []
        }"#;
        let err = parse_scenario(text).unwrap_err();
        assert!(matches!(err, ScenarioError::Json(_)), "{err}");
        // serde_json carries line/column for the offending variant
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn fractal_gamma_threads_into_the_model() {
        let with_gamma = |g: f64| {
            let text = format!(
                r#"{{
                    "version": "1",
                    "units": {{"rate": "Mbps", "data": "Kb", "time": "ms"}},
                    "nodes": [{{"id": "n1", "service_rate": 100.0, "latency": 1.0}}],
                    "flows": [{{"id": "F", "micro_flows": [
                        {{"id": "F.1", "kind": "fractal", "mean": 0.5, "std_dev": 30.0, "hurst": 0.75}}
                    ]}}],
                    "path": ["n1"],
                    "fractal_gamma": {g}
                }}"#
            );
            let model = parse_scenario(&text).unwrap().to_path_scenario().unwrap();
            crate::qos::node_delay_bound(&model.nodes()[0], "F", Convention::Paper)
                .unwrap()
                .expect_finite("delay")
        };
        // a larger gamma maps to a larger burst, hence a larger delay bound
        assert!(with_gamma(12.0) > with_gamma(6.0));
    }

    #[test]
    fn replication_targets_cover_all_builtins() {
        for t in replication_targets() {
            assert!(
                BUILTIN_NAMES.contains(&t.scenario),
                "{} not bundled",
                t.scenario
            );
        }
    }
}
