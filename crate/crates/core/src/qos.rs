//! Closed-form QoS bounds: per-node backlog/delay/effective bandwidth and
//! per-path delay/jitter/effective bandwidth over a chain of nodes with
//! fixed inter-node delays.
//!
//! Node bounds are computed through the exact curve algebra (vertical and
//! horizontal deviation of the flow envelope against the residual service
//! curve); the affine closed forms fall out of those and the test suites
//! check both routes against the grid oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{Bound, BurstDelayCurve, Curve, RateLatencyCurve};
use crate::node::{
    residual_service, residual_services, Convention, NodeError, NodeSpec, ResidualService,
};
use crate::regulators::{flow_envelope, flow_totals, token_bucket_params, FlowSpec};
use crate::{Kb, Mbps, Ms};

#[derive(Debug, Error, PartialEq)]
pub enum QosError {
    #[error("path needs at least one node")]
    EmptyPath,
    #[error("fixed delays must be >= 0 (got {0})")]
    NegativeFixedDelay(f64),
    #[error("node '{node_id}' does not carry the shared flow set (path nodes must all serve the same flows)")]
    FlowSetMismatch { node_id: String },
    #[error(transparent)]
    Node(#[from] NodeError),
}

/// How the path effective bandwidth treats a flow's micro-flows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EeMode {
    /// Per-micro-flow form: max over micro-flows of max(rate, burst / DD).
    Literal,
    /// Aggregate form: max(sum of rates, sum of bursts / DD) (replication
    /// default).
    #[default]
    Aggregate,
}

/// An ordered chain of nodes all serving the same flow set, with fixed
/// inter-node delays.
#[derive(Clone, Debug, PartialEq)]
pub struct PathScenario {
    nodes: Vec<NodeSpec>,
    fixed_delays: Vec<Ms>,
    convention: Convention,
}

impl PathScenario {
    pub fn new(
        nodes: Vec<NodeSpec>,
        fixed_delays: Vec<Ms>,
        convention: Convention,
    ) -> Result<Self, QosError> {
        if nodes.is_empty() {
            return Err(QosError::EmptyPath);
        }
        for &d in &fixed_delays {
            if !(d >= 0.0) {
                return Err(QosError::NegativeFixedDelay(d));
            }
        }
        for node in &nodes {
            node.validate()?;
        }
        let entry = &nodes[0];
        for node in &nodes[1..] {
            if node.flows != entry.flows {
                return Err(QosError::FlowSetMismatch { node_id: node.id.clone() });
            }
        }
        Ok(PathScenario { nodes, fixed_delays, convention })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn fixed_delays(&self) -> &[Ms] {
        &self.fixed_delays
    }

    pub fn fixed_delay_sum(&self) -> Ms {
        self.fixed_delays.iter().sum()
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    /// The shared flow set (as carried by the entry node).
    pub fn flows(&self) -> &[FlowSpec] {
        &self.nodes[0].flows
    }

    fn entry(&self) -> &NodeSpec {
        &self.nodes[0]
    }

    fn residuals_for(&self, flow_id: &str) -> Result<Vec<ResidualService>, QosError> {
        self.nodes
            .iter()
            .map(|n| residual_service(n, flow_id, self.convention).map_err(QosError::from))
            .collect()
    }
}

/// Per-node bounds of one flow.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeBounds {
    pub flow_id: String,
    pub backlog: Kb,
    pub delay: Ms,
    pub effective_bandwidth: Mbps,
}

/// Per-path bounds of one flow.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathBounds {
    pub flow_id: String,
    pub delay: Ms,
    pub jitter: Ms,
    pub effective_bandwidth: Mbps,
    pub fixed_delay_sum: Ms,
}

/// Backlog bound: vertical deviation of the flow envelope against the
/// flow's residual service curve. Infinite when the node is unstable.
pub fn node_backlog_bound(
    node: &NodeSpec,
    flow_id: &str,
    conv: Convention,
) -> Result<Bound, QosError> {
    let flow = node.flow(flow_id)?;
    match residual_service(node, flow_id, conv) {
        Ok(res) => {
            let alpha = flow_envelope(flow, &node.fractal).map_err(NodeError::from)?;
            Ok(alpha.v_dev(&res.curve().to_curve()))
        }
        Err(NodeError::Unstable { .. }) => Ok(Bound::Infinite),
        Err(e) => Err(e.into()),
    }
}

/// Delay bound: horizontal deviation of the flow envelope against the
/// flow's residual service curve. Infinite when the node is unstable.
pub fn node_delay_bound(
    node: &NodeSpec,
    flow_id: &str,
    conv: Convention,
) -> Result<Bound, QosError> {
    let flow = node.flow(flow_id)?;
    match residual_service(node, flow_id, conv) {
        Ok(res) => {
            let alpha = flow_envelope(flow, &node.fractal).map_err(NodeError::from)?;
            Ok(alpha.h_dev(&res.curve().to_curve()))
        }
        Err(NodeError::Unstable { .. }) => Ok(Bound::Infinite),
        Err(e) => Err(e.into()),
    }
}

/// Effective bandwidth: `sup over t of alpha(t) / (t + D)` with `D` the
/// node delay bound; the smallest constant rate that keeps the flow within
/// its delay bound.
pub fn node_effective_bandwidth_bound(
    node: &NodeSpec,
    flow_id: &str,
    conv: Convention,
) -> Result<Bound, QosError> {
    let flow = node.flow(flow_id)?;
    let delay = match node_delay_bound(node, flow_id, conv)? {
        Bound::Finite(d) => d,
        Bound::Infinite => return Ok(Bound::Infinite),
    };
    let alpha = flow_envelope(flow, &node.fractal).map_err(NodeError::from)?;
    Ok(Bound::Finite(ratio_sup(&alpha, delay)))
}

/// `sup over t >= 0 of alpha(t) / (t + d)` for a piecewise-affine alpha:
/// the ratio is monotone within each segment, so the sup sits on a
/// breakpoint or at the long-run slope.
fn ratio_sup(alpha: &Curve, d: Ms) -> f64 {
    let mut best = alpha.last_slope();
    for seg in alpha.segments() {
        let t = seg.start;
        best = best.max(seg.value / (t + d));
    }
    best
}

/// End-to-end service of the path for one flow, closed form: the minimum
/// residual rate, with every residual latency and fixed delay summed.
pub fn path_service_curve(path: &PathScenario, flow_id: &str) -> Result<RateLatencyCurve, QosError> {
    let residuals = path.residuals_for(flow_id)?;
    let rate = residuals
        .iter()
        .map(|r| r.rate)
        .fold(f64::INFINITY, f64::min);
    let latency: Ms =
        residuals.iter().map(|r| r.latency).sum::<f64>() + path.fixed_delay_sum();
    Ok(RateLatencyCurve::new(rate, latency).expect("stable path residuals"))
}

/// Same end-to-end service computed through the curve algebra: convolve
/// every residual curve and a burst-delay element carrying the summed
/// fixed delays. Must agree with [`path_service_curve`] (the tests and the
/// `validate` command hold the two routes together).
pub fn path_service_curve_convolved(
    path: &PathScenario,
    flow_id: &str,
) -> Result<Curve, QosError> {
    let residuals = path.residuals_for(flow_id)?;
    let mut acc = BurstDelayCurve::new(0.0).expect("zero delay").to_curve();
    for r in &residuals {
        acc = acc.convolve(&r.curve().to_curve());
    }
    let delay = BurstDelayCurve::new(path.fixed_delay_sum()).expect("non-negative sum");
    Ok(acc.convolve(&delay.to_curve()))
}

/// Multi-hop delay bound: the entry node's latency, plus the flow's entry
/// burst drained at the path's minimum residual rate, plus every residual
/// latency and fixed delay.
pub fn path_delay_bound(path: &PathScenario, flow_id: &str) -> Result<Ms, QosError> {
    let entry = path.entry();
    let flow = entry.flow(flow_id)?;
    let (_, own_burst) = flow_totals(flow, &entry.fractal).map_err(NodeError::from)?;
    let service = path_service_curve(path, flow_id)?;
    Ok(entry.latency + own_burst / service.rate + service.latency)
}

/// Jitter bound: path delay minus the summed fixed delays, exactly.
pub fn path_jitter_bound(path: &PathScenario, flow_id: &str) -> Result<Ms, QosError> {
    Ok(path_delay_bound(path, flow_id)? - path.fixed_delay_sum())
}

/// Path effective bandwidth, per [`EeMode`].
pub fn path_effective_bandwidth_bound(
    path: &PathScenario,
    flow_id: &str,
    mode: EeMode,
) -> Result<Mbps, QosError> {
    let entry = path.entry();
    let flow = entry.flow(flow_id)?;
    let dd = path_delay_bound(path, flow_id)?;
    match mode {
        EeMode::Aggregate => {
            let (rate, burst) = flow_totals(flow, &entry.fractal).map_err(NodeError::from)?;
            Ok(rate.max(burst / dd))
        }
        EeMode::Literal => {
            let mut best = 0.0f64;
            for mf in &flow.micro_flows {
                let (r, b) = token_bucket_params(mf, &entry.fractal).map_err(NodeError::from)?;
                best = best.max(r).max(b / dd);
            }
            Ok(best)
        }
    }
}

/// All three node bounds for every flow at a node, in flow order.
pub fn node_bounds(node: &NodeSpec, conv: Convention) -> Result<Vec<NodeBounds>, QosError> {
    // single residual pass; bounds reuse it per flow
    let residuals = residual_services(node, conv)?;
    let mut out = Vec::with_capacity(residuals.len());
    for (flow, res) in node.flows.iter().zip(&residuals) {
        let alpha = flow_envelope(flow, &node.fractal).map_err(NodeError::from)?;
        let beta = res.curve().to_curve();
        let backlog = alpha.v_dev(&beta).expect_finite("backlog of stable node");
        let delay = alpha.h_dev(&beta).expect_finite("delay of stable node");
        out.push(NodeBounds {
            flow_id: flow.id.clone(),
            backlog,
            delay,
            effective_bandwidth: ratio_sup(&alpha, delay),
        });
    }
    Ok(out)
}

/// Path bounds for every flow, in flow order.
pub fn path_bounds(path: &PathScenario, mode: EeMode) -> Result<Vec<PathBounds>, QosError> {
    let sum_d = path.fixed_delay_sum();
    path.flows()
        .iter()
        .map(|flow| {
            let delay = path_delay_bound(path, &flow.id)?;
            let ee = path_effective_bandwidth_bound(path, &flow.id, mode)?;
            Ok(PathBounds {
                flow_id: flow.id.clone(),
                delay,
                jitter: delay - sum_d,
                effective_bandwidth: ee,
                fixed_delay_sum: sum_d,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regulators::FractalConstants;
    use crate::test_fixtures::reference_flows;

    fn node(rate: f64, latency: f64) -> NodeSpec {
        NodeSpec {
            id: "n1".into(),
            service_rate: rate,
            latency,
            flows: reference_flows(),
            fractal: FractalConstants::default(),
        }
    }

    fn uniform_path(n: usize, rate: f64, latency: f64, d: f64) -> PathScenario {
        let nodes = (0..n)
            .map(|i| NodeSpec {
                id: format!("n{}", i + 1),
                ..node(rate, latency)
            })
            .collect();
        let delays = vec![d; n.saturating_sub(1)];
        PathScenario::new(nodes, delays, Convention::Paper).unwrap()
    }

    fn case2_path() -> PathScenario {
        let params = [
            (540.0, 5.80),
            (510.0, 7.80),
            (624.0, 3.38),
            (480.0, 6.54),
            (420.0, 3.20),
        ];
        let nodes = params
            .iter()
            .enumerate()
            .map(|(i, &(r, t))| NodeSpec {
                id: format!("n{}", i + 1),
                ..node(r, t)
            })
            .collect();
        PathScenario::new(
            nodes,
            vec![1.2, 2.3, 2.0, 3.5, 2.6],
            Convention::Paper,
        )
        .unwrap()
    }

    #[test]
    fn backlog_bound_flow_a1() {
        let q = node_backlog_bound(&node(200.0, 1.0), "A1", Convention::Paper)
            .unwrap()
            .expect_finite("backlog");
        // own burst plus own rate carried over the residual latency 7.9
        assert!((q - (480.0 + 1.22 * 7.9)).abs() < 1e-9, "{q}");
    }

    #[test]
    fn backlog_zero_for_burstless_flow_at_idle_node() {
        let n = NodeSpec {
            id: "n".into(),
            service_rate: 10.0,
            latency: 0.0,
            flows: vec![FlowSpec {
                id: "F".into(),
                micro_flows: vec![crate::regulators::MicroFlowSpec {
                    id: "F.1".into(),
                    kind: crate::regulators::MicroFlowKind::TokenBucket { rate: 1.0, burst: 0.0 },
                }],
            }],
            fractal: FractalConstants::default(),
        };
        let q = node_backlog_bound(&n, "F", Convention::Paper).unwrap();
        assert_eq!(q, Bound::Finite(0.0));
    }

    #[test]
    fn bounds_infinite_on_unstable_node() {
        let n = node(2.0, 1.0);
        for f in ["A1", "A2", "A3"] {
            assert_eq!(node_backlog_bound(&n, f, Convention::Paper).unwrap(), Bound::Infinite);
            assert_eq!(node_delay_bound(&n, f, Convention::Paper).unwrap(), Bound::Infinite);
            assert_eq!(
                node_effective_bandwidth_bound(&n, f, Convention::Paper).unwrap(),
                Bound::Infinite
            );
        }
    }

    #[test]
    fn delay_bounds_match_reference_at_r200() {
        let n = node(200.0, 1.0);
        let want = [("A1", 10.3138), ("A2", 11.4268), ("A3", 8.9104)];
        for (f, w) in want {
            let d = node_delay_bound(&n, f, Convention::Paper)
                .unwrap()
                .expect_finite("delay");
            assert!((d - w).abs() < 5e-4, "{f}: {d} vs {w}");
        }
    }

    #[test]
    fn delay_closed_form_agrees_with_deviation_route() {
        for (rate, lat) in [(200.0, 1.0), (50.0, 1.0), (540.0, 5.8)] {
            let n = node(rate, lat);
            for conv in [Convention::Strict, Convention::Paper] {
                for flow in ["A1", "A2", "A3"] {
                    let res = residual_service(&n, flow, conv).unwrap();
                    let (_, own_burst) =
                        flow_totals(n.flow(flow).unwrap(), &n.fractal).unwrap();
                    let closed = res.latency + own_burst / res.rate;
                    let via_curve = node_delay_bound(&n, flow, conv)
                        .unwrap()
                        .expect_finite("delay");
                    assert!((closed - via_curve).abs() < 1e-9, "{flow}@{rate}");
                }
            }
        }
    }

    #[test]
    fn delay_is_latency_for_single_burstless_flow() {
        let n = NodeSpec {
            id: "n".into(),
            service_rate: 10.0,
            latency: 2.5,
            flows: vec![FlowSpec {
                id: "F".into(),
                micro_flows: vec![crate::regulators::MicroFlowSpec {
                    id: "F.1".into(),
                    kind: crate::regulators::MicroFlowKind::TokenBucket { rate: 1.0, burst: 0.0 },
                }],
            }],
            fractal: FractalConstants::default(),
        };
        // single flow, zero burst: D = T under the strict convention
        let d = node_delay_bound(&n, "F", Convention::Strict).unwrap();
        assert_eq!(d, Bound::Finite(2.5));
    }

    #[test]
    fn effective_bandwidth_matches_reference() {
        let n = node(200.0, 1.0);
        let e = node_effective_bandwidth_bound(&n, "A3", Convention::Paper)
            .unwrap()
            .expect_finite("e");
        assert!((e - 22.4457).abs() < 1e-3, "{e}");
        let n = node(50.0, 1.0);
        let e = node_effective_bandwidth_bound(&n, "A2", Convention::Paper)
            .unwrap()
            .expect_finite("e");
        assert!((e - 16.2644).abs() < 1e-3, "{e}");
    }

    #[test]
    fn effective_bandwidth_of_burstless_flow_is_rate_sum() {
        let n = NodeSpec {
            id: "n".into(),
            service_rate: 10.0,
            latency: 1.0,
            flows: vec![FlowSpec {
                id: "F".into(),
                micro_flows: vec![
                    crate::regulators::MicroFlowSpec {
                        id: "F.1".into(),
                        kind: crate::regulators::MicroFlowKind::TokenBucket {
                            rate: 1.0,
                            burst: 0.0,
                        },
                    },
                    crate::regulators::MicroFlowSpec {
                        id: "F.2".into(),
                        kind: crate::regulators::MicroFlowKind::TokenBucket {
                            rate: 0.5,
                            burst: 0.0,
                        },
                    },
                ],
            }],
            fractal: FractalConstants::default(),
        };
        let e = node_effective_bandwidth_bound(&n, "F", Convention::Paper).unwrap();
        assert_eq!(e, Bound::Finite(1.5));
    }

    #[test]
    fn path_service_closed_form_case2() {
        let path = case2_path();
        let svc = path_service_curve(&path, "A1").unwrap();
        assert!((svc.rate - 418.86).abs() < 1e-9, "{}", svc.rate);
        let t_sum = 8.3556 + 10.5059 + 5.5915 + 9.415 + 6.4857;
        assert!((svc.latency - (t_sum + 11.6)).abs() < 1e-3, "{}", svc.latency);
    }

    #[test]
    fn path_service_single_node_is_residual() {
        let path = uniform_path(1, 100.0, 1.0, 0.0);
        let svc = path_service_curve(&path, "A1").unwrap();
        let res = residual_service(&path.nodes()[0], "A1", Convention::Paper).unwrap();
        assert_eq!(svc.rate, res.rate);
        assert_eq!(svc.latency, res.latency);
    }

    #[test]
    fn path_service_identical_nodes_compose_linearly() {
        let n = 4;
        let path = uniform_path(n, 200.0, 1.0, 2.0);
        let svc = path_service_curve(&path, "A2").unwrap();
        let res = residual_service(&path.nodes()[0], "A2", Convention::Paper).unwrap();
        assert_eq!(svc.rate, res.rate);
        let want = n as f64 * res.latency + (n - 1) as f64 * 2.0;
        assert!((svc.latency - want).abs() < 1e-9);
    }

    #[test]
    fn path_service_convolution_route_agrees() {
        for path in [case2_path(), uniform_path(3, 120.0, 0.7, 1.3)] {
            for flow in ["A1", "A2", "A3"] {
                let closed = path_service_curve(&path, flow).unwrap().to_curve();
                let convolved = path_service_curve_convolved(&path, flow).unwrap();
                assert!(
                    closed.approx_eq(&convolved, 1e-9),
                    "{flow}: {closed:?} vs {convolved:?}"
                );
            }
        }
    }

    #[test]
    fn path_delay_agrees_with_deviation_route() {
        // closed form vs the entry latency plus the horizontal deviation
        // against the convolved end-to-end service curve
        for path in [case2_path(), uniform_path(4, 150.0, 1.0, 2.0)] {
            for flow_id in ["A1", "A2", "A3"] {
                let closed = path_delay_bound(&path, flow_id).unwrap();
                let entry = &path.nodes()[0];
                let env = flow_envelope(entry.flow(flow_id).unwrap(), &entry.fractal).unwrap();
                let svc = path_service_curve_convolved(&path, flow_id).unwrap();
                let via_curve = entry.latency + env.h_dev(&svc).expect_finite("dd");
                assert!(
                    (closed - via_curve).abs() < 1e-6,
                    "{flow_id}: {closed} vs {via_curve}"
                );
            }
        }
    }

    #[test]
    fn path_delay_case2_matches_reference() {
        let path = case2_path();
        let want = [("A1", 58.8997), ("A2", 59.4264), ("A3", 58.2322)];
        for (f, w) in want {
            let dd = path_delay_bound(&path, f).unwrap();
            assert!((dd - w).abs() < 5e-4, "{f}: {dd} vs {w}");
        }
    }

    #[test]
    fn path_jitter_is_delay_minus_fixed_sum_exactly() {
        let path = case2_path();
        for f in ["A1", "A2", "A3"] {
            let dd = path_delay_bound(&path, f).unwrap();
            let jd = path_jitter_bound(&path, f).unwrap();
            assert_eq!(jd, dd - 11.6);
        }
        let no_delay = uniform_path(3, 100.0, 1.0, 0.0);
        for f in ["A1", "A2", "A3"] {
            assert_eq!(
                path_jitter_bound(&no_delay, f).unwrap(),
                path_delay_bound(&no_delay, f).unwrap()
            );
        }
    }

    #[test]
    fn path_effective_bandwidth_case2_aggregate() {
        let path = case2_path();
        let want = [("A1", 8.1495), ("A2", 11.7793), ("A3", 3.4345)];
        for (f, w) in want {
            let ee = path_effective_bandwidth_bound(&path, f, EeMode::Aggregate).unwrap();
            assert!((ee - w).abs() < 1e-3, "{f}: {ee} vs {w}");
        }
    }

    #[test]
    fn literal_mode_uses_worst_micro_flow() {
        let path = case2_path();
        let dd = path_delay_bound(&path, "A2").unwrap();
        let want = (0.6f64).max(200.0 / dd).max(0.24).max(500.0 / dd);
        let ee = path_effective_bandwidth_bound(&path, "A2", EeMode::Literal).unwrap();
        assert!((ee - want).abs() < 1e-12);
    }

    #[test]
    fn ee_of_burstless_flow_is_rate_term() {
        let flows = vec![FlowSpec {
            id: "F".into(),
            micro_flows: vec![
                crate::regulators::MicroFlowSpec {
                    id: "F.1".into(),
                    kind: crate::regulators::MicroFlowKind::TokenBucket { rate: 1.0, burst: 0.0 },
                },
                crate::regulators::MicroFlowSpec {
                    id: "F.2".into(),
                    kind: crate::regulators::MicroFlowKind::TokenBucket { rate: 0.4, burst: 0.0 },
                },
            ],
        }];
        let nodes = vec![NodeSpec {
            id: "n1".into(),
            service_rate: 10.0,
            latency: 1.0,
            flows,
            fractal: FractalConstants::default(),
        }];
        let path = PathScenario::new(nodes, vec![], Convention::Paper).unwrap();
        assert_eq!(
            path_effective_bandwidth_bound(&path, "F", EeMode::Aggregate).unwrap(),
            1.4
        );
        assert_eq!(
            path_effective_bandwidth_bound(&path, "F", EeMode::Literal).unwrap(),
            1.0
        );
    }

    #[test]
    fn unstable_hop_errors() {
        let mut nodes: Vec<NodeSpec> = (0..3)
            .map(|i| NodeSpec {
                id: format!("n{i}"),
                ..node(100.0, 1.0)
            })
            .collect();
        nodes[1].service_rate = 2.0;
        let path = PathScenario::new(nodes, vec![1.0, 1.0], Convention::Paper).unwrap();
        assert!(matches!(
            path_delay_bound(&path, "A1"),
            Err(QosError::Node(NodeError::Unstable { .. }))
        ));
    }

    #[test]
    fn mismatched_flow_sets_rejected() {
        let mut nodes = vec![node(100.0, 1.0), node(100.0, 1.0)];
        nodes[1].flows.pop();
        assert!(matches!(
            PathScenario::new(nodes, vec![1.0], Convention::Paper),
            Err(QosError::FlowSetMismatch { .. })
        ));
    }

    #[test]
    fn strict_convention_never_looser() {
        let mk = |conv| {
            let nodes = (0..3)
                .map(|i| NodeSpec {
                    id: format!("n{i}"),
                    ..node(150.0, 1.5)
                })
                .collect();
            PathScenario::new(nodes, vec![2.0, 2.0], conv).unwrap()
        };
        let strict = mk(Convention::Strict);
        let paper = mk(Convention::Paper);
        for f in ["A1", "A2", "A3"] {
            assert!(
                path_delay_bound(&strict, f).unwrap() <= path_delay_bound(&paper, f).unwrap()
            );
            let n = node(150.0, 1.5);
            let qs = node_backlog_bound(&n, f, Convention::Strict)
                .unwrap()
                .expect_finite("q");
            let qp = node_backlog_bound(&n, f, Convention::Paper)
                .unwrap()
                .expect_finite("q");
            assert!(qs <= qp);
        }
    }
}
