//! The two-layer node scheduling model: per-node flow aggregation,
//! stability checking, and the residual service curve each flow receives
//! from the shared scheduler.
//!
//! Two latency conventions are supported. The residual rate always
//! subtracts cross-traffic rates only; the residual latency adds a burst
//! term over the node rate that counts either cross-traffic bursts only
//! ([`Convention::Strict`], the tighter bound) or every burst at the node
//! ([`Convention::Paper`], which reproduces the bundled scenarios'
//! published reference values). `Paper >= Strict`, so both are safe.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::RateLatencyCurve;
use crate::regulators::{token_bucket_params, FlowSpec, FractalConstants, RegulatorError};
use crate::{Kb, Mbps, Ms};

#[derive(Debug, Error, PartialEq)]
pub enum NodeError {
    #[error("node '{node_id}' is unstable: total arrival rate {total_rate} Mbps >= service rate {service_rate} Mbps")]
    Unstable {
        node_id: String,
        total_rate: Mbps,
        service_rate: Mbps,
    },
    #[error("flow '{flow_id}' does not traverse node '{node_id}'")]
    UnknownFlow { node_id: String, flow_id: String },
    #[error("node '{node_id}' needs service rate > 0 and latency >= 0 (got R={rate}, T={latency})")]
    BadService { node_id: String, rate: f64, latency: f64 },
    #[error(transparent)]
    Regulator(#[from] RegulatorError),
}

/// Residual-latency convention, selectable per computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Latency burst term counts cross-traffic bursts only.
    Strict,
    /// Latency burst term counts all bursts at the node (replication
    /// default).
    #[default]
    Paper,
}

/// A sensor node: rate-latency service `(R, T)` shared by a set of flows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub service_rate: Mbps,
    pub latency: Ms,
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub fractal: FractalConstants,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<(), NodeError> {
        if !(self.service_rate > 0.0) || !(self.latency >= 0.0) {
            return Err(NodeError::BadService {
                node_id: self.id.clone(),
                rate: self.service_rate,
                latency: self.latency,
            });
        }
        for (i, f) in self.flows.iter().enumerate() {
            f.validate()?;
            if self.flows[..i].iter().any(|o| o.id == f.id) {
                return Err(NodeError::UnknownFlow {
                    node_id: self.id.clone(),
                    flow_id: format!("duplicate flow id '{}'", f.id),
                });
            }
        }
        Ok(())
    }

    pub fn flow(&self, flow_id: &str) -> Result<&FlowSpec, NodeError> {
        self.flows
            .iter()
            .find(|f| f.id == flow_id)
            .ok_or_else(|| NodeError::UnknownFlow {
                node_id: self.id.clone(),
                flow_id: flow_id.to_string(),
            })
    }
}

/// Outcome of the stability check: the total sustained arrival rate must
/// stay strictly below the service rate for bounds to be finite.
#[derive(Clone, Debug, PartialEq)]
pub enum Stability {
    Ok { total_rate: Mbps, service_rate: Mbps },
    Violation { total_rate: Mbps, service_rate: Mbps },
}

impl Stability {
    pub fn is_ok(&self) -> bool {
        matches!(self, Stability::Ok { .. })
    }
}

/// Sum of every micro-flow's sustained rate at the node, compared against
/// the service rate.
pub fn stability_check(node: &NodeSpec) -> Result<Stability, NodeError> {
    let totals = aggregate(node)?;
    let total_rate = totals.rate;
    let service_rate = node.service_rate;
    if total_rate < service_rate {
        Ok(Stability::Ok { total_rate, service_rate })
    } else {
        Ok(Stability::Violation { total_rate, service_rate })
    }
}

/// The rate-latency service left over for one flow after the scheduler
/// serves the others.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualService {
    pub flow_id: String,
    /// Residual rate: node rate minus cross-traffic rates.
    pub rate: Mbps,
    /// Residual latency: node latency plus the burst term per convention.
    pub latency: Ms,
    /// Scheduler offset: node latency plus cross-traffic bursts over the
    /// node rate.
    pub theta: Ms,
}

impl ResidualService {
    pub fn curve(&self) -> RateLatencyCurve {
        RateLatencyCurve::new(self.rate, self.latency)
            .expect("stable residual service has rate > 0")
    }
}

struct Totals {
    rate: Mbps,
    burst: Kb,
    per_flow: Vec<(Mbps, Kb)>,
}

/// Single pass over every micro-flow parameter: totals plus per-flow own
/// sums, so all n residual curves cost O(total micro-flows) visits.
fn aggregate(node: &NodeSpec) -> Result<Totals, NodeError> {
    let mut rate = 0.0;
    let mut burst = 0.0;
    let mut per_flow = Vec::with_capacity(node.flows.len());
    for flow in &node.flows {
        let mut fr = 0.0;
        let mut fb = 0.0;
        for mf in &flow.micro_flows {
            let (r, b) = token_bucket_params(mf, &node.fractal)?;
            fr += r;
            fb += b;
        }
        rate += fr;
        burst += fb;
        per_flow.push((fr, fb));
    }
    Ok(Totals { rate, burst, per_flow })
}

/// Residual service curves for every flow at the node, in flow order.
pub fn residual_services(
    node: &NodeSpec,
    conv: Convention,
) -> Result<Vec<ResidualService>, NodeError> {
    node.validate()?;
    let totals = aggregate(node)?;
    if totals.rate >= node.service_rate {
        return Err(NodeError::Unstable {
            node_id: node.id.clone(),
            total_rate: totals.rate,
            service_rate: node.service_rate,
        });
    }
    let out = node
        .flows
        .iter()
        .zip(&totals.per_flow)
        .map(|(flow, &(own_rate, own_burst))| {
            let cross_rate = totals.rate - own_rate;
            let cross_burst = totals.burst - own_burst;
            let latency_burst = match conv {
                Convention::Strict => cross_burst,
                Convention::Paper => totals.burst,
            };
            ResidualService {
                flow_id: flow.id.clone(),
                rate: node.service_rate - cross_rate,
                latency: node.latency + latency_burst / node.service_rate,
                theta: node.latency + cross_burst / node.service_rate,
            }
        })
        .collect();
    Ok(out)
}

/// Residual service curve of one flow at the node.
pub fn residual_service(
    node: &NodeSpec,
    flow_id: &str,
    conv: Convention,
) -> Result<ResidualService, NodeError> {
    node.flow(flow_id)?;
    let all = residual_services(node, conv)?;
    Ok(all
        .into_iter()
        .find(|r| r.flow_id == flow_id)
        .expect("flow presence checked above"))
}
