/*!
Worst-case QoS bounds for flows of leaky-bucket-regulated micro-flows
traversing rate-latency sensor nodes.

The crate is organised around an exact piecewise-affine curve algebra
([`curve`]), arrival-envelope construction including the fractal
(self-similar) bucket mapping ([`regulators`]), a two-layer node
scheduling model with residual service curves ([`node`]), closed-form
node and path bounds ([`qos`]), a grid-discretised oracle that validates
every closed form by brute force ([`oracle`]), and scenario ingestion,
reporting, sweeps and validation ([`scenario`], [`report`]).

Canonical units throughout: data in Kb, time in ms, rate in Mbps,
so that 1 Kb / 1 Mbps = 1 ms. Scenario files may declare Kbps/Mb/s
units; they are converted on ingestion.
*/

// negated float comparisons like `!(x > 0.0)` are deliberate: they reject
// NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curve;
pub mod node;
pub mod oracle;
pub mod qos;
pub mod regulators;
pub mod report;
pub mod scenario;

pub use curve::{Bound, BurstDelayCurve, Curve, RateLatencyCurve, TokenBucketEnvelope};
pub use node::{Convention, NodeSpec, ResidualService, Stability};
pub use qos::{EeMode, NodeBounds, PathBounds, PathScenario};
pub use regulators::{FlowSpec, FractalConstants, MicroFlowKind, MicroFlowSpec};
pub use scenario::ScenarioDocument;

/// Data amount in Kb.
pub type Kb = f64;
/// Time in milliseconds.
pub type Ms = f64;
/// Rate in Mbps (equivalently Kb per ms).
pub type Mbps = f64;
