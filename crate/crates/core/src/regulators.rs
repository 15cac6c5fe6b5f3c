//! Arrival envelopes: leaky-bucket micro-flows, the fractal-bucket mapping
//! for self-similar traffic, and flow aggregation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{Curve, CurveError, TokenBucketEnvelope};
use crate::{Kb, Mbps};

#[derive(Debug, Error, PartialEq)]
pub enum RegulatorError {
    #[error("Hurst parameter must satisfy 0.5 < H < 1 (got {0})")]
    HurstOutOfRange(f64),
    #[error("fractal gamma must be positive (got {0})")]
    BadGamma(f64),
    #[error("negative micro-flow parameter in '{id}'")]
    NegativeParameter { id: String },
    #[error("flow '{id}' has no micro-flows")]
    EmptyFlow { id: String },
    #[error("duplicate micro-flow id '{micro}' in flow '{flow}'")]
    DuplicateMicroFlow { flow: String, micro: String },
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Constants of the fractal-bucket mapping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractalConstants {
    pub gamma: f64,
}

impl Default for FractalConstants {
    fn default() -> Self {
        FractalConstants { gamma: 6.0 }
    }
}

impl FractalConstants {
    pub fn new(gamma: f64) -> Result<Self, RegulatorError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(RegulatorError::BadGamma(gamma));
        }
        Ok(FractalConstants { gamma })
    }
}

/// One regulated micro-flow: either explicit token-bucket parameters or
/// self-similar traffic statistics to be mapped onto a bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MicroFlowKind {
    TokenBucket { rate: Mbps, burst: Kb },
    Fractal { mean: Mbps, std_dev: Kb, hurst: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroFlowSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: MicroFlowKind,
}

/// An aggregate flow: a non-empty ordered set of micro-flows sharing one
/// buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: String,
    pub micro_flows: Vec<MicroFlowSpec>,
}

impl FlowSpec {
    pub fn validate(&self) -> Result<(), RegulatorError> {
        if self.micro_flows.is_empty() {
            return Err(RegulatorError::EmptyFlow { id: self.id.clone() });
        }
        for (i, mf) in self.micro_flows.iter().enumerate() {
            if self.micro_flows[..i].iter().any(|o| o.id == mf.id) {
                return Err(RegulatorError::DuplicateMicroFlow {
                    flow: self.id.clone(),
                    micro: mf.id.clone(),
                });
            }
            match mf.kind {
                MicroFlowKind::TokenBucket { rate, burst } => {
                    if rate < 0.0 || burst < 0.0 {
                        return Err(RegulatorError::NegativeParameter { id: mf.id.clone() });
                    }
                }
                MicroFlowKind::Fractal { mean, std_dev, hurst } => {
                    if mean < 0.0 || std_dev < 0.0 {
                        return Err(RegulatorError::NegativeParameter { id: mf.id.clone() });
                    }
                    check_hurst(hurst)?;
                }
            }
        }
        Ok(())
    }
}

fn check_hurst(hurst: f64) -> Result<(), RegulatorError> {
    // strict boundaries: H -> 1 diverges, clamping would hide model errors
    if !(hurst > 0.5 && hurst < 1.0) {
        return Err(RegulatorError::HurstOutOfRange(hurst));
    }
    Ok(())
}

/// Dimensionless coefficients of the fractal mapping: the deviation term
/// contributes `std_dev * rate_coef` to the sustained rate (in Kbps per Kb
/// of deviation, i.e. the Kbps/Kb unit system the statistics are quoted
/// in) and `std_dev * burst_coef` to the burst (Kb per Kb).
///
/// With `x = H / (1 - H)`:
/// `rate_coef = (1 - H) * sqrt(2 * gamma * x^(H - 1))`,
/// `burst_coef = (1 - H) * sqrt(2 * gamma * x^H)`.
pub fn fractal_coefficients(
    hurst: f64,
    consts: &FractalConstants,
) -> Result<(f64, f64), RegulatorError> {
    check_hurst(hurst)?;
    if !(consts.gamma > 0.0) {
        return Err(RegulatorError::BadGamma(consts.gamma));
    }
    let x = hurst / (1.0 - hurst);
    let rate_coef = (1.0 - hurst) * (2.0 * consts.gamma * x.powf(hurst - 1.0)).sqrt();
    let burst_coef = (1.0 - hurst) * (2.0 * consts.gamma * x.powf(hurst)).sqrt();
    Ok((rate_coef, burst_coef))
}

/// Maps self-similar traffic statistics (mean rate in Mbps, standard
/// deviation in Kb, Hurst parameter) onto equivalent token-bucket
/// parameters in canonical units. The rate coefficient acts in Kbps, so
/// its contribution is scaled by 1/1000 into Mbps.
pub fn fractal_to_token_bucket(
    mean: Mbps,
    std_dev: Kb,
    hurst: f64,
    consts: &FractalConstants,
) -> Result<(Mbps, Kb), RegulatorError> {
    let (rate_coef, burst_coef) = fractal_coefficients(hurst, consts)?;
    let rate = mean + std_dev * rate_coef / 1000.0;
    let burst = std_dev * burst_coef;
    Ok((rate, burst))
}

/// The single `(rate, burst)` characterisation of a micro-flow:
/// token buckets pass through unchanged, fractal micro-flows are mapped.
pub fn token_bucket_params(
    mf: &MicroFlowSpec,
    consts: &FractalConstants,
) -> Result<(Mbps, Kb), RegulatorError> {
    match mf.kind {
        MicroFlowKind::TokenBucket { rate, burst } => Ok((rate, burst)),
        MicroFlowKind::Fractal { mean, std_dev, hurst } => {
            fractal_to_token_bucket(mean, std_dev, hurst, consts)
        }
    }
}

/// Envelope of one micro-flow as a (single-piece) token-bucket envelope.
pub fn micro_flow_envelope(
    mf: &MicroFlowSpec,
    consts: &FractalConstants,
) -> Result<TokenBucketEnvelope, RegulatorError> {
    let (rate, burst) = token_bucket_params(mf, consts)?;
    Ok(TokenBucketEnvelope::single(rate, burst)?)
}

/// Equivalent envelope of an aggregate flow: the sum of its micro-flow
/// envelopes.
pub fn flow_envelope(flow: &FlowSpec, consts: &FractalConstants) -> Result<Curve, RegulatorError> {
    flow.validate()?;
    let mut acc = Curve::zero();
    for mf in &flow.micro_flows {
        acc = acc.sum_of(&micro_flow_envelope(mf, consts)?.to_curve());
    }
    Ok(acc)
}

/// Summed `(rate, burst)` of a flow's micro-flows in canonical units.
pub fn flow_totals(
    flow: &FlowSpec,
    consts: &FractalConstants,
) -> Result<(Mbps, Kb), RegulatorError> {
    let mut rate = 0.0;
    let mut burst = 0.0;
    for mf in &flow.micro_flows {
        let (r, b) = token_bucket_params(mf, consts)?;
        rate += r;
        burst += b;
    }
    Ok((rate, burst))
}
