//! Brute-force numerical validation of the closed forms: grid-discretised
//! min-plus operations, greedy-source arrival traces, and a worst-case
//! FIFO server simulation.
//!
//! Everything here deliberately avoids the exact curve algebra's machinery:
//! convolution is an exhaustive minimum over grid splits, deviations are
//! linear scans. Agreement between the two routes (within one grid cell)
//! is what the `validate` command and the acceptance suite check.

use thiserror::Error;

use crate::curve::{Bound, Curve};
use crate::{Kb, Ms};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("grid steps differ: {0} vs {1}")]
    StepMismatch(f64, f64),
    #[error("horizon too short: {detail} (try a horizon factor of at least {suggested_factor})")]
    HorizonTooShort { detail: String, suggested_factor: f64 },
    #[error("grid step must be positive (got {0})")]
    BadStep(f64),
}

/// A curve sampled at `t = 0, step, 2*step, ..`; samples may be `+inf`
/// past a burst-delay horizon.
#[derive(Clone, Debug)]
pub struct GridCurve {
    step: Ms,
    samples: Vec<Kb>,
}

impl GridCurve {
    /// Samples `curve` on `[0, horizon]`.
    pub fn discretize(curve: &Curve, step: Ms, horizon: Ms) -> Result<Self, OracleError> {
        if !(step > 0.0) {
            return Err(OracleError::BadStep(step));
        }
        let n = (horizon / step).ceil() as usize + 1;
        let samples = (0..n)
            .map(|k| match curve.eval(k as f64 * step) {
                Bound::Finite(v) => v,
                Bound::Infinite => f64::INFINITY,
            })
            .collect();
        Ok(GridCurve { step, samples })
    }

    pub fn from_samples(step: Ms, samples: Vec<Kb>) -> Result<Self, OracleError> {
        if !(step > 0.0) {
            return Err(OracleError::BadStep(step));
        }
        Ok(GridCurve { step, samples })
    }

    pub fn step(&self) -> Ms {
        self.step
    }

    pub fn samples(&self) -> &[Kb] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Cumulative arrivals `A(0, t)` of a source sampled on a grid.
/// `A(0, 0) = 0`; window counts `A(t1, t2) = A(0, t2) - A(0, t1)` are
/// additive by construction.
#[derive(Clone, Debug)]
pub struct ArrivalTrace {
    step: Ms,
    cumulative: Vec<Kb>,
}

impl ArrivalTrace {
    pub fn step(&self) -> Ms {
        self.step
    }

    pub fn cumulative(&self) -> &[Kb] {
        &self.cumulative
    }

    /// Traffic in the window `(t_i, t_j]`, by grid index.
    pub fn window(&self, i: usize, j: usize) -> Kb {
        self.cumulative[j] - self.cumulative[i]
    }

    fn as_grid(&self) -> GridCurve {
        GridCurve {
            step: self.step,
            samples: self.cumulative.clone(),
        }
    }
}

/// The greedy (worst-case conforming) source: emits exactly its envelope,
/// so `A(0, t) = envelope(t)` for `t > 0` and `A(0, 0) = 0`.
pub fn greedy_trace(envelope: &Curve, step: Ms, horizon: Ms) -> Result<ArrivalTrace, OracleError> {
    if !(step > 0.0) {
        return Err(OracleError::BadStep(step));
    }
    let n = (horizon / step).ceil() as usize + 1;
    let mut cumulative = Vec::with_capacity(n);
    cumulative.push(0.0);
    for k in 1..n {
        let v = envelope
            .eval(k as f64 * step)
            .expect_finite("arrival envelope");
        cumulative.push(v);
    }
    Ok(ArrivalTrace { step, cumulative })
}

/// Exhaustive discrete min-plus convolution:
/// `out[k] = min over j <= k of f[k - j] + g[j]`.
pub fn grid_convolve(f: &GridCurve, g: &GridCurve) -> Result<GridCurve, OracleError> {
    if f.step != g.step {
        return Err(OracleError::StepMismatch(f.step, g.step));
    }
    let n = f.samples.len().min(g.samples.len());
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..=k {
            let v = f.samples[k - j] + g.samples[j];
            if v < best {
                best = v;
            }
        }
        out.push(best);
    }
    Ok(GridCurve { step: f.step, samples: out })
}

/// Maximum vertical gap `max_k a[k] - b[k]` by linear scan.
/// Errors when the gap is still at its maximum at the end of the grid.
pub fn grid_vdev(a: &GridCurve, b: &GridCurve) -> Result<Kb, OracleError> {
    if a.step != b.step {
        return Err(OracleError::StepMismatch(a.step, b.step));
    }
    let n = a.samples.len().min(b.samples.len());
    let mut best = f64::NEG_INFINITY;
    let mut best_k = 0usize;
    for k in 0..n {
        let gap = a.samples[k] - b.samples[k];
        if gap.is_nan() {
            continue; // inf - inf past both horizons: no constraint
        }
        if gap > best {
            best = gap;
            best_k = k;
        }
    }
    if best_k + 1 == n {
        return Err(OracleError::HorizonTooShort {
            detail: format!("vertical gap still growing at t = {}", (n - 1) as f64 * a.step),
            suggested_factor: 8.0,
        });
    }
    Ok(best)
}

/// Maximum horizontal gap in ms: for each evaluation instant, the last
/// grid instant by which `b` has not yet reached `a`'s level (crossings
/// that land exactly on the grid are credited exactly). This never
/// overestimates the true gap, and is within one grid cell of it.
///
/// Levels are only evaluated over the first half of the grid so the
/// crossing scan has room; an unresolved crossing is a horizon error.
pub fn grid_hdev(a: &GridCurve, b: &GridCurve) -> Result<Ms, OracleError> {
    if a.step != b.step {
        return Err(OracleError::StepMismatch(a.step, b.step));
    }
    let n = a.samples.len().min(b.samples.len());
    let eval_n = (n / 2).max(1);
    let mut p = 0usize;
    let mut best = 0.0f64;
    let mut best_k = 0usize;
    for k in 0..eval_n {
        let target = a.samples[k];
        if !target.is_finite() {
            break; // past the arrival horizon: nothing left to serve
        }
        if p < k {
            p = k;
        }
        while p < n && b.samples[p] < target && !on_grid(b.samples[p], target) {
            p += 1;
        }
        if p == n {
            return Err(OracleError::HorizonTooShort {
                detail: format!(
                    "level {target} Kb reached at t = {} ms is never served within the grid",
                    k as f64 * a.step
                ),
                suggested_factor: 8.0,
            });
        }
        let crossing = if on_grid(b.samples[p], target) || p == k {
            p
        } else {
            p - 1
        };
        let d = (crossing.max(k) - k) as f64 * a.step;
        if d > best {
            best = d;
            best_k = k;
        }
    }
    if best_k + 1 == eval_n && eval_n > 1 {
        return Err(OracleError::HorizonTooShort {
            detail: format!(
                "horizontal gap still growing at t = {} ms",
                (eval_n - 1) as f64 * a.step
            ),
            suggested_factor: 8.0,
        });
    }
    Ok(best)
}

fn on_grid(have: f64, want: f64) -> bool {
    (have - want).abs() <= 1e-9 * 1.0f64.max(have.abs()).max(want.abs())
}

/// Outcome of a worst-case FIFO server run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationOutcome {
    pub max_backlog: Kb,
    pub max_delay: Ms,
}

/// Feeds a trace through a server that offers exactly `service`:
/// departures are the discrete min-plus convolution of arrivals with the
/// service curve (the minimal FIFO output), backlog is the largest
/// vertical gap and delay the largest horizontal gap between arrivals
/// and departures.
pub fn simulate_server(
    trace: &ArrivalTrace,
    service: &GridCurve,
) -> Result<SimulationOutcome, OracleError> {
    let arrivals = trace.as_grid();
    let departures = grid_convolve(&arrivals, service)?;
    let max_backlog = grid_vdev(&arrivals, &departures)?;
    let max_delay = grid_hdev(&arrivals, &departures)?;
    Ok(SimulationOutcome { max_backlog, max_delay })
}
