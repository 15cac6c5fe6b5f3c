//! Exact piecewise-affine curve algebra: min-plus convolution, pointwise
//! min/sum, and vertical/horizontal deviations.
//!
//! A [`Curve`] is a wide-sense-increasing, non-negative, piecewise-affine
//! function of time on `[0, inf)`. The last segment extends to infinity
//! unless the curve carries an `infinite_after` marker, in which case the
//! value is `+inf` strictly after the marker (the burst-delay shape).
//! Upward jumps at breakpoints are allowed (a token bucket jumps to its
//! burst at 0); downward jumps are not.
//!
//! All operations are exact on this family: convolution is computed by
//! decomposing both curves into elementary affine pieces, convolving each
//! pair (the flatter slope runs first), and assembling the lower envelope
//! of the partial results on the breakpoint/intersection grid.

use std::fmt;

use thiserror::Error;

use crate::{Kb, Mbps, Ms};

/// Tolerance for merging collinear segments and snapping near-continuous
/// junctions during canonicalization.
pub const CANON_TOL: f64 = 1e-9;

/// Tolerance for deduplicating breakpoints produced by exact arithmetic.
const GRID_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("curve must have at least one segment")]
    Empty,
    #[error("first segment must start at t = 0 (got {0})")]
    FirstStart(f64),
    #[error("segment start times must be strictly increasing at index {0}")]
    StartOrder(usize),
    #[error("negative slope {slope} at segment {index}")]
    NegativeSlope { index: usize, slope: f64 },
    #[error("negative value {value} at segment {index}")]
    NegativeValue { index: usize, value: f64 },
    #[error("downward jump at t = {at}: {from} -> {to}")]
    DownwardJump { at: f64, from: f64, to: f64 },
    #[error("infinite-after marker {marker} precedes last segment start {last_start}")]
    MarkerBeforeSegments { marker: f64, last_start: f64 },
    #[error("token-bucket envelope needs at least one piece")]
    EmptyEnvelope,
    #[error("negative token-bucket piece (rate {rate}, burst {burst})")]
    NegativePiece { rate: f64, burst: f64 },
    #[error("rate-latency curve needs rate > 0 and latency >= 0 (got R={rate}, T={latency})")]
    BadRateLatency { rate: f64, latency: f64 },
    #[error("burst-delay curve needs delay >= 0 (got {0})")]
    BadBurstDelay(f64),
}

/// A value that is either finite or the explicit infinite marker.
///
/// Deviations of unstable pairs and evaluations past a burst-delay horizon
/// are infinite; representing that explicitly keeps stability violations
/// distinguishable from merely large bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    Finite(f64),
    Infinite,
}

impl Bound {
    pub fn is_finite(&self) -> bool {
        matches!(self, Bound::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Bound::Finite(v) => Some(*v),
            Bound::Infinite => None,
        }
    }

    /// Unwraps the finite value, panicking with `what` otherwise.
    pub fn expect_finite(&self, what: &str) -> f64 {
        match self {
            Bound::Finite(v) => *v,
            Bound::Infinite => panic!("expected finite {what}, got infinite"),
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Finite(v) => write!(f, "{v}"),
            Bound::Infinite => write!(f, "inf"),
        }
    }
}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use Bound::*;
        match (self, other) {
            (Infinite, Infinite) => Some(std::cmp::Ordering::Equal),
            (Infinite, Finite(_)) => Some(std::cmp::Ordering::Greater),
            (Finite(_), Infinite) => Some(std::cmp::Ordering::Less),
            (Finite(a), Finite(b)) => a.partial_cmp(b),
        }
    }
}

/// One affine segment: value `value + slope * (t - start)` from `start`
/// until the next segment begins (or forever for the last segment).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: Ms,
    pub value: Kb,
    pub slope: Mbps,
}

impl Segment {
    pub fn new(start: Ms, value: Kb, slope: Mbps) -> Self {
        Segment { start, value, slope }
    }

    fn value_at(&self, t: Ms) -> Kb {
        self.value + self.slope * (t - self.start)
    }
}

/// Wide-sense-increasing piecewise-affine curve on `[0, inf)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    segments: Vec<Segment>,
    infinite_after: Option<Ms>,
}

/// Arrival envelope: minimum over `(rate, burst)` pieces of `burst + rate*t`.
/// A single piece is the simple leaky bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBucketEnvelope {
    pieces: Vec<(Mbps, Kb)>,
}

impl TokenBucketEnvelope {
    pub fn new(pieces: Vec<(Mbps, Kb)>) -> Result<Self, CurveError> {
        if pieces.is_empty() {
            return Err(CurveError::EmptyEnvelope);
        }
        for &(rate, burst) in &pieces {
            if rate < 0.0 || burst < 0.0 || !rate.is_finite() || !burst.is_finite() {
                return Err(CurveError::NegativePiece { rate, burst });
            }
        }
        Ok(TokenBucketEnvelope { pieces })
    }

    pub fn single(rate: Mbps, burst: Kb) -> Result<Self, CurveError> {
        Self::new(vec![(rate, burst)])
    }

    pub fn pieces(&self) -> &[(Mbps, Kb)] {
        &self.pieces
    }

    pub fn to_curve(&self) -> Curve {
        let mut it = self.pieces.iter();
        let &(r, b) = it.next().expect("non-empty by construction");
        let mut acc = Curve::affine(b, r);
        for &(r, b) in it {
            acc = acc.min_of(&Curve::affine(b, r));
        }
        acc
    }
}

/// Service curve `R * (t - T)` after latency `T`, zero before.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateLatencyCurve {
    pub rate: Mbps,
    pub latency: Ms,
}

impl RateLatencyCurve {
    pub fn new(rate: Mbps, latency: Ms) -> Result<Self, CurveError> {
        if !(rate > 0.0) || !(latency >= 0.0) || !rate.is_finite() || !latency.is_finite() {
            return Err(CurveError::BadRateLatency { rate, latency });
        }
        Ok(RateLatencyCurve { rate, latency })
    }

    pub fn to_curve(&self) -> Curve {
        if self.latency == 0.0 {
            return Curve::affine(0.0, self.rate);
        }
        Curve::new(
            vec![
                Segment::new(0.0, 0.0, 0.0),
                Segment::new(self.latency, 0.0, self.rate),
            ],
            None,
        )
        .expect("rate-latency segments are valid")
    }
}

/// Fixed-delay element: zero on `[0, d]`, infinite after.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurstDelayCurve {
    pub delay: Ms,
}

impl BurstDelayCurve {
    pub fn new(delay: Ms) -> Result<Self, CurveError> {
        if !(delay >= 0.0) || !delay.is_finite() {
            return Err(CurveError::BadBurstDelay(delay));
        }
        Ok(BurstDelayCurve { delay })
    }

    pub fn to_curve(&self) -> Curve {
        Curve::new(vec![Segment::new(0.0, 0.0, 0.0)], Some(self.delay))
            .expect("burst-delay segments are valid")
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1.0f64.max(a.abs()).max(b.abs())
}

impl Curve {
    /// Builds a curve from raw segments, validating every invariant and
    /// canonicalizing (collinear continuous neighbours are merged).
    pub fn new(segments: Vec<Segment>, infinite_after: Option<Ms>) -> Result<Self, CurveError> {
        if segments.is_empty() {
            return Err(CurveError::Empty);
        }
        if segments[0].start != 0.0 {
            return Err(CurveError::FirstStart(segments[0].start));
        }
        let mut segs = segments;
        for (i, s) in segs.iter_mut().enumerate() {
            if s.slope < 0.0 {
                if s.slope >= -CANON_TOL {
                    s.slope = 0.0;
                } else {
                    return Err(CurveError::NegativeSlope { index: i, slope: s.slope });
                }
            }
            if s.value < 0.0 {
                if s.value >= -CANON_TOL {
                    s.value = 0.0;
                } else {
                    return Err(CurveError::NegativeValue { index: i, value: s.value });
                }
            }
        }
        for i in 1..segs.len() {
            if segs[i].start <= segs[i - 1].start {
                return Err(CurveError::StartOrder(i));
            }
            let end = segs[i - 1].value_at(segs[i].start);
            if segs[i].value < end {
                if close(segs[i].value, end, CANON_TOL) {
                    segs[i].value = end; // snap near-continuous junction
                } else {
                    return Err(CurveError::DownwardJump {
                        at: segs[i].start,
                        from: end,
                        to: segs[i].value,
                    });
                }
            }
        }
        if let Some(d) = infinite_after {
            let last = segs.last().expect("non-empty").start;
            if d < last {
                if close(d, last, CANON_TOL) {
                    // fall through with the marker snapped onto the start
                    return Self::canonical(segs, Some(last));
                }
                return Err(CurveError::MarkerBeforeSegments { marker: d, last_start: last });
            }
        }
        Self::canonical(segs, infinite_after)
    }

    fn canonical(segs: Vec<Segment>, infinite_after: Option<Ms>) -> Result<Self, CurveError> {
        let mut out: Vec<Segment> = Vec::with_capacity(segs.len());
        for s in segs {
            if let Some(prev) = out.last() {
                let cont = close(prev.value_at(s.start), s.value, CANON_TOL);
                if cont && close(prev.slope, s.slope, CANON_TOL) {
                    continue; // collinear continuation of the previous segment
                }
            }
            out.push(s);
        }
        Ok(Curve { segments: out, infinite_after })
    }

    /// The identically-zero curve.
    pub fn zero() -> Self {
        Curve {
            segments: vec![Segment::new(0.0, 0.0, 0.0)],
            infinite_after: None,
        }
    }

    /// Affine curve `burst + rate * t` (the single-piece token bucket shape).
    pub fn affine(burst: Kb, rate: Mbps) -> Self {
        Curve {
            segments: vec![Segment::new(0.0, burst.max(0.0), rate.max(0.0))],
            infinite_after: None,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn infinite_after(&self) -> Option<Ms> {
        self.infinite_after
    }

    pub fn last_slope(&self) -> Mbps {
        self.segments.last().expect("non-empty").slope
    }

    fn segment_at(&self, t: Ms) -> &Segment {
        let idx = self.segments.partition_point(|s| s.start <= t);
        &self.segments[idx.saturating_sub(1).min(self.segments.len() - 1)]
    }

    /// Value of the piecewise-affine part at `t`, ignoring the infinite tail.
    fn pwa_value(&self, t: Ms) -> Kb {
        self.segment_at(t).value_at(t)
    }

    /// Left limit at `t` (differs from the value only at upward jumps).
    fn left_value(&self, t: Ms) -> Kb {
        let idx = self.segments.partition_point(|s| s.start < t);
        let seg = &self.segments[idx.saturating_sub(1).min(self.segments.len() - 1)];
        seg.value_at(t)
    }

    /// Exact value at `t >= 0`; infinite past a burst-delay horizon.
    pub fn eval(&self, t: Ms) -> Bound {
        assert!(t >= 0.0, "curves are defined on [0, inf), got t = {t}");
        if let Some(d) = self.infinite_after {
            if t > d {
                return Bound::Infinite;
            }
        }
        Bound::Finite(self.pwa_value(t))
    }

    /// Approximate structural equality of canonical forms.
    pub fn approx_eq(&self, other: &Curve, tol: f64) -> bool {
        if self.segments.len() != other.segments.len() {
            return false;
        }
        let markers = match (self.infinite_after, other.infinite_after) {
            (None, None) => true,
            (Some(a), Some(b)) => close(a, b, tol),
            _ => false,
        };
        markers
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| {
                    close(a.start, b.start, tol)
                        && close(a.value, b.value, tol)
                        && close(a.slope, b.slope, tol)
                })
    }

    fn pieces(&self) -> Vec<Piece> {
        let n = self.segments.len();
        let mut out = Vec::with_capacity(n);
        for (k, s) in self.segments.iter().enumerate() {
            let (end, closed) = if k + 1 < n {
                (self.segments[k + 1].start, false)
            } else {
                match self.infinite_after {
                    Some(d) => (d, true),
                    None => (f64::INFINITY, false),
                }
            };
            out.push(Piece {
                start: s.start,
                end,
                closed,
                value: s.value,
                slope: s.slope,
            });
        }
        out
    }

    /// Min-plus convolution `(f (*) g)(t) = inf over s in [0, t] of
    /// f(t - s) + g(s)`, exact on the piecewise-affine family.
    pub fn convolve(&self, other: &Curve) -> Curve {
        let mut chunks = Vec::new();
        for p in self.pieces() {
            for q in other.pieces() {
                pair_convolve(&p, &q, &mut chunks);
            }
        }
        let marker = match (self.infinite_after, other.infinite_after) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        lower_envelope(chunks, marker)
    }

    /// Pointwise minimum.
    pub fn min_of(&self, other: &Curve) -> Curve {
        let mut chunks = self.pieces();
        chunks.extend(other.pieces());
        let marker = match (self.infinite_after, other.infinite_after) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        lower_envelope(chunks, marker)
    }

    /// Pointwise sum.
    pub fn sum_of(&self, other: &Curve) -> Curve {
        let marker = match (self.infinite_after, other.infinite_after) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        };
        let mut starts: Vec<f64> = self
            .segments
            .iter()
            .chain(&other.segments)
            .map(|s| s.start)
            .collect();
        starts.sort_by(|a, b| a.partial_cmp(b).expect("finite starts"));
        starts.dedup_by(|a, b| close(*a, *b, GRID_TOL));
        if let Some(d) = marker {
            starts.retain(|t| *t <= d);
        }
        let segs = starts
            .into_iter()
            .map(|t| {
                Segment::new(
                    t,
                    self.pwa_value(t) + other.pwa_value(t),
                    self.segment_at(t).slope + other.segment_at(t).slope,
                )
            })
            .collect();
        Curve::new(segs, marker).expect("sum of valid curves is valid")
    }

    /// Vertical deviation `sup over t >= 0 of alpha(t) - beta(t)`:
    /// the backlog bound. Infinite when alpha outgrows beta.
    pub fn v_dev(&self, beta: &Curve) -> Bound {
        let alpha = self;
        match (alpha.infinite_after, beta.infinite_after) {
            (Some(_), None) => return Bound::Infinite,
            (Some(da), Some(db)) if da < db && !close(da, db, GRID_TOL) => {
                return Bound::Infinite
            }
            _ => {}
        }
        let cap = beta.infinite_after;
        if cap.is_none() && slope_exceeds(alpha.last_slope(), beta.last_slope()) {
            return Bound::Infinite;
        }
        let mut cands: Vec<f64> = vec![0.0];
        cands.extend(alpha.segments.iter().map(|s| s.start));
        cands.extend(beta.segments.iter().map(|s| s.start));
        if let Some(d) = cap {
            cands.push(d);
            cands.retain(|t| *t <= d);
        }
        let mut best = f64::NEG_INFINITY;
        for &t in &cands {
            best = best.max(alpha.pwa_value(t) - beta.pwa_value(t));
            best = best.max(alpha.left_value(t) - beta.left_value(t));
        }
        Bound::Finite(best)
    }

    /// Horizontal deviation `sup over t of inf { d >= 0 : alpha(t) <=
    /// beta(t + d) }`: the delay bound. Infinite when alpha outgrows beta.
    pub fn h_dev(&self, beta: &Curve) -> Bound {
        let alpha = self;
        let mut extra = f64::NEG_INFINITY;
        if let Some(da) = alpha.infinite_after {
            match beta.infinite_after {
                None => return Bound::Infinite,
                Some(db) => extra = db - da,
            }
        }
        if beta.infinite_after.is_none() && slope_exceeds(alpha.last_slope(), beta.last_slope())
        {
            return Bound::Infinite;
        }
        let mut cands: Vec<f64> = vec![0.0];
        cands.extend(alpha.segments.iter().map(|s| s.start));
        // kinks where alpha crosses beta's breakpoint values
        for seg in &beta.segments {
            for target in [beta.pwa_value(seg.start), beta.left_value(seg.start)] {
                if let Some(t) = alpha.first_reach(target) {
                    cands.push(t);
                }
            }
        }
        let t_big = cands
            .iter()
            .fold(0.0f64, |m, &t| m.max(t))
            + 1.0;
        cands.push(t_big); // covers constant tails (equal long-run slopes)
        if let Some(da) = alpha.infinite_after {
            cands.retain(|t| *t <= da);
            cands.push(da);
        }
        let mut best = extra.max(0.0);
        for &t in &cands {
            let y = alpha.pwa_value(t);
            match beta.first_reach_or_horizon(y) {
                Some(u) => best = best.max((u - t).max(0.0)),
                None => return Bound::Infinite,
            }
            // where alpha keeps rising, the gap may only be approached
            // from the right of t (beta plateaus at exactly alpha(t))
            if alpha.segment_at(t).slope > 0.0 {
                match beta.first_exceed_or_horizon(y) {
                    Some(u) => best = best.max((u - t).max(0.0)),
                    None => return Bound::Infinite,
                }
            }
        }
        Bound::Finite(best)
    }

    /// Smallest `t` with `value(t) >= y`, if ever reached (finite part only).
    fn first_reach(&self, y: Kb) -> Option<Ms> {
        let n = self.segments.len();
        for (k, s) in self.segments.iter().enumerate() {
            if s.value >= y {
                return Some(s.start);
            }
            let end_val = if k + 1 < n {
                s.value_at(self.segments[k + 1].start)
            } else {
                f64::INFINITY
            };
            if s.slope > 0.0 && end_val >= y {
                return Some(s.start + (y - s.value) / s.slope);
            }
        }
        None
    }

    /// Like [`first_reach`], but a burst-delay horizon counts as reaching
    /// every level (the curve is infinite just past it). `None` means the
    /// level is never reached.
    fn first_reach_or_horizon(&self, y: Kb) -> Option<Ms> {
        if let Some(t) = self.first_reach(y) {
            if let Some(d) = self.infinite_after {
                return Some(t.min(d));
            }
            return Some(t);
        }
        self.infinite_after
    }

    /// `inf { t : value(t) > y }` (finite part only): differs from
    /// [`first_reach`] exactly where the curve plateaus at level `y`.
    fn first_exceed(&self, y: Kb) -> Option<Ms> {
        let n = self.segments.len();
        for (k, s) in self.segments.iter().enumerate() {
            if s.value > y {
                return Some(s.start);
            }
            if s.slope > 0.0 {
                let end_val = if k + 1 < n {
                    s.value_at(self.segments[k + 1].start)
                } else {
                    f64::INFINITY
                };
                if end_val > y {
                    return Some(s.start + ((y - s.value) / s.slope).max(0.0));
                }
            }
        }
        None
    }

    fn first_exceed_or_horizon(&self, y: Kb) -> Option<Ms> {
        if let Some(t) = self.first_exceed(y) {
            if let Some(d) = self.infinite_after {
                return Some(t.min(d));
            }
            return Some(t);
        }
        self.infinite_after
    }
}

impl From<&TokenBucketEnvelope> for Curve {
    fn from(e: &TokenBucketEnvelope) -> Curve {
        e.to_curve()
    }
}

impl From<&RateLatencyCurve> for Curve {
    fn from(c: &RateLatencyCurve) -> Curve {
        c.to_curve()
    }
}

impl From<&BurstDelayCurve> for Curve {
    fn from(c: &BurstDelayCurve) -> Curve {
        c.to_curve()
    }
}

/// Long-run growth comparison with a relative guard so that slopes that
/// differ only by accumulated rounding are treated as equal.
fn slope_exceeds(a: f64, b: f64) -> bool {
    a > b + 1e-12 * 1.0f64.max(a.abs()).max(b.abs())
}

/// Elementary affine piece on `[start, end)` (or `[start, end]` when
/// `closed`; `end` may be infinite).
#[derive(Clone, Copy, Debug)]
struct Piece {
    start: f64,
    end: f64,
    closed: bool,
    value: f64,
    slope: f64,
}

impl Piece {
    fn len(&self) -> f64 {
        self.end - self.start
    }

    fn value_at(&self, t: f64) -> f64 {
        self.value + self.slope * (t - self.start)
    }

    fn contains_open(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }

    fn contains_point(&self, t: f64) -> bool {
        if t < self.start {
            return false;
        }
        if self.closed {
            t <= self.end
        } else {
            t < self.end || (self.len() == 0.0 && t == self.start)
        }
    }
}

/// Convolution of two elementary pieces: starts at the sum of starts with
/// the summed values, then the flatter slope runs for its piece's length,
/// then the steeper one.
fn pair_convolve(p: &Piece, q: &Piece, out: &mut Vec<Piece>) {
    let start = p.start + q.start;
    let v0 = p.value + q.value;
    let (a, b) = if p.slope <= q.slope { (p, q) } else { (q, p) };
    let la = a.len();
    let lb = b.len();
    let closed_end = p.closed && q.closed;
    if la == 0.0 && lb == 0.0 {
        out.push(Piece {
            start,
            end: start,
            closed: true,
            value: v0,
            slope: 0.0,
        });
        return;
    }
    if la.is_infinite() {
        out.push(Piece {
            start,
            end: f64::INFINITY,
            closed: false,
            value: v0,
            slope: a.slope,
        });
        return;
    }
    if la > 0.0 {
        out.push(Piece {
            start,
            end: start + la,
            closed: lb == 0.0 && closed_end,
            value: v0,
            slope: a.slope,
        });
    }
    if lb > 0.0 {
        let s1 = start + la;
        let end = if lb.is_infinite() { f64::INFINITY } else { s1 + lb };
        out.push(Piece {
            start: s1,
            end,
            closed: end.is_finite() && closed_end,
            value: v0 + a.slope * la,
            slope: b.slope,
        });
    }
}

/// Lower envelope of affine pieces over `[0, marker]` (or `[0, inf)`),
/// assembled on the grid of piece endpoints and pairwise intersections.
fn lower_envelope(chunks: Vec<Piece>, marker: Option<f64>) -> Curve {
    let mut cands: Vec<f64> = vec![0.0];
    for c in &chunks {
        cands.push(c.start);
        if c.end.is_finite() {
            cands.push(c.end);
        }
    }
    for i in 0..chunks.len() {
        for j in (i + 1)..chunks.len() {
            let (a, b) = (&chunks[i], &chunks[j]);
            let ds = a.slope - b.slope;
            if ds.abs() <= GRID_TOL {
                continue;
            }
            // intercepts: value_x(t) = (value_x - slope_x * start_x) + slope_x * t
            let t = ((b.value - b.slope * b.start) - (a.value - a.slope * a.start)) / ds;
            if t.is_finite() && t > a.start && t < a.end && t > b.start && t < b.end {
                cands.push(t);
            }
        }
    }
    if let Some(d) = marker {
        cands.push(d);
        cands.retain(|t| *t <= d + GRID_TOL);
    }
    cands.retain(|t| t.is_finite() && *t >= 0.0);
    cands.sort_by(|a, b| a.partial_cmp(b).expect("finite candidates"));
    cands.dedup_by(|a, b| close(*a, *b, GRID_TOL));

    let mut segs: Vec<Segment> = Vec::new();
    let last_idx = cands.len() - 1;
    for (w, &t0) in cands.iter().enumerate() {
        let next = cands.get(w + 1).copied();
        let probe = match next {
            Some(t1) => 0.5 * (t0 + t1),
            None => {
                if marker.is_some() {
                    // final point of a bounded domain: attach the attained
                    // value if it jumps above the previous segment's reach
                    let point = chunks
                        .iter()
                        .filter(|c| c.contains_point(t0))
                        .map(|c| c.value_at(t0))
                        .fold(f64::INFINITY, f64::min);
                    if let Some(prev) = segs.last() {
                        if point > prev.value_at(t0) + CANON_TOL && w == last_idx {
                            segs.push(Segment::new(t0, point, 0.0));
                        }
                    } else {
                        segs.push(Segment::new(t0, point, 0.0));
                    }
                    break;
                }
                t0 + 1.0
            }
        };
        let winner = chunks
            .iter()
            .filter(|c| c.contains_open(probe))
            .min_by(|x, y| {
                x.value_at(probe)
                    .partial_cmp(&y.value_at(probe))
                    .expect("finite piece values")
            });
        let Some(winner) = winner else {
            debug_assert!(false, "envelope gap at t = {probe}");
            continue;
        };
        segs.push(Segment::new(t0, winner.value_at(t0), winner.slope));
    }
    if segs.is_empty() {
        segs.push(Segment::new(0.0, 0.0, 0.0));
    }
    if segs[0].start != 0.0 {
        // numerically the first candidate is always 0.0, but keep the
        // invariant airtight
        segs[0].start = 0.0;
    }
    Curve::new(segs, marker).expect("envelope of valid pieces is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tb(rate: f64, burst: f64) -> Curve {
        Curve::affine(burst, rate)
    }

    fn rl(rate: f64, latency: f64) -> Curve {
        RateLatencyCurve::new(rate, latency).unwrap().to_curve()
    }

    fn bd(delay: f64) -> Curve {
        BurstDelayCurve::new(delay).unwrap().to_curve()
    }

    #[test]
    fn eval_rate_latency() {
        let c = rl(100.0, 1.0);
        assert_eq!(c.eval(1.0), Bound::Finite(0.0));
        assert_eq!(c.eval(3.0), Bound::Finite(200.0));
        assert_eq!(c.eval(0.0), Bound::Finite(0.0));
    }

    #[test]
    fn eval_token_bucket() {
        // micro-flow A1,1: 30 Kb burst, 0.5 Mbps
        let c = TokenBucketEnvelope::single(0.5, 30.0).unwrap().to_curve();
        assert_eq!(c.eval(10.0), Bound::Finite(35.0));
    }

    #[test]
    fn eval_past_burst_delay_horizon_is_infinite() {
        let c = bd(2.0);
        assert_eq!(c.eval(2.0), Bound::Finite(0.0));
        assert_eq!(c.eval(2.0000001), Bound::Infinite);
    }

    #[test]
    fn convolve_identity() {
        let f = rl(198.86, 7.9);
        let got = bd(0.0).convolve(&f);
        assert!(got.approx_eq(&f, 1e-9), "{got:?}");
        let tbc = tb(1.22, 480.0);
        // delta_0 has a marker, the token bucket does not: marker vanishes
        let got = tbc.convolve(&bd(0.0));
        assert!(got.approx_eq(&tbc, 1e-9), "{got:?}");
    }

    #[test]
    fn convolve_rate_latency_pair_is_min_rate_summed_latency() {
        let got = rl(540.0, 5.8).convolve(&rl(510.0, 7.8));
        let want = rl(510.0, 13.6);
        assert!(got.approx_eq(&want, 1e-9), "{got:?}");
    }

    #[test]
    fn convolve_with_burst_delay_shifts_right() {
        let f = rl(100.0, 1.0);
        let got = f.convolve(&bd(2.0));
        let want = rl(100.0, 3.0);
        assert!(got.approx_eq(&want, 1e-9), "{got:?}");
        // a token bucket keeps its burst and plateaus over the shift
        let got = tb(0.5, 30.0).convolve(&bd(2.0));
        assert_eq!(got.eval(0.0), Bound::Finite(30.0));
        assert_eq!(got.eval(2.0), Bound::Finite(30.0));
        assert_eq!(got.eval(12.0), Bound::Finite(35.0));
        assert!(got.infinite_after().is_none());
    }

    #[test]
    fn convolve_burst_delays_adds_markers() {
        let got = bd(1.5).convolve(&bd(2.5));
        assert!(got.approx_eq(&bd(4.0), 1e-9), "{got:?}");
    }

    #[test]
    fn v_dev_affine_vs_rate_latency() {
        // flow A1 aggregate against its residual service at R=200, T=1
        let alpha = tb(1.22, 480.0);
        let beta = rl(198.86, 7.9);
        let q = alpha.v_dev(&beta).expect_finite("backlog");
        assert!((q - 489.638).abs() < 1e-9, "{q}");
    }

    #[test]
    fn v_dev_identical_curves_is_zero() {
        let beta = rl(198.86, 7.9);
        assert_eq!(beta.v_dev(&beta), Bound::Finite(0.0));
    }

    #[test]
    fn v_dev_unstable_is_infinite() {
        let alpha = tb(2.36, 100.0);
        let beta = rl(1.0, 0.0);
        assert_eq!(alpha.v_dev(&beta), Bound::Infinite);
    }

    #[test]
    fn h_dev_affine_vs_rate_latency() {
        let alpha = tb(1.22, 480.0);
        let beta = rl(198.86, 7.9);
        let d = alpha.h_dev(&beta).expect_finite("delay");
        assert!((d - (7.9 + 480.0 / 198.86)).abs() < 1e-9, "{d}");
    }

    #[test]
    fn h_dev_identical_rate_latency_is_zero() {
        let beta = rl(100.0, 4.0);
        assert_eq!(beta.h_dev(&beta), Bound::Finite(0.0));
    }

    #[test]
    fn h_dev_unstable_is_infinite() {
        let alpha = tb(2.0, 10.0);
        let beta = rl(1.0, 0.0);
        assert_eq!(alpha.h_dev(&beta), Bound::Infinite);
    }

    #[test]
    fn h_dev_against_burst_delay_horizon() {
        // beta jumps to infinity after 5 ms: every backlog drains by then
        let alpha = tb(1.0, 100.0);
        let beta = bd(5.0);
        assert_eq!(alpha.h_dev(&beta), Bound::Finite(5.0));
    }

    #[test]
    fn sum_of_flow_a1_micro_flows() {
        let s = tb(0.5, 30.0).sum_of(&tb(0.3, 300.0)).sum_of(&tb(0.42, 150.0));
        assert!(s.approx_eq(&tb(1.22, 480.0), 1e-9), "{s:?}");
    }

    #[test]
    fn sum_of_zero_is_identity() {
        let f = rl(100.0, 2.0);
        assert!(f.sum_of(&Curve::zero()).approx_eq(&f, 1e-9));
    }

    #[test]
    fn min_of_idempotent() {
        let f = tb(0.5, 30.0).min_of(&rl(100.0, 2.0));
        assert!(f.min_of(&f).approx_eq(&f, 1e-9));
    }

    #[test]
    fn min_of_two_buckets_is_two_piece_envelope() {
        let e = TokenBucketEnvelope::new(vec![(2.0, 10.0), (0.5, 40.0)])
            .unwrap()
            .to_curve();
        // crossing at t = 20: 10 + 2t vs 40 + 0.5t
        assert_eq!(e.eval(0.0), Bound::Finite(10.0));
        assert_eq!(e.eval(20.0), Bound::Finite(50.0));
        assert_eq!(e.eval(40.0), Bound::Finite(60.0));
        assert_eq!(e.segments().len(), 2);
    }

    #[test]
    fn canonical_merges_collinear_segments() {
        let c = Curve::new(
            vec![
                Segment::new(0.0, 0.0, 2.0),
                Segment::new(5.0, 10.0, 2.0),
            ],
            None,
        )
        .unwrap();
        assert_eq!(c.segments().len(), 1);
    }

    #[test]
    fn downward_jump_rejected() {
        let err = Curve::new(
            vec![
                Segment::new(0.0, 10.0, 0.0),
                Segment::new(1.0, 5.0, 0.0),
            ],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, CurveError::DownwardJump { .. }));
    }

    #[test]
    fn upward_jump_allowed() {
        let c = Curve::new(
            vec![
                Segment::new(0.0, 0.0, 0.0),
                Segment::new(1.0, 5.0, 1.0),
            ],
            None,
        )
        .unwrap();
        assert_eq!(c.eval(1.0), Bound::Finite(5.0));
        assert_eq!(c.eval(0.999999), Bound::Finite(0.0));
    }

    #[test]
    fn deviations_nonnegative_when_alpha_starts_above() {
        let grid_rates = [0.4, 1.0, 2.5];
        let grid_bursts = [0.0, 5.0, 80.0];
        let grid_lat = [0.0, 1.0, 6.0];
        for &r in &grid_rates {
            for &b in &grid_bursts {
                for &t in &grid_lat {
                    let alpha = tb(r, b);
                    let beta = rl(10.0, t);
                    let v = alpha.v_dev(&beta).expect_finite("v");
                    let h = alpha.h_dev(&beta).expect_finite("h");
                    assert!(v >= 0.0 && h >= 0.0, "r={r} b={b} t={t}: {v} {h}");
                }
            }
        }
    }

    #[test]
    fn deviations_monotone_in_beta_rate() {
        let alpha = tb(1.22, 480.0);
        let mut prev_v = f64::INFINITY;
        let mut prev_h = f64::INFINITY;
        for rate in [5.0, 20.0, 50.0, 100.0, 250.0, 600.0] {
            let beta = rl(rate, 4.0);
            let v = alpha.v_dev(&beta).expect_finite("v");
            let h = alpha.h_dev(&beta).expect_finite("h");
            assert!(v <= prev_v + 1e-9 && h <= prev_h + 1e-9, "rate={rate}");
            prev_v = v;
            prev_h = h;
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum AnyCurve {
            Tb(f64, f64),
            Rl(f64, f64),
            Bd(f64),
        }

        impl AnyCurve {
            fn build(&self) -> Curve {
                match *self {
                    AnyCurve::Tb(r, b) => tb(r, b),
                    AnyCurve::Rl(r, t) => rl(r, t),
                    AnyCurve::Bd(d) => bd(d),
                }
            }
        }

        fn any_curve() -> impl Strategy<Value = AnyCurve> {
            prop_oneof![
                (0.0f64..5.0, 0.0f64..500.0).prop_map(|(r, b)| AnyCurve::Tb(r, b)),
                (0.1f64..800.0, 0.0f64..20.0).prop_map(|(r, t)| AnyCurve::Rl(r, t)),
                (0.0f64..10.0).prop_map(AnyCurve::Bd),
            ]
        }

        proptest! {
            #[test]
            fn convolve_commutative(a in any_curve(), b in any_curve()) {
                let (f, g) = (a.build(), b.build());
                prop_assert!(f.convolve(&g).approx_eq(&g.convolve(&f), 1e-7));
            }

            #[test]
            fn convolve_associative(a in any_curve(), b in any_curve(), c in any_curve()) {
                let (f, g, h) = (a.build(), b.build(), c.build());
                let left = f.convolve(&g).convolve(&h);
                let right = f.convolve(&g.convolve(&h));
                prop_assert!(left.approx_eq(&right, 1e-6), "{left:?} vs {right:?}");
            }

            #[test]
            fn rate_latency_concatenation(
                r1 in 0.5f64..900.0, t1 in 0.0f64..20.0,
                r2 in 0.5f64..900.0, t2 in 0.0f64..20.0,
            ) {
                let got = rl(r1, t1).convolve(&rl(r2, t2));
                let want = rl(r1.min(r2), t1 + t2);
                prop_assert!(got.approx_eq(&want, 1e-9));
            }

            #[test]
            fn sum_additivity_pointwise(
                r1 in 0.0f64..5.0, b1 in 0.0f64..400.0,
                r2 in 0.0f64..5.0, b2 in 0.0f64..400.0,
                t in 0.0f64..100.0,
            ) {
                let f = tb(r1, b1);
                let g = tb(r2, b2);
                let s = f.sum_of(&g);
                let want = f.eval(t).expect_finite("f") + g.eval(t).expect_finite("g");
                prop_assert!((s.eval(t).expect_finite("s") - want).abs() <= 1e-9 * (1.0 + want));
            }
        }
    }
}
