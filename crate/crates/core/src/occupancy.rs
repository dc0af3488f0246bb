//! Bottom-up time-frequency Markov model of licensed-user spectrum occupancy.
//!
//! The occupancy of `K` subcarriers in slot `t` is a bit vector `B(t)`. Bit 0
//! is subcarrier 1 (lowest frequency). The next state is generated one
//! subcarrier at a time, from the bottom up:
//!
//! - subcarrier 1 turns busy with probability `q_w`, where `w = B_1(t)`;
//! - subcarrier `k >= 2` turns busy with probability `p_{u,v}`, where
//!   `u = B_{k-1}(t+1)` is the freshly drawn lower neighbour and
//!   `v = B_k(t)` is its own previous state.
//!
//! [`TransitionKernel`] exposes the resulting `2^K x 2^K` transition matrix
//! both entry-wise and as factored matrix-vector products that never build the
//! matrix, which costs `O(K 2^K)` per product instead of `O(4^K)`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest width for which the kernel caches the dense transition table.
const DENSE_TABLE_MAX_WIDTH: usize = 8;

/// The six transition parameters `[p00, p01, p10, p11, q0, q1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaVector {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
    pub q0: f64,
    pub q1: f64,
}

impl ThetaVector {
    pub const NAMES: [&'static str; 6] = ["p00", "p01", "p10", "p11", "q0", "q1"];

    pub fn new(p00: f64, p01: f64, p10: f64, p11: f64, q0: f64, q1: f64) -> Result<Self> {
        Self::from_array([p00, p01, p10, p11, q0, q1])
    }

    /// Occupancy parameters used throughout the reference simulations.
    pub fn reference() -> Self {
        ThetaVector {
            p00: 0.1,
            p01: 0.3,
            p10: 0.3,
            p11: 0.7,
            q0: 0.3,
            q1: 0.8,
        }
    }

    /// Every parameter set to `value`; `0.5` is the uninformed EM start.
    pub fn constant(value: f64) -> Result<Self> {
        Self::from_array([value; 6])
    }

    pub fn from_array(values: [f64; 6]) -> Result<Self> {
        for (name, v) in Self::NAMES.iter().zip(values) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "theta parameter {name} = {v} is outside [0, 1]"
                )));
            }
        }
        let [p00, p01, p10, p11, q0, q1] = values;
        Ok(ThetaVector {
            p00,
            p01,
            p10,
            p11,
            q0,
            q1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::from_array(self.to_array()).map(|_| ())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.p00, self.p01, self.p10, self.p11, self.q0, self.q1]
    }

    /// `P(B_1(t+1) = 1 | B_1(t) = w)`.
    #[inline]
    pub fn q(&self, w: bool) -> f64 {
        if w {
            self.q1
        } else {
            self.q0
        }
    }

    /// `P(B_k(t+1) = 1 | B_{k-1}(t+1) = u, B_k(t) = v)`.
    #[inline]
    pub fn p(&self, u: bool, v: bool) -> f64 {
        match (u, v) {
            (false, false) => self.p00,
            (false, true) => self.p01,
            (true, false) => self.p10,
            (true, true) => self.p11,
        }
    }
}

/// Law of the first state of a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialDistribution {
    /// Each subcarrier independently busy with probability 1/2.
    #[default]
    Uniform,
    AllIdle,
}

impl InitialDistribution {
    pub fn log_probability(&self, state: &OccupancyState) -> f64 {
        match self {
            InitialDistribution::Uniform => -(state.width() as f64) * std::f64::consts::LN_2,
            InitialDistribution::AllIdle => {
                if state.bits() == 0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, width: usize, rng: &mut R) -> OccupancyState {
        match self {
            InitialDistribution::Uniform => {
                let mut bits = 0u64;
                for k in 0..width {
                    if rng.random_bool(0.5) {
                        bits |= 1 << k;
                    }
                }
                OccupancyState::from_bits(width, bits)
            }
            InitialDistribution::AllIdle => OccupancyState::idle(width),
        }
    }
}

/// Occupancy of `width` subcarriers in one slot; bit `k` is subcarrier `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OccupancyState {
    width: u8,
    bits: u64,
}

impl OccupancyState {
    pub const MAX_WIDTH: usize = 64;

    /// Panics if `width` is 0 or exceeds 64; extra high bits are masked off.
    pub fn from_bits(width: usize, bits: u64) -> Self {
        assert!(
            (1..=Self::MAX_WIDTH).contains(&width),
            "occupancy width {width} outside 1..=64"
        );
        OccupancyState {
            width: width as u8,
            bits: bits & mask(width),
        }
    }

    pub fn idle(width: usize) -> Self {
        Self::from_bits(width, 0)
    }

    pub fn from_slice(bits: &[bool]) -> Result<Self> {
        if bits.is_empty() || bits.len() > Self::MAX_WIDTH {
            return Err(Error::invalid(format!("occupancy width {} outside 1..=64", bits.len())));
        }
        let packed = bits
            .iter()
            .enumerate()
            .fold(0u64, |acc, (k, &b)| if b { acc | (1 << k) } else { acc });
        Ok(Self::from_bits(bits.len(), packed))
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width as usize
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Zero-based subcarrier index.
    #[inline]
    pub fn get(&self, k: usize) -> bool {
        debug_assert!(k < self.width());
        (self.bits >> k) & 1 == 1
    }

    pub fn to_vec(&self) -> Vec<bool> {
        (0..self.width()).map(|k| self.get(k)).collect()
    }

    pub fn busy_count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Subcarriers `start..start + width` as a standalone state.
    pub fn slice(&self, start: usize, width: usize) -> OccupancyState {
        assert!(start + width <= self.width(), "slice out of range");
        OccupancyState::from_bits(width, self.bits >> start)
    }
}

#[inline]
fn mask(width: usize) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Time-ordered sequence of occupancy states sharing one width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyTrace {
    width: usize,
    states: Vec<OccupancyState>,
}

impl OccupancyTrace {
    pub fn new(width: usize, states: Vec<OccupancyState>) -> Result<Self> {
        if width == 0 || width > OccupancyState::MAX_WIDTH {
            return Err(Error::invalid(format!("trace width {width} outside 1..=64")));
        }
        if let Some(bad) = states.iter().find(|s| s.width() != width) {
            return Err(Error::WidthMismatch {
                expected: width,
                actual: bad.width(),
            });
        }
        Ok(OccupancyTrace { width, states })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[OccupancyState] {
        &self.states
    }

    pub fn push(&mut self, state: OccupancyState) -> Result<()> {
        if state.width() != self.width {
            return Err(Error::WidthMismatch {
                expected: self.width,
                actual: state.width(),
            });
        }
        self.states.push(state);
        Ok(())
    }

    /// Restriction of every state to subcarriers `start..start + width`.
    pub fn fragment(&self, start: usize, width: usize) -> OccupancyTrace {
        OccupancyTrace {
            width,
            states: self.states.iter().map(|s| s.slice(start, width)).collect(),
        }
    }

    /// Fraction of slots in which each subcarrier is busy.
    pub fn occupancy_rates(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.width];
        for s in &self.states {
            for (k, c) in counts.iter_mut().enumerate() {
                if s.get(k) {
                    *c += 1;
                }
            }
        }
        let n = self.states.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// CSV with header `t,b_1,...,b_K`; `t` is the zero-based slot index.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.width).map(|k| format!("b_{k}")));
        w.write_record(&header)?;
        for (t, s) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend((0..self.width).map(|k| if s.get(k) { "1" } else { "0" }.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r
            .headers()
            .map_err(|e| Error::invalid(format!("trace csv header: {e}")))?
            .clone();
        let width = headers.len().saturating_sub(1);
        if headers.get(0) != Some("t") || width == 0 {
            return Err(Error::invalid("trace csv must start with column `t` then b_1..b_K"));
        }
        let mut states = Vec::new();
        for (row_idx, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::invalid(format!("trace csv row {row_idx}: {e}")))?;
            let mut bits = Vec::with_capacity(width);
            for field in rec.iter().skip(1) {
                match field.trim() {
                    "0" => bits.push(false),
                    "1" => bits.push(true),
                    other => {
                        return Err(Error::invalid(format!(
                            "trace csv row {row_idx}: occupancy entry `{other}` is not 0 or 1"
                        )))
                    }
                }
            }
            states.push(OccupancyState::from_slice(&bits)?);
        }
        OccupancyTrace::new(width, states)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|e| Error::csv(path, e))
    }
}

/// `P_B(to | from; theta)` for two states of equal width.
pub fn transition_probability(from: &OccupancyState, to: &OccupancyState, theta: &ThetaVector) -> Result<f64> {
    if from.width() != to.width() {
        return Err(Error::WidthMismatch {
            expected: from.width(),
            actual: to.width(),
        });
    }
    Ok(transition_probability_bits(from.width(), from.bits(), to.bits(), theta))
}

#[inline]
fn bernoulli(p: f64, outcome: bool) -> f64 {
    if outcome {
        p
    } else {
        1.0 - p
    }
}

#[inline]
fn bit(x: u64, k: usize) -> bool {
    (x >> k) & 1 == 1
}

pub(crate) fn transition_probability_bits(width: usize, from: u64, to: u64, theta: &ThetaVector) -> f64 {
    let mut prob = bernoulli(theta.q(bit(from, 0)), bit(to, 0));
    for k in 1..width {
        if prob == 0.0 {
            break;
        }
        prob *= bernoulli(theta.p(bit(to, k - 1), bit(from, k)), bit(to, k));
    }
    prob
}

/// Draws the next state subcarrier by subcarrier, bottom up.
pub fn sample_next_state<R: Rng + ?Sized>(from: &OccupancyState, theta: &ThetaVector, rng: &mut R) -> OccupancyState {
    let width = from.width();
    let mut bits = 0u64;
    if rng.random::<f64>() < theta.q(from.get(0)) {
        bits |= 1;
    }
    for k in 1..width {
        let lower = bit(bits, k - 1);
        if rng.random::<f64>() < theta.p(lower, from.get(k)) {
            bits |= 1 << k;
        }
    }
    OccupancyState::from_bits(width, bits)
}

pub fn sample_trace<R: Rng + ?Sized>(
    theta: &ThetaVector,
    width: usize,
    tau: usize,
    init: InitialDistribution,
    rng: &mut R,
) -> Result<OccupancyTrace> {
    if tau == 0 {
        return Err(Error::invalid("trace length must be at least 1"));
    }
    if width == 0 || width > OccupancyState::MAX_WIDTH {
        return Err(Error::invalid(format!("trace width {width} outside 1..=64")));
    }
    theta.validate()?;
    let mut states = Vec::with_capacity(tau);
    let mut current = init.sample(width, rng);
    states.push(current);
    for _ in 1..tau {
        current = sample_next_state(&current, theta, rng);
        states.push(current);
    }
    OccupancyTrace::new(width, states)
}

/// Log-probability of the whole trace, including the initial-state term.
///
/// Returns `f64::NEG_INFINITY` when some transition (or the first state) is
/// impossible under `theta`.
pub fn trace_log_likelihood(trace: &OccupancyTrace, theta: &ThetaVector, init: InitialDistribution) -> Result<f64> {
    if trace.len() < 2 {
        return Err(Error::invalid("log-likelihood needs a trace of length >= 2"));
    }
    let width = trace.width();
    let mut ll = init.log_probability(&trace.states()[0]);
    for pair in trace.states().windows(2) {
        let p = transition_probability_bits(width, pair[0].bits(), pair[1].bits(), theta);
        if p == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        ll += p.ln();
    }
    Ok(ll)
}

/// `gamma_params * ln(nu) - 2 * log-likelihood`.
pub fn bic(
    trace: &OccupancyTrace,
    theta_star: &ThetaVector,
    gamma_params: usize,
    nu: usize,
    init: InitialDistribution,
) -> Result<f64> {
    if nu == 0 {
        return Err(Error::invalid("BIC sample size must be >= 1"));
    }
    let ll = trace_log_likelihood(trace, theta_star, init)?;
    Ok(gamma_params as f64 * (nu as f64).ln() - 2.0 * ll)
}

/// Number of free parameters of the bottom-up model.
pub const MODEL_PARAMETERS: usize = 6;

/// Transition operator of one fragment of width `K <= 20`.
///
/// States are indexed by their bit pattern (`0..2^K`).
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    width: usize,
    theta: ThetaVector,
    dense: Option<Vec<f64>>,
}

impl TransitionKernel {
    pub const MAX_WIDTH: usize = 20;

    pub fn new(width: usize, theta: ThetaVector) -> Result<Self> {
        if width == 0 || width > Self::MAX_WIDTH {
            return Err(Error::invalid(format!(
                "kernel width {width} outside 1..={}",
                Self::MAX_WIDTH
            )));
        }
        theta.validate()?;
        let dense = (width <= DENSE_TABLE_MAX_WIDTH).then(|| {
            let n = 1usize << width;
            let mut table = vec![0.0; n * n];
            for from in 0..n {
                for to in 0..n {
                    table[from * n + to] = transition_probability_bits(width, from as u64, to as u64, &theta);
                }
            }
            table
        });
        Ok(TransitionKernel { width, theta, dense })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_states(&self) -> usize {
        1 << self.width
    }

    pub fn theta(&self) -> &ThetaVector {
        &self.theta
    }

    #[inline]
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        match &self.dense {
            Some(t) => t[(from << self.width) + to],
            None => transition_probability_bits(self.width, from as u64, to as u64, &self.theta),
        }
    }

    /// Row-major `from x to` matrix.
    pub fn dense_matrix(&self) -> Vec<f64> {
        if let Some(t) = &self.dense {
            return t.clone();
        }
        let n = self.num_states();
        let mut table = vec![0.0; n * n];
        for from in 0..n {
            for to in 0..n {
                table[from * n + to] = self.prob(from, to);
            }
        }
        table
    }

    /// 2x2 factor of subcarrier `k` as `[i][j]`, given the already-drawn lower
    /// neighbour `lower` (ignored for `k = 0`).
    #[inline]
    fn factor(&self, k: usize, lower: bool) -> [[f64; 2]; 2] {
        let on = |prev: bool| {
            if k == 0 {
                self.theta.q(prev)
            } else {
                self.theta.p(lower, prev)
            }
        };
        let (p0, p1) = (on(false), on(true));
        [[1.0 - p0, p0], [1.0 - p1, p1]]
    }

    /// `out(to) = sum_from v(from) P(to | from)`, i.e. `v^T T`.
    pub fn push_forward(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.push_forward_in_place(&mut out);
        out
    }

    pub fn push_forward_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.num_states());
        // After step k, bits 0..=k index the destination state and bits above
        // k still index the source state.
        for k in 0..self.width {
            self.contract(x, k, |f, a, b| (a * f[0][0] + b * f[1][0], a * f[0][1] + b * f[1][1]));
        }
    }

    /// Applies `step` to every pair of entries differing in bit `k`, with
    /// the factor selected by bit `k - 1`. Within a block of `2 << k`
    /// entries that bit is the top bit of the offset, so each half of the
    /// block uses one factor.
    #[inline(always)]
    fn contract(&self, x: &mut [f64], k: usize, step: impl Fn(&[[f64; 2]; 2], f64, f64) -> (f64, f64)) {
        let n = x.len();
        let stride = 1usize << k;
        let factors = [self.factor(k, false), self.factor(k, true)];
        if k == 0 {
            let f = &factors[0];
            for pair in x.chunks_exact_mut(2) {
                (pair[0], pair[1]) = step(f, pair[0], pair[1]);
            }
            return;
        }
        let half = stride / 2;
        let mut block = 0;
        while block < n {
            for (r, f) in factors.iter().enumerate() {
                let start = block + r * half;
                let (lo, hi) = x[start..].split_at_mut(stride);
                for (a, b) in lo[..half].iter_mut().zip(&mut hi[..half]) {
                    (*a, *b) = step(f, *a, *b);
                }
            }
            block += 2 * stride;
        }
    }

    /// `out(from) = sum_to P(to | from) v(to)`, i.e. `T v`.
    pub fn pull_back(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.pull_back_in_place(&mut out);
        out
    }

    pub fn pull_back_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.num_states());
        // Sum out destination bits from the top down; bit k - 1 still indexes
        // the destination when subcarrier k is contracted.
        for k in (0..self.width).rev() {
            self.contract(x, k, |f, a, b| (f[0][0] * a + f[0][1] * b, f[1][0] * a + f[1][1] * b));
        }
    }
}
