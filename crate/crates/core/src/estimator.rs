//! Baum-Welch estimation of the occupancy parameters from noisy, partially
//! sensed slots.
//!
//! The E-step runs an exact forward-backward pass over the `2^K'` joint states
//! of a fragment. Per-slot observation likelihoods are formed in the log domain
//! and shifted by their maximum before exponentiation; the forward messages are
//! then rescaled to unit mass every slot, with the log scale factors summed into
//! the data log-likelihood. Pairwise posteriors are accumulated as one
//! `2^K' x 2^K'` matrix and reduced to the transition counts once per pass.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::belief::{observation_terms, state_likelihoods};
use crate::channel::{sense, ObservationModel, ObservationVector};
use crate::error::{Error, Result};
use crate::occupancy::{InitialDistribution, OccupancyTrace, ThetaVector, TransitionKernel};

/// Largest fragment width accepted by the exact E-step.
pub const MAX_EM_WIDTH: usize = 12;

/// Observations of one fragment, one entry per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingLog {
    width: usize,
    slots: Vec<ObservationVector>,
}

impl SensingLog {
    pub fn new(width: usize, slots: Vec<ObservationVector>) -> Result<Self> {
        if width == 0 || width > MAX_EM_WIDTH {
            return Err(Error::invalid(format!(
                "sensing log width {width} outside 1..={MAX_EM_WIDTH}"
            )));
        }
        for (t, y) in slots.iter().enumerate() {
            if let Some(&(k, _)) = y.entries().last() {
                if k >= width {
                    return Err(Error::invalid(format!(
                        "slot {t}: subcarrier {k} outside width {width}"
                    )));
                }
            }
        }
        Ok(SensingLog { width, slots })
    }

    /// Checks `|K_t| <= kappa` for every slot.
    pub fn with_budget(width: usize, slots: Vec<ObservationVector>, kappa: usize) -> Result<Self> {
        if let Some((t, y)) = slots.iter().enumerate().find(|(_, y)| y.len() > kappa) {
            return Err(Error::invalid(format!(
                "slot {t} senses {} subcarriers, budget is {kappa}",
                y.len()
            )));
        }
        Self::new(width, slots)
    }

    pub fn empty(width: usize) -> Result<Self> {
        Self::new(width, Vec::new())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[ObservationVector] {
        &self.slots
    }

    pub fn push(&mut self, y: ObservationVector) -> Result<()> {
        if let Some(&(k, _)) = y.entries().last() {
            if k >= self.width {
                return Err(Error::invalid(format!("subcarrier {k} outside width {}", self.width)));
            }
        }
        self.slots.push(y);
        Ok(())
    }

    /// Slots `start..end` as a separate log.
    pub fn window(&self, start: usize, end: usize) -> SensingLog {
        SensingLog {
            width: self.width,
            slots: self.slots[start..end.min(self.slots.len())].to_vec(),
        }
    }
}

/// Uniformly random `kappa`-subset of `0..width`, sorted.
pub fn random_sensing_set<R: Rng + ?Sized>(width: usize, kappa: usize, rng: &mut R) -> Vec<usize> {
    let mut set = sample_indices(rng, width, kappa.min(width)).into_vec();
    set.sort_unstable();
    set
}

/// Senses a trace with uniformly random `kappa`-subsets every slot.
pub fn observe_trace<R: Rng + ?Sized>(
    trace: &OccupancyTrace,
    kappa: usize,
    model: &ObservationModel,
    rng: &mut R,
) -> Result<SensingLog> {
    let width = trace.width();
    let slots = trace
        .states()
        .iter()
        .map(|s| {
            let set = random_sensing_set(width, kappa, rng);
            sense(s, &set, model, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    SensingLog::new(width, slots)
}

/// Expected transition counts of one E-step.
///
/// `a[w][b]` counts first-subcarrier moves `w -> b`; `b[u][v][b]` counts
/// interior moves to `b` with lower neighbour `u` (next slot) and own previous
/// state `v`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EStepStats {
    pub a: [[f64; 2]; 2],
    pub b: [[[f64; 2]; 2]; 2],
}

impl EStepStats {
    pub fn merge(&mut self, other: &EStepStats) {
        for w in 0..2 {
            for x in 0..2 {
                self.a[w][x] += other.a[w][x];
                for v in 0..2 {
                    self.b[w][v][x] += other.b[w][v][x];
                }
            }
        }
    }

    pub fn first_total(&self) -> f64 {
        self.a.iter().flatten().sum()
    }

    pub fn interior_total(&self) -> f64 {
        self.b.iter().flatten().flatten().sum()
    }
}

/// E-step output for one fragment log.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackward {
    pub stats: EStepStats,
    /// `log f(Y | theta)`; `-inf` when the observations are impossible.
    pub log_likelihood: f64,
}

/// Exact forward-backward pass; unsensed subcarriers contribute factor 1.
pub fn forward_backward(
    log: &SensingLog,
    theta: &ThetaVector,
    model: &ObservationModel,
    init: InitialDistribution,
) -> Result<ForwardBackward> {
    let kernel = TransitionKernel::new(log.width(), *theta)?;
    forward_backward_with_kernel(log, &kernel, model, init)
}

fn initial_weights(width: usize, init: InitialDistribution) -> Vec<f64> {
    let n = 1usize << width;
    match init {
        InitialDistribution::Uniform => vec![1.0 / n as f64; n],
        InitialDistribution::AllIdle => {
            let mut w = vec![0.0; n];
            w[0] = 1.0;
            w
        }
    }
}

fn slot_likelihood(width: usize, y: &ObservationVector, model: &ObservationModel, out: &mut [f64]) -> f64 {
    debug_assert_eq!(out.len(), 1 << width);
    state_likelihoods(&observation_terms(y, model), out)
}

fn forward_backward_with_kernel(
    log: &SensingLog,
    kernel: &TransitionKernel,
    model: &ObservationModel,
    init: InitialDistribution,
) -> Result<ForwardBackward> {
    let width = log.width();
    let n = 1usize << width;
    let tau = log.len();
    if tau == 0 {
        return Ok(ForwardBackward {
            stats: EStepStats::default(),
            log_likelihood: 0.0,
        });
    }
    let impossible = || ForwardBackward {
        stats: EStepStats::default(),
        log_likelihood: f64::NEG_INFINITY,
    };

    // Forward pass: alpha[t] is the filtered distribution after slot t.
    let mut alpha = vec![0.0; tau * n];
    let mut scale = vec![0.0; tau];
    let mut lik = vec![0.0; n];
    let mut log_likelihood = 0.0;
    let mut pred = initial_weights(width, init);
    for t in 0..tau {
        let shift = slot_likelihood(width, &log.slots()[t], model, &mut lik);
        if t > 0 {
            pred.copy_from_slice(&alpha[(t - 1) * n..t * n]);
            kernel.push_forward_in_place(&mut pred);
        }
        let row = &mut alpha[t * n..(t + 1) * n];
        let mut total = 0.0;
        for j in 0..n {
            row[j] = pred[j] * lik[j];
            total += row[j];
        }
        if !(total > 0.0) || !total.is_finite() {
            return Ok(impossible());
        }
        row.iter_mut().for_each(|v| *v /= total);
        scale[t] = total;
        log_likelihood += total.ln() + shift;
    }

    // Backward pass with the same scale factors; accumulate
    // sum_t alpha[t-1](i) * h_t(j), h_t(j) = lik_t(j) beta_t(j) / c_t.
    let mut outer = vec![0.0; n * n];
    let mut beta = vec![1.0; n];
    let mut h = vec![0.0; n];
    for t in (1..tau).rev() {
        slot_likelihood(width, &log.slots()[t], model, &mut lik);
        let inv_c = 1.0 / scale[t];
        for j in 0..n {
            h[j] = lik[j] * beta[j] * inv_c;
        }
        let prev = &alpha[(t - 1) * n..t * n];
        for (i, &a) in prev.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &mut outer[i * n..(i + 1) * n];
            for (o, &hj) in row.iter_mut().zip(&h) {
                *o += a * hj;
            }
        }
        beta.copy_from_slice(&h);
        kernel.pull_back_in_place(&mut beta);
    }

    let mut stats = EStepStats::default();
    for i in 0..n {
        for j in 0..n {
            let xi = outer[i * n + j] * kernel.prob(i, j);
            if xi == 0.0 {
                continue;
            }
            stats.a[i & 1][j & 1] += xi;
            for k in 1..width {
                let u = (j >> (k - 1)) & 1;
                let v = (i >> k) & 1;
                let b = (j >> k) & 1;
                stats.b[u][v][b] += xi;
            }
        }
    }
    Ok(ForwardBackward { stats, log_likelihood })
}

/// M-step output; `degenerate[i]` marks parameters kept from the previous
/// iterate because their count denominator was zero (order of
/// [`ThetaVector::NAMES`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStep {
    pub theta: ThetaVector,
    pub degenerate: [bool; 6],
}

impl MStep {
    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }
}

/// Closed-form ratios of expected counts.
pub fn m_step(stats: &EStepStats, previous: &ThetaVector) -> MStep {
    let prev = previous.to_array();
    let mut next = prev;
    let mut degenerate = [false; 6];
    let ratio = |ones: f64, zeros: f64| {
        let denom = ones + zeros;
        (denom > 0.0).then(|| (ones / denom).clamp(0.0, 1.0))
    };
    // p_uv occupy slots 0..4 in (u, v) order, q_w slots 4..6.
    for u in 0..2 {
        for v in 0..2 {
            let idx = 2 * u + v;
            match ratio(stats.b[u][v][1], stats.b[u][v][0]) {
                Some(p) => next[idx] = p,
                None => degenerate[idx] = true,
            }
        }
    }
    for w in 0..2 {
        match ratio(stats.a[w][1], stats.a[w][0]) {
            Some(q) => next[4 + w] = q,
            None => degenerate[4 + w] = true,
        }
    }
    MStep {
        theta: ThetaVector::from_array(next).expect("ratios lie in [0, 1]"),
        degenerate,
    }
}

/// Squared Euclidean distance over the six parameters.
pub fn mse(a: &ThetaVector, b: &ThetaVector) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub init: InitialDistribution,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iters: 200,
            tol: 1e-4,
            init: InitialDistribution::Uniform,
        }
    }
}

/// One row of the EM trace: the log-likelihood evaluated at `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmIterate {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub theta: ThetaVector,
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub theta: ThetaVector,
    pub trace: Vec<EmIterate>,
    pub converged: bool,
    pub degenerate: bool,
}

impl EstimateResult {
    pub fn final_log_likelihood(&self) -> f64 {
        self.trace.last().map_or(f64::NEG_INFINITY, |r| r.log_likelihood)
    }

    /// Estimator checkpoint CSV:
    /// `iteration,log_likelihood,q0,q1,p00,p01,p10,p11,mse_if_reference`.
    pub fn write_checkpoint<W: Write>(&self, writer: W) -> csv::Result<()> {
        write_em_trace(&self.trace, writer)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(file).map_err(|e| Error::csv(path, e))
    }
}

pub(crate) fn write_em_trace<W: Write>(trace: &[EmIterate], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "iteration",
        "log_likelihood",
        "q0",
        "q1",
        "p00",
        "p01",
        "p10",
        "p11",
        "mse_if_reference",
    ])?;
    for r in trace {
        let t = &r.theta;
        w.write_record([
            r.iteration.to_string(),
            crate::scenario::fmt_num(r.log_likelihood),
            crate::scenario::fmt_num(t.q0),
            crate::scenario::fmt_num(t.q1),
            crate::scenario::fmt_num(t.p00),
            crate::scenario::fmt_num(t.p01),
            crate::scenario::fmt_num(t.p10),
            crate::scenario::fmt_num(t.p11),
            r.mse.map(crate::scenario::fmt_num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pooled E-step over several fragment logs sharing one parameter vector.
///
/// Fragments run in parallel; statistics are merged in input order.
pub fn pooled_e_step(
    logs: &[SensingLog],
    theta: &ThetaVector,
    model: &ObservationModel,
    init: InitialDistribution,
) -> Result<ForwardBackward> {
    let results = logs
        .par_iter()
        .map(|log| forward_backward(log, theta, model, init))
        .collect::<Result<Vec<_>>>()?;
    let mut total = ForwardBackward {
        stats: EStepStats::default(),
        log_likelihood: 0.0,
    };
    for r in &results {
        total.stats.merge(&r.stats);
        total.log_likelihood += r.log_likelihood;
    }
    Ok(total)
}

/// EM on a single log.
pub fn estimate(
    log: &SensingLog,
    theta0: &ThetaVector,
    model: &ObservationModel,
    options: &EmOptions,
    reference: Option<&ThetaVector>,
) -> Result<EstimateResult> {
    estimate_pooled(std::slice::from_ref(log), theta0, model, options, reference)
}

/// EM over fragment logs that share one parameter vector.
///
/// Stops when the log-likelihood changes by less than `tol` between
/// consecutive evaluations, or after `max_iters` M-steps. The returned
/// parameters are the last evaluated iterate.
pub fn estimate_pooled(
    logs: &[SensingLog],
    theta0: &ThetaVector,
    model: &ObservationModel,
    options: &EmOptions,
    reference: Option<&ThetaVector>,
) -> Result<EstimateResult> {
    theta0.validate()?;
    model.validate()?;
    if logs.iter().all(|l| l.len() < 2) {
        return Err(Error::invalid("estimation needs at least two slots"));
    }
    let mut theta = *theta0;
    let mut trace = Vec::new();
    let mut degenerate = false;
    let mut converged = false;
    let mut previous_ll: Option<f64> = None;
    for iteration in 0..=options.max_iters {
        let e = pooled_e_step(logs, &theta, model, options.init)?;
        trace.push(EmIterate {
            iteration,
            log_likelihood: e.log_likelihood,
            theta,
            mse: reference.map(|r| mse(&theta, r)),
        });
        if !e.log_likelihood.is_finite() {
            break;
        }
        if let Some(prev) = previous_ll {
            if (e.log_likelihood - prev).abs() < options.tol {
                converged = true;
                break;
            }
        }
        previous_ll = Some(e.log_likelihood);
        if iteration == options.max_iters {
            break;
        }
        let m = m_step(&e.stats, &theta);
        degenerate |= m.any_degenerate();
        theta = m.theta;
    }
    Ok(EstimateResult {
        theta,
        trace,
        converged,
        degenerate,
    })
}
