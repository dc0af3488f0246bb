//! End-to-end runs: occupancy, sensing, learning, policy, access and metrics.
//!
//! Random streams are split from the scenario seed so that each concern
//! (occupancy, sensing noise, random sensing picks, radio, solver) draws from
//! its own generator.

mod config;
mod metrics;
mod radio;

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

pub use config::{
    AccessPolicy, EstimatorConfig, GeometryConfig, MultiAgentConfig, RadioConfig, RocConfig, ScenarioConfig,
    ThetaSource,
};
pub use metrics::{
    cr_throughput, fmt_num, interpolate_p_md, link_success, lu_throughput, normalized_loss, DetectionCounts,
    EstimatorTraceRow, LinkRecord, LossSummary, MetricsReport, RocPoint, SolverTraceRow, REPORT_FILES,
};
pub use radio::{RadioEnvironment, SlotRadio};

use crate::belief::{marginals_of, observation_terms, posterior_from_terms, realized_reward_bits, HammingFilter};
use crate::channel::{sense, ObservationVector};
use crate::error::{Error, Result};
use crate::estimator::{estimate_pooled, random_sensing_set, EmOptions, EstimateResult, SensingLog};
use crate::multiagent::{EpisodeSpec, Topology};
use crate::occupancy::{
    sample_next_state, InitialDistribution, OccupancyState, OccupancyTrace, ThetaVector, TransitionKernel,
};
use crate::solver::{fragment_spectrum, policy_action_weights, solve_fragments, Fragment, PolicySet, SolveResult};
use crate::{derive_seed, rng_from_seed, SimRng};

const STREAM_OCCUPANCY: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_PICKS: u64 = 3;
const STREAM_RADIO: u64 = 4;
const STREAM_SOLVER: u64 = 5;
const STREAM_AGENTS: u64 = 6;

fn stream(seed: u64, tag: u64) -> SimRng {
    rng_from_seed(derive_seed(seed, &[tag]))
}

/// First state of `bands` independent equal-width chains.
pub fn sample_banded_state<R: Rng + ?Sized>(
    k_total: usize,
    bands: usize,
    init: InitialDistribution,
    rng: &mut R,
) -> Result<OccupancyState> {
    if bands == 0 || !k_total.is_multiple_of(bands) {
        return Err(Error::invalid(format!(
            "{bands} bands do not split {k_total} subcarriers"
        )));
    }
    let w = k_total / bands;
    let mut bits = 0u64;
    for b in 0..bands {
        bits |= init.sample(w, rng).bits() << (b * w);
    }
    Ok(OccupancyState::from_bits(k_total, bits))
}

/// One slot of `bands` independent chains sharing `theta`; each band's
/// lowest subcarrier follows the `q` parameters.
pub fn next_banded_state<R: Rng + ?Sized>(
    state: &OccupancyState,
    theta: &ThetaVector,
    bands: usize,
    rng: &mut R,
) -> Result<OccupancyState> {
    let k_total = state.width();
    if bands == 0 || !k_total.is_multiple_of(bands) {
        return Err(Error::invalid(format!(
            "{bands} bands do not split {k_total} subcarriers"
        )));
    }
    let w = k_total / bands;
    let mut bits = 0u64;
    for b in 0..bands {
        let next = sample_next_state(&state.slice(b * w, w), theta, rng);
        bits |= next.bits() << (b * w);
    }
    Ok(OccupancyState::from_bits(k_total, bits))
}

/// Banded occupancy trace of `tau` slots.
pub fn sample_banded_trace<R: Rng + ?Sized>(
    theta: &ThetaVector,
    k_total: usize,
    bands: usize,
    tau: usize,
    init: InitialDistribution,
    rng: &mut R,
) -> Result<OccupancyTrace> {
    let mut trace = OccupancyTrace::new(k_total, Vec::with_capacity(tau))?;
    if tau == 0 {
        return Ok(trace);
    }
    let mut s = sample_banded_state(k_total, bands, init, rng)?;
    trace.push(s)?;
    for _ in 1..tau {
        s = next_banded_state(&s, theta, bands, rng)?;
        trace.push(s)?;
    }
    Ok(trace)
}

/// Occupancy plus per-fragment uniformly random sensing, as produced by
/// `simulate`. Observations carry global subcarrier indices.
pub fn simulate_observations(config: &ScenarioConfig) -> Result<(OccupancyTrace, Vec<ObservationVector>)> {
    config.validate()?;
    let fragments = config_fragments(config)?;
    let mut occ = stream(config.seed, STREAM_OCCUPANCY);
    let mut noise = stream(config.seed, STREAM_NOISE);
    let mut picks = stream(config.seed, STREAM_PICKS);
    let trace = sample_banded_trace(
        &config.theta_true,
        config.subcarriers,
        config.bands(),
        config.horizon,
        config.initial,
        &mut occ,
    )?;
    let mut obs = Vec::with_capacity(trace.len());
    for s in trace.states() {
        let mut set = Vec::with_capacity(config.sensing_budget);
        for f in &fragments {
            set.extend(
                random_sensing_set(f.width, f.budget, &mut picks)
                    .into_iter()
                    .map(|k| k + f.start),
            );
        }
        obs.push(sense(s, &set, &config.observation, &mut noise)?);
    }
    Ok((trace, obs))
}

/// Observation CSV: `slot,subcarrier,re,im`, 0-based, one row per sensed
/// subcarrier. Slots without observations do not appear; `slots` is given
/// explicitly when reading.
pub fn write_observations<W: Write>(obs: &[ObservationVector], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["slot", "subcarrier", "re", "im"])?;
    for (t, y) in obs.iter().enumerate() {
        for &(k, v) in y.entries() {
            w.write_record([
                t.to_string(),
                k.to_string(),
                format!("{:.17e}", v.re),
                format!("{:.17e}", v.im),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations<R: Read>(reader: R, slots: Option<usize>) -> Result<Vec<ObservationVector>> {
    let mut rows: Vec<(usize, usize, Complex64)> = Vec::new();
    for (line, rec) in csv::Reader::from_reader(reader).records().enumerate() {
        let rec = rec.map_err(|e| Error::invalid(format!("observation row {line}: {e}")))?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let int = |s: String| {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(format!("observation row {line}: bad index {s:?}")))
        };
        let num = |s: String| {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("observation row {line}: bad number {s:?}")))
        };
        rows.push((
            int(field(0))?,
            int(field(1))?,
            Complex64::new(num(field(2))?, num(field(3))?),
        ));
    }
    let n = slots.unwrap_or_else(|| rows.iter().map(|r| r.0 + 1).max().unwrap_or(0));
    let mut per_slot: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    for (t, k, v) in rows {
        if t >= n {
            return Err(Error::invalid(format!("observation slot {t} beyond {n} slots")));
        }
        per_slot[t].push((k, v));
    }
    per_slot.into_iter().map(ObservationVector::new).collect()
}

/// Splits global observations into per-fragment logs with local indices.
pub fn split_fragments(obs: &[ObservationVector], fragments: &[Fragment]) -> Result<Vec<SensingLog>> {
    fragments
        .iter()
        .map(|f| {
            let slots = obs
                .iter()
                .map(|y| {
                    ObservationVector::new(
                        y.entries()
                            .iter()
                            .filter(|(k, _)| *k >= f.start && *k < f.start + f.width)
                            .map(|&(k, v)| (k - f.start, v))
                            .collect(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            SensingLog::with_budget(f.width, slots, f.budget)
        })
        .collect()
}

pub fn config_fragments(config: &ScenarioConfig) -> Result<Vec<Fragment>> {
    fragment_spectrum(config.subcarriers, config.fragment_width, config.sensing_budget)
}

/// Pooled EM over the fragment logs of `obs`, from `estimator.theta0`.
pub fn estimate_from_observations(config: &ScenarioConfig, obs: &[ObservationVector]) -> Result<EstimateResult> {
    let logs = split_fragments(obs, &config_fragments(config)?)?;
    let options = EmOptions {
        max_iters: config.estimator.max_iters,
        tol: config.estimator.tol,
        init: InitialDistribution::Uniform,
    };
    estimate_pooled(
        &logs,
        &config.estimator.theta0,
        &config.observation,
        &options,
        Some(&config.theta_true),
    )
}

/// Solver settings of a run: the scenario seed is folded into the solver
/// seed.
pub fn run_solver_config(config: &ScenarioConfig) -> crate::solver::SolverConfig {
    let mut s = config.solver;
    s.seed = derive_seed(config.seed, &[STREAM_SOLVER, config.solver.seed]);
    s
}

/// Everything a single-agent run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    /// Policies of the last solve, one per fragment.
    pub policies: Vec<PolicySet>,
    pub estimate: Option<EstimateResult>,
}

impl RunOutput {
    /// True when an estimator or solver run hit its iteration cap.
    pub fn non_converged(&self) -> bool {
        self.report.estimator_converged == Some(false) || self.report.solver_converged == Some(false)
    }
}

struct Learner {
    theta: ThetaVector,
    kernel: TransitionKernel,
    policies: Option<Vec<SolveResult>>,
    solves: usize,
    solver_converged: Option<bool>,
    estimator_converged: Option<bool>,
    estimate: Option<EstimateResult>,
    estimator_trace: Vec<EstimatorTraceRow>,
    solver_trace: Vec<SolverTraceRow>,
}

impl Learner {
    fn solve(&mut self, config: &ScenarioConfig, fragments: &[Fragment]) -> Result<()> {
        let solved = solve_fragments(fragments, &self.theta, &run_solver_config(config), &config.observation)?;
        self.solves += 1;
        let mut converged = true;
        // Fragments of equal shape share one solve; trace it once.
        for r in solved.iter().take(1) {
            converged &= r.converged;
            self.solver_trace.extend(r.trace.iter().map(|row| SolverTraceRow {
                solve: self.solves,
                iteration: row.iteration,
                max_change: row.max_change,
                mean_value: row.mean_value,
            }));
        }
        converged &= solved.iter().all(|r| r.converged);
        self.solver_converged = Some(self.solver_converged.unwrap_or(true) && converged);
        self.policies = Some(solved);
        Ok(())
    }

    fn learn(
        &mut self,
        config: &ScenarioConfig,
        logs: &[SensingLog],
        from: ThetaVector,
        max_iters: usize,
        final_pass: bool,
    ) -> Result<()> {
        let options = EmOptions {
            max_iters,
            tol: config.estimator.tol,
            init: InitialDistribution::Uniform,
        };
        let est = estimate_pooled(logs, &from, &config.observation, &options, Some(&config.theta_true))?;
        let slot = logs.first().map_or(0, |l| l.len());
        self.estimator_trace.extend(est.trace.iter().map(|r| EstimatorTraceRow {
            slot,
            iteration: r.iteration,
            log_likelihood: r.log_likelihood,
            theta: r.theta,
            mse: r.mse,
        }));
        if final_pass {
            self.estimator_converged = Some(est.converged);
        }
        self.theta = est.theta;
        self.kernel = TransitionKernel::new(config.fragment_width, self.theta)?;
        self.estimate = Some(est);
        Ok(())
    }
}

/// Runs one single-agent scenario.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput> {
    config.validate()?;
    let fragments = config_fragments(config)?;
    let width = config.fragment_width;
    let n_states = 1usize << width;
    let lambda = config.solver.lambda;
    let threshold = 1.0 / (1.0 + lambda);
    let k_total = config.subcarriers;
    let horizon = config.horizon;
    let est = &config.estimator;

    let mut occ = stream(config.seed, STREAM_OCCUPANCY);
    let mut noise = stream(config.seed, STREAM_NOISE);
    let mut picks = stream(config.seed, STREAM_PICKS);
    let mut radio = RadioEnvironment::new(
        config.channel,
        config.radio,
        config.geometry.clone(),
        k_total,
        config.bands(),
        stream(config.seed, STREAM_RADIO),
    )?;
    let filter = HammingFilter::new(width, config.solver.delta_for(width))?;

    let learned = est.mode == ThetaSource::Learned && config.access_policy != AccessPolicy::Genie;
    let uses_policy = config.access_policy == AccessPolicy::Lessa;
    let initial_theta = if learned { est.theta0 } else { config.theta_true };
    let mut learner = Learner {
        theta: initial_theta,
        kernel: TransitionKernel::new(width, initial_theta)?,
        policies: None,
        solves: 0,
        solver_converged: None,
        estimator_converged: None,
        estimate: None,
        estimator_trace: Vec::new(),
        solver_trace: Vec::new(),
    };
    if !learned && uses_policy && horizon > 0 {
        learner.solve(config, &fragments)?;
    }
    // Sequential: random sensing until `learning_end`, then one estimate.
    // Concurrent: policy-driven once a first estimate exists.
    let learning_end = match (learned, est.concurrent) {
        (false, _) => 0,
        (true, false) => config.learning_slots(),
        (true, true) => horizon,
    };
    let mut logs: Vec<SensingLog> = fragments
        .iter()
        .map(|_| SensingLog::empty(width))
        .collect::<Result<_>>()?;
    let mut beliefs: Vec<Vec<f64>> = vec![vec![1.0 / n_states as f64; n_states]; fragments.len()];
    let mut scratch = Vec::new();
    let mut next = vec![0.0; n_states];

    let mut realized = Vec::with_capacity(horizon);
    let mut oracle = Vec::with_capacity(horizon);
    let mut counts = DetectionCounts::default();
    let mut access_count = 0u64;
    let mut interference = 0u64;
    let mut cr_bits = 0.0;
    let mut lu_tx = 0u64;
    let mut lu_ok = 0u64;
    let mut policy_from: Option<usize> = if learned || !uses_policy { None } else { Some(0) };
    if !uses_policy && !learned {
        policy_from = Some(0);
    }

    let mut state = if horizon > 0 {
        sample_banded_state(k_total, config.bands(), config.initial, &mut occ)?
    } else {
        OccupancyState::idle(k_total)
    };
    for t in 0..horizon {
        let mut access = 0u64;
        for (f, frag) in fragments.iter().enumerate() {
            let local = state.slice(frag.start, width);
            if config.access_policy == AccessPolicy::Genie {
                access |= (!local.bits() & ((1u64 << width) - 1)) << frag.start;
                continue;
            }
            let set: Vec<usize> = match (&learner.policies, uses_policy) {
                (Some(p), true) => policy_action_weights(&beliefs[f], &p[f].policy).to_vec(),
                _ => random_sensing_set(width, frag.budget, &mut picks),
            };
            let mut sorted = set;
            sorted.sort_unstable();
            let y = sense(&local, &sorted, &config.observation, &mut noise)?;
            let terms = observation_terms(&y, &config.observation);
            let post = posterior_from_terms(&beliefs[f], width, &terms, &mut scratch)?;
            let marg = marginals_of(width, &post);
            for (k, m) in marg.iter().enumerate() {
                if *m <= threshold {
                    access |= 1 << (frag.start + k);
                }
            }
            if learned && t < learning_end {
                logs[f].push(y)?;
            }
            filter.propagate_into(&post, &learner.kernel, &mut next);
            let total: f64 = next.iter().sum();
            beliefs[f].iter_mut().zip(&next).for_each(|(b, v)| *b = v / total);
        }
        let busy = state.bits();
        realized.push(realized_reward_bits(access, busy, lambda));
        oracle.push((k_total - state.busy_count()) as f64);
        counts.record_bits(k_total, access, busy);
        access_count += access.count_ones() as u64;
        interference += (access & busy).count_ones() as u64;
        let r = radio.slot(t, access, busy)?;
        cr_bits += r.cr_bits;
        lu_tx += r.lu_transmissions;
        lu_ok += r.lu_successes;

        if learned {
            let done = t + 1;
            let sequential_end = !est.concurrent && done == learning_end;
            let concurrent_tick = est.concurrent && done % est.relearn_interval == 0 && done < horizon;
            let concurrent_end = est.concurrent && done == horizon;
            if sequential_end || concurrent_end {
                let from = if est.concurrent { learner.theta } else { est.theta0 };
                learner.learn(config, &logs, from, est.max_iters, true)?;
                if uses_policy && sequential_end && done < horizon {
                    learner.solve(config, &fragments)?;
                    policy_from = Some(done);
                }
            } else if concurrent_tick {
                let from = if learner.estimate.is_some() {
                    learner.theta
                } else {
                    est.theta0
                };
                learner.learn(config, &logs, from, est.relearn_iters, false)?;
                if uses_policy {
                    learner.solve(config, &fragments)?;
                    policy_from.get_or_insert(done);
                }
            }
            if !uses_policy && policy_from.is_none() && learner.estimate.is_some() {
                policy_from = Some(done);
            }
        }
        if t + 1 < horizon {
            state = next_banded_state(&state, &config.theta_true, config.bands(), &mut occ)?;
        }
    }

    let loss = normalized_loss(&realized, &oracle);
    let post = policy_from.and_then(|from| {
        let kept: Vec<f64> = loss.trace.iter().skip(from).flatten().copied().collect();
        (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
    });
    let report = MetricsReport {
        slots: horizon,
        cr_throughput_bps: if horizon > 0 { cr_bits / horizon as f64 } else { 0.0 },
        lu_throughput_bps: if lu_tx > 0 {
            config.radio.lu_rate_bps * lu_ok as f64 / lu_tx as f64
        } else {
            0.0
        },
        lu_transmissions: lu_tx,
        mean_utility: if horizon > 0 {
            realized.iter().sum::<f64>() / horizon as f64
        } else {
            0.0
        },
        mean_normalized_loss: loss.mean,
        post_learning_normalized_loss: post,
        excluded_slots: loss.excluded as u64,
        p_fa: counts.p_fa(),
        p_md: counts.p_md(),
        access_count,
        interference_events: interference,
        estimator_mse: learner
            .estimate
            .as_ref()
            .map(|_| crate::estimator::mse(&learner.theta, &config.theta_true)),
        estimator_converged: learner.estimator_converged,
        solver_converged: learner.solver_converged,
        theta_hat: learner.estimate.as_ref().map(|_| learner.theta),
        utility_trace: realized,
        loss_trace: loss.trace,
        roc: vec![RocPoint::from_counts("run", Some(lambda), &counts)],
        estimator_trace: learner.estimator_trace,
        solver_trace: learner.solver_trace,
    };
    Ok(RunOutput {
        report,
        policies: learner
            .policies
            .map(|p| p.into_iter().map(|r| r.policy).collect())
            .unwrap_or_default(),
        estimate: learner.estimate,
    })
}

/// Energy detector over `samples` received samples per decision with AND
/// fusion: a subcarrier is declared busy only if every sample's energy
/// exceeds the per-sample threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeymanPearsonDetector {
    pub samples: usize,
    /// Per-sample energy threshold.
    pub threshold: f64,
    pub sigma_v2: f64,
}

impl NeymanPearsonDetector {
    /// Calibrates the threshold on the noise-only law so that the fused
    /// false-alarm rate equals `target_p_fa`: with per-sample exceedance
    /// `p = exp(-eta / sigma_v2)`, AND fusion gives `p^n = target`.
    pub fn calibrate(samples: usize, target_p_fa: f64, sigma_v2: f64) -> Result<Self> {
        if !(target_p_fa > 0.0 && target_p_fa < 1.0) {
            return Err(Error::invalid(format!(
                "target false-alarm rate {target_p_fa} outside (0, 1)"
            )));
        }
        if samples == 0 || !(sigma_v2 > 0.0) {
            return Err(Error::invalid("need at least one sample and positive noise"));
        }
        let per_sample = target_p_fa.powf(1.0 / samples as f64);
        Ok(NeymanPearsonDetector {
            samples,
            threshold: -sigma_v2 * per_sample.ln(),
            sigma_v2,
        })
    }

    /// Decision from explicit sample energies.
    pub fn detect(&self, energies: &[f64]) -> bool {
        !energies.is_empty() && energies.iter().all(|&e| e > self.threshold)
    }

    /// Decision for `samples` i.i.d. `CN(0, variance)` samples, drawn through
    /// their minimum energy, which is exponential with mean
    /// `variance / samples`.
    pub fn detect_block<R: Rng + ?Sized>(&self, variance: f64, rng: &mut R) -> bool {
        let e: f64 = rng.sample(Exp1);
        e * variance / self.samples as f64 > self.threshold
    }
}

/// Runs the energy-detection baseline on the scenario's occupancy.
///
/// Every subcarrier is sensed every slot. Within a slot the sensing channel
/// gain is held fixed across the samples (block fading); the detector
/// accesses each subcarrier it does not declare busy.
pub fn neyman_pearson_baseline(config: &ScenarioConfig, samples: usize, target_p_fa: f64) -> Result<MetricsReport> {
    config.validate()?;
    let det = NeymanPearsonDetector::calibrate(samples, target_p_fa, config.observation.sigma_v2)?;
    let k_total = config.subcarriers;
    let lambda = config.solver.lambda;
    let mut occ = stream(config.seed, STREAM_OCCUPANCY);
    let mut noise = stream(config.seed, STREAM_NOISE);
    let mut radio = RadioEnvironment::new(
        config.channel,
        config.radio,
        config.geometry.clone(),
        k_total,
        config.bands(),
        stream(config.seed, STREAM_RADIO),
    )?;
    let m = &config.observation;
    let mut realized = Vec::with_capacity(config.horizon);
    let mut oracle = Vec::with_capacity(config.horizon);
    let mut counts = DetectionCounts::default();
    let (mut access_count, mut interference, mut cr_bits, mut lu_tx, mut lu_ok) = (0u64, 0u64, 0.0, 0u64, 0u64);
    let mut state = if config.horizon > 0 {
        sample_banded_state(k_total, config.bands(), config.initial, &mut occ)?
    } else {
        OccupancyState::idle(k_total)
    };
    for t in 0..config.horizon {
        let mut access = 0u64;
        for k in 0..k_total {
            let gain: f64 = if state.get(k) {
                m.sigma_h2 * noise.sample::<f64, _>(Exp1)
            } else {
                0.0
            };
            let variance = gain * m.p_t + m.sigma_v2;
            if !det.detect_block(variance, &mut noise) {
                access |= 1 << k;
            }
        }
        let busy = state.bits();
        realized.push(realized_reward_bits(access, busy, lambda));
        oracle.push((k_total - state.busy_count()) as f64);
        counts.record_bits(k_total, access, busy);
        access_count += access.count_ones() as u64;
        interference += (access & busy).count_ones() as u64;
        let r = radio.slot(t, access, busy)?;
        cr_bits += r.cr_bits;
        lu_tx += r.lu_transmissions;
        lu_ok += r.lu_successes;
        if t + 1 < config.horizon {
            state = next_banded_state(&state, &config.theta_true, config.bands(), &mut occ)?;
        }
    }
    let loss = normalized_loss(&realized, &oracle);
    let horizon = config.horizon;
    Ok(MetricsReport {
        slots: horizon,
        cr_throughput_bps: if horizon > 0 { cr_bits / horizon as f64 } else { 0.0 },
        lu_throughput_bps: if lu_tx > 0 {
            config.radio.lu_rate_bps * lu_ok as f64 / lu_tx as f64
        } else {
            0.0
        },
        lu_transmissions: lu_tx,
        mean_utility: if horizon > 0 {
            realized.iter().sum::<f64>() / horizon as f64
        } else {
            0.0
        },
        mean_normalized_loss: loss.mean,
        post_learning_normalized_loss: loss.mean,
        excluded_slots: loss.excluded as u64,
        p_fa: counts.p_fa(),
        p_md: counts.p_md(),
        access_count,
        interference_events: interference,
        utility_trace: realized,
        loss_trace: loss.trace,
        roc: vec![RocPoint::from_counts("neyman-pearson", None, &counts)],
        ..Default::default()
    })
}

/// LESSA operating points over a penalty sweep plus the baseline point.
/// Sweep members run in parallel; output follows the order of `lambdas`.
pub fn roc_curve(config: &ScenarioConfig, lambdas: &[f64]) -> Result<Vec<RocPoint>> {
    if lambdas.is_empty() {
        return Err(Error::config("roc.lambdas", "sweep must not be empty"));
    }
    let mut points = lambdas
        .par_iter()
        .map(|&l| {
            let mut c = config.clone();
            c.solver.lambda = l;
            let out = run_scenario(&c)?;
            Ok(RocPoint {
                source: "lessa".into(),
                ..out.report.roc[0].clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let np = neyman_pearson_baseline(config, config.roc.np_samples, config.roc.np_target_pfa)?;
    points.extend(np.roc);
    Ok(points)
}

/// Multi-agent episode inputs derived from a scenario.
pub fn episode_spec(config: &ScenarioConfig) -> Result<EpisodeSpec> {
    config.validate()?;
    let ma = &config.multi_agent;
    fragment_spectrum(
        config.subcarriers,
        config.fragment_width,
        ma.agents * ma.per_agent_budget,
    )
    .map_err(|e| Error::config("multi_agent.per_agent_budget", e.to_string()))?;
    let topology = match &ma.rssi_db {
        Some(m) => Topology::new(m.clone())?,
        None => {
            let mut rng = stream(config.seed, STREAM_AGENTS);
            Topology::random_symmetric(ma.agents, ma.rssi_range_db[0], ma.rssi_range_db[1], &mut rng)
        }
    };
    Ok(EpisodeSpec {
        theta: config.theta_true,
        k_total: config.subcarriers,
        k_prime: config.fragment_width,
        agents: ma.agents,
        per_agent_budget: ma.per_agent_budget,
        model: config.observation,
        solver: run_solver_config(config),
        protocol: ma.protocol(),
        topology,
        horizon: ma.horizon.unwrap_or(config.horizon),
        init: config.initial,
        bands: config.bands(),
    })
}
