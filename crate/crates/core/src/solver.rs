//! Fragmentation and the randomized point-based sensing-policy solver.
//!
//! Each fragment is an independent sub-problem over `2^K'` joint states with
//! budget `kappa'`. The solver collects reachable beliefs by random
//! exploration, then repeats randomized improve-and-prune sweeps in which
//! Monte-Carlo backups are broadcast to every belief they improve.
//!
//! Backups draw received energies per (action, sensed pattern). The
//! observation density depends on the state only through the bits it senses,
//! so states that share a pattern share draws. Every backup at belief `u`
//! uses the stream `derive_seed(seed, [u])`, which fixes the sampled operator
//! across sweeps and lets the value iteration settle to `epsilon`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{dot, observation_terms, posterior_from_terms, Belief, HammingFilter};
use crate::channel::{sense, ObservationModel};
use crate::error::{Error, Result};
use crate::estimator::random_sensing_set;
use crate::occupancy::{sample_next_state, OccupancyState, ThetaVector, TransitionKernel};
use crate::{derive_seed, rng_from_seed};

/// A contiguous block of subcarriers solved on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fragment {
    pub index: usize,
    pub start: usize,
    pub width: usize,
    pub budget: usize,
}

/// Splits `k_total` subcarriers into fragments of width `k_prime` with a
/// proportional share of the sensing budget.
pub fn fragment_spectrum(k_total: usize, k_prime: usize, kappa_total: usize) -> Result<Vec<Fragment>> {
    if k_total == 0 || k_prime == 0 {
        return Err(Error::invalid("subcarrier counts must be positive"));
    }
    if kappa_total > k_total {
        return Err(Error::invalid(format!(
            "sensing budget {kappa_total} exceeds {k_total} subcarriers"
        )));
    }
    if !k_total.is_multiple_of(k_prime) {
        return Err(Error::invalid(format!(
            "fragment width {k_prime} does not divide {k_total}; choose a divisor of K"
        )));
    }
    if !(kappa_total * k_prime).is_multiple_of(k_total) {
        return Err(Error::invalid(format!(
            "budget {kappa_total} cannot be split evenly over {} fragments of width {k_prime}; \
             kappa * K' / K must be an integer",
            k_total / k_prime
        )));
    }
    let budget = kappa_total * k_prime / k_total;
    Ok((0..k_total / k_prime)
        .map(|index| Fragment {
            index,
            start: index * k_prime,
            width: k_prime,
            budget,
        })
        .collect())
}

/// Every `budget`-subset of `0..width` in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingActionSpace {
    width: usize,
    budget: usize,
    actions: Vec<Vec<usize>>,
}

impl SensingActionSpace {
    pub fn new(width: usize, budget: usize) -> Result<Self> {
        if width == 0 || budget > width {
            return Err(Error::invalid(format!("cannot choose {budget} of {width} subcarriers")));
        }
        let mut actions = Vec::new();
        let mut current = Vec::with_capacity(budget);
        combinations(0, width, budget, &mut current, &mut actions);
        Ok(SensingActionSpace { width, budget, actions })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn combinations(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for i in start..n {
        if n - i < k - current.len() {
            break;
        }
        current.push(i);
        combinations(i + 1, n, k, current, out);
        current.pop();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEntry {
    pub alpha: Vec<f64>,
    pub action: Vec<usize>,
}

/// Hyperplanes paired with sensing actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    width: usize,
    entries: Vec<PolicyEntry>,
}

impl PolicySet {
    pub fn new(width: usize, entries: Vec<PolicyEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("a policy needs at least one hyperplane"));
        }
        let n = 1usize << width;
        if let Some(e) = entries.iter().find(|e| e.alpha.len() != n) {
            return Err(Error::WidthMismatch {
                expected: n,
                actual: e.alpha.len(),
            });
        }
        Ok(PolicySet { width, entries })
    }

    /// The zero hyperplane with the empty action.
    pub fn initial(width: usize) -> Self {
        PolicySet {
            width,
            entries: vec![PolicyEntry {
                alpha: vec![0.0; 1 << width],
                action: Vec::new(),
            }],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn entries(&self) -> &[PolicyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index and value of the best hyperplane; lowest index on ties.
    pub fn best_entry(&self, weights: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, e) in self.entries.iter().enumerate() {
            let v = dot(weights, &e.alpha);
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }

    pub fn value(&self, belief: &Belief) -> f64 {
        self.best_entry(belief.weights()).1
    }

    /// CSV: `entry_id,action_indices,alpha_0..alpha_{2^K'-1}`; action indices
    /// are 0-based and separated by `;`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["entry_id".to_string(), "action_indices".to_string()];
        header.extend((0..1usize << self.width).map(|s| format!("alpha_{s}")));
        w.write_record(&header)?;
        for (i, e) in self.entries.iter().enumerate() {
            let mut row = vec![i.to_string(), join_indices(&e.action)];
            row.extend(e.alpha.iter().map(|&a| format!("{a:.17e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r
            .headers()
            .map_err(|e| Error::invalid(format!("policy header: {e}")))?
            .clone();
        let n = headers.len().saturating_sub(2);
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::invalid("policy CSV must carry 2^K' alpha columns"));
        }
        let width = n.trailing_zeros() as usize;
        let mut entries = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::invalid(format!("policy row {line}: {e}")))?;
            let action = parse_indices(&rec[1])?;
            let alpha = rec
                .iter()
                .skip(2)
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("policy row {line}: bad number {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push(PolicyEntry { alpha, action });
        }
        PolicySet::new(width, entries)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|e| Error::csv(path, e))
    }
}

pub(crate) fn join_indices(idx: &[usize]) -> String {
    idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn parse_indices(field: &str) -> Result<Vec<usize>> {
    if field.trim().is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad action index {s:?}")))
        })
        .collect()
}

/// Action of the maximizing hyperplane; lowest entry index on ties.
pub fn policy_action<'a>(belief: &Belief, policy: &'a PolicySet) -> &'a [usize] {
    policy_action_weights(belief.weights(), policy)
}

pub(crate) fn policy_action_weights<'a>(weights: &[f64], policy: &'a PolicySet) -> &'a [usize] {
    &policy.entries[policy.best_entry(weights).0].action
}

fn default_u() -> usize {
    128
}
fn default_n() -> usize {
    64
}
fn default_gamma() -> f64 {
    0.9
}
fn default_epsilon() -> f64 {
    1e-5
}
fn default_lambda() -> f64 {
    1.0
}
fn default_max_iterations() -> usize {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_u")]
    pub u_beliefs: usize,
    #[serde(default = "default_n")]
    pub n_mc: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Hamming radius; `None` means the fragment width (exact propagation).
    #[serde(default)]
    pub delta: Option<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            u_beliefs: default_u(),
            n_mc: default_n(),
            gamma: default_gamma(),
            epsilon: default_epsilon(),
            delta: None,
            lambda: default_lambda(),
            seed: 0,
            max_iterations: default_max_iterations(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, width: usize) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::config(field, message));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("solver.gamma", format!("must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.epsilon > 0.0) {
            return bad("solver.epsilon", format!("must be positive, got {}", self.epsilon));
        }
        if self.n_mc == 0 {
            return bad("solver.n_mc", "must be at least 1".into());
        }
        if self.u_beliefs == 0 {
            return bad("solver.u_beliefs", "must be at least 1".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("solver.lambda", format!("must be finite and >= 0, got {}", self.lambda));
        }
        if let Some(d) = self.delta {
            if d == 0 || d > width {
                return bad("solver.delta", format!("must lie in 1..={width}, got {d}"));
            }
        }
        if self.max_iterations == 0 {
            return bad("solver.max_iterations", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn delta_for(&self, width: usize) -> usize {
        self.delta.unwrap_or(width)
    }
}

/// Everything a backup needs that does not change between sweeps.
#[derive(Debug, Clone)]
pub struct FragmentProblem {
    width: usize,
    kernel: TransitionKernel,
    filter: HammingFilter,
    model: ObservationModel,
    actions: SensingActionSpace,
    /// `patterns[a][s]`: sensed bits of state `s` under action `a`, packed
    /// in action order.
    patterns: Vec<Vec<u8>>,
    gamma: f64,
    lambda: f64,
    n_mc: usize,
}

impl FragmentProblem {
    pub fn new(
        theta: &ThetaVector,
        width: usize,
        budget: usize,
        config: &SolverConfig,
        model: &ObservationModel,
    ) -> Result<Self> {
        config.validate(width)?;
        model.validate()?;
        if width > crate::belief::MAX_BELIEF_WIDTH {
            return Err(Error::invalid(format!(
                "fragment width {width} exceeds {}",
                crate::belief::MAX_BELIEF_WIDTH
            )));
        }
        if budget > 8 {
            return Err(Error::invalid("fragment budget above 8 is not supported"));
        }
        let kernel = TransitionKernel::new(width, *theta)?;
        let filter = HammingFilter::new(width, config.delta_for(width))?;
        let actions = SensingActionSpace::new(width, budget)?;
        let patterns = actions
            .actions()
            .iter()
            .map(|set| {
                (0..1usize << width)
                    .map(|s| {
                        set.iter()
                            .enumerate()
                            .fold(0u8, |acc, (j, &k)| acc | ((((s >> k) & 1) as u8) << j))
                    })
                    .collect()
            })
            .collect();
        Ok(FragmentProblem {
            width,
            kernel,
            filter,
            model: *model,
            actions,
            patterns,
            gamma: config.gamma,
            lambda: config.lambda,
            n_mc: config.n_mc,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn actions(&self) -> &SensingActionSpace {
        &self.actions
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }
}

/// Collects up to `u_beliefs` distinct prior beliefs along one simulated
/// trajectory under uniformly random sensing.
///
/// Per slot the draw order is: sensing set, observation, next state. The
/// trajectory starts from the uniform belief and a uniformly drawn state and
/// runs for at most `10 * u_beliefs` slots; beliefs closer than 1e-6 in max
/// norm to one already kept are skipped.
pub fn explore_beliefs<R: Rng + ?Sized>(
    theta: &ThetaVector,
    width: usize,
    budget: usize,
    config: &SolverConfig,
    model: &ObservationModel,
    rng: &mut R,
) -> Result<Vec<Belief>> {
    config.validate(width)?;
    let kernel = TransitionKernel::new(width, *theta)?;
    let filter = HammingFilter::new(width, config.delta_for(width))?;
    let mut belief = Belief::uniform(width)?;
    let mut state = OccupancyState::from_bits(width, rng.random_range(0..1u64 << width));
    let mut kept = vec![belief.clone()];
    let mut scratch = Vec::new();
    let mut next = vec![0.0; 1 << width];
    for _ in 0..10 * config.u_beliefs {
        if kept.len() >= config.u_beliefs {
            break;
        }
        let set = random_sensing_set(width, budget, rng);
        let y = sense(&state, &set, model, rng)?;
        state = sample_next_state(&state, theta, rng);
        let terms = observation_terms(&y, model);
        let post = posterior_from_terms(belief.weights(), width, &terms, &mut scratch)?;
        filter.propagate_into(&post, &kernel, &mut next);
        belief = Belief::normalized(next.clone())?;
        if kept.iter().all(|b| b.max_norm_distance(&belief) >= 1e-6) {
            kept.push(belief.clone());
        }
    }
    Ok(kept)
}

/// Hyperplanes of a policy pulled back through the transition kernel,
/// `(T alpha)(B) = sum_B' P(B'|B) alpha(B')`.
#[derive(Debug, Clone)]
pub struct PulledPolicy {
    policy: PolicySet,
    pulled: Vec<Vec<f64>>,
}

impl PulledPolicy {
    pub fn new(policy: &PolicySet, kernel: &TransitionKernel) -> Self {
        let pulled = policy.entries().iter().map(|e| kernel.pull_back(&e.alpha)).collect();
        PulledPolicy {
            policy: policy.clone(),
            pulled,
        }
    }

    pub fn policy(&self) -> &PolicySet {
        &self.policy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackupResult {
    pub alpha: Vec<f64>,
    pub action: usize,
    pub value: f64,
}

/// Monte-Carlo backup at one belief against the hyperplanes of `policy`.
pub fn backup<R: Rng + ?Sized>(
    belief: &Belief,
    policy: &PulledPolicy,
    problem: &FragmentProblem,
    rng: &mut R,
) -> Result<BackupResult> {
    if belief.width() != problem.width {
        return Err(Error::WidthMismatch {
            expected: problem.width,
            actual: belief.width(),
        });
    }
    let n = 1usize << problem.width;
    let weights = belief.weights();
    let entries = policy.policy.entries();
    // beta(B) * (T alpha_u)(B), reused by every action.
    let weighted: Vec<Vec<f64>> = policy
        .pulled
        .iter()
        .map(|ta| ta.iter().zip(weights).map(|(a, b)| a * b).collect())
        .collect();
    let threshold = 1.0 / (1.0 + problem.lambda);
    let (v0, v1) = (problem.model.variance(false), problem.model.variance(true));
    let mut best: Option<BackupResult> = None;
    let mut xi = vec![0.0; n];
    let mut post = vec![0.0; n];
    let mut prop = vec![0.0; n];
    for (a, set) in problem.actions.actions().iter().enumerate() {
        let kappa = set.len();
        let n_pat = 1usize << kappa;
        let pat = &problem.patterns[a];
        // Belief mass, per-subcarrier busy mass and future value per pattern.
        let mut mass = vec![0.0; n_pat];
        let mut busy = vec![0.0; n_pat * problem.width];
        let mut future = vec![0.0; entries.len() * n_pat];
        for s in 0..n {
            let p = pat[s] as usize;
            mass[p] += weights[s];
            for k in 0..problem.width {
                if (s >> k) & 1 == 1 {
                    busy[p * problem.width + k] += weights[s];
                }
            }
        }
        for (u, w) in weighted.iter().enumerate() {
            let row = &mut future[u * n_pat..(u + 1) * n_pat];
            for s in 0..n {
                row[pat[s] as usize] += w[s];
            }
        }
        xi.iter_mut().for_each(|x| *x = 0.0);
        let mut energies = vec![0.0; kappa];
        let mut lik = vec![0.0; n_pat];
        let mut marg = vec![0.0; problem.width];
        for truth in 0..n_pat {
            for _ in 0..problem.n_mc {
                for (j, e) in energies.iter_mut().enumerate() {
                    let v = if (truth >> j) & 1 == 1 { v1 } else { v0 };
                    let draw: f64 = rng.sample(Exp1);
                    *e = v * draw;
                }
                pattern_likelihoods(&energies, &problem.model, &mut lik);
                let phi;
                let chosen;
                if problem.filter.is_exact() {
                    let z: f64 = lik.iter().zip(&mass).map(|(l, m)| l * m).sum();
                    if !(z > 0.0) {
                        return Err(Error::ZeroMass);
                    }
                    for (k, m) in marg.iter_mut().enumerate() {
                        *m = (0..n_pat).map(|q| lik[q] * busy[q * problem.width + k]).sum::<f64>() / z;
                    }
                    phi = access_bits(&marg, threshold);
                    let mut arg = (0, f64::NEG_INFINITY);
                    for u in 0..entries.len() {
                        let row = &future[u * n_pat..(u + 1) * n_pat];
                        let v: f64 = lik.iter().zip(row).map(|(l, f)| l * f).sum();
                        if v > arg.1 {
                            arg = (u, v);
                        }
                    }
                    chosen = arg.0;
                } else {
                    let mut z = 0.0;
                    for s in 0..n {
                        post[s] = weights[s] * lik[pat[s] as usize];
                        z += post[s];
                    }
                    if !(z > 0.0) {
                        return Err(Error::ZeroMass);
                    }
                    post.iter_mut().for_each(|p| *p /= z);
                    let m = crate::belief::marginals_of(problem.width, &post);
                    phi = access_bits(&m, threshold);
                    problem.filter.propagate_into(&post, &problem.kernel, &mut prop);
                    chosen = policy.policy.best_entry(&prop).0;
                }
                let ta = &policy.pulled[chosen];
                for s in 0..n {
                    if pat[s] as usize == truth {
                        xi[s] +=
                            crate::belief::realized_reward_bits(phi, s as u64, problem.lambda) + problem.gamma * ta[s];
                    }
                }
            }
        }
        let inv = 1.0 / problem.n_mc as f64;
        xi.iter_mut().for_each(|x| *x *= inv);
        let value = dot(weights, &xi);
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(BackupResult {
                alpha: xi.clone(),
                action: a,
                value,
            });
        }
    }
    Ok(best.expect("action space is never empty"))
}

/// `lik[q] = f(energies | pattern q)`, scaled so the largest entry is 1.
fn pattern_likelihoods(energies: &[f64], model: &ObservationModel, lik: &mut [f64]) {
    let terms: Vec<(f64, f64)> = energies.iter().map(|&e| model.log_density_pair(e)).collect();
    for (q, l) in lik.iter_mut().enumerate() {
        *l = terms
            .iter()
            .enumerate()
            .map(|(j, &(l0, l1))| if (q >> j) & 1 == 1 { l1 } else { l0 })
            .sum();
    }
    let m = lik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    lik.iter_mut().for_each(|l| *l = (*l - m).exp());
}

fn access_bits(marginals: &[f64], threshold: f64) -> u64 {
    marginals
        .iter()
        .enumerate()
        .filter(|(_, &m)| m <= threshold)
        .fold(0u64, |acc, (k, _)| acc | (1 << k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub policy: PolicySet,
    pub values: Vec<f64>,
    pub backups: usize,
}

/// One improve-and-prune sweep over the belief set.
///
/// Beliefs are picked uniformly from the not-yet-improved set; a backup that
/// does not reach the belief's current value is replaced by the belief's
/// current best hyperplane, so no value decreases.
pub fn perseus_iteration<R: Rng + ?Sized>(
    beliefs: &[Belief],
    policy: &PolicySet,
    values: &[f64],
    problem: &FragmentProblem,
    seed: u64,
    rng: &mut R,
) -> Result<IterationOutcome> {
    if beliefs.len() != values.len() || beliefs.is_empty() {
        return Err(Error::invalid(
            "belief and value sets must be nonempty and equally long",
        ));
    }
    let pulled = PulledPolicy::new(policy, &problem.kernel);
    let mut remaining: Vec<usize> = (0..beliefs.len()).collect();
    let mut new_values = vec![f64::NEG_INFINITY; beliefs.len()];
    let mut entries: Vec<PolicyEntry> = Vec::new();
    let mut backups = 0;
    while !remaining.is_empty() {
        let u = remaining[rng.random_range(0..remaining.len())];
        let mut stream = rng_from_seed(derive_seed(seed, &[u as u64]));
        let b = backup(&beliefs[u], &pulled, problem, &mut stream)?;
        backups += 1;
        let entry = if b.value >= values[u] {
            PolicyEntry {
                alpha: b.alpha,
                action: problem.actions.actions()[b.action].clone(),
            }
        } else {
            policy.entries()[policy.best_entry(beliefs[u].weights()).0].clone()
        };
        if !entries.contains(&entry) {
            for (i, beta) in beliefs.iter().enumerate() {
                let v = dot(beta.weights(), &entry.alpha);
                if v > new_values[i] {
                    new_values[i] = v;
                }
            }
            entries.push(entry);
        }
        remaining.retain(|&i| new_values[i] < values[i]);
    }
    Ok(IterationOutcome {
        policy: PolicySet::new(problem.width, entries)?,
        values: new_values,
        backups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueTraceRow {
    pub iteration: usize,
    pub max_change: f64,
    pub mean_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub policy: PolicySet,
    pub trace: Vec<ValueTraceRow>,
    pub converged: bool,
    pub beliefs: Vec<Belief>,
}

impl SolveResult {
    /// Value-trace CSV: `iteration,max_change,mean_value`.
    pub fn write_trace<W: Write>(&self, writer: W) -> csv::Result<()> {
        write_value_trace(&self.trace, writer)
    }
}

pub(crate) fn write_value_trace<W: Write>(trace: &[ValueTraceRow], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "max_change", "mean_value"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            crate::scenario::fmt_num(r.max_change),
            crate::scenario::fmt_num(r.mean_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Solves one fragment sub-problem.
///
/// Sweeps until the largest value change over the belief set is at most
/// `epsilon`, or `max_iterations` sweeps have run (then `converged` is false
/// and the last policy is returned).
pub fn solve_fragment(
    theta: &ThetaVector,
    width: usize,
    budget: usize,
    config: &SolverConfig,
    model: &ObservationModel,
) -> Result<SolveResult> {
    let problem = FragmentProblem::new(theta, width, budget, config, model)?;
    let mut rng = rng_from_seed(derive_seed(config.seed, &[0xE7]));
    let beliefs = explore_beliefs(theta, width, budget, config, model, &mut rng)?;
    let backup_seed = derive_seed(config.seed, &[0xBA]);
    let mut policy = PolicySet::initial(width);
    let mut values: Vec<f64> = beliefs.iter().map(|b| policy.value(b)).collect();
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.max_iterations {
        let out = perseus_iteration(&beliefs, &policy, &values, &problem, backup_seed, &mut rng)?;
        let max_change = out
            .values
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mean_value = out.values.iter().sum::<f64>() / out.values.len() as f64;
        trace.push(ValueTraceRow {
            iteration,
            max_change,
            mean_value,
        });
        policy = out.policy;
        values = out.values;
        if max_change <= config.epsilon {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        policy,
        trace,
        converged,
        beliefs,
    })
}

/// Solves every fragment, in parallel. Fragments with equal width and budget
/// pose the same sub-problem under one parameter vector and seed, so each
/// distinct shape is solved once and shared.
pub fn solve_fragments(
    fragments: &[Fragment],
    theta: &ThetaVector,
    config: &SolverConfig,
    model: &ObservationModel,
) -> Result<Vec<SolveResult>> {
    let mut shapes: Vec<(usize, usize)> = fragments.iter().map(|f| (f.width, f.budget)).collect();
    shapes.sort_unstable();
    shapes.dedup();
    let solved = shapes
        .par_iter()
        .map(|&(w, b)| solve_fragment(theta, w, b, config, model))
        .collect::<Result<Vec<_>>>()?;
    Ok(fragments
        .iter()
        .map(|f| {
            let i = shapes.binary_search(&(f.width, f.budget)).expect("shape listed");
            solved[i].clone()
        })
        .collect())
}
