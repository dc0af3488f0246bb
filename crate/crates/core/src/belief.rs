//! Belief-state machinery over the `2^K'` occupancy states of one fragment.
//!
//! A slot runs: prior belief -> sense -> Bayes posterior -> threshold access ->
//! prior for the next slot. The prior for the next slot is either the exact
//! one-step propagation or the Hamming-filtered approximation that only sums
//! over source states within distance `delta` of each destination state.

use crate::channel::{ObservationModel, ObservationVector};
use crate::error::{Error, Result};
use crate::occupancy::{OccupancyState, TransitionKernel};

/// Tolerance on the total mass of a belief.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Largest fragment width handled with dense beliefs.
pub const MAX_BELIEF_WIDTH: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    width: usize,
    weights: Vec<f64>,
}

impl Belief {
    pub fn uniform(width: usize) -> Result<Self> {
        check_width(width)?;
        let n = 1usize << width;
        Ok(Belief {
            width,
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn point_mass(state: &OccupancyState) -> Result<Self> {
        check_width(state.width())?;
        let mut weights = vec![0.0; 1 << state.width()];
        weights[state.bits() as usize] = 1.0;
        Ok(Belief {
            width: state.width(),
            weights,
        })
    }

    /// Validates non-negativity and unit mass.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::invalid(format!("belief length {n} is not 2^K with K >= 1")));
        }
        let width = n.trailing_zeros() as usize;
        check_width(width)?;
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("belief weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::invalid(format!("belief mass {total} differs from 1")));
        }
        Ok(Belief { width, weights })
    }

    /// Rescales non-negative weights to unit mass.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroMass);
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::from_weights(weights)
    }

    pub(crate) fn from_raw(width: usize, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), 1 << width);
        Belief { width, weights }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_states(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn dot(&self, alpha: &[f64]) -> f64 {
        dot(&self.weights, alpha)
    }

    /// Largest absolute weight difference.
    pub fn max_norm_distance(&self, other: &Belief) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn total_variation(&self, other: &Belief) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// CSV dump with header `state_index,weight`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state_index", "weight"])?;
        for (i, p) in self.weights.iter().enumerate() {
            w.write_record([i.to_string(), format!("{p:.9e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_width(width: usize) -> Result<()> {
    if width == 0 || width > MAX_BELIEF_WIDTH {
        return Err(Error::invalid(format!(
            "fragment width {width} outside 1..={MAX_BELIEF_WIDTH}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-subcarrier log-densities `(k, log f(y|0), log f(y|1))` of one slot.
pub(crate) fn observation_terms(y: &ObservationVector, model: &ObservationModel) -> Vec<(usize, f64, f64)> {
    y.entries()
        .iter()
        .map(|&(k, s)| {
            let (l0, l1) = model.log_density_pair(s.norm_sqr());
            (k, l0, l1)
        })
        .collect()
}

/// Likelihood of every joint state given per-subcarrier terms, scaled so the
/// largest entry is one. Returns the log of the scale.
pub(crate) fn state_likelihoods(terms: &[(usize, f64, f64)], out: &mut [f64]) -> f64 {
    out.iter_mut().for_each(|v| *v = 1.0);
    let mut shift = 0.0;
    for &(k, l0, l1) in terms {
        let m = l0.max(l1);
        shift += m;
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        let stride = 1usize << k;
        for (s, v) in out.iter_mut().enumerate() {
            *v *= if s & stride != 0 { e1 } else { e0 };
        }
    }
    shift
}

/// Bayes posterior from precomputed observation terms; `scratch` is reused.
pub(crate) fn posterior_from_terms(
    prior: &[f64],
    width: usize,
    terms: &[(usize, f64, f64)],
    scratch: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    debug_assert_eq!(prior.len(), 1 << width);
    scratch.resize(prior.len(), 0.0);
    state_likelihoods(terms, scratch);
    let mut post: Vec<f64> = prior.iter().zip(scratch.iter()).map(|(p, l)| p * l).collect();
    let total: f64 = post.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroMass);
    }
    post.iter_mut().for_each(|w| *w /= total);
    Ok(post)
}

/// Bayes rule with the factorised observation density.
pub fn posterior_update(
    prior: &Belief,
    sensing_set: &[usize],
    y: &ObservationVector,
    model: &ObservationModel,
) -> Result<Belief> {
    let mut keys = sensing_set.to_vec();
    keys.sort_unstable();
    if keys != y.indices() {
        return Err(Error::invalid("observation keys differ from the sensing set"));
    }
    if let Some(&k) = keys.last() {
        if k >= prior.width() {
            return Err(Error::invalid(format!(
                "sensed subcarrier {k} outside fragment width {}",
                prior.width()
            )));
        }
    }
    let terms = observation_terms(y, model);
    let mut scratch = Vec::new();
    let weights = posterior_from_terms(prior.weights(), prior.width(), &terms, &mut scratch)?;
    Ok(Belief::from_raw(prior.width(), weights))
}

/// `beta'(B) = sum_B' P(B | B') beta_hat(B')`.
pub fn propagate_prior_exact(posterior: &Belief, kernel: &TransitionKernel) -> Result<Belief> {
    if kernel.width() != posterior.width() {
        return Err(Error::WidthMismatch {
            expected: posterior.width(),
            actual: kernel.width(),
        });
    }
    let mut w = kernel.push_forward(posterior.weights());
    renormalize(&mut w)?;
    Ok(Belief::from_raw(posterior.width(), w))
}

fn renormalize(w: &mut [f64]) -> Result<()> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroMass);
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(())
}

/// Precomputed XOR masks of every offset with Hamming weight at most `delta`.
#[derive(Debug, Clone)]
pub struct HammingFilter {
    width: usize,
    delta: usize,
    masks: Vec<usize>,
}

impl HammingFilter {
    pub fn new(width: usize, delta: usize) -> Result<Self> {
        check_width(width)?;
        if delta == 0 || delta > width {
            return Err(Error::invalid(format!("Hamming radius {delta} outside 1..={width}")));
        }
        let masks = (0..1usize << width)
            .filter(|m| m.count_ones() as usize <= delta)
            .collect();
        Ok(HammingFilter { width, delta, masks })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    /// Whether the filter keeps every source state.
    pub fn is_exact(&self) -> bool {
        self.delta >= self.width
    }

    pub fn masks(&self) -> &[usize] {
        &self.masks
    }

    /// Unnormalised restricted propagation into `out`.
    pub(crate) fn propagate_into(&self, posterior: &[f64], kernel: &TransitionKernel, out: &mut [f64]) {
        if self.is_exact() {
            out.copy_from_slice(posterior);
            kernel.push_forward_in_place(out);
            return;
        }
        for (to, o) in out.iter_mut().enumerate() {
            *o = self
                .masks
                .iter()
                .map(|&m| {
                    let from = to ^ m;
                    kernel.prob(from, to) * posterior[from]
                })
                .sum();
        }
    }
}

/// Hamming-filtered prior propagation, renormalised to unit mass.
pub fn propagate_prior_hamming(
    posterior: &Belief,
    kernel: &TransitionKernel,
    filter: &HammingFilter,
) -> Result<Belief> {
    if kernel.width() != posterior.width() || filter.width() != posterior.width() {
        return Err(Error::WidthMismatch {
            expected: posterior.width(),
            actual: if kernel.width() != posterior.width() {
                kernel.width()
            } else {
                filter.width()
            },
        });
    }
    let mut out = vec![0.0; posterior.num_states()];
    filter.propagate_into(posterior.weights(), kernel, &mut out);
    renormalize(&mut out)?;
    Ok(Belief::from_raw(posterior.width(), out))
}

/// Posterior probability that each subcarrier is busy.
pub fn marginal_occupancy(belief: &Belief) -> Vec<f64> {
    marginals_of(belief.width(), belief.weights())
}

pub(crate) fn marginals_of(width: usize, weights: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; width];
    for (s, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (k, mk) in m.iter_mut().enumerate() {
            if (s >> k) & 1 == 1 {
                *mk += w;
            }
        }
    }
    m.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    m
}

/// Access vector; bit `k` set means subcarrier `k` is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccessDecision {
    width: usize,
    bits: u64,
}

impl AccessDecision {
    pub fn from_bits(width: usize, bits: u64) -> Self {
        let mask = if width >= 64 { u64::MAX } else { (1u64 << width) - 1 };
        AccessDecision {
            width,
            bits: bits & mask,
        }
    }

    pub fn none(width: usize) -> Self {
        AccessDecision { width, bits: 0 }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn accesses(&self, k: usize) -> bool {
        (self.bits >> k) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn to_vec(&self) -> Vec<bool> {
        (0..self.width).map(|k| self.accesses(k)).collect()
    }
}

/// Threshold at `1 / (1 + lambda)`; equality accesses.
pub fn access_decision(marginals: &[f64], lambda: f64) -> AccessDecision {
    let threshold = 1.0 / (1.0 + lambda);
    let bits = marginals
        .iter()
        .enumerate()
        .fold(0u64, |acc, (k, &m)| if m <= threshold { acc | (1 << k) } else { acc });
    AccessDecision::from_bits(marginals.len(), bits)
}

/// Expected reward of an access vector under per-subcarrier busy probabilities.
pub fn reward_of_decision(phi: &AccessDecision, marginals: &[f64], lambda: f64) -> f64 {
    marginals
        .iter()
        .enumerate()
        .filter(|(k, _)| phi.accesses(*k))
        .map(|(_, &m)| (1.0 - m) - lambda * m)
        .sum()
}

/// `sum_k max(1 - (1 + lambda) m_k, 0)`.
pub fn expected_reward(marginals: &[f64], lambda: f64) -> f64 {
    marginals.iter().map(|&m| (1.0 - (1.0 + lambda) * m).max(0.0)).sum()
}

/// `sum_k (1 - B_k) phi_k - lambda B_k phi_k`.
pub fn realized_reward(phi: &AccessDecision, truth: &OccupancyState, lambda: f64) -> Result<f64> {
    if phi.width() != truth.width() {
        return Err(Error::WidthMismatch {
            expected: truth.width(),
            actual: phi.width(),
        });
    }
    Ok(realized_reward_bits(phi.bits(), truth.bits(), lambda))
}

#[inline]
pub(crate) fn realized_reward_bits(phi: u64, truth: u64, lambda: f64) -> f64 {
    let idle_hits = (phi & !truth).count_ones() as f64;
    let busy_hits = (phi & truth).count_ones() as f64;
    idle_hits - lambda * busy_hits
}

/// Best achievable reward with knowledge of the occupancy: the idle count.
pub fn oracle_reward(truth: &OccupancyState, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    (truth.width() - truth.busy_count()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ObservationModel;
    use crate::occupancy::ThetaVector;
    use crate::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;
    use rand::Rng;

    fn random_belief(width: usize, rng: &mut impl Rng) -> Belief {
        let w: Vec<f64> = (0..1 << width).map(|_| rng.random::<f64>()).collect();
        Belief::normalized(w).unwrap()
    }

    #[test]
    fn from_weights_validates() {
        assert!(Belief::from_weights(vec![0.5, 0.5]).is_ok());
        assert!(Belief::from_weights(vec![0.5, 0.6]).is_err());
        assert!(Belief::from_weights(vec![1.5, -0.5]).is_err());
        assert!(Belief::from_weights(vec![0.3, 0.3, 0.4]).is_err());
    }

    #[test]
    fn empty_observation_keeps_prior() {
        let mut rng = rng_from_seed(1);
        let prior = random_belief(3, &mut rng);
        let post = posterior_update(&prior, &[], &ObservationVector::empty(), &ObservationModel::default()).unwrap();
        for (a, b) in prior.weights().iter().zip(post.weights()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_subcarrier_posterior_odds() {
        let model = ObservationModel::default();
        let prior = Belief::uniform(1).unwrap();
        let s = Complex64::new(1.3, -0.4);
        let y = ObservationVector::new(vec![(0, s)]).unwrap();
        let post = posterior_update(&prior, &[0], &y, &model).unwrap();
        let lr = (model.log_density(s, true) - model.log_density(s, false)).exp();
        assert_abs_diff_eq!(post.weights()[1] / post.weights()[0], lr, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_keys_rejected() {
        let prior = Belief::uniform(2).unwrap();
        let y = ObservationVector::new(vec![(1, Complex64::new(0.1, 0.0))]).unwrap();
        assert!(posterior_update(&prior, &[0], &y, &ObservationModel::default()).is_err());
    }

    #[test]
    fn point_mass_propagates_to_transition_row() {
        let theta = ThetaVector::reference();
        let kernel = TransitionKernel::new(3, theta).unwrap();
        let from = OccupancyState::from_bits(3, 0b101);
        let prior = propagate_prior_exact(&Belief::point_mass(&from).unwrap(), &kernel).unwrap();
        for to in 0..8 {
            assert_abs_diff_eq!(prior.weights()[to], kernel.prob(0b101, to), epsilon = 1e-15);
        }
    }

    #[test]
    fn full_radius_filter_is_exact() {
        let theta = ThetaVector::reference();
        let mut rng = rng_from_seed(7);
        for width in 1..=5 {
            let kernel = TransitionKernel::new(width, theta).unwrap();
            let post = random_belief(width, &mut rng);
            let exact = propagate_prior_exact(&post, &kernel).unwrap();
            let filter = HammingFilter::new(width, width).unwrap();
            let ham = propagate_prior_hamming(&post, &kernel, &filter).unwrap();
            assert!(exact.max_norm_distance(&ham) < 1e-12);
        }
        assert!(HammingFilter::new(3, 0).is_err());
        assert!(HammingFilter::new(3, 4).is_err());
    }

    #[test]
    fn marginals_of_simple_beliefs() {
        for m in marginal_occupancy(&Belief::uniform(4).unwrap()) {
            assert_abs_diff_eq!(m, 0.5, epsilon = 1e-15);
        }
        let s = OccupancyState::from_bits(4, 0b1010);
        let m = marginal_occupancy(&Belief::point_mass(&s).unwrap());
        assert_eq!(m, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn access_threshold_examples() {
        assert_eq!(access_decision(&[0.3, 0.6], 1.0).to_vec(), vec![true, false]);
        assert_eq!(access_decision(&[0.0, 0.7, 1.0], 0.0).count(), 3);
        assert_eq!(access_decision(&[0.5], 1.0).count(), 1);
        assert_eq!(access_decision(&[1e-9, 0.2], 1e12).count(), 0);
    }

    #[test]
    fn expected_reward_examples() {
        assert_abs_diff_eq!(expected_reward(&[0.2, 0.6], 1.0), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(expected_reward(&[0.0; 6], 2.0), 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(expected_reward(&[1.0; 6], 0.5), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn realized_reward_examples() {
        let truth = OccupancyState::from_bits(2, 0b10);
        let phi = AccessDecision::from_bits(2, 0b11);
        assert_abs_diff_eq!(realized_reward(&phi, &truth, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(realized_reward(&AccessDecision::none(2), &truth, 1.0).unwrap(), 0.0);
        let truth = OccupancyState::from_bits(5, 0b01101);
        let complement = AccessDecision::from_bits(5, !truth.bits());
        assert_eq!(realized_reward(&complement, &truth, 3.0).unwrap(), 2.0);
        assert!(realized_reward(&AccessDecision::none(3), &truth, 1.0).is_err());
    }

    #[test]
    fn oracle_reward_examples() {
        assert_eq!(oracle_reward(&OccupancyState::idle(6), 1.0), 6.0);
        assert_eq!(oracle_reward(&OccupancyState::from_bits(6, 0b111111), 1.0), 0.0);
    }

    #[test]
    fn belief_csv_has_header() {
        let mut buf = Vec::new();
        Belief::uniform(1).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("state_index,weight\n0,5.000000000e-1\n"));
    }
}
