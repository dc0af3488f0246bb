//! Physical layer: sensing observations, geometric fading, SINR and CR rate
//! adaptation.
//!
//! Two independent channel paths exist. Sensing uses the flat model
//! `Y_k | B_k ~ CN(0, sigma_h2 * P_T * B_k + sigma_v2)` described by
//! [`ObservationModel`], which keeps observation likelihoods analytic. Throughput
//! uses the geometric LoS/NLoS model of [`ChannelEnvParams`] with Rician or
//! Rayleigh small-scale fading.

mod marcum;

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy::OccupancyState;

pub use marcum::marcum_q1;

/// Flat sensing channel of the noisy observation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationModel {
    /// Licensed-user transmit power `P_T` (W).
    pub p_t: f64,
    /// Variance of the flat sensing channel `sigma_h2`.
    pub sigma_h2: f64,
    /// Noise variance `sigma_v2` (W).
    pub sigma_v2: f64,
}

impl Default for ObservationModel {
    /// Sensing SNR `sigma_h2 * P_T / sigma_v2` of 10 dB.
    fn default() -> Self {
        ObservationModel::from_snr_db(10.0)
    }
}

impl ObservationModel {
    pub fn new(p_t: f64, sigma_h2: f64, sigma_v2: f64) -> Result<Self> {
        let m = ObservationModel {
            p_t,
            sigma_h2,
            sigma_v2,
        };
        m.validate()?;
        Ok(m)
    }

    /// Unit channel and noise variance, `P_T` set from the SNR.
    pub fn from_snr_db(snr_db: f64) -> Self {
        ObservationModel {
            p_t: 10f64.powf(snr_db / 10.0),
            sigma_h2: 1.0,
            sigma_v2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_t > 0.0 && self.sigma_h2 > 0.0 && self.sigma_v2 > 0.0) {
            return Err(Error::invalid(format!(
                "observation model needs positive p_t, sigma_h2, sigma_v2 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.sigma_h2 * self.p_t / self.sigma_v2).log10()
    }

    #[inline]
    pub fn variance(&self, busy: bool) -> f64 {
        if busy {
            self.sigma_h2 * self.p_t + self.sigma_v2
        } else {
            self.sigma_v2
        }
    }

    /// Log-density of one complex sample given the occupancy bit.
    #[inline]
    pub fn log_density(&self, y: Complex64, busy: bool) -> f64 {
        observation_log_density(y, busy, self.p_t, self.sigma_h2, self.sigma_v2)
    }

    /// Log-densities `(busy = false, busy = true)` of a received energy `|y|^2`.
    #[inline]
    pub fn log_density_pair(&self, energy: f64) -> (f64, f64) {
        let v0 = self.variance(false);
        let v1 = self.variance(true);
        (-(PI * v0).ln() - energy / v0, -(PI * v1).ln() - energy / v1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, busy: bool, rng: &mut R) -> Complex64 {
        complex_gaussian(self.variance(busy), rng)
    }
}

/// Draw from `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// `log f(y | b)` of a circularly-symmetric complex Gaussian with variance
/// `sigma_h2 * p_t * b + sigma_v2`.
pub fn observation_log_density(y: Complex64, b: bool, p_t: f64, sigma_h2: f64, sigma_v2: f64) -> f64 {
    let v = if b { sigma_h2 * p_t + sigma_v2 } else { sigma_v2 };
    -(PI * v).ln() - y.norm_sqr() / v
}

/// Samples collected on the sensed subcarriers of one slot.
///
/// Entries are keyed by zero-based subcarrier index and kept sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationVector {
    entries: Vec<(usize, Complex64)>,
}

impl ObservationVector {
    pub fn new(mut entries: Vec<(usize, Complex64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("observation vector has a repeated subcarrier"));
        }
        Ok(ObservationVector { entries })
    }

    pub fn empty() -> Self {
        ObservationVector::default()
    }

    pub fn entries(&self) -> &[(usize, Complex64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn get(&self, k: usize) -> Option<Complex64> {
        self.entries
            .binary_search_by_key(&k, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// Sum of per-subcarrier log-densities under `state`.
    pub fn log_likelihood(&self, state: &OccupancyState, model: &ObservationModel) -> f64 {
        self.entries
            .iter()
            .map(|&(k, y)| model.log_density(y, state.get(k)))
            .sum()
    }
}

/// Checks a sensing set against a width: in range and free of repeats.
pub fn validate_sensing_set(sensing_set: &[usize], width: usize) -> Result<()> {
    for (i, &k) in sensing_set.iter().enumerate() {
        if k >= width {
            return Err(Error::invalid(format!(
                "sensed subcarrier index {k} outside 0..{width}"
            )));
        }
        if sensing_set[..i].contains(&k) {
            return Err(Error::invalid(format!("subcarrier {k} sensed twice")));
        }
    }
    Ok(())
}

/// Noisy observation of the sensed subcarriers of `state`.
pub fn sense<R: Rng + ?Sized>(
    state: &OccupancyState,
    sensing_set: &[usize],
    model: &ObservationModel,
    rng: &mut R,
) -> Result<ObservationVector> {
    validate_sensing_set(sensing_set, state.width())?;
    let entries = sensing_set
        .iter()
        .map(|&k| (k, model.sample(state.get(k), rng)))
        .collect();
    ObservationVector::new(entries)
}

/// Propagation environment of the geometric channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelEnvParams {
    pub mu_los: f64,
    pub mu_nlos: f64,
    /// Extra NLoS attenuation in (0, 1].
    pub iota: f64,
    /// Linear pathloss at 1 m.
    pub psi0: f64,
    pub f1: f64,
    pub f2: f64,
    pub z1: f64,
    pub z2: f64,
    /// Noise power per subcarrier (W).
    pub noise_power: f64,
    /// Subcarrier bandwidth (Hz).
    pub bandwidth_w: f64,
}

impl Default for ChannelEnvParams {
    /// Urban parameters with 160 kHz subcarriers; `psi0` is free-space loss at
    /// 1 m around 2.4 GHz and the noise is thermal over 160 kHz with a 10 dB
    /// noise figure.
    fn default() -> Self {
        ChannelEnvParams {
            mu_los: 2.0,
            mu_nlos: 2.8,
            iota: 0.2,
            psi0: 1e-4,
            f1: 1.0,
            f2: 0.0512,
            z1: 9.12,
            z2: 0.16,
            noise_power: 6.4e-15,
            bandwidth_w: 160e3,
        }
    }
}

impl ChannelEnvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_los >= 2.0 && self.mu_nlos >= self.mu_los) {
            return Err(Error::invalid("pathloss exponents need mu_nlos >= mu_los >= 2"));
        }
        if !(self.iota > 0.0 && self.iota <= 1.0) {
            return Err(Error::invalid("iota must lie in (0, 1]"));
        }
        if !(self.bandwidth_w > 0.0 && self.noise_power > 0.0 && self.psi0 > 0.0) {
            return Err(Error::invalid("bandwidth, noise power and psi0 must be positive"));
        }
        Ok(())
    }
}

/// Large-scale state of one transmitter-receiver pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub is_los: bool,
    /// Large-scale gain (linear).
    pub psi: f64,
    /// Rician K-factor (linear); zero for NLoS.
    pub k_factor: f64,
    pub distance_m: f64,
    pub elevation_rad: f64,
}

impl LinkState {
    /// One small-scale power gain draw `|psi^(1/2) omega|^2`.
    pub fn sample_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.psi * small_scale_fading(self.k_factor, rng).norm_sqr()
    }
}

/// `1 / (1 + z1 exp(-z2 (chi - z1)))` for an elevation angle in (0, pi/2].
pub fn los_probability(elevation_rad: f64, z1: f64, z2: f64) -> Result<f64> {
    if !(elevation_rad > 0.0 && elevation_rad <= FRAC_PI_2 + 1e-12) {
        return Err(Error::invalid(format!(
            "elevation {elevation_rad} rad outside (0, pi/2]"
        )));
    }
    Ok(1.0 / (1.0 + z1 * (-z2 * (elevation_rad - z1)).exp()))
}

pub fn los_pathloss(distance_m: f64, env: &ChannelEnvParams) -> f64 {
    env.psi0 * distance_m.powf(-env.mu_los)
}

pub fn nlos_pathloss(distance_m: f64, env: &ChannelEnvParams) -> f64 {
    env.iota * env.psi0 * distance_m.powf(-env.mu_nlos)
}

/// `f1 exp(f2 chi)`.
pub fn k_factor(elevation_rad: f64, env: &ChannelEnvParams) -> f64 {
    env.f1 * (env.f2 * elevation_rad).exp()
}

/// Elevation of the line between two points at the given heights, clamped
/// into (0, pi/2].
pub fn elevation_angle(horizontal_m: f64, height_diff_m: f64) -> f64 {
    let chi = height_diff_m.abs().atan2(horizontal_m.abs());
    chi.clamp(1e-6, FRAC_PI_2)
}

pub fn sample_link<R: Rng + ?Sized>(
    distance_m: f64,
    elevation_rad: f64,
    env: &ChannelEnvParams,
    rng: &mut R,
) -> Result<LinkState> {
    if !(distance_m > 0.0) {
        return Err(Error::invalid(format!("link distance {distance_m} must be positive")));
    }
    let p_los = los_probability(elevation_rad, env.z1, env.z2)?;
    let is_los = rng.random::<f64>() < p_los;
    Ok(if is_los {
        LinkState {
            is_los,
            psi: los_pathloss(distance_m, env),
            k_factor: k_factor(elevation_rad, env),
            distance_m,
            elevation_rad,
        }
    } else {
        LinkState {
            is_los,
            psi: nlos_pathloss(distance_m, env),
            k_factor: 0.0,
            distance_m,
            elevation_rad,
        }
    })
}

/// Unit-power Rician coefficient; Rayleigh when `k_factor = 0`.
pub fn small_scale_fading<R: Rng + ?Sized>(k_factor: f64, rng: &mut R) -> Complex64 {
    let scatter = complex_gaussian(1.0 / (k_factor + 1.0), rng);
    if k_factor == 0.0 {
        return scatter;
    }
    let phase = rng.random::<f64>() * 2.0 * PI;
    Complex64::from_polar((k_factor / (k_factor + 1.0)).sqrt(), phase) + scatter
}

/// Outage probability of an interference-free link at rate `rate_bps`:
/// `1 - Q1(sqrt(2K), sqrt(2 (K+1) sigma_v2 / (psi P_T)) (2^(rate/W) - 1))`.
pub fn outage_probability(rate_bps: f64, psi: f64, k_factor: f64, p_t: f64, sigma_v2: f64, w_hz: f64) -> f64 {
    if rate_bps <= 0.0 {
        return 0.0;
    }
    let a = (2.0 * k_factor).sqrt();
    let spectral = (rate_bps / w_hz).exp2() - 1.0;
    if !spectral.is_finite() {
        return 1.0;
    }
    let b = (2.0 * (k_factor + 1.0) * sigma_v2 / (psi * p_t)).sqrt() * spectral;
    if !b.is_finite() {
        return 1.0;
    }
    (1.0 - marcum_q1(a, b)).clamp(0.0, 1.0)
}

/// Expected throughput `rate * (1 - P_out(rate))`.
pub fn expected_throughput(rate_bps: f64, psi: f64, k_factor: f64, p_t: f64, sigma_v2: f64, w_hz: f64) -> f64 {
    rate_bps * (1.0 - outage_probability(rate_bps, psi, k_factor, p_t, sigma_v2, w_hz))
}

const RATE_GRID_POINTS: usize = 256;
const GOLDEN_REL_TOL: f64 = 1e-6;

/// Rate maximising the expected throughput of an interference-free link.
///
/// A coarse grid over `(0, 4 W log2(1 + psi P_T / sigma_v2)]` brackets the
/// peak, then golden-section search refines it to a relative bracket width of
/// 1e-6.
pub fn adapt_rate(psi: f64, k_factor: f64, p_t: f64, sigma_v2: f64, w_hz: f64) -> f64 {
    let objective = |r: f64| expected_throughput(r, psi, k_factor, p_t, sigma_v2, w_hz);
    let upper = 4.0 * w_hz * (1.0 + psi * p_t / sigma_v2).log2();
    if !(upper > 0.0) || !upper.is_finite() {
        return 0.0;
    }
    let step = upper / RATE_GRID_POINTS as f64;
    let (best, _) = (1..=RATE_GRID_POINTS)
        .map(|i| (i, objective(i as f64 * step)))
        .fold((1, f64::MIN), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let mut lo = (best as f64 - 1.0) * step;
    let mut hi = ((best + 1) as f64 * step).min(upper);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while hi - lo > GOLDEN_REL_TOL * hi {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d);
        }
    }
    0.5 * (lo + hi)
}

/// SINR and Shannon capacity of one link on one subcarrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkQuality {
    pub sinr: f64,
    pub capacity_bps: f64,
}

/// Per-link SINR and capacity on a single subcarrier.
///
/// `gain[tx][rx]` is the power gain `|h|^2` from transmitter `tx` to receiver
/// `rx`; link `i` pairs transmitter `i` with receiver `i`. Idle transmitters
/// have `power = 0` and contribute no interference.
pub fn sinr_and_capacity(gain: &[Vec<f64>], power: &[f64], sigma_v2: f64, w_hz: f64) -> Result<Vec<LinkQuality>> {
    let n = power.len();
    if gain.len() != n || gain.iter().any(|row| row.len() != n) {
        return Err(Error::invalid(
            "gain matrix must be square with one row per transmitter",
        ));
    }
    Ok((0..n)
        .map(|i| {
            let interference: f64 = (0..n).filter(|&j| j != i).map(|j| gain[j][i] * power[j]).sum();
            let sinr = gain[i][i] * power[i] / (sigma_v2 + interference);
            LinkQuality {
                sinr,
                capacity_bps: w_hz * (1.0 + sinr).log2(),
            }
        })
        .collect())
}

/// SINR needed to sustain `rate_bps` over bandwidth `w_hz`.
pub fn sinr_threshold(rate_bps: f64, w_hz: f64) -> f64 {
    (rate_bps / w_hz).exp2() - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use approx::assert_abs_diff_eq;

    #[test]
    fn los_probability_reference_value() {
        // Direct evaluation: 1 / (1 + 9.12 exp(-0.16 (pi/2 - 9.12))).
        let p = los_probability(FRAC_PI_2, 9.12, 0.16).unwrap();
        assert_abs_diff_eq!(p, 0.031_727_111_427_089_74, epsilon = 1e-12);
    }

    #[test]
    fn los_probability_domain_and_shape() {
        assert!(los_probability(0.0, 9.12, 0.16).is_err());
        assert!(los_probability(2.0, 9.12, 0.16).is_err());
        // chi = z1 inside the domain.
        assert_abs_diff_eq!(los_probability(1.0, 1.0, 0.7).unwrap(), 0.5, epsilon = 1e-15);
        let mut prev = 0.0;
        for i in 1..=100 {
            let p = los_probability(i as f64 * FRAC_PI_2 / 100.0, 9.12, 0.16).unwrap();
            assert!(p >= prev && p > 0.0 && p < 1.0);
            prev = p;
        }
    }

    #[test]
    fn link_branches() {
        let env = ChannelEnvParams::default();
        assert_abs_diff_eq!(k_factor(1.0, &env), 0.0512f64.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(k_factor(1.0, &env), 1.0525, epsilon = 1e-4);
        let d: f64 = 80.0;
        let ratio = los_pathloss(d, &env) / nlos_pathloss(d, &env);
        assert_abs_diff_eq!(
            ratio,
            1.0 / (env.iota * d.powf(env.mu_los - env.mu_nlos)),
            epsilon = 1e-9
        );
        let mut rng = rng_from_seed(5);
        let (mut saw_los, mut saw_nlos) = (false, false);
        for _ in 0..2000 {
            let link = sample_link(d, 1.2, &env, &mut rng).unwrap();
            if link.is_los {
                saw_los = true;
                assert_abs_diff_eq!(link.k_factor, k_factor(1.2, &env), epsilon = 1e-12);
            } else {
                saw_nlos = true;
                assert_eq!(link.k_factor, 0.0);
            }
        }
        assert!(saw_los && saw_nlos);
        assert!(sample_link(0.0, 1.0, &env, &mut rng).is_err());
    }

    #[test]
    fn empty_sensing_set() {
        let mut rng = rng_from_seed(0);
        let y = sense(&OccupancyState::idle(4), &[], &ObservationModel::default(), &mut rng).unwrap();
        assert!(y.is_empty());
        assert!(sense(&OccupancyState::idle(4), &[4], &ObservationModel::default(), &mut rng).is_err());
        assert!(sense(
            &OccupancyState::idle(4),
            &[1, 1],
            &ObservationModel::default(),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn peak_density() {
        let m = ObservationModel::new(10.0, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(
            m.log_density(Complex64::new(0.0, 0.0), false),
            (1.0 / (PI * 0.5)).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn likelihood_ratio_grows_with_energy() {
        let m = ObservationModel::default();
        let mut prev = f64::MIN;
        for i in 0..50 {
            let y = Complex64::new(0.3 * i as f64, 0.1);
            let llr = m.log_density(y, true) - m.log_density(y, false);
            assert!(llr > prev);
            prev = llr;
        }
    }

    #[test]
    fn rayleigh_outage_closed_form() {
        let (psi, p_t, s2, w): (f64, f64, f64, f64) = (1e-6, 0.1, 1e-9, 160e3);
        for rate in [1e4, 1e5, 3e5] {
            let spectral: f64 = (rate / w).exp2() - 1.0;
            let expect = 1.0 - (-(s2 * spectral * spectral) / (psi * p_t)).exp();
            assert_abs_diff_eq!(outage_probability(rate, psi, 0.0, p_t, s2, w), expect, epsilon = 1e-12);
        }
        assert_eq!(outage_probability(0.0, psi, 1.0, p_t, s2, w), 0.0);
        assert!(outage_probability(1e-3, psi, 1.0, p_t, s2, w) < 1e-9);
    }

    #[test]
    fn capacity_without_interference() {
        let q = sinr_and_capacity(&[vec![2.0]], &[0.5], 1.0, 160e3).unwrap();
        assert_abs_diff_eq!(q[0].sinr, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q[0].capacity_bps, 160e3, epsilon = 1e-9);
    }

    #[test]
    fn three_transmitters() {
        let gain = vec![vec![1.0, 0.2, 0.1], vec![0.3, 2.0, 0.4], vec![0.05, 0.6, 0.5]];
        let power = [1.0, 2.0, 0.0];
        let q = sinr_and_capacity(&gain, &power, 0.1, 1.0).unwrap();
        // Hand arithmetic: rx0 hears tx1 at 0.3*2; rx1 hears tx0 at 0.2*1; tx2 idle.
        assert_abs_diff_eq!(q[0].sinr, 1.0 / (0.1 + 0.6), epsilon = 1e-15);
        assert_abs_diff_eq!(q[1].sinr, 4.0 / (0.1 + 0.2), epsilon = 1e-15);
        assert_abs_diff_eq!(q[2].sinr, 0.0, epsilon = 1e-15);
        let with_extra = sinr_and_capacity(&gain, &[1.0, 2.0, 1.0], 0.1, 1.0).unwrap();
        assert!(with_extra[0].sinr < q[0].sinr && with_extra[1].sinr < q[1].sinr);
    }
}
