//! Scenario configuration (TOML).
//!
//! Every table rejects unknown keys. Omitted keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelEnvParams, ObservationModel};
use crate::error::{Error, Result};
use crate::multiagent::{Cooperation, ProtocolConfig};
use crate::occupancy::{InitialDistribution, ThetaVector};
use crate::solver::{fragment_spectrum, SolverConfig};

fn d_horizon() -> usize {
    50_000
}
fn d_subcarriers() -> usize {
    18
}
fn d_fragment() -> usize {
    6
}
fn d_budget() -> usize {
    6
}
fn d_lus() -> usize {
    3
}
fn d_one() -> usize {
    1
}
fn d_theta() -> ThetaVector {
    ThetaVector::reference()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    /// Number of slots `tau`.
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    /// `K`.
    #[serde(default = "d_subcarriers")]
    pub subcarriers: usize,
    /// `K'`.
    #[serde(default = "d_fragment")]
    pub fragment_width: usize,
    /// `kappa`, subcarriers sensed per slot.
    #[serde(default = "d_budget")]
    pub sensing_budget: usize,
    /// `J_L`.
    #[serde(default = "d_lus")]
    pub licensed_users: usize,
    /// `J_C`.
    #[serde(default = "d_one")]
    pub cognitive_radios: usize,
    /// Independent occupancy bands of equal width; defaults to `J_L`.
    #[serde(default)]
    pub bands: Option<usize>,
    #[serde(default)]
    pub initial: InitialDistribution,
    #[serde(default = "d_theta")]
    pub theta_true: ThetaVector,
    #[serde(default)]
    pub access_policy: AccessPolicy,
    #[serde(default)]
    pub observation: ObservationModel,
    #[serde(default)]
    pub channel: ChannelEnvParams,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub multi_agent: MultiAgentConfig,
    #[serde(default)]
    pub roc: RocConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config takes every default")
    }
}

/// How the single agent senses and accesses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessPolicy {
    /// Solved sensing policy, belief-threshold access.
    #[default]
    Lessa,
    /// Uniformly random sensing sets, belief-threshold access.
    RandomSensing,
    /// Accesses exactly the idle subcarriers.
    Genie,
}

/// Where the solver's parameter vector comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaSource {
    #[default]
    Learned,
    Known,
}

fn d_max_iters() -> usize {
    200
}
fn d_tol() -> f64 {
    1e-4
}
fn d_theta0() -> ThetaVector {
    ThetaVector::constant(0.5).expect("0.5 is a probability")
}
fn d_relearn_interval() -> usize {
    10_000
}
fn d_relearn_iters() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub mode: ThetaSource,
    /// Learn while the solved policy drives sensing, re-estimating every
    /// `relearn_interval` slots.
    #[serde(default)]
    pub concurrent: bool,
    #[serde(default = "d_max_iters")]
    pub max_iters: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_theta0")]
    pub theta0: ThetaVector,
    /// Random-sensing slots before the single estimate in sequential mode;
    /// defaults to half the horizon.
    #[serde(default)]
    pub learning_slots: Option<usize>,
    #[serde(default = "d_relearn_interval")]
    pub relearn_interval: usize,
    /// EM iterations per intermediate re-estimate in concurrent mode.
    #[serde(default = "d_relearn_iters")]
    pub relearn_iters: usize,
    /// Observation CSV consumed by `estimate`; simulated when absent.
    #[serde(default)]
    pub observations: Option<PathBuf>,
    /// Fraction of slots used for fitting when computing BIC.
    #[serde(default)]
    pub train_fraction: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn d_lu_tx() -> Vec<[f64; 2]> {
    vec![[-225.0, 200.0], [225.0, 200.0], [0.0, -300.0]]
}
fn d_lu_height() -> f64 {
    40.0
}
fn d_lu_radius() -> f64 {
    200.0
}
fn d_cr_height() -> f64 {
    20.0
}
fn d_cr_radius() -> f64 {
    100.0
}
fn d_speed() -> f64 {
    1.4
}
fn d_period() -> usize {
    1000
}

/// Node placement in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "d_lu_tx")]
    pub lu_tx: Vec<[f64; 2]>,
    #[serde(default = "d_lu_height")]
    pub lu_tx_height_m: f64,
    /// LU receivers sit uniformly in a disc of this radius around their
    /// transmitter.
    #[serde(default = "d_lu_radius")]
    pub lu_rx_radius_m: f64,
    #[serde(default)]
    pub lu_rx_height_m: f64,
    #[serde(default)]
    pub cr_tx: [f64; 2],
    #[serde(default = "d_cr_height")]
    pub cr_tx_height_m: f64,
    /// The CR receiver wanders within this radius of the CR transmitter.
    #[serde(default = "d_cr_radius")]
    pub cr_rx_radius_m: f64,
    #[serde(default)]
    pub cr_rx_height_m: f64,
    #[serde(default = "d_speed")]
    pub cr_speed_mps: f64,
    /// Slots between redraws of the large-scale link states.
    #[serde(default = "d_period")]
    pub large_scale_period: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn d_lu_rate() -> f64 {
    0.9e6
}
fn d_power() -> f64 {
    1.0
}
fn d_slot_ms() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    /// Fixed LU rate per subcarrier (bps).
    #[serde(default = "d_lu_rate")]
    pub lu_rate_bps: f64,
    #[serde(default = "d_power")]
    pub lu_power_w: f64,
    #[serde(default = "d_power")]
    pub cr_power_w: f64,
    /// Slot duration; only used for mobility and time labels.
    #[serde(default = "d_slot_ms")]
    pub slot_ms: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn d_agents() -> usize {
    12
}
fn d_threshold() -> f64 {
    22.0
}
fn d_stability() -> usize {
    3
}
fn d_round_cap() -> usize {
    200
}
fn d_rssi_range() -> [f64; 2] {
    [22.0, 60.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiAgentConfig {
    #[serde(default = "d_agents")]
    pub agents: usize,
    #[serde(default = "d_one")]
    pub per_agent_budget: usize,
    #[serde(default)]
    pub cooperation: Cooperation,
    #[serde(default = "d_threshold")]
    pub threshold_db: f64,
    #[serde(default)]
    pub quorum: Option<usize>,
    #[serde(default = "d_stability")]
    pub stability_rounds: usize,
    #[serde(default = "d_round_cap")]
    pub round_cap: usize,
    #[serde(default)]
    pub drop_probability: f64,
    /// Pairwise RSSI matrix (dB); random symmetric in `rssi_range_db` when
    /// absent.
    #[serde(default)]
    pub rssi_db: Option<Vec<Vec<f64>>>,
    #[serde(default = "d_rssi_range")]
    pub rssi_range_db: [f64; 2],
    /// Episode length; defaults to the scenario horizon.
    #[serde(default)]
    pub horizon: Option<usize>,
}

impl Default for MultiAgentConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl MultiAgentConfig {
    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            threshold_db: self.threshold_db,
            quorum: self.quorum,
            stability_rounds: self.stability_rounds,
            round_cap: self.round_cap,
            drop_probability: self.drop_probability,
        }
    }
}

fn d_lambdas() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
}
fn d_np_samples() -> usize {
    300
}
fn d_np_pfa() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RocConfig {
    #[serde(default = "d_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "d_np_samples")]
    pub np_samples: usize,
    #[serde(default = "d_np_pfa")]
    pub np_target_pfa: f64,
}

impl Default for RocConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn bands(&self) -> usize {
        self.bands.unwrap_or(self.licensed_users)
    }

    pub fn learning_slots(&self) -> usize {
        self.estimator
            .learning_slots
            .unwrap_or(self.horizon / 2)
            .min(self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("subcarriers", self.subcarriers)?;
        positive("fragment_width", self.fragment_width)?;
        positive("licensed_users", self.licensed_users)?;
        positive("cognitive_radios", self.cognitive_radios)?;
        if self.subcarriers > 64 {
            return Err(Error::config("subcarriers", "at most 64 are supported"));
        }
        if self.sensing_budget > self.subcarriers {
            return Err(Error::config(
                "sensing_budget",
                format!("{} exceeds {} subcarriers", self.sensing_budget, self.subcarriers),
            ));
        }
        if self.fragment_width > crate::belief::MAX_BELIEF_WIDTH {
            return Err(Error::config(
                "fragment_width",
                format!("at most {}", crate::belief::MAX_BELIEF_WIDTH),
            ));
        }
        fragment_spectrum(self.subcarriers, self.fragment_width, self.sensing_budget)
            .map_err(|e| Error::config("fragment_width", e.to_string()))?;
        let bands = self.bands();
        if bands == 0 || !self.subcarriers.is_multiple_of(bands) {
            return Err(Error::config(
                "bands",
                format!("{bands} bands do not split {} subcarriers evenly", self.subcarriers),
            ));
        }
        self.theta_true
            .validate()
            .map_err(|e| Error::config("theta_true", e.to_string()))?;
        self.observation
            .validate()
            .map_err(|e| Error::config("observation", e.to_string()))?;
        self.channel
            .validate()
            .map_err(|e| Error::config("channel", e.to_string()))?;
        self.solver.validate(self.fragment_width)?;
        let est = &self.estimator;
        est.theta0
            .validate()
            .map_err(|e| Error::config("estimator.theta0", e.to_string()))?;
        if !(est.tol > 0.0) {
            return Err(Error::config("estimator.tol", "must be positive"));
        }
        if est.relearn_interval == 0 {
            return Err(Error::config("estimator.relearn_interval", "must be positive"));
        }
        if let Some(f) = est.train_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config("estimator.train_fraction", "must lie in (0, 1)"));
            }
        }
        let g = &self.geometry;
        if g.lu_tx.len() != self.licensed_users {
            return Err(Error::config(
                "geometry.lu_tx",
                format!(
                    "lists {} transmitters for {} licensed users",
                    g.lu_tx.len(),
                    self.licensed_users
                ),
            ));
        }
        if !(g.lu_rx_radius_m >= 0.0 && g.cr_rx_radius_m >= 0.0 && g.cr_speed_mps >= 0.0) {
            return Err(Error::config("geometry", "radii and speed must be non-negative"));
        }
        if g.large_scale_period == 0 {
            return Err(Error::config("geometry.large_scale_period", "must be positive"));
        }
        let r = &self.radio;
        if !(r.lu_rate_bps > 0.0 && r.lu_power_w > 0.0 && r.cr_power_w > 0.0 && r.slot_ms > 0.0) {
            return Err(Error::config(
                "radio",
                "rate, powers and slot duration must be positive",
            ));
        }
        let ma = &self.multi_agent;
        positive("multi_agent.agents", ma.agents)?;
        positive("multi_agent.per_agent_budget", ma.per_agent_budget)?;
        ma.protocol().validate()?;
        if let Some(m) = &ma.rssi_db {
            if m.len() != ma.agents || m.iter().any(|row| row.len() != ma.agents) {
                return Err(Error::config(
                    "multi_agent.rssi_db",
                    format!("must be a {0}x{0} matrix", ma.agents),
                ));
            }
        }
        if !(ma.rssi_range_db[0] < ma.rssi_range_db[1]) {
            return Err(Error::config("multi_agent.rssi_range_db", "needs lo < hi"));
        }
        let roc = &self.roc;
        if roc.lambdas.is_empty() {
            return Err(Error::config("roc.lambdas", "sweep must not be empty"));
        }
        if roc.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::config("roc.lambdas", "penalties must be finite and >= 0"));
        }
        if roc.np_samples == 0 {
            return Err(Error::config("roc.np_samples", "must be positive"));
        }
        if !(roc.np_target_pfa > 0.0 && roc.np_target_pfa < 1.0) {
            return Err(Error::config("roc.np_target_pfa", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        assert_eq!((c.subcarriers, c.fragment_width, c.sensing_budget), (18, 6, 6));
        assert_eq!(c.solver.gamma, 0.9);
        assert_eq!(c.solver.lambda, 1.0);
        assert_eq!(c.theta_true, ThetaVector::reference());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ScenarioConfig::from_toml_str("horizn = 5").unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
        let err = ScenarioConfig::from_toml_str("[solver]\ngama = 0.5").unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn field_level_validation() {
        let err = ScenarioConfig::from_toml_str("fragment_width = 5").unwrap_err();
        assert!(err.to_string().contains("fragment_width"), "{err}");
        let err = ScenarioConfig::from_toml_str("sensing_budget = 40").unwrap_err();
        assert!(err.to_string().contains("sensing_budget"), "{err}");
        let err = ScenarioConfig::from_toml_str("licensed_users = 2\nbands = 3").unwrap_err();
        assert!(err.to_string().contains("geometry.lu_tx"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let c = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }
}
