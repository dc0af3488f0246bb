use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::occusense::belief::{self, Belief};
use ::occusense::channel::{self, ObservationModel, ObservationVector};
use ::occusense::multiagent::{self, ProtocolConfig, Topology};
use ::occusense::occupancy::{ThetaVector, TransitionKernel};
use ::occusense::scenario::{self, ScenarioConfig};
use ::occusense::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidInput(_) | Error::WidthMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn theta_from(values: Vec<f64>) -> PyResult<ThetaVector> {
    let arr: [f64; 6] = values
        .try_into()
        .map_err(|_| PyValueError::new_err("theta needs six values: p00, p01, p10, p11, q0, q1"))?;
    ThetaVector::from_array(arr).map_err(py_err)
}

/// Reference occupancy parameters `[p00, p01, p10, p11, q0, q1]`.
#[pyfunction]
fn reference_theta() -> Vec<f64> {
    ThetaVector::reference().to_array().to_vec()
}

/// Row-major `from x to` transition matrix of a `width`-subcarrier fragment.
#[pyfunction]
fn transition_matrix(width: usize, theta: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let kernel = TransitionKernel::new(width, theta_from(theta)?).map_err(py_err)?;
    let n = kernel.num_states();
    Ok(kernel.dense_matrix().chunks(n).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
#[pyo3(signature = (prior, sensed, y, p_t=10.0, sigma_h2=1.0, sigma_v2=1.0))]
fn posterior_update(
    prior: Vec<f64>,
    sensed: Vec<usize>,
    y: Vec<Complex64>,
    p_t: f64,
    sigma_h2: f64,
    sigma_v2: f64,
) -> PyResult<Vec<f64>> {
    if sensed.len() != y.len() {
        return Err(PyValueError::new_err("sensed and y differ in length"));
    }
    let model = ObservationModel::new(p_t, sigma_h2, sigma_v2).map_err(py_err)?;
    let prior = Belief::from_weights(prior).map_err(py_err)?;
    let obs = ObservationVector::new(sensed.iter().copied().zip(y).collect()).map_err(py_err)?;
    let post = belief::posterior_update(&prior, &sensed, &obs, &model).map_err(py_err)?;
    Ok(post.weights().to_vec())
}

/// One-step prediction of a belief through the occupancy chain.
#[pyfunction]
fn propagate(belief: Vec<f64>, theta: Vec<f64>) -> PyResult<Vec<f64>> {
    let b = Belief::from_weights(belief).map_err(py_err)?;
    let kernel = TransitionKernel::new(b.width(), theta_from(theta)?).map_err(py_err)?;
    Ok(belief::propagate_prior_exact(&b, &kernel)
        .map_err(py_err)?
        .weights()
        .to_vec())
}

#[pyfunction]
fn marginal_occupancy(belief: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(belief::marginal_occupancy(
        &Belief::from_weights(belief).map_err(py_err)?,
    ))
}

/// Per-subcarrier access flags maximizing expected reward.
#[pyfunction]
#[pyo3(name = "access_decision")]
fn access(marginals: Vec<f64>, penalty: f64) -> Vec<bool> {
    belief::access_decision(&marginals, penalty).to_vec()
}

#[pyfunction]
fn marcum_q1(a: f64, b: f64) -> PyResult<f64> {
    if a < 0.0 || b < 0.0 {
        return Err(PyValueError::new_err("marcum_q1 needs a, b >= 0"));
    }
    Ok(channel::marcum_q1(a, b))
}

/// Agreed access rank for a square RSSI matrix in dB.
#[pyfunction]
#[pyo3(signature = (rssi_db, seed=0, threshold_db=22.0))]
fn consensus_rank(rssi_db: Vec<Vec<f64>>, seed: u64, threshold_db: f64) -> PyResult<(Vec<u32>, usize, bool)> {
    let topo = Topology::new(rssi_db).map_err(py_err)?;
    let config = ProtocolConfig {
        threshold_db,
        ..Default::default()
    };
    let out = multiagent::run_consensus(&topo, &config, seed).map_err(py_err)?;
    let rank = out
        .agreed()
        .map(|l| l.order().iter().map(|a| a.0).collect())
        .unwrap_or_default();
    Ok((rank, out.rounds, out.converged))
}

/// Runs a single-agent scenario from TOML text and returns its scalar
/// metrics and traces.
#[pyfunction]
#[pyo3(signature = (config_toml="", seed=None))]
fn run_scenario<'py>(py: Python<'py>, config_toml: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut config = ScenarioConfig::from_toml_str(config_toml).map_err(py_err)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let r = py.detach(|| scenario::run_scenario(&config)).map_err(py_err)?.report;
    let d = PyDict::new(py);
    d.set_item("slots", r.slots)?;
    d.set_item("cr_throughput_bps", r.cr_throughput_bps)?;
    d.set_item("lu_throughput_bps", r.lu_throughput_bps)?;
    d.set_item("mean_utility", r.mean_utility)?;
    d.set_item("mean_normalized_loss", r.mean_normalized_loss)?;
    d.set_item("post_learning_normalized_loss", r.post_learning_normalized_loss)?;
    d.set_item("p_fa", r.p_fa)?;
    d.set_item("p_md", r.p_md)?;
    d.set_item("access_count", r.access_count)?;
    d.set_item("interference_events", r.interference_events)?;
    d.set_item("estimator_mse", r.estimator_mse)?;
    d.set_item("theta_hat", r.theta_hat.map(|t| t.to_array().to_vec()))?;
    d.set_item("utility_trace", r.utility_trace)?;
    d.set_item("loss_trace", r.loss_trace)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "occusense")]
fn occusense_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(reference_theta, m)?)?;
    m.add_function(wrap_pyfunction!(transition_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_update, m)?)?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_occupancy, m)?)?;
    m.add_function(wrap_pyfunction!(access, m)?)?;
    m.add_function(wrap_pyfunction!(marcum_q1, m)?)?;
    m.add_function(wrap_pyfunction!(consensus_rank, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
