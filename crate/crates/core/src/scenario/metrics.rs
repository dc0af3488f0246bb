//! Throughput, loss and detection metrics, and the CSV report.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use crate::channel::sinr_threshold;
use crate::error::{Error, Result};
use crate::occupancy::ThetaVector;

/// Fixed-width scientific notation with 9 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn round9(x: f64) -> f64 {
    fmt_num(x).parse().expect("formatted float parses")
}

/// One link use on one subcarrier in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRecord {
    pub slot: usize,
    pub subcarrier: usize,
    pub rate_bps: f64,
    /// Whether the transmitter used the subcarrier (`phi_k` for the CR,
    /// `B_k` for an LU).
    pub active: bool,
    pub sinr: f64,
}

/// Success test of a transmission at `rate_bps`.
#[inline]
pub fn link_success(rate_bps: f64, sinr: f64, w_hz: f64) -> bool {
    sinr >= sinr_threshold(rate_bps, w_hz)
}

/// Average CR throughput over `slots`: the successful rates summed and
/// divided by the slot count. Zero for `slots = 0`.
pub fn cr_throughput(records: &[LinkRecord], slots: usize, w_hz: f64) -> f64 {
    if slots == 0 {
        return 0.0;
    }
    let total: f64 = records
        .iter()
        .filter(|r| r.active && link_success(r.rate_bps, r.sinr, w_hz))
        .map(|r| r.rate_bps)
        .sum();
    total / slots as f64
}

/// LU throughput per transmission at the fixed rate. Returns `(0, false)`
/// when no LU transmitted.
pub fn lu_throughput(records: &[LinkRecord], lu_rate_bps: f64, w_hz: f64) -> (f64, bool) {
    let active: Vec<&LinkRecord> = records.iter().filter(|r| r.active).collect();
    if active.is_empty() {
        return (0.0, false);
    }
    let ok = active
        .iter()
        .filter(|r| link_success(lu_rate_bps, r.sinr, w_hz))
        .count();
    (lu_rate_bps * ok as f64 / active.len() as f64, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSummary {
    /// `None` for slots with no idle subcarrier.
    pub trace: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub excluded: usize,
}

/// `1 - realized / oracle` per slot; slots whose oracle reward is zero are
/// left out of the mean.
pub fn normalized_loss(realized: &[f64], oracle: &[f64]) -> LossSummary {
    assert_eq!(realized.len(), oracle.len(), "reward traces differ in length");
    let trace: Vec<Option<f64>> = realized
        .iter()
        .zip(oracle)
        .map(|(&r, &o)| (o > 0.0).then(|| 1.0 - r / o))
        .collect();
    let kept: Vec<f64> = trace.iter().flatten().copied().collect();
    let mean = (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64);
    LossSummary {
        excluded: trace.len() - kept.len(),
        trace,
        mean,
    }
}

/// Confusion counts of access decisions against the truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub idle_total: u64,
    /// Idle but not accessed.
    pub idle_skipped: u64,
    pub busy_total: u64,
    /// Busy but accessed.
    pub busy_accessed: u64,
}

impl DetectionCounts {
    pub fn record(&mut self, accessed: bool, busy: bool) {
        if busy {
            self.busy_total += 1;
            self.busy_accessed += accessed as u64;
        } else {
            self.idle_total += 1;
            self.idle_skipped += (!accessed) as u64;
        }
    }

    pub fn record_bits(&mut self, width: usize, access: u64, busy: u64) {
        for k in 0..width {
            self.record((access >> k) & 1 == 1, (busy >> k) & 1 == 1);
        }
    }

    /// `P(phi = 0 | B = 0)`, undefined without idle cells.
    pub fn p_fa(&self) -> Option<f64> {
        (self.idle_total > 0).then(|| self.idle_skipped as f64 / self.idle_total as f64)
    }

    /// `P(phi = 1 | B = 1)`, undefined without busy cells.
    pub fn p_md(&self) -> Option<f64> {
        (self.busy_total > 0).then(|| self.busy_accessed as f64 / self.busy_total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocPoint {
    pub source: String,
    pub lambda: Option<f64>,
    pub p_fa: Option<f64>,
    pub p_md: Option<f64>,
}

impl RocPoint {
    pub fn from_counts(source: &str, lambda: Option<f64>, counts: &DetectionCounts) -> Self {
        RocPoint {
            source: source.to_string(),
            lambda,
            p_fa: counts.p_fa(),
            p_md: counts.p_md(),
        }
    }
}

/// Piecewise-linear `P_MD` at `p_fa` along a curve sorted by `P_FA`;
/// clamped to the end points outside the covered range.
pub fn interpolate_p_md(curve: &[(f64, f64)], p_fa: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = curve.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let first = *pts.first()?;
    let last = *pts.last()?;
    if p_fa <= first.0 {
        return Some(first.1);
    }
    if p_fa >= last.0 {
        return Some(last.1);
    }
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if p_fa >= a.0 && p_fa <= b.0 {
            if b.0 == a.0 {
                return Some(a.1.min(b.1));
            }
            let s = (p_fa - a.0) / (b.0 - a.0);
            return Some(a.1 + s * (b.1 - a.1));
        }
    }
    None
}

/// One EM iterate recorded during a run; `slot` is the number of logged
/// slots the estimate used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorTraceRow {
    pub slot: usize,
    pub iteration: usize,
    pub log_likelihood: f64,
    pub theta: ThetaVector,
    pub mse: Option<f64>,
}

/// One solver sweep; `solve` counts policy solves within a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTraceRow {
    pub solve: usize,
    pub iteration: usize,
    pub max_change: f64,
    pub mean_value: f64,
}

/// Scalar metrics and traces of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub slots: usize,
    pub cr_throughput_bps: f64,
    pub lu_throughput_bps: f64,
    pub lu_transmissions: u64,
    pub mean_utility: f64,
    pub mean_normalized_loss: Option<f64>,
    /// Mean loss over slots after the first solved policy was in use.
    pub post_learning_normalized_loss: Option<f64>,
    pub excluded_slots: u64,
    pub p_fa: Option<f64>,
    pub p_md: Option<f64>,
    pub access_count: u64,
    pub interference_events: u64,
    pub estimator_mse: Option<f64>,
    pub estimator_converged: Option<bool>,
    pub solver_converged: Option<bool>,
    pub theta_hat: Option<ThetaVector>,
    pub utility_trace: Vec<f64>,
    pub loss_trace: Vec<Option<f64>>,
    pub roc: Vec<RocPoint>,
    pub estimator_trace: Vec<EstimatorTraceRow>,
    pub solver_trace: Vec<SolverTraceRow>,
}

pub const REPORT_FILES: [&str; 6] = [
    "metrics.csv",
    "utility_trace.csv",
    "loss_trace.csv",
    "roc.csv",
    "estimator_trace.csv",
    "solver_trace.csv",
];

impl MetricsReport {
    fn scalar_rows(&self) -> Vec<(String, String)> {
        let b = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut rows = vec![
            ("slots".to_string(), self.slots.to_string()),
            ("cr_throughput_bps".into(), fmt_num(self.cr_throughput_bps)),
            ("lu_throughput_bps".into(), fmt_num(self.lu_throughput_bps)),
            ("lu_transmissions".into(), self.lu_transmissions.to_string()),
            ("mean_utility".into(), fmt_num(self.mean_utility)),
            ("mean_normalized_loss".into(), fmt_opt(self.mean_normalized_loss)),
            (
                "post_learning_normalized_loss".into(),
                fmt_opt(self.post_learning_normalized_loss),
            ),
            ("excluded_slots".into(), self.excluded_slots.to_string()),
            ("p_fa".into(), fmt_opt(self.p_fa)),
            ("p_md".into(), fmt_opt(self.p_md)),
            ("access_count".into(), self.access_count.to_string()),
            ("interference_events".into(), self.interference_events.to_string()),
            ("estimator_mse".into(), fmt_opt(self.estimator_mse)),
            ("estimator_converged".into(), b(self.estimator_converged)),
            ("solver_converged".into(), b(self.solver_converged)),
        ];
        let theta = self.theta_hat.map(|t| t.to_array());
        for (i, name) in ThetaVector::NAMES.iter().enumerate() {
            rows.push((format!("theta_hat_{name}"), fmt_opt(theta.map(|a| a[i]))));
        }
        rows
    }

    /// Writes the six report files into `dir`, creating it if needed.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<(csv::Writer<File>, std::path::PathBuf)> {
            let path = dir.join(name);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            Ok((csv::Writer::from_writer(file), path))
        };
        let finish =
            |mut w: csv::Writer<File>, path: &Path| -> Result<()> { w.flush().map_err(|e| Error::io(path, e)) };

        let (mut w, path) = open("metrics.csv")?;
        let wrap = |r: csv::Result<()>, p: &Path| r.map_err(|e| Error::csv(p, e));
        wrap(w.write_record(["metric", "value"]), &path)?;
        for (k, v) in self.scalar_rows() {
            wrap(w.write_record([k, v]), &path)?;
        }
        finish(w, &path)?;

        let (mut w, path) = open("utility_trace.csv")?;
        wrap(w.write_record(["slot", "utility"]), &path)?;
        for (t, u) in self.utility_trace.iter().enumerate() {
            wrap(w.write_record([t.to_string(), fmt_num(*u)]), &path)?;
        }
        finish(w, &path)?;

        let (mut w, path) = open("loss_trace.csv")?;
        wrap(w.write_record(["slot", "normalized_loss"]), &path)?;
        for (t, l) in self.loss_trace.iter().enumerate() {
            wrap(w.write_record([t.to_string(), fmt_opt(*l)]), &path)?;
        }
        finish(w, &path)?;

        let (mut w, path) = open("roc.csv")?;
        wrap(w.write_record(["source", "lambda", "p_fa", "p_md"]), &path)?;
        for p in &self.roc {
            wrap(
                w.write_record([p.source.clone(), fmt_opt(p.lambda), fmt_opt(p.p_fa), fmt_opt(p.p_md)]),
                &path,
            )?;
        }
        finish(w, &path)?;

        let (mut w, path) = open("estimator_trace.csv")?;
        let mut header = vec!["slot".to_string(), "iteration".into(), "log_likelihood".into()];
        header.extend(["q0", "q1", "p00", "p01", "p10", "p11", "mse_if_reference"].map(String::from));
        wrap(w.write_record(&header), &path)?;
        for r in &self.estimator_trace {
            let t = &r.theta;
            wrap(
                w.write_record([
                    r.slot.to_string(),
                    r.iteration.to_string(),
                    fmt_num(r.log_likelihood),
                    fmt_num(t.q0),
                    fmt_num(t.q1),
                    fmt_num(t.p00),
                    fmt_num(t.p01),
                    fmt_num(t.p10),
                    fmt_num(t.p11),
                    fmt_opt(r.mse),
                ]),
                &path,
            )?;
        }
        finish(w, &path)?;

        let (mut w, path) = open("solver_trace.csv")?;
        wrap(
            w.write_record(["solve", "iteration", "max_change", "mean_value"]),
            &path,
        )?;
        for r in &self.solver_trace {
            wrap(
                w.write_record([
                    r.solve.to_string(),
                    r.iteration.to_string(),
                    fmt_num(r.max_change),
                    fmt_num(r.mean_value),
                ]),
                &path,
            )?;
        }
        finish(w, &path)
    }

    /// Parses a report written by [`MetricsReport::emit`].
    pub fn read(dir: &Path) -> Result<Self> {
        let rows = |name: &str| -> Result<Vec<csv::StringRecord>> {
            let path = dir.join(name);
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            csv::Reader::from_reader(file)
                .records()
                .collect::<csv::Result<Vec<_>>>()
                .map_err(|e| Error::csv(&path, e))
        };
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("{what}: bad number {s:?}")))
        };
        let opt = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, what).map(Some)
            }
        };
        let int = |s: &str, what: &str| -> Result<u64> {
            s.parse::<u64>()
                .map_err(|_| Error::invalid(format!("{what}: bad integer {s:?}")))
        };
        let flag = |s: &str, what: &str| -> Result<Option<bool>> {
            match s {
                "" => Ok(None),
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                _ => Err(Error::invalid(format!("{what}: bad flag {s:?}"))),
            }
        };

        let scalars: BTreeMap<String, String> = rows("metrics.csv")?
            .iter()
            .map(|r| (r[0].to_string(), r[1].to_string()))
            .collect();
        let get = |k: &str| -> Result<&str> {
            scalars
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::invalid(format!("metrics.csv lacks {k}")))
        };
        let mut theta = [0.0; 6];
        let mut theta_present = true;
        for (i, name) in ThetaVector::NAMES.iter().enumerate() {
            match opt(get(&format!("theta_hat_{name}"))?, name)? {
                Some(v) => theta[i] = v,
                None => theta_present = false,
            }
        }
        let mut report = MetricsReport {
            slots: int(get("slots")?, "slots")? as usize,
            cr_throughput_bps: num(get("cr_throughput_bps")?, "cr_throughput_bps")?,
            lu_throughput_bps: num(get("lu_throughput_bps")?, "lu_throughput_bps")?,
            lu_transmissions: int(get("lu_transmissions")?, "lu_transmissions")?,
            mean_utility: num(get("mean_utility")?, "mean_utility")?,
            mean_normalized_loss: opt(get("mean_normalized_loss")?, "mean_normalized_loss")?,
            post_learning_normalized_loss: opt(get("post_learning_normalized_loss")?, "post_learning_normalized_loss")?,
            excluded_slots: int(get("excluded_slots")?, "excluded_slots")?,
            p_fa: opt(get("p_fa")?, "p_fa")?,
            p_md: opt(get("p_md")?, "p_md")?,
            access_count: int(get("access_count")?, "access_count")?,
            interference_events: int(get("interference_events")?, "interference_events")?,
            estimator_mse: opt(get("estimator_mse")?, "estimator_mse")?,
            estimator_converged: flag(get("estimator_converged")?, "estimator_converged")?,
            solver_converged: flag(get("solver_converged")?, "solver_converged")?,
            theta_hat: if theta_present {
                Some(ThetaVector::from_array(theta)?)
            } else {
                None
            },
            ..Default::default()
        };
        for r in rows("utility_trace.csv")? {
            report.utility_trace.push(num(&r[1], "utility")?);
        }
        for r in rows("loss_trace.csv")? {
            report.loss_trace.push(opt(&r[1], "normalized_loss")?);
        }
        for r in rows("roc.csv")? {
            report.roc.push(RocPoint {
                source: r[0].to_string(),
                lambda: opt(&r[1], "lambda")?,
                p_fa: opt(&r[2], "p_fa")?,
                p_md: opt(&r[3], "p_md")?,
            });
        }
        for r in rows("estimator_trace.csv")? {
            let v = |i: usize| num(&r[i], "estimator trace");
            report.estimator_trace.push(EstimatorTraceRow {
                slot: int(&r[0], "slot")? as usize,
                iteration: int(&r[1], "iteration")? as usize,
                log_likelihood: v(2)?,
                theta: ThetaVector::from_array([v(5)?, v(6)?, v(7)?, v(8)?, v(3)?, v(4)?])?,
                mse: opt(&r[9], "mse")?,
            });
        }
        for r in rows("solver_trace.csv")? {
            report.solver_trace.push(SolverTraceRow {
                solve: int(&r[0], "solve")? as usize,
                iteration: int(&r[1], "iteration")? as usize,
                max_change: num(&r[2], "max_change")?,
                mean_value: num(&r[3], "mean_value")?,
            });
        }
        Ok(report)
    }

    /// The report as it reads back from CSV: every float rounded to 9
    /// significant digits.
    pub fn rounded(&self) -> Self {
        let o = |x: Option<f64>| x.map(round9);
        let theta = |t: ThetaVector| {
            let a = t.to_array().map(round9);
            ThetaVector::from_array(a).expect("rounding keeps probabilities in range")
        };
        MetricsReport {
            slots: self.slots,
            cr_throughput_bps: round9(self.cr_throughput_bps),
            lu_throughput_bps: round9(self.lu_throughput_bps),
            lu_transmissions: self.lu_transmissions,
            mean_utility: round9(self.mean_utility),
            mean_normalized_loss: o(self.mean_normalized_loss),
            post_learning_normalized_loss: o(self.post_learning_normalized_loss),
            excluded_slots: self.excluded_slots,
            p_fa: o(self.p_fa),
            p_md: o(self.p_md),
            access_count: self.access_count,
            interference_events: self.interference_events,
            estimator_mse: o(self.estimator_mse),
            estimator_converged: self.estimator_converged,
            solver_converged: self.solver_converged,
            theta_hat: self.theta_hat.map(theta),
            utility_trace: self.utility_trace.iter().map(|&u| round9(u)).collect(),
            loss_trace: self.loss_trace.iter().map(|&l| o(l)).collect(),
            roc: self
                .roc
                .iter()
                .map(|p| RocPoint {
                    source: p.source.clone(),
                    lambda: o(p.lambda),
                    p_fa: o(p.p_fa),
                    p_md: o(p.p_md),
                })
                .collect(),
            estimator_trace: self
                .estimator_trace
                .iter()
                .map(|r| EstimatorTraceRow {
                    slot: r.slot,
                    iteration: r.iteration,
                    log_likelihood: round9(r.log_likelihood),
                    theta: theta(r.theta),
                    mse: o(r.mse),
                })
                .collect(),
            solver_trace: self
                .solver_trace
                .iter()
                .map(|r| SolverTraceRow {
                    solve: r.solve,
                    iteration: r.iteration,
                    max_change: round9(r.max_change),
                    mean_value: round9(r.mean_value),
                })
                .collect(),
        }
    }
}
