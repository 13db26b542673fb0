//! Experiment pipelines: run the requested measurement, write
//! `summary.json` plus long-format `results.csv` (and per-kind CSVs)
//! into the output directory, and report whether every check passed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use iqnet::cftp::{cftp_sample, CftpRecord};
use iqnet::domain::FrozenStripSchedule;
use iqnet::dynamics::{simulate, QueueField, Trajectory};
use iqnet::oracle::{solve_oracle, OracleRequests};
use iqnet::stats::{
    ergodic_average, estimate_stationary, fit_tail, max_in_boxes, spatial_batch_se,
    spatial_covariance, tail_fit_x_min, SampleSource, StationaryEstimate, ValueWithError,
};
use iqnet::verify::{
    check_mean_formula, check_mgf_bound, compute_constants, frozen_strip_experiment,
    tail_sandwich_check, verify_battery, CheckReport,
};

use crate::config::{ExperimentConfig, ExperimentKind};

/// One row of the long-format results table.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub key: String,
    pub value: f64,
    pub stderr: f64,
}

impl MetricRow {
    fn new(metric: &str, key: impl ToString, value: f64, stderr: f64) -> Self {
        Self { metric: metric.to_string(), key: key.to_string(), value, stderr }
    }
}

/// The experiment summary written as `summary.json`.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub dim: usize,
    pub n: i64,
    pub lambda: f64,
    pub seed: u64,
    pub replicas: usize,
    pub metrics: Vec<MetricRow>,
    pub checks: Vec<CheckReport>,
    pub warnings: Vec<String>,
    /// Unix timestamp; the only field that differs between identical runs.
    pub generated_at: u64,
}

pub struct Sink {
    out_dir: PathBuf,
    pub quiet: bool,
}

impl Sink {
    pub fn new(out_dir: PathBuf, quiet: bool) -> Result<Self> {
        fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Self { out_dir, quiet })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(self.path(name), text + "\n")
            .with_context(|| format!("writing {name}"))?;
        Ok(())
    }

    fn write_metrics_csv(&self, name: &str, metrics: &[MetricRow]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(["metric", "key", "value", "stderr"])?;
        for m in metrics {
            w.write_record([
                m.metric.as_str(),
                m.key.as_str(),
                &m.value.to_string(),
                &m.stderr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn note(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn sample_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let steps = (horizon / dt).floor() as usize;
    (0..steps).map(|i| i as f64 * dt).collect()
}

fn combine(values: &[ValueWithError]) -> ValueWithError {
    match values.len() {
        0 => ValueWithError::new(f64::NAN, f64::NAN),
        1 => values[0],
        n => {
            let nf = n as f64;
            let mean = values.iter().map(|v| v.value).sum::<f64>() / nf;
            let var =
                values.iter().map(|v| (v.value - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            ValueWithError::new(mean, (var / nf).sqrt())
        }
    }
}

/// Runs `replicas` independent trajectories (seed-offset by replica index)
/// and estimates stationary functionals per replicate.
fn replicate_estimates(
    cfg: &ExperimentConfig,
    seed: u64,
    replicas: usize,
    c_grid: &[f64],
) -> Result<Vec<StationaryEstimate>> {
    let dom = cfg.domain().map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let times = sample_grid(cfg.horizon, cfg.sample_dt);
    let estimates: Vec<Result<StationaryEstimate>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let init = QueueField::empty(dom.clone(), 0.0);
            let traj = simulate(
                &cfg.kernel,
                cfg.lambda,
                &init,
                (0.0, cfg.horizon),
                seed.wrapping_add(r),
                &times,
            )?;
            let est = estimate_stationary(
                SampleSource::TimeSeries {
                    trajectory: &traj,
                    burn_in: cfg.resolved_burn_in(),
                    batch_count: cfg.batch_count,
                },
                c_grid,
            )?;
            Ok(est)
        })
        .collect();
    estimates.into_iter().collect()
}

/// Stationary snapshots, one per replica, for replicate-based estimators.
fn replicate_fields(cfg: &ExperimentConfig, seed: u64, replicas: usize) -> Result<Vec<QueueField>> {
    let dom = cfg.domain().map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let fields: Vec<Result<QueueField>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let init = QueueField::empty(dom.clone(), 0.0);
            let mut traj = simulate(
                &cfg.kernel,
                cfg.lambda,
                &init,
                (0.0, cfg.horizon),
                seed.wrapping_add(r),
                &[cfg.horizon],
            )?;
            Ok(traj.snapshots.pop().expect("one snapshot"))
        })
        .collect();
    fields.into_iter().collect()
}

fn default_c_grid(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    if let Some(grid) = &cfg.c_grid {
        return Ok(grid.clone());
    }
    if cfg.lambda >= cfg.kernel.critical_rate() {
        bail!("no default c grid at an unstable rate; set c_grid explicitly");
    }
    let constants = compute_constants(cfg.lambda, cfg.kernel.sum())
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    Ok(vec![constants.c0 / 4.0, constants.c0 / 2.0])
}

fn mean_metrics(estimates: &[StationaryEstimate]) -> (Vec<MetricRow>, ValueWithError) {
    let mean = combine(&estimates.iter().map(|e| e.mean).collect::<Vec<_>>());
    let mut metrics = vec![MetricRow::new("mean", "pooled", mean.value, mean.std_err)];
    for k in 0..estimates[0].moments.len() {
        let order = estimates[0].moments[k].0;
        let v = combine(&estimates.iter().map(|e| e.moments[k].1).collect::<Vec<_>>());
        metrics.push(MetricRow::new("moment", order, v.value, v.std_err));
    }
    (metrics, mean)
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    seed: u64,
    replicas: usize,
    warnings: Vec<String>,
    sink: &Sink,
) -> Result<bool> {
    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut checks: Vec<CheckReport> = Vec::new();
    match kind {
        ExperimentKind::Mean => {
            let estimates = replicate_estimates(cfg, seed, replicas, &[])?;
            let (rows, mean) = mean_metrics(&estimates);
            metrics = rows;
            if cfg.lambda * cfg.kernel.sum() < 1.0 {
                let target = cfg.lambda / (1.0 - cfg.lambda * cfg.kernel.sum());
                metrics.push(MetricRow::new("mean_target", "formula", target, 0.0));
                checks.push(
                    check_mean_formula(mean.value, mean.std_err, cfg.lambda, cfg.kernel.sum(), 0.02)
                        .map_err(|e| anyhow::anyhow!(e.to_string()))?,
                );
            }
        }
        ExperimentKind::Tails => {
            let estimates = replicate_estimates(cfg, seed, replicas, &[])?;
            let x_max = estimates.iter().map(|e| e.ccdf.len()).max().unwrap_or(0);
            let mut ccdf = Vec::with_capacity(x_max);
            for x in 0..x_max {
                let per_rep: Vec<ValueWithError> = estimates
                    .iter()
                    .map(|e| e.ccdf.get(x).copied().unwrap_or(ValueWithError::new(0.0, 0.0)))
                    .collect();
                ccdf.push(combine(&per_rep));
            }
            let samples: usize = estimates.iter().map(|e| e.sample_count).sum();
            for (x, v) in ccdf.iter().enumerate() {
                metrics.push(MetricRow::new("ccdf", x, v.value, v.std_err));
            }
            match fit_tail(&ccdf, samples, tail_fit_x_min(&ccdf), Some(cfg.lambda)) {
                Ok(fit) => {
                    metrics.push(MetricRow::new("tail_slope", "fit", fit.slope, 0.0));
                    metrics.push(MetricRow::new("tail_residual", "fit", fit.residual_rms, 0.0));
                    if let Some(w) = fit.lower_witness_slope {
                        metrics.push(MetricRow::new("tail_slope", "lower_witness", w, 0.0));
                    }
                }
                Err(e) => sink.note(&format!("tail fit skipped: {e}")),
            }
            if cfg.lambda < cfg.kernel.critical_rate() {
                let constants = compute_constants(cfg.lambda, cfg.kernel.sum())
                    .map_err(|e| anyhow::anyhow!(e.to_string()))?;
                checks.push(
                    tail_sandwich_check(&ccdf, samples, cfg.lambda, &constants, constants.c0 / 2.0)
                        .map_err(|e| anyhow::anyhow!(e.to_string()))?,
                );
            }
            sink.write_metrics_csv("ccdf.csv", &metrics)?;
        }
        ExperimentKind::Mgf => {
            let grid = default_c_grid(cfg)?;
            let estimates = replicate_estimates(cfg, seed, replicas, &grid)?;
            let constants = compute_constants(cfg.lambda, cfg.kernel.sum()).ok();
            for (slot, &c) in grid.iter().enumerate() {
                let v = combine(&estimates.iter().map(|e| e.mgf[slot].1).collect::<Vec<_>>());
                metrics.push(MetricRow::new("mgf", format!("{c}"), v.value, v.std_err));
                if let Some(constants) = &constants {
                    if c < constants.c0 {
                        metrics.push(MetricRow::new(
                            "mgf_bound",
                            format!("{c}"),
                            constants.mgf_bound(c).expect("c below c0"),
                            0.0,
                        ));
                        checks.push(
                            check_mgf_bound(v.value, 3.0 * v.std_err, c, constants)
                                .map_err(|e| anyhow::anyhow!(e.to_string()))?,
                        );
                    }
                }
            }
        }
        ExperimentKind::Correlation => {
            let fields = replicate_fields(cfg, seed, replicas)?;
            let offsets = cfg.resolved_offsets();
            let prof = spatial_covariance(&fields, 0, &offsets)?;
            metrics.push(MetricRow::new("mean", "pooled", prof.mean.value, prof.mean.std_err));
            for (slot, &o) in offsets.iter().enumerate() {
                let c = prof.covariance[slot];
                let p = prof.product_moment[slot];
                metrics.push(MetricRow::new("covariance", o, c.value, c.std_err));
                metrics.push(MetricRow::new("product_moment", o, p.value, p.std_err));
            }
            if let Some(slot) = offsets
                .iter()
                .enumerate()
                .max_by_key(|(_, o)| o.abs())
                .map(|(i, _)| i)
            {
                let far = prof.covariance[slot];
                checks.push(CheckReport {
                    name: "covariance_far_null".to_string(),
                    inputs: format!("offset={}, replicas={replicas}", offsets[slot]),
                    pass: far.value.abs() <= 3.0 * far.std_err,
                    slack: 3.0 * far.std_err - far.value.abs(),
                    notes: "pass iff the largest-offset covariance is within 3 SE of 0"
                        .to_string(),
                });
            }
            sink.write_metrics_csv("covariance.csv", &metrics)?;
        }
        ExperimentKind::Maxbox => {
            let field = replicate_fields(cfg, seed, 1)?.pop().expect("one field");
            let radii = cfg.resolved_box_radii();
            let rep = max_in_boxes(&field, &radii);
            for (n, m) in rep.box_radii.iter().zip(&rep.maxima) {
                metrics.push(MetricRow::new("max", n, *m as f64, 0.0));
            }
            for (n, q) in &rep.ratios {
                metrics.push(MetricRow::new("max_over_log", n, *q, 0.0));
            }
            metrics.push(MetricRow::new("max_slope", "fit", rep.slope, 0.0));
            if rep.box_radii.len() >= 2 {
                checks.push(CheckReport {
                    name: "max_growth".to_string(),
                    inputs: format!("radii={:?}", rep.box_radii),
                    pass: rep.slope > 0.0,
                    slack: rep.slope,
                    notes: "pass iff the max grows with the box (positive slope vs log N)"
                        .to_string(),
                });
            } else {
                sink.note("max slope needs at least two box radii; check skipped");
            }
            sink.write_metrics_csv("maxbox.csv", &metrics)?;
        }
        ExperimentKind::Ergodic => {
            let field = replicate_fields(cfg, seed, 1)?.pop().expect("one field");
            let radii = cfg.resolved_box_radii();
            let dom = field.domain().clone();
            let all_sites: Vec<usize> = dom.sites().collect();
            let fns: [(&str, fn(&QueueField, usize) -> f64); 2] = [
                ("identity", |f, s| f.value(s) as f64),
                ("indicator_ge_1", |f, s| if f.value(s) >= 1 { 1.0 } else { 0.0 }),
            ];
            for (name, f) in fns {
                let pooled =
                    all_sites.iter().map(|&s| f(&field, s)).sum::<f64>() / all_sites.len() as f64;
                metrics.push(MetricRow::new("pooled", name, pooled, 0.0));
                for (r, avg) in ergodic_average(&field, &radii, f) {
                    metrics.push(MetricRow::new(&format!("box_avg_{name}"), r, avg, 0.0));
                }
                let r_big = *radii.iter().max().expect("nonempty radii");
                let box_values: Vec<f64> = dom
                    .window(&vec![0; dom.dim()], r_big)
                    .iter()
                    .map(|&s| f(&field, s))
                    .collect();
                let batches = 16.min(box_values.len() / 4).max(2);
                let se = spatial_batch_se(&box_values, batches);
                let gap = (se.value - pooled).abs();
                checks.push(CheckReport {
                    name: format!("ergodic_{name}"),
                    inputs: format!("radius={r_big}"),
                    pass: gap <= 3.0 * se.std_err,
                    slack: 3.0 * se.std_err - gap,
                    notes: "pass iff the largest box average is within 3 SE of the pooled mean"
                        .to_string(),
                });
            }
            sink.write_metrics_csv("ergodic.csv", &metrics)?;
        }
        ExperimentKind::FrozenStrip => {
            let schedule = match cfg.strip_half_width {
                Some(l) => FrozenStripSchedule::Fixed(l),
                None => FrozenStripSchedule::default(),
            };
            let report = frozen_strip_experiment(
                cfg.n,
                &schedule,
                &cfg.kernel,
                cfg.lambda,
                cfg.observe_k,
                cfg.strip_replicates,
                seed,
            )
            .map_err(|e| anyhow::anyhow!(e.to_string()))?;
            checks.extend(report.reports().into_iter().cloned());
        }
        ExperimentKind::VerifyAll => {
            checks = verify_battery(seed);
            for c in &checks {
                metrics.push(MetricRow::new("check_slack", &c.name, c.slack, 0.0));
            }
            sink.write_json("checks.json", &checks)?;
        }
    }

    let all_pass = checks.iter().all(|c| c.pass);
    let summary = Summary {
        experiment: kind.as_str().to_string(),
        dim: cfg.dim,
        n: cfg.n,
        lambda: cfg.lambda,
        seed,
        replicas,
        metrics,
        checks,
        warnings,
        generated_at: timestamp(),
    };
    sink.write_json("summary.json", &summary)?;
    sink.write_metrics_csv("results.csv", &summary.metrics)?;
    for c in &summary.checks {
        sink.note(&format!(
            "check {}: {} (slack {:.6})",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.slack
        ));
    }
    sink.note(&format!(
        "experiment {} complete: {} metrics, {} checks, artifacts in {}",
        summary.experiment,
        summary.metrics.len(),
        summary.checks.len(),
        sink.out_dir.display()
    ));
    Ok(all_pass)
}

/// `simulate` subcommand: one forward run, trajectory CSV plus summary.
pub fn run_simulate(
    cfg: &ExperimentConfig,
    seed: u64,
    warnings: Vec<String>,
    sink: &Sink,
) -> Result<bool> {
    let dom = cfg.domain().map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let times = sample_grid(cfg.horizon, cfg.sample_dt);
    let init = QueueField::empty(dom, 0.0);
    let traj = simulate(&cfg.kernel, cfg.lambda, &init, (0.0, cfg.horizon), seed, &times)?;
    write_trajectory(&traj, &sink.path("trajectory.csv"))?;
    let mut metrics = vec![MetricRow::new("event_count", "total", traj.event_count as f64, 0.0)];
    let mut mean_note = String::new();
    match estimate_stationary(
        SampleSource::TimeSeries {
            trajectory: &traj,
            burn_in: cfg.resolved_burn_in(),
            batch_count: cfg.batch_count,
        },
        &[],
    ) {
        Ok(est) => {
            metrics.push(MetricRow::new("mean", "pooled", est.mean.value, est.mean.std_err));
            for (k, v) in &est.moments {
                metrics.push(MetricRow::new("moment", k, v.value, v.std_err));
            }
            mean_note = format!("; mean {:.6}", est.mean.value);
        }
        Err(e) => sink.note(&format!("stationary estimate skipped: {e}")),
    }
    let summary = Summary {
        experiment: "simulate".to_string(),
        dim: cfg.dim,
        n: cfg.n,
        lambda: cfg.lambda,
        seed,
        replicas: 1,
        metrics,
        checks: vec![],
        warnings,
        generated_at: timestamp(),
    };
    sink.write_json("summary.json", &summary)?;
    sink.write_metrics_csv("results.csv", &summary.metrics)?;
    sink.note(&format!(
        "simulated {} events over horizon {}{mean_note}",
        traj.event_count, cfg.horizon
    ));
    Ok(true)
}

fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    traj.write_csv(&mut buf)?;
    Ok(())
}

/// `cftp` subcommand: replicate backward samples, one JSON record each.
pub fn run_cftp(
    cfg: &ExperimentConfig,
    seed: u64,
    replicas: usize,
    warnings: Vec<String>,
    sink: &Sink,
) -> Result<bool> {
    let dom = cfg.domain().map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let observe = dom.window(&vec![0; cfg.dim], cfg.observe_k);
    let results: Vec<_> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            cftp_sample(&dom, &cfg.kernel, cfg.lambda, &observe, cfg.cftp, seed.wrapping_add(r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut lines = String::new();
    for res in &results {
        lines.push_str(&serde_json::to_string(&CftpRecord::from(res))?);
        lines.push('\n');
    }
    fs::write(sink.path("cftp.jsonl"), &lines)?;
    if !sink.quiet {
        print!("{lines}");
    }
    let stabilized = results.iter().filter(|r| r.stabilized).count();
    let mean_t = results.iter().map(|r| r.t_final).sum::<f64>() / replicas.max(1) as f64;
    let summary = Summary {
        experiment: "cftp".to_string(),
        dim: cfg.dim,
        n: cfg.n,
        lambda: cfg.lambda,
        seed,
        replicas,
        metrics: vec![
            MetricRow::new("stabilized", "count", stabilized as f64, 0.0),
            MetricRow::new("t_final", "mean", mean_t, 0.0),
        ],
        checks: vec![],
        warnings,
        generated_at: timestamp(),
    };
    sink.write_json("summary.json", &summary)?;
    sink.write_metrics_csv("results.csv", &summary.metrics)?;
    Ok(true)
}

/// `oracle` subcommand: exact stationary functionals on a tiny domain.
pub fn run_oracle(
    cfg: &ExperimentConfig,
    seed: u64,
    warnings: Vec<String>,
    sink: &Sink,
) -> Result<bool> {
    let dom = cfg.domain().map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let mgf_c = match default_c_grid(cfg) {
        Ok(grid) => grid,
        Err(_) => Vec::new(),
    };
    let mut e1 = vec![0i64; cfg.dim];
    e1[0] = 1;
    let cov_sites = dom.index_of(&e1).into_iter().collect();
    let requests = OracleRequests { k_max: cfg.k_max, mgf_c, cov_sites };
    let result = solve_oracle(dom, &cfg.kernel, cfg.lambda, cfg.cap, &requests, 1e-12)
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    sink.write_json("oracle.json", &result)?;
    if cfg.dump_pi {
        let mut w = csv::Writer::from_path(sink.path("pi.csv"))?;
        w.write_record(["state", "probability"])?;
        for (s, p) in result.pi.iter().enumerate() {
            w.write_record([s.to_string(), p.to_string()])?;
        }
        w.flush()?;
    }
    let mut metrics = vec![
        MetricRow::new("mean", "exact", result.mean, 0.0),
        MetricRow::new("truncation_mass", "cap", result.truncation_mass, 0.0),
    ];
    for (k, m) in result.moments.iter().enumerate() {
        metrics.push(MetricRow::new("moment", k, *m, 0.0));
    }
    for (c, v) in &result.mgf {
        metrics.push(MetricRow::new("mgf", format!("{c}"), *v, 0.0));
    }
    let summary = Summary {
        experiment: "oracle".to_string(),
        dim: cfg.dim,
        n: cfg.n,
        lambda: cfg.lambda,
        seed,
        replicas: 1,
        metrics,
        checks: vec![],
        warnings,
        generated_at: timestamp(),
    };
    sink.write_json("summary.json", &summary)?;
    sink.write_metrics_csv("results.csv", &summary.metrics)?;
    sink.note(&format!(
        "oracle mean {:.9}, truncation mass {:.3e}",
        result.mean, result.truncation_mass
    ));
    Ok(true)
}

/// `verify` subcommand: the check battery, no config needed.
pub fn run_verify(seed: u64, sink: &Sink) -> Result<bool> {
    let checks = verify_battery(seed);
    sink.write_json("checks.json", &checks)?;
    for c in &checks {
        sink.note(&format!(
            "check {}: {} (slack {:.6}) {}",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.slack,
            c.inputs
        ));
    }
    Ok(checks.iter().all(|c| c.pass))
}

