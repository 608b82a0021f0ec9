//! Tracking and prediction metrics, and the scenario-matrix harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, ControllerConfig, ControllerKind};
use crate::error::{Error, Result};
use crate::log::FlightLog;
use crate::model::{channels_to_motors, MotorVariant, StatePid20};
use crate::params::VehicleParams;
use crate::plant::{run_closed_loop, NoiseStd, Plant, PlantConfig};
use crate::trajectories::{ReferenceTrajectory, Shape};

/// Root-mean-square position error over the control ticks, against the
/// reference interpolated at the tick times.
pub fn position_rmse(log: &FlightLog, reference: &ReferenceTrajectory) -> Result<f64> {
    let need_start = reference.start_time();
    let need_end = need_start + reference.duration();
    let (Some(first), Some(last)) = (log.ticks.first(), log.ticks.last()) else {
        return Err(Error::DurationMismatch { log_start: f64::NAN, log_end: f64::NAN, need_start, need_end });
    };
    let log_end = log.rows.last().map_or(last.t, |r| r.t);
    // the final tick is one control period before the end of the log
    if first.t > need_start + 1e-9 || log_end < need_end - 1e-6 {
        return Err(Error::DurationMismatch { log_start: first.t, log_end, need_start, need_end });
    }
    let sum: f64 = log.ticks.iter().map(|t| (t.truth.rigid.p - reference.sample(t.t).p).norm_squared()).sum();
    Ok((sum / log.ticks.len() as f64).sqrt())
}

/// Position RMSE over the ticks actually flown, which may be several laps of a
/// periodic reference or a prefix of a longer one.
pub fn tracking_rmse(log: &FlightLog, reference: &ReferenceTrajectory) -> f64 {
    let sum: f64 = log.ticks.iter().map(|t| (t.truth.rigid.p - reference.sample(t.t).p).norm_squared()).sum();
    (sum / log.ticks.len().max(1) as f64).sqrt()
}

/// Accumulated squared prediction errors per horizon lead.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrors {
    pub dt: f64,
    /// Σ‖p̂ − p‖² and sample count per lead `k·dt`, `k = 0..=N`.
    pub position_sq: Vec<f64>,
    pub position_n: Vec<usize>,
    /// Σ over motors of (f̂ − f)² and sample count (motors × ticks), `k = 0..N`.
    pub force_sq: Vec<f64>,
    pub force_n: Vec<usize>,
}

impl PredictionErrors {
    pub fn merge(&mut self, other: &PredictionErrors) {
        if self.position_sq.is_empty() {
            *self = other.clone();
            return;
        }
        for (a, b) in self.position_sq.iter_mut().zip(&other.position_sq) {
            *a += b;
        }
        for (a, b) in self.position_n.iter_mut().zip(&other.position_n) {
            *a += b;
        }
        for (a, b) in self.force_sq.iter_mut().zip(&other.force_sq) {
            *a += b;
        }
        for (a, b) in self.force_n.iter_mut().zip(&other.force_n) {
            *a += b;
        }
    }

    pub fn curves(&self) -> PredictionCurves {
        let rms = |s: &[f64], n: &[usize]| s.iter().zip(n).map(|(s, n)| if *n > 0 { (s / *n as f64).sqrt() } else { f64::NAN }).collect();
        PredictionCurves {
            lead: (0..self.position_sq.len()).map(|k| k as f64 * self.dt).collect(),
            position: rms(&self.position_sq, &self.position_n),
            force: rms(&self.force_sq, &self.force_n),
        }
    }
}

/// Prediction RMSE per horizon lead; `force` has one entry fewer than `lead`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurves {
    pub lead: Vec<f64>,
    pub position: Vec<f64>,
    pub force: Vec<f64>,
}

fn interpolate_truth(log: &FlightLog, t: f64) -> Option<StatePid20> {
    let rows = &log.rows;
    let t0 = rows.first()?.t;
    let h = rows.get(1)?.t - t0;
    let pos = (t - t0) / h;
    // tolerate floating-point rounding of grid times
    let pos = if (pos - pos.round()).abs() < 1e-6 { pos.round() } else { pos };
    if pos < 0.0 || pos > (rows.len() - 1) as f64 {
        return None;
    }
    let i = (pos.floor() as usize).min(rows.len() - 1);
    let j = (i + 1).min(rows.len() - 1);
    let s = pos - i as f64;
    let (a, b) = (rows[i].state.to_vec(), rows[j].state.to_vec());
    let x: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a + (b - a) * s).collect();
    Some(StatePid20::from_slice(&x))
}

/// Prediction errors of every tick's horizon against plant truth. Force truth
/// is `f_max r²` per motor.
pub fn prediction_errors(log: &FlightLog, params: &VehicleParams) -> Result<PredictionErrors> {
    let Some(first) = log.ticks.first() else {
        return Err(Error::DurationMismatch { log_start: f64::NAN, log_end: f64::NAN, need_start: 0.0, need_end: 0.0 });
    };
    let n = first.prediction.forces.len();
    let dt = first.prediction.dt;
    let log_start = log.rows.first().map_or(f64::NAN, |r| r.t);
    let log_end = log.rows.last().map_or(f64::NAN, |r| r.t);
    if log_end - first.t < n as f64 * dt - 1e-9 {
        return Err(Error::DurationMismatch { log_start, log_end, need_start: first.t, need_end: first.t + n as f64 * dt });
    }
    let mut e = PredictionErrors {
        dt,
        position_sq: vec![0.0; n + 1],
        position_n: vec![0; n + 1],
        force_sq: vec![0.0; n],
        force_n: vec![0; n],
    };
    for tick in &log.ticks {
        for k in 0..=n {
            let Some(truth) = interpolate_truth(log, tick.t + k as f64 * dt) else { break };
            e.position_sq[k] += (tick.prediction.states[k].p - truth.rigid.p).norm_squared();
            e.position_n[k] += 1;
            if k < n {
                let f = channels_to_motors(truth.r.map(|r| params.f_max * r * r));
                for m in 0..4 {
                    let d = tick.prediction.forces[k][m] - f[m];
                    e.force_sq[k] += d * d;
                }
                e.force_n[k] += 4;
            }
        }
    }
    Ok(e)
}

/// Prediction RMSE curves of one log.
pub fn prediction_rmse(log: &FlightLog, params: &VehicleParams) -> Result<PredictionCurves> {
    Ok(prediction_errors(log, params)?.curves())
}

fn default_laps() -> f64 {
    1.0
}

/// Scenario matrix: every shape × g-level × controller, `repetitions` times.
/// Repetition `i` uses noise seed `seed + i` for every controller, so pairs see
/// the same noise sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    pub shapes: Vec<Shape>,
    pub g_levels: Vec<f64>,
    pub controllers: Vec<ControllerKind>,
    pub repetitions: usize,
    pub seed: u64,
    #[serde(default)]
    pub plant: PlantConfig,
    /// Flight length in laps of the reference.
    #[serde(default = "default_laps")]
    pub laps: f64,
}

impl Default for ScenarioMatrix {
    /// Three shapes at 2.5 g and 3.5 g, both controllers, five noisy repetitions.
    fn default() -> Self {
        Self {
            shapes: Shape::ALL.to_vec(),
            g_levels: vec![2.5, 3.5],
            controllers: vec![ControllerKind::Standard { variant: MotorVariant::Speed }, ControllerKind::Lol],
            repetitions: 5,
            seed: 1,
            plant: PlantConfig { noise: NoiseStd::desk(), ..PlantConfig::default() },
            laps: 1.0,
        }
    }
}

impl ScenarioMatrix {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        m.validate().map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 || self.shapes.is_empty() || self.g_levels.is_empty() || self.controllers.is_empty() {
            return Err(Error::InvalidParam("matrix needs at least one shape, g-level, controller and repetition".into()));
        }
        if !(self.laps > 0.0) {
            return Err(Error::InvalidParam(format!("laps must be positive, got {}", self.laps)));
        }
        self.plant.validate()
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &shape in &self.shapes {
            for &g in &self.g_levels {
                for &controller in &self.controllers {
                    for rep in 0..self.repetitions {
                        out.push(Cell { shape, g, controller, rep, seed: self.seed + rep as u64 });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub shape: Shape,
    pub g: f64,
    pub controller: ControllerKind,
    pub rep: usize,
    pub seed: u64,
}

impl Cell {
    pub fn scenario(&self) -> String {
        scenario_name(self.shape, self.g)
    }
}

pub fn scenario_name(shape: Shape, g: f64) -> String {
    format!("{}_{}g", shape.name(), g)
}

/// Metrics of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub rmse: f64,
    pub max_speed: f64,
    pub clip_events: u64,
    pub stale_ticks: usize,
    /// Largest excursion of the mixer rows outside `[r_min, r_max]` (LoL).
    pub max_mixer_violation: Option<f64>,
    pub prediction: PredictionErrors,
    #[serde(skip)]
    pub solve_times_us: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CellOutcome {
    Finished(RunMetrics),
    Dnf(String),
}

pub fn controller_label(kind: ControllerKind) -> String {
    match kind {
        ControllerKind::Standard { variant } if variant != MotorVariant::Speed => format!("standard-{}", variant.name()),
        k => k.name().to_string(),
    }
}

/// Flies one reference with one controller and collects the metrics.
pub fn fly(
    params: &VehicleParams,
    controller: ControllerConfig,
    plant: PlantConfig,
    reference: &ReferenceTrajectory,
    duration: f64,
) -> Result<(FlightLog, RunMetrics)> {
    let mut plant = Plant::at_reference(params, plant, reference)?;
    let mut ctrl = Controller::new(controller, params)?;
    let log = run_closed_loop(&mut plant, &mut ctrl, reference, duration)?;
    let metrics = metrics_of(&log, reference, params)?;
    Ok((log, metrics))
}

pub fn metrics_of(log: &FlightLog, reference: &ReferenceTrajectory, params: &VehicleParams) -> Result<RunMetrics> {
    let rmse = tracking_rmse(log, reference);
    let violation = log
        .ticks
        .iter()
        .filter_map(|t| t.mixer_rows)
        .flatten()
        .map(|r| (params.r_min - r).max(r - params.r_max).max(0.0))
        .reduce(f64::max);
    Ok(RunMetrics {
        rmse,
        max_speed: log.max_speed(),
        clip_events: log.clip_events(),
        stale_ticks: log.meta.stale_ticks,
        max_mixer_violation: violation,
        // runs shorter than one horizon have no prediction to score
        prediction: match prediction_errors(log, params) {
            Err(Error::DurationMismatch { .. }) => PredictionErrors::default(),
            other => other?,
        },
        solve_times_us: log.ticks.iter().skip(1).map(|t| t.diagnostics.solve_time_us).collect(),
    })
}

fn run_cell(cell: &Cell, matrix: &ScenarioMatrix, params: &VehicleParams) -> CellOutcome {
    let go = || -> Result<RunMetrics> {
        let reference = cell.shape.build(cell.g, params)?;
        let duration = matrix.laps * reference.duration();
        let plant = PlantConfig { seed: cell.seed, ..matrix.plant.clone() };
        let cfg = ControllerConfig::default_for(cell.controller, params);
        Ok(fly(params, cfg, plant, &reference, duration)?.1)
    };
    match go() {
        Ok(m) => CellOutcome::Finished(m),
        Err(e) => CellOutcome::Dnf(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats {
    pub scenario: String,
    pub controller: String,
    pub runs: usize,
    pub dnf: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    pub max_speed: Option<f64>,
    pub clip_events: u64,
    pub stale_ticks: usize,
    pub max_mixer_violation: Option<f64>,
    pub prediction: Option<PredictionCurves>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub scenario: String,
    pub standard: Option<f64>,
    pub lol: Option<f64>,
    /// `(standard − lol) / standard · 100`; absent if either side has no finished run.
    pub gain_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnfRecord {
    pub scenario: String,
    pub controller: String,
    pub rep: usize,
    pub message: String,
}

/// Deterministic part of a benchmark: identical matrices give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub matrix: ScenarioMatrix,
    pub version: String,
    pub scenarios: Vec<ScenarioStats>,
    pub gains: Vec<GainRow>,
    pub mean_gain_pct: Option<f64>,
    pub dnf: Vec<DnfRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub controller: String,
    pub solves: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

/// Wall-clock solve-time statistics (RTI ticks only), kept apart from the
/// report because they vary between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub threads: usize,
    pub controllers: Vec<TimingStats>,
    #[serde(skip)]
    pub samples: BTreeMap<String, Vec<f64>>,
}

pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
    sorted[idx]
}

pub fn timing_stats(controller: &str, samples: &[f64]) -> TimingStats {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    TimingStats {
        controller: controller.to_string(),
        solves: s.len(),
        mean_us: s.iter().sum::<f64>() / s.len().max(1) as f64,
        p50_us: percentile(&s, 0.5),
        p99_us: percentile(&s, 0.99),
        max_us: s.last().copied().unwrap_or(f64::NAN),
    }
}

/// Worker count: explicit `jobs`, else `LOLNMPC_THREADS`, else all cores.
pub fn worker_count(jobs: Option<usize>) -> usize {
    jobs.or_else(|| std::env::var("LOLNMPC_THREADS").ok().and_then(|v| v.parse().ok()))
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every cell (in parallel, `jobs` workers) and aggregates in cell order.
pub fn run_matrix(matrix: &ScenarioMatrix, params: &VehicleParams, jobs: Option<usize>) -> Result<(BenchReport, TimingReport)> {
    matrix.validate()?;
    let threads = worker_count(jobs);
    let cells = matrix.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParam(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| cells.par_iter().map(|c| run_cell(c, matrix, params)).collect());
    Ok(aggregate(matrix, &cells, &outcomes, threads))
}

pub fn aggregate(matrix: &ScenarioMatrix, cells: &[Cell], outcomes: &[CellOutcome], threads: usize) -> (BenchReport, TimingReport) {
    let mut scenarios = Vec::new();
    let mut dnf = Vec::new();
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut by_key: BTreeMap<(String, String), Option<f64>> = BTreeMap::new();
    for &shape in &matrix.shapes {
        for &g in &matrix.g_levels {
            for &controller in &matrix.controllers {
                let name = scenario_name(shape, g);
                let label = controller_label(controller);
                let mut rmses = Vec::new();
                let mut stats = ScenarioStats {
                    scenario: name.clone(),
                    controller: label.clone(),
                    runs: 0,
                    dnf: 0,
                    rmse_mean: None,
                    rmse_std: None,
                    max_speed: None,
                    clip_events: 0,
                    stale_ticks: 0,
                    max_mixer_violation: None,
                    prediction: None,
                };
                let mut pred = PredictionErrors::default();
                for (cell, outcome) in cells.iter().zip(outcomes) {
                    if cell.shape != shape || cell.g != g || cell.controller != controller {
                        continue;
                    }
                    stats.runs += 1;
                    match outcome {
                        CellOutcome::Finished(m) => {
                            rmses.push(m.rmse);
                            stats.max_speed = Some(stats.max_speed.map_or(m.max_speed, |v: f64| v.max(m.max_speed)));
                            stats.clip_events += m.clip_events;
                            stats.stale_ticks += m.stale_ticks;
                            if let Some(v) = m.max_mixer_violation {
                                stats.max_mixer_violation = Some(stats.max_mixer_violation.map_or(v, |w: f64| w.max(v)));
                            }
                            pred.merge(&m.prediction);
                            samples.entry(label.clone()).or_default().extend(&m.solve_times_us);
                        }
                        CellOutcome::Dnf(msg) => {
                            stats.dnf += 1;
                            dnf.push(DnfRecord { scenario: name.clone(), controller: label.clone(), rep: cell.rep, message: msg.clone() });
                        }
                    }
                }
                if !rmses.is_empty() {
                    // offset by the first sample so identical runs give an exact zero spread
                    let mean = rmses[0] + rmses.iter().map(|r| r - rmses[0]).sum::<f64>() / rmses.len() as f64;
                    let var = rmses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rmses.len() as f64;
                    stats.rmse_mean = Some(mean);
                    stats.rmse_std = Some(var.sqrt());
                    stats.prediction = Some(pred.curves());
                }
                by_key.insert((name, controller.name().to_string()), stats.rmse_mean);
                scenarios.push(stats);
            }
        }
    }
    let mut gains = Vec::new();
    let has_both = matrix.controllers.iter().any(|c| matches!(c, ControllerKind::Standard { .. }))
        && matrix.controllers.contains(&ControllerKind::Lol);
    if has_both {
        for &shape in &matrix.shapes {
            for &g in &matrix.g_levels {
                let name = scenario_name(shape, g);
                let standard = by_key.get(&(name.clone(), "standard".into())).copied().flatten();
                let lol = by_key.get(&(name.clone(), "lol".into())).copied().flatten();
                let gain_pct = match (standard, lol) {
                    (Some(s), Some(l)) if s > 0.0 => Some((s - l) / s * 100.0),
                    _ => None,
                };
                gains.push(GainRow { scenario: name, standard, lol, gain_pct });
            }
        }
    }
    let finished: Vec<f64> = gains.iter().filter_map(|g| g.gain_pct).collect();
    let mean_gain_pct = (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64);
    let controllers = samples.iter().map(|(k, v)| timing_stats(k, v)).collect();
    (
        BenchReport { matrix: matrix.clone(), version: env!("CARGO_PKG_VERSION").to_string(), scenarios, gains, mean_gain_pct, dnf },
        TimingReport { threads, controllers, samples },
    )
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "DNF".to_string(), |v| format!("{v:.digits$}"))
}

impl BenchReport {
    /// Aligned text table: per-scenario RMSE of both controllers and the gain.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>16} {:>16} {:>9} {:>10}", "scenario", "standard (m)", "lol (m)", "gain (%)", "max v");
        for g in &self.gains {
            let std_of = |c: &str| {
                self.scenarios.iter().find(|s| s.scenario == g.scenario && s.controller == c).and_then(|s| s.rmse_std)
            };
            let cell = |mean: Option<f64>, c: &str| match mean {
                Some(m) => format!("{m:.4}±{:.4}", std_of(c).unwrap_or(0.0)),
                None => "DNF".into(),
            };
            let vmax = self
                .scenarios
                .iter()
                .filter(|s| s.scenario == g.scenario)
                .filter_map(|s| s.max_speed)
                .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
            let _ = writeln!(
                s,
                "{:<14} {:>16} {:>16} {:>9} {:>10}",
                g.scenario,
                cell(g.standard, "standard"),
                cell(g.lol, "lol"),
                fmt_opt(g.gain_pct, 2),
                fmt_opt(vmax, 1)
            );
        }
        if let Some(m) = self.mean_gain_pct {
            let _ = writeln!(s, "mean gain: {m:.2} %");
        }
        for d in &self.dnf {
            let _ = writeln!(s, "DNF {} {} rep {}: {}", d.scenario, d.controller, d.rep, d.message);
        }
        s
    }

    /// Writes `report.json`, `report.txt` and `<scenario>_prediction.csv` files.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)? + "\n")?;
        written.push(json);
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.table())?;
        written.push(txt);
        let mut names: Vec<&str> = self.scenarios.iter().map(|s| s.scenario.as_str()).collect();
        names.dedup();
        for name in names {
            let rows: Vec<&ScenarioStats> = self.scenarios.iter().filter(|s| s.scenario == name && s.prediction.is_some()).collect();
            if rows.is_empty() {
                continue;
            }
            let path = dir.join(format!("{name}_prediction.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["lead_s".to_string()];
            for r in &rows {
                header.push(format!("{}_position_m", r.controller));
                header.push(format!("{}_force_n", r.controller));
            }
            w.write_record(&header)?;
            let curves: Vec<&PredictionCurves> = rows.iter().map(|r| r.prediction.as_ref().unwrap()).collect();
            for k in 0..curves[0].lead.len() {
                let mut rec = vec![format!("{:?}", curves[0].lead[k])];
                for c in &curves {
                    rec.push(format!("{:?}", c.position[k]));
                    rec.push(c.force.get(k).map_or(String::new(), |v| format!("{v:?}")));
                }
                w.write_record(&rec)?;
            }
            w.flush()?;
            written.push(path);
        }
        Ok(written)
    }
}

impl TimingReport {
    /// Writes `timing.json` and `solve_time_histogram.csv` (100 µs bins).
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("timing.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)? + "\n")?;
        let hist = dir.join("solve_time_histogram.csv");
        let mut w = csv::Writer::from_path(&hist)?;
        let labels: Vec<&String> = self.samples.keys().collect();
        let mut header = vec!["bin_us".to_string()];
        header.extend(labels.iter().map(|l| l.to_string()));
        w.write_record(&header)?;
        let max = self.samples.values().flatten().cloned().fold(0.0, f64::max);
        let bins = (max / 100.0).floor() as usize + 1;
        let counts: Vec<Vec<usize>> = labels
            .iter()
            .map(|l| {
                let mut c = vec![0; bins];
                for v in &self.samples[*l] {
                    c[((v / 100.0).floor() as usize).min(bins - 1)] += 1;
                }
                c
            })
            .collect();
        for b in 0..bins {
            let mut rec = vec![(b * 100).to_string()];
            rec.extend(counts.iter().map(|c| c[b].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(vec![json, hist])
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>7} {:>9} {:>9} {:>9} {:>9}", "solver", "solves", "mean us", "p50 us", "p99 us", "max us");
        for t in &self.controllers {
            let _ = writeln!(
                s,
                "{:<10} {:>7} {:>9.0} {:>9.0} {:>9.0} {:>9.0}",
                t.controller, t.solves, t.mean_us, t.p50_us, t.p99_us, t.max_us
            );
        }
        s
    }
}
