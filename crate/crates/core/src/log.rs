//! Flight logs: per-substep truth rows, per-tick controller records, CSV
//! export and a JSON metadata sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controllers::PredictionRecord;
use crate::error::Result;
use crate::model::{ControlCommand, StatePid20};
use crate::ocp::SolverDiagnostics;
use crate::so3::Vec3;

/// Plant truth after one low-level substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstepRow {
    pub t: f64,
    pub state: StatePid20,
    /// Command in effect: collective throttle and body rates.
    pub throttle: f64,
    pub rates: [f64; 3],
    /// Desaturation events so far.
    pub clip_events: u64,
}

/// One control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    /// Truth at the tick (before the command is issued).
    pub truth: StatePid20,
    pub reference_p: Vec3,
    pub command: ControlCommand,
    pub stale: bool,
    pub diagnostics: SolverDiagnostics,
    pub prediction: PredictionRecord,
    pub mixer_rows: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub controller: String,
    pub trajectory: String,
    pub target_g: Option<f64>,
    pub duration: f64,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of every configuration input.
    pub config_hash: String,
    pub version: String,
    pub clip_events: u64,
    pub stale_ticks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    pub meta: RunMetadata,
    pub rows: Vec<SubstepRow>,
    pub ticks: Vec<TickRecord>,
}

/// Hex SHA-256 of a serializable configuration bundle.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

const ROW_HEADER: [&str; 26] = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz", "zx", "zy", "zz", "r0", "r1", "r2", "r3",
    "cmd_throttle", "cmd_wx", "cmd_wy", "cmd_wz", "clip_events",
];

const TICK_HEADER: [&str; 16] = [
    "t", "cmd_collective", "cmd_wx", "cmd_wy", "cmd_wz", "stale", "iterations", "qp_iterations", "kkt", "cost", "solve_us",
    "mixer0", "mixer1", "mixer2", "mixer3", "ref_err",
];

fn num(v: f64) -> String {
    format!("{v:?}")
}

impl FlightLog {
    pub fn clip_events(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.clip_events)
    }

    pub fn max_speed(&self) -> f64 {
        self.rows.iter().map(|r| r.state.rigid.v.norm()).fold(0.0, f64::max)
    }

    pub fn solve_times_us(&self) -> Vec<f64> {
        self.ticks.iter().map(|t| t.diagnostics.solve_time_us).collect()
    }

    pub fn write_rows_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(ROW_HEADER)?;
        for row in &self.rows {
            let x = row.state.to_vec();
            let mut rec: Vec<String> = std::iter::once(row.t).chain(x).map(num).collect();
            rec.push(num(row.throttle));
            rec.extend(row.rates.iter().map(|v| num(*v)));
            rec.push(row.clip_events.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_ticks_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(TICK_HEADER)?;
        for t in &self.ticks {
            let (collective, rates) = match t.command {
                ControlCommand::Standard { thrust, rates } => (thrust, rates),
                ControlCommand::Lol { throttle, rates } => (throttle, rates),
            };
            let d = &t.diagnostics;
            let mixer = t.mixer_rows.map_or([f64::NAN; 4], |m| m);
            let mut rec = vec![num(t.t), num(collective), num(rates[0]), num(rates[1]), num(rates[2])];
            rec.push(u8::from(t.stale).to_string());
            rec.push(d.iterations.to_string());
            rec.push(d.qp_iterations.to_string());
            rec.extend([d.kkt, d.cost, d.solve_time_us].map(num));
            rec.extend(mixer.map(num));
            rec.push(num((t.truth.rigid.p - t.reference_p).norm()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` (substeps), `<stem>_ticks.csv` and `<stem>.json`
    /// into `dir`; returns the three paths.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<[PathBuf; 3]> {
        std::fs::create_dir_all(dir)?;
        let rows = dir.join(format!("{stem}.csv"));
        let ticks = dir.join(format!("{stem}_ticks.csv"));
        let meta = dir.join(format!("{stem}.json"));
        self.write_rows_csv(&rows)?;
        self.write_ticks_csv(&ticks)?;
        std::fs::write(&meta, serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok([rows, ticks, meta])
    }
}
