//! Ten seconds of hover with the LoL controller on the default flight stack,
//! with desk-level sensor noise.

use lolnmpc::bench::fly;
use lolnmpc::controllers::{ControllerConfig, ControllerKind};
use lolnmpc::plant::{NoiseStd, PlantConfig};
use lolnmpc::so3::Vec3;
use lolnmpc::trajectories::make_hover;
use lolnmpc::VehicleParams;

fn main() -> lolnmpc::Result<()> {
    let params = VehicleParams::default();
    let reference = make_hover(Vec3::new(0.0, 0.0, 2.0), 10.0);
    let cfg = ControllerConfig::default_for(ControllerKind::Lol, &params);
    let (log, m) = fly(&params, cfg, PlantConfig { noise: NoiseStd::desk(), seed: 1, ..PlantConfig::default() }, &reference, 10.0)?;
    let thr: Vec<f64> = log.rows.iter().skip(1).map(|r| r.throttle).collect();
    let mean = thr.iter().sum::<f64>() / thr.len() as f64;
    let std = (thr.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / thr.len() as f64).sqrt();
    println!("throttle {mean:.4} ± {std:.4} (trim {:.4})", params.hover_throttle());
    println!("position rmse {:.2e} m over {} ticks", m.rmse, log.ticks.len());
    Ok(())
}
