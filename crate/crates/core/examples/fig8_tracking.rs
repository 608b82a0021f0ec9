//! One lap of the 2.5 g figure-eight, logged to `out/`.
//!
//! `cargo run --release --example fig8_tracking -- [g] [out-dir]`

use std::path::PathBuf;

use lolnmpc::bench::fly;
use lolnmpc::controllers::{ControllerConfig, ControllerKind};
use lolnmpc::plant::{NoiseStd, PlantConfig};
use lolnmpc::trajectories::Shape;
use lolnmpc::VehicleParams;

fn main() -> lolnmpc::Result<()> {
    let mut args = std::env::args().skip(1);
    let g: f64 = args.next().map_or(2.5, |s| s.parse().expect("g-level"));
    let out = args.next().map_or_else(|| PathBuf::from("out"), PathBuf::from);

    let params = VehicleParams::default();
    let reference = Shape::Fig8.build(g, &params)?;
    println!(
        "fig8 at {g} g: lap {:.2} s, peak speed {:.1} m/s, peak body rate {:.2} rad/s",
        reference.duration(),
        reference.meta.peak_speed,
        reference.max_body_rate()
    );
    let plant = PlantConfig { noise: NoiseStd::desk(), seed: 1, ..PlantConfig::default() };
    let cfg = ControllerConfig::default_for(ControllerKind::Lol, &params);
    let (log, m) = fly(&params, cfg, plant, &reference, reference.duration())?;
    for path in log.write_all(&out, "fig8_lol")? {
        println!("wrote {}", path.display());
    }
    println!("rmse {:.4} m, max speed {:.1} m/s, clip events {}", m.rmse, m.max_speed, m.clip_events);
    Ok(())
}
