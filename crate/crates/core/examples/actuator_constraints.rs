//! A hard lateral step: the mixer rows keep the LoL controller inside the
//! throttle range, while the ablated controller and the standard one saturate
//! the flight stack's mixer.

use lolnmpc::controllers::{Controller, ControllerConfig, ControllerKind};
use lolnmpc::model::{MotorVariant, StatePid20};
use lolnmpc::plant::{run_closed_loop, Plant, PlantConfig};
use lolnmpc::so3::Vec3;
use lolnmpc::trajectories::make_hover;
use lolnmpc::VehicleParams;

fn main() -> lolnmpc::Result<()> {
    let params = VehicleParams::default();
    let reference = make_hover(Vec3::new(1.0, 0.0, 2.0), 4.0);
    let lol = ControllerConfig::default_for(ControllerKind::Lol, &params);
    let cases = [
        ("lol", lol.clone()),
        ("lol without mixer rows", lol.without_actuator_rows()),
        ("standard", ControllerConfig::default_for(ControllerKind::Standard { variant: MotorVariant::Speed }, &params)),
    ];
    for (name, cfg) in cases {
        let mut plant = Plant::new(&params, PlantConfig::default(), StatePid20::hover(&params, Vec3::new(0.0, 0.0, 2.0)))?;
        let mut ctrl = Controller::new(cfg, &params)?;
        let log = run_closed_loop(&mut plant, &mut ctrl, &reference, 3.0)?;
        let rows: Vec<f64> = log.ticks.iter().filter_map(|t| t.mixer_rows).flatten().collect();
        let range = if rows.is_empty() {
            "n/a".to_string()
        } else {
            format!("[{:.3}, {:.3}]", rows.iter().cloned().fold(f64::MAX, f64::min), rows.iter().cloned().fold(f64::MIN, f64::max))
        };
        println!("{name:<24} desaturation events {:>5}   planned mixer range {range}", log.clip_events());
    }
    Ok(())
}
