//! Standard vs LoL NMPC on every preset at one g-level, same weights and plant.

use lolnmpc::bench::fly;
use lolnmpc::controllers::{ControllerConfig, ControllerKind};
use lolnmpc::model::MotorVariant;
use lolnmpc::plant::PlantConfig;
use lolnmpc::trajectories::Shape;
use lolnmpc::VehicleParams;

fn main() -> lolnmpc::Result<()> {
    let g: f64 = std::env::args().nth(1).map_or(3.5, |s| s.parse().expect("g-level"));
    let params = VehicleParams::default();
    let kinds = [ControllerKind::Standard { variant: MotorVariant::Speed }, ControllerKind::Lol];
    println!("{:<10} {:>12} {:>12} {:>8}", "shape", "standard", "lol", "gain");
    for shape in Shape::ALL {
        let reference = shape.build(g, &params)?;
        let mut rmse = [0.0; 2];
        for (i, kind) in kinds.into_iter().enumerate() {
            let cfg = ControllerConfig::default_for(kind, &params);
            rmse[i] = fly(&params, cfg, PlantConfig::default(), &reference, reference.duration())?.1.rmse;
        }
        println!("{:<10} {:>10.4} m {:>10.4} m {:>7.1}%", shape.name(), rmse[0], rmse[1], (rmse[0] - rmse[1]) / rmse[0] * 100.0);
    }
    Ok(())
}
