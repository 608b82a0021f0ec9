//! How well each controller's horizon predicts per-motor thrust on the real
//! (latent, discretely-controlled) flight stack.

use lolnmpc::bench::{fly, prediction_rmse};
use lolnmpc::controllers::{ControllerConfig, ControllerKind};
use lolnmpc::model::MotorVariant;
use lolnmpc::plant::PlantConfig;
use lolnmpc::trajectories::Shape;
use lolnmpc::VehicleParams;

fn main() -> lolnmpc::Result<()> {
    let params = VehicleParams::default();
    let reference = Shape::Hyp.build(3.5, &params)?;
    let mut curves = Vec::new();
    for kind in [ControllerKind::Standard { variant: MotorVariant::Speed }, ControllerKind::Lol] {
        let (log, _) = fly(&params, ControllerConfig::default_for(kind, &params), PlantConfig::default(), &reference, reference.duration())?;
        curves.push(prediction_rmse(&log, &params)?);
    }
    println!("{:>6} {:>14} {:>14} {:>12} {:>12}", "lead", "std pos (m)", "lol pos (m)", "std f (N)", "lol f (N)");
    for k in (0..curves[0].force.len()).step_by(2) {
        println!(
            "{:>6.2} {:>14.4} {:>14.4} {:>12.3} {:>12.3}",
            curves[0].lead[k], curves[0].position[k], curves[1].position[k], curves[0].force[k], curves[1].force[k]
        );
    }
    Ok(())
}
