//! Benchmark references: statistics of every preset and a CSV round trip.

use lolnmpc::trajectories::{ReferenceTrajectory, Shape};
use lolnmpc::VehicleParams;

fn main() -> lolnmpc::Result<()> {
    let params = VehicleParams::default();
    println!("{:<10} {:>4} {:>8} {:>10} {:>10} {:>10}", "shape", "g", "lap (s)", "v max", "a max", "rate max");
    for shape in Shape::ALL {
        for g in [0.3, 2.5, 3.5] {
            let r = shape.build(g, &params)?;
            println!(
                "{:<10} {:>4} {:>8.2} {:>10.1} {:>10.1} {:>10.2}",
                shape.name(),
                g,
                r.duration(),
                r.meta.peak_speed,
                r.meta.peak_accel,
                r.max_body_rate()
            );
        }
    }

    let dir = std::env::temp_dir().join("lolnmpc_trajectories");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("hyp_3.5g.csv");
    let hyp = Shape::Hyp.build(3.5, &params)?;
    hyp.save_csv(&path)?;
    let back = ReferenceTrajectory::load_csv(&path)?;
    let err = hyp.p.iter().zip(&back.p).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    println!("wrote {} ({} samples), reload error {err:.1e} m", path.display(), back.len());
    Ok(())
}
