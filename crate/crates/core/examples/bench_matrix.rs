//! A reduced scenario matrix (one shape, two g-levels, two repetitions) run
//! through the benchmark harness.
//!
//! The full desk matrix is `lolnmpc bench`.

use lolnmpc::bench::{run_matrix, ScenarioMatrix};
use lolnmpc::trajectories::Shape;
use lolnmpc::VehicleParams;

fn main() -> lolnmpc::Result<()> {
    let matrix = ScenarioMatrix { shapes: vec![Shape::Hyp], repetitions: 2, laps: 0.5, ..ScenarioMatrix::default() };
    let (report, timing) = run_matrix(&matrix, &VehicleParams::default(), None)?;
    print!("{}", report.table());
    print!("{}", timing.table());
    let out = std::env::temp_dir().join("lolnmpc_bench_example");
    for path in report.write(&out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
