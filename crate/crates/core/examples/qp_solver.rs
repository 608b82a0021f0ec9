//! The dense QP layer on its own: a box-constrained least-squares problem,
//! checked against brute-force active-set enumeration.

use nalgebra::{DMatrix, DVector};

use lolnmpc::qp::{kkt_residual, solve_by_enumeration, solve_dense, DenseQp};

fn main() -> lolnmpc::Result<()> {
    // minimize ½‖z − (2, −3, 0.5)‖² subject to −1 ≤ z ≤ 1 and z₀ + z₁ + z₂ = 0.5
    let n = 3;
    let target = DVector::from_vec(vec![2.0, -3.0, 0.5]);
    let mut a_in = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        a_in[(i, i)] = 1.0;
        a_in[(n + i, i)] = -1.0;
    }
    let qp = DenseQp {
        h: DMatrix::identity(n, n),
        g: -target,
        a_eq: DMatrix::from_row_slice(1, n, &[1.0, 1.0, 1.0]),
        b_eq: DVector::from_vec(vec![0.5]),
        a_in,
        b_in: DVector::from_element(2 * n, 1.0),
    };
    let sol = solve_dense(&qp)?;
    println!("z = {:?}", sol.z.as_slice());
    println!("active bounds {:?}, {} iterations, KKT residual {:.1e}", sol.active, sol.iterations, kkt_residual(&qp, &sol));
    if let Some(z) = solve_by_enumeration(&qp) {
        println!("enumeration agrees to {:.1e}", (&sol.z - z).amax());
    }
    Ok(())
}
