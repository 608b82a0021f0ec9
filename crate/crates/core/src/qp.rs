//! Dense strictly convex QP:
//!
//! ```text
//!     minimize    ½ zᵀ H z + gᵀ z
//!     subject to  A_eq z  = b_eq
//!                 A_in z <= b_in
//! ```
//!
//! Solved with the Goldfarb–Idnani dual active-set method from the `quadprog`
//! crate. Multipliers follow the convention `H z + g + A_eqᵀ λ_eq + A_inᵀ λ_in = 0`
//! with `λ_in >= 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl DenseQp {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum QpStatus {
    Optimal,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub lambda_in: DVector<f64>,
    /// Indices into the inequality rows that are active at the optimum.
    pub active: Vec<usize>,
    pub iterations: usize,
    pub objective: f64,
    pub status: QpStatus,
}

/// Solves `qp`. Fails with [`Error::QpInfeasible`] when no point satisfies the
/// constraints and [`Error::InvalidParam`] when `H` is not positive definite.
pub fn solve_dense(qp: &DenseQp) -> Result<QpSolution> {
    let n = qp.dim();
    let meq = qp.b_eq.len();
    let mi = qp.b_in.len();
    if qp.h.shape() != (n, n) || qp.a_eq.shape() != (meq, n) || qp.a_in.shape() != (mi, n) {
        return Err(Error::InvalidParam("inconsistent QP dimensions".into()));
    }
    let mut hmat: Vec<f64> = qp.h.transpose().as_slice().to_vec();
    let mut amat = Vec::with_capacity((meq + mi) * n);
    for a in [&qp.a_eq, &qp.a_in] {
        // row-major
        amat.extend_from_slice(a.transpose().as_slice());
    }
    let mut bvec = Vec::with_capacity(meq + mi);
    bvec.extend_from_slice(qp.b_eq.as_slice());
    bvec.extend_from_slice(qp.b_in.as_slice());

    let sol = quadprog::solve_qp(&mut hmat, qp.g.as_slice(), &amat, &bvec, meq, false).map_err(|e| match e {
        quadprog::Error::Infeasible => Error::QpInfeasible("constraints are inconsistent".into()),
        other => Error::InvalidParam(format!("QP setup: {other}")),
    })?;

    let z = DVector::from_vec(sol.sol);
    // quadprog reports equality multipliers with the opposite sign
    let lambda_eq = -DVector::from_column_slice(&sol.lagr[..meq]);
    let lambda_in = DVector::from_column_slice(&sol.lagr[meq..]);
    let mut active: Vec<usize> = sol.iact.iter().filter(|i| **i >= meq).map(|i| i - meq).collect();
    active.sort_unstable();
    let objective = qp.objective(&z);
    Ok(QpSolution { z, lambda_eq, lambda_in, active, iterations: sol.iter, objective, status: QpStatus::Optimal })
}

/// Infinity norm of the KKT conditions: stationarity, primal feasibility,
/// dual feasibility and complementarity.
pub fn kkt_residual(qp: &DenseQp, sol: &QpSolution) -> f64 {
    let stat = &qp.h * &sol.z + &qp.g + qp.a_eq.transpose() * &sol.lambda_eq + qp.a_in.transpose() * &sol.lambda_in;
    let mut r = stat.amax();
    if qp.b_eq.len() > 0 {
        r = r.max((&qp.a_eq * &sol.z - &qp.b_eq).amax());
    }
    let slack = &qp.b_in - &qp.a_in * &sol.z;
    for i in 0..slack.len() {
        let l = sol.lambda_in[i];
        r = r.max((-slack[i]).max(0.0)).max((-l).max(0.0)).max((l * slack[i]).abs());
    }
    r
}

/// Reference solver for small problems: tries every subset of inequality rows
/// as the active set and keeps the best primal-dual feasible candidate.
/// Exponential in the number of rows; meant for cross-checking only.
pub fn solve_by_enumeration(qp: &DenseQp) -> Option<DVector<f64>> {
    let n = qp.dim();
    let meq = qp.b_eq.len();
    let mi = qp.b_in.len();
    assert!(mi <= 20, "enumeration over {mi} rows is too expensive");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << mi) {
        let act: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let m = meq + act.len();
        if m > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + m, n + m);
        let mut rhs = DVector::zeros(n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        rhs.rows_mut(0, n).copy_from(&(-&qp.g));
        for r in 0..m {
            let (row, b) = if r < meq { (qp.a_eq.row(r), qp.b_eq[r]) } else { (qp.a_in.row(act[r - meq]), qp.b_in[act[r - meq]]) };
            kkt.view_mut((n + r, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + r), (n, 1)).copy_from(&row.transpose());
            rhs[n + r] = b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        let primal_ok = (&qp.a_in * &z - &qp.b_in).iter().all(|v| *v <= 1e-9);
        let dual_ok = (0..act.len()).all(|i| sol[n + meq + i] >= -1e-9);
        if primal_ok && dual_ok {
            let obj = qp.objective(&z);
            if best.as_ref().map_or(true, |(o, _)| obj < *o) {
                best = Some((obj, z));
            }
        }
    }
    best.map(|(_, z)| z)
}
