//! Multiple-shooting optimal control problem and its Gauss-Newton SQP solver.
//!
//! Each SQP iteration linearizes the RK4 transcription around the current
//! guess ([`linearize`]), condenses the stage-wise QP onto the input
//! increments and solves it with a dense dual active-set method
//! ([`solve_qp`]). Input bounds and the affine actuator rows are hard; body-rate
//! bounds are softened with one nonnegative slack per stage and axis.
//!
//! In real-time-iteration mode exactly one such iteration is performed per call;
//! in full mode iterations continue, globalized by a backtracking line search
//! on an ℓ1 merit function, until the step and the shooting gaps are below
//! `kkt_tol`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{rk4_interval, rk4_interval_with_sensitivities, LinearOde, OdeFunction};
use crate::model::{actuator_constraint_matrices, LolModel, StandardModel, RATE};
use crate::qp::{kkt_residual, solve_dense, DenseQp, QpStatus};
use crate::so3::{renormalize_block, UnitQuaternion};

/// Affine rows `lo <= C x + D u <= hi` applied at every shooting node `0..N`.
#[derive(Debug, Clone)]
pub struct ActuatorRows {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// Dynamics plus the structural information the OCP needs.
pub trait OcpModel: OdeFunction {
    /// Offset of the three body rates, if rate bounds apply to this model.
    fn rate_offset(&self) -> Option<usize> {
        None
    }

    /// Mixer-output rows for models that embed the rate loop.
    fn actuator_rows(&self, _lo: f64, _hi: f64) -> Option<ActuatorRows> {
        None
    }
}

impl OcpModel for StandardModel {
    fn rate_offset(&self) -> Option<usize> {
        Some(RATE)
    }
}

impl OcpModel for LolModel {
    fn rate_offset(&self) -> Option<usize> {
        Some(RATE)
    }

    fn actuator_rows(&self, lo: f64, hi: f64) -> Option<ActuatorRows> {
        let (c, d) = actuator_constraint_matrices(&self.params);
        Some(ActuatorRows { c, d, lo, hi })
    }
}

impl OcpModel for LinearOde {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpConfig {
    /// Number of shooting intervals N.
    pub horizon: usize,
    /// Shooting interval, s.
    pub dt: f64,
    /// RK4 steps per shooting interval.
    #[serde(default = "one")]
    pub substeps: usize,
    /// Diagonal stage weights on the state error (length = error dimension).
    pub q: Vec<f64>,
    /// Diagonal weights on `u − u_ref`.
    pub r: Vec<f64>,
    /// Diagonal terminal weights.
    pub terminal: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub rate_min: [f64; 3],
    pub rate_max: [f64; 3],
    /// Bounds on the mixer rows; `None` removes the rows.
    pub actuator_bounds: Option<(f64, f64)>,
    pub max_sqp_iters: usize,
    pub kkt_tol: f64,
    /// Quadratic penalty on rate-bound slacks.
    pub slack_weight: f64,
    /// Linear penalty on rate-bound slacks.
    pub slack_weight_l1: f64,
}

fn one() -> usize {
    1
}

impl OcpConfig {
    pub fn validate(&self, nx_err: usize, nu: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.horizon < 2 {
            return bad(format!("horizon must be >= 2, got {}", self.horizon));
        }
        if !(self.dt > 0.0) || self.substeps == 0 {
            return bad(format!("dt and substeps must be positive, got {} / {}", self.dt, self.substeps));
        }
        if self.q.len() != nx_err || self.terminal.len() != nx_err || self.r.len() != nu {
            return bad(format!(
                "weight lengths (q {}, terminal {}, r {}) do not match error dim {nx_err} / input dim {nu}",
                self.q.len(),
                self.terminal.len(),
                self.r.len()
            ));
        }
        if self.q.iter().chain(&self.r).chain(&self.terminal).any(|w| !(*w >= 0.0)) {
            return bad("weights must be nonnegative".into());
        }
        if self.u_min.len() != nu || self.u_max.len() != nu || self.u_min.iter().zip(&self.u_max).any(|(l, h)| l > h) {
            return bad("input bounds must have input length and be ordered".into());
        }
        if self.rate_min.iter().zip(&self.rate_max).any(|(l, h)| l > h) {
            return bad("rate bounds must be ordered".into());
        }
        if let Some((lo, hi)) = self.actuator_bounds {
            if lo > hi {
                return bad("actuator bounds must be ordered".into());
            }
        }
        if !(self.slack_weight > 0.0) || self.slack_weight_l1 < 0.0 {
            return bad("slack weights must be positive".into());
        }
        Ok(())
    }
}

/// Initial condition and reference for one solve.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub x0: Vec<f64>,
    /// Input used to seed a cold start.
    pub u0: Vec<f64>,
    /// Desired states at nodes `0..=N`.
    pub x_ref: Vec<Vec<f64>>,
    /// Desired inputs at nodes `0..N`.
    pub u_ref: Vec<Vec<f64>>,
}

/// Primal iterate of the shooting problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl ShootingTrajectory {
    /// Open-loop RK4 rollout of `inputs` from `x0`.
    pub fn rollout<M: OdeFunction>(model: &M, x0: &[f64], inputs: &[Vec<f64>], dt: f64, substeps: usize) -> Result<Self> {
        let mut states = vec![DVector::from_column_slice(x0)];
        for u in inputs {
            let next = rk4_interval(model, states.last().unwrap().as_slice(), u, dt, substeps)?;
            states.push(DVector::from_vec(next));
        }
        Ok(Self { states, inputs: inputs.iter().map(|u| DVector::from_column_slice(u)).collect() })
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    /// One linearization + QP + full step.
    Rti,
    /// Iterate to convergence.
    FullSqp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QpOutcome {
    Solved(QpStatus),
    Infeasible,
    Failed,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// max(‖last step‖∞, ‖shooting gaps‖∞) after the final iteration.
    pub kkt_residual: f64,
    pub cost: f64,
    pub iterations: usize,
    pub qp_iterations: usize,
    /// Wall-clock time of the solve, s.
    pub solve_time: f64,
    pub qp_status: QpOutcome,
    /// Set when an RTI step failed and the returned trajectory is the unimproved guess.
    pub degraded: bool,
    /// Largest body-rate bound violation of the returned trajectory.
    pub max_rate_violation: f64,
    /// Merit before and after each accepted full-SQP step, both at that step's penalty.
    pub merit_history: Vec<(f64, f64)>,
}

impl OcpSolution {
    pub fn trajectory(&self) -> ShootingTrajectory {
        ShootingTrajectory { states: self.states.clone(), inputs: self.inputs.clone() }
    }

    /// Structured diagnostics row.
    pub fn diagnostics(&self) -> SolverDiagnostics {
        SolverDiagnostics {
            iterations: self.iterations,
            qp_iterations: self.qp_iterations,
            kkt: self.kkt_residual,
            cost: self.cost,
            solve_time_us: self.solve_time * 1e6,
            degraded: self.degraded,
        }
    }
}

/// Per-solve diagnostic row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub qp_iterations: usize,
    pub kkt: f64,
    pub cost: f64,
    pub solve_time_us: f64,
    pub degraded: bool,
}

/// Shortest-arc rotation error `2·vec(q_ref⁻¹ ⊗ q)`.
pub fn quaternion_error(q_ref: UnitQuaternion, q: UnitQuaternion) -> [f64; 3] {
    let (e, _) = quaternion_error_jacobian(&q_ref.to_array(), &q.to_array());
    e
}

/// Error and its (constant, up to sign) Jacobian with respect to `q`.
fn quaternion_error_jacobian(q_ref: &[f64], q: &[f64]) -> ([f64; 3], [[f64; 4]; 3]) {
    let (w, x, y, z) = (q_ref[0], -q_ref[1], -q_ref[2], -q_ref[3]);
    // rows of the left-multiplication matrix of conj(q_ref)
    let scalar_row = [w, -x, -y, -z];
    let rows = [[x, w, -z, y], [y, z, w, -x], [z, -y, x, w]];
    let dot = |r: &[f64; 4]| r[0] * q[0] + r[1] * q[1] + r[2] * q[2] + r[3] * q[3];
    let sign = if dot(&scalar_row) < 0.0 { -2.0 } else { 2.0 };
    let e = [0, 1, 2].map(|i| sign * dot(&rows[i]));
    let jac = rows.map(|r| r.map(|c| sign * c));
    (e, jac)
}

/// Dimension of the state error used in the cost.
pub fn error_dim<M: OdeFunction>(model: &M) -> usize {
    model.state_dim() - usize::from(model.quaternion_offset().is_some())
}

/// State error `x ⊖ x_ref` and its Jacobian with respect to `x`.
pub fn state_error<M: OdeFunction>(model: &M, x: &[f64], x_ref: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let nx = x.len();
    let ne = error_dim(model);
    let mut e = DVector::zeros(ne);
    let mut jac = DMatrix::zeros(ne, nx);
    match model.quaternion_offset() {
        None => {
            for i in 0..nx {
                e[i] = x[i] - x_ref[i];
                jac[(i, i)] = 1.0;
            }
        }
        Some(o) => {
            for i in 0..o {
                e[i] = x[i] - x_ref[i];
                jac[(i, i)] = 1.0;
            }
            let (qe, qj) = quaternion_error_jacobian(&x_ref[o..o + 4], &x[o..o + 4]);
            for r in 0..3 {
                e[o + r] = qe[r];
                for c in 0..4 {
                    jac[(o + r, o + c)] = qj[r][c];
                }
            }
            for i in o + 4..nx {
                e[i - 1] = x[i] - x_ref[i];
                jac[(i - 1, i)] = 1.0;
            }
        }
    }
    (e, jac)
}

/// Stage-wise QP in the increments `(Δx, Δu)` around a guess.
///
/// ```text
/// min  Σ_k ½Δx_kᵀ Hx_k Δx_k + gx_kᵀ Δx_k + ½Δu_kᵀ diag(hu_k) Δu_k + gu_kᵀ Δu_k + slack terms
/// s.t. Δx_0 = 0,  Δx_{k+1} = A_k Δx_k + B_k Δu_k + c_k
///      du_lo_k <= Δu_k <= du_hi_k
///      rate_lo_k − s_k <= Δω_k <= rate_hi_k + s_k,  s_k >= 0        (k = 1..N)
///      act_lo_k <= C Δx_k + D Δu_k <= act_hi_k                      (k = 0..N−1)
/// ```
#[derive(Debug, Clone)]
pub struct QpSubproblem {
    pub nx: usize,
    pub nu: usize,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    /// Shooting gaps `f_RK4(x_k, u_k) − x_{k+1}`.
    pub gaps: Vec<DVector<f64>>,
    /// Gauss-Newton Hessian blocks, nodes `0..=N`.
    pub hess_x: Vec<DMatrix<f64>>,
    pub grad_x: Vec<DVector<f64>>,
    pub hess_u: Vec<DVector<f64>>,
    pub grad_u: Vec<DVector<f64>>,
    pub du_lo: Vec<DVector<f64>>,
    pub du_hi: Vec<DVector<f64>>,
    pub rate_offset: Option<usize>,
    /// Bounds on `Δω_k` for nodes `1..=N` (index 0 unused).
    pub rate_lo: Vec<[f64; 3]>,
    pub rate_hi: Vec<[f64; 3]>,
    pub slack_weight: f64,
    pub slack_weight_l1: f64,
    pub actuator: Option<(DMatrix<f64>, DMatrix<f64>)>,
    pub act_lo: Vec<DVector<f64>>,
    pub act_hi: Vec<DVector<f64>>,
    /// Cost of the guess.
    pub cost: f64,
}

/// Increments returned by [`solve_qp`].
#[derive(Debug, Clone)]
pub struct QpStep {
    pub dx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    /// Rate slacks for nodes `1..=N` (index 0 is zero).
    pub slacks: Vec<[f64; 3]>,
    pub status: QpStatus,
    /// KKT residual of the condensed QP.
    pub kkt: f64,
    pub iterations: usize,
}

fn weighted_cost<M: OdeFunction>(model: &M, cfg: &OcpConfig, problem: &OcpProblem, traj: &ShootingTrajectory, rate_offset: Option<usize>) -> f64 {
    let n = cfg.horizon;
    let mut j = 0.0;
    for k in 1..=n {
        let (e, _) = state_error(model, traj.states[k].as_slice(), &problem.x_ref[k]);
        let w = if k == n { &cfg.terminal } else { &cfg.q };
        j += e.iter().zip(w).map(|(ei, wi)| wi * ei * ei).sum::<f64>();
        if let Some(o) = rate_offset {
            for a in 0..3 {
                let v = traj.states[k][o + a];
                let viol = (v - cfg.rate_max[a]).max(cfg.rate_min[a] - v).max(0.0);
                j += cfg.slack_weight * viol * viol + cfg.slack_weight_l1 * viol;
            }
        }
    }
    for k in 0..n {
        for i in 0..traj.inputs[k].len() {
            let d = traj.inputs[k][i] - problem.u_ref[k][i];
            j += cfg.r[i] * d * d;
        }
    }
    j
}

fn gaps_of<M: OdeFunction>(model: &M, dt: f64, substeps: usize, traj: &ShootingTrajectory) -> Result<Vec<DVector<f64>>> {
    (0..traj.horizon())
        .map(|k| {
            let next = rk4_interval(model, traj.states[k].as_slice(), traj.inputs[k].as_slice(), dt, substeps)?;
            Ok(DVector::from_vec(next) - &traj.states[k + 1])
        })
        .collect()
}

/// Largest `‖f_RK4(x_k, u_k) − x_{k+1}‖∞` over the horizon.
pub fn dynamics_residual<M: OdeFunction>(model: &M, dt: f64, substeps: usize, traj: &ShootingTrajectory) -> Result<f64> {
    Ok(gaps_of(model, dt, substeps, traj)?.iter().map(|g| g.amax()).fold(0.0, f64::max))
}

/// Builds the Gauss-Newton QP around `guess` (whose first state must equal `x0`).
pub fn linearize<M: OcpModel>(model: &M, cfg: &OcpConfig, problem: &OcpProblem, guess: &ShootingTrajectory) -> Result<QpSubproblem> {
    let n = cfg.horizon;
    let nx = model.state_dim();
    let nu = model.input_dim();
    if guess.states.len() != n + 1 || guess.inputs.len() != n || problem.x_ref.len() != n + 1 || problem.u_ref.len() != n {
        return Err(Error::InvalidParam("guess or reference length does not match the horizon".into()));
    }
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut gaps = Vec::with_capacity(n);
    for k in 0..n {
        let s = rk4_interval_with_sensitivities(model, guess.states[k].as_slice(), guess.inputs[k].as_slice(), cfg.dt, cfg.substeps)?;
        gaps.push(&s.x_next - &guess.states[k + 1]);
        a.push(s.a);
        b.push(s.b);
    }

    let mut hess_x = vec![DMatrix::zeros(nx, nx)];
    let mut grad_x = vec![DVector::zeros(nx)];
    for k in 1..=n {
        let (e, jac) = state_error(model, guess.states[k].as_slice(), &problem.x_ref[k]);
        let w = DVector::from_column_slice(if k == n { &cfg.terminal } else { &cfg.q });
        let mut wj = jac.clone();
        for (r, wr) in w.iter().enumerate() {
            wj.row_mut(r).scale_mut(*wr);
        }
        hess_x.push(jac.transpose() * &wj * 2.0);
        grad_x.push(wj.transpose() * e * 2.0);
    }

    let mut hess_u = Vec::with_capacity(n);
    let mut grad_u = Vec::with_capacity(n);
    let mut du_lo = Vec::with_capacity(n);
    let mut du_hi = Vec::with_capacity(n);
    for k in 0..n {
        let u = &guess.inputs[k];
        hess_u.push(DVector::from_iterator(nu, cfg.r.iter().map(|r| 2.0 * r)));
        grad_u.push(DVector::from_iterator(nu, (0..nu).map(|i| 2.0 * cfg.r[i] * (u[i] - problem.u_ref[k][i]))));
        du_lo.push(DVector::from_iterator(nu, (0..nu).map(|i| cfg.u_min[i] - u[i])));
        du_hi.push(DVector::from_iterator(nu, (0..nu).map(|i| cfg.u_max[i] - u[i])));
    }

    let rate_offset = model.rate_offset();
    let mut rate_lo = vec![[0.0; 3]; n + 1];
    let mut rate_hi = vec![[0.0; 3]; n + 1];
    if let Some(o) = rate_offset {
        for k in 1..=n {
            for ax in 0..3 {
                let w = guess.states[k][o + ax];
                rate_lo[k][ax] = cfg.rate_min[ax] - w;
                rate_hi[k][ax] = cfg.rate_max[ax] - w;
            }
        }
    }

    let actuator = cfg.actuator_bounds.and_then(|(lo, hi)| model.actuator_rows(lo, hi));
    let mut act_lo = Vec::new();
    let mut act_hi = Vec::new();
    if let Some(rows) = &actuator {
        for k in 0..n {
            let val = &rows.c * &guess.states[k] + &rows.d * &guess.inputs[k];
            act_lo.push(val.map(|v| rows.lo - v));
            act_hi.push(val.map(|v| rows.hi - v));
        }
    }

    Ok(QpSubproblem {
        nx,
        nu,
        a,
        b,
        gaps,
        hess_x,
        grad_x,
        hess_u,
        grad_u,
        du_lo,
        du_hi,
        rate_offset,
        rate_lo,
        rate_hi,
        slack_weight: cfg.slack_weight,
        slack_weight_l1: cfg.slack_weight_l1,
        actuator: actuator.map(|r| (r.c, r.d)),
        act_lo,
        act_hi,
        cost: weighted_cost(model, cfg, problem, guess, rate_offset),
    })
}

/// Condensed dense form of a [`QpSubproblem`]; variables are `[Δu_0..Δu_{N−1}, s_1..s_N]`.
pub struct CondensedQp {
    pub dense: DenseQp,
    /// `Δx_k = M_k Δu + d_k`
    pub m: Vec<DMatrix<f64>>,
    pub d: Vec<DVector<f64>>,
    pub n_inputs: usize,
}

/// One inequality `a·Δu − s ≤ b` of the condensed problem, `s` being the
/// rate slack of `(node, axis)` for soft rows.
struct CandidateRow {
    a: DVector<f64>,
    b: f64,
    slack: Option<usize>,
    /// Range of the bounded quantity, used to judge closeness to the bound.
    width: f64,
}

struct CondensedCost {
    h: DMatrix<f64>,
    g: DVector<f64>,
    m: Vec<DMatrix<f64>>,
    d: Vec<DVector<f64>>,
}

fn condense_cost(qp: &QpSubproblem) -> CondensedCost {
    let n = qp.a.len();
    let (nx, nu) = (qp.nx, qp.nu);
    let nuu = n * nu;

    let mut m = vec![DMatrix::zeros(nx, nuu)];
    let mut d = vec![DVector::zeros(nx)];
    for k in 0..n {
        let mut next = DMatrix::zeros(nx, nuu);
        if k > 0 {
            let prev = m[k].columns(0, k * nu);
            next.columns_mut(0, k * nu).copy_from(&(&qp.a[k] * prev));
        }
        next.columns_mut(k * nu, nu).copy_from(&qp.b[k]);
        m.push(next);
        d.push(&qp.a[k] * &d[k] + &qp.gaps[k]);
    }

    let mut h = DMatrix::zeros(nuu, nuu);
    let mut g = DVector::zeros(nuu);
    for k in 0..n {
        for i in 0..nu {
            h[(k * nu + i, k * nu + i)] += qp.hess_u[k][i].max(1e-10);
            g[k * nu + i] += qp.grad_u[k][i];
        }
    }
    for k in 1..=n {
        let cols = k * nu;
        let mk = m[k].columns(0, cols);
        let pm = &qp.hess_x[k] * mk;
        let block = mk.transpose() * &pm;
        let mut hv = h.view_mut((0, 0), (cols, cols));
        hv += block;
        let lin = &qp.hess_x[k] * &d[k] + &qp.grad_x[k];
        let gl = mk.transpose() * lin;
        let mut gv = g.rows_mut(0, cols);
        gv += gl;
    }
    CondensedCost { h, g, m, d }
}

fn candidate_rows(qp: &QpSubproblem, m: &[DMatrix<f64>], d: &[DVector<f64>]) -> Vec<CandidateRow> {
    let n = qp.a.len();
    let nu = qp.nu;
    let nuu = n * nu;
    let mut rows = Vec::new();
    for k in 0..n {
        for i in 0..nu {
            let mut a = DVector::zeros(nuu);
            a[k * nu + i] = 1.0;
            let width = qp.du_hi[k][i] - qp.du_lo[k][i];
            if qp.du_hi[k][i].is_finite() {
                rows.push(CandidateRow { a: a.clone(), b: qp.du_hi[k][i], slack: None, width });
            }
            if qp.du_lo[k][i].is_finite() {
                rows.push(CandidateRow { a: -a, b: -qp.du_lo[k][i], slack: None, width });
            }
        }
    }
    if let Some(o) = qp.rate_offset {
        for k in 1..=n {
            for ax in 0..3 {
                let slack = Some(3 * (k - 1) + ax);
                let a = m[k].row(o + ax).transpose();
                let free = d[k][o + ax];
                let width = qp.rate_hi[k][ax] - qp.rate_lo[k][ax];
                if qp.rate_hi[k][ax].is_finite() {
                    rows.push(CandidateRow { a: a.clone(), b: qp.rate_hi[k][ax] - free, slack, width });
                }
                if qp.rate_lo[k][ax].is_finite() {
                    rows.push(CandidateRow { a: -a, b: free - qp.rate_lo[k][ax], slack, width });
                }
            }
        }
    }
    if let Some((c, dm)) = &qp.actuator {
        for k in 0..n {
            let cm = c * &m[k];
            let cd = c * &d[k];
            for row in 0..c.nrows() {
                let mut a = cm.row(row).transpose();
                for i in 0..nu {
                    a[k * nu + i] += dm[(row, i)];
                }
                let width = qp.act_hi[k][row] - qp.act_lo[k][row];
                rows.push(CandidateRow { a: a.clone(), b: qp.act_hi[k][row] - cd[row], slack: None, width });
                rows.push(CandidateRow { a: -a, b: cd[row] - qp.act_lo[k][row], slack: None, width });
            }
        }
    }
    rows
}

/// Dense QP over `Δu` plus one slack per soft `(node, axis)` listed in
/// `slacks`, with the candidate rows `selected`.
fn assemble(qp: &QpSubproblem, cost: &CondensedCost, rows: &[CandidateRow], selected: &[usize], slacks: &[usize]) -> DenseQp {
    let nuu = cost.g.len();
    let nz = nuu + slacks.len();
    let mut h = DMatrix::zeros(nz, nz);
    h.view_mut((0, 0), (nuu, nuu)).copy_from(&cost.h);
    let mut g = DVector::zeros(nz);
    g.rows_mut(0, nuu).copy_from(&cost.g);
    for j in 0..slacks.len() {
        h[(nuu + j, nuu + j)] = 2.0 * qp.slack_weight;
        g[nuu + j] = qp.slack_weight_l1;
    }
    let n_rows = selected.len() + slacks.len();
    let mut a_in = DMatrix::zeros(n_rows, nz);
    let mut b_in = DVector::zeros(n_rows);
    for (i, &r) in selected.iter().enumerate() {
        let row = &rows[r];
        a_in.view_mut((i, 0), (1, nuu)).copy_from(&row.a.transpose());
        if let Some(s) = row.slack {
            let j = slacks.iter().position(|v| *v == s).expect("slack registered with its row");
            a_in[(i, nuu + j)] = -1.0;
        }
        b_in[i] = row.b;
    }
    for j in 0..slacks.len() {
        a_in[(selected.len() + j, nuu + j)] = -1.0;
    }
    DenseQp { h, g, a_eq: DMatrix::zeros(0, nz), b_eq: DVector::zeros(0), a_in, b_in }
}

/// Eliminates the state increments; keeps every inequality row.
pub fn condense(qp: &QpSubproblem) -> CondensedQp {
    let cost = condense_cost(qp);
    let rows = candidate_rows(qp, &cost.m, &cost.d);
    let selected: Vec<usize> = (0..rows.len()).collect();
    let slacks: Vec<usize> = if qp.rate_offset.is_some() { (0..3 * qp.a.len()).collect() } else { Vec::new() };
    let dense = assemble(qp, &cost, &rows, &selected, &slacks);
    CondensedQp { dense, n_inputs: cost.g.len(), m: cost.m, d: cost.d }
}

/// Rows whose bound lies closer than this fraction of their range to the
/// linearization point enter the first QP.
const SCREEN_FRACTION: f64 = 0.2;
const SCREEN_ROUNDS: usize = 20;

/// Solves the stage-wise QP by condensing and a dense active-set solve.
///
/// Only rows near their bound are handed to the dense solver; after each solve
/// the remaining rows are checked and any violated one is added before solving
/// again. A solution that satisfies every dropped row solves the full problem,
/// so the result equals the unscreened solve.
pub fn solve_qp(qp: &QpSubproblem) -> Result<QpStep> {
    let n = qp.a.len();
    let cost = condense_cost(qp);
    let rows = candidate_rows(qp, &cost.m, &cost.d);
    let mut included = vec![false; rows.len()];
    for (i, r) in rows.iter().enumerate() {
        included[i] = r.b < SCREEN_FRACTION * r.width || !r.width.is_finite();
    }
    let mut total_iterations = 0;
    for _ in 0..SCREEN_ROUNDS {
        let selected: Vec<usize> = (0..rows.len()).filter(|i| included[*i]).collect();
        let mut slacks: Vec<usize> = selected.iter().filter_map(|i| rows[*i].slack).collect();
        slacks.sort_unstable();
        slacks.dedup();
        let dense = assemble(qp, &cost, &rows, &selected, &slacks);
        let sol = solve_dense(&dense)?;
        total_iterations += sol.iterations;
        let du_all = sol.z.rows(0, cost.g.len()).into_owned();
        let mut added = false;
        for (i, r) in rows.iter().enumerate() {
            if !included[i] && r.a.dot(&du_all) > r.b + 1e-9 {
                included[i] = true;
                added = true;
            }
        }
        if added {
            continue;
        }
        let kkt = kkt_residual(&dense, &sol);
        let dx = (0..=n).map(|k| &cost.m[k] * &du_all + &cost.d[k]).collect();
        let du = (0..n).map(|k| du_all.rows(k * qp.nu, qp.nu).into_owned()).collect();
        let mut step_slacks = vec![[0.0; 3]; n + 1];
        for (j, s) in slacks.iter().enumerate() {
            step_slacks[s / 3 + 1][s % 3] = sol.z[cost.g.len() + j];
        }
        return Ok(QpStep { dx, du, slacks: step_slacks, status: sol.status, kkt, iterations: total_iterations });
    }
    Err(Error::QpInfeasible("row screening did not settle".into()))
}

/// Shifts a solution one node forward, duplicating the last node.
pub fn shift_warm_start(previous: &OcpSolution) -> ShootingTrajectory {
    shift_trajectory(&previous.trajectory())
}

pub fn shift_trajectory(t: &ShootingTrajectory) -> ShootingTrajectory {
    let mut states: Vec<_> = t.states[1..].to_vec();
    states.push(t.states.last().unwrap().clone());
    let mut inputs: Vec<_> = t.inputs[1..].to_vec();
    inputs.push(t.inputs.last().unwrap().clone());
    ShootingTrajectory { states, inputs }
}

/// Gauss-Newton SQP solver for one model. Single caller; create one per controller.
pub struct OcpSolver<M: OcpModel> {
    pub model: M,
    pub config: OcpConfig,
}

impl<M: OcpModel> OcpSolver<M> {
    pub fn new(model: M, config: OcpConfig) -> Result<Self> {
        config.validate(error_dim(&model), model.input_dim())?;
        Ok(Self { model, config })
    }

    /// Rollout of the (clamped) reference inputs from `x0`, so the guess starts
    /// without shooting gaps; falls back to the reference states if it diverges.
    fn cold_guess(&self, problem: &OcpProblem) -> ShootingTrajectory {
        let n = self.config.horizon;
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|k| if k == 0 { &problem.u0 } else { &problem.u_ref[k] })
            .map(|u| u.iter().enumerate().map(|(i, v)| v.clamp(self.config.u_min[i], self.config.u_max[i])).collect())
            .collect();
        if let Ok(t) = ShootingTrajectory::rollout(&self.model, &problem.x0, &inputs, self.config.dt, self.config.substeps) {
            return t;
        }
        let mut states: Vec<DVector<f64>> = problem.x_ref.iter().map(|x| DVector::from_column_slice(x)).collect();
        states[0] = DVector::from_column_slice(&problem.x0);
        ShootingTrajectory { states, inputs: inputs.into_iter().map(DVector::from_vec).collect() }
    }

    fn check_problem(&self, problem: &OcpProblem) -> Result<()> {
        let n = self.config.horizon;
        let nx = self.model.state_dim();
        let nu = self.model.input_dim();
        let ok = problem.x0.len() == nx
            && problem.u0.len() == nu
            && problem.x_ref.len() == n + 1
            && problem.u_ref.len() == n
            && problem.x_ref.iter().all(|x| x.len() == nx)
            && problem.u_ref.iter().all(|u| u.len() == nu);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam("problem dimensions do not match the model and horizon".into()))
        }
    }

    fn apply_step(&self, guess: &ShootingTrajectory, step: &QpStep, alpha: f64) -> ShootingTrajectory {
        let mut out = guess.clone();
        for (x, dx) in out.states.iter_mut().zip(&step.dx) {
            *x += dx * alpha;
            if let Some(o) = self.model.quaternion_offset() {
                renormalize_block(&mut x.as_mut_slice()[o..o + 4]);
            }
        }
        for (u, du) in out.inputs.iter_mut().zip(&step.du) {
            *u += du * alpha;
        }
        out
    }

    fn step_norm(step: &QpStep) -> f64 {
        step.dx.iter().chain(&step.du).map(|v| v.amax()).fold(0.0, f64::max)
    }

    fn merit(&self, problem: &OcpProblem, t: &ShootingTrajectory, mu: f64) -> Result<f64> {
        let gaps = gaps_of(&self.model, self.config.dt, self.config.substeps, t)?;
        let cost = weighted_cost(&self.model, &self.config, problem, t, self.model.rate_offset());
        Ok(cost + mu * gaps.iter().map(|g| g.lp_norm(1)).sum::<f64>())
    }

    fn rate_violation(&self, t: &ShootingTrajectory) -> f64 {
        let Some(o) = self.model.rate_offset() else { return 0.0 };
        let c = &self.config;
        t.states[1..]
            .iter()
            .flat_map(|x| (0..3).map(move |a| (x[o + a] - c.rate_max[a]).max(c.rate_min[a] - x[o + a]).max(0.0)))
            .fold(0.0, f64::max)
    }

    /// Solves `problem`. `warm_start` defaults to the reference (with `x0` at node 0).
    ///
    /// In RTI mode failures of the linearization or the QP do not propagate:
    /// the guess is returned with `degraded = true`.
    pub fn solve(&mut self, problem: &OcpProblem, mode: SolveMode, warm_start: Option<&ShootingTrajectory>) -> Result<OcpSolution> {
        let start = Instant::now();
        self.check_problem(problem)?;
        let mut guess = match warm_start {
            Some(w) if w.states.len() == self.config.horizon + 1 && w.inputs.len() == self.config.horizon => w.clone(),
            Some(_) => return Err(Error::InvalidParam("warm start has the wrong horizon".into())),
            None => self.cold_guess(problem),
        };
        guess.states[0] = DVector::from_column_slice(&problem.x0);

        match mode {
            SolveMode::Rti => {
                let attempt = linearize(&self.model, &self.config, problem, &guess).and_then(|qp| {
                    let gap = qp.gaps.iter().map(|g| g.amax()).fold(0.0, f64::max);
                    solve_qp(&qp).map(|s| (s, gap))
                });
                let (traj, kkt, status, qp_iters, degraded) = match attempt {
                    Ok((step, gap)) => {
                        let kkt = Self::step_norm(&step).max(gap);
                        (self.apply_step(&guess, &step, 1.0), kkt, QpOutcome::Solved(step.status), step.iterations, false)
                    }
                    Err(Error::QpInfeasible(_)) => (guess, f64::INFINITY, QpOutcome::Infeasible, 0, true),
                    Err(_) => (guess, f64::INFINITY, QpOutcome::Failed, 0, true),
                };
                let cost = weighted_cost(&self.model, &self.config, problem, &traj, self.model.rate_offset());
                let max_rate_violation = self.rate_violation(&traj);
                Ok(OcpSolution {
                    states: traj.states,
                    inputs: traj.inputs,
                    kkt_residual: kkt,
                    cost,
                    iterations: 1,
                    qp_iterations: qp_iters,
                    solve_time: start.elapsed().as_secs_f64(),
                    qp_status: status,
                    degraded,
                    max_rate_violation,
                    merit_history: Vec::new(),
                })
            }
            SolveMode::FullSqp => self.solve_full(problem, guess, start),
        }
    }

    fn solve_full(&mut self, problem: &OcpProblem, mut guess: ShootingTrajectory, start: Instant) -> Result<OcpSolution> {
        let mut mu = 1.0;
        let mut kkt = f64::INFINITY;
        let mut iterations = 0;
        let mut qp_iterations = 0;
        let mut status = QpOutcome::Failed;
        let mut history = Vec::new();
        while iterations < self.config.max_sqp_iters {
            iterations += 1;
            let qp = linearize(&self.model, &self.config, problem, &guess)?;
            let step = solve_qp(&qp)?;
            qp_iterations += step.iterations;
            status = QpOutcome::Solved(step.status);
            let gap_l1: f64 = qp.gaps.iter().map(|g| g.lp_norm(1)).sum();
            let gap_inf = qp.gaps.iter().map(|g| g.amax()).fold(0.0, f64::max);
            kkt = Self::step_norm(&step).max(gap_inf);

            // directional derivative of the cost and curvature along the step
            let mut slope = 0.0;
            let mut curv = 0.0;
            for k in 0..=self.config.horizon {
                slope += qp.grad_x[k].dot(&step.dx[k]);
                curv += step.dx[k].dot(&(&qp.hess_x[k] * &step.dx[k]));
            }
            for k in 0..self.config.horizon {
                slope += qp.grad_u[k].dot(&step.du[k]);
                curv += step.du[k].component_mul(&qp.hess_u[k]).dot(&step.du[k]);
            }
            if gap_l1 > 0.0 {
                let needed = (slope + 0.5 * curv) / (0.5 * gap_l1);
                if needed > mu {
                    mu = needed * 1.1;
                }
            }
            let phi0 = self.merit(problem, &guess, mu)?;
            let deriv = slope - mu * gap_l1;

            if kkt < self.config.kkt_tol {
                guess = self.apply_step(&guess, &step, 1.0);
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let trial = self.apply_step(&guess, &step, alpha);
                let phi = self.merit(problem, &trial, mu)?;
                if phi <= phi0 + 1e-4 * alpha * deriv.min(0.0) {
                    accepted = Some((trial, phi));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((trial, phi)) => {
                    guess = trial;
                    history.push((phi0, phi));
                }
                None => break,
            }
        }
        let cost = weighted_cost(&self.model, &self.config, problem, &guess, self.model.rate_offset());
        let max_rate_violation = self.rate_violation(&guess);
        Ok(OcpSolution {
            states: guess.states,
            inputs: guess.inputs,
            kkt_residual: kkt,
            cost,
            iterations,
            qp_iterations,
            solve_time: start.elapsed().as_secs_f64(),
            qp_status: status,
            degraded: false,
            max_rate_violation,
            merit_history: history,
        })
    }
}
