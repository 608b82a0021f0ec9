//! Numerical self-checks: integrator order, sensitivities, QP, attitude
//! drift, hover trim, the affine actuator map and a model-match closed loop.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controllers::{Controller, ControllerConfig, ControllerKind};
use crate::error::Result;
use crate::integrator::{rk4_interval_with_sensitivities, rk4_step, OdeFunction};
use crate::model::{
    actuator_constraint_matrices, deriv_lol, deriv_standard, LolModel, MotorVariant, State13, StandardModel, StatePid20, LOL_DIM,
    QUAT,
};
use crate::params::VehicleParams;
use crate::plant::{run_closed_loop, Plant, PlantConfig};
use crate::qp::{solve_by_enumeration, solve_dense, DenseQp};
use crate::so3::{UnitQuaternion, Vec3};
use crate::trajectories::ReferenceTrajectory;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    /// Human-readable acceptance band, e.g. `< 1e-5`.
    pub limit: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<22} {:<12.4e} (want {})", self.name, self.value, self.limit)
    }
}

fn below(name: &'static str, value: f64, limit: f64) -> CheckResult {
    CheckResult { name, passed: value < limit, value, limit: format!("< {limit:e}") }
}

/// Knobs of the suite. `jacobian_gain_sign = -1` linearizes with flipped rate
/// gains, which the Jacobian check must catch.
#[derive(Debug, Clone)]
pub struct Selftest {
    pub params: VehicleParams,
    pub jacobian_gain_sign: f64,
    pub seed: u64,
}

impl Default for Selftest {
    fn default() -> Self {
        Self { params: VehicleParams::default(), jacobian_gain_sign: 1.0, seed: 7 }
    }
}

/// Hides the quaternion block so RK4 does not renormalize; the raw map is what
/// the sensitivities differentiate.
struct Raw<'a, M>(&'a M);

impl<M: OdeFunction> OdeFunction for Raw<'_, M> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn eval<D: Real>(&self, x: &[D], u: &[D], dx: &mut [D]) {
        self.0.eval(x, u, dx)
    }
}

/// A moving, rotating, spun-up LoL state and an off-trim input.
fn busy_state(params: &VehicleParams) -> (Vec<f64>, Vec<f64>) {
    let mut s = StatePid20::hover(params, Vec3::new(0.3, -0.2, 1.5));
    s.rigid.q = UnitQuaternion::from_axis_angle(Vec3::new(0.3, -0.5, 0.8).normalize(), 0.7);
    s.rigid.v = Vec3::new(2.0, -1.0, 0.5);
    s.rigid.omega = Vec3::new(1.5, -2.0, 0.8);
    s.z = Vec3::new(0.05, -0.02, 0.01);
    s.r = [0.45, 0.5, 0.55, 0.4];
    (s.to_vec(), vec![params.hover_throttle() + 0.1, 0.5, -1.0, 0.4])
}

impl Selftest {
    pub fn run(&self) -> Vec<CheckResult> {
        let start = Instant::now();
        let mut out = vec![
            self.rk4_order(),
            self.jacobian(),
            self.qp_enumeration(),
            self.quaternion_drift(),
            self.hover_trim(),
            self.actuator_map(),
        ];
        out.push(match self.model_match() {
            Ok(rmse) => below("model_match_rmse_m", rmse, 0.02),
            Err(_) => CheckResult { name: "model_match_rmse_m", passed: false, value: f64::NAN, limit: "< 2e-2".into() },
        });
        out.push(below("runtime_s", start.elapsed().as_secs_f64(), 60.0));
        out
    }

    /// Empirical order from the error ratio of halved step sizes.
    pub fn rk4_order(&self) -> CheckResult {
        let model = LolModel::new(self.params.clone());
        let (x0, u) = busy_state(&self.params);
        let horizon = 0.2;
        let integrate = |steps: usize| {
            let h = horizon / steps as f64;
            let mut x = x0.clone();
            for _ in 0..steps {
                x = rk4_step(&Raw(&model), &x, &u, h).expect("finite");
            }
            x
        };
        let truth = integrate(4096);
        let err = |steps: usize| integrate(steps).iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let order = (err(16) / err(32)).log2();
        CheckResult { name: "rk4_order", passed: (3.7..=4.3).contains(&order), value: order, limit: "in [3.7, 4.3]".into() }
    }

    /// Forward-mode sensitivities of one shooting interval against central
    /// differences; error relative to `max(|fd|, 1)` per entry.
    pub fn jacobian(&self) -> CheckResult {
        let truth = LolModel::new(self.params.clone());
        let mut lin_params = self.params.clone();
        lin_params.kp = lin_params.kp.map(|k| k * self.jacobian_gain_sign);
        lin_params.ki = lin_params.ki.map(|k| k * self.jacobian_gain_sign);
        let linearized = LolModel::new(lin_params);
        let (x, u) = busy_state(&self.params);
        let (dt, substeps) = (0.05, 2);
        let sens = rk4_interval_with_sensitivities(&Raw(&linearized), &x, &u, dt, substeps).expect("finite");
        let flow = |x: &[f64], u: &[f64]| -> Vec<f64> {
            let h = dt / substeps as f64;
            let mut x = x.to_vec();
            for _ in 0..substeps {
                x = rk4_step(&Raw(&truth), &x, u, h).expect("finite");
            }
            x
        };
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..x.len() + u.len() {
            let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
            if j < x.len() {
                xp[j] += eps;
                xm[j] -= eps;
            } else {
                up[j - x.len()] += eps;
                um[j - x.len()] -= eps;
            }
            let (fp, fm) = (flow(&xp, &up), flow(&xm, &um));
            for i in 0..x.len() {
                let fd = (fp[i] - fm[i]) / (2.0 * eps);
                let ad = if j < x.len() { sens.a[(i, j)] } else { sens.b[(i, j - x.len())] };
                worst = worst.max((ad - fd).abs() / fd.abs().max(1.0));
            }
        }
        below("jacobian_ad_vs_fd", worst, 1e-5)
    }

    /// Random small QPs against brute-force active-set enumeration.
    pub fn qp_enumeration(&self) -> CheckResult {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let qp = random_qp(&mut rng);
            let err = match (solve_dense(&qp), solve_by_enumeration(&qp)) {
                (Ok(s), Some(z)) => (&s.z - z).amax(),
                _ => f64::INFINITY,
            };
            worst = worst.max(err);
        }
        below("qp_vs_enumeration", worst, 1e-8)
    }

    /// Largest unit-norm defect after any of 1000 fast-spinning RK4 steps.
    pub fn quaternion_drift(&self) -> CheckResult {
        let model = LolModel::new(self.params.clone());
        let (mut x, _) = busy_state(&self.params);
        let u = [self.params.hover_throttle(), 5.0, -4.0, 3.0];
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            x = rk4_step(&model, &x, &u, 1e-3).expect("finite");
            let n = x[QUAT..QUAT + 4].iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max((n - 1.0).abs());
        }
        below("quaternion_drift", worst, 1e-9)
    }

    /// Derivative norm at the hover trim of both prediction models.
    pub fn hover_trim(&self) -> CheckResult {
        let p = &self.params;
        let lol = deriv_lol(&LolModel::new(p.clone()), &StatePid20::hover(p, Vec3::new(0.0, 0.0, 1.0)), p.hover_throttle(), Vec3::zeros()).norm();
        let mut worst = lol;
        for variant in [MotorVariant::None, MotorVariant::Speed, MotorVariant::Force] {
            let m = StandardModel::new(p.clone(), variant);
            let dx = deriv_standard(&m, &m.hover_state(Vec3::new(0.0, 0.0, 1.0)), &m.hover_input()).expect("shapes match");
            worst = worst.max(dx.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        below("hover_trim", worst, 1e-9)
    }

    /// `C x + D u` against the mixer applied to the proportional rate loop.
    pub fn actuator_map(&self) -> CheckResult {
        let model = LolModel::new(self.params.clone());
        let (c, d) = actuator_constraint_matrices(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xC0);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let x = DVector::from_fn(LOL_DIM, |_, _| rng.gen_range(-3.0..3.0));
            let u = DVector::from_vec(vec![rng.gen_range(0.0..1.0), rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)]);
            let affine = &c * &x + &d * &u;
            let direct = model.mixer_rows(x.as_slice(), u.as_slice());
            for i in 0..4 {
                worst = worst.max((affine[i] - direct[i]).abs());
            }
        }
        below("actuator_map", worst, 1e-12)
    }

    /// Tracks a reference generated by the LoL model itself, on an ideal plant.
    pub fn model_match(&self) -> Result<f64> {
        let cfg = ControllerConfig::default_for(ControllerKind::Lol, &self.params);
        let flight = 4.0;
        // the horizon must not look past the end of the reference
        let reference = model_match_reference(&self.params, flight + cfg.ocp.horizon as f64 * cfg.ocp.dt)?;
        let mut plant = Plant::at_reference(&self.params, PlantConfig::ideal(), &reference)?;
        let mut ctrl = Controller::new(cfg, &self.params)?;
        let log = run_closed_loop(&mut plant, &mut ctrl, &reference, flight)?;
        Ok(crate::bench::tracking_rmse(&log, &reference))
    }
}

/// A feasible reference: the LoL model's own response to a smooth open-loop
/// throttle/rate schedule, sampled every 10 ms.
pub fn model_match_reference(params: &VehicleParams, duration: f64) -> Result<ReferenceTrajectory> {
    let model = LolModel::new(params.clone());
    let mut x = StatePid20::hover(params, Vec3::new(0.0, 0.0, 2.0)).to_vec();
    let h = 1e-3;
    let per_sample = 10;
    let samples = (duration / (h * per_sample as f64)).round() as usize;
    let mut t = Vec::with_capacity(samples + 1);
    let mut states = Vec::with_capacity(samples + 1);
    for k in 0..=samples {
        t.push(k as f64 * h * per_sample as f64);
        states.push(State13::from_slice(&x));
        if k == samples {
            break;
        }
        for i in 0..per_sample {
            let s = (k * per_sample + i) as f64 * h;
            let u = [
                params.hover_throttle() + 0.015 * (2.0 * std::f64::consts::PI * s / 2.0).sin(),
                0.3 * (2.0 * std::f64::consts::PI * s / 1.6).sin(),
                0.3 * (2.0 * std::f64::consts::PI * s / 2.3).sin(),
                0.15 * (2.0 * std::f64::consts::PI * s / 4.0).sin(),
            ];
            x = rk4_step(&model, &x, &u, h)?;
        }
    }
    ReferenceTrajectory::from_states(t, &states, "model-match", None)
}

fn random_qp(rng: &mut ChaCha8Rng) -> DenseQp {
    let n = rng.gen_range(2..=5);
    let meq = rng.gen_range(0..=1);
    let mi = rng.gen_range(1..=8);
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    // constraints built around a known feasible point
    let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(meq, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &z0;
    let a_in = DMatrix::from_fn(mi, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_in = &a_in * &z0 + DVector::from_fn(mi, |_, _| rng.gen_range(0.0..0.5));
    DenseQp { h, g, a_eq, b_eq, a_in, b_in }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_checks_pass() {
        let s = Selftest::default();
        for c in [s.rk4_order(), s.jacobian(), s.qp_enumeration(), s.quaternion_drift(), s.hover_trim(), s.actuator_map()] {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn corrupted_gain_sign_fails_the_jacobian_check() {
        let s = Selftest { jacobian_gain_sign: -1.0, ..Selftest::default() };
        let c = s.jacobian();
        assert!(!c.passed);
        assert_eq!(c.name, "jacobian_ad_vs_fd");
        assert!(c.to_string().starts_with("FAIL jacobian_ad_vs_fd"));
    }

    #[test]
    fn model_match_reference_is_smooth_and_feasible() {
        let p = VehicleParams::default();
        let r = model_match_reference(&p, 4.0).unwrap();
        assert_eq!(r.len(), 401);
        assert!(r.max_body_rate() < 1.0);
        assert!(r.p.iter().all(|p| p.z > 0.5));
    }
}
