//! Standard-NMPC and LoL-NMPC wrapped as controllers emitting the cascaded
//! command (collective + body rates) every control tick.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::OdeFunction;
use crate::model::{
    channels_to_motors, mix, pid_torque, ControlCommand, LolModel, MotorVariant, StandardModel, State13, LOL_DIM, LOL_INTEGRAL,
    LOL_RPM, RATE, RIGID_DIM,
};
use crate::ocp::{OcpConfig, OcpModel, OcpProblem, OcpSolution, OcpSolver, ShootingTrajectory, SolveMode, SolverDiagnostics};
use crate::params::VehicleParams;
use crate::so3::{renormalize_block, Vec3};
use crate::trajectories::ReferenceTrajectory;

pub const RATE_LIMIT: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ControllerKind {
    Standard { variant: MotorVariant },
    Lol,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Standard { .. } => "standard",
            ControllerKind::Lol => "lol",
        }
    }

    /// `standard` or `lol`; the motor variant only applies to `standard`.
    pub fn parse(name: &str, variant: MotorVariant) -> Result<Self> {
        match name {
            "standard" => Ok(ControllerKind::Standard { variant }),
            "lol" => Ok(ControllerKind::Lol),
            other => Err(Error::InvalidParam(format!("unknown controller `{other}` (standard, lol)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub ocp: OcpConfig,
    /// Command rate, Hz.
    pub rate_hz: f64,
    /// Initialize motor states from measured rotor speeds; otherwise from an
    /// open-loop motor model driven by the issued commands.
    pub rpm_feedback: bool,
    /// Iteration cap of the full SQP solve on the first tick.
    pub first_solve_iters: usize,
}

/// Rigid-body weights shared by both controllers: position, attitude error,
/// velocity, body rate.
pub const RIGID_WEIGHTS: [f64; 4] = [100.0, 50.0, 10.0, 1.0];

impl ControllerConfig {
    /// Frozen default tuning. Weights are in normalized units: motor states and
    /// inputs are scaled by their full range so both controllers see the same
    /// penalty per unit of throttle.
    pub fn default_for(kind: ControllerKind, params: &VehicleParams) -> Self {
        let mut q = Vec::new();
        for w in RIGID_WEIGHTS {
            q.extend([w; 3]);
        }
        let (r, u_min, u_max, actuator_bounds) = match kind {
            ControllerKind::Standard { variant } => {
                let model = StandardModel::new(params.clone(), variant);
                let s = model.input_scale();
                if variant != MotorVariant::None {
                    q.extend([0.1 / (s * s); 4]);
                }
                let (lo, hi) = model.input_bounds();
                (vec![1.0 / (s * s); 4], vec![lo; 4], vec![hi; 4], None)
            }
            ControllerKind::Lol => {
                q.extend([0.0; 3]);
                q.extend([0.1; 4]);
                let rate_w = 1.0 / (RATE_LIMIT * RATE_LIMIT);
                (
                    vec![1.0, rate_w, rate_w, rate_w],
                    vec![params.r_min, -RATE_LIMIT, -RATE_LIMIT, -RATE_LIMIT],
                    vec![params.r_max, RATE_LIMIT, RATE_LIMIT, RATE_LIMIT],
                    Some((params.r_min, params.r_max)),
                )
            }
        };
        let ocp = OcpConfig {
            horizon: 20,
            dt: 0.05,
            substeps: 2,
            terminal: q.iter().map(|w| 2.0 * w).collect(),
            q,
            r,
            u_min,
            u_max,
            rate_min: [-RATE_LIMIT; 3],
            rate_max: [RATE_LIMIT; 3],
            actuator_bounds,
            max_sqp_iters: 1,
            kkt_tol: 1e-6,
            slack_weight: 1e3,
            slack_weight_l1: 10.0,
        };
        Self { kind, ocp, rate_hz: 100.0, rpm_feedback: true, first_solve_iters: 30 }
    }

    /// Same controller with the mixer-output rows removed (ablation).
    pub fn without_actuator_rows(mut self) -> Self {
        self.ocp.actuator_bounds = None;
        self
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidParam(format!("controller rate must be positive, got {}", self.rate_hz)));
        }
        if self.period() > self.ocp.dt + 1e-12 {
            return Err(Error::InvalidParam("control period must not exceed the shooting interval".into()));
        }
        Ok(())
    }
}

/// What the flight stack reports to the controller at a tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub state: State13,
    /// Rate-loop integrator state.
    pub z: Vec3,
    /// Normalized rotor speeds, mixer-channel order.
    pub r: [f64; 4],
}

/// Horizon predicted at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub t: f64,
    pub dt: f64,
    /// Rigid-body part of the N+1 predicted states.
    pub states: Vec<State13>,
    /// Per-motor forces (N, physical motor order) at nodes `0..N`.
    pub forces: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOutput {
    pub command: ControlCommand,
    /// The solve degraded and `command` repeats the previous one.
    pub stale: bool,
    pub diagnostics: SolverDiagnostics,
    pub prediction: PredictionRecord,
    /// Mixer-stage outputs `C x0 + D u0` of the applied first-stage input
    /// (LoL only; channel order).
    pub mixer_rows: Option<[f64; 4]>,
}

enum Engine {
    Standard(OcpSolver<StandardModel>),
    Lol(OcpSolver<LolModel>),
}

pub struct Controller {
    pub config: ControllerConfig,
    params: VehicleParams,
    engine: Engine,
    previous: Option<ShootingTrajectory>,
    last_command: Option<ControlCommand>,
    /// Open-loop rotor-speed estimate (channel order) when RPM feedback is off.
    r_estimate: Option<[f64; 4]>,
    last_tick: Option<f64>,
}

impl Controller {
    pub fn new(config: ControllerConfig, params: &VehicleParams) -> Result<Self> {
        config.validate()?;
        let engine = match config.kind {
            ControllerKind::Standard { variant } => {
                Engine::Standard(OcpSolver::new(StandardModel::new(params.clone(), variant), config.ocp.clone())?)
            }
            ControllerKind::Lol => Engine::Lol(OcpSolver::new(LolModel::new(params.clone()), config.ocp.clone())?),
        };
        Ok(Self { config, params: params.clone(), engine, previous: None, last_command: None, r_estimate: None, last_tick: None })
    }

    pub fn kind(&self) -> ControllerKind {
        self.config.kind
    }

    /// One control tick: builds the problem from `meas` and the reference
    /// window starting at `meas.t`, solves, and extracts the command.
    pub fn tick(&mut self, meas: &Measurement, reference: &ReferenceTrajectory) -> Result<ControllerOutput> {
        let r_meas = self.rotor_estimate(meas);
        let ocp = &self.config.ocp;
        let (n, dt) = (ocp.horizon, ocp.dt);
        let window: Vec<_> = (0..=n).map(|k| reference.sample(meas.t + k as f64 * dt)).collect();
        let thrust_ref: Vec<f64> = window.iter().map(|w| w.thrust(&self.params)).collect();
        let elapsed = self.last_tick.map(|t0| meas.t - t0);
        let first = self.previous.is_none();
        let warm = match (&self.previous, elapsed) {
            (Some(prev), Some(e)) => Some(interpolated_shift(prev, e / dt, self.quaternion_offset())),
            _ => None,
        };
        let mode = if first { SolveMode::FullSqp } else { SolveMode::Rti };

        let p = &self.params;
        let result = match &mut self.engine {
            Engine::Standard(solver) => {
                let model = &solver.model;
                let mut x0 = vec![0.0; model.state_dim()];
                meas.state.write_to(&mut x0);
                if model.variant != MotorVariant::None {
                    let f = channels_to_motors(r_meas.map(|r| p.f_max * r * r));
                    for i in 0..4 {
                        x0[RIGID_DIM + i] = model.motor_state_for_force(f[i]);
                    }
                }
                let x_ref = window
                    .iter()
                    .zip(&thrust_ref)
                    .map(|(w, t)| {
                        let mut x = vec![0.0; x0.len()];
                        w.state().write_to(&mut x);
                        if model.variant != MotorVariant::None {
                            x[RIGID_DIM..RIGID_DIM + 4].fill(model.motor_state_for_force(t / 4.0));
                        }
                        x
                    })
                    .collect();
                let u_ref: Vec<Vec<f64>> = thrust_ref[..n].iter().map(|t| vec![model.input_for_force(t / 4.0); 4]).collect();
                let u0 = match self.last_command {
                    Some(ControlCommand::Standard { thrust, .. }) => vec![model.input_for_force(thrust / 4.0); 4],
                    _ => u_ref[0].clone(),
                };
                let problem = OcpProblem { x0, u0, x_ref, u_ref };
                solve(solver, &problem, mode, warm.as_ref(), self.config.first_solve_iters)
            }
            Engine::Lol(solver) => {
                let mut x0 = vec![0.0; LOL_DIM];
                meas.state.write_to(&mut x0);
                x0[LOL_INTEGRAL..LOL_INTEGRAL + 3].copy_from_slice(meas.z.as_slice());
                x0[LOL_RPM..LOL_RPM + 4].copy_from_slice(&r_meas);
                let throttle = |t: f64| (t.max(0.0) / (4.0 * p.f_max)).sqrt();
                let x_ref = window
                    .iter()
                    .zip(&thrust_ref)
                    .map(|(w, t)| {
                        let mut x = vec![0.0; LOL_DIM];
                        w.state().write_to(&mut x);
                        x[LOL_RPM..LOL_RPM + 4].fill(throttle(*t));
                        x
                    })
                    .collect();
                let u_ref: Vec<Vec<f64>> = window[..n]
                    .iter()
                    .zip(&thrust_ref)
                    .map(|(w, t)| vec![throttle(*t), w.omega.x, w.omega.y, w.omega.z])
                    .collect();
                let u0 = match self.last_command {
                    Some(ControlCommand::Lol { throttle, rates }) => vec![throttle, rates[0], rates[1], rates[2]],
                    _ => u_ref[0].clone(),
                };
                let problem = OcpProblem { x0, u0, x_ref, u_ref };
                solve(solver, &problem, mode, warm.as_ref(), self.config.first_solve_iters)
            }
        };
        self.last_tick = Some(meas.t);

        let solution = match result {
            Ok(s) if !s.degraded => s,
            other => {
                // keep the previous horizon for the next warm start
                let diagnostics = match &other {
                    Ok(s) => s.diagnostics(),
                    Err(_) => SolverDiagnostics { iterations: 0, qp_iterations: 0, kkt: f64::INFINITY, cost: f64::NAN, solve_time_us: 0.0, degraded: true },
                };
                if first {
                    if let Err(e) = other {
                        return Err(e);
                    }
                }
                let command = self.last_command.unwrap_or_else(|| self.hover_command());
                self.last_command = Some(command);
                self.propagate_estimate(meas, &command);
                let prediction = self.previous_prediction(meas);
                return Ok(ControllerOutput { command, stale: true, diagnostics, prediction, mixer_rows: None });
            }
        };

        let command = self.extract_command(&solution);
        let mixer_rows = match &self.engine {
            Engine::Lol(solver) => Some(solver.model.mixer_rows(solution.states[0].as_slice(), solution.inputs[0].as_slice())),
            Engine::Standard(_) => None,
        };
        let prediction = self.prediction_record(meas.t, &solution);
        self.previous = Some(solution.trajectory());
        self.last_command = Some(command);
        self.propagate_estimate(meas, &command);
        Ok(ControllerOutput { command, stale: false, diagnostics: solution.diagnostics(), prediction, mixer_rows })
    }

    fn quaternion_offset(&self) -> usize {
        crate::model::QUAT
    }

    fn hover_command(&self) -> ControlCommand {
        match self.config.kind {
            ControllerKind::Standard { .. } => ControlCommand::Standard { thrust: self.params.mass * self.params.gravity, rates: [0.0; 3] },
            ControllerKind::Lol => ControlCommand::hover(&self.params),
        }
    }

    fn rotor_estimate(&mut self, meas: &Measurement) -> [f64; 4] {
        if self.config.rpm_feedback {
            return meas.r;
        }
        *self.r_estimate.get_or_insert(meas.r)
    }

    /// Advances the open-loop rotor estimate over one control period under
    /// `command`, using the measured rates and integrator.
    fn propagate_estimate(&mut self, meas: &Measurement, command: &ControlCommand) {
        if self.config.rpm_feedback {
            return;
        }
        let p = &self.params;
        let rates = command.rates();
        let (tau, _) = pid_torque(Vec3::new(rates[0], rates[1], rates[2]), meas.state.omega, meas.z, p);
        let target = mix(command.collective_throttle(p), tau).map(|r| r.clamp(0.0, 1.0));
        let decay = (-self.config.period() / p.k_mot).exp();
        if let Some(r) = self.r_estimate.as_mut() {
            for i in 0..4 {
                r[i] = target[i] + (r[i] - target[i]) * decay;
            }
        }
    }

    fn extract_command(&self, s: &OcpSolution) -> ControlCommand {
        let clamp_rates = |w: &[f64]| [0, 1, 2].map(|i| w[i].clamp(-RATE_LIMIT, RATE_LIMIT));
        match &self.engine {
            Engine::Standard(solver) => {
                let m = &solver.model;
                let thrust = m.commanded_thrust(s.inputs[0].as_slice()).clamp(0.0, 4.0 * self.params.f_max);
                ControlCommand::Standard { thrust, rates: clamp_rates(&s.states[1].as_slice()[RATE..RATE + 3]) }
            }
            Engine::Lol(_) => {
                let u = &s.inputs[0];
                ControlCommand::Lol { throttle: u[0].clamp(0.0, 1.0), rates: clamp_rates(&u.as_slice()[1..4]) }
            }
        }
    }

    fn prediction_record(&self, t: f64, s: &OcpSolution) -> PredictionRecord {
        let n = self.config.ocp.horizon;
        let states = s.states.iter().map(|x| State13::from_slice(x.as_slice())).collect();
        let forces = (0..n)
            .map(|k| match &self.engine {
                Engine::Standard(solver) => solver.model.motor_forces(s.states[k].as_slice(), s.inputs[k].as_slice()),
                Engine::Lol(solver) => solver.model.motor_forces(s.states[k].as_slice()),
            })
            .collect();
        PredictionRecord { t, dt: self.config.ocp.dt, states, forces }
    }

    /// Prediction reused on a stale tick: the previous horizon re-anchored at `meas`.
    fn previous_prediction(&self, meas: &Measurement) -> PredictionRecord {
        let n = self.config.ocp.horizon;
        let mut states = vec![meas.state; n + 1];
        let mut forces = vec![[0.0; 4]; n];
        if let Some(prev) = &self.previous {
            for k in 1..=n {
                states[k] = State13::from_slice(prev.states[k].as_slice());
            }
            for (k, f) in forces.iter_mut().enumerate() {
                *f = match &self.engine {
                    Engine::Standard(solver) => solver.model.motor_forces(prev.states[k].as_slice(), prev.inputs[k].as_slice()),
                    Engine::Lol(solver) => solver.model.motor_forces(prev.states[k].as_slice()),
                };
            }
        }
        PredictionRecord { t: meas.t, dt: self.config.ocp.dt, states, forces }
    }
}

fn solve<M: OcpModel>(
    solver: &mut OcpSolver<M>,
    problem: &OcpProblem,
    mode: SolveMode,
    warm: Option<&ShootingTrajectory>,
    first_iters: usize,
) -> Result<OcpSolution> {
    if mode == SolveMode::FullSqp {
        let keep = solver.config.max_sqp_iters;
        solver.config.max_sqp_iters = first_iters;
        let out = solver.solve(problem, mode, warm);
        solver.config.max_sqp_iters = keep;
        out
    } else {
        solver.solve(problem, mode, warm)
    }
}

/// Shifts a shooting trajectory forward by `fraction` shooting intervals by
/// linear interpolation between nodes (holding the last node), renormalizing
/// the quaternion block.
pub fn interpolated_shift(t: &ShootingTrajectory, fraction: f64, quat: usize) -> ShootingTrajectory {
    let n = t.horizon();
    let at = |v: &[DVector<f64>], s: f64, last: usize| -> DVector<f64> {
        let s = s.clamp(0.0, last as f64);
        let i = (s.floor() as usize).min(last);
        let j = (i + 1).min(last);
        let w = s - i as f64;
        &v[i] * (1.0 - w) + &v[j] * w
    };
    let states = (0..=n)
        .map(|k| {
            let mut x = at(&t.states, k as f64 + fraction, n);
            renormalize_block(&mut x.as_mut_slice()[quat..quat + 4]);
            x
        })
        .collect();
    let inputs = (0..n).map(|k| at(&t.inputs, k as f64 + fraction, n - 1)).collect();
    ShootingTrajectory { states, inputs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectories::make_hover;

    fn hover_measurement(p: &VehicleParams, pos: Vec3) -> Measurement {
        Measurement {
            t: 0.0,
            state: State13 { p: pos, ..Default::default() },
            z: Vec3::zeros(),
            r: [p.hover_throttle(); 4],
        }
    }

    #[test]
    fn standard_hover_commands_weight() {
        let p = VehicleParams::default();
        let mut c = Controller::new(ControllerConfig::default_for(ControllerKind::Standard { variant: MotorVariant::Speed }, &p), &p).unwrap();
        let reference = make_hover(Vec3::new(0.0, 0.0, 1.0), 5.0);
        let out = c.tick(&hover_measurement(&p, Vec3::new(0.0, 0.0, 1.0)), &reference).unwrap();
        match out.command {
            ControlCommand::Standard { thrust, rates } => {
                assert!((thrust - 11.772).abs() < 1e-6, "{thrust}");
                assert!(rates.iter().all(|w| w.abs() < 1e-9));
            }
            other => panic!("{other:?}"),
        }
        assert!(!out.stale);
    }

    #[test]
    fn lol_hover_commands_hover_throttle() {
        let p = VehicleParams::default();
        let mut c = Controller::new(ControllerConfig::default_for(ControllerKind::Lol, &p), &p).unwrap();
        let reference = make_hover(Vec3::new(0.0, 0.0, 1.0), 5.0);
        let out = c.tick(&hover_measurement(&p, Vec3::new(0.0, 0.0, 1.0)), &reference).unwrap();
        match out.command {
            ControlCommand::Lol { throttle, rates } => {
                assert!((throttle - 0.3836).abs() < 1e-4, "{throttle}");
                assert!(rates.iter().all(|w| w.abs() < 1e-9));
            }
            other => panic!("{other:?}"),
        }
        for f in &out.prediction.forces {
            for fi in f {
                assert!((fi - p.hover_force()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn step_in_x_pitches_forward() {
        let p = VehicleParams::default();
        for kind in [ControllerKind::Standard { variant: MotorVariant::Speed }, ControllerKind::Lol] {
            let mut c = Controller::new(ControllerConfig::default_for(kind, &p), &p).unwrap();
            let reference = make_hover(Vec3::new(1.0, 0.0, 1.0), 5.0);
            let out = c.tick(&hover_measurement(&p, Vec3::new(0.0, 0.0, 1.0)), &reference).unwrap();
            let rates = out.command.rates();
            // +x acceleration needs a positive pitch rate about body y
            assert!(rates[1] > 1e-3, "{kind:?}: {rates:?}");
            if let ControlCommand::Standard { thrust, .. } = out.command {
                assert!(thrust >= p.mass * p.gravity - 1e-9);
            }
        }
    }

    #[test]
    fn prediction_is_anchored_and_shaped() {
        let p = VehicleParams::default();
        let mut c = Controller::new(ControllerConfig::default_for(ControllerKind::Lol, &p), &p).unwrap();
        let reference = make_hover(Vec3::new(0.5, -0.2, 1.0), 5.0);
        let mut meas = hover_measurement(&p, Vec3::new(0.0, 0.0, 1.0));
        meas.state.v = Vec3::new(0.3, 0.1, 0.0);
        let out = c.tick(&meas, &reference).unwrap();
        assert_eq!(out.prediction.states.len(), 21);
        assert_eq!(out.prediction.forces.len(), 20);
        assert_eq!(out.prediction.states[0], meas.state);
        let rows = out.mixer_rows.unwrap();
        assert!(rows.iter().all(|r| (p.r_min - 1e-6..=p.r_max + 1e-6).contains(r)));
        // later ticks use RTI from a shifted guess
        meas.t = 0.01;
        let next = c.tick(&meas, &reference).unwrap();
        assert_eq!(next.diagnostics.iterations, 1);
    }

    #[test]
    fn open_loop_rotor_estimate_tracks_commands() {
        let p = VehicleParams::default();
        let mut cfg = ControllerConfig::default_for(ControllerKind::Lol, &p);
        cfg.rpm_feedback = false;
        let mut c = Controller::new(cfg, &p).unwrap();
        let meas = hover_measurement(&p, Vec3::zeros());
        c.r_estimate = Some([0.0; 4]);
        c.propagate_estimate(&meas, &ControlCommand::hover(&p));
        let expected = p.hover_throttle() * (1.0 - (-0.01f64 / p.k_mot).exp());
        for r in c.r_estimate.unwrap() {
            assert!((r - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolated_shift_matches_node_shift_at_integer_fraction() {
        let x: Vec<DVector<f64>> = (0..4).map(|k| DVector::from_vec(vec![k as f64, 1.0, 0.0, 0.0, 0.0])).collect();
        let u: Vec<DVector<f64>> = (0..3).map(|k| DVector::from_vec(vec![10.0 * k as f64])).collect();
        let t = ShootingTrajectory { states: x, inputs: u };
        let a = interpolated_shift(&t, 1.0, 1);
        let b = crate::ocp::shift_trajectory(&t);
        assert_eq!(a, b);
        let h = interpolated_shift(&t, 0.25, 1);
        assert!((h.states[0][0] - 0.25).abs() < 1e-15);
        assert!((h.inputs[1][0] - 12.5).abs() < 1e-12);
        assert_eq!(h.states[3][0], 3.0);
    }

    #[test]
    fn unknown_controller_name_is_rejected() {
        assert!(ControllerKind::parse("pid", MotorVariant::Speed).is_err());
        assert_eq!(ControllerKind::parse("lol", MotorVariant::Force).unwrap(), ControllerKind::Lol);
    }
}
