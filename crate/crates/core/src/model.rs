//! Continuous-time quadrotor dynamics.
//!
//! Two prediction models share the rigid-body core:
//!
//! * [`StandardModel`]: state `[p q v ω]` optionally extended with a motor
//!   state (rotor speeds or rotor forces), input = per-motor commands.
//! * [`LolModel`]: state `[p q v ω z r]` where `z` is the rate-loop integral
//!   error and `r` the normalized rotor speeds, input `[t_c ω_c]`. The rate PID
//!   and the mixer are part of the model, so the input is exactly what a flight
//!   controller accepts.
//!
//! Motor forces are ordered by physical motor (the allocation ordering).
//! Normalized rotor speeds `r` are ordered by mixer output channel; channel `i`
//! drives motor [`MIXER_TO_MOTOR`]`[i]`.

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::OdeFunction;
use crate::params::VehicleParams;
use crate::so3::{cross_g, quat_derivative_g, rotate_g, rotate_inv_g, UnitQuaternion, Vec3};
use crate::Real;

pub const POS: usize = 0;
pub const QUAT: usize = 3;
pub const VEL: usize = 7;
pub const RATE: usize = 10;
/// First index after the rigid-body block.
pub const RIGID_DIM: usize = 13;
pub const LOL_INTEGRAL: usize = 13;
pub const LOL_RPM: usize = 16;
pub const LOL_DIM: usize = 20;

/// Flight-controller mixer: `r_c = G [t_c, τ_c]`.
// four-digit gains as flight stacks ship them, not 1/√2
#[allow(clippy::approx_constant)]
pub const MIXER: [[f64; 4]; 4] = [
    [1.0, -0.7071, -0.7071, -1.0],
    [1.0, 0.7071, 0.7071, -1.0],
    [1.0, -0.7071, 0.7071, 1.0],
    [1.0, 0.7071, -0.7071, 1.0],
];

/// Physical motor (allocation column) driven by each mixer output channel.
pub const MIXER_TO_MOTOR: [usize; 4] = [1, 3, 2, 0];

/// Which motor dynamics the standard model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum MotorVariant {
    /// Commanded forces act instantly.
    None,
    /// First-order rotor speed, input = commanded rotor speeds (rad/s).
    #[default]
    Speed,
    /// First-order rotor force, input = commanded forces (N).
    Force,
}

impl MotorVariant {
    pub fn name(self) -> &'static str {
        match self {
            MotorVariant::None => "none",
            MotorVariant::Speed => "speed",
            MotorVariant::Force => "force",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            MotorVariant::None => RIGID_DIM,
            _ => RIGID_DIM + 4,
        }
    }
}

impl std::str::FromStr for MotorVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "speed" => Ok(Self::Speed),
            "force" => Ok(Self::Force),
            other => Err(Error::InvalidParam(format!("unknown motor variant '{other}'"))),
        }
    }
}

/// Tagged motor state of the standard model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotorState {
    None,
    MotorSpeed([f64; 4]),
    MotorForce([f64; 4]),
}

/// Rigid-body state `[p q v ω]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State13 {
    pub p: Vec3,
    pub q: UnitQuaternion,
    pub v: Vec3,
    pub omega: Vec3,
}

impl Default for State13 {
    fn default() -> Self {
        Self { p: Vec3::zeros(), q: UnitQuaternion::identity(), v: Vec3::zeros(), omega: Vec3::zeros() }
    }
}

impl State13 {
    pub fn write_to(&self, x: &mut [f64]) {
        x[POS..POS + 3].copy_from_slice(self.p.as_slice());
        x[QUAT..QUAT + 4].copy_from_slice(&self.q.to_array());
        x[VEL..VEL + 3].copy_from_slice(self.v.as_slice());
        x[RATE..RATE + 3].copy_from_slice(self.omega.as_slice());
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            p: Vec3::from_column_slice(&x[POS..POS + 3]),
            q: UnitQuaternion::from_slice_unchecked(&x[QUAT..QUAT + 4]),
            v: Vec3::from_column_slice(&x[VEL..VEL + 3]),
            omega: Vec3::from_column_slice(&x[RATE..RATE + 3]),
        }
    }
}

/// Augmented state `[p q v ω z r]` with `r` in mixer-channel order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StatePid20 {
    pub rigid: State13,
    pub z: Vec3,
    pub r: [f64; 4],
}

impl StatePid20 {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = vec![0.0; LOL_DIM];
        self.rigid.write_to(&mut x);
        x[LOL_INTEGRAL..LOL_INTEGRAL + 3].copy_from_slice(self.z.as_slice());
        x[LOL_RPM..LOL_RPM + 4].copy_from_slice(&self.r);
        x
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let mut r = [0.0; 4];
        r.copy_from_slice(&x[LOL_RPM..LOL_RPM + 4]);
        Self {
            rigid: State13::from_slice(x),
            z: Vec3::from_column_slice(&x[LOL_INTEGRAL..LOL_INTEGRAL + 3]),
            r,
        }
    }

    /// Hover at `p` with `z = 0` and all rotors at hover speed.
    pub fn hover(params: &VehicleParams, p: Vec3) -> Self {
        Self {
            rigid: State13 { p, ..Default::default() },
            z: Vec3::zeros(),
            r: [params.hover_throttle(); 4],
        }
    }
}

/// Cascaded-interface command sent to the low-level controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ControlCommand {
    /// Collective thrust (N) and body rates.
    Standard { thrust: f64, rates: [f64; 3] },
    /// Collective throttle in `[0, 1]` and body rates.
    Lol { throttle: f64, rates: [f64; 3] },
}

impl ControlCommand {
    pub fn rates(&self) -> [f64; 3] {
        match *self {
            ControlCommand::Standard { rates, .. } | ControlCommand::Lol { rates, .. } => rates,
        }
    }

    /// Collective throttle the flight stack derives from this command.
    /// A thrust setpoint is mapped through the inverse of `f = f_max r²`
    /// summed over four equal rotors.
    pub fn collective_throttle(&self, params: &VehicleParams) -> f64 {
        match *self {
            ControlCommand::Standard { thrust, .. } => (thrust.max(0.0) / (4.0 * params.f_max)).sqrt(),
            ControlCommand::Lol { throttle, .. } => throttle,
        }
    }

    pub fn hover(params: &VehicleParams) -> Self {
        ControlCommand::Lol { throttle: params.hover_throttle(), rates: [0.0; 3] }
    }
}

/// Linear body-frame drag `f_D = −diag(k_v) v_B`.
pub fn drag_force(v_body: Vec3, params: &VehicleParams) -> Vec3 {
    let k = params.drag;
    Vec3::new(-k[0] * v_body.x, -k[1] * v_body.y, -k[2] * v_body.z)
}

/// Maps per-motor forces to `[T, τ]`.
pub fn allocation_matrix(params: &VehicleParams) -> Matrix4<f64> {
    let a = params.arm_length / std::f64::consts::SQRT_2;
    let k = params.torque_const;
    Matrix4::new(
        1.0, 1.0, 1.0, 1.0, //
        a, -a, -a, a, //
        -a, -a, a, a, //
        k, -k, k, -k,
    )
}

/// Collective thrust and body torque from per-motor forces.
pub fn allocate(f: [f64; 4], params: &VehicleParams) -> (f64, Vec3) {
    let (t, tau) = allocate_g(&f, params);
    (t, Vec3::new(tau[0], tau[1], tau[2]))
}

fn allocate_g<D: Real>(f: &[D; 4], params: &VehicleParams) -> (D, [D; 3]) {
    let a = params.arm_length / std::f64::consts::SQRT_2;
    let k = params.torque_const;
    let t = f[0] + f[1] + f[2] + f[3];
    let tau = [
        (f[0] - f[1] - f[2] + f[3]) * a,
        (f[2] + f[3] - f[0] - f[1]) * a,
        (f[0] - f[1] + f[2] - f[3]) * k,
    ];
    (t, tau)
}

/// Per-channel throttle `G [t_c, τ_c]`.
pub fn mix(t_c: f64, tau_c: [f64; 3]) -> [f64; 4] {
    mix_g(t_c, &tau_c)
}

fn mix_g<D: Real>(t_c: D, tau: &[D; 3]) -> [D; 4] {
    MIXER.map(|row| t_c * row[0] + tau[0] * row[1] + tau[1] * row[2] + tau[2] * row[3])
}

/// Rate-loop PID without derivative term: returns `(τ_c, ż)`.
pub fn pid_torque(omega_c: Vec3, omega: Vec3, z: Vec3, params: &VehicleParams) -> ([f64; 3], Vec3) {
    let e = omega_c - omega;
    let tau = [0, 1, 2].map(|i| params.kp[i] * e[i] + params.ki[i] * z[i]);
    (tau, e)
}

/// `f = f_max r²`, same ordering as `r`.
pub fn thrust_from_rpm(r: [f64; 4], params: &VehicleParams) -> [f64; 4] {
    r.map(|ri| params.f_max * ri * ri)
}

/// Reorders per-channel values into physical-motor order.
pub fn channels_to_motors<T: Copy>(by_channel: [T; 4]) -> [T; 4] {
    let mut out = by_channel;
    for (ch, m) in MIXER_TO_MOTOR.iter().enumerate() {
        out[*m] = by_channel[ch];
    }
    out
}

/// Inverse of [`channels_to_motors`].
pub fn motors_to_channels<T: Copy>(by_motor: [T; 4]) -> [T; 4] {
    MIXER_TO_MOTOR.map(|m| by_motor[m])
}

/// Writes `ṗ, q̇, v̇, ω̇` given collective thrust and body torque.
fn rigid_body_g<D: Real>(params: &VehicleParams, x: &[D], thrust: D, tau: [D; 3], dx: &mut [D]) {
    let q = [x[QUAT], x[QUAT + 1], x[QUAT + 2], x[QUAT + 3]];
    let v = [x[VEL], x[VEL + 1], x[VEL + 2]];
    let w = [x[RATE], x[RATE + 1], x[RATE + 2]];

    dx[POS..POS + 3].copy_from_slice(&v);
    dx[QUAT..QUAT + 4].copy_from_slice(&quat_derivative_g(&q, &w));

    let vb = rotate_inv_g(&q, &v);
    let body_force = [
        vb[0] * (-params.drag[0]),
        vb[1] * (-params.drag[1]),
        vb[2] * (-params.drag[2]) + thrust,
    ];
    let fw = rotate_g(&q, &body_force);
    let inv_m = 1.0 / params.mass;
    dx[VEL] = fw[0] * inv_m;
    dx[VEL + 1] = fw[1] * inv_m;
    dx[VEL + 2] = fw[2] * inv_m - params.gravity;

    let j = params.inertia;
    let jw = [w[0] * j[0], w[1] * j[1], w[2] * j[2]];
    let gyro = cross_g(&w, &jw);
    for i in 0..3 {
        dx[RATE + i] = (tau[i] - gyro[i]) / j[i];
    }
}

/// Standard prediction model with a selectable motor variant.
#[derive(Debug, Clone)]
pub struct StandardModel {
    pub params: VehicleParams,
    pub variant: MotorVariant,
}

impl StandardModel {
    pub fn new(params: VehicleParams, variant: MotorVariant) -> Self {
        Self { params, variant }
    }

    /// Per-motor forces implied by a state (motor variants) or an input (no variant).
    pub fn motor_forces(&self, x: &[f64], u: &[f64]) -> [f64; 4] {
        let mut f = [0.0; 4];
        for i in 0..4 {
            f[i] = match self.variant {
                MotorVariant::None => u[i],
                MotorVariant::Speed => self.params.thrust_coeff * x[RIGID_DIM + i] * x[RIGID_DIM + i],
                MotorVariant::Force => x[RIGID_DIM + i],
            };
        }
        f
    }

    /// Collective thrust commanded by an input vector.
    pub fn commanded_thrust(&self, u: &[f64]) -> f64 {
        match self.variant {
            MotorVariant::Speed => u.iter().map(|w| self.params.thrust_coeff * w * w).sum(),
            _ => u.iter().sum(),
        }
    }

    /// Input that commands per-motor force `f`.
    pub fn input_for_force(&self, f: f64) -> f64 {
        match self.variant {
            MotorVariant::Speed => (f.max(0.0) / self.params.thrust_coeff).sqrt(),
            _ => f,
        }
    }

    /// Motor-state value that produces per-motor force `f` (unused for `None`).
    pub fn motor_state_for_force(&self, f: f64) -> f64 {
        self.input_for_force(f)
    }

    /// Input bounds matching the throttle range `[r_min, r_max]`.
    pub fn input_bounds(&self) -> (f64, f64) {
        let p = &self.params;
        match self.variant {
            MotorVariant::Speed => (p.r_min * p.omega_max, p.r_max * p.omega_max),
            _ => (p.f_max * p.r_min * p.r_min, p.f_max * p.r_max * p.r_max),
        }
    }

    /// Natural scale of one input component, used to normalize input weights.
    pub fn input_scale(&self) -> f64 {
        match self.variant {
            MotorVariant::Speed => self.params.omega_max,
            _ => self.params.f_max,
        }
    }

    /// Hover state with motors (if any) at the hover operating point.
    pub fn hover_state(&self, p: Vec3) -> Vec<f64> {
        let mut x = vec![0.0; self.state_dim()];
        State13 { p, ..Default::default() }.write_to(&mut x);
        if self.variant != MotorVariant::None {
            let m = self.motor_state_for_force(self.params.hover_force());
            x[RIGID_DIM..RIGID_DIM + 4].fill(m);
        }
        x
    }

    pub fn hover_input(&self) -> Vec<f64> {
        vec![self.input_for_force(self.params.hover_force()); 4]
    }
}

impl OdeFunction for StandardModel {
    fn state_dim(&self) -> usize {
        self.variant.state_dim()
    }

    fn input_dim(&self) -> usize {
        4
    }

    fn quaternion_offset(&self) -> Option<usize> {
        Some(QUAT)
    }

    fn eval<D: Real>(&self, x: &[D], u: &[D], dx: &mut [D]) {
        let p = &self.params;
        let f: [D; 4] = match self.variant {
            MotorVariant::None => [u[0], u[1], u[2], u[3]],
            MotorVariant::Speed => {
                let inv = 1.0 / p.k_mot;
                let mut f = [D::from(0.0); 4];
                for i in 0..4 {
                    let w = x[RIGID_DIM + i];
                    dx[RIGID_DIM + i] = (u[i] - w) * inv;
                    f[i] = w * w * p.thrust_coeff;
                }
                f
            }
            MotorVariant::Force => {
                let inv = 1.0 / p.k_mot_f;
                let mut f = [D::from(0.0); 4];
                for i in 0..4 {
                    dx[RIGID_DIM + i] = (u[i] - x[RIGID_DIM + i]) * inv;
                    f[i] = x[RIGID_DIM + i];
                }
                f
            }
        };
        let (t, tau) = allocate_g(&f, p);
        rigid_body_g(p, x, t, tau, dx);
    }
}

/// Standard-model derivative with an explicit shape check on `u`.
pub fn deriv_standard(model: &StandardModel, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != 4 || x.len() != model.state_dim() {
        return Err(Error::VariantMismatch {
            variant: model.variant.name(),
            expected: if u.len() != 4 { 4 } else { model.state_dim() },
            got: if u.len() != 4 { u.len() } else { x.len() },
        });
    }
    let mut dx = vec![0.0; x.len()];
    model.eval(x, u, &mut dx);
    Ok(dx)
}

/// Prediction model with the rate PID, mixer and rotor dynamics embedded.
#[derive(Debug, Clone)]
pub struct LolModel {
    pub params: VehicleParams,
}

impl LolModel {
    pub fn new(params: VehicleParams) -> Self {
        Self { params }
    }

    /// Per-channel throttle demanded by the rate loop for state `x` and input `u`,
    /// including the integral term.
    pub fn mixer_output(&self, x: &[f64], u: &[f64]) -> [f64; 4] {
        let (tau, _) = pid_torque(
            Vec3::new(u[1], u[2], u[3]),
            Vec3::from_column_slice(&x[RATE..RATE + 3]),
            Vec3::from_column_slice(&x[LOL_INTEGRAL..LOL_INTEGRAL + 3]),
            &self.params,
        );
        mix(u[0], tau)
    }

    /// Proportional-path mixer rows `C x + D u` (channel order), the quantity
    /// bounded by the actuator constraints.
    pub fn mixer_rows(&self, x: &[f64], u: &[f64]) -> [f64; 4] {
        let (tau, _) = pid_torque(
            Vec3::new(u[1], u[2], u[3]),
            Vec3::from_column_slice(&x[RATE..RATE + 3]),
            Vec3::zeros(),
            &self.params,
        );
        mix(u[0], tau)
    }

    /// Per-motor forces (physical order) for a state.
    pub fn motor_forces(&self, x: &[f64]) -> [f64; 4] {
        let mut r = [0.0; 4];
        r.copy_from_slice(&x[LOL_RPM..LOL_RPM + 4]);
        channels_to_motors(thrust_from_rpm(r, &self.params))
    }
}

impl OdeFunction for LolModel {
    fn state_dim(&self) -> usize {
        LOL_DIM
    }

    fn input_dim(&self) -> usize {
        4
    }

    fn quaternion_offset(&self) -> Option<usize> {
        Some(QUAT)
    }

    fn eval<D: Real>(&self, x: &[D], u: &[D], dx: &mut [D]) {
        let p = &self.params;
        let mut tau_c = [D::from(0.0); 3];
        for i in 0..3 {
            let e = u[1 + i] - x[RATE + i];
            dx[LOL_INTEGRAL + i] = e;
            tau_c[i] = e * p.kp[i] + x[LOL_INTEGRAL + i] * p.ki[i];
        }
        let r_c = mix_g(u[0], &tau_c);
        let inv = 1.0 / p.k_mot;
        let mut f_ch = [D::from(0.0); 4];
        for i in 0..4 {
            let r = x[LOL_RPM + i];
            dx[LOL_RPM + i] = (r_c[i] - r) * inv;
            f_ch[i] = r * r * p.f_max;
        }
        let f = channels_to_motors(f_ch);
        let (t, tau) = allocate_g(&f, p);
        rigid_body_g(p, x, t, tau, dx);
    }
}

/// Rigid body plus first-order rotors driven directly by per-channel throttle
/// commands: state `[p q v ω r]`, input `r_c`. This is the physical layer below
/// the mixer, used by the plant simulator.
#[derive(Debug, Clone)]
pub struct MotorDrivenModel {
    pub params: VehicleParams,
}

/// Offset of the rotor block in [`MotorDrivenModel`] states.
pub const DRIVEN_RPM: usize = RIGID_DIM;

impl OdeFunction for MotorDrivenModel {
    fn state_dim(&self) -> usize {
        RIGID_DIM + 4
    }

    fn input_dim(&self) -> usize {
        4
    }

    fn quaternion_offset(&self) -> Option<usize> {
        Some(QUAT)
    }

    fn eval<D: Real>(&self, x: &[D], u: &[D], dx: &mut [D]) {
        let p = &self.params;
        let inv = 1.0 / p.k_mot;
        let mut f_ch = [D::from(0.0); 4];
        for i in 0..4 {
            let r = x[DRIVEN_RPM + i];
            dx[DRIVEN_RPM + i] = (u[i] - r) * inv;
            f_ch[i] = r * r * p.f_max;
        }
        let (t, tau) = allocate_g(&channels_to_motors(f_ch), p);
        rigid_body_g(p, x, t, tau, dx);
    }
}

pub fn deriv_lol(model: &LolModel, x: &StatePid20, throttle: f64, rates: Vec3) -> StatePid20Derivative {
    let xv = x.to_vec();
    let mut dx = vec![0.0; LOL_DIM];
    model.eval(&xv, &[throttle, rates.x, rates.y, rates.z], &mut dx);
    StatePid20Derivative(dx)
}

/// Raw 20-component derivative of a [`StatePid20`].
#[derive(Debug, Clone, PartialEq)]
pub struct StatePid20Derivative(pub Vec<f64>);

impl StatePid20Derivative {
    pub fn integral(&self) -> Vec3 {
        Vec3::from_column_slice(&self.0[LOL_INTEGRAL..LOL_INTEGRAL + 3])
    }

    pub fn rpm(&self) -> [f64; 4] {
        let mut r = [0.0; 4];
        r.copy_from_slice(&self.0[LOL_RPM..LOL_RPM + 4]);
        r
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Affine map `r_c = C x + D u` of the proportional rate path through the mixer.
///
/// `C` is 4×20 with nonzeros only in the body-rate columns; `D` is 4×4.
pub fn actuator_constraint_matrices(params: &VehicleParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut c = DMatrix::zeros(4, LOL_DIM);
    let mut d = DMatrix::zeros(4, 4);
    for row in 0..4 {
        d[(row, 0)] = MIXER[row][0];
        for axis in 0..3 {
            let g = MIXER[row][1 + axis] * params.kp[axis];
            d[(row, 1 + axis)] = g;
            c[(row, RATE + axis)] = -g;
        }
    }
    (c, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::rk4_step;
    use proptest::prelude::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn drag_examples() {
        let p = params();
        assert_eq!(drag_force(Vec3::zeros(), &p), Vec3::zeros());
        let d = drag_force(Vec3::new(10.0, 0.0, 0.0), &p);
        assert!((d - Vec3::new(-3.0, 0.0, 0.0)).norm() < 1e-12);
        let v = Vec3::new(1.0, -2.0, 0.5);
        assert!((drag_force(2.0 * v, &p) - 2.0 * drag_force(v, &p)).norm() < 1e-15);
    }

    #[test]
    fn allocation_examples() {
        let p = params();
        let (t, tau) = allocate([2.0; 4], &p);
        assert_eq!(t, 8.0);
        assert!(tau.norm() < 1e-15);
        let (t, tau) = allocate([1.0, 0.0, 0.0, 0.0], &p);
        let a = 0.15 / 2f64.sqrt();
        assert_eq!(t, 1.0);
        assert!((tau - Vec3::new(a, -a, 0.022)).norm() < 1e-15);
        assert!(allocation_matrix(&p).determinant().abs() > 1e-6);
    }

    #[test]
    fn mixer_examples() {
        assert_eq!(mix(0.5, [0.0; 3]), [0.5; 4]);
        let r = mix(0.5, [0.1, 0.0, 0.0]);
        let expected = [0.42929, 0.57071, 0.42929, 0.57071];
        for i in 0..4 {
            assert!((r[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mixer_channels_produce_matching_physical_torques() {
        let p = params();
        let t = p.hover_throttle();
        for axis in 0..3 {
            let mut tau_c = [0.0; 3];
            tau_c[axis] = 0.05;
            let f = channels_to_motors(thrust_from_rpm(mix(t, tau_c), &p));
            let (_, tau) = allocate(f, &p);
            assert!(tau[axis] > 0.0, "axis {axis} torque {tau:?}");
            for other in (0..3).filter(|o| *o != axis) {
                assert!(tau[other].abs() < 1e-12, "axis {axis} leaks into {other}: {tau:?}");
            }
        }
    }

    #[test]
    fn channel_permutation_round_trips() {
        let x = [1, 2, 3, 4];
        assert_eq!(motors_to_channels(channels_to_motors(x)), x);
    }

    #[test]
    fn pid_examples() {
        let p = params();
        let w = Vec3::new(0.3, -0.2, 1.0);
        let (tau, zdot) = pid_torque(w, w, Vec3::zeros(), &p);
        assert_eq!(tau, [0.0; 3]);
        assert_eq!(zdot, Vec3::zeros());
        let (tau, _) = pid_torque(w, w, Vec3::new(1.0, 0.0, 0.0), &p);
        assert!((tau[0] - 0.3).abs() < 1e-15 && tau[1] == 0.0 && tau[2] == 0.0);
        let wc = Vec3::new(1.0, -2.0, 0.5);
        let (_, zdot) = pid_torque(wc, w, Vec3::new(5.0, 5.0, 5.0), &p);
        assert_eq!(zdot, wc - w);
    }

    #[test]
    fn thrust_from_rpm_examples() {
        let p = params();
        assert_eq!(thrust_from_rpm([0.0; 4], &p), [0.0; 4]);
        let f = thrust_from_rpm([1.0; 4], &p);
        assert_eq!(f, [20.0; 4]);
        assert_eq!(f.iter().sum::<f64>(), 80.0);
        let hover = 1.2 * 9.81 / 4.0;
        assert!((p.hover_force() - 2.943).abs() < 1e-12);
        assert!(((hover / p.f_max).sqrt() - 0.3836).abs() < 5e-5);
    }

    #[test]
    fn standard_hover_is_equilibrium() {
        for variant in [MotorVariant::None, MotorVariant::Speed, MotorVariant::Force] {
            let m = StandardModel::new(params(), variant);
            let x = m.hover_state(Vec3::new(1.0, 2.0, 3.0));
            let dx = deriv_standard(&m, &x, &m.hover_input()).unwrap();
            let n = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n < 1e-9, "{variant:?}: {n}");
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = StandardModel::new(params(), MotorVariant::Speed);
        let x = m.hover_state(Vec3::zeros());
        assert!(matches!(deriv_standard(&m, &x, &[1.0; 3]), Err(Error::VariantMismatch { .. })));
        assert!(matches!(deriv_standard(&m, &x[..13], &[1.0; 4]), Err(Error::VariantMismatch { .. })));
    }

    #[test]
    fn principal_axis_spin_has_no_gyroscopic_torque() {
        let m = StandardModel::new(params(), MotorVariant::None);
        let mut x = m.hover_state(Vec3::zeros());
        x[RATE + 2] = 1.0;
        let dx = deriv_standard(&m, &x, &m.hover_input()).unwrap();
        assert!(dx[RATE..RATE + 3].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn speed_variant_step_matches_first_order_response() {
        let p = params();
        let m = StandardModel::new(p.clone(), MotorVariant::Speed);
        let mut x = m.hover_state(Vec3::zeros());
        let w0 = x[RIGID_DIM];
        let wc = 1800.0;
        let dt = p.k_mot / 10.0;
        for step in 1..=30 {
            x = rk4_step(&m, &x, &[wc; 4], dt).unwrap();
            let t = step as f64 * dt;
            let exact = wc + (w0 - wc) * (-t / p.k_mot).exp();
            assert!(((x[RIGID_DIM] - exact) / exact).abs() < 1e-6);
        }
    }

    #[test]
    fn free_fall_without_thrust_or_drag() {
        let mut p = params();
        p.drag = [0.0; 3];
        let m = StandardModel::new(p.clone(), MotorVariant::None);
        let mut x = m.hover_state(Vec3::zeros());
        let dt = 0.01;
        for step in 1..=300 {
            x = rk4_step(&m, &x, &[0.0; 4], dt).unwrap();
            let t = step as f64 * dt;
            assert!((x[VEL + 2] + p.gravity * t).abs() < 1e-9);
            assert!(x[VEL].abs() < 1e-12 && x[VEL + 1].abs() < 1e-12);
        }
    }

    #[test]
    fn speed_variant_approaches_instant_motors_as_time_constant_shrinks() {
        let base = params();
        let schedule = |t: f64| {
            let h = base.hover_force();
            let d = 0.2 * (6.0 * t).sin();
            [h + d, h - d, h + 0.5 * d, h - 0.5 * d]
        };
        let rollout = |variant: MotorVariant, k_mot: f64| {
            let mut p = base.clone();
            p.k_mot = k_mot;
            let m = StandardModel::new(p, variant);
            let mut x = m.hover_state(Vec3::zeros());
            let dt = (k_mot / 10.0).min(1e-3);
            let steps = (1.0 / dt).round() as usize;
            for i in 0..steps {
                let f = schedule(i as f64 * dt);
                let u: Vec<f64> = f.iter().map(|fi| m.input_for_force(*fi)).collect();
                x = rk4_step(&m, &x, &u, dt).unwrap();
            }
            Vec3::from_column_slice(&x[POS..POS + 3])
        };
        let reference = rollout(MotorVariant::None, 0.001);
        let mut prev = f64::INFINITY;
        let mut first = None;
        for k in [0.05, 0.02, 0.005, 0.001] {
            let d = (rollout(MotorVariant::Speed, k) - reference).norm();
            assert!(d < prev, "k_mot {k}: {d} !< {prev}");
            first.get_or_insert(d);
            prev = d;
        }
        // the lag error is first order in k_mot: 50x smaller constant, >= 20x smaller gap
        assert!(prev < first.unwrap() / 20.0);
    }

    #[test]
    fn lol_trim_is_equilibrium() {
        let p = params();
        let m = LolModel::new(p.clone());
        let x = StatePid20::hover(&p, Vec3::new(0.0, 0.0, 2.0));
        let d = deriv_lol(&m, &x, p.hover_throttle(), Vec3::zeros());
        assert!(d.norm() < 1e-9);
    }

    #[test]
    fn lol_rate_step_from_rest() {
        let p = params();
        let m = LolModel::new(p.clone());
        let x = StatePid20::hover(&p, Vec3::zeros());
        let t = p.hover_throttle();
        let d = deriv_lol(&m, &x, t, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(d.integral(), Vec3::new(1.0, 0.0, 0.0));
        let r_c = m.mixer_output(&x.to_vec(), &[t, 1.0, 0.0, 0.0]);
        let s = MIXER[1][1] * p.kp[0];
        let expected = [t - s, t + s, t - s, t + s];
        let rdot = d.rpm();
        for i in 0..4 {
            assert!((r_c[i] - expected[i]).abs() < 1e-15);
            assert!((rdot[i] - (expected[i] - t) / p.k_mot).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gains_kill_torque_channels() {
        let mut p = params();
        p.kp = [0.0; 3];
        p.ki = [0.0; 3];
        let m = LolModel::new(p.clone());
        let mut x = StatePid20::hover(&p, Vec3::zeros());
        x.z = Vec3::new(0.4, -1.0, 2.0);
        x.rigid.omega = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(m.mixer_output(&x.to_vec(), &[0.6, 3.0, -3.0, 1.0]), [0.6; 4]);
    }

    #[test]
    fn hover_throttle_gives_zero_torque() {
        let p = params();
        let f = channels_to_motors(thrust_from_rpm(mix(0.6, [0.0; 3]), &p));
        let (t, tau) = allocate(f, &p);
        assert_eq!(tau, Vec3::zeros());
        assert!((t - 4.0 * p.f_max * 0.36).abs() < 1e-12);
    }

    #[test]
    fn constraint_matrices_structure() {
        let p = params();
        let (c, d) = actuator_constraint_matrices(&p);
        for col in 0..LOL_DIM {
            let nonzero = (0..4).any(|r| c[(r, col)] != 0.0);
            assert_eq!(nonzero, (RATE..RATE + 3).contains(&col), "column {col}");
        }
        let zero = vec![0.0; LOL_DIM];
        let out = &c * DMatrix::from_column_slice(LOL_DIM, 1, &zero) + &d * DMatrix::from_column_slice(4, 1, &[0.4, 0.0, 0.0, 0.0]);
        assert!(out.iter().all(|v| (*v - 0.4).abs() < 1e-15));
        // G has orthogonal columns with norms 2, 2·0.7071, 2·0.7071, 2
        let expected = 16.0 * MIXER[1][1] * MIXER[1][1] * p.kp.iter().product::<f64>();
        assert!((d.determinant().abs() - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn constraint_map_equals_proportional_mixer_path(
            state in prop::collection::vec(-3.0f64..3.0, LOL_DIM),
            u in prop::array::uniform4(-2.0f64..2.0),
        ) {
            let p = params();
            let (c, d) = actuator_constraint_matrices(&p);
            let affine = &c * DMatrix::from_column_slice(LOL_DIM, 1, &state) + &d * DMatrix::from_column_slice(4, 1, &u);
            let omega = Vec3::from_column_slice(&state[RATE..RATE + 3]);
            let (tau, _) = pid_torque(Vec3::new(u[1], u[2], u[3]), omega, Vec3::zeros(), &p);
            let composed = mix(u[0], tau);
            for i in 0..4 {
                prop_assert!((affine[i] - composed[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn mixer_mean_is_collective(t in 0.0f64..1.0, tau in prop::array::uniform3(-1.0f64..1.0)) {
            let r = mix(t, tau);
            prop_assert!((r.iter().sum::<f64>() / 4.0 - t).abs() < 1e-12);
        }
    }
}
