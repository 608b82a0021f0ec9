//! Reference trajectories: parametric benchmark shapes scaled to a target peak
//! acceleration, full-state reconstruction from flat outputs, and CSV I/O.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drag_force, State13};
use crate::params::VehicleParams;
use crate::so3::{UnitQuaternion, Vec3};

/// Standard gravity used for g-levels.
pub const G0: f64 = 9.81;
/// Body-rate cap every generated reference must respect, rad/s.
pub const BODY_RATE_CAP: f64 = 6.0;
/// Sample interval of generated references, s.
pub const SAMPLE_DT: f64 = 0.01;

const CSV_HEADER: [&str; 14] = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Fig8,
    Slanted,
    Hyp,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Fig8, Shape::Slanted, Shape::Hyp];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Fig8 => "fig8",
            Shape::Slanted => "slanted",
            Shape::Hyp => "hyp",
        }
    }

    /// Preset of this shape at `g_level`, using the default sizes.
    pub fn build(self, g_level: f64, params: &VehicleParams) -> Result<ReferenceTrajectory> {
        match self {
            Shape::Fig8 => make_fig8(fig8_preset_size(g_level), g_level, 0.0, params),
            Shape::Slanted => make_fig8(fig8_preset_size(g_level), g_level, SLANT_PRESET, params),
            Shape::Hyp => make_hypotrochoid(12.0, 4.0, 6.0, g_level, params),
        }
    }
}

/// Half-width of the preset figure-eight: 10 m up to 2.5 g, growing as
/// (g/2.5)³ beyond so the body rate at the crossing (where all of the jerk acts
/// against bare gravity) stays at its 2.5 g value, inside the rate cap.
pub fn fig8_preset_size(g_level: f64) -> f64 {
    10.0 * (g_level / 2.5).max(1.0).powi(3)
}

/// Tilt of the slanted figure-eight, rad.
pub const SLANT_PRESET: f64 = PI / 6.0;

impl std::str::FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig8" => Ok(Shape::Fig8),
            "slanted" | "fig8-slanted" => Ok(Shape::Slanted),
            "hyp" | "hypotrochoid" => Ok(Shape::Hyp),
            other => Err(Error::InvalidParam(format!("unknown trajectory shape `{other}` (fig8, slanted, hyp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub name: String,
    /// Target peak acceleration in g, if the trajectory was scaled to one.
    pub target_g: Option<f64>,
    pub peak_speed: f64,
    pub peak_accel: f64,
    /// The trajectory repeats with this period (the stored samples cover one period).
    pub period: Option<f64>,
}

/// Interpolated reference at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub q: UnitQuaternion,
    pub omega: Vec3,
}

impl ReferencePoint {
    pub fn state(&self) -> State13 {
        State13 { p: self.p, q: self.q, v: self.v, omega: self.omega }
    }

    /// Collective thrust (N) that realizes `a` at attitude `q`, including drag.
    pub fn thrust(&self, params: &VehicleParams) -> f64 {
        let drag_world = self.q.rotate(drag_force(self.q.conjugate().rotate(self.v), params));
        let f = (self.a - params.gravity_vector()) * params.mass - drag_world;
        f.dot(&self.q.rotate(Vec3::z())).max(0.0)
    }
}

/// Uniformly sampled full-state reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub t: Vec<f64>,
    pub p: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub a: Vec<Vec3>,
    pub yaw: Vec<f64>,
    pub q: Vec<UnitQuaternion>,
    pub omega: Vec<Vec3>,
    pub meta: TrajectoryMeta,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Time of the last sample (or the period for periodic references).
    pub fn duration(&self) -> f64 {
        self.meta.period.unwrap_or_else(|| self.t.last().copied().unwrap_or(0.0) - self.t[0])
    }

    pub fn start_time(&self) -> f64 {
        self.t[0]
    }

    /// Reference at time `t`: linear interpolation for p, v, a, ω and slerp for q.
    /// Periodic references wrap; others hold the last sample.
    pub fn sample(&self, t: f64) -> ReferencePoint {
        let n = self.len();
        let mut rel = t - self.t[0];
        if let Some(period) = self.meta.period {
            rel = rel.rem_euclid(period);
        }
        let pos = (rel / self.dt).max(0.0);
        let i = pos.floor() as usize;
        let (i0, i1, s) = match self.meta.period {
            Some(_) if i >= n - 1 => {
                // between the last sample and the start of the next period
                (n - 1, 0, (pos - (n - 1) as f64).min(1.0))
            }
            _ if i >= n - 1 => (n - 1, n - 1, 0.0),
            _ => (i, i + 1, pos - i as f64),
        };
        let lerp = |a: &Vec3, b: &Vec3| a + (b - a) * s;
        ReferencePoint {
            p: lerp(&self.p[i0], &self.p[i1]),
            v: lerp(&self.v[i0], &self.v[i1]),
            a: lerp(&self.a[i0], &self.a[i1]),
            q: self.q[i0].slerp(self.q[i1], s),
            omega: lerp(&self.omega[i0], &self.omega[i1]),
        }
    }

    pub fn max_body_rate(&self) -> f64 {
        self.omega.iter().map(|w| w.amax()).fold(0.0, f64::max)
    }

    /// Builds a reference from sampled full states; `a` is obtained by
    /// differentiating `v`.
    pub fn from_states(t: Vec<f64>, states: &[State13], name: &str, period: Option<f64>) -> Result<Self> {
        check_grid(&t)?;
        let dt = t[1] - t[0];
        let v: Vec<Vec3> = states.iter().map(|s| s.v).collect();
        let a = differentiate(&v, dt, period.is_some());
        let q: Vec<UnitQuaternion> = states.iter().map(|s| s.q).collect();
        let yaw = q.iter().map(|q| yaw_of(*q)).collect();
        let meta = TrajectoryMeta {
            name: name.to_string(),
            target_g: None,
            peak_speed: v.iter().map(|v| v.norm()).fold(0.0, f64::max),
            peak_accel: a.iter().map(|a| a.norm()).fold(0.0, f64::max),
            period,
        };
        Ok(Self { dt, p: states.iter().map(|s| s.p).collect(), v, a, yaw, q, omega: states.iter().map(|s| s.omega).collect(), t, meta })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(CSV_HEADER)?;
        for i in 0..self.len() {
            let q = self.q[i];
            let row = [
                self.t[i], self.p[i].x, self.p[i].y, self.p[i].z, q.w, q.x, q.y, q.z, self.v[i].x, self.v[i].y, self.v[i].z,
                self.omega[i].x, self.omega[i].y, self.omega[i].z,
            ];
            // `{:?}` prints the shortest representation that parses back exactly
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a reference written with [`save_csv`](Self::save_csv) or by an
    /// external generator using the same header. The result is not periodic.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = r.headers()?.clone();
        let mut idx = [0usize; 14];
        for (k, name) in CSV_HEADER.iter().enumerate() {
            idx[k] = headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Parse { row: 1, column: name.to_string(), message: "missing column".into() })?;
        }
        let mut t = Vec::new();
        let mut states = Vec::new();
        for (row_no, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = row_no + 2;
            let mut vals = [0.0; 14];
            for (k, name) in CSV_HEADER.iter().enumerate() {
                let field = rec.get(idx[k]).unwrap_or("");
                vals[k] = field.parse().map_err(|_| Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("`{field}` is not a number"),
                })?;
            }
            let q = UnitQuaternion::normalize([vals[4], vals[5], vals[6], vals[7]])
                .map_err(|e| Error::Parse { row, column: "qw".into(), message: e.to_string() })?;
            t.push(vals[0]);
            states.push(State13 {
                p: Vec3::new(vals[1], vals[2], vals[3]),
                q,
                v: Vec3::new(vals[8], vals[9], vals[10]),
                omega: Vec3::new(vals[11], vals[12], vals[13]),
            });
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
        Self::from_states(t, &states, &name, None)
    }
}

fn check_grid(t: &[f64]) -> Result<()> {
    if t.len() < 2 {
        return Err(Error::Parse { row: t.len() + 1, column: "t".into(), message: "need at least two samples".into() });
    }
    let dt = t[1] - t[0];
    if !(dt > 0.0) {
        return Err(Error::Parse { row: 3, column: "t".into(), message: "time must increase".into() });
    }
    for i in 1..t.len() {
        if ((t[i] - t[i - 1]) - dt).abs() > 1e-6 {
            return Err(Error::Parse {
                row: i + 2,
                column: "t".into(),
                message: format!("non-uniform grid: step {} differs from {dt}", t[i] - t[i - 1]),
            });
        }
    }
    Ok(())
}

fn differentiate(x: &[Vec3], dt: f64, periodic: bool) -> Vec<Vec3> {
    let n = x.len();
    (0..n)
        .map(|i| {
            if periodic {
                (x[(i + 1) % n] - x[(i + n - 1) % n]) / (2.0 * dt)
            } else if i == 0 {
                (x[1] - x[0]) / dt
            } else if i == n - 1 {
                (x[n - 1] - x[n - 2]) / dt
            } else {
                (x[i + 1] - x[i - 1]) / (2.0 * dt)
            }
        })
        .collect()
}

fn yaw_of(q: UnitQuaternion) -> f64 {
    let x = q.rotate(Vec3::x());
    x.y.atan2(x.x)
}

/// Log map of a unit quaternion: rotation vector (rad) on the shortest arc.
fn rotation_vector(q: UnitQuaternion) -> Vec3 {
    let (w, v) = if q.w < 0.0 { (-q.w, -Vec3::new(q.x, q.y, q.z)) } else { (q.w, Vec3::new(q.x, q.y, q.z)) };
    let s = v.norm();
    if s < 1e-12 {
        return v * 2.0;
    }
    v * (2.0 * s.atan2(w) / s)
}

/// Attitudes and body rates realizing the flat outputs `(p, v, a, ψ)` on a
/// uniform grid. The thrust axis is aligned with `m(a − g) − f_D`; body-frame
/// drag depends on the attitude and is resolved by fixed-point iteration.
/// Body rates are central differences of the attitude sequence.
pub fn flat_outputs_to_reference(
    dt: f64,
    v: &[Vec3],
    a: &[Vec3],
    yaw: &[f64],
    params: &VehicleParams,
    periodic: bool,
) -> Result<(Vec<UnitQuaternion>, Vec<Vec3>)> {
    let n = v.len();
    let g = params.gravity_vector();
    let mut q = Vec::with_capacity(n);
    for i in 0..n {
        let margin = (a[i] - g).norm();
        if margin < 0.1 {
            return Err(Error::FreeFallSingularity { index: i, margin });
        }
        let mut qi = attitude_from_thrust_axis(a[i] - g, yaw[i]);
        for _ in 0..6 {
            let drag_world = qi.rotate(drag_force(qi.conjugate().rotate(v[i]), params));
            let f = (a[i] - g) * params.mass - drag_world;
            if f.norm() < 0.1 * params.mass {
                return Err(Error::FreeFallSingularity { index: i, margin: f.norm() / params.mass });
            }
            qi = attitude_from_thrust_axis(f, yaw[i]);
        }
        q.push(qi);
    }
    // body-frame log of the neighbours relative to sample i; the derivative of
    // log(q_i⁻¹ q(t)) at t_i is ω_i
    let rel = |i: usize, j: usize| rotation_vector(q[i].conjugate().mul(q[j]));
    let omega = (0..n)
        .map(|i| {
            if periodic && n >= 5 {
                let at = |k: isize| (i as isize + k).rem_euclid(n as isize) as usize;
                (rel(i, at(1)) * 8.0 - rel(i, at(-1)) * 8.0 - rel(i, at(2)) + rel(i, at(-2))) / (12.0 * dt)
            } else if n == 1 {
                Vec3::zeros()
            } else if i == 0 {
                rel(0, 1) / dt
            } else if i == n - 1 {
                rel(n - 2, n - 1) / dt
            } else {
                (rel(i, i + 1) - rel(i, i - 1)) / (2.0 * dt)
            }
        })
        .collect();
    Ok((q, omega))
}

fn attitude_from_thrust_axis(f: Vec3, yaw: f64) -> UnitQuaternion {
    let zb = f.normalize();
    let xc = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let yb = zb.cross(&xc).normalize();
    let xb = yb.cross(&zb);
    UnitQuaternion::from_rotation_matrix(&nalgebra::Matrix3::from_columns(&[xb, yb, zb]))
}

/// Closed planar-or-spatial curve parameterized by θ ∈ [0, 2π).
trait Curve {
    fn pos(&self, th: f64) -> Vec3;
    fn d1(&self, th: f64) -> Vec3;
    fn d2(&self, th: f64) -> Vec3;
}

struct Gerono {
    a: f64,
    b: f64,
    height: f64,
    slant: f64,
}

impl Gerono {
    fn tilt(&self, v: Vec3) -> Vec3 {
        let (s, c) = self.slant.sin_cos();
        Vec3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z)
    }
}

impl Curve for Gerono {
    fn pos(&self, th: f64) -> Vec3 {
        self.tilt(Vec3::new(self.a * th.sin(), self.b * th.sin() * th.cos(), 0.0)) + Vec3::new(0.0, 0.0, self.height)
    }
    fn d1(&self, th: f64) -> Vec3 {
        self.tilt(Vec3::new(self.a * th.cos(), self.b * (2.0 * th).cos(), 0.0))
    }
    fn d2(&self, th: f64) -> Vec3 {
        self.tilt(Vec3::new(-self.a * th.sin(), -2.0 * self.b * (2.0 * th).sin(), 0.0))
    }
}

struct Hypotrochoid {
    big: f64,
    small: f64,
    d: f64,
    height: f64,
}

impl Hypotrochoid {
    fn k(&self) -> f64 {
        (self.big - self.small) / self.small
    }
}

impl Curve for Hypotrochoid {
    fn pos(&self, th: f64) -> Vec3 {
        let (rr, k) = (self.big - self.small, self.k());
        Vec3::new(rr * th.cos() + self.d * (k * th).cos(), rr * th.sin() - self.d * (k * th).sin(), self.height)
    }
    fn d1(&self, th: f64) -> Vec3 {
        let (rr, k) = (self.big - self.small, self.k());
        Vec3::new(-rr * th.sin() - self.d * k * (k * th).sin(), rr * th.cos() - self.d * k * (k * th).cos(), 0.0)
    }
    fn d2(&self, th: f64) -> Vec3 {
        let (rr, k) = (self.big - self.small, self.k());
        Vec3::new(-rr * th.cos() - self.d * k * k * (k * th).cos(), -rr * th.sin() + self.d * k * k * (k * th).sin(), 0.0)
    }
}

/// Peak ‖a‖ over one period of `curve` traversed at constant dθ/dt = 2π·laps/T.
fn peak_accel<C: Curve>(curve: &C, theta_span: f64, lap: f64) -> f64 {
    let rate = theta_span / lap;
    let n = 20_000;
    (0..n).map(|i| curve.d2(theta_span * i as f64 / n as f64).norm() * rate * rate).fold(0.0, f64::max)
}

/// Lap time whose peak acceleration equals `target` (m/s²), by bisection.
fn fit_lap_time<C: Curve>(curve: &C, theta_span: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (1e-2_f64, 1e4_f64);
    // peak acceleration decreases monotonically with lap time
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if peak_accel(curve, theta_span, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn sample_curve<C: Curve>(curve: &C, theta_span: f64, target_g: f64, name: &str, params: &VehicleParams) -> Result<ReferenceTrajectory> {
    if !(target_g > 0.0 && target_g <= 4.0) {
        return Err(Error::InvalidParam(format!("target acceleration must be in (0, 4] g, got {target_g}")));
    }
    let lap = fit_lap_time(curve, theta_span, target_g * G0);
    let n = (lap / SAMPLE_DT).round().max(2.0) as usize;
    // stretch the grid slightly so it divides the lap exactly
    let dt = lap / n as f64;
    let rate = theta_span / lap;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    let th: Vec<f64> = t.iter().map(|t| t * rate).collect();
    let p: Vec<Vec3> = th.iter().map(|th| curve.pos(*th)).collect();
    let v: Vec<Vec3> = th.iter().map(|th| curve.d1(*th) * rate).collect();
    let a: Vec<Vec3> = th.iter().map(|th| curve.d2(*th) * (rate * rate)).collect();
    let yaw = vec![0.0; n];
    let (q, omega) = flat_outputs_to_reference(dt, &v, &a, &yaw, params, true)?;
    let traj = ReferenceTrajectory {
        dt,
        meta: TrajectoryMeta {
            name: name.to_string(),
            target_g: Some(target_g),
            peak_speed: v.iter().map(|v| v.norm()).fold(0.0, f64::max),
            peak_accel: a.iter().map(|a| a.norm()).fold(0.0, f64::max),
            period: Some(lap),
        },
        t,
        p,
        v,
        a,
        yaw,
        q,
        omega,
    };
    let rate_peak = traj.max_body_rate();
    if rate_peak > BODY_RATE_CAP {
        return Err(Error::InvalidParam(format!(
            "{name} at {target_g} g needs body rates of {rate_peak:.2} rad/s, above the {BODY_RATE_CAP} rad/s cap"
        )));
    }
    Ok(traj)
}

/// Gerono figure-eight `(A sin θ, B sin θ cos θ)` with half-width A = `size`
/// and B = `FIG8_ASPECT`·A, flown at 2 m height, tilted by `slant` about the
/// x-axis and timed so that the peak acceleration is `target_g`.
pub fn make_fig8(size: f64, target_g: f64, slant: f64, params: &VehicleParams) -> Result<ReferenceTrajectory> {
    make_gerono(size, FIG8_ASPECT * size, target_g, slant, params)
}

/// Lobe-width ratio B/A of the default figure-eight.
pub const FIG8_ASPECT: f64 = 1.0;

/// Figure-eight with independent half-width `a` and lobe amplitude `b`.
pub fn make_gerono(a: f64, b: f64, target_g: f64, slant: f64, params: &VehicleParams) -> Result<ReferenceTrajectory> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidParam(format!("figure-eight size must be positive, got {a} x {b}")));
    }
    let curve = Gerono { a, b, height: 2.0 + 0.5 * b * slant.sin().abs(), slant };
    let name = if slant == 0.0 { "fig8" } else { "slanted" };
    sample_curve(&curve, 2.0 * PI, target_g, name, params)
}

/// Hypotrochoid traced by a point at distance `d` from the centre of a circle of
/// radius `r_in` rolling inside one of radius `r_out`, at constant height 2 m.
pub fn make_hypotrochoid(r_out: f64, r_in: f64, d: f64, target_g: f64, params: &VehicleParams) -> Result<ReferenceTrajectory> {
    if !(r_in > 0.0 && r_in < r_out) || d < 0.0 {
        return Err(Error::InvalidParam(format!("hypotrochoid needs 0 < r_in < r_out and d >= 0, got {r_out}, {r_in}, {d}")));
    }
    // closes after θ = 2π · r_in / gcd(r_out, r_in)
    let span = 2.0 * PI * r_in / gcd(r_out, r_in);
    sample_curve(&Hypotrochoid { big: r_out, small: r_in, d, height: 2.0 }, span, target_g, "hyp", params)
}

fn gcd(a: f64, b: f64) -> f64 {
    let (mut a, mut b) = (a, b);
    while b > 1e-9 * a.max(1.0) {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Stationary reference at `p` lasting `duration` seconds.
pub fn make_hover(p: Vec3, duration: f64) -> ReferenceTrajectory {
    let n = (duration / SAMPLE_DT).round().max(1.0) as usize + 1;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * SAMPLE_DT).collect();
    ReferenceTrajectory {
        dt: SAMPLE_DT,
        t,
        p: vec![p; n],
        v: vec![Vec3::zeros(); n],
        a: vec![Vec3::zeros(); n],
        yaw: vec![0.0; n],
        q: vec![UnitQuaternion::identity(); n],
        omega: vec![Vec3::zeros(); n],
        meta: TrajectoryMeta { name: "hover".into(), target_g: None, peak_speed: 0.0, peak_accel: 0.0, period: None },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn dense_peak_accel(t: &ReferenceTrajectory) -> f64 {
        t.a.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn fig8_peak_acceleration_hits_target() {
        let t = make_fig8(10.0, 2.5, 0.0, &params()).unwrap();
        let peak = dense_peak_accel(&t) / G0;
        assert!((2.45..=2.55).contains(&peak), "{peak}");
        assert!(t.p.iter().all(|p| (p.z - t.p[0].z).abs() < 1e-12));
    }

    #[test]
    fn fig8_is_periodic() {
        let t = make_fig8(10.0, 2.5, SLANT_PRESET, &params()).unwrap();
        let lap = t.meta.period.unwrap();
        let a = t.sample(0.0);
        let b = t.sample(lap);
        assert!((a.p - b.p).norm() < 1e-9);
        let curve = Gerono { a: 10.0, b: 10.0, height: 2.0, slant: 0.3 };
        assert!((curve.pos(0.0) - curve.pos(2.0 * PI)).norm() < 1e-9);
    }

    #[test]
    fn slant_tilts_the_plane() {
        let t = make_fig8(10.0, 2.5, SLANT_PRESET, &params()).unwrap();
        let zs: Vec<f64> = t.p.iter().map(|p| p.z).collect();
        let span = zs.iter().cloned().fold(f64::MIN, f64::max) - zs.iter().cloned().fold(f64::MAX, f64::min);
        assert!((span - 10.0 * SLANT_PRESET.sin()).abs() < 0.05, "{span}");
        assert!(zs.iter().all(|z| *z > 0.5));
    }

    #[test]
    fn hypotrochoid_presets_hit_target() {
        for g in [2.5, 3.5] {
            let t = make_hypotrochoid(12.0, 4.0, 6.0, g, &params()).unwrap();
            let peak = dense_peak_accel(&t) / G0;
            assert!((peak / g - 1.0).abs() <= 0.02, "{g}: {peak}");
        }
    }

    #[test]
    fn degenerate_hypotrochoid_is_a_circle() {
        let t = make_hypotrochoid(12.0, 4.0, 0.0, 1.0, &params()).unwrap();
        let radius = 8.0;
        for p in &t.p {
            assert!(((p.x * p.x + p.y * p.y).sqrt() - radius).abs() < 1e-9);
        }
        let speed = t.v[0].norm();
        assert!((speed * speed / radius - G0).abs() / G0 < 1e-6);
    }

    #[test]
    fn hypotrochoid_closes() {
        let c = Hypotrochoid { big: 12.0, small: 4.0, d: 6.0, height: 2.0 };
        let span = 2.0 * PI * 4.0 / gcd(12.0, 4.0);
        assert!((c.pos(0.0) - c.pos(span)).norm() < 1e-9);
        let c = Hypotrochoid { big: 5.0, small: 3.0, d: 1.0, height: 0.0 };
        assert!((gcd(5.0, 3.0) - 1.0).abs() < 1e-12);
        assert!((c.pos(0.0) - c.pos(6.0 * PI)).norm() < 1e-9);
    }

    #[test]
    fn shipped_presets_respect_caps() {
        for shape in Shape::ALL {
            for g in [2.5, 3.5] {
                let t = shape.build(g, &params()).unwrap();
                assert!(t.max_body_rate() <= BODY_RATE_CAP, "{shape:?} {g}");
                assert!((dense_peak_accel(&t) / (g * G0) - 1.0).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn kinematics_are_consistent() {
        for shape in Shape::ALL {
            let t = shape.build(3.5, &params()).unwrap();
            let vmax = t.meta.peak_speed;
            let n = t.len();
            for i in 0..n {
                let fd = (t.p[(i + 1) % n] - t.p[(i + n - 1) % n]) / (2.0 * t.dt);
                // wrap-around neighbour of the last sample is the first one of the next lap
                assert!((fd - t.v[i]).norm() < 1e-3 * vmax, "{shape:?} sample {i}");
            }
        }
    }

    #[test]
    fn hover_samples_give_level_attitude() {
        let n = 5;
        let (q, w) = flat_outputs_to_reference(0.01, &vec![Vec3::zeros(); n], &vec![Vec3::zeros(); n], &vec![0.4; n], &params(), false).unwrap();
        for (q, w) in q.iter().zip(&w) {
            let z = q.rotate(Vec3::z());
            assert!((z - Vec3::z()).norm() < 1e-12);
            assert!((q.dot(UnitQuaternion::from_yaw(0.4)).abs() - 1.0).abs() < 1e-12);
            assert!(w.norm() < 1e-9);
        }
    }

    #[test]
    fn level_circle_has_coordinated_bank() {
        let mut p = params();
        p.drag = [0.0; 3];
        let t = make_hypotrochoid(12.0, 4.0, 0.0, 1.0, &p).unwrap();
        let expected = (1.0f64).atan(); // |a_lat| = g
        for q in &t.q {
            let tilt = q.rotate(Vec3::z()).z.acos();
            assert!((tilt - expected).abs() < 1e-9, "{tilt}");
        }
    }

    #[test]
    fn body_rates_reintegrate_to_attitudes() {
        let t = make_fig8(10.0, 2.5, SLANT_PRESET, &params()).unwrap();
        let n = t.len();
        let w = |k: usize| t.omega[k % n];
        let mut q = t.q[0];
        let mut worst = 0.0f64;
        for i in 0..n {
            // cubic midpoint rate, one exponential step per sample interval
            let mid = (w(i + n - 1) * -1.0 + w(i) * 9.0 + w(i + 1) * 9.0 - w(i + 2)) / 16.0;
            q = q.mul(UnitQuaternion::from_axis_angle(mid, mid.norm() * t.dt));
            worst = worst.max(rotation_vector(t.q[(i + 1) % n].conjugate().mul(q)).norm());
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn free_fall_is_rejected() {
        let g = params().gravity_vector();
        let err = flat_outputs_to_reference(0.01, &[Vec3::zeros(); 2], &[g, g], &[0.0; 2], &params(), false).unwrap_err();
        assert!(matches!(err, Error::FreeFallSingularity { index: 0, .. }));
    }

    #[test]
    fn out_of_range_targets_are_rejected() {
        assert!(make_fig8(10.0, 4.5, 0.0, &params()).is_err());
        assert!(make_fig8(-1.0, 2.0, 0.0, &params()).is_err());
        assert!(make_hypotrochoid(4.0, 4.0, 1.0, 2.0, &params()).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let t = make_fig8(10.0, 2.5, 0.0, &params()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig8.csv");
        t.save_csv(&path).unwrap();
        let back = ReferenceTrajectory::load_csv(&path).unwrap();
        assert_eq!(back.len(), t.len());
        for i in 0..t.len() {
            assert!((back.t[i] - t.t[i]).abs() < 1e-12);
            assert!((back.p[i] - t.p[i]).amax() < 1e-12);
            assert!((back.v[i] - t.v[i]).amax() < 1e-12);
            assert!((back.omega[i] - t.omega[i]).amax() < 1e-12);
            assert!((back.q[i].dot(t.q[i]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy\n0,0,0,0,1,0,0,0,0,0,0,0,0\n").unwrap();
        match ReferenceTrajectory::load_csv(&path) {
            Err(Error::Parse { column, .. }) => assert_eq!(column, "wz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_non_uniform_grid_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let mut s = CSV_HEADER.join(",") + "\n";
        for t in [0.0, 0.01, 0.02, 0.0300021] {
            s += &format!("{t},0,0,0,1,0,0,0,0,0,0,0,0,0\n");
        }
        std::fs::write(&path, s).unwrap();
        match ReferenceTrajectory::load_csv(&path) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(column, "t");
                assert_eq!(row, 5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sampling_wraps_and_interpolates() {
        let t = make_fig8(10.0, 2.5, 0.0, &params()).unwrap();
        let lap = t.meta.period.unwrap();
        let a = t.sample(0.123);
        let b = t.sample(0.123 + 2.0 * lap);
        assert!((a.p - b.p).norm() < 1e-9);
        let mid = t.sample(0.5 * t.dt);
        assert!((mid.p - (t.p[0] + t.p[1]) * 0.5).norm() < 1e-12);
    }

    #[test]
    fn hover_reference_holds_trim() {
        let p = params();
        let h = make_hover(Vec3::new(0.0, 0.0, 1.0), 2.0);
        let s = h.sample(5.0);
        assert_eq!(s.p, Vec3::new(0.0, 0.0, 1.0));
        assert!((s.thrust(&p) - p.mass * p.gravity).abs() < 1e-12);
    }
}
