//! Ground-truth simulator of the cascaded flight stack: discrete rate PID,
//! mixer, desaturation, first-order rotors and rigid body, stepped at the
//! low-level rate, plus the closed-loop runner.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, Measurement};
use crate::error::{Error, Result};
use crate::integrator::rk4_step;
use crate::log::{config_hash, FlightLog, RunMetadata, SubstepRow, TickRecord};
use crate::model::{mix, ControlCommand, MotorDrivenModel, State13, StatePid20, DRIVEN_RPM, RIGID_DIM};
use crate::params::VehicleParams;
use crate::so3::{renormalize_block, UnitQuaternion, Vec3};
use crate::trajectories::ReferenceTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Desaturation {
    /// Clamp every channel to `[0, 1]` independently.
    Clip,
    /// Shift the collective to fit the torque demand into `[0, 1]`; if the
    /// torque spread alone exceeds the range, scale it down to fit.
    #[default]
    CollectiveShift,
}

/// Standard deviations of the measurement noise seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseStd {
    /// m
    pub position: f64,
    /// m/s
    pub velocity: f64,
    /// rad, small rotation about a random axis
    pub attitude: f64,
    /// rad/s
    pub rate: f64,
}

impl NoiseStd {
    pub fn is_zero(&self) -> bool {
        self.position == 0.0 && self.velocity == 0.0 && self.attitude == 0.0 && self.rate == 0.0
    }

    /// Small noise used by the default benchmark repetitions.
    pub fn desk() -> Self {
        Self { position: 0.01, velocity: 0.02, attitude: 0.005, rate: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub low_level_hz: f64,
    pub control_hz: f64,
    pub desaturation: Desaturation,
    /// Command transport delay in low-level ticks.
    pub latency_ticks: usize,
    /// Derivative gain of the plant rate loop (absent from the prediction model).
    pub kd: [f64; 3],
    /// Relative error of the plant PID gains w.r.t. the modelled ones.
    pub gain_mismatch: f64,
    pub noise: NoiseStd,
    pub seed: u64,
    /// Anti-windup clamp on the rate-loop integrator, rad.
    pub integrator_limit: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            low_level_hz: 1000.0,
            control_hz: 100.0,
            desaturation: Desaturation::CollectiveShift,
            latency_ticks: 10,
            kd: [0.0; 3],
            gain_mismatch: 0.0,
            noise: NoiseStd::default(),
            seed: 0,
            integrator_limit: 2.0,
        }
    }
}

impl PlantConfig {
    /// No latency, no noise: the plant matches the LoL prediction model.
    pub fn ideal() -> Self {
        Self { latency_ticks: 0, ..Self::default() }
    }

    /// Low-level substeps per control tick.
    pub fn substeps_per_tick(&self) -> Result<usize> {
        let ratio = self.low_level_hz / self.control_hz;
        let n = ratio.round();
        if !(self.control_hz > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "low-level rate {} Hz must be an integer multiple of the control rate {} Hz",
                self.low_level_hz, self.control_hz
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.substeps_per_tick()?;
        if !(self.gain_mismatch > -1.0) || !(self.integrator_limit > 0.0) {
            return Err(Error::InvalidParam("gain mismatch must exceed -100% and the integrator limit must be positive".into()));
        }
        let n = self.noise;
        if [n.position, n.velocity, n.attitude, n.rate].iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParam("noise standard deviations must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Keeps mixer outputs inside `[0, 1]`. Returns the applied throttles and
/// whether the raw demand had to be modified.
pub fn desaturate(raw: [f64; 4], policy: Desaturation) -> ([f64; 4], bool) {
    let saturated = raw.iter().any(|r| !(0.0..=1.0).contains(r));
    if !saturated {
        return (raw, false);
    }
    let out = match policy {
        Desaturation::Clip => raw.map(|r| r.clamp(0.0, 1.0)),
        Desaturation::CollectiveShift => {
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo <= 1.0 {
                let shift = if hi > 1.0 { 1.0 - hi } else { -lo };
                raw.map(|r| (r + shift).clamp(0.0, 1.0))
            } else {
                raw.map(|r| ((r - lo) / (hi - lo)).clamp(0.0, 1.0))
            }
        }
    };
    (out, true)
}

/// Truth state of the simulated vehicle and its flight stack.
#[derive(Debug, Clone)]
pub struct Plant {
    pub config: PlantConfig,
    /// Parameters of the physical vehicle (PID gains include the mismatch).
    pub params: VehicleParams,
    dynamics: MotorDrivenModel,
    /// `[p q v ω r]`, `r` in channel order.
    x: Vec<f64>,
    z: Vec3,
    prev_error: Option<Vec3>,
    pub t: f64,
    pub tick: u64,
    pub clip_events: u64,
    command: Option<ControlCommand>,
    pending: VecDeque<(u64, ControlCommand)>,
    rng: ChaCha8Rng,
    /// Last applied per-channel throttle.
    pub last_throttle: [f64; 4],
}

impl Plant {
    pub fn new(params: &VehicleParams, config: PlantConfig, initial: StatePid20) -> Result<Self> {
        config.validate()?;
        let params = params.clone().with_gain_scale(config.gain_mismatch);
        let full = initial.to_vec();
        let mut x = full[..RIGID_DIM].to_vec();
        x.extend_from_slice(&initial.r);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            dynamics: MotorDrivenModel { params: params.clone() },
            params,
            config,
            x,
            z: initial.z,
            prev_error: None,
            t: 0.0,
            tick: 0,
            clip_events: 0,
            command: None,
            pending: VecDeque::new(),
            rng,
            last_throttle: initial.r,
        })
    }

    /// Plant starting on `reference` at its start time, rotors at the trim
    /// collective of the reference thrust, integrator empty.
    pub fn at_reference(params: &VehicleParams, config: PlantConfig, reference: &ReferenceTrajectory) -> Result<Self> {
        let start = reference.sample(reference.start_time());
        let trim = (start.thrust(params) / (4.0 * params.f_max)).sqrt();
        let mut plant = Self::new(params, config, StatePid20 { rigid: start.state(), z: Vec3::zeros(), r: [trim; 4] })?;
        plant.t = reference.start_time();
        Ok(plant)
    }

    pub fn state(&self) -> StatePid20 {
        let mut r = [0.0; 4];
        r.copy_from_slice(&self.x[DRIVEN_RPM..DRIVEN_RPM + 4]);
        StatePid20 { rigid: State13::from_slice(&self.x), z: self.z, r }
    }

    /// Command currently applied by the low-level loop.
    pub fn applied_command(&self) -> Option<ControlCommand> {
        self.command
    }

    /// Queues `cmd`; it takes effect after the configured latency. The very
    /// first command also becomes the initial command history.
    pub fn submit(&mut self, cmd: ControlCommand) {
        if self.command.is_none() {
            self.command = Some(cmd);
        }
        self.pending.push_back((self.tick + self.config.latency_ticks as u64, cmd));
    }

    /// State as reported to the controller (noisy rigid body, exact integrator
    /// and rotor speeds).
    pub fn measure(&mut self) -> Measurement {
        let truth = self.state();
        let n = self.config.noise;
        let mut s = truth.rigid;
        if !n.is_zero() {
            let mut draw = |std: f64| -> Vec3 {
                if std == 0.0 {
                    return Vec3::zeros();
                }
                let d = Normal::new(0.0, std).expect("finite std");
                Vec3::new(d.sample(&mut self.rng), d.sample(&mut self.rng), d.sample(&mut self.rng))
            };
            s.p += draw(n.position);
            s.v += draw(n.velocity);
            let rot = draw(n.attitude);
            s.q = s.q.mul(UnitQuaternion::from_axis_angle(rot, rot.norm()));
            s.omega += draw(n.rate);
        }
        Measurement { t: self.t, state: s, z: truth.z, r: truth.r }
    }

    /// One low-level period: PID → mixer → desaturation → rotor and rigid-body
    /// integration. Holds the current command; no-op command = zero throttle.
    pub fn low_level_tick(&mut self) -> Result<()> {
        while let Some((at, cmd)) = self.pending.front().copied() {
            if at > self.tick {
                break;
            }
            self.command = Some(cmd);
            self.pending.pop_front();
        }
        let h = 1.0 / self.config.low_level_hz;
        let cmd = self.command.unwrap_or(ControlCommand::Lol { throttle: 0.0, rates: [0.0; 3] });
        let p = &self.params;
        let rates = cmd.rates();
        let omega = Vec3::from_column_slice(&self.x[10..13]);
        let e = Vec3::new(rates[0], rates[1], rates[2]) - omega;
        let de = self.prev_error.map_or(Vec3::zeros(), |prev| (e - prev) / h);
        let tau = [0, 1, 2].map(|i| p.kp[i] * e[i] + p.ki[i] * self.z[i] + self.config.kd[i] * de[i]);
        let (r_c, clipped) = desaturate(mix(cmd.collective_throttle(p), tau), self.config.desaturation);
        if clipped {
            self.clip_events += 1;
        }
        self.last_throttle = r_c;
        self.prev_error = Some(e);

        let mut next = rk4_step(&self.dynamics, &self.x, &r_c, h)?;
        renormalize_block(&mut next[3..7]);
        for r in &mut next[DRIVEN_RPM..DRIVEN_RPM + 4] {
            *r = r.clamp(0.0, 1.0);
        }
        let lim = self.config.integrator_limit;
        self.z = (self.z + e * h).map(|v| v.clamp(-lim, lim));
        self.x = next;
        self.tick += 1;
        self.t += h;
        if self.x.iter().any(|v| !v.is_finite()) || Vec3::from_column_slice(&self.x[..3]).norm() > 1e3 {
            return Err(Error::DivergedState { t: self.t });
        }
        Ok(())
    }
}

/// Description of a closed-loop run for the metadata sidecar.
#[derive(Debug, Clone, Serialize)]
struct RunIdentity<'a> {
    vehicle: &'a VehicleParams,
    controller: &'a crate::controllers::ControllerConfig,
    plant: &'a PlantConfig,
    trajectory: &'a crate::trajectories::TrajectoryMeta,
    duration: f64,
}

/// Flies `reference` for `duration` seconds: the controller runs at the
/// control rate on measurements, the plant at the low-level rate.
pub fn run_closed_loop(
    plant: &mut Plant,
    controller: &mut Controller,
    reference: &ReferenceTrajectory,
    duration: f64,
) -> Result<FlightLog> {
    let per_tick = plant.config.substeps_per_tick()?;
    let ticks = (duration * plant.config.control_hz).round() as usize;
    let t0 = plant.t;
    let mut log = FlightLog {
        meta: RunMetadata {
            controller: controller.kind().name().to_string(),
            trajectory: reference.meta.name.clone(),
            target_g: reference.meta.target_g,
            duration,
            seed: plant.config.seed,
            config_hash: config_hash(&RunIdentity {
                vehicle: &plant.params,
                controller: &controller.config,
                plant: &plant.config,
                trajectory: &reference.meta,
                duration,
            }),
            version: env!("CARGO_PKG_VERSION").to_string(),
            clip_events: 0,
            stale_ticks: 0,
        },
        rows: Vec::with_capacity(ticks * per_tick + 1),
        ticks: Vec::with_capacity(ticks),
    };
    let row = |plant: &Plant| {
        let cmd = plant.applied_command();
        SubstepRow {
            t: plant.t,
            state: plant.state(),
            throttle: cmd.map_or(0.0, |c| c.collective_throttle(&plant.params)),
            rates: cmd.map_or([0.0; 3], |c| c.rates()),
            clip_events: plant.clip_events,
        }
    };
    log.rows.push(row(plant));
    for k in 0..ticks {
        // tick times on an exact grid so long runs do not drift
        plant.t = t0 + k as f64 / plant.config.control_hz;
        let truth = plant.state();
        let meas = plant.measure();
        let out = controller.tick(&meas, reference)?;
        plant.submit(out.command);
        log.ticks.push(TickRecord {
            t: plant.t,
            truth,
            reference_p: reference.sample(plant.t).p,
            command: out.command,
            stale: out.stale,
            diagnostics: out.diagnostics,
            prediction: out.prediction,
            mixer_rows: out.mixer_rows,
        });
        for _ in 0..per_tick {
            plant.low_level_tick()?;
            log.rows.push(row(plant));
        }
    }
    log.meta.clip_events = plant.clip_events;
    log.meta.stale_ticks = log.ticks.iter().filter(|t| t.stale).count();
    Ok(log)
}
