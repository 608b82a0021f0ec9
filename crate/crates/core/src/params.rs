//! Vehicle description shared by the prediction models and the plant.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::Vec3;

const DEFAULT_VEHICLE: &str = include_str!("../config/vehicle.json");

/// Physical and low-level-controller parameters of the quadrotor.
///
/// Field names are the JSON keys of the vehicle file (see `config/vehicle.json`).
/// PID gains are expressed in normalized-torque units: a gain of 0.15 turns a
/// 1 rad/s rate error into a mixer torque input of 0.15.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// Diagonal of the inertia matrix, kg·m².
    pub inertia: [f64; 3],
    /// Motor arm length, m.
    pub arm_length: f64,
    /// Rotor drag-torque to thrust ratio, m.
    pub torque_const: f64,
    /// N·s²/rad²
    pub thrust_coeff: f64,
    /// Maximum thrust per motor, N.
    pub f_max: f64,
    /// Maximum rotor speed, rad/s.
    pub omega_max: f64,
    /// Rotor-speed time constant, s.
    pub k_mot: f64,
    /// Time constant of the first-order force model, s.
    pub k_mot_f: f64,
    /// Linear drag coefficients in body axes, N·s/m.
    pub drag: [f64; 3],
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub r_min: f64,
    pub r_max: f64,
    /// Magnitude of gravity, m/s² (acts along world −z).
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_VEHICLE).expect("bundled vehicle file is valid")
    }
}

impl VehicleParams {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let p: Self = serde_json::from_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        p.validate().map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.to_string()));
        let finite = [self.mass, self.arm_length, self.torque_const, self.thrust_coeff, self.f_max, self.omega_max]
            .iter()
            .chain(&self.inertia)
            .chain(&self.drag)
            .chain(&self.kp)
            .chain(&self.ki)
            .all(|v| v.is_finite());
        if !finite {
            return bad("all parameters must be finite");
        }
        if self.mass <= 0.0 || self.inertia.iter().any(|j| *j <= 0.0) || self.arm_length <= 0.0 {
            return bad("mass, inertia and arm length must be positive");
        }
        if self.f_max <= 0.0 || self.omega_max <= 0.0 || self.thrust_coeff <= 0.0 {
            return bad("f_max, omega_max and thrust_coeff must be positive");
        }
        if self.k_mot <= 0.0 || self.k_mot_f <= 0.0 {
            return bad("motor time constants must be positive");
        }
        if !(0.0 <= self.r_min && self.r_min < self.r_max && self.r_max <= 1.0) {
            return bad("need 0 <= r_min < r_max <= 1");
        }
        let implied = self.thrust_coeff * self.omega_max * self.omega_max;
        if (implied - self.f_max).abs() > 1e-6 * self.f_max {
            return bad("thrust_coeff * omega_max^2 must equal f_max");
        }
        Ok(())
    }

    pub fn gravity_vector(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, -self.gravity)
    }

    /// Per-motor thrust at hover.
    pub fn hover_force(&self) -> f64 {
        self.mass * self.gravity / 4.0
    }

    /// Normalized rotor speed (= throttle) at hover.
    pub fn hover_throttle(&self) -> f64 {
        (self.hover_force() / self.f_max).sqrt()
    }

    pub fn hover_rotor_speed(&self) -> f64 {
        self.hover_throttle() * self.omega_max
    }

    /// Scales all rate-loop gains by `1 + fraction`.
    pub fn with_gain_scale(mut self, fraction: f64) -> Self {
        for k in self.kp.iter_mut().chain(self.ki.iter_mut()) {
            *k *= 1.0 + fraction;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_defaults_are_consistent() {
        let p = VehicleParams::default();
        p.validate().unwrap();
        assert_eq!(p.f_max * 4.0, 80.0);
        assert!((p.hover_throttle() - 0.3836).abs() < 1e-4);
    }

    #[test]
    fn rejects_inconsistent_thrust_law() {
        let mut p = VehicleParams::default();
        p.thrust_coeff *= 1.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_bad_throttle_bounds() {
        let mut p = VehicleParams::default();
        p.r_min = 0.96;
        assert!(p.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(DEFAULT_VEHICLE).unwrap();
        v["massa"] = 1.0.into();
        assert!(VehicleParams::from_json_str(&v.to_string()).is_err());
    }
}
