//! Fixed-step RK4 with forward-mode sensitivities.

use nalgebra::{DMatrix, DVector};
use num_dual::Dual64;

use crate::error::{Error, Result};
use crate::so3::renormalize_block;
use crate::Real;

/// Continuous-time dynamics `ẋ = f(x, u)`.
///
/// `eval` is generic over the scalar so the same code path is used for plain
/// evaluation and for dual-number differentiation.
pub trait OdeFunction {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Offset of a unit-quaternion block inside the state, if any.
    fn quaternion_offset(&self) -> Option<usize> {
        None
    }

    fn eval<D: Real>(&self, x: &[D], u: &[D], dx: &mut [D]);
}

fn rk4_generic<F: OdeFunction, D: Real>(f: &F, x: &[D], u: &[D], dt: f64) -> Vec<D> {
    let n = x.len();
    let zero = D::from(0.0);
    let mut k1 = vec![zero; n];
    let mut k2 = vec![zero; n];
    let mut k3 = vec![zero; n];
    let mut k4 = vec![zero; n];
    let mut tmp = vec![zero; n];

    f.eval(x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + k1[i] * (0.5 * dt);
    }
    f.eval(&tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + k2[i] * (0.5 * dt);
    }
    f.eval(&tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + k3[i] * dt;
    }
    f.eval(&tmp, u, &mut k4);
    for i in 0..n {
        tmp[i] = x[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
    }
    tmp
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("RK4 step must be positive, got {dt}")))
    }
}

/// One classic RK4 step with `u` held constant. The quaternion block, if
/// declared, is renormalized afterwards.
pub fn rk4_step<F: OdeFunction>(f: &F, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dt(dt)?;
    let mut next = rk4_generic(f, x, u, dt);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    if let Some(o) = f.quaternion_offset() {
        renormalize_block(&mut next[o..o + 4]);
    }
    Ok(next)
}

/// Result of [`rk4_step_with_sensitivities`].
#[derive(Debug, Clone)]
pub struct StepSensitivity {
    pub x_next: DVector<f64>,
    /// ∂x_next/∂x
    pub a: DMatrix<f64>,
    /// ∂x_next/∂u
    pub b: DMatrix<f64>,
}

/// RK4 step plus its exact Jacobians, obtained by pushing one dual direction
/// per state/input component through all four stages.
///
/// The Jacobians are those of the raw RK4 map; quaternion renormalization is
/// applied to `x_next` only and is not differentiated.
pub fn rk4_step_with_sensitivities<F: OdeFunction>(
    f: &F,
    x: &[f64],
    u: &[f64],
    dt: f64,
) -> Result<StepSensitivity> {
    check_dt(dt)?;
    let nx = x.len();
    let nu = u.len();
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, nu);
    let mut xd: Vec<Dual64> = x.iter().map(|v| Dual64::from_re(*v)).collect();
    let mut ud: Vec<Dual64> = u.iter().map(|v| Dual64::from_re(*v)).collect();
    let mut x_next = DVector::zeros(nx);

    for j in 0..nx + nu {
        if j < nx {
            xd[j].eps = 1.0;
        } else {
            ud[j - nx].eps = 1.0;
        }
        let out = rk4_generic(f, &xd, &ud, dt);
        for (i, v) in out.iter().enumerate() {
            if !(v.re.is_finite() && v.eps.is_finite()) {
                return Err(Error::NonFiniteState);
            }
            if j < nx {
                a[(i, j)] = v.eps;
            } else {
                b[(i, j - nx)] = v.eps;
            }
            if j == 0 {
                x_next[i] = v.re;
            }
        }
        if j < nx {
            xd[j].eps = 0.0;
        } else {
            ud[j - nx].eps = 0.0;
        }
    }
    if nx + nu == 0 {
        x_next = DVector::from_vec(rk4_generic(f, x, u, dt));
    }
    if let Some(o) = f.quaternion_offset() {
        renormalize_block(&mut x_next.as_mut_slice()[o..o + 4]);
    }
    Ok(StepSensitivity { x_next, a, b })
}

/// `substeps` chained RK4 steps of `dt / substeps` with `u` held.
pub fn rk4_interval<F: OdeFunction>(f: &F, x: &[f64], u: &[f64], dt: f64, substeps: usize) -> Result<Vec<f64>> {
    let h = dt / substeps.max(1) as f64;
    let mut x = x.to_vec();
    for _ in 0..substeps.max(1) {
        x = rk4_step(f, &x, u, h)?;
    }
    Ok(x)
}

/// Sensitivities of [`rk4_interval`], chained through the substeps.
pub fn rk4_interval_with_sensitivities<F: OdeFunction>(
    f: &F,
    x: &[f64],
    u: &[f64],
    dt: f64,
    substeps: usize,
) -> Result<StepSensitivity> {
    let n = substeps.max(1);
    let h = dt / n as f64;
    let mut acc = rk4_step_with_sensitivities(f, x, u, h)?;
    for _ in 1..n {
        let s = rk4_step_with_sensitivities(f, acc.x_next.as_slice(), u, h)?;
        acc = StepSensitivity { b: &s.a * &acc.b + &s.b, a: &s.a * &acc.a, x_next: s.x_next };
    }
    Ok(acc)
}

/// Linear time-invariant dynamics `ẋ = M x + N u`, handy for tests and oracles.
#[derive(Debug, Clone)]
pub struct LinearOde {
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

impl OdeFunction for LinearOde {
    fn state_dim(&self) -> usize {
        self.m.nrows()
    }

    fn input_dim(&self) -> usize {
        self.n.ncols()
    }

    fn eval<D: Real>(&self, x: &[D], u: &[D], dx: &mut [D]) {
        for i in 0..self.m.nrows() {
            let mut acc = D::from(0.0);
            for j in 0..self.m.ncols() {
                acc += x[j] * self.m[(i, j)];
            }
            for j in 0..self.n.ncols() {
                acc += u[j] * self.n[(i, j)];
            }
            dx[i] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl OdeFunction for Decay {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn eval<D: Real>(&self, x: &[D], _u: &[D], dx: &mut [D]) {
            dx[0] = -x[0];
        }
    }

    struct Frozen;
    impl OdeFunction for Frozen {
        fn state_dim(&self) -> usize {
            3
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn eval<D: Real>(&self, _x: &[D], _u: &[D], dx: &mut [D]) {
            dx.iter_mut().for_each(|d| *d = D::from(0.0));
        }
    }

    struct Blowup;
    impl OdeFunction for Blowup {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn eval<D: Real>(&self, x: &[D], _u: &[D], dx: &mut [D]) {
            dx[0] = x[0] * 1e300 * 1e300;
        }
    }

    #[test]
    fn zero_dynamics_leave_state_unchanged() {
        let x = [1.0, -2.0, 3.5];
        assert_eq!(rk4_step(&Frozen, &x, &[0.3], 0.1).unwrap(), x.to_vec());
    }

    #[test]
    fn exponential_decay_single_step() {
        let x = rk4_step(&Decay, &[1.0], &[], 0.1).unwrap()[0];
        // RK4 polynomial 1 - h + h²/2 - h³/6 + h⁴/24 at h = 0.1
        assert!((x - 0.9048375).abs() < 1e-7);
        assert!((x - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |steps: usize| {
            let dt = 1.0 / steps as f64;
            let mut x = vec![1.0];
            for _ in 0..steps {
                x = rk4_step(&Decay, &x, &[], dt).unwrap();
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(10) / err(20);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(rk4_step(&Decay, &[1.0], &[], 0.0).is_err());
    }

    #[test]
    fn non_finite_stage_is_reported() {
        assert!(matches!(rk4_step(&Blowup, &[1.0], &[], 0.1), Err(Error::NonFiniteState)));
        assert!(matches!(
            rk4_step_with_sensitivities(&Blowup, &[1.0], &[], 0.1),
            Err(Error::NonFiniteState)
        ));
    }

    #[test]
    fn input_free_dynamics_have_zero_b() {
        let s = rk4_step_with_sensitivities(&Frozen, &[1.0, 2.0, 3.0], &[0.5], 0.05).unwrap();
        assert!(s.b.iter().all(|v| *v == 0.0));
        assert_eq!(s.a, DMatrix::identity(3, 3));
    }

    #[test]
    fn chained_substeps_match_single_steps() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -0.5]);
        let sys = LinearOde { m, n: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]) };
        let one = rk4_step_with_sensitivities(&sys, &[1.0, 0.0], &[0.3], 0.05).unwrap();
        let two = rk4_interval_with_sensitivities(&sys, &[1.0, 0.0], &[0.3], 0.1, 2).unwrap();
        assert!((&two.a - &one.a * &one.a).amax() < 1e-15);
        assert!((&two.b - (&one.a * &one.b + &one.b)).amax() < 1e-15);
        let x = rk4_interval(&sys, &[1.0, 0.0], &[0.3], 0.1, 2).unwrap();
        assert!((DVector::from_vec(x) - two.x_next).amax() < 1e-15);
    }

    #[test]
    fn linear_system_sensitivities_match_matrix_polynomial() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -2.0, -0.3, 0.5, 0.1, 0.0, -1.0]);
        let n = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.0, 0.5, -0.2]);
        let sys = LinearOde { m: m.clone(), n: n.clone() };
        let h = 0.07;
        let s = rk4_step_with_sensitivities(&sys, &[0.3, -0.1, 0.9], &[0.2, 0.4], h).unwrap();
        let i = DMatrix::<f64>::identity(3, 3);
        let m2 = &m * &m;
        let m3 = &m2 * &m;
        let m4 = &m3 * &m;
        let a = &i + &m * h + &m2 * (h * h / 2.0) + &m3 * (h.powi(3) / 6.0) + &m4 * (h.powi(4) / 24.0);
        let b = (&i * h + &m * (h * h / 2.0) + &m2 * (h.powi(3) / 6.0) + &m3 * (h.powi(4) / 24.0)) * &n;
        assert!((&s.a - &a).amax() < 1e-14);
        assert!((&s.b - &b).amax() < 1e-14);
    }
}
