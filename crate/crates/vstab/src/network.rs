//! Radial source-line-transformer-load circuit as a square nonlinear system.
//!
//! The twelve real unknowns are the rectangular components of six phasors:
//! source voltage `v1`, transformer primary voltage `vp` and current `ip`,
//! secondary voltage `vs` and current `is_`, and load voltage `vl`. The load
//! phasor is the angle reference (`Im(vl) = 0`). Two solvers coexist: a damped
//! Newton iteration on the full system and an independent closed-form
//! elimination that treats the load voltage as known and the loading factor
//! as the unknown of a scalar quadratic.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::loadmodel::{LoadModel, LoadModelError};
use crate::perunit::{BaseValues, Phasor};

pub type ResidualVec = SVector<f64, 12>;
pub type JacobianMat = SMatrix<f64, 12, 12>;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network parameters: v1_mag={v1_mag}, x_line={x_line} (both must be > 0)")]
    InvalidParams { v1_mag: f64, x_line: f64 },
    #[error("load voltage magnitude is zero; load power is undefined there")]
    SingularLoadVoltage,
    #[error("newton iteration did not converge after {iterations} steps (residual {residual_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        residual_norm: f64,
        last: SystemState,
    },
    #[error("jacobian is singular at the iterate; the operating point sits at or beyond the nose")]
    SingularJacobian,
    #[error(transparent)]
    Load(#[from] LoadModelError),
}

/// Source magnitude and line reactance, both per unit on `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkParams {
    pub v1_mag: f64,
    pub x_line: f64,
    pub base: BaseValues,
}

impl NetworkParams {
    pub fn new(v1_mag: f64, x_line: f64, base: BaseValues) -> Result<Self, NetworkError> {
        if !(v1_mag > 0.0) || !(x_line > 0.0) {
            return Err(NetworkError::InvalidParams { v1_mag, x_line });
        }
        Ok(NetworkParams { v1_mag, x_line, base })
    }
}

/// Loading factor and transformer tap ratio, the system's parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub alpha: f64,
    pub n_tap: f64,
}

/// The six circuit phasors, i.e. the algebraic unknown vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    pub v1: Phasor,
    pub vp: Phasor,
    pub ip: Phasor,
    pub vs: Phasor,
    pub is_: Phasor,
    pub vl: Phasor,
}

impl SystemState {
    /// All voltages at magnitude `v` with zero angle, all currents zero.
    pub fn flat(v: f64) -> SystemState {
        let volt = Phasor::real(v);
        SystemState {
            v1: volt,
            vp: volt,
            ip: Phasor::ZERO,
            vs: volt,
            is_: Phasor::ZERO,
            vl: volt,
        }
    }

    /// Packs the state into solver layout: rectangular components in circuit
    /// order, real part first. `Re(vl)` is entry 10, `Im(vl)` entry 11.
    pub fn to_vector(&self) -> ResidualVec {
        SVector::from([
            self.v1.re, self.v1.im, self.vp.re, self.vp.im, self.ip.re, self.ip.im,
            self.vs.re, self.vs.im, self.is_.re, self.is_.im, self.vl.re, self.vl.im,
        ])
    }

    pub fn from_vector(z: &ResidualVec) -> SystemState {
        SystemState {
            v1: Phasor::new(z[0], z[1]),
            vp: Phasor::new(z[2], z[3]),
            ip: Phasor::new(z[4], z[5]),
            vs: Phasor::new(z[6], z[7]),
            is_: Phasor::new(z[8], z[9]),
            vl: Phasor::new(z[10], z[11]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v1.is_finite()
            && self.vp.is_finite()
            && self.ip.is_finite()
            && self.vs.is_finite()
            && self.is_.is_finite()
            && self.vl.is_finite()
    }
}

/// The twelve residual equations, in fixed order:
/// source magnitude (squared), line voltage drop (re, im), transformer
/// voltage ratio (re, im), transformer current ratio (re, im), secondary
/// bus identity (re, im), load active power, load reactive power, and the
/// angle reference `Im(vl) = 0`. Complex power uses `S = V * conj(I)`, so a
/// lagging load balances against positive Q.
pub fn residual(
    z: &SystemState,
    p: &Params,
    net: &NetworkParams,
    load: &LoadModel,
) -> Result<ResidualVec, NetworkError> {
    let v_mag = z.vl.magnitude();
    if v_mag == 0.0 {
        return Err(NetworkError::SingularLoadVoltage);
    }
    let s_load = load.eval(v_mag, p.alpha)?;
    let x = net.x_line;
    let n = p.n_tap;

    let drop = z.v1 - z.ip.mul_jx(x) - z.vp;
    let vr = z.vp - z.vs.scale(n);
    let cr = z.ip.scale(n) - z.is_;
    let bus = z.vs - z.vl;
    let s = z.vl * z.is_.conj();

    Ok(SVector::from([
        z.v1.re * z.v1.re + z.v1.im * z.v1.im - net.v1_mag * net.v1_mag,
        drop.re,
        drop.im,
        vr.re,
        vr.im,
        cr.re,
        cr.im,
        bus.re,
        bus.im,
        s.re - s_load.p,
        s.im - s_load.q,
        z.vl.im,
    ]))
}

/// Closed-form partial derivatives of the residual: the 12x12 state Jacobian
/// and the column of derivatives with respect to the tap ratio.
pub fn jacobian(
    z: &SystemState,
    p: &Params,
    net: &NetworkParams,
    load: &LoadModel,
) -> Result<(JacobianMat, ResidualVec), NetworkError> {
    let v_mag = z.vl.magnitude();
    if v_mag == 0.0 {
        return Err(NetworkError::SingularLoadVoltage);
    }
    let (dp_dv, dq_dv) = load.eval_deriv(v_mag, p.alpha)?;
    let x = net.x_line;
    let n = p.n_tap;
    // Chain rule through the load-voltage magnitude.
    let dv_re = z.vl.re / v_mag;
    let dv_im = z.vl.im / v_mag;

    let mut j = JacobianMat::zeros();
    // e1 = |v1|^2 - v1_mag^2
    j[(0, 0)] = 2.0 * z.v1.re;
    j[(0, 1)] = 2.0 * z.v1.im;
    // e2 = v1.re + x*ip.im - vp.re
    j[(1, 0)] = 1.0;
    j[(1, 5)] = x;
    j[(1, 2)] = -1.0;
    // e3 = v1.im - x*ip.re - vp.im
    j[(2, 1)] = 1.0;
    j[(2, 4)] = -x;
    j[(2, 3)] = -1.0;
    // e4, e5 = vp - n*vs
    j[(3, 2)] = 1.0;
    j[(3, 6)] = -n;
    j[(4, 3)] = 1.0;
    j[(4, 7)] = -n;
    // e6, e7 = n*ip - is_
    j[(5, 4)] = n;
    j[(5, 8)] = -1.0;
    j[(6, 5)] = n;
    j[(6, 9)] = -1.0;
    // e8, e9 = vs - vl
    j[(7, 6)] = 1.0;
    j[(7, 10)] = -1.0;
    j[(8, 7)] = 1.0;
    j[(8, 11)] = -1.0;
    // e10 = vl.re*is.re + vl.im*is.im - P(|vl|)
    j[(9, 10)] = z.is_.re - dp_dv * dv_re;
    j[(9, 11)] = z.is_.im - dp_dv * dv_im;
    j[(9, 8)] = z.vl.re;
    j[(9, 9)] = z.vl.im;
    // e11 = vl.im*is.re - vl.re*is.im - Q(|vl|)
    j[(10, 10)] = -z.is_.im - dq_dv * dv_re;
    j[(10, 11)] = z.is_.re - dq_dv * dv_im;
    j[(10, 8)] = z.vl.im;
    j[(10, 9)] = -z.vl.re;
    // e12 = vl.im
    j[(11, 11)] = 1.0;

    let mut dn = ResidualVec::zeros();
    dn[3] = -z.vs.re;
    dn[4] = -z.vs.im;
    dn[5] = z.ip.re;
    dn[6] = z.ip.im;

    Ok((j, dn))
}

/// Consistent circuit state for a given real load voltage and loading factor:
/// currents and upstream voltages follow from the circuit equations, leaving
/// only the source-magnitude constraint potentially unsatisfied.
pub fn expand_state(
    v_l: f64,
    alpha: f64,
    n_tap: f64,
    net: &NetworkParams,
    load: &LoadModel,
) -> Result<SystemState, NetworkError> {
    if !(v_l > 0.0) {
        return Err(NetworkError::SingularLoadVoltage);
    }
    let s = load.eval(v_l, alpha)?;
    let vl = Phasor::real(v_l);
    let is_ = Phasor::new(s.p / v_l, -s.q / v_l);
    let ip = is_.scale(1.0 / n_tap);
    let vp = vl.scale(n_tap);
    let v1 = vp + ip.mul_jx(net.x_line);
    Ok(SystemState { v1, vp, ip, vs: vl, is_, vl })
}

/// All loading factors at which a real load voltage `v_l` is a steady state
/// under tap `n_tap`, each expanded to a full state. Eliminating the circuit
/// equations at fixed `v_l` leaves a quadratic in alpha:
/// `a α² + b α + c = 0` with `a = X²(p²+q²)/(N²v_l²)`, `b = 2Xq`,
/// `c = N²v_l² − V̄₁²`, where (p, q) is the unit-alpha load power. Roots with
/// `α ≥ 0` are returned in ascending order; none is not an error.
pub fn solve_alpha_closed_form(
    v_l: f64,
    n_tap: f64,
    net: &NetworkParams,
    load: &LoadModel,
) -> Result<Vec<(f64, SystemState)>, NetworkError> {
    if !(v_l > 0.0) {
        return Err(NetworkError::SingularLoadVoltage);
    }
    let unit = load.eval(v_l, 1.0)?;
    let (p, q) = (unit.p, unit.q);
    let x = net.x_line;
    let nv = n_tap * v_l;
    let a = x * x * (p * p + q * q) / (nv * nv);
    let b = 2.0 * x * q;
    let c = nv * nv - net.v1_mag * net.v1_mag;

    let mut roots: Vec<f64> = Vec::new();
    if a == 0.0 {
        if b != 0.0 {
            roots.push(-c / b);
        } else if c == 0.0 {
            // Zero load at the matching voltage: alpha is arbitrary, report 0.
            roots.push(0.0);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc == 0.0 {
            roots.push(-b / (2.0 * a));
        } else if disc > 0.0 {
            let qn = -0.5 * (b + b.signum() * disc.sqrt());
            roots.push(qn / a);
            roots.push(c / qn);
        }
    }
    roots.retain(|r| *r >= 0.0);
    roots.sort_by(|l, r| l.partial_cmp(r).unwrap());
    roots.dedup_by(|l, r| (*l - *r).abs() < 1e-14);

    roots
        .into_iter()
        .map(|alpha| Ok((alpha, expand_state(v_l, alpha, n_tap, net, load)?)))
        .collect()
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 8;

/// One extra full step once the tolerance is met. Quadratic convergence
/// pushes the residual to rounding level, which keeps the solved voltage
/// sharp even where the fold inflates the sensitivity of v_l to residual.
fn polish(
    state: SystemState,
    norm: f64,
    p: &Params,
    net: &NetworkParams,
    load: &LoadModel,
) -> SystemState {
    if let Ok((jac, _)) = jacobian(&state, p, net, load) {
        if let Ok(res) = residual(&state, p, net, load) {
            if let Some(step) = jac.lu().solve(&(-res)) {
                let cand = SystemState::from_vector(&(state.to_vector() + step));
                if let Ok(r) = residual(&cand, p, net, load) {
                    if r.amax() < norm {
                        return cand;
                    }
                }
            }
        }
    }
    state
}

/// Damped Newton iteration on the full 12-equation system.
///
/// The step is halved while the residual infinity norm fails to decrease.
/// Deterministic: identical inputs produce identical iterates.
pub fn solve_newton(
    p: &Params,
    net: &NetworkParams,
    load: &LoadModel,
    guess: &SystemState,
) -> Result<SystemState, NetworkError> {
    let mut z = guess.to_vector();
    let mut state = *guess;
    let mut res = residual(&state, p, net, load)?;
    let mut norm = res.amax();

    for iter in 0..NEWTON_MAX_ITER {
        if norm < NEWTON_TOL {
            return Ok(polish(state, norm, p, net, load));
        }
        let (jac, _) = jacobian(&state, p, net, load)?;
        let step = jac
            .lu()
            .solve(&(-res))
            .ok_or(NetworkError::SingularJacobian)?;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let z_try = z + step.scale(scale);
            let s_try = SystemState::from_vector(&z_try);
            if let Ok(r_try) = residual(&s_try, p, net, load) {
                let n_try = r_try.amax();
                if n_try.is_finite() {
                    accepted = Some((z_try, s_try, r_try, n_try));
                    if n_try < norm {
                        break;
                    }
                    // Otherwise keep halving; the smallest evaluable step is
                    // retained so a flat stretch of the norm does not stall.
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((z_n, s_n, r_n, n_n)) => {
                z = z_n;
                state = s_n;
                res = r_n;
                norm = n_n;
            }
            None => {
                return Err(NetworkError::NonConvergence {
                    iterations: iter + 1,
                    residual_norm: norm,
                    last: state,
                });
            }
        }
    }
    if norm < NEWTON_TOL {
        return Ok(polish(state, norm, p, net, load));
    }
    Err(NetworkError::NonConvergence {
        iterations: NEWTON_MAX_ITER,
        residual_norm: norm,
        last: state,
    })
}
