//! Small-signal stability of the tap-changer dynamics at traced equilibria.
//!
//! The combined model is a one-dimensional DAE: the tap ratio integrates the
//! regulation error, `dN/dt = (v_l - v_ref) / tau`, subject to the network
//! algebra. Reducing the linearization through the algebraic constraint
//! leaves a single real eigenvalue per point,
//! `lambda = (dv_l/dN) / tau` with `dz/dN = -g_z^{-1} g_N`.

use std::fmt;

use thiserror::Error;

use crate::continuation::{CurvePoint, Manifold};
use crate::loadmodel::LoadModel;
use crate::network::{
    expand_state, jacobian, solve_newton, NetworkError, NetworkParams, Params,
};

/// Tap-changer integrator time constant and regulation target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OltcParams {
    pub tau: f64,
    pub v_ref: f64,
}

#[derive(Debug, Error)]
pub enum ModalError {
    #[error("oltc time constant must be positive (got {0})")]
    InvalidTau(f64),
    #[error("algebraic jacobian is singular at v_l={v_l}; the point sits at the nose")]
    NearNose { v_l: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl OltcParams {
    pub fn new(tau: f64, v_ref: f64) -> Result<Self, ModalError> {
        if !(tau > 0.0) {
            return Err(ModalError::InvalidTau(tau));
        }
        Ok(OltcParams { tau, v_ref })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
    Indeterminate,
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Indeterminate => "indeterminate",
        })
    }
}

/// Reduced eigenvalue of the tap dynamics at a curve point, in 1/s.
///
/// The point is its own equilibrium (v_ref taken as the point's v_l), so the
/// eigenvalue needs only the voltage sensitivity to the tap at fixed loading.
pub fn oltc_eigenvalue(
    point: &CurvePoint,
    net: &NetworkParams,
    load: &LoadModel,
    oltc: &OltcParams,
) -> Result<f64, ModalError> {
    let z = expand_state(point.v_l, point.alpha, point.n_tap, net, load)?;
    let p = Params { alpha: point.alpha, n_tap: point.n_tap };
    let (g_z, g_n) = jacobian(&z, &p, net, load)?;
    let sens = g_z
        .lu()
        .solve(&(-g_n))
        .ok_or(ModalError::NearNose { v_l: point.v_l })?;
    Ok(sens[10] / oltc.tau)
}

/// Finite-difference check of [`oltc_eigenvalue`]: re-solves the network at
/// `n_tap` shifted by `±1e-6` and differences the load voltage.
pub fn oltc_eigenvalue_fd(
    point: &CurvePoint,
    net: &NetworkParams,
    load: &LoadModel,
    oltc: &OltcParams,
) -> Result<f64, ModalError> {
    let delta = 1e-6;
    let guess = expand_state(point.v_l, point.alpha, point.n_tap, net, load)?;
    let mut v = [0.0; 2];
    for (i, sign) in [1.0, -1.0].into_iter().enumerate() {
        let p = Params {
            alpha: point.alpha,
            n_tap: point.n_tap + sign * delta,
        };
        v[i] = solve_newton(&p, net, load, &guess)?.vl.re;
    }
    Ok((v[0] - v[1]) / (2.0 * delta) / oltc.tau)
}

/// Classifies every point of a manifold, treating each as an equilibrium of
/// the combined dynamics. Near-nose singularities mark the point
/// indeterminate instead of aborting the sweep.
pub fn classify_curve(
    manifold: &Manifold,
    net: &NetworkParams,
    load: &LoadModel,
    oltc: &OltcParams,
) -> Manifold {
    let eps = 1e-9 / oltc.tau;
    let mut out = manifold.clone();
    for point in &mut out.points {
        match oltc_eigenvalue(point, net, load, oltc) {
            Ok(lambda) => {
                point.eigenvalue = Some(lambda);
                point.stable = Some(if lambda < -eps {
                    Stability::Stable
                } else if lambda > eps {
                    Stability::Unstable
                } else {
                    Stability::Indeterminate
                });
            }
            Err(_) => {
                point.eigenvalue = None;
                point.stable = Some(Stability::Indeterminate);
            }
        }
    }
    out
}
