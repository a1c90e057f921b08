//! Time-domain integration of the tap-changer DAE.
//!
//! The differential part is scalar (the tap ratio N); the network algebra is
//! resolved by a full Newton solve at every stage evaluation, warm-started
//! from the previously converged state so the integration stays on one
//! solution branch. Loss of solvability is voltage collapse and ends the run
//! with a marker instead of an error.

use std::io::{self, Write};

use thiserror::Error;

use crate::fmt::sig9;
use crate::loadmodel::LoadModel;
use crate::modal::OltcParams;
use crate::network::{solve_newton, NetworkError, NetworkParams, Params, SystemState};

#[derive(Debug, Error)]
pub enum TdsimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("initial algebraic solve failed: {0}")]
    InvalidStart(#[source] NetworkError),
    #[error("trajectory has {samples} usable samples in the linear regime; at least 10 are needed")]
    NotMeasurable { samples: usize },
}

/// Fixed loading, initial tap, controller parameters, and step control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub alpha: f64,
    pub n_initial: f64,
    pub oltc: OltcParams,
    pub t_end: f64,
    pub dt: f64,
    pub guess: SystemState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub n_tap: f64,
    pub v_l: f64,
    pub p_load: f64,
    pub q_load: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    /// Time at which the inner solve lost the branch, if the run collapsed.
    pub collapsed_at: Option<f64>,
}

/// A step jump this large in load voltage means the solver hopped to another
/// branch rather than tracking the current one.
const BRANCH_JUMP_LIMIT: f64 = 0.1;

/// Integrates `dN/dt = (v_l - v_ref)/tau` with classical 4th-order
/// Runge-Kutta; every stage resolves the network algebra by Newton iteration.
/// The accepted-state solve of one step provides the first stage of the next.
pub fn simulate(
    cfg: &SimConfig,
    net: &NetworkParams,
    load: &LoadModel,
) -> Result<Trajectory, TdsimError> {
    if !(cfg.dt > 0.0) || cfg.t_end < cfg.dt {
        return Err(TdsimError::InvalidConfig(format!(
            "need dt > 0 and t_end >= dt (got dt={}, t_end={})",
            cfg.dt, cfg.t_end
        )));
    }
    if !(cfg.n_initial > 0.0) {
        return Err(TdsimError::InvalidConfig(format!(
            "initial tap ratio must be positive (got {})",
            cfg.n_initial
        )));
    }

    let stage = |n: f64, warm: &SystemState| -> Result<(f64, SystemState), NetworkError> {
        let p = Params { alpha: cfg.alpha, n_tap: n };
        let z = solve_newton(&p, net, load, warm)?;
        Ok(((z.vl.re - cfg.oltc.v_ref) / cfg.oltc.tau, z))
    };

    let mut n = cfg.n_initial;
    let mut z = stage(n, &cfg.guess)
        .map(|(_, z)| z)
        .map_err(TdsimError::InvalidStart)?;

    let steps = (cfg.t_end / cfg.dt * (1.0 + 1e-9)).floor() as usize;
    let mut points = Vec::with_capacity(steps + 1);
    points.push(sample(0.0, n, &z, cfg.alpha, load));

    for k in 0..steps {
        let t_next = (k + 1) as f64 * cfg.dt;
        let k1 = (z.vl.re - cfg.oltc.v_ref) / cfg.oltc.tau;
        let advanced = (|| -> Result<(f64, SystemState), NetworkError> {
            let (k2, z2) = stage(n + 0.5 * cfg.dt * k1, &z)?;
            let (k3, z3) = stage(n + 0.5 * cfg.dt * k2, &z2)?;
            let (k4, z4) = stage(n + cfg.dt * k3, &z3)?;
            let n_next = n + cfg.dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            let (_, z_next) = stage(n_next, &z4)?;
            Ok((n_next, z_next))
        })();
        match advanced {
            Ok((n_next, z_next)) if (z_next.vl.re - z.vl.re).abs() <= BRANCH_JUMP_LIMIT => {
                n = n_next;
                z = z_next;
                points.push(sample(t_next, n, &z, cfg.alpha, load));
            }
            _ => {
                return Ok(Trajectory {
                    points,
                    collapsed_at: Some(t_next),
                });
            }
        }
    }
    Ok(Trajectory { points, collapsed_at: None })
}

fn sample(t: f64, n: f64, z: &SystemState, alpha: f64, load: &LoadModel) -> TrajectoryPoint {
    let (p_load, q_load) = match load.eval(z.vl.magnitude(), alpha) {
        Ok(s) => (s.p, s.q),
        Err(_) => (f64::NAN, f64::NAN),
    };
    TrajectoryPoint { t, n_tap: n, v_l: z.vl.re, p_load, q_load }
}

/// Exponential rate of `|N(t) - n_eq|` from a log-linear least-squares fit
/// over the samples inside the linear regime `|N - n_eq| in [1e-8, 1e-2]`.
/// Negative means decay toward the equilibrium, matching the eigenvalue sign
/// convention.
pub fn measure_decay_rate(points: &[TrajectoryPoint], n_eq: f64) -> Result<f64, TdsimError> {
    let samples: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| {
            let d = (p.n_tap - n_eq).abs();
            (1e-8..=1e-2).contains(&d).then(|| (p.t, d.ln()))
        })
        .collect();
    if samples.len() < 10 {
        return Err(TdsimError::NotMeasurable { samples: samples.len() });
    }
    let inv = 1.0 / samples.len() as f64;
    let t_mean = samples.iter().map(|(t, _)| t).sum::<f64>() * inv;
    let y_mean = samples.iter().map(|(_, y)| y).sum::<f64>() * inv;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in &samples {
        num += (t - t_mean) * (y - y_mean);
        den += (t - t_mean) * (t - t_mean);
    }
    if den == 0.0 {
        return Err(TdsimError::NotMeasurable { samples: samples.len() });
    }
    Ok(num / den)
}

/// Trajectory CSV; a collapsed run ends with a comment line marking the time.
pub fn write_trajectory_csv<W: Write + ?Sized>(traj: &Trajectory, w: &mut W) -> io::Result<()> {
    writeln!(w, "t_s,n_tap,v_l_pu,p_pu,q_pu")?;
    for p in &traj.points {
        writeln!(
            w,
            "{},{},{},{},{}",
            sig9(p.t),
            sig9(p.n_tap),
            sig9(p.v_l),
            sig9(p.p_load),
            sig9(p.q_load)
        )?;
    }
    if let Some(t) = traj.collapsed_at {
        writeln!(w, "# collapsed at t={}", sig9(t))?;
    }
    Ok(())
}
