//! Steady-state P-V manifold tracing.
//!
//! The load voltage is the continuation parameter: each grid voltage is fed
//! to the closed-form loading solve, which stays well conditioned through the
//! nose where a power-parametrized sweep would lose invertibility. Points are
//! re-verified through the full residual before they are admitted.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::fmt::sig9;
use crate::loadmodel::LoadModel;
use crate::modal::Stability;
use crate::network::{residual, solve_alpha_closed_form, NetworkError, NetworkParams, Params};

/// Position of a point relative to the maximum-power point of its sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Upper,
    Nose,
    Lower,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Upper => "upper",
            Branch::Nose => "nose",
            Branch::Lower => "lower",
        })
    }
}

/// One verified steady state on a P-V curve. `eigenvalue` and `stable` stay
/// empty until modal classification fills them in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub v_l: f64,
    pub alpha: f64,
    pub p_load: f64,
    pub q_load: f64,
    pub n_tap: f64,
    pub branch: Branch,
    pub eigenvalue: Option<f64>,
    pub stable: Option<Stability>,
}

/// A traced curve for one tap ratio, ordered by descending load voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    pub points: Vec<CurvePoint>,
    pub n_tap: f64,
    pub load_id: String,
    /// (p_max, v_crit) of the refined maximum-power point.
    pub nose: (f64, f64),
}

impl Manifold {
    pub fn nose_point(&self) -> (f64, f64) {
        self.nose
    }
}

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error("voltage grid is invalid: {0}")]
    InvalidGrid(String),
    #[error("no grid voltage admits a steady state at tap {n_tap}")]
    Empty { n_tap: f64 },
    #[error("state at v_l={v_l} failed residual verification (norm {norm:.3e})")]
    Verification { v_l: f64, norm: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Descending grid from `start` to `v_min` in steps of `v_step`.
pub fn grid(start: f64, v_min: f64, v_step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if !(v_step > 0.0) || !(v_min > 0.0) {
        return out;
    }
    let mut k = 0usize;
    loop {
        let v = start - v_step * k as f64;
        if v < v_min - 1e-12 {
            break;
        }
        out.push(v);
        k += 1;
    }
    out
}

/// The standard sweep for a tap ratio: from just under the zero-load voltage
/// `v1_mag / n_tap` down to 0.05 pu in millivolt-per-unit steps.
pub fn default_grid(v1_mag: f64, n_tap: f64) -> Vec<f64> {
    grid(0.999 * v1_mag / n_tap, 0.05, 1e-3)
}

const VERIFY_TOL: f64 = 1e-9;
const NOSE_BRACKET_TOL: f64 = 1e-9;

fn validated_descending(v_grid: &[f64]) -> Result<Vec<f64>, ContinuationError> {
    if v_grid.is_empty() {
        return Err(ContinuationError::InvalidGrid("grid is empty".into()));
    }
    if let Some(bad) = v_grid.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(ContinuationError::InvalidGrid(format!(
            "grid voltages must be positive and finite (got {bad})"
        )));
    }
    let mut g: Vec<f64> = v_grid.to_vec();
    if g.len() >= 2 && g[0] < g[1] {
        g.reverse();
    }
    if g.windows(2).any(|w| w[0] <= w[1]) {
        return Err(ContinuationError::InvalidGrid(
            "grid must be strictly ordered without duplicates".into(),
        ));
    }
    Ok(g)
}

/// Best (max active power) verified solution at one voltage, if any.
fn best_power_at(
    v: f64,
    n_tap: f64,
    net: &NetworkParams,
    load: &LoadModel,
) -> Result<Option<CurvePoint>, ContinuationError> {
    let mut best: Option<CurvePoint> = None;
    for point in solutions_at(v, n_tap, net, load)? {
        if best.is_none_or(|b| point.p_load > b.p_load) {
            best = Some(point);
        }
    }
    Ok(best)
}

fn solutions_at(
    v: f64,
    n_tap: f64,
    net: &NetworkParams,
    load: &LoadModel,
) -> Result<Vec<CurvePoint>, ContinuationError> {
    let mut out = Vec::new();
    for (alpha, z) in solve_alpha_closed_form(v, n_tap, net, load)? {
        let p = Params { alpha, n_tap };
        let r = residual(&z, &p, net, load)?;
        let norm = r.amax();
        if norm >= VERIFY_TOL {
            return Err(ContinuationError::Verification { v_l: v, norm });
        }
        let s = load.eval(v, alpha).map_err(NetworkError::Load)?;
        out.push(CurvePoint {
            v_l: v,
            alpha,
            p_load: s.p,
            q_load: s.q,
            n_tap,
            branch: Branch::Upper,
            eigenvalue: None,
            stable: None,
        });
    }
    Ok(out)
}

/// Golden-section maximization of transferred power over a voltage bracket.
fn refine_nose(
    lo: f64,
    hi: f64,
    n_tap: f64,
    net: &NetworkParams,
    load: &LoadModel,
) -> Result<Option<CurvePoint>, ContinuationError> {
    let ratio = (5.0f64.sqrt() - 1.0) / 2.0;
    let power = |v: f64| -> Result<f64, ContinuationError> {
        Ok(best_power_at(v, n_tap, net, load)?.map_or(f64::NEG_INFINITY, |p| p.p_load))
    };
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = power(c)?;
    let mut fd = power(d)?;
    while b - a > NOSE_BRACKET_TOL {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = power(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = power(d)?;
        }
    }
    best_power_at(0.5 * (a + b), n_tap, net, load)
}

/// Traces the steady-state manifold for one tap over a voltage grid.
///
/// Each grid voltage contributes every loading-factor root it admits (two
/// points at one voltage are possible). The maximum-power point is sharpened
/// by a bracketed search between its grid neighbors and inserted into the
/// sweep, so `nose` is exactly the maximum over `points`. Branch labels are
/// assigned relative to that point.
pub fn trace_manifold(
    net: &NetworkParams,
    load: &LoadModel,
    n_tap: f64,
    v_grid: &[f64],
) -> Result<Manifold, ContinuationError> {
    if !(n_tap > 0.0) {
        return Err(ContinuationError::InvalidGrid(format!(
            "tap ratio must be positive (got {n_tap})"
        )));
    }
    let grid = validated_descending(v_grid)?;
    let mut points: Vec<CurvePoint> = Vec::new();
    for &v in &grid {
        points.extend(solutions_at(v, n_tap, net, load)?);
    }
    if points.is_empty() {
        return Err(ContinuationError::Empty { n_tap });
    }

    let mut idx = max_power_index(&points);

    // Bracket the maximum between the neighboring grid voltages and replace
    // the coarse nose with the refined point.
    let vm = points[idx].v_l;
    let gi = grid.iter().position(|&g| g == vm);
    if let Some(gi) = gi {
        if gi > 0 && gi + 1 < grid.len() {
            if let Some(refined) = refine_nose(grid[gi + 1], grid[gi - 1], n_tap, net, load)? {
                if refined.p_load >= points[idx].p_load {
                    let at = points
                        .iter()
                        .position(|p| p.v_l < refined.v_l)
                        .unwrap_or(points.len());
                    if (points[idx].v_l - refined.v_l).abs() < 1e-12 {
                        points[idx] = refined;
                    } else {
                        points.insert(at, refined);
                    }
                    idx = max_power_index(&points);
                }
            }
        }
    }

    for (i, p) in points.iter_mut().enumerate() {
        p.branch = match i.cmp(&idx) {
            std::cmp::Ordering::Less => Branch::Upper,
            std::cmp::Ordering::Equal => Branch::Nose,
            std::cmp::Ordering::Greater => Branch::Lower,
        };
    }

    Ok(Manifold {
        nose: (points[idx].p_load, points[idx].v_l),
        points,
        n_tap,
        load_id: load.id.clone(),
    })
}

fn max_power_index(points: &[CurvePoint]) -> usize {
    let mut idx = 0;
    for (i, p) in points.iter().enumerate() {
        if p.p_load > points[idx].p_load {
            idx = i;
        }
    }
    idx
}

/// One manifold per tap, in the given tap order. `v_grid = None` applies the
/// per-tap default grid; an explicit grid is shared by all taps.
pub fn trace_family(
    net: &NetworkParams,
    load: &LoadModel,
    taps: &[f64],
    v_grid: Option<&[f64]>,
) -> Result<Vec<Manifold>, ContinuationError> {
    taps.iter()
        .map(|&n_tap| match v_grid {
            Some(g) => trace_manifold(net, load, n_tap, g),
            None => {
                let g = default_grid(net.v1_mag, n_tap);
                trace_manifold(net, load, n_tap, &g)
            }
        })
        .collect()
}

/// Writes curve CSV rows grouped by tap, descending load voltage within each.
pub fn write_family_csv<W: Write + ?Sized>(
    manifolds: &[Manifold],
    include_modal: bool,
    w: &mut W,
) -> io::Result<()> {
    if include_modal {
        writeln!(w, "n_tap,v_l_pu,alpha,p_pu,q_pu,branch,eigenvalue_per_s,stable")?;
    } else {
        writeln!(w, "n_tap,v_l_pu,alpha,p_pu,q_pu,branch")?;
    }
    for m in manifolds {
        for p in &m.points {
            write!(
                w,
                "{},{},{},{},{},{}",
                sig9(p.n_tap),
                sig9(p.v_l),
                sig9(p.alpha),
                sig9(p.p_load),
                sig9(p.q_load),
                p.branch
            )?;
            if include_modal {
                let eig = p.eigenvalue.map(sig9).unwrap_or_default();
                let st = p.stable.map(|s| s.to_string()).unwrap_or_default();
                write!(w, ",{eig},{st}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
