//! Voltage-dependent load models in quadratic ZIP form and their
//! identification from measurements.
//!
//! Both active and reactive power follow
//! `S(v) = alpha * scale * (c_z (v/v_ref)^2 + c_i (v/v_ref) + c_p)`,
//! which covers the identified air-conditioner polynomials as well as the
//! constant-impedance and constant-power comparison loads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadModelError {
    #[error("load voltage must be strictly positive (got {0})")]
    NonPositiveVoltage(f64),
    #[error("fit needs at least 3 distinct sample voltages (got {distinct})")]
    RankDeficient { distinct: usize },
    #[error("anchor power is zero but the channel is not identically zero; cannot normalize")]
    DegenerateAnchor,
    #[error("least-squares system could not be solved")]
    FitFailed,
    #[error("unknown load preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid model file: {0}")]
    InvalidModelFile(String),
    #[error("measurement csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Normalized quadratic load model for one device or aggregate.
///
/// Coefficients are dimensionless; `p_scale`/`q_scale` carry the per-unit
/// magnitude. `q_scale` is signed: negative means capacitive at reference
/// conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadModel {
    pub p_z: f64,
    pub p_i: f64,
    pub p_p: f64,
    pub p_scale: f64,
    pub q_z: f64,
    pub q_i: f64,
    pub q_p: f64,
    pub q_scale: f64,
    /// Reference voltage the polynomial argument is normalized by (pu).
    pub v_ref: f64,
    /// Closed voltage interval (pu) over which the model was identified.
    pub validity: (f64, f64),
    /// Human-readable identifier carried into traced manifolds.
    pub id: String,
}

/// One held-voltage measurement point in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSample {
    pub voltage: f64,
    pub active_power: f64,
    pub reactive_power: f64,
}

/// Result of evaluating a load model at a voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadPower {
    pub p: f64,
    pub q: f64,
    /// Set when the voltage lies outside the model's identified validity
    /// interval; the polynomial is extrapolated, not clamped.
    pub extrapolated: bool,
}

impl LoadModel {
    /// Active/reactive power drawn at voltage `v` (pu) and loading factor `alpha`.
    pub fn eval(&self, v: f64, alpha: f64) -> Result<LoadPower, LoadModelError> {
        if !(v > 0.0) {
            return Err(LoadModelError::NonPositiveVoltage(v));
        }
        let x = v / self.v_ref;
        let p = alpha * self.p_scale * (self.p_z * x * x + self.p_i * x + self.p_p);
        let q = alpha * self.q_scale * (self.q_z * x * x + self.q_i * x + self.q_p);
        Ok(LoadPower {
            p,
            q,
            extrapolated: v < self.validity.0 || v > self.validity.1,
        })
    }

    /// Derivatives (dP/dv, dQ/dv) at voltage `v` and loading factor `alpha`.
    pub fn eval_deriv(&self, v: f64, alpha: f64) -> Result<(f64, f64), LoadModelError> {
        if !(v > 0.0) {
            return Err(LoadModelError::NonPositiveVoltage(v));
        }
        let x = v / self.v_ref;
        let dp = alpha * self.p_scale * (2.0 * self.p_z * x + self.p_i) / self.v_ref;
        let dq = alpha * self.q_scale * (2.0 * self.q_z * x + self.q_i) / self.v_ref;
        Ok((dp, dq))
    }

    /// Voltages in (0, inf) where the reactive polynomial changes sign, ascending.
    pub fn reactive_sign_crossings(&self) -> Vec<f64> {
        let mut roots = real_roots(self.q_z, self.q_i, self.q_p);
        roots.retain(|&r| r > 0.0);
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        roots
    }
}

/// Roots of `a x^2 + b x + c = 0`, numerically stable form; may be 0, 1 or 2.
fn real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        if b == 0.0 {
            return vec![];
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    if disc == 0.0 {
        return vec![-b / (2.0 * a)];
    }
    let sq = disc.sqrt();
    let qn = -0.5 * (b + b.signum() * sq);
    vec![qn / a, c / qn]
}

fn tan_phi_095() -> f64 {
    (1.0f64 - 0.95 * 0.95).sqrt() / 0.95
}

/// Built-in load models used throughout the analysis and tests.
pub fn preset(name: &str) -> Result<LoadModel, LoadModelError> {
    let m = match name {
        // Identified air-conditioner aggregate. The quadratic coefficients come
        // from the measurement fit; the reactive scale is the ratio of the
        // device's nominal reactive to active power (39.31 var / 494.79 W).
        "aircon" => LoadModel {
            p_z: 2.175,
            p_i: -3.521,
            p_p: 2.347,
            p_scale: 1.0,
            q_z: 81.870,
            q_i: -143.147,
            q_p: 62.270,
            q_scale: 39.31 / 494.79,
            v_ref: 1.0,
            validity: (0.60, 1.06),
            id: "aircon".into(),
        },
        "resistive" => LoadModel {
            p_z: 1.0,
            p_i: 0.0,
            p_p: 0.0,
            p_scale: 1.0,
            q_z: 0.0,
            q_i: 0.0,
            q_p: 0.0,
            q_scale: 0.0,
            v_ref: 1.0,
            validity: (0.05, 2.0),
            id: "resistive".into(),
        },
        // Constant-impedance load at power factor 0.95 lagging.
        "inductive_095" => LoadModel {
            p_z: 1.0,
            p_i: 0.0,
            p_p: 0.0,
            p_scale: 1.0,
            q_z: tan_phi_095(),
            q_i: 0.0,
            q_p: 0.0,
            q_scale: 1.0,
            v_ref: 1.0,
            validity: (0.05, 2.0),
            id: "inductive_095".into(),
        },
        "constant_power_unity" => LoadModel {
            p_z: 0.0,
            p_i: 0.0,
            p_p: 1.0,
            p_scale: 1.0,
            q_z: 0.0,
            q_i: 0.0,
            q_p: 0.0,
            q_scale: 0.0,
            v_ref: 1.0,
            validity: (0.05, 2.0),
            id: "constant_power_unity".into(),
        },
        "constant_power_095" => LoadModel {
            p_z: 0.0,
            p_i: 0.0,
            p_p: 1.0,
            p_scale: 1.0,
            q_z: 0.0,
            q_i: 0.0,
            q_p: tan_phi_095(),
            q_scale: 1.0,
            v_ref: 1.0,
            validity: (0.05, 2.0),
            id: "constant_power_095".into(),
        },
        other => return Err(LoadModelError::UnknownPreset(other.to_string())),
    };
    Ok(m)
}

/// Diagnostics accompanying a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Anchor powers: the measured values at the sample nearest `v_nominal`.
    pub p_n_watts: f64,
    pub q_n_vars: f64,
    /// Voltage of the anchor sample (volts).
    pub anchor_voltage: f64,
    pub v_nominal: f64,
    /// Residual RMS per channel in anchor-normalized units.
    pub rms_p: f64,
    pub rms_q: f64,
    pub n_samples: usize,
}

/// Least-squares identification of the quadratic model from measurements.
///
/// Each channel is normalized by its anchor (the measured value at the sample
/// nearest `v_nominal`) and regressed on `(x^2, x, 1)` with
/// `x = voltage / v_nominal`. A channel that is identically zero yields zero
/// coefficients and zero scale.
pub fn fit_quadratic(
    samples: &[MeasurementSample],
    v_nominal: f64,
) -> Result<(LoadModel, FitReport), LoadModelError> {
    if !(v_nominal > 0.0) {
        return Err(LoadModelError::NonPositiveVoltage(v_nominal));
    }
    let mut distinct: Vec<f64> = Vec::new();
    for s in samples {
        if !(s.voltage > 0.0) {
            return Err(LoadModelError::NonPositiveVoltage(s.voltage));
        }
        if !distinct.iter().any(|&v| (v - s.voltage).abs() <= 1e-12 * v_nominal) {
            distinct.push(s.voltage);
        }
    }
    if distinct.len() < 3 {
        return Err(LoadModelError::RankDeficient { distinct: distinct.len() });
    }

    let anchor = samples
        .iter()
        .min_by(|a, b| {
            let da = (a.voltage - v_nominal).abs();
            let db = (b.voltage - v_nominal).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();

    let design = DMatrix::from_fn(samples.len(), 3, |r, c| {
        let x = samples[r].voltage / v_nominal;
        match c {
            0 => x * x,
            1 => x,
            _ => 1.0,
        }
    });
    let svd = design.clone().svd(true, true);

    let fit_channel = |values: Vec<f64>, anchor_value: f64| -> Result<([f64; 3], f64), LoadModelError> {
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs == 0.0 {
            return Ok(([0.0, 0.0, 0.0], 0.0));
        }
        if anchor_value == 0.0 {
            return Err(LoadModelError::DegenerateAnchor);
        }
        let y = DVector::from_iterator(values.len(), values.iter().map(|v| v / anchor_value));
        let coeffs = svd.solve(&y, 1e-14).map_err(|_| LoadModelError::FitFailed)?;
        let resid = &design * &coeffs - &y;
        let rms = (resid.norm_squared() / values.len() as f64).sqrt();
        Ok(([coeffs[0], coeffs[1], coeffs[2]], rms))
    };

    let (pc, rms_p) = fit_channel(
        samples.iter().map(|s| s.active_power).collect(),
        anchor.active_power,
    )?;
    let (qc, rms_q) = fit_channel(
        samples.iter().map(|s| s.reactive_power).collect(),
        anchor.reactive_power,
    )?;

    let vmin = samples.iter().map(|s| s.voltage).fold(f64::INFINITY, f64::min);
    let vmax = samples.iter().map(|s| s.voltage).fold(f64::NEG_INFINITY, f64::max);

    let q_scale = if anchor.reactive_power == 0.0 && qc == [0.0; 3] {
        0.0
    } else {
        anchor.reactive_power / anchor.active_power
    };

    let model = LoadModel {
        p_z: pc[0],
        p_i: pc[1],
        p_p: pc[2],
        p_scale: 1.0,
        q_z: qc[0],
        q_i: qc[1],
        q_p: qc[2],
        q_scale,
        v_ref: 1.0,
        validity: (vmin / v_nominal, vmax / v_nominal),
        id: "fitted".into(),
    };
    let report = FitReport {
        p_n_watts: anchor.active_power,
        q_n_vars: anchor.reactive_power,
        anchor_voltage: anchor.voltage,
        v_nominal,
        rms_p,
        rms_q,
        n_samples: samples.len(),
    };
    Ok((model, report))
}

#[derive(Debug, Deserialize)]
struct RawSample {
    #[serde(rename = "voltage_V")]
    voltage: f64,
    #[serde(rename = "active_power_W")]
    active_power: f64,
    #[serde(rename = "reactive_power_var")]
    reactive_power: f64,
}

/// Reads a measurement CSV with header `voltage_V,active_power_W,reactive_power_var`.
pub fn read_measurement_csv<R: Read>(reader: R) -> Result<Vec<MeasurementSample>, LoadModelError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let raw: RawSample = row?;
        out.push(MeasurementSample {
            voltage: raw.voltage,
            active_power: raw.active_power,
            reactive_power: raw.reactive_power,
        });
    }
    Ok(out)
}

pub fn read_measurement_file(path: &Path) -> Result<Vec<MeasurementSample>, LoadModelError> {
    read_measurement_csv(BufReader::new(File::open(path)?))
}

/// On-disk model representation (physical anchors, normalized coefficients).
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub p_coeffs: [f64; 3],
    pub q_coeffs: [f64; 3],
    #[serde(rename = "p_scale_W")]
    pub p_scale_w: f64,
    pub q_scale_var: f64,
    #[serde(rename = "v_nominal_V")]
    pub v_nominal_v: f64,
    pub validity_pu: [f64; 2],
}

impl ModelFile {
    pub fn from_fit(model: &LoadModel, report: &FitReport) -> ModelFile {
        ModelFile {
            p_coeffs: [model.p_z, model.p_i, model.p_p],
            q_coeffs: [model.q_z, model.q_i, model.q_p],
            p_scale_w: report.p_n_watts,
            q_scale_var: report.q_n_vars,
            v_nominal_v: report.v_nominal,
            validity_pu: [model.validity.0, model.validity.1],
        }
    }

    /// Reconstructs the per-unit model used for tracing and simulation.
    ///
    /// The device shape is treated as an aggregate: the active scale becomes
    /// 1 pu and the reactive scale keeps the device's signed Q/P ratio.
    pub fn to_load_model(&self, id: &str) -> Result<LoadModel, LoadModelError> {
        if self.v_nominal_v <= 0.0 {
            return Err(LoadModelError::InvalidModelFile(
                "v_nominal_V must be positive".into(),
            ));
        }
        if !(self.validity_pu[0] > 0.0) || self.validity_pu[1] < self.validity_pu[0] {
            return Err(LoadModelError::InvalidModelFile(
                "validity_pu must be a non-empty interval with positive lower bound".into(),
            ));
        }
        let q_scale = if self.q_scale_var == 0.0 {
            0.0
        } else {
            if self.p_scale_w == 0.0 {
                return Err(LoadModelError::InvalidModelFile(
                    "p_scale_W is zero; reactive scale cannot be normalized".into(),
                ));
            }
            self.q_scale_var / self.p_scale_w
        };
        Ok(LoadModel {
            p_z: self.p_coeffs[0],
            p_i: self.p_coeffs[1],
            p_p: self.p_coeffs[2],
            p_scale: 1.0,
            q_z: self.q_coeffs[0],
            q_i: self.q_coeffs[1],
            q_p: self.q_coeffs[2],
            q_scale,
            v_ref: 1.0,
            validity: (self.validity_pu[0], self.validity_pu[1]),
            id: id.into(),
        })
    }
}

pub fn write_model_file(path: &Path, file: &ModelFile) -> Result<(), LoadModelError> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, file)?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<ModelFile, LoadModelError> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn aircon_nominal_point() {
        let m = preset("aircon").unwrap();
        let s = m.eval(1.0, 1.0).unwrap();
        assert_relative_eq!(s.p, 1.001 * m.p_scale, max_relative = 1e-12);
        assert_relative_eq!(s.q, 0.993 * m.q_scale, max_relative = 1e-12);
        assert!(!s.extrapolated);
    }

    #[test]
    fn aircon_low_voltage_point() {
        let m = preset("aircon").unwrap();
        let s = m.eval(0.6, 1.0).unwrap();
        assert_relative_eq!(s.p, 1.0174 * m.p_scale, max_relative = 1e-10);
        assert_relative_eq!(s.q, 5.8550 * m.q_scale, max_relative = 1e-10);
    }

    #[test]
    fn zero_alpha_draws_nothing() {
        for name in [
            "aircon",
            "resistive",
            "inductive_095",
            "constant_power_unity",
            "constant_power_095",
        ] {
            let m = preset(name).unwrap();
            let s = m.eval(0.8, 0.0).unwrap();
            assert_eq!((s.p, s.q), (0.0, 0.0));
        }
    }

    #[test]
    fn extrapolation_is_flagged_not_clamped() {
        let m = preset("aircon").unwrap();
        let inside = m.eval(0.75, 1.0).unwrap();
        assert!(!inside.extrapolated);
        let below = m.eval(0.4, 1.0).unwrap();
        assert!(below.extrapolated);
        // Polynomial value, not a clamp of the boundary value.
        let expect = 2.175 * 0.16 - 3.521 * 0.4 + 2.347;
        assert_relative_eq!(below.p, expect, max_relative = 1e-12);
    }

    #[test]
    fn rejects_non_positive_voltage() {
        let m = preset("resistive").unwrap();
        assert!(m.eval(0.0, 1.0).is_err());
        assert!(m.eval(-1.0, 1.0).is_err());
    }

    #[test]
    fn preset_scales() {
        let m = preset("aircon").unwrap();
        assert_relative_eq!(m.q_scale / m.p_scale, 0.079448, max_relative = 1e-4);
        let r = preset("resistive").unwrap();
        let s = r.eval(1.0, 1.0).unwrap();
        assert_eq!((s.p, s.q), (r.p_scale, 0.0));
        assert!(preset("unknown").is_err());
    }

    #[test]
    fn inductive_ratio_constant_across_voltage() {
        let m = preset("inductive_095").unwrap();
        let expect = (1.0f64 - 0.95 * 0.95).sqrt() / 0.95;
        for v in [0.2, 0.5, 0.9, 1.3] {
            let s = m.eval(v, 0.7).unwrap();
            assert_relative_eq!(s.q / s.p, expect, max_relative = 1e-12);
            assert_relative_eq!(s.q / s.p, 0.328684, max_relative = 1e-5);
        }
    }

    #[test]
    fn aircon_reactive_crossings() {
        let m = preset("aircon").unwrap();
        let roots = m.reactive_sign_crossings();
        assert_eq!(roots.len(), 2);
        assert_relative_eq!(roots[0], 0.8135, epsilon = 1e-3);
        assert_relative_eq!(roots[1], 0.9350, epsilon = 1e-3);
        // Q is negative strictly between the crossings.
        let mid = m.eval(0.87, 1.0).unwrap();
        assert!(mid.q < 0.0);
        let lo = m.eval(0.6, 1.0).unwrap();
        assert!(lo.q > 5.8 * m.q_scale);
    }

    #[test]
    fn crossings_edge_cases() {
        let ind = preset("inductive_095").unwrap();
        assert!(ind.reactive_sign_crossings().is_empty());
        let mut m = preset("resistive").unwrap();
        m.q_z = 1.0;
        m.q_i = 0.0;
        m.q_p = -1.0;
        assert_eq!(m.reactive_sign_crossings(), vec![1.0]);
    }

    #[test]
    fn aircon_active_minimum_location() {
        let m = preset("aircon").unwrap();
        let v_min = 3.521 / (2.0 * 2.175);
        assert_relative_eq!(v_min, 0.80943, epsilon = 1e-5);
        let at = m.eval(v_min, 1.0).unwrap().p;
        for dv in [-0.05, -0.01, 0.01, 0.05] {
            assert!(m.eval(v_min + dv, 1.0).unwrap().p > at);
        }
        // Strictly increasing as voltage falls below the minimum.
        let mut prev = at;
        let mut v = v_min - 0.02;
        while v > 0.1 {
            let p = m.eval(v, 1.0).unwrap().p;
            assert!(p > prev);
            prev = p;
            v -= 0.02;
        }
    }

    fn synthetic_aircon(n: usize) -> (Vec<MeasurementSample>, f64, f64, f64) {
        let m = preset("aircon").unwrap();
        let v_nominal = 230.0;
        let (p_n, q_n) = (494.79, 39.31);
        let samples: Vec<MeasurementSample> = (0..n)
            .map(|k| {
                let v = 0.6 + (1.06 - 0.6) * k as f64 / (n - 1) as f64;
                let s = m.eval(v, 1.0).unwrap();
                MeasurementSample {
                    voltage: v * v_nominal,
                    active_power: p_n * s.p / m.p_scale,
                    reactive_power: q_n * s.q / m.q_scale,
                }
            })
            .collect();
        (samples, v_nominal, p_n, q_n)
    }

    #[test]
    fn fit_round_trips_noiseless_aircon() {
        let (samples, v_nominal, p_n, q_n) = synthetic_aircon(20);
        let (model, report) = fit_quadratic(&samples, v_nominal).unwrap();
        // Coefficients compared in the generating normalization: the anchor
        // sample is not exactly the nominal-power point, so the fitted triple
        // is rescaled by (anchor / generating scale) before comparison.
        let kp = report.p_n_watts / p_n;
        let kq = report.q_n_vars / q_n;
        assert_relative_eq!(model.p_z * kp, 2.175, epsilon = 1e-9);
        assert_relative_eq!(model.p_i * kp, -3.521, epsilon = 1e-9);
        assert_relative_eq!(model.p_p * kp, 2.347, epsilon = 1e-9);
        assert_relative_eq!(model.q_z * kq, 81.870, epsilon = 1e-9);
        assert_relative_eq!(model.q_i * kq, -143.147, epsilon = 1e-9);
        assert_relative_eq!(model.q_p * kq, 62.270, epsilon = 1e-9);
        assert!(report.rms_p < 1e-12);
        assert!(report.rms_q < 1e-12);
        assert_relative_eq!(model.validity.0, 0.6, epsilon = 1e-12);
        assert_relative_eq!(model.validity.1, 1.06, epsilon = 1e-12);
    }

    #[test]
    fn fit_constant_power_samples() {
        let samples: Vec<MeasurementSample> = [210.0, 225.0, 240.0]
            .iter()
            .map(|&v| MeasurementSample {
                voltage: v,
                active_power: 500.0,
                reactive_power: 40.0,
            })
            .collect();
        let (model, _) = fit_quadratic(&samples, 230.0).unwrap();
        for (z, i, p) in [(model.p_z, model.p_i, model.p_p), (model.q_z, model.q_i, model.q_p)] {
            assert_relative_eq!(z, 0.0, epsilon = 1e-9);
            assert_relative_eq!(i, 0.0, epsilon = 1e-9);
            assert_relative_eq!(p, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_rejects_fewer_than_three_distinct_voltages() {
        let s = MeasurementSample { voltage: 230.0, active_power: 1.0, reactive_power: 0.0 };
        let samples = vec![s, MeasurementSample { voltage: 220.0, ..s }, s, s];
        match fit_quadratic(&samples, 230.0) {
            Err(LoadModelError::RankDeficient { distinct }) => assert_eq!(distinct, 2),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn fit_zero_reactive_channel() {
        let samples: Vec<MeasurementSample> = (0..10)
            .map(|k| {
                let v = 0.7 + 0.04 * k as f64;
                MeasurementSample {
                    voltage: v * 230.0,
                    active_power: 500.0 * v * v,
                    reactive_power: 0.0,
                }
            })
            .collect();
        let (model, report) = fit_quadratic(&samples, 230.0).unwrap();
        assert_eq!((model.q_z, model.q_i, model.q_p), (0.0, 0.0, 0.0));
        assert_eq!(model.q_scale, 0.0);
        assert_eq!(report.q_n_vars, 0.0);
    }

    #[test]
    fn fit_with_measurement_noise() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let (mut samples, v_nominal, p_n, q_n) = synthetic_aircon(201);
        for s in &mut samples {
            // Box-Muller from two uniforms keeps the dev-dependency surface small.
            let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
            let g1 = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            let (u3, u4): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
            let g2 = (-2.0 * u3.ln()).sqrt() * (std::f64::consts::TAU * u4).cos();
            s.active_power += 0.01 * p_n * g1;
            s.reactive_power += 0.01 * q_n * g2;
        }
        let (model, report) = fit_quadratic(&samples, v_nominal).unwrap();
        let kp = report.p_n_watts / p_n;
        let kq = report.q_n_vars / q_n;
        for (got, want) in [
            (model.p_z * kp, 2.175),
            (model.p_i * kp, -3.521),
            (model.p_p * kp, 2.347),
            (model.q_z * kq, 81.870),
            (model.q_i * kq, -143.147),
            (model.q_p * kq, 62.270),
        ] {
            assert!(
                (got - want).abs() <= 0.05 * want.abs(),
                "coefficient {got} not within 5% of {want}"
            );
        }
    }

    #[test]
    fn measurement_csv_round_trip() {
        let csv = "voltage_V,active_power_W,reactive_power_var\n230.0,494.79,39.31\n225.0,490.1,38.0\n";
        let samples = read_measurement_csv(csv.as_bytes()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].voltage, 230.0);
        assert_eq!(samples[1].reactive_power, 38.0);
    }

    #[test]
    fn model_file_round_trip() {
        let (samples, v_nominal, _, _) = synthetic_aircon(20);
        let (model, report) = fit_quadratic(&samples, v_nominal).unwrap();
        let file = ModelFile::from_fit(&model, &report);
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("p_scale_W"));
        assert!(json.contains("v_nominal_V"));
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, file);
        let as_model = back.to_load_model("fitted").unwrap();
        assert_eq!(as_model.p_scale, 1.0);
        assert_relative_eq!(
            as_model.q_scale,
            report.q_n_vars / report.p_n_watts,
            max_relative = 1e-12
        );
    }

    proptest! {
        #[test]
        fn eval_linear_in_alpha(v in 0.05f64..2.0, alpha in 0.0f64..10.0) {
            let m = preset("aircon").unwrap();
            let one = m.eval(v, alpha).unwrap();
            let two = m.eval(v, 2.0 * alpha).unwrap();
            prop_assert!((two.p - 2.0 * one.p).abs() <= 1e-12 * one.p.abs().max(1.0));
            prop_assert!((two.q - 2.0 * one.q).abs() <= 1e-12 * one.q.abs().max(1.0));
        }

        #[test]
        fn fit_regenerates_arbitrary_quadratics(
            pz in -3.0f64..3.0, pi in -3.0f64..3.0, pp in 0.5f64..3.0,
            qz in -3.0f64..3.0, qi in -3.0f64..3.0, qp in 0.5f64..3.0,
        ) {
            let v_nominal = 230.0;
            let samples: Vec<MeasurementSample> = (0..15).map(|k| {
                let x = 0.6 + 0.03 * k as f64;
                MeasurementSample {
                    voltage: x * v_nominal,
                    active_power: 400.0 * (pz * x * x + pi * x + pp),
                    reactive_power: 35.0 * (qz * x * x + qi * x + qp),
                }
            }).collect();
            let (model, _report) = fit_quadratic(&samples, v_nominal).unwrap();
            // The fitted model regenerates the sample powers exactly.
            for s in &samples {
                let lv = s.voltage / v_nominal;
                let got = model.eval(lv, 1.0).unwrap();
                let p_w = got.p * /* anchor */ {
                    let a = samples.iter().min_by(|a, b| {
                        (a.voltage - v_nominal).abs().partial_cmp(&(b.voltage - v_nominal).abs()).unwrap()
                    }).unwrap();
                    a.active_power
                };
                prop_assert!((p_w - s.active_power).abs() <= 1e-6 * s.active_power.abs().max(1.0));
            }
        }
    }
}
