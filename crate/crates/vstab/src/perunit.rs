//! Per-unit base quantities and the rectangular phasor type.
//!
//! All analysis downstream of ingestion happens in per-unit; physical units
//! (volts, watts, ohms) appear only at the boundaries.

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PerUnitError {
    #[error("base quantities must be strictly positive (got v_base={v_base}, s_base={s_base})")]
    InvalidBase { v_base: f64, s_base: f64 },
}

/// Consistent per-unit base set. `i_base` and `z_base` are derived from
/// `v_base` and `s_base`, never stored independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseValues {
    pub v_base: f64,
    pub s_base: f64,
    pub i_base: f64,
    pub z_base: f64,
}

/// Physical dimension of a value being converted to or from per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Volts,
    Watts,
    Ohms,
}

/// Builds a base set from voltage and power bases.
pub fn make_base(v_base: f64, s_base: f64) -> Result<BaseValues, PerUnitError> {
    if !(v_base > 0.0) || !(s_base > 0.0) {
        return Err(PerUnitError::InvalidBase { v_base, s_base });
    }
    Ok(BaseValues {
        v_base,
        s_base,
        i_base: s_base / v_base,
        z_base: v_base * v_base / s_base,
    })
}

/// Converts a physical value to per-unit.
pub fn to_pu(value: f64, kind: Quantity, base: &BaseValues) -> f64 {
    value / base_of(kind, base)
}

/// Converts a per-unit value back to physical units.
pub fn from_pu(value: f64, kind: Quantity, base: &BaseValues) -> f64 {
    value * base_of(kind, base)
}

fn base_of(kind: Quantity, base: &BaseValues) -> f64 {
    match kind {
        Quantity::Volts => base.v_base,
        Quantity::Watts => base.s_base,
        Quantity::Ohms => base.z_base,
    }
}

/// Complex electrical quantity in rectangular per-unit coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Phasor {
    pub re: f64,
    pub im: f64,
}

impl Phasor {
    pub const ZERO: Phasor = Phasor { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Phasor { re, im }
    }

    /// Real phasor on the angle-reference axis.
    pub fn real(re: f64) -> Self {
        Phasor { re, im: 0.0 }
    }

    pub fn magnitude(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn conj(&self) -> Phasor {
        Phasor { re: self.re, im: -self.im }
    }

    pub fn scale(&self, k: f64) -> Phasor {
        Phasor { re: k * self.re, im: k * self.im }
    }

    /// Multiplication by jX (rotation by 90 degrees and scaling).
    pub fn mul_jx(&self, x: f64) -> Phasor {
        Phasor { re: -x * self.im, im: x * self.re }
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Add for Phasor {
    type Output = Phasor;
    fn add(self, rhs: Phasor) -> Phasor {
        Phasor { re: self.re + rhs.re, im: self.im + rhs.im }
    }
}

impl Sub for Phasor {
    type Output = Phasor;
    fn sub(self, rhs: Phasor) -> Phasor {
        Phasor { re: self.re - rhs.re, im: self.im - rhs.im }
    }
}

impl Mul for Phasor {
    type Output = Phasor;
    fn mul(self, rhs: Phasor) -> Phasor {
        Phasor {
            re: self.re * rhs.re - self.im * rhs.im,
            im: self.re * rhs.im + self.im * rhs.re,
        }
    }
}

impl Neg for Phasor {
    type Output = Phasor;
    fn neg(self) -> Phasor {
        Phasor { re: -self.re, im: -self.im }
    }
}
