//! Deterministic numeric formatting for emitted files.

/// Formats with 9 significant digits in scientific notation.
///
/// Used for every numeric field in emitted CSVs so that repeated runs are
/// byte-identical. Negative zero is normalized first.
pub fn sig9(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{:.8e}", x)
}
