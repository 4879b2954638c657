//! Text encodings shared by the file writers.

/// Formats a float with 17 significant digits, enough to round-trip any
/// `f64` exactly.
pub fn fmt17(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.16e}")
    } else {
        format!("{value}")
    }
}
