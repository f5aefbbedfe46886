//! The one rounding rule used by every module in this crate.
//!
//! Halfway cases round away from zero: 0.5 -> 1, 62.45 -> 62, -1.5 -> -2.
//! Sample-size arithmetic, quota splits and report percentages all go
//! through this function so their integer results agree everywhere.

/// Round to the nearest integer, halves away from zero.
pub fn round_half_away_from_zero(x: f64) -> i64 {
    // f64::round is specified as round-half-away-from-zero.
    x.round() as i64
}
