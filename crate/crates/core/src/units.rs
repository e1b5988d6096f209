//! Time and size units.
//!
//! Simulation time is a real number of hours. Calendar-like quantities use
//! the metric year of 10,000 hours, so a month is 1/12 and a week 1/52 of
//! that.

use crate::error::{Error, Result};

/// Simulation time in hours.
pub type Hours = f64;

pub const HOURS_PER_KILOHOUR: f64 = 1_000.0;
pub const HOURS_PER_MEGAHOUR: f64 = 1_000_000.0;
pub const HOURS_PER_METRIC_YEAR: f64 = 10_000.0;
pub const HOURS_PER_MONTH: f64 = HOURS_PER_METRIC_YEAR / 12.0;
pub const HOURS_PER_QUARTER: f64 = HOURS_PER_METRIC_YEAR / 4.0;
pub const HOURS_PER_WEEK: f64 = HOURS_PER_METRIC_YEAR / 52.0;

pub const BYTES_PER_KIB: u64 = 1 << 10;
pub const BYTES_PER_MIB: u64 = 1 << 20;
pub const BYTES_PER_GIB: u64 = 1 << 30;
pub const BYTES_PER_TIB: u64 = 1 << 40;

/// Converts a byte count to the billing unit (GiB).
pub fn bytes_to_gb(bytes: u64) -> f64 {
    bytes as f64 / BYTES_PER_GIB as f64
}

pub fn metric_years(n: f64) -> Hours {
    n * HOURS_PER_METRIC_YEAR
}

pub fn megahours(n: f64) -> Hours {
    n * HOURS_PER_MEGAHOUR
}

/// Parses a duration such as `"10 my"`, `"100Mh"`, `"2.5 kh"` or `"720 h"`.
///
/// `"forever"`, `"never"` and `"inf"` parse to positive infinity. A bare
/// number is taken as hours.
pub fn parse_duration(text: &str) -> Result<Hours> {
    let t = text.trim();
    if matches!(t, "forever" | "never" | "inf" | "infinity") {
        return Ok(f64::INFINITY);
    }
    let split = t
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .or_else(|| {
            // "1e6" has no unit, "1 my" does
            t.rfind(char::is_whitespace)
        })
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid duration `{text}`")))?;
    let scale = match unit.trim() {
        "" | "h" => 1.0,
        "kh" => HOURS_PER_KILOHOUR,
        "Mh" => HOURS_PER_MEGAHOUR,
        "my" => HOURS_PER_METRIC_YEAR,
        other => {
            return Err(Error::config(format!(
                "unknown time unit `{other}` in `{text}` (expected h, kh, Mh or my)"
            )))
        }
    };
    if !value.is_finite() {
        return Err(Error::config(format!("invalid duration `{text}`")));
    }
    Ok(value * scale)
}

/// Parses a byte size such as `"5 MiB"`, `"1GiB"`, `"4096"` or `"4096 B"`.
pub fn parse_bytes(text: &str) -> Result<u64> {
    let t = text.trim();
    let split = t.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid size `{text}`")))?;
    let scale = match unit.trim() {
        "" | "B" => 1,
        "KiB" => BYTES_PER_KIB,
        "MiB" => BYTES_PER_MIB,
        "GiB" => BYTES_PER_GIB,
        "TiB" => BYTES_PER_TIB,
        other => {
            return Err(Error::config(format!(
                "unknown size unit `{other}` in `{text}` (expected B, KiB, MiB, GiB or TiB)"
            )))
        }
    };
    let bytes = value * scale as f64;
    if !bytes.is_finite() || bytes < 0.0 || bytes.fract() != 0.0 || bytes > u64::MAX as f64 {
        return Err(Error::config(format!("size `{text}` is not a whole number of bytes")));
    }
    Ok(bytes as u64)
}
