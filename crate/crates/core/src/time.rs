//! UTC timestamp helpers.
//!
//! Every timestamp inside the pipeline is an `i64` count of seconds since the
//! Unix epoch, UTC. Local time only appears at the edges (reporting, hour
//! buckets) through a site's fixed UTC offset.

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc};

use crate::error::{Error, Result};

/// Seconds since 1970-01-01T00:00:00Z.
pub type Timestamp = i64;

pub const SECONDS_PER_DAY: i64 = 86_400;

pub fn to_datetime(t: Timestamp) -> DateTime<Utc> {
    Utc.timestamp_opt(t, 0)
        .single()
        .expect("timestamp within chrono range")
}

pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Timestamp {
    Utc.with_ymd_and_hms(y, mo, d, h, mi, s)
        .single()
        .expect("valid calendar date")
        .timestamp()
}

/// `2016-06-21T20:06:00Z`
pub fn format_iso(t: Timestamp) -> String {
    to_datetime(t).format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Accepts RFC 3339 (`2016-06-21T20:06:00Z`, offsets allowed), the same
/// without a zone (taken as UTC), `YYYY-MM-DD HH:MM:SS`, or integer epoch
/// seconds.
pub fn parse_timestamp(s: &str) -> Result<Timestamp> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(naive.and_utc().timestamp());
        }
    }
    s.parse::<i64>()
        .map_err(|_| Error::Data(format!("unparseable timestamp '{s}'")))
}

/// Parses the `YYYYMMDD_HHMMSS` stamp embedded in sky-image file names.
/// The first match anywhere in `name` wins.
pub fn parse_filename_stamp(name: &str) -> Option<Timestamp> {
    let bytes = name.as_bytes();
    if bytes.len() < 15 {
        return None;
    }
    for start in 0..=bytes.len() - 15 {
        let w = &bytes[start..start + 15];
        let digits_ok = w[..8].iter().all(u8::is_ascii_digit)
            && w[8] == b'_'
            && w[9..].iter().all(u8::is_ascii_digit);
        if !digits_ok {
            continue;
        }
        let s = std::str::from_utf8(w).ok()?;
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, "%Y%m%d_%H%M%S") {
            return Some(naive.and_utc().timestamp());
        }
    }
    None
}

pub fn format_filename_stamp(t: Timestamp) -> String {
    to_datetime(t).format("%Y%m%d_%H%M%S").to_string()
}

/// Calendar date of `t` shifted by `utc_offset_s`.
pub fn local_date(t: Timestamp, utc_offset_s: i64) -> NaiveDate {
    to_datetime(t + utc_offset_s).date_naive()
}

pub fn utc_date(t: Timestamp) -> NaiveDate {
    local_date(t, 0)
}

pub fn utc_year(t: Timestamp) -> i32 {
    to_datetime(t).year()
}

pub fn local_hour(t: Timestamp, utc_offset_s: i64) -> u32 {
    to_datetime(t + utc_offset_s).hour()
}

pub fn second_of_minute(t: Timestamp) -> u32 {
    t.rem_euclid(60) as u32
}

/// Start of the UTC day containing `t`.
pub fn day_start(t: Timestamp) -> Timestamp {
    t - t.rem_euclid(SECONDS_PER_DAY)
}

/// Julian day (fractional) for a UTC instant.
pub fn julian_day(t: Timestamp) -> f64 {
    t as f64 / SECONDS_PER_DAY as f64 + 2_440_587.5
}
