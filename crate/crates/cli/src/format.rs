//! Shared number formatting for every CSV this crate writes.

use anyhow::{anyhow, Result};
use std::str::FromStr;

pub const SIG_DIGITS: usize = 9;

/// `%.9g`: nine significant digits, fixed notation for moderate exponents,
/// trailing zeros dropped.
pub fn sig(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= SIG_DIGITS as i32 {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn parse_flag(s: &str) -> Result<bool> {
    match s {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(anyhow!("expected 0 or 1, got `{s}`")),
    }
}

pub fn parse_num<T: FromStr>(s: &str, column: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| anyhow!("column `{column}`: cannot parse `{s}`"))
}
