//! Parsing and formatting for duration and event-count arguments.
//!
//! Arguments like half-lives and check cadences accept a number with a unit
//! suffix: `e` for events, and `s`, `min`, `h`, `d`, `w`, `mo` for seconds
//! through months. A month is exactly 30 days. A bare `m` is rejected as
//! ambiguous between minutes and months.

pub(crate) const SECS_PER_MIN: f64 = 60.0;
pub(crate) const SECS_PER_HOUR: f64 = 3_600.0;
pub(crate) const SECS_PER_DAY: f64 = 86_400.0;
pub(crate) const SECS_PER_WEEK: f64 = 604_800.0;
pub(crate) const SECS_PER_MONTH: f64 = 2_592_000.0;

/// A parsed quantity: either an event count or a time span in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Span {
    Events(f64),
    Secs(f64),
}

pub(crate) fn parse_span(s: &str) -> Result<Span, String> {
    let s = s.trim();
    let split = s
        .char_indices()
        .find(|(_, c)| c.is_ascii_alphabetic())
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num_part, unit) = s.split_at(split);
    let value: f64 = num_part
        .trim()
        .parse()
        .map_err(|_| format!("invalid number in '{s}'"))?;
    if !value.is_finite() || value <= 0.0 {
        return Err(format!("'{s}' must be positive and finite"));
    }
    let span = match unit {
        "e" => Span::Events(value),
        "s" => Span::Secs(value),
        "min" => Span::Secs(value * SECS_PER_MIN),
        "h" => Span::Secs(value * SECS_PER_HOUR),
        "d" => Span::Secs(value * SECS_PER_DAY),
        "w" => Span::Secs(value * SECS_PER_WEEK),
        "mo" => Span::Secs(value * SECS_PER_MONTH),
        "m" => return Err(format!("ambiguous unit 'm' in '{s}': use 'min' or 'mo'")),
        "" => {
            return Err(format!(
                "missing unit in '{s}': expected e, s, min, h, d, w, or mo"
            ));
        }
        other => return Err(format!("unknown unit '{other}' in '{s}'")),
    };
    Ok(span)
}

/// Renders seconds with the largest unit that divides them evenly.
pub(crate) fn format_secs(secs: f64) -> String {
    for (scale, unit) in [
        (SECS_PER_MONTH, "mo"),
        (SECS_PER_WEEK, "w"),
        (SECS_PER_DAY, "d"),
        (SECS_PER_HOUR, "h"),
        (SECS_PER_MIN, "min"),
    ] {
        let n = secs / scale;
        if n >= 1.0 && n.fract() == 0.0 {
            return format!("{n}{unit}");
        }
    }
    format!("{secs}s")
}
