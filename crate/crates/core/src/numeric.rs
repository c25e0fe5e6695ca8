//! Exact decimal arithmetic and calendar helpers shared by ETL, the cube and
//! reports. Everything here is integer-only so results are identical on every
//! platform.

use std::cmp::Ordering;
use std::fmt;

/// A finite decimal `mantissa / 10^scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decimal {
    pub mantissa: i128,
    pub scale: u32,
}

const MAX_SCALE: u32 = 18;

impl Decimal {
    /// Parses `[-+]digits[.digits]`, optionally with an `e`/`E` exponent.
    pub fn parse(s: &str) -> Option<Decimal> {
        let s = s.trim();
        let (body, exp) = match s.find(['e', 'E']) {
            Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
            None => (s, 0),
        };
        let (neg, digits) = match body.as_bytes().first()? {
            b'-' => (true, &body[1..]),
            b'+' => (false, &body[1..]),
            _ => (false, body),
        };
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        let mut mantissa: i128 = 0;
        for b in int_part.bytes().chain(frac_part.bytes()) {
            mantissa = mantissa.checked_mul(10)?.checked_add((b - b'0') as i128)?;
        }
        let mut scale = frac_part.len() as i32 - exp;
        while scale < 0 {
            mantissa = mantissa.checked_mul(10)?;
            scale += 1;
        }
        let mut scale = scale as u32;
        while scale > 0 && mantissa % 10 == 0 {
            mantissa /= 10;
            scale -= 1;
        }
        if scale > MAX_SCALE {
            return None;
        }
        Some(Decimal { mantissa: if neg { -mantissa } else { mantissa }, scale })
    }

    pub fn from_int(v: i64) -> Decimal {
        Decimal { mantissa: v as i128, scale: 0 }
    }

    pub fn checked_mul(self, other: Decimal) -> Option<Decimal> {
        Some(Decimal { mantissa: self.mantissa.checked_mul(other.mantissa)?, scale: self.scale + other.scale })
    }

    /// Rounds to an integer, halves away from zero.
    pub fn round_half_up(self) -> Option<i64> {
        let den = 10i128.checked_pow(self.scale)?;
        i64::try_from(div_round_half_up(self.mantissa, den)).ok()
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let den = 10i128.pow(self.scale);
        let sign = if self.mantissa < 0 { "-" } else { "" };
        let a = self.mantissa.unsigned_abs();
        let den = den as u128;
        if self.scale == 0 {
            write!(f, "{sign}{a}")
        } else {
            write!(f, "{sign}{}.{:0width$}", a / den, a % den, width = self.scale as usize)
        }
    }
}

/// `num / den` rounded to the nearest integer, ties away from zero.
pub fn div_round_half_up(num: i128, den: i128) -> i128 {
    assert!(den != 0, "division by zero");
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    let q = num / den;
    let r = num % den;
    if 2 * r.abs() >= den {
        q + num.signum()
    } else {
        q
    }
}

/// Renders the rational `num / den` with exactly `places` decimals, rounding
/// ties away from zero.
pub fn format_ratio(num: i128, den: i128, places: u32) -> String {
    let scale = 10i128.pow(places);
    let scaled = div_round_half_up(num * scale, den);
    Decimal { mantissa: scaled, scale: places }.to_string()
}

/// Exact comparison of two non-negative-denominator rationals.
pub fn cmp_ratio(a_num: i128, a_den: i128, b_num: i128, b_den: i128) -> Ordering {
    (a_num * b_den).cmp(&(b_num * a_den))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CalendarDate {
    pub year: i32,
    pub month: u32,
    pub day: u32,
}

pub fn is_leap(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

pub fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap(year) => 29,
        2 => 28,
        _ => 0,
    }
}

impl CalendarDate {
    pub fn new(year: i32, month: u32, day: u32) -> Option<Self> {
        if !(1..=9999).contains(&year) || !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month)
        {
            return None;
        }
        Some(CalendarDate { year, month, day })
    }

    /// Parses `yyyymmdd`.
    pub fn parse_compact(s: &str) -> Option<Self> {
        if s.len() != 8 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Self::new(s[..4].parse().ok()?, s[4..6].parse().ok()?, s[6..].parse().ok()?)
    }

    /// Parses `s` against a pattern made of `YYYY`, `MM`, `DD` tokens and
    /// literal characters.
    pub fn parse_pattern(s: &str, pattern: &str) -> Option<Self> {
        let (mut y, mut m, mut d) = (None, None, None);
        let mut pi = 0;
        let mut si = 0;
        let p = pattern.as_bytes();
        let sb = s.as_bytes();
        while pi < p.len() {
            let rest = &pattern[pi..];
            let take = |si: usize, n: usize| -> Option<&str> {
                let part = s.get(si..si + n)?;
                part.bytes().all(|b| b.is_ascii_digit()).then_some(part)
            };
            if rest.starts_with("YYYY") {
                y = Some(take(si, 4)?.parse::<i32>().ok()?);
                pi += 4;
                si += 4;
            } else if rest.starts_with("MM") {
                m = Some(take(si, 2)?.parse::<u32>().ok()?);
                pi += 2;
                si += 2;
            } else if rest.starts_with("DD") {
                d = Some(take(si, 2)?.parse::<u32>().ok()?);
                pi += 2;
                si += 2;
            } else {
                if sb.get(si)? != &p[pi] {
                    return None;
                }
                pi += 1;
                si += 1;
            }
        }
        if si != sb.len() {
            return None;
        }
        Self::new(y?, m?, d?)
    }

    pub fn compact(&self) -> String {
        format!("{:04}{:02}{:02}", self.year, self.month, self.day)
    }

    pub fn month_key(&self) -> String {
        format!("{:04}{:02}", self.year, self.month)
    }

    pub fn quarter_key(&self) -> String {
        format!("{:04}Q{}", self.year, (self.month - 1) / 3 + 1)
    }

    pub fn year_key(&self) -> String {
        format!("{:04}", self.year)
    }

    pub fn days_in_year(year: i32) -> u32 {
        if is_leap(year) {
            366
        } else {
            365
        }
    }

    /// The `ordinal`-th day (0-based) of `year`.
    pub fn from_ordinal(year: i32, mut ordinal: u32) -> Option<Self> {
        for month in 1..=12 {
            let n = days_in_month(year, month);
            if ordinal < n {
                return Self::new(year, month, ordinal + 1);
            }
            ordinal -= n;
        }
        None
    }
}
