//! Exact rational scale factors.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A scale factor `num / den`, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scale {
    num: u32,
    den: u32,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Scale {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::config(format!("invalid scale {num}/{den}")));
        }
        let g = gcd(num as u64, den as u64) as u32;
        Ok(Scale {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(n: u32) -> Self {
        Scale::new(n, 1).expect("positive integer scale")
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn as_integer(&self) -> Option<u32> {
        (self.den == 1).then_some(self.num)
    }

    /// `⌊s · len + 0.5⌋`, the size of a dimension after upscaling.
    pub fn apply(&self, len: usize) -> usize {
        let (n, d, l) = (self.num as u64, self.den as u64, len as u64);
        ((2 * n * l + d) / (2 * d)) as usize
    }

    /// `⌊len / s + 0.5⌋`, the size of a dimension after downscaling.
    pub fn divide(&self, len: usize) -> usize {
        let (n, d, l) = (self.num as u64, self.den as u64, len as u64);
        ((2 * d * l + n) / (2 * n)) as usize
    }

    pub fn exceeds(&self, max: u32) -> bool {
        self.num as u64 > max as u64 * self.den as u64
    }
}

impl PartialOrd for Scale {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scale {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u64 * other.den as u64).cmp(&(other.num as u64 * self.den as u64))
    }
}

impl FromStr for Scale {
    type Err = Error;

    /// Accepts `3`, `2.5` or `5/2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::config(format!("invalid scale `{s}`"));
        if let Some((a, b)) = s.split_once('/') {
            let num = a.trim().parse().map_err(|_| bad())?;
            let den = b.trim().parse().map_err(|_| bad())?;
            return Scale::new(num, den).map_err(|_| bad());
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() || frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u32.pow(frac.len() as u32);
        let int: u32 = int.parse().map_err(|_| bad())?;
        let frac: u32 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
        Scale::new(num, den).map_err(|_| bad())
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            return write!(f, "{}", self.num);
        }
        // terminating decimals print as such, others as a fraction
        let mut d = self.den;
        while d % 2 == 0 {
            d /= 2;
        }
        while d % 5 == 0 {
            d /= 5;
        }
        if d == 1 {
            let s = format!("{:.6}", self.as_f64());
            write!(f, "{}", s.trim_end_matches('0').trim_end_matches('.'))
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Non-empty, strictly increasing list of scales, each above 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleSet(Vec<Scale>);

impl ScaleSet {
    pub fn new(mut scales: Vec<Scale>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::config("scale set is empty"));
        }
        scales.sort();
        for w in scales.windows(2) {
            if w[0] == w[1] {
                return Err(Error::config(format!("scale {} listed twice", w[0])));
            }
        }
        if let Some(s) = scales.iter().find(|s| s.num <= s.den) {
            return Err(Error::config(format!("scale {s} must exceed 1")));
        }
        Ok(ScaleSet(scales))
    }

    pub fn integers(values: &[u32]) -> Result<Self> {
        ScaleSet::new(values.iter().map(|&v| Scale::integer(v)).collect())
    }

    /// Check every scale is at most `max`.
    pub fn check_max(&self, max: u32) -> Result<()> {
        match self.0.iter().find(|s| s.exceeds(max)) {
            Some(s) => Err(Error::ScaleOverflow {
                requested: s.to_string(),
                max,
            }),
            None => Ok(()),
        }
    }

    pub fn scales(&self) -> &[Scale] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Scale> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> Scale {
        *self.0.last().expect("non-empty")
    }
}

impl FromStr for ScaleSet {
    type Err = Error;

    /// Comma-separated scales, e.g. `2,3,4` or `1.5, 2.5`.
    fn from_str(s: &str) -> Result<Self> {
        let scales = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Scale>>>()?;
        ScaleSet::new(scales)
    }
}

impl fmt::Display for ScaleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(Scale::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}
