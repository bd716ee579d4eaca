//! Channel widths of the cascade network as a function of the width scale.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{config_err, FpnrError, Result};

/// Smallest channel or dense width after scaling.
pub const MIN_WIDTH: usize = 8;

/// Positive rational multiplier on every channel count, written `"n/d"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WidthScale {
    num: u32,
    den: u32,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl WidthScale {
    pub const FULL: Self = Self { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return config_err(format!(
                "width scale must be a positive ratio, got {num}/{den}"
            ));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    /// `round(c * scale)`, at least [`MIN_WIDTH`].
    pub fn apply(self, c: usize) -> usize {
        let (n, d) = (self.num as usize, self.den as usize);
        ((c * n + d / 2) / d).max(MIN_WIDTH)
    }
}

impl Default for WidthScale {
    fn default() -> Self {
        Self::FULL
    }
}

impl fmt::Display for WidthScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for WidthScale {
    type Err = FpnrError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FpnrError::Config(format!("width scale {s:?} is not of the form n or n/d"));
        let (n, d) = match s.trim().split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        Self::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?)
    }
}

impl Serialize for WidthScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for WidthScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Resolved channel counts for one width scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Widths {
    /// Trunk width between blocks (64 at full scale).
    pub trunk: usize,
    /// Dilated branch (32).
    pub dilated: usize,
    /// Sub-pixel branch conv before the shuffle (32); a multiple of 4.
    pub subpixel: usize,
    /// Middle layer of the spatial attention branch (32).
    pub attention_mid: usize,
    /// Channel attention hidden layers (256, 512).
    pub dense1: usize,
    pub dense2: usize,
}

pub const SHUFFLE_FACTOR: usize = 2;
pub const NUM_BLOCKS: usize = 5;

impl Widths {
    pub fn for_scale(ws: WidthScale) -> Self {
        let r2 = SHUFFLE_FACTOR * SHUFFLE_FACTOR;
        Self {
            trunk: ws.apply(64),
            dilated: ws.apply(32),
            subpixel: ws.apply(32).div_ceil(r2) * r2,
            attention_mid: ws.apply(32),
            dense1: ws.apply(256),
            dense2: ws.apply(512),
        }
    }

    /// Channels after the sub-pixel shuffle.
    pub fn shuffled(&self) -> usize {
        self.subpixel / (SHUFFLE_FACTOR * SHUFFLE_FACTOR)
    }

    /// Width of the coarse-fine concatenation.
    pub fn concat(&self) -> usize {
        self.dilated + self.trunk + self.shuffled()
    }
}
