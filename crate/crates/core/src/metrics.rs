//! PSNR and the roughness index.

use fpnr_tensor::Scalar;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FpnrError, Result};
use crate::image::Image;

pub const DEFAULT_MAX_VAL: f64 = 255.0;

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr<T: Scalar>(reference: &Image<T>, test: &Image<T>, max_val: f64) -> Result<f64> {
    reference.same_dims(test, "psnr")?;
    if !(max_val > 0.0) {
        return Err(FpnrError::Config(format!(
            "psnr max_val must be positive, got {max_val}"
        )));
    }
    let mse = mse(reference, test);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    sum / a.len().max(1) as f64
}

/// Roughness index: L1 norm of the horizontal and vertical first differences
/// over the L1 norm of the image.
///
/// Differences are taken over the valid region only (no padding): the
/// horizontal term has `H x (W-1)` entries and the vertical `(H-1) x W`.
pub fn roughness<T: Scalar>(image: &Image<T>) -> Result<f64> {
    let (h, w) = image.dims();
    if h < 2 || w < 2 {
        return Err(FpnrError::Shape(format!(
            "roughness needs at least 2x2, got {h}x{w}"
        )));
    }
    let v = |y: usize, x: usize| image.get(y, x).to_f64_lossy();
    let mut horizontal = 0.0;
    let mut vertical = 0.0;
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            total += v(y, x).abs();
            if x + 1 < w {
                horizontal += (v(y, x) - v(y, x + 1)).abs();
            }
            if y + 1 < h {
                vertical += (v(y, x) - v(y + 1, x)).abs();
            }
        }
    }
    if total == 0.0 {
        return Err(FpnrError::UndefinedRoughness);
    }
    Ok((horizontal + vertical) / total)
}

/// Quality of one corrected frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `inf` when the frame equals its reference.
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_db: f64,
    pub roughness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
}

impl MetricReport {
    pub fn measure<T: Scalar>(
        reference: &Image<T>,
        test: &Image<T>,
        frame_index: Option<usize>,
    ) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(reference, test, DEFAULT_MAX_VAL)?,
            roughness: roughness(test)?,
            frame_index,
        })
    }
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value {t:?}"))),
    }
}
