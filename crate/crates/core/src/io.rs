//! Binary PGM (P5, 8/16-bit) and raw little-endian f32 rasters.
//!
//! Raw rasters carry a JSON sidecar at `<path>.json` holding the extent.

use std::path::{Path, PathBuf};

use fpnr_tensor::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{ImageIoError, Result};
use crate::image::Image;

/// Upper bound on pixel count accepted from a header (2^31).
const MAX_PIXELS: u64 = 1 << 31;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageIoError + '_ {
    move |source| ImageIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, detail: impl Into<String>) -> ImageIoError {
    ImageIoError::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Parses a P5 header; returns (width, height, maxval, payload offset).
fn parse_pgm_header(
    path: &Path,
    bytes: &[u8],
) -> std::result::Result<(u64, u64, u32, usize), ImageIoError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(malformed(path, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed(path, "header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(
                path,
                format!("expected a decimal number for header field {i}"),
            ));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| malformed(path, format!("header field {text} out of range")))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed(path, "no whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed(path, format!("zero extent {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(
            path,
            format!("maxval {maxval} outside 1..=65535"),
        ));
    }
    match width.checked_mul(height) {
        Some(n) if n <= MAX_PIXELS => {}
        _ => {
            return Err(ImageIoError::DimensionOverflow {
                path: path.to_path_buf(),
                width,
                height,
            })
        }
    }
    Ok((width, height, maxval as u32, pos))
}

pub fn decode_pgm(path: &Path, bytes: &[u8]) -> std::result::Result<Image<f64>, ImageIoError> {
    let (width, height, maxval, off) = parse_pgm_header(path, bytes)?;
    let (w, h) = (width as usize, height as usize);
    let bps = if maxval < 256 { 1 } else { 2 };
    let expected = w * h * bps;
    let payload = &bytes[off..];
    if payload.len() < expected {
        return Err(ImageIoError::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let data = if bps == 1 {
        payload[..expected].iter().map(|&b| b as f64).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    Ok(Image::new(h, w, data).expect("extent checked"))
}

pub fn read_pgm(path: &Path) -> Result<Image<f64>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(decode_pgm(path, &bytes)?)
}

/// Clips to `[0, maxval]` and rounds half away from zero.
fn quantize<T: Scalar>(v: T, maxval: f64) -> u16 {
    let v = v.to_f64_lossy();
    let v = if v.is_nan() { 0.0 } else { v };
    v.round().clamp(0.0, maxval) as u16
}

pub fn encode_pgm<T: Scalar>(image: &Image<T>, sixteen_bit: bool) -> Vec<u8> {
    let maxval = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    for &v in image.data() {
        let q = quantize(v, maxval as f64);
        if sixteen_bit {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

pub fn write_pgm<T: Scalar>(path: &Path, image: &Image<T>, sixteen_bit: bool) -> Result<()> {
    std::fs::write(path, encode_pgm(image, sixteen_bit)).map_err(io_err(path))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub height: usize,
    pub width: usize,
    pub dtype: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_raw_f32<T: Scalar>(path: &Path, image: &Image<T>) -> Result<()> {
    let mut bytes = Vec::with_capacity(image.len() * 4);
    for &v in image.data() {
        bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(io_err(path))?;
    let side = RawSidecar {
        height: image.height(),
        width: image.width(),
        dtype: "f32le".into(),
    };
    let sp = sidecar_path(path);
    std::fs::write(
        &sp,
        serde_json::to_string_pretty(&side).expect("plain struct"),
    )
    .map_err(io_err(&sp))?;
    Ok(())
}

pub fn read_raw_f32<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(io_err(&sp))?;
    let side: RawSidecar =
        serde_json::from_str(&text).map_err(|e| malformed(&sp, e.to_string()))?;
    if side.dtype != "f32le" {
        return Err(malformed(&sp, format!("unsupported dtype {}", side.dtype)).into());
    }
    let n = (side.height as u64).checked_mul(side.width as u64);
    if n.is_none_or(|n| n > MAX_PIXELS) || side.height == 0 || side.width == 0 {
        return Err(ImageIoError::DimensionOverflow {
            path: sp,
            width: side.width as u64,
            height: side.height as u64,
        }
        .into());
    }
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let expected = side.height * side.width * 4;
    if bytes.len() < expected {
        return Err(ImageIoError::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let data = bytes[..expected]
        .chunks_exact(4)
        .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Image::new(side.height, side.width, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    RawF32,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(Self::Pgm),
            "f32" | "raw" => Some(Self::RawF32),
            _ => None,
        }
    }
}

/// Reads a `.pgm` or `.f32`/`.raw` raster chosen by extension.
pub fn read_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    match ImageFormat::from_path(path) {
        Some(ImageFormat::Pgm) => Ok(read_pgm(path)?.cast()),
        Some(ImageFormat::RawF32) => read_raw_f32(path),
        None => Err(ImageIoError::UnsupportedFormat {
            path: path.to_path_buf(),
        }
        .into()),
    }
}

/// Writes by extension; PGM output is 8-bit.
pub fn write_image<T: Scalar>(path: &Path, image: &Image<T>) -> Result<()> {
    match ImageFormat::from_path(path) {
        Some(ImageFormat::Pgm) => write_pgm(path, image, false),
        Some(ImageFormat::RawF32) => write_raw_f32(path, image),
        None => Err(ImageIoError::UnsupportedFormat {
            path: path.to_path_buf(),
        }
        .into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_export_clips_and_rounds() {
        let im = Image::new(1, 5, vec![255.7, -0.4, 2.5, -2.5, 127.49]).unwrap();
        let bytes = encode_pgm(&im, false);
        let back = decode_pgm(Path::new("x"), &bytes).unwrap();
        assert_eq!(back.data(), &[255.0, 0.0, 3.0, 0.0, 127.0]);
    }

    #[test]
    fn header_comments_and_sixteen_bit_order() {
        let mut bytes = b"P5 # comment\n2 1\n# another\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x02, 0xff, 0x00]);
        let im = decode_pgm(Path::new("x"), &bytes).unwrap();
        assert_eq!(im.data(), &[258.0, 65280.0]);
    }

    #[test]
    fn distinct_decode_errors() {
        let p = Path::new("x");
        assert!(matches!(
            decode_pgm(p, b"P2\n1 1\n255\n\0"),
            Err(ImageIoError::MalformedHeader { .. })
        ));
        assert!(matches!(
            decode_pgm(p, b"P5\n1 x\n255\n\0"),
            Err(ImageIoError::MalformedHeader { .. })
        ));
        assert!(matches!(
            decode_pgm(p, b"P5\n1 1\n70000\n\0"),
            Err(ImageIoError::MalformedHeader { .. })
        ));
        assert!(matches!(
            decode_pgm(p, b"P5\n4000000000 4000000000\n255\n"),
            Err(ImageIoError::DimensionOverflow { .. })
        ));
        assert!(matches!(
            decode_pgm(p, b"P5\n3 3\n255\n\0\0"),
            Err(ImageIoError::TruncatedPayload {
                expected: 9,
                found: 2,
                ..
            })
        ));
    }
}
