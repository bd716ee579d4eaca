//! Fixed-pattern-noise realizations and the datasets built from them.

use std::path::Path;

use fpnr_tensor::Scalar;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, FpnrError, Result};
use crate::image::Image;
use crate::io;

/// RNG for stream `stream` of `seed`. Distinct streams are independent, so
/// per-item generators can be derived from (seed, index) in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainGeometry {
    /// One gain per column, replicated down the column.
    #[default]
    StripeColumn,
    PerPixel,
}

/// Parameters of one fixed-pattern-noise realization. Gain has mean 1,
/// offset has mean 0 (display units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_g: f64,
    pub sigma_o: f64,
    #[serde(default)]
    pub gain_geometry: GainGeometry,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_g: f64, sigma_o: f64, gain_geometry: GainGeometry, seed: u64) -> Self {
        Self {
            sigma_g,
            sigma_o,
            gain_geometry,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_g >= 0.0 && self.sigma_g.is_finite())
            || !(self.sigma_o >= 0.0 && self.sigma_o.is_finite())
        {
            return config_err(format!(
                "noise std devs must be finite and nonnegative: {self:?}"
            ));
        }
        Ok(())
    }
}

/// Per-detector gain `g` and offset `o` so that `y = g * x + o`.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPatternNoise<T> {
    pub gain: Image<T>,
    pub offset: Image<T>,
}

impl<T: Scalar> FixedPatternNoise<T> {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            gain: Image::filled(height, width, T::one()),
            offset: Image::zeros(height, width),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gain.dims()
    }
}

/// Draws a realization of `spec` at the given extent.
pub fn make_noise<T: Scalar>(
    spec: &NoiseSpec,
    height: usize,
    width: usize,
) -> Result<FixedPatternNoise<T>> {
    if height == 0 || width == 0 {
        return config_err(format!(
            "noise extent must be positive, got {height}x{width}"
        ));
    }
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);
    let gain_dist = Normal::new(1.0, spec.sigma_g).expect("validated");
    let offset_dist = Normal::new(0.0, spec.sigma_o).expect("validated");
    let gain = match spec.gain_geometry {
        GainGeometry::StripeColumn => {
            let cols: Vec<f64> = (0..width).map(|_| gain_dist.sample(&mut rng)).collect();
            Image::from_fn(height, width, |_, x| T::from_f64_lossy(cols[x]))
        }
        GainGeometry::PerPixel => Image::from_fn(height, width, |_, _| {
            T::from_f64_lossy(gain_dist.sample(&mut rng))
        }),
    };
    let offset = Image::from_fn(height, width, |_, _| {
        T::from_f64_lossy(offset_dist.sample(&mut rng))
    });
    Ok(FixedPatternNoise { gain, offset })
}

/// `y = g * x + o`, unclipped.
pub fn apply_fpn<T: Scalar>(clean: &Image<T>, noise: &FixedPatternNoise<T>) -> Result<Image<T>> {
    clean.same_dims(&noise.gain, "apply_fpn")?;
    let data = clean
        .data()
        .iter()
        .zip(noise.gain.data())
        .zip(noise.offset.data())
        .map(|((&x, &g), &o)| g * x + o)
        .collect();
    Image::new(clean.height(), clean.width(), data)
}

// ---------------------------------------------------------------------------
// Patch datasets.

pub const PATCH_SIZE: usize = 40;

/// One of the eight flip/rotation variants applied to a crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augmentation {
    pub flip: bool,
    pub rotation_deg: u32,
}

impl Augmentation {
    pub const IDENTITY: Self = Self {
        flip: false,
        rotation_deg: 0,
    };

    pub fn from_index(i: u32) -> Self {
        Self {
            flip: i >= 4,
            rotation_deg: 90 * (i % 4),
        }
    }

    pub fn apply<T: Scalar>(&self, im: &Image<T>) -> Image<T> {
        let im = if self.flip {
            im.flip_horizontal()
        } else {
            im.clone()
        };
        im.rotate90(self.rotation_deg / 90)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair<T> {
    pub clean: Image<T>,
    pub corrupted: Image<T>,
    pub noise: NoiseSpec,
    pub source_index: usize,
    pub origin: (usize, usize),
    pub augmentation: Augmentation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset<T> {
    pub patch_size: usize,
    pub pairs: Vec<PatchPair<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchDatasetConfig {
    pub count: usize,
    #[serde(default = "default_true")]
    pub augment: bool,
    pub sigma_g_range: (f64, f64),
    pub sigma_o_range: (f64, f64),
    #[serde(default)]
    pub gain_geometry: GainGeometry,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_patch() -> usize {
    PATCH_SIZE
}

impl PatchDatasetConfig {
    /// Training ranges: gain std 0.05..0.15, offset std 5..25.
    pub fn training(count: usize, seed: u64) -> Self {
        Self {
            count,
            augment: true,
            sigma_g_range: (0.05, 0.15),
            sigma_o_range: (5.0, 25.0),
            gain_geometry: GainGeometry::default(),
            patch_size: PATCH_SIZE,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
        if !ok(self.sigma_g_range) || !ok(self.sigma_o_range) {
            return config_err(format!(
                "noise ranges must satisfy 0 <= lo <= hi: {:?} {:?}",
                self.sigma_g_range, self.sigma_o_range
            ));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(2) {
            return config_err(format!(
                "patch size must be even and positive, got {}",
                self.patch_size
            ));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random crops of `sources`, each corrupted by its own noise draw.
///
/// Patch `i` uses RNG stream `i + 1` of the seed, so any patch can be
/// regenerated on its own.
pub fn gen_patch_dataset<T: Scalar>(
    sources: &[Image<T>],
    cfg: &PatchDatasetConfig,
) -> Result<PatchDataset<T>> {
    cfg.validate()?;
    let ps = cfg.patch_size;
    let usable: Vec<usize> = sources
        .iter()
        .enumerate()
        .filter_map(|(i, im)| {
            if im.height() >= ps && im.width() >= ps {
                Some(i)
            } else {
                log::warn!(
                    "skipping source image {i}: {}x{} is smaller than the {ps}x{ps} patch",
                    im.height(),
                    im.width()
                );
                None
            }
        })
        .collect();
    if cfg.count == 0 {
        return Ok(PatchDataset {
            patch_size: ps,
            pairs: Vec::new(),
        });
    }
    if usable.is_empty() {
        return Err(FpnrError::EmptyDataset(format!(
            "none of {} sources is at least {ps}x{ps}",
            sources.len()
        )));
    }
    let mut pairs = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut rng = stream_rng(cfg.seed, i as u64 + 1);
        let source_index = usable[rng.random_range(0..usable.len())];
        let src = &sources[source_index];
        let oy = rng.random_range(0..=src.height() - ps);
        let ox = rng.random_range(0..=src.width() - ps);
        let augmentation = if cfg.augment {
            Augmentation::from_index(rng.random_range(0..8))
        } else {
            Augmentation::IDENTITY
        };
        let noise = NoiseSpec {
            sigma_g: uniform(&mut rng, cfg.sigma_g_range),
            sigma_o: uniform(&mut rng, cfg.sigma_o_range),
            gain_geometry: cfg.gain_geometry,
            seed: rng.next_u64(),
        };
        let clean = augmentation.apply(&src.crop(oy, ox, ps, ps)?);
        let corrupted = apply_fpn(&clean, &make_noise(&noise, ps, ps)?)?;
        pairs.push(PatchPair {
            clean,
            corrupted,
            noise,
            source_index,
            origin: (oy, ox),
            augmentation,
        });
    }
    Ok(PatchDataset {
        patch_size: ps,
        pairs,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    tool_version: String,
    config: PatchDatasetConfig,
    pairs: Vec<PairRecord>,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    clean: String,
    corrupted: String,
    noise: NoiseSpec,
    source_index: usize,
    origin: (usize, usize),
    augmentation: Augmentation,
}

impl<T: Scalar> PatchDataset<T> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Writes every pair as raw-f32 files plus `dataset.json` describing specs and seeds.
    pub fn export(&self, dir: &Path, config: &PatchDatasetConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| FpnrError::io(dir, e))?;
        let mut records = Vec::with_capacity(self.pairs.len());
        for (i, p) in self.pairs.iter().enumerate() {
            let clean = format!("pair_{i:05}_clean.f32");
            let corrupted = format!("pair_{i:05}_corrupted.f32");
            io::write_raw_f32(&dir.join(&clean), &p.clean)?;
            io::write_raw_f32(&dir.join(&corrupted), &p.corrupted)?;
            records.push(PairRecord {
                clean,
                corrupted,
                noise: p.noise,
                source_index: p.source_index,
                origin: p.origin,
                augmentation: p.augmentation,
            });
        }
        let manifest = DatasetManifest {
            tool_version: crate::VERSION.to_string(),
            config: config.clone(),
            pairs: records,
        };
        let path = dir.join("dataset.json");
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| FpnrError::json("dataset manifest", e))?;
        std::fs::write(&path, text).map_err(|e| FpnrError::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Sequences: a moving scene under one fixed noise realization.

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFrame<T> {
    pub clean: Image<T>,
    pub corrupted: Image<T>,
}

/// Crops `base_scene` at each `(dx, dy)` of `path` (top-left corner, frame
/// extent taken from `noise`) and applies the same noise to every frame.
pub fn gen_sequence<T: Scalar>(
    base_scene: &Image<T>,
    path: &[(usize, usize)],
    noise: &FixedPatternNoise<T>,
) -> Result<Vec<SequenceFrame<T>>> {
    let (h, w) = noise.dims();
    path.iter()
        .enumerate()
        .map(|(t, &(dx, dy))| {
            if dy + h > base_scene.height() || dx + w > base_scene.width() {
                return config_err(format!(
                    "frame {t}: {h}x{w} window at (x={dx}, y={dy}) exits the {}x{} scene",
                    base_scene.height(),
                    base_scene.width()
                ));
            }
            let clean = base_scene.crop(dy, dx, h, w)?;
            let corrupted = apply_fpn(&clean, noise)?;
            Ok(SequenceFrame { clean, corrupted })
        })
        .collect()
}

/// Integer pan path of `frames` positions: a slow Lissajous sweep over
/// `0..=max_dx` by `0..=max_dy`.
pub fn pan_path(frames: usize, max_dx: usize, max_dy: usize) -> Vec<(usize, usize)> {
    (0..frames)
        .map(|t| {
            let t = t as f64;
            let fx = 0.5 - 0.5 * (t * 0.045).cos();
            let fy = 0.5 - 0.5 * (t * 0.031).cos();
            (
                (fx * max_dx as f64).round() as usize,
                (fy * max_dy as f64).round() as usize,
            )
        })
        .collect()
}
