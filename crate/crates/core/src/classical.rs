//! Two-point calibration and scene-based steepest-descent correctors.
//!
//! Every corrector estimates a per-pixel calibration `(G, O)` so that
//! `X = G * y + O` approximates the clean radiance. The scene-based family
//! minimizes
//!
//! ```text
//! J = alpha * |X - T|^2 + lambda * |Phi(X)|_p^p
//! ```
//!
//! by descent on `(G, O)`. `nn` keeps only the fidelity term against a local
//! mean target `T`, `fa` does the same with a per-pixel rate damped by local
//! detail, and `tv` keeps only a smoothed total-variation penalty.

use fpnr_tensor::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, FpnrError, Result};
use crate::image::Image;

/// Per-pixel gain and offset estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationField<T> {
    pub gain_hat: Image<T>,
    pub offset_hat: Image<T>,
}

impl<T: Scalar> CalibrationField<T> {
    /// `G = 1`, `O = 0`: the starting point of every scene-based run.
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            gain_hat: Image::filled(height, width, T::one()),
            offset_hat: Image::zeros(height, width),
        }
    }

    pub fn new(gain_hat: Image<T>, offset_hat: Image<T>) -> Result<Self> {
        gain_hat.same_dims(&offset_hat, "calibration field")?;
        let field = Self {
            gain_hat,
            offset_hat,
        };
        if !field.is_finite() {
            return Err(FpnrError::Config(
                "calibration field has non-finite entries".into(),
            ));
        }
        Ok(field)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gain_hat.dims()
    }

    pub fn is_finite(&self) -> bool {
        self.gain_hat
            .data()
            .iter()
            .chain(self.offset_hat.data())
            .all(|v| v.is_finite())
    }

    /// Exact inverse of a known `y = g * x + o`: `G = 1/g`, `O = -o/g`.
    pub fn inverse_of(gain: &Image<T>, offset: &Image<T>) -> Result<Self> {
        let g_hat = gain.map(|g| T::one() / g);
        let o_hat = offset.zip_map(gain, |o, g| -o / g)?;
        Self::new(g_hat, o_hat)
    }
}

/// `X = G * y + O` elementwise.
pub fn correct<T: Scalar>(frame: &Image<T>, cal: &CalibrationField<T>) -> Result<Image<T>> {
    frame.same_dims(&cal.gain_hat, "correct")?;
    let data = frame
        .data()
        .iter()
        .zip(cal.gain_hat.data())
        .zip(cal.offset_hat.data())
        .map(|((&y, &g), &o)| g * y + o)
        .collect();
    Image::new(frame.height(), frame.width(), data)
}

// ---------------------------------------------------------------------------
// Two-point calibration.

#[derive(Clone, Debug, PartialEq)]
pub struct TwoPointCalibration<T> {
    pub field: CalibrationField<T>,
    /// `(row, col)` of detectors whose low and high responses coincide.
    pub dead_pixels: Vec<(usize, usize)>,
}

fn temporal_mean<T: Scalar>(frames: &[Image<T>], what: &str) -> Result<Image<T>> {
    let Some(first) = frames.first() else {
        return config_err(format!(
            "two-point calibration needs at least one {what} frame"
        ));
    };
    let mut acc = vec![0.0f64; first.len()];
    for f in frames {
        first.same_dims(f, what)?;
        for (a, &v) in acc.iter_mut().zip(f.data()) {
            *a += v.to_f64_lossy();
        }
    }
    let n = frames.len() as f64;
    Image::new(
        first.height(),
        first.width(),
        acc.into_iter().map(|a| T::from_f64_lossy(a / n)).collect(),
    )
}

/// Solves `G * yL + O = mean(yL)` and `G * yH + O = mean(yH)` per detector,
/// where `yL`, `yH` are the temporal means of the reference stacks and the
/// right-hand sides their spatial means.
///
/// Detectors with `yL == yH` get `G = 1`, `O = mean(yL) - yL` and are listed
/// in `dead_pixels`.
pub fn two_point_calibrate<T: Scalar>(
    low_frames: &[Image<T>],
    high_frames: &[Image<T>],
) -> Result<TwoPointCalibration<T>> {
    let yl = temporal_mean(low_frames, "low reference")?;
    let yh = temporal_mean(high_frames, "high reference")?;
    yl.same_dims(&yh, "two-point references")?;
    let mean_l = yl.data().iter().map(|v| v.to_f64_lossy()).sum::<f64>() / yl.len() as f64;
    let mean_h = yh.data().iter().map(|v| v.to_f64_lossy()).sum::<f64>() / yh.len() as f64;
    let (h, w) = yl.dims();
    let mut gain = Image::zeros(h, w);
    let mut offset = Image::zeros(h, w);
    let mut dead_pixels = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let l = yl.get(r, c).to_f64_lossy();
            let hi = yh.get(r, c).to_f64_lossy();
            let (g, o) = if hi == l {
                dead_pixels.push((r, c));
                (1.0, mean_l - l)
            } else {
                let g = (mean_h - mean_l) / (hi - l);
                (g, mean_l - g * l)
            };
            gain.set(r, c, T::from_f64_lossy(g));
            offset.set(r, c, T::from_f64_lossy(o));
        }
    }
    if !dead_pixels.is_empty() {
        log::warn!(
            "two-point calibration: {} dead pixel(s), first at {:?}",
            dead_pixels.len(),
            dead_pixels[0]
        );
    }
    Ok(TwoPointCalibration {
        field: CalibrationField::new(gain, offset)?,
        dead_pixels,
    })
}

// ---------------------------------------------------------------------------
// Scene-based solvers.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFilter {
    /// 3x3 arithmetic mean with edge replication.
    #[default]
    Mean3x3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbSolverConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub p: u8,
    pub mu0: f64,
    #[serde(default)]
    pub target_filter: TargetFilter,
    #[serde(default = "default_tv_epsilon")]
    pub tv_epsilon: f64,
    #[serde(default = "default_fa_gain")]
    pub fa_variance_gain: f64,
}

fn default_tv_epsilon() -> f64 {
    1e-6
}

fn default_fa_gain() -> f64 {
    0.05
}

impl SbSolverConfig {
    /// Fidelity-only solver.
    pub fn nn() -> Self {
        Self {
            alpha: 1.0,
            lambda: 0.0,
            p: 2,
            mu0: 3e-6,
            target_filter: TargetFilter::Mean3x3,
            tv_epsilon: default_tv_epsilon(),
            fa_variance_gain: default_fa_gain(),
        }
    }

    pub fn fa() -> Self {
        Self::nn()
    }

    /// Penalty-only solver with the L1 gradient norm.
    pub fn tv() -> Self {
        Self {
            alpha: 0.0,
            lambda: 1.0,
            p: 1,
            mu0: 1e-5,
            ..Self::nn()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.alpha,
            self.lambda,
            self.mu0,
            self.tv_epsilon,
            self.fa_variance_gain,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return config_err(format!("solver parameters must be finite: {self:?}"));
        }
        if self.alpha < 0.0 || self.lambda < 0.0 {
            return config_err(format!(
                "alpha and lambda must be nonnegative, got {} and {}",
                self.alpha, self.lambda
            ));
        }
        if !(self.mu0 > 0.0) {
            return config_err(format!("mu0 must be positive, got {}", self.mu0));
        }
        if self.p != 1 && self.p != 2 {
            return config_err(format!("penalty order p must be 1 or 2, got {}", self.p));
        }
        if !(self.tv_epsilon > 0.0) {
            return config_err(format!(
                "tv_epsilon must be positive, got {}",
                self.tv_epsilon
            ));
        }
        if self.fa_variance_gain < 0.0 {
            return config_err(format!(
                "fa_variance_gain must be nonnegative, got {}",
                self.fa_variance_gain
            ));
        }
        Ok(())
    }

    fn require_fidelity_only(&self, method: &str) -> Result<()> {
        self.validate()?;
        if self.lambda != 0.0 {
            return config_err(format!("{method} requires lambda = 0, got {}", self.lambda));
        }
        Ok(())
    }

    fn require_tv(&self) -> Result<()> {
        self.validate()?;
        if self.alpha != 0.0 {
            return config_err(format!("tv requires alpha = 0, got {}", self.alpha));
        }
        if self.p != 1 {
            return config_err(format!("tv requires p = 1, got {}", self.p));
        }
        if self.lambda == 0.0 {
            return config_err("tv with lambda = 0 never updates");
        }
        Ok(())
    }
}

/// 3x3 mean with edge replication.
pub fn mean3x3<T: Scalar>(im: &Image<T>) -> Image<T> {
    let ninth = T::from_f64_lossy(1.0 / 9.0);
    Image::from_fn(im.height(), im.width(), |y, x| {
        let mut s = T::zero();
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                s += im.get_clamped(y as isize + dy, x as isize + dx);
            }
        }
        s * ninth
    })
}

/// Population variance over the 3x3 neighbourhood, edge-replicated.
pub fn local_variance3x3<T: Scalar>(im: &Image<T>) -> Image<T> {
    let ninth = T::from_f64_lossy(1.0 / 9.0);
    Image::from_fn(im.height(), im.width(), |y, x| {
        let mut s = T::zero();
        let mut s2 = T::zero();
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let v = im.get_clamped(y as isize + dy, x as isize + dx);
                s += v;
                s2 += v * v;
            }
        }
        let m = s * ninth;
        (s2 * ninth - m * m).max(T::zero())
    })
}

fn target<T: Scalar>(filter: TargetFilter, corrected: &Image<T>) -> Image<T> {
    match filter {
        TargetFilter::Mean3x3 => mean3x3(corrected),
    }
}

/// Gradient of a scalar objective with respect to `(G, O)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGradient<T> {
    pub gain: Image<T>,
    pub offset: Image<T>,
}

/// Fidelity objective `alpha * sum (X - T)^2` with `T` given.
pub fn fidelity_objective<T: Scalar>(
    frame: &Image<T>,
    cal: &CalibrationField<T>,
    target: &Image<T>,
    alpha: f64,
) -> Result<f64> {
    let x = correct(frame, cal)?;
    x.same_dims(target, "fidelity target")?;
    Ok(alpha
        * x.data()
            .iter()
            .zip(target.data())
            .map(|(&a, &t)| (a - t).to_f64_lossy().powi(2))
            .sum::<f64>())
}

/// Gradient of [`fidelity_objective`] with `T` held fixed.
pub fn fidelity_gradient<T: Scalar>(
    frame: &Image<T>,
    cal: &CalibrationField<T>,
    target: &Image<T>,
    alpha: f64,
) -> Result<FieldGradient<T>> {
    let x = correct(frame, cal)?;
    x.same_dims(target, "fidelity target")?;
    let two_alpha = T::from_f64_lossy(2.0 * alpha);
    let s = x.zip_map(target, |a, t| two_alpha * (a - t))?;
    Ok(FieldGradient {
        gain: s.zip_map(frame, |e, y| e * y)?,
        offset: s,
    })
}

fn descend<T: Scalar>(
    cal: &CalibrationField<T>,
    grad: &FieldGradient<T>,
    rate: impl Fn(usize) -> T,
) -> CalibrationField<T> {
    let step = |field: &Image<T>, g: &Image<T>| {
        let data = field
            .data()
            .iter()
            .zip(g.data())
            .enumerate()
            .map(|(i, (&v, &d))| v - rate(i) * d)
            .collect();
        Image::new(field.height(), field.width(), data).expect("same extent")
    };
    CalibrationField {
        gain_hat: step(&cal.gain_hat, &grad.gain),
        offset_hat: step(&cal.offset_hat, &grad.offset),
    }
}

/// One descent step of the fidelity-only solver. The input field is not modified.
pub fn nn_fpnr_update<T: Scalar>(
    frame: &Image<T>,
    cal: &CalibrationField<T>,
    cfg: &SbSolverConfig,
) -> Result<CalibrationField<T>> {
    cfg.require_fidelity_only("nn")?;
    let t = target(cfg.target_filter, &correct(frame, cal)?);
    let grad = fidelity_gradient(frame, cal, &t, cfg.alpha)?;
    let mu = T::from_f64_lossy(cfg.mu0);
    Ok(descend(cal, &grad, |_| mu))
}

/// Per-pixel rate `mu0 / (1 + k * var3x3(T))`.
pub fn fa_rates<T: Scalar>(target: &Image<T>, cfg: &SbSolverConfig) -> Image<T> {
    let k = T::from_f64_lossy(cfg.fa_variance_gain);
    let mu0 = T::from_f64_lossy(cfg.mu0);
    local_variance3x3(target).map(|v| mu0 / (T::one() + k * v))
}

/// As [`nn_fpnr_update`] but with the detail-damped rates of [`fa_rates`].
pub fn fa_fpnr_update<T: Scalar>(
    frame: &Image<T>,
    cal: &CalibrationField<T>,
    cfg: &SbSolverConfig,
) -> Result<CalibrationField<T>> {
    cfg.require_fidelity_only("fa")?;
    let t = target(cfg.target_filter, &correct(frame, cal)?);
    let grad = fidelity_gradient(frame, cal, &t, cfg.alpha)?;
    let rates = fa_rates(&t, cfg);
    Ok(descend(cal, &grad, |i| rates.data()[i]))
}

fn phi(t: f64, eps: f64) -> f64 {
    (t * t + eps * eps).sqrt()
}

fn phi_prime(t: f64, eps: f64) -> f64 {
    t / (t * t + eps * eps).sqrt()
}

/// `lambda * sum phi(dx X) + phi(dy X)` with forward differences; the
/// difference past the last row/column is zero (replicate boundary).
pub fn tv_objective<T: Scalar>(
    frame: &Image<T>,
    cal: &CalibrationField<T>,
    cfg: &SbSolverConfig,
) -> Result<f64> {
    let x = correct(frame, cal)?;
    let (h, w) = x.dims();
    let eps = cfg.tv_epsilon;
    let v = |r: usize, c: usize| x.get(r, c).to_f64_lossy();
    let mut j = 0.0;
    for r in 0..h {
        for c in 0..w {
            let dx = if c + 1 < w {
                v(r, c + 1) - v(r, c)
            } else {
                0.0
            };
            let dy = if r + 1 < h {
                v(r + 1, c) - v(r, c)
            } else {
                0.0
            };
            j += phi(dx, eps) + phi(dy, eps);
        }
    }
    Ok(cfg.lambda * j)
}

/// `dJ/dX` for [`tv_objective`] via the adjoint of the forward difference.
pub fn tv_image_gradient<T: Scalar>(x: &Image<T>, lambda: f64, eps: f64) -> Image<T> {
    let (h, w) = x.dims();
    let v = |r: usize, c: usize| x.get(r, c).to_f64_lossy();
    let px = |r: usize, c: usize| {
        if c + 1 < w {
            phi_prime(v(r, c + 1) - v(r, c), eps)
        } else {
            0.0
        }
    };
    let py = |r: usize, c: usize| {
        if r + 1 < h {
            phi_prime(v(r + 1, c) - v(r, c), eps)
        } else {
            0.0
        }
    };
    Image::from_fn(h, w, |r, c| {
        let mut s = -px(r, c) - py(r, c);
        if c > 0 {
            s += px(r, c - 1);
        }
        if r > 0 {
            s += py(r - 1, c);
        }
        T::from_f64_lossy(lambda * s)
    })
}

pub fn tv_gradient<T: Scalar>(
    frame: &Image<T>,
    cal: &CalibrationField<T>,
    cfg: &SbSolverConfig,
) -> Result<FieldGradient<T>> {
    let x = correct(frame, cal)?;
    let s = tv_image_gradient(&x, cfg.lambda, cfg.tv_epsilon);
    Ok(FieldGradient {
        gain: s.zip_map(frame, |d, y| d * y)?,
        offset: s,
    })
}

/// One descent step on the smoothed total-variation objective.
pub fn tv_fpnr_update<T: Scalar>(
    frame: &Image<T>,
    cal: &CalibrationField<T>,
    cfg: &SbSolverConfig,
) -> Result<CalibrationField<T>> {
    cfg.require_tv()?;
    let grad = tv_gradient(frame, cal, cfg)?;
    let mu = T::from_f64_lossy(cfg.mu0);
    Ok(descend(cal, &grad, |_| mu))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneMethod {
    Nn,
    Fa,
    Tv,
}

impl SceneMethod {
    pub fn name(self) -> &'static str {
        match self {
            SceneMethod::Nn => "nn",
            SceneMethod::Fa => "fa",
            SceneMethod::Tv => "tv",
        }
    }

    pub fn default_config(self) -> SbSolverConfig {
        match self {
            SceneMethod::Nn => SbSolverConfig::nn(),
            SceneMethod::Fa => SbSolverConfig::fa(),
            SceneMethod::Tv => SbSolverConfig::tv(),
        }
    }

    pub fn check_config(self, cfg: &SbSolverConfig) -> Result<()> {
        match self {
            SceneMethod::Nn | SceneMethod::Fa => cfg.require_fidelity_only(self.name()),
            SceneMethod::Tv => cfg.require_tv(),
        }
    }

    pub fn update<T: Scalar>(
        self,
        frame: &Image<T>,
        cal: &CalibrationField<T>,
        cfg: &SbSolverConfig,
    ) -> Result<CalibrationField<T>> {
        match self {
            SceneMethod::Nn => nn_fpnr_update(frame, cal, cfg),
            SceneMethod::Fa => fa_fpnr_update(frame, cal, cfg),
            SceneMethod::Tv => tv_fpnr_update(frame, cal, cfg),
        }
    }
}

/// Runs a scene-based method over a frame sequence, carrying the field.
#[derive(Clone, Debug)]
pub struct SceneCorrector<T> {
    pub method: SceneMethod,
    pub config: SbSolverConfig,
    pub field: CalibrationField<T>,
    frames_seen: usize,
}

impl<T: Scalar> SceneCorrector<T> {
    pub fn new(
        method: SceneMethod,
        config: SbSolverConfig,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        method.check_config(&config)?;
        Ok(Self {
            method,
            config,
            field: CalibrationField::identity(height, width),
            frames_seen: 0,
        })
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Corrects `frame` with the current field, then updates the field from it.
    pub fn process(&mut self, frame: &Image<T>) -> Result<Image<T>> {
        let out = correct(frame, &self.field)?;
        let next = self.method.update(frame, &self.field, &self.config)?;
        if !next.is_finite() {
            return Err(FpnrError::Config(format!(
                "{} diverged at frame {} (mu0 = {}); lower the learning rate",
                self.method.name(),
                self.frames_seen,
                self.config.mu0
            )));
        }
        self.field = next;
        self.frames_seen += 1;
        Ok(out)
    }

    pub fn run(&mut self, frames: &[Image<T>]) -> Result<Vec<Image<T>>> {
        frames.iter().map(|f| self.process(f)).collect()
    }
}
