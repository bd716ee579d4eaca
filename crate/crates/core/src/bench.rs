//! Noise-grid benchmark: every enabled method on one clean sequence per
//! `(sigma_g, sigma_o)` cell, summarized as mean PSNR / roughness.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::cascade::CascadeModel;
use crate::classical::{correct, two_point_calibrate, SbSolverConfig, SceneCorrector, SceneMethod};
use crate::error::{config_err, Result};
use crate::image::Image;
use crate::metrics::{psnr, roughness, DEFAULT_MAX_VAL};
use crate::sim::{apply_fpn, make_noise, FixedPatternNoise, GainGeometry, NoiseSpec};

/// Environment variable capping benchmark worker threads.
pub const THREADS_ENV: &str = "FPNR_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    TwoPoint,
    Nn,
    Fa,
    Tv,
    Cnn,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::TwoPoint => "two-point",
            BenchMethod::Nn => "nn",
            BenchMethod::Fa => "fa",
            BenchMethod::Tv => "tv",
            BenchMethod::Cnn => "cnn",
        }
    }
}

fn default_sigma_g() -> Vec<f64> {
    vec![0.08, 0.10, 0.12]
}

fn default_sigma_o() -> Vec<f64> {
    vec![5.0, 10.0, 15.0]
}

fn default_refs() -> (f64, f64) {
    (20.0, 220.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    #[serde(default = "default_sigma_g")]
    pub sigma_g: Vec<f64>,
    #[serde(default = "default_sigma_o")]
    pub sigma_o: Vec<f64>,
    #[serde(default)]
    pub geometry: GainGeometry,
    pub seed: u64,
    #[serde(default)]
    pub methods: Vec<BenchMethod>,
    #[serde(default = "SbSolverConfig::nn")]
    pub nn: SbSolverConfig,
    #[serde(default = "SbSolverConfig::fa")]
    pub fa: SbSolverConfig,
    #[serde(default = "SbSolverConfig::tv")]
    pub tv: SbSolverConfig,
    /// Flat radiances of the synthesized two-point reference frames.
    #[serde(default = "default_refs")]
    pub two_point_radiances: (f64, f64),
}

impl BenchSettings {
    pub fn new(seed: u64, methods: Vec<BenchMethod>) -> Self {
        Self {
            sigma_g: default_sigma_g(),
            sigma_o: default_sigma_o(),
            geometry: GainGeometry::default(),
            seed,
            methods,
            nn: SbSolverConfig::nn(),
            fa: SbSolverConfig::fa(),
            tv: SbSolverConfig::tv(),
            two_point_radiances: default_refs(),
        }
    }

    pub fn validate(&self, has_model: bool) -> Result<()> {
        if self.sigma_g.is_empty() || self.sigma_o.is_empty() {
            return config_err("bench grid needs at least one sigma_g and one sigma_o");
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return config_err(format!("method {} listed twice", m.name()));
            }
        }
        if self.methods.contains(&BenchMethod::Cnn) && !has_model {
            return config_err("the cnn method needs a model checkpoint");
        }
        SceneMethod::Nn.check_config(&self.nn)?;
        SceneMethod::Fa.check_config(&self.fa)?;
        SceneMethod::Tv.check_config(&self.tv)?;
        let (lo, hi) = self.two_point_radiances;
        if !(lo.is_finite() && hi.is_finite() && lo != hi) {
            return config_err(format!(
                "two-point radiances must be finite and distinct, got {lo} and {hi}"
            ));
        }
        Ok(())
    }
}

/// Mean of one method over the frames of one grid row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub psnr_db: f64,
    pub roughness: f64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub sigma_g: f64,
    pub sigma_o: f64,
    pub corrupted: BenchCell,
    /// One cell per entry of [`BenchTable::methods`].
    pub cells: Vec<BenchCell>,
}

impl BenchRow {
    /// Index of the method with the highest PSNR (first on ties).
    pub fn best_psnr(&self) -> Option<usize> {
        (0..self.cells.len()).reduce(|a, b| {
            if self.cells[b].psnr_db > self.cells[a].psnr_db {
                b
            } else {
                a
            }
        })
    }

    /// Index of the method with the lowest roughness (first on ties).
    pub fn best_roughness(&self) -> Option<usize> {
        (0..self.cells.len()).reduce(|a, b| {
            if self.cells[b].roughness < self.cells[a].roughness {
                b
            } else {
                a
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub methods: Vec<String>,
    pub rows: Vec<BenchRow>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.2}")
    }
}

impl BenchTable {
    /// Aligned text; `*` marks the best PSNR and best roughness per row.
    pub fn to_text(&self) -> String {
        let mut header = vec![
            "sigma_g".to_string(),
            "sigma_o".to_string(),
            "corrupted".to_string(),
        ];
        header.extend(self.methods.iter().cloned());
        let mut lines = vec![header];
        for row in &self.rows {
            let (bp, br) = (row.best_psnr(), row.best_roughness());
            let cell = |c: &BenchCell, p: bool, r: bool| {
                format!(
                    "{}{} / {:.4}{} (n={})",
                    fmt_db(c.psnr_db),
                    if p { "*" } else { "" },
                    c.roughness,
                    if r { "*" } else { "" },
                    c.frames
                )
            };
            let mut line = vec![
                format!("{:.2}", row.sigma_g),
                format!("{:.1}", row.sigma_o),
                cell(&row.corrupted, false, false),
            ];
            line.extend(
                row.cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| cell(c, bp == Some(i), br == Some(i))),
            );
            lines.push(line);
        }
        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|j| lines.iter().map(|l| l[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::from("Mean PSNR (dB) / roughness; * marks the best method per row\n");
        for l in &lines {
            let padded: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// One line per (row, column) in long form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "sigma_g,sigma_o,method,psnr_db,roughness,frames,best_psnr,best_roughness\n",
        );
        for row in &self.rows {
            let (bp, br) = (row.best_psnr(), row.best_roughness());
            let c = &row.corrupted;
            out.push_str(&format!(
                "{},{},corrupted,{},{},{},false,false\n",
                row.sigma_g,
                row.sigma_o,
                fmt_csv(c.psnr_db),
                c.roughness,
                c.frames
            ));
            for (i, (name, c)) in self.methods.iter().zip(&row.cells).enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    row.sigma_g,
                    row.sigma_o,
                    name,
                    fmt_csv(c.psnr_db),
                    c.roughness,
                    c.frames,
                    bp == Some(i),
                    br == Some(i)
                ));
            }
        }
        out
    }
}

fn fmt_csv(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        v.to_string()
    }
}

/// Worker count: `FPNR_THREADS` if set and positive, else the machine's parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn summarize(clean: &[Image<f64>], out: &[Image<f64>]) -> Result<BenchCell> {
    let mut p = 0.0;
    let mut r = 0.0;
    for (c, o) in clean.iter().zip(out) {
        p += psnr(c, o, DEFAULT_MAX_VAL)?;
        r += roughness(o)?;
    }
    let n = clean.len() as f64;
    Ok(BenchCell {
        psnr_db: p / n,
        roughness: r / n,
        frames: clean.len(),
    })
}

struct RowData {
    noise: FixedPatternNoise<f64>,
    corrupted: Vec<Image<f64>>,
}

fn run_method(
    method: BenchMethod,
    settings: &BenchSettings,
    row: &RowData,
    model: Option<&CascadeModel<f32>>,
) -> Result<Vec<Image<f64>>> {
    let (h, w) = row.noise.dims();
    match method {
        BenchMethod::TwoPoint => {
            let (lo, hi) = settings.two_point_radiances;
            let low = apply_fpn(&Image::filled(h, w, lo), &row.noise)?;
            let high = apply_fpn(&Image::filled(h, w, hi), &row.noise)?;
            let cal = two_point_calibrate(&[low], &[high])?.field;
            row.corrupted.iter().map(|f| correct(f, &cal)).collect()
        }
        BenchMethod::Nn | BenchMethod::Fa | BenchMethod::Tv => {
            let (sm, cfg) = match method {
                BenchMethod::Nn => (SceneMethod::Nn, settings.nn),
                BenchMethod::Fa => (SceneMethod::Fa, settings.fa),
                _ => (SceneMethod::Tv, settings.tv),
            };
            SceneCorrector::new(sm, cfg, h, w)?.run(&row.corrupted)
        }
        BenchMethod::Cnn => {
            let model = model.expect("validated");
            row.corrupted
                .iter()
                .map(|f| Ok(model.correct_image(&f.cast::<f32>())?.cast()))
                .collect()
        }
    }
}

/// Runs the grid on `clean` frames with at most `threads` workers.
///
/// Row `i` (row-major over `sigma_g` x `sigma_o`) draws its noise from seed
/// `settings.seed + i`; cells are independent, so the table does not depend
/// on `threads`.
pub fn run_bench(
    settings: &BenchSettings,
    clean: &[Image<f64>],
    model: Option<&CascadeModel<f32>>,
    threads: usize,
) -> Result<BenchTable> {
    settings.validate(model.is_some())?;
    let Some(first) = clean.first() else {
        return config_err("bench needs at least one clean frame");
    };
    for f in clean {
        first.same_dims(f, "bench sequence")?;
    }
    let (h, w) = first.dims();
    let grid: Vec<(f64, f64)> = settings
        .sigma_g
        .iter()
        .flat_map(|&g| settings.sigma_o.iter().map(move |&o| (g, o)))
        .collect();
    let rows: Vec<RowData> = grid
        .iter()
        .enumerate()
        .map(|(i, &(sg, so))| {
            let spec = NoiseSpec::new(
                sg,
                so,
                settings.geometry,
                settings.seed.wrapping_add(i as u64),
            );
            let noise = make_noise(&spec, h, w)?;
            let corrupted = clean
                .iter()
                .map(|c| apply_fpn(c, &noise))
                .collect::<Result<_>>()?;
            Ok(RowData { noise, corrupted })
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, Option<BenchMethod>)> = (0..rows.len())
        .flat_map(|r| {
            std::iter::once((r, None)).chain(settings.methods.iter().map(move |&m| (r, Some(m))))
        })
        .collect();
    let results: Mutex<Vec<Option<Result<BenchCell>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let j = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(r, method)) = jobs.get(j) else {
            break;
        };
        let row = &rows[r];
        let cell = match method {
            None => summarize(clean, &row.corrupted),
            Some(m) => {
                log::info!(
                    "bench: {} at sigma_g={} sigma_o={}",
                    m.name(),
                    grid[r].0,
                    grid[r].1
                );
                run_method(m, settings, row, model).and_then(|out| summarize(clean, &out))
            }
        };
        results.lock().expect("no poisoned workers")[j] = Some(cell);
    };
    let workers = threads.clamp(1, jobs.len().max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let mut cells = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|c| c.expect("every job ran"));
    let mut table_rows = Vec::with_capacity(rows.len());
    for &(sigma_g, sigma_o) in &grid {
        let corrupted = cells.next().expect("job")?;
        let mut row_cells = Vec::with_capacity(settings.methods.len());
        for _ in &settings.methods {
            row_cells.push(cells.next().expect("job")?);
        }
        table_rows.push(BenchRow {
            sigma_g,
            sigma_o,
            corrupted,
            cells: row_cells,
        });
    }
    Ok(BenchTable {
        methods: settings
            .methods
            .iter()
            .map(|m| m.name().to_string())
            .collect(),
        rows: table_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(p: f64, r: f64) -> BenchCell {
        BenchCell {
            psnr_db: p,
            roughness: r,
            frames: 3,
        }
    }

    #[test]
    fn best_marks_pick_max_psnr_and_min_roughness() {
        let row = BenchRow {
            sigma_g: 0.1,
            sigma_o: 5.0,
            corrupted: cell(20.0, 0.3),
            cells: vec![cell(30.0, 0.05), cell(31.0, 0.07)],
        };
        assert_eq!(row.best_psnr(), Some(1));
        assert_eq!(row.best_roughness(), Some(0));
        let t = BenchTable {
            methods: vec!["nn".into(), "tv".into()],
            rows: vec![row],
        };
        let text = t.to_text();
        assert!(text.contains("31.00* / 0.0700 (n=3)"));
        assert!(text.contains("30.00 / 0.0500* (n=3)"));
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("0.1,5,tv,31,0.07,3,true,false"));
    }

    #[test]
    fn duplicate_methods_rejected() {
        let s = BenchSettings::new(1, vec![BenchMethod::Nn, BenchMethod::Nn]);
        assert!(s.validate(false).is_err());
        assert!(BenchSettings::new(1, vec![BenchMethod::Cnn])
            .validate(false)
            .is_err());
    }
}
