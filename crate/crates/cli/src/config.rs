//! JSON run configurations for `train` and `bench`. Relative paths inside a
//! config file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use fpnr_core::bench::BenchSettings;
use fpnr_core::cascade::{TrainConfig, WidthScale};
use fpnr_core::sim::PatchDatasetConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    /// Clean source images; the bundled scenes are used when empty.
    #[serde(default)]
    pub sources: Vec<PathBuf>,
    pub dataset: PatchDatasetConfig,
    #[serde(default = "quarter")]
    pub width_scale: WidthScale,
    #[serde(default)]
    pub model_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    pub checkpoint: PathBuf,
    /// Loss history CSV; defaults to `<checkpoint>.loss.csv`.
    #[serde(default)]
    pub loss_history: Option<PathBuf>,
}

fn quarter() -> WidthScale {
    WidthScale::new(1, 4).expect("nonzero")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SequenceSource {
    /// Clean frames in temporal order.
    Frames(Vec<PathBuf>),
    /// A procedural scene panned under a fixed window.
    Synthetic(SyntheticSequence),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSequence {
    pub scene_seed: u64,
    pub scene_height: usize,
    pub scene_width: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRun {
    pub sequence: SequenceSource,
    pub settings: BenchSettings,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub output_text: PathBuf,
    #[serde(default)]
    pub output_csv: Option<PathBuf>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl TrainRun {
    pub fn resolve_paths(&mut self, base: &Path) {
        self.sources = self.sources.iter().map(|p| resolve(base, p)).collect();
        self.checkpoint = resolve(base, &self.checkpoint);
        let loss = self
            .loss_history
            .clone()
            .unwrap_or_else(|| with_suffix(&self.checkpoint, ".loss.csv"));
        self.loss_history = Some(resolve(base, &loss));
    }
}

impl BenchRun {
    pub fn resolve_paths(&mut self, base: &Path) {
        if let SequenceSource::Frames(f) = &mut self.sequence {
            *f = f.iter().map(|p| resolve(base, p)).collect();
        }
        self.checkpoint = self.checkpoint.as_ref().map(|p| resolve(base, p));
        self.output_text = resolve(base, &self.output_text);
        self.output_csv = self.output_csv.as_ref().map(|p| resolve(base, p));
    }
}

/// `path` with `suffix` appended to its file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
