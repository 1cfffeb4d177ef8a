//! Run configuration: a flat JSON file whose values command-line flags
//! override.

use std::path::{Path, PathBuf};

use hoisynth::neural::Profile;
use hoisynth::pipeline::SynthMode;
use hoisynth::SceneType;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus file read by `train` and `eval`, written by `datagen`.
    pub corpus: PathBuf,
    /// Directory holding `graph.ckpt` and `layout.ckpt`.
    pub checkpoints: PathBuf,
    /// Asset catalog JSON; the procedural catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Run directory for synthesized scenes, reports and the manifest.
    pub output: PathBuf,
    pub profile: Profile,
    pub scene_type: SceneType,
    pub seed: u64,
    pub data_seed: u64,
    /// Seeds the procedural catalog and the codebook fit.
    pub catalog_seed: u64,
    pub corpus_size: usize,
    pub test_fraction: f64,
    /// Overrides the profile's epoch count when set.
    pub graph_epochs: Option<usize>,
    pub layout_epochs: Option<usize>,
    pub beta: f64,
    pub mode: SynthMode,
    pub skip_optimize: bool,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("run/corpus.ndjson"),
            checkpoints: PathBuf::from("run/checkpoints"),
            catalog: None,
            output: PathBuf::from("run"),
            profile: Profile::Desk,
            scene_type: SceneType::Bedroom,
            seed: 0,
            data_seed: 0,
            catalog_seed: 0,
            corpus_size: 2000,
            test_fraction: 0.1,
            graph_epochs: None,
            layout_epochs: None,
            beta: 0.05,
            mode: SynthMode::Full,
            skip_optimize: false,
            parallel: cfg!(feature = "parallel"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: String| Err(UsageError(m));
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be a non-negative number, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must be in [0, 1), got {}", self.test_fraction));
        }
        if self.corpus_size == 0 {
            return bad("corpus_size must be at least 1".into());
        }
        if self.graph_epochs == Some(0) || self.layout_epochs == Some(0) {
            return bad("epoch counts must be at least 1".into());
        }
        if self.parallel && !cfg!(feature = "parallel") {
            return bad("built without the parallel feature".into());
        }
        if hoisynth::SceneRegistry::builtin().get(&self.scene_type).is_err() {
            return bad(format!("unknown scene type '{}'", self.scene_type));
        }
        Ok(())
    }

    pub fn parallelism(&self) -> hoisynth::par::Parallelism {
        if self.parallel {
            hoisynth::par::Parallelism::Rayon
        } else {
            hoisynth::par::Parallelism::Sequential
        }
    }

    pub fn graph_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("graph.ckpt")
    }

    pub fn layout_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("layout.ckpt")
    }
}
