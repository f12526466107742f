//! Experiment specification files.

use std::fs;
use std::path::{Path, PathBuf};

use pnp_cosmo::csmodel::{LossWeights, ModelConfig, TrainConfig};
use pnp_cosmo::dataset::{sub_seed, DatasetConfig, Split};
use pnp_cosmo::denoiser::DenoiserConfig;
use pnp_cosmo::recon::{ReconConfig, ReconMode};
use pnp_cosmo::{CosmoError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Plain cartesian sweep over modes and sampling settings.
    Sweep,
    Disentanglement,
    Capacity,
    Convergence,
    Lesion,
    Misalign,
    Gamma,
    /// Style estimation from zero-filled images against the center fraction.
    Style,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Disentanglement => "disentanglement",
            ExperimentKind::Capacity => "capacity",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Lesion => "lesion",
            ExperimentKind::Misalign => "misalign",
            ExperimentKind::Gamma => "gamma",
            ExperimentKind::Style => "style",
        }
    }
}

/// Gaussian intensity bump added to the target contrast only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionSpec {
    /// Center as fractions of the image height and width.
    pub row: f64,
    pub col: f64,
    /// Pixels.
    pub radius: f64,
    /// Relative to the slice maximum.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub modes: Vec<ReconMode>,
    pub accelerations: Vec<f64>,
    pub center_fractions: Vec<f64>,
    /// Relative noise levels.
    pub noise_levels: Vec<f64>,
    /// Content-refinement step sizes; only multiply `cosmo` runs.
    pub gammas: Vec<f64>,
    /// `alpha2 = alpha3` values, one model each; empty keeps `pretrain.weights`.
    pub alphas: Vec<f64>,
    /// Content downsampling factors, one model each; empty keeps `model.downsample`.
    pub downsamples: Vec<usize>,
    /// Reference low-pass factors, one model each.
    pub degradations: Vec<usize>,
    /// Run paired fine-tuning after pre-training.
    pub finetune: bool,
    pub split: Split,
    /// Use at most this many slices of the split; 0 takes all.
    pub max_slices: usize,
    /// Synthetic receive coils; 0 or 1 means single-coil.
    pub coils: usize,
    /// Reference rotation in degrees.
    pub rotation_deg: f64,
    pub lesion: Option<LesionSpec>,
    /// Score inside the foreground mask; false scores the full frame.
    pub foreground_metrics: bool,
    /// Write PNG previews of each reconstruction of the first slice.
    pub save_images: bool,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            modes: vec![
                ReconMode::CsWt,
                ReconMode::Cosmo,
                ReconMode::CosmoNoCr,
                ReconMode::CosmoOracle,
            ],
            accelerations: vec![2.0, 4.0, 8.0],
            center_fractions: vec![0.08],
            noise_levels: vec![0.01],
            gammas: vec![0.1],
            alphas: Vec::new(),
            downsamples: Vec::new(),
            degradations: vec![1],
            finetune: true,
            split: Split::Test,
            max_slices: 0,
            coils: 0,
            rotation_deg: 0.0,
            lesion: None,
            foreground_metrics: true,
            save_images: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub experiment: ExperimentKind,
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub denoiser: DenoiserConfig,
    pub recon: ReconConfig,
    pub grid: Grid,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec::preset(ExperimentKind::Sweep)
    }
}

impl ExperimentSpec {
    /// Desk-scale defaults for each experiment.
    pub fn preset(kind: ExperimentKind) -> Self {
        let size = 32;
        let dataset = DatasetConfig {
            height: size,
            width: size,
            ..DatasetConfig::default()
        };
        let model = ModelConfig {
            height: size,
            width: size,
            ..ModelConfig::default()
        };
        let pretrain = TrainConfig {
            iterations: 3000,
            lr: 1e-3,
            weights: LossWeights {
                alpha2: 0.1,
                alpha3: 0.1,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        };
        let finetune = TrainConfig {
            iterations: 1000,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let recon = ReconConfig {
            max_iters: 50,
            ..ReconConfig::default()
        };
        let mut grid = Grid::default();
        match kind {
            ExperimentKind::Sweep => {
                grid.modes = ReconMode::ALL.to_vec();
            }
            ExperimentKind::Disentanglement => {
                grid.modes = vec![ReconMode::CosmoNoCr];
                grid.accelerations = vec![2.0, 4.0];
                grid.alphas = vec![0.001, 0.1, 10.0];
                grid.finetune = false;
            }
            ExperimentKind::Capacity => {
                grid.modes = vec![ReconMode::CosmoNoCr];
                grid.accelerations = vec![4.0];
                grid.downsamples = vec![1, 2, 4];
                grid.degradations = vec![1, 2, 4];
            }
            ExperimentKind::Convergence => {
                grid.modes = vec![
                    ReconMode::Cosmo,
                    ReconMode::CosmoNoCr,
                    ReconMode::CosmoOracle,
                ];
                grid.accelerations = vec![2.0];
            }
            ExperimentKind::Lesion => {
                grid.modes = vec![ReconMode::Cosmo, ReconMode::CosmoNoCr];
                grid.accelerations = vec![2.0, 4.0];
                grid.lesion = Some(LesionSpec {
                    row: 0.4,
                    col: 0.6,
                    radius: 2.0,
                    delta: 0.4,
                });
            }
            ExperimentKind::Misalign => {
                grid.modes = vec![ReconMode::Cosmo, ReconMode::CosmoNoCr];
                grid.accelerations = vec![2.0];
                grid.rotation_deg = 2.0;
            }
            ExperimentKind::Gamma => {
                grid.modes = vec![ReconMode::Cosmo];
                grid.noise_levels = vec![0.01, 0.03];
                grid.gammas = vec![0.01, 0.03, 0.1, 0.3, 1.0];
                grid.split = Split::Val;
                grid.save_images = false;
            }
            ExperimentKind::Style => {
                grid.modes = vec![ReconMode::CosmoNoCr];
                grid.accelerations = vec![4.0];
                grid.center_fractions = vec![0.02, 0.06, 0.12];
            }
        }
        ExperimentSpec {
            name: kind.as_str().to_string(),
            experiment: kind,
            seed: 0,
            out: PathBuf::from("out"),
            dataset,
            model,
            pretrain,
            finetune,
            denoiser: DenoiserConfig {
                lr: 1e-3,
                ..DenoiserConfig::default()
            },
            recon,
            grid,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CosmoError::Config(format!("spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CosmoError::Config(format!("cannot read spec {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Copy with the master seed pushed into every component config.
    pub fn resolved(&self) -> Self {
        let mut s = self.clone();
        s.dataset.seed = sub_seed(s.seed, 0);
        s.model.seed = sub_seed(s.seed, 1);
        s.pretrain.seed = sub_seed(s.seed, 2);
        s.finetune.seed = sub_seed(s.seed, 3);
        s.denoiser.seed = sub_seed(s.seed, 4);
        s.model.height = s.dataset.height;
        s.model.width = s.dataset.width;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CosmoError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!(
                "experiment name {:?} is not a plain directory name",
                self.name
            ));
        }
        self.dataset.validate()?;
        self.recon.validate()?;
        let g = &self.grid;
        if g.modes.is_empty() || g.accelerations.is_empty() || g.center_fractions.is_empty() {
            return bad("grid needs at least one mode, acceleration and center fraction".into());
        }
        if g.noise_levels.is_empty() || g.degradations.is_empty() {
            return bad("grid needs at least one noise level and degradation".into());
        }
        if g.modes.contains(&ReconMode::Cosmo) && g.gammas.is_empty() {
            return bad("cosmo mode needs at least one gamma".into());
        }
        if g.accelerations.iter().any(|&r| !(r >= 1.0))
            || g.noise_levels.iter().any(|&s| !(s >= 0.0))
        {
            return bad("accelerations must be >= 1 and noise levels >= 0".into());
        }
        Ok(())
    }

    /// Short content hash of the resolved spec.
    pub fn digest(&self) -> String {
        hash_hex(self.resolved().to_toml().as_bytes())
    }

    /// `out/<name>`.
    pub fn experiment_dir(&self) -> PathBuf {
        self.out.join(&self.name)
    }

    /// `out/<name>/<run-id>`.
    pub fn run_dir(&self) -> PathBuf {
        self.experiment_dir().join(self.run_id())
    }

    pub fn run_id(&self) -> String {
        format!("seed{}-{}", self.seed, self.digest())
    }
}

pub(crate) fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(6)
        .map(|b| format!("{b:02x}"))
        .collect()
}
