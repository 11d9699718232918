//! Run configuration: TOML with dotted keys, every key defaulted, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, Photometric, Profile, Term};
use crate::optimizer::OptimConfig;
use crate::supervision::SupervisionConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Grid,
    Tpv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Where the regularizers are evaluated each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerConfig {
    /// Ray sample points per ray fed to the Eikonal term.
    pub eikonal_per_ray: usize,
    /// Uniform box points per step for the Eikonal term; `None` matches the ray-point count.
    pub eikonal_uniform: Option<usize>,
    pub hessian_points: usize,
    pub sparsity_points: usize,
    /// Side of the square patch rendered for the edge term.
    pub edge_patch: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig { eikonal_per_ray: 4, eikonal_uniform: None, hessian_points: 4096, sparsity_points: 4096, edge_patch: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpvConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
}

impl Default for TpvConfig {
    fn default() -> Self {
        TpvConfig { feature_dim: 16, hidden_dim: 32 }
    }
}

/// Everything `fit` and `gradcheck` read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory; relative paths resolve against the config file.
    pub dataset: PathBuf,
    /// Output directory for checkpoints and the loss CSV.
    pub output: PathBuf,
    pub seed: u64,
    pub profile: Profile,
    pub provider: Provider,
    pub precision: Precision,
    /// Samples per ray (M).
    pub samples: usize,
    pub photometric: Photometric,
    /// false replaces the multi-view loss by single-depth reprojection.
    pub use_mvs: bool,
    /// Adds the semantic term when the dataset has label maps.
    pub semantics: bool,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    /// Ray shards per step; fixes the gradient reduction order.
    pub shards: usize,
    pub weights: LossWeights,
    pub supervision: SupervisionConfig,
    pub optim: OptimConfig,
    pub regularizer: RegularizerConfig,
    pub tpv: TpvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("run"),
            seed: 0,
            profile: Profile::Occupancy,
            provider: Provider::Grid,
            precision: Precision::F32,
            samples: crate::renderer::DEFAULT_SAMPLES,
            photometric: Photometric::L1,
            use_mvs: true,
            semantics: false,
            threads: 0,
            shards: 8,
            weights: LossWeights::default(),
            supervision: SupervisionConfig::default(),
            optim: OptimConfig::default(),
            regularizer: RegularizerConfig::default(),
            tpv: TpvConfig::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale settings: fewer samples and rays, SSIM dissimilarity, a
/// dense-grid learning rate, a light Hessian weight and a slow sharpness.
    pub fn desk() -> Self {
        RunConfig {
            samples: 48,
            photometric: Photometric::SsimL1,
            supervision: SupervisionConfig { rays_per_step: 256, ..Default::default() },
            weights: LossWeights { hessian: 0.001, ..Default::default() },
            optim: OptimConfig { lr0: 0.02, epochs: 10, steps_per_epoch: 200, rho_lr_scale: 0.1, ..Default::default() },
            regularizer: RegularizerConfig { hessian_points: 1024, sparsity_points: 4096, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str, name: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{name}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, resolving relative dataset/output paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.dataset.is_relative() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config(format!("samples = {} must be at least 2", self.samples)));
        }
        if self.shards == 0 {
            return Err(Error::Config("shards must be positive".into()));
        }
        if self.provider == Provider::Tpv && (self.tpv.feature_dim == 0 || self.tpv.hidden_dim == 0) {
            return Err(Error::Config("tpv dimensions must be positive".into()));
        }
        if self.regularizer.edge_patch < 2 {
            return Err(Error::Config("regularizer.edge_patch must be at least 2".into()));
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.supervision.validate()?;
        self.optim.validate()?;
        Ok(())
    }

    /// Terms optimized by this run, in report order.
    pub fn terms(&self) -> Vec<Term> {
        let mut t = self.profile.terms().to_vec();
        if self.semantics && !t.contains(&Term::Semantic) {
            t.push(Term::Semantic);
        }
        t
    }
}
