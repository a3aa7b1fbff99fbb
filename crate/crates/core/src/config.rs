//! Every tunable of the toolkit with its default value.
//!
//! The defaults here are the single source for the published hyperparameters
//! (stage depths, loss weights, optimizer settings, metric constants). All
//! structs deserialize from TOML, reject unknown keys and fill omitted keys
//! from [`Default`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Topology;

/// Residual dense attention block shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdabConfig {
    pub dense_layers: usize,
    pub growth: usize,
    pub base_channels: usize,
    pub attention_kernel: usize,
}

impl Default for RdabConfig {
    fn default() -> Self {
        RdabConfig {
            dense_layers: 6,
            growth: 32,
            base_channels: 64,
            attention_kernel: 7,
        }
    }
}

impl RdabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dense_layers < 1 {
            return Err(Error::Config("rdab.dense_layers must be >= 1".into()));
        }
        if self.growth < 1 {
            return Err(Error::Config("rdab.growth must be >= 1".into()));
        }
        if self.base_channels < 1 {
            return Err(Error::Config("rdab.base_channels must be >= 1".into()));
        }
        if self.attention_kernel < 3 || self.attention_kernel % 2 == 0 {
            return Err(Error::Config(
                "rdab.attention_kernel must be odd and >= 3".into(),
            ));
        }
        Ok(())
    }

    /// Channel count of the full dense concatenation.
    pub fn concat_channels(&self) -> usize {
        self.base_channels + self.dense_layers * self.growth
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub n_rdab: usize,
    #[serde(default)]
    pub rdab: RdabConfig,
}

impl StageConfig {
    pub fn with_blocks(n_rdab: usize) -> Self {
        StageConfig {
            n_rdab,
            rdab: RdabConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rdab < 1 {
            return Err(Error::Config("n_rdab must be >= 1".into()));
        }
        self.rdab.validate()
    }
}

/// What the discriminator receives next to the candidate image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// The 8-bit reference, as in `D(I_H', I_G8)`.
    #[default]
    Reference,
    /// The LDR input (pix2pix-style conditioning).
    Ldr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub topology: Topology,
    pub conditioning: Conditioning,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage1: StageConfig::with_blocks(2),
            stage2: StageConfig::with_blocks(1),
            topology: Topology::Parallel,
            conditioning: Conditioning::Reference,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()
    }
}

/// Published trainable-parameter counts of the reference network.
pub const REFERENCE_PARAMS_STAGE1: usize = 555_655;
pub const REFERENCE_PARAMS_STAGE2: usize = 278_821;
pub const REFERENCE_PARAMS_TOTAL: usize = 834_476;

/// Weights of the stage objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_r1: f64,
    pub w_ssim: f64,
    pub w_adv: f64,
    pub w_r2: f64,
    pub w_pcl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_r1: 1.0,
            w_ssim: 1.0,
            w_adv: 1e-4,
            w_r2: 1.0,
            w_pcl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_r1", self.w_r1),
            ("w_ssim", self.w_ssim),
            ("w_adv", self.w_adv),
            ("w_r2", self.w_r2),
            ("w_pcl", self.w_pcl),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("weights.{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Multi-scale SSIM settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsSsimConfig {
    pub levels: usize,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Smallest side allowed at the coarsest scale.
    pub min_coarse_side: usize,
}

/// Standard five-scale exponent weights.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

impl Default for MsSsimConfig {
    fn default() -> Self {
        MsSsimConfig {
            levels: 5,
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            min_coarse_side: 3,
        }
    }
}

impl MsSsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.levels > MSSSIM_WEIGHTS.len() {
            return Err(Error::Config(format!(
                "msssim.levels must be in 1..={}",
                MSSSIM_WEIGHTS.len()
            )));
        }
        if self.window < 1 || self.window % 2 == 0 {
            return Err(Error::Config("msssim.window must be odd".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("msssim.sigma must be > 0".into()));
        }
        if self.min_coarse_side < 1 {
            return Err(Error::Config("msssim.min_coarse_side must be >= 1".into()));
        }
        Ok(())
    }

    /// Exponent weights for the configured number of levels, renormalized to sum to 1.
    pub fn weights(&self) -> Vec<f64> {
        let w = &MSSSIM_WEIGHTS[..self.levels];
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    /// Smallest image side the pyramid accepts.
    pub fn min_side(&self) -> usize {
        self.min_coarse_side << (self.levels - 1)
    }
}

/// μ-law PSNR settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuPsnrConfig {
    pub mu: f64,
    pub percentile: f64,
    pub cap_db: f64,
}

impl Default for MuPsnrConfig {
    fn default() -> Self {
        MuPsnrConfig {
            mu: 5000.0,
            percentile: 0.99,
            cap_db: 100.0,
        }
    }
}

impl MuPsnrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Config("mu must be > 0".into()));
        }
        validate_percentile(self.percentile)
    }
}

pub(crate) fn validate_percentile(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Argument(format!(
            "percentile must lie in (0, 1], got {p}"
        )));
    }
    Ok(())
}

/// Percentile used to derive 8-bit references and visualizations from 16-bit data.
pub const DEFAULT_CLIP_PERCENTILE: f64 = 0.99;

/// Default training patch side.
pub const DEFAULT_PATCH_SIZE: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// One backward pass through both stages with both objectives summed.
    #[default]
    Joint,
    /// Stage-I alone for the first half of the epochs, then stage-II with stage-I frozen.
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    Stage1Only,
    Stage2Only,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub ablation: Ablation,
    /// Steps between checkpoints; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Stop after this many steps when set (overrides the epoch count).
    pub max_steps: Option<usize>,
    pub discriminator_updates: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub weights: LossWeights,
    pub msssim: MsSsimConfig,
    pub model: ModelConfig,
}

pub const DEFAULT_GRAD_CLIP_NORM: f64 = 10.0;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            epochs: 25,
            batch_size: 8,
            patch_size: DEFAULT_PATCH_SIZE,
            seed: 0,
            schedule: Schedule::Joint,
            ablation: Ablation::None,
            checkpoint_every: 0,
            max_steps: None,
            discriminator_updates: true,
            grad_clip: None,
            weights: LossWeights::default(),
            msssim: MsSsimConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("eps", self.eps),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("beta1 and beta2 must be < 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.patch_size < 16 {
            return Err(Error::Config("patch_size must be >= 16".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        self.weights.validate()?;
        self.msssim.validate()?;
        self.model.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
