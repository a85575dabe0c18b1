use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blur::KERNEL_SIZES;
use crate::deblur_net::{DiscriminatorConfig, GeneratorConfig};
use crate::error::{io_err, Error, Result};
use crate::losses::LossWeights;
use crate::parse_net::ParsingModelConfig;
use crate::trainer::schedule::{KernelSchedule, DEFAULT_PERIOD};

/// Where the generator's semantic input comes from during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticSource {
    /// Frozen parser applied to the blurred input.
    #[default]
    Parser,
    /// One-hot encoding of the ground-truth labels.
    GroundTruth,
    /// 1/11 everywhere.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn adam<T: facedeblur_tensor::Scalar>(
        &self,
        store: &facedeblur_tensor::ParamStore<T>,
        lr: f64,
    ) -> facedeblur_tensor::Adam<T> {
        let OptimizerConfig::Adam { beta1, beta2, eps } = *self;
        let mut a = facedeblur_tensor::Adam::new(store, lr);
        a.beta1 = beta1;
        a.beta2 = beta2;
        a.eps = eps;
        a
    }
}

/// Every training knob of both phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_parsing: f64,
    pub lr_deblur: f64,
    /// Discriminator learning rate; the generator's when absent.
    pub lr_disc: Option<f64>,
    pub weights: LossWeights,
    pub total_iters: u64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub kernel_sizes: Vec<usize>,
    pub kernel_period: u64,
    pub incremental: bool,
    pub augment: bool,
    pub semantic_source: SemanticSource,
    pub perceptual_layers: Vec<String>,
    pub feature_seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Entries of the fixed validation mini-set for the metrics log.
    pub val_size: usize,
    pub parse_iters: u64,
    pub parse_eval_every: u64,
    pub parse_patience: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub parsing: ParsingModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr_parsing: 5e-6,
            lr_deblur: 4e-5,
            lr_disc: None,
            weights: LossWeights::default(),
            total_iters: 17_000_000,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            kernel_sizes: KERNEL_SIZES.to_vec(),
            kernel_period: DEFAULT_PERIOD,
            incremental: true,
            augment: true,
            semantic_source: SemanticSource::Parser,
            perceptual_layers: vec!["pool2".into(), "pool5".into()],
            feature_seed: 0x5EED,
            log_every: 100,
            checkpoint_every: 10_000,
            val_size: 8,
            parse_iters: 60_000,
            parse_eval_every: 500,
            parse_patience: 5,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            parsing: ParsingModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reads TOML or JSON, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: TrainConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?,
            Some("toml") => {
                toml::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?
            }
            _ => return Err(Error::Config(format!("{}: config must be .toml or .json", path.display()))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn lr_disc(&self) -> f64 {
        self.lr_disc.unwrap_or(self.lr_deblur)
    }

    pub fn schedule(&self) -> Result<KernelSchedule> {
        KernelSchedule::new(self.kernel_sizes.clone(), if self.incremental { self.kernel_period } else { 0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        for (n, v) in [("lr_parsing", self.lr_parsing), ("lr_deblur", self.lr_deblur), ("lr_disc", self.lr_disc())] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{n} must be positive, got {v}")));
            }
        }
        let OptimizerConfig::Adam { beta1, beta2, eps } = self.optimizer;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
            return Err(Error::Config("adam constants out of range".into()));
        }
        self.weights.validate()?;
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config("kernel_sizes is empty".into()));
        }
        if self.incremental && self.kernel_period == 0 {
            return Err(Error::Config("kernel_period must be >= 1 for incremental training".into()));
        }
        if self.weights.lambda_p > 0.0 && self.perceptual_layers.is_empty() {
            return Err(Error::Config("perceptual_layers is empty but lambda_p > 0".into()));
        }
        if self.log_every == 0 || self.parse_eval_every == 0 {
            return Err(Error::Config("log_every and parse_eval_every must be >= 1".into()));
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.parsing.validate()?;
        if self.discriminator.input_size != self.generator.image_size || self.parsing.image_size != self.generator.image_size {
            return Err(Error::Config(format!(
                "image sizes disagree: generator {}, discriminator {}, parser {}",
                self.generator.image_size, self.discriminator.input_size, self.parsing.image_size
            )));
        }
        Ok(())
    }
}
