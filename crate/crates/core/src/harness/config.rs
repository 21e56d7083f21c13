use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::TrunkConfig;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, TripletBatchLayout};
use crate::optim::OptimizerConfig;
use crate::pattern::{InPattern, PatternSet};
use crate::synth::ProtocolMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub lr_start: f64,
    pub lr_base: f64,
    pub warmup_epochs: usize,
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lr_start: 1.75e-6,
            lr_base: 1.75e-4,
            warmup_epochs: 5,
            milestones: vec![20, 30],
            decay: 0.1,
        }
    }
}

impl Schedule {
    /// Linear warmup from `lr_start` to `lr_base`, then `decay` at every
    /// milestone already reached.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            let t = epoch as f64 / self.warmup_epochs as f64;
            return self.lr_start + t * (self.lr_base - self.lr_start);
        }
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count() as i32;
        self.lr_base * self.decay.powi(passed)
    }

    pub fn validate(&self, epochs: usize) -> Result<()> {
        if self.warmup_epochs >= epochs.max(1) {
            return Err(Error::Config(format!(
                "warmup of {} epochs does not fit in {epochs} epochs",
                self.warmup_epochs
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if !(self.lr_base > 0.0 && self.lr_start >= 0.0 && self.decay > 0.0) {
            return Err(Error::Config("learning rates and decay must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternMode {
    /// All `2^depth` IN patterns, one per head.
    Full,
    /// `2^depth` heads that all use `uniform_pattern`.
    Uniform,
    /// Heads from `patterns`.
    List,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub depth: usize,
    pub mode: PatternMode,
    /// Pattern string used by `uniform` mode; defaults to no IN.
    pub uniform_pattern: Option<String>,
    pub patterns: Vec<String>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            mode: PatternMode::Full,
            uniform_pattern: None,
            patterns: Vec::new(),
        }
    }
}

impl EnsembleConfig {
    pub fn pattern_set(&self) -> Result<PatternSet> {
        match self.mode {
            PatternMode::Full => PatternSet::full(self.depth),
            PatternMode::Uniform => {
                let p = match &self.uniform_pattern {
                    Some(s) => s.parse::<InPattern>()?,
                    None => InPattern::none(self.depth),
                };
                if p.depth() != self.depth {
                    return Err(Error::Config(format!(
                        "uniform pattern `{p}` has depth {}, expected {}",
                        p.depth(),
                        self.depth
                    )));
                }
                PatternSet::uniform(p, 1 << self.depth)
            }
            PatternMode::List => PatternSet::parse_list(&self.patterns),
        }
        .map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Probability of random erasing per training image.
    pub random_erase: f64,
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            random_erase: 0.0,
            flip: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub protocol: ProtocolMode,
    pub batch: TripletBatchLayout,
    pub schedule: Schedule,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub ensemble: EnsembleConfig,
    pub trunk: TrunkConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 40,
            protocol: ProtocolMode::LeaveOneOut(3),
            batch: TripletBatchLayout { p: 8, k: 4 },
            schedule: Schedule::default(),
            optimizer: OptimizerConfig::default(),
            loss: LossConfig::default(),
            ensemble: EnsembleConfig::default(),
            trunk: TrunkConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        self.schedule.validate(self.epochs)?;
        self.batch.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.trunk.validate()?;
        let patterns = self.ensemble.pattern_set()?;
        if patterns.depth() > self.trunk.total_blocks() {
            return Err(Error::Config(format!(
                "depth {} exceeds the trunk's {} bottlenecks",
                patterns.depth(),
                self.trunk.total_blocks()
            )));
        }
        if !(0.0..=1.0).contains(&self.augment.random_erase) {
            return Err(Error::Config("random_erase must be a probability".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
