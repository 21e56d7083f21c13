use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::EpochLog;
use crate::retrieval::EvalReport;
use crate::synth::SynthConfig;

/// Build and host facts that can change numbers. No timestamps, so two
/// runs on one machine fingerprint identically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub debug_assertions: bool,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
            debug_assertions: cfg!(debug_assertions),
        }
    }
}

/// One evaluation inside a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedEval {
    /// e.g. `loo:3` or `single:0`.
    pub protocol: String,
    /// `concat`, or a reducer name with its output size.
    pub features: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub config_hash: String,
    pub data: Option<SynthConfig>,
    pub epochs: Vec<EpochLog>,
    pub evals: Vec<NamedEval>,
    pub environment: Environment,
}

impl RunReport {
    pub fn new(config: &TrainConfig, data: Option<SynthConfig>, epochs: Vec<EpochLog>) -> Self {
        Self {
            config_hash: config.hash(),
            config: config.clone(),
            data,
            epochs,
            evals: Vec::new(),
            environment: Environment::current(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Equal up to evaluation wall-clock time.
    pub fn same_numbers(&self, other: &Self) -> bool {
        self.config == other.config
            && self.config_hash == other.config_hash
            && self.data == other.data
            && self.epochs == other.epochs
            && self.environment == other.environment
            && self.evals.len() == other.evals.len()
            && self.evals.iter().zip(&other.evals).all(|(a, b)| {
                a.protocol == b.protocol && a.features == b.features && a.report.same_numbers(&b.report)
            })
    }
}
