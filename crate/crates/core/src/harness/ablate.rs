//! Ablation drivers. Each seed gets its own dataset and held-out domain
//! (`seed % num_domains`); the source-domain evaluation uses the next
//! domain, which the leave-one-out model trained on.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{PatternMode, TrainConfig};
use super::train::{extract, train};
use super::EpochLog;
use crate::error::{Error, Result};
use crate::reduce::{fit_autoencoder, fit_pca, fit_random_projector, AutoEncoderConfig, FeatureBank};
use crate::retrieval::{evaluate, EvalProtocol, PlotData};
use crate::synth::{generate_dataset, make_protocol, ProtocolMode, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    Components,
    Depth,
    ReductionCurve,
    ConcatVsAverage,
}

impl AblationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Components => "components",
            Self::Depth => "depth",
            Self::ReductionCurve => "reduction-curve",
            Self::ConcatVsAverage => "concat-vs-average",
        }
    }
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "components" => Ok(Self::Components),
            "depth" => Ok(Self::Depth),
            "reduction-curve" => Ok(Self::ReductionCurve),
            "concat-vs-average" => Ok(Self::ConcatVsAverage),
            _ => Err(Error::Argument(format!("unknown ablation `{s}`"))),
        }
    }
}

/// Everything an ablation needs besides the seed list. `data.seed`,
/// `train.seed` and `train.protocol` are overwritten per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub data: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalProtocol,
    /// PCA output size for the full pipeline; `0` means a quarter of `D`.
    pub pca_dim: usize,
    /// Smallest reduction is `D / max_divisor`.
    pub max_divisor: usize,
    pub depths: Vec<usize>,
    pub autoencoder: AutoEncoderConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            data: SynthConfig::default(),
            train: TrainConfig::default(),
            eval: EvalProtocol::default(),
            pca_dim: 0,
            max_divisor: 32,
            depths: vec![0, 1, 2, 3, 4],
            autoencoder: AutoEncoderConfig::default(),
        }
    }
}

impl AblationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.data.validate()?;
        if self.data.num_domains < 2 {
            return Err(Error::Config("ablations use leave-one-out and need two or more domains".into()));
        }
        if self.max_divisor == 0 || !self.max_divisor.is_power_of_two() {
            return Err(Error::Config("max_divisor must be a power of two".into()));
        }
        self.train.validate()
    }

    pub fn target_domain(&self, seed: u64) -> u32 {
        (seed % self.data.num_domains as u64) as u32
    }

    pub fn source_domain(&self, seed: u64) -> u32 {
        ((seed + 1) % self.data.num_domains as u64) as u32
    }

    fn train_config(&self, seed: u64, variant: Variant) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seed = seed;
        cfg.protocol = ProtocolMode::LeaveOneOut(self.target_domain(seed));
        let e = &mut cfg.ensemble;
        match variant {
            Variant::Baseline => {
                e.depth = 0;
                e.mode = PatternMode::Full;
            }
            Variant::SelfEnsemble => {
                e.mode = PatternMode::Uniform;
                e.uniform_pattern = None;
            }
            Variant::Full => e.mode = PatternMode::Full,
            Variant::Depth(d) => {
                e.depth = d;
                e.mode = PatternMode::Full;
            }
        }
        cfg
    }
}

/// Which model a cell comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// One head, no IN.
    Baseline,
    /// `2^δ` heads, none with IN.
    SelfEnsemble,
    /// `2^δ` heads, one per IN pattern.
    Full,
    Depth(usize),
}

impl Variant {
    pub fn name(self) -> String {
        match self {
            Self::Baseline => "baseline".into(),
            Self::SelfEnsemble => "self-ensemble".into(),
            Self::Full => "d2fel".into(),
            Self::Depth(d) => format!("depth-{d}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalDomain {
    /// The domain left out of training.
    Heldout,
    /// A training domain, evaluated on its unseen test identities.
    Source,
}

impl EvalDomain {
    pub fn name(self) -> &'static str {
        match self {
            Self::Heldout => "heldout",
            Self::Source => "source",
        }
    }
}

/// Query/gallery banks of one evaluation domain.
#[derive(Clone, Debug)]
pub struct EvalBanks {
    pub query: FeatureBank,
    pub gallery: FeatureBank,
}

/// Features of one trained model.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub variant: Variant,
    pub seed: u64,
    pub config: TrainConfig,
    pub epochs: Vec<EpochLog>,
    pub train: FeatureBank,
    pub heldout: EvalBanks,
    pub source: EvalBanks,
}

impl TrainedRun {
    pub fn banks(&self, domain: EvalDomain) -> &EvalBanks {
        match domain {
            EvalDomain::Heldout => &self.heldout,
            EvalDomain::Source => &self.source,
        }
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }
}

/// Trained runs keyed by `(variant, seed)`, so drivers sharing a config
/// share models.
#[derive(Default)]
pub struct RunCache {
    runs: BTreeMap<(Variant, u64), TrainedRun>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn get_or_train(&mut self, cfg: &AblationConfig, variant: Variant, seed: u64) -> Result<&TrainedRun> {
        if let std::collections::btree_map::Entry::Vacant(e) = self.runs.entry((variant, seed)) {
            let run = train_run(cfg, variant, seed)?;
            e.insert(run);
        }
        Ok(&self.runs[&(variant, seed)])
    }
}

/// Trains one variant on the seed's dataset and extracts every bank the
/// drivers use.
pub fn train_run(cfg: &AblationConfig, variant: Variant, seed: u64) -> Result<TrainedRun> {
    let data = SynthConfig { seed, ..cfg.data.clone() };
    let dataset = generate_dataset(&data)?;
    let tc = cfg.train_config(seed, variant);
    let outcome = train(&dataset, &tc)?;
    let mut model = outcome.model;
    let heldout = make_protocol(&dataset.manifest, tc.protocol)?;
    let source = make_protocol(&dataset.manifest, ProtocolMode::SingleDomain(cfg.source_domain(seed)))?;
    Ok(TrainedRun {
        variant,
        seed,
        train: extract(&mut model, &dataset, &heldout.train)?,
        heldout: EvalBanks {
            query: extract(&mut model, &dataset, &heldout.query)?,
            gallery: extract(&mut model, &dataset, &heldout.gallery)?,
        },
        source: EvalBanks {
            query: extract(&mut model, &dataset, &source.query)?,
            gallery: extract(&mut model, &dataset, &source.gallery)?,
        },
        config: tc,
        epochs: outcome.epochs,
    })
}

/// How a run's features are turned into descriptors before ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Concat,
    Average,
    Pca(usize),
    Rp(usize),
    Ae(usize),
}

impl Feature {
    pub fn name(self) -> String {
        match self {
            Self::Concat => "concat".into(),
            Self::Average => "average".into(),
            Self::Pca(d) => format!("pca-{d}"),
            Self::Rp(d) => format!("rp-{d}"),
            Self::Ae(d) => format!("ae-{d}"),
        }
    }

    pub fn method(self) -> &'static str {
        match self {
            Self::Concat => "concat",
            Self::Average => "average",
            Self::Pca(_) => "pca",
            Self::Rp(_) => "rp",
            Self::Ae(_) => "ae",
        }
    }
}

/// Scores `feature` of `run` on both evaluation domains. Reducers are
/// fitted on the run's train bank.
pub fn score(run: &TrainedRun, feature: Feature, cfg: &AblationConfig) -> Result<Vec<Cell>> {
    let map_pair = |f: &dyn Fn(&FeatureBank) -> Result<FeatureBank>| -> Result<Vec<Cell>> {
        [EvalDomain::Heldout, EvalDomain::Source]
            .into_iter()
            .map(|domain| {
                let b = run.banks(domain);
                let q = f(&b.query)?;
                let g = f(&b.gallery)?;
                let r = evaluate(&q, &g, &cfg.eval)?;
                Ok(Cell {
                    variant: run.variant,
                    seed: run.seed,
                    domain,
                    feature,
                    dim: q.dim(),
                    map: r.map,
                    rank1: r.rank1,
                })
            })
            .collect()
    };
    match feature {
        Feature::Concat => map_pair(&|b| Ok(b.clone())),
        Feature::Average => map_pair(&|b| b.segment_average()),
        Feature::Pca(d) => {
            let m = fit_pca(&run.train, d)?;
            map_pair(&|b| m.transform(b))
        }
        Feature::Rp(d) => {
            let p = fit_random_projector(run.dim(), d, run.seed)?;
            map_pair(&|b| p.project(b))
        }
        Feature::Ae(d) => {
            let ae_cfg = AutoEncoderConfig {
                seed: run.seed,
                ..cfg.autoencoder.clone()
            };
            let ae = fit_autoencoder(&run.train, d, &ae_cfg)?;
            map_pair(&|b| ae.transform(b))
        }
    }
}

/// One (variant, seed, domain, feature) measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: Variant,
    pub seed: u64,
    pub domain: EvalDomain,
    pub feature: Feature,
    pub dim: usize,
    pub map: f64,
    pub rank1: f64,
}

/// Seed aggregate of cells sharing variant, domain and feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub domain: EvalDomain,
    pub feature: Feature,
    pub dim: usize,
    pub seeds: usize,
    pub map_mean: f64,
    pub map_std: f64,
    pub rank1_mean: f64,
    pub rank1_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub cells: Vec<Cell>,
}

impl AblationTable {
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(Variant, EvalDomain, Feature), Vec<&Cell>> = BTreeMap::new();
        for c in &self.cells {
            groups.entry((c.variant, c.domain, c.feature)).or_default().push(c);
        }
        groups
            .into_iter()
            .map(|((variant, domain, feature), cells)| {
                let maps: Vec<f64> = cells.iter().map(|c| c.map).collect();
                let r1: Vec<f64> = cells.iter().map(|c| c.rank1).collect();
                let (map_mean, map_std) = mean_std(&maps);
                let (rank1_mean, rank1_std) = mean_std(&r1);
                SummaryRow {
                    variant,
                    domain,
                    feature,
                    dim: cells[0].dim,
                    seeds: cells.len(),
                    map_mean,
                    map_std,
                    rank1_mean,
                    rank1_std,
                }
            })
            .collect()
    }

    /// Seed-mean mAP of one cell group.
    pub fn mean_map(&self, variant: Variant, domain: EvalDomain, feature: Feature) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|r| r.variant == variant && r.domain == domain && r.feature == feature)
            .map(|r| r.map_mean)
    }

    /// Per-seed mAP of one cell group, in seed order.
    pub fn per_seed(&self, variant: Variant, domain: EvalDomain, feature: Feature) -> Vec<(u64, f64)> {
        let mut v: Vec<(u64, f64)> = self
            .cells
            .iter()
            .filter(|c| c.variant == variant && c.domain == domain && c.feature == feature)
            .map(|c| (c.seed, c.map))
            .collect();
        v.sort_by_key(|p| p.0);
        v
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# ablation {}", self.kind.name());
        let _ = writeln!(
            s,
            "{:<16} {:<8} {:<10} {:>5} {:>5} {:>8} {:>7} {:>8} {:>7}",
            "variant", "domain", "feature", "dim", "seeds", "mAP", "std", "rank1", "std"
        );
        for r in self.summary() {
            let _ = writeln!(
                s,
                "{:<16} {:<8} {:<10} {:>5} {:>5} {:>8.4} {:>7.4} {:>8.4} {:>7.4}",
                r.variant.name(),
                r.domain.name(),
                r.feature.name(),
                r.dim,
                r.seeds,
                r.map_mean,
                r.map_std,
                r.rank1_mean,
                r.rank1_std
            );
        }
        s
    }

    /// One series per (variant, domain, method), x = dimension, y = mean mAP.
    pub fn plot_data(&self) -> PlotData {
        let mut series: BTreeMap<(String, &'static str, &'static str), Vec<(f64, f64)>> = BTreeMap::new();
        for r in self.summary() {
            series
                .entry((r.variant.name(), r.domain.name(), r.feature.method()))
                .or_default()
                .push((r.dim as f64, r.map_mean));
        }
        let mut plot = PlotData::default();
        for ((variant, domain, method), mut pts) in series {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            plot.push(&format!("{variant}/{domain}/{method}"), "dim", "mAP", pts);
        }
        plot
    }
}

/// Output sizes `D, D/2, …, D/max_divisor`.
pub fn reduction_dims(dim: usize, max_divisor: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut k = 1;
    while k <= max_divisor && dim / k >= 1 {
        v.push(dim / k);
        k *= 2;
    }
    v
}

pub fn pca_dim(cfg: &AblationConfig, dim: usize) -> usize {
    if cfg.pca_dim == 0 {
        (dim / 4).max(1)
    } else {
        cfg.pca_dim.min(dim)
    }
}

pub fn run_ablation(kind: AblationKind, cfg: &AblationConfig, cache: &mut RunCache) -> Result<AblationTable> {
    run_ablation_with(kind, cfg, cache, |_| {})
}

/// `run_ablation` with a callback after each finished seed.
pub fn run_ablation_with(
    kind: AblationKind,
    cfg: &AblationConfig,
    cache: &mut RunCache,
    mut progress: impl FnMut(&str),
) -> Result<AblationTable> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        match kind {
            AblationKind::Components => {
                let base = cache.get_or_train(cfg, Variant::Baseline, seed)?;
                cells.extend(score(base, Feature::Concat, cfg)?);
                let uni = cache.get_or_train(cfg, Variant::SelfEnsemble, seed)?;
                cells.extend(score(uni, Feature::Concat, cfg)?);
                let full = cache.get_or_train(cfg, Variant::Full, seed)?;
                cells.extend(score(full, Feature::Concat, cfg)?);
                cells.extend(score(full, Feature::Pca(pca_dim(cfg, full.dim())), cfg)?);
            }
            AblationKind::Depth => {
                for &d in &cfg.depths {
                    let variant = if d == cfg.train.ensemble.depth { Variant::Full } else { Variant::Depth(d) };
                    let run = cache.get_or_train(cfg, variant, seed)?;
                    cells.extend(score(run, Feature::Concat, cfg)?.into_iter().map(|c| Cell {
                        variant: Variant::Depth(d),
                        ..c
                    }));
                }
            }
            AblationKind::ReductionCurve => {
                let full = cache.get_or_train(cfg, Variant::Full, seed)?;
                for d in reduction_dims(full.dim(), cfg.max_divisor) {
                    if d == full.dim() {
                        cells.extend(score(full, Feature::Concat, cfg)?);
                    }
                    if d <= full.train.len() {
                        cells.extend(score(full, Feature::Pca(d), cfg)?);
                    }
                    cells.extend(score(full, Feature::Rp(d), cfg)?);
                    if d < full.dim() {
                        cells.extend(score(full, Feature::Ae(d), cfg)?);
                    }
                }
            }
            AblationKind::ConcatVsAverage => {
                let full = cache.get_or_train(cfg, Variant::Full, seed)?;
                cells.extend(score(full, Feature::Concat, cfg)?);
                cells.extend(score(full, Feature::Average, cfg)?);
            }
        }
        progress(&format!("{} seed {seed} done", kind.name()));
    }
    Ok(AblationTable { kind, cells })
}
