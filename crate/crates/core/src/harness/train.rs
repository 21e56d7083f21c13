use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{AugmentConfig, TrainConfig};
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::io::{Container, NamedTensor};
use crate::layers::Mode;
use crate::losses::{total_loss, TripletBatchLayout};
use crate::optim::Optimizer;
use crate::pattern::PatternSet;
use crate::reduce::{FeatureBank, RowLabel};
use crate::synth::{make_protocol, random_erase, Dataset};
use crate::tensor::Tensor;

const STREAM_SAMPLER: u64 = 1;

/// Dense class ids for the identities of `indices`, in ascending id order.
pub fn class_labels(dataset: &Dataset, indices: &[usize]) -> (Vec<usize>, BTreeMap<u32, usize>) {
    let ids: BTreeSet<u32> = indices.iter().map(|&i| dataset.manifest.records[i].identity).collect();
    let map: BTreeMap<u32, usize> = ids.into_iter().enumerate().map(|(c, id)| (id, c)).collect();
    let labels = indices.iter().map(|&i| map[&dataset.manifest.records[i].identity]).collect();
    (labels, map)
}

/// One epoch of `P x K` batches over positions `0..labels.len()`.
///
/// Each identity's samples are shuffled (topped up with repeats when it has
/// fewer than `K`) and cut into groups of `K`; batches then draw `P`
/// distinct identities that still have a group left. Leftovers are dropped.
pub fn identity_batches(labels: &[usize], layout: &TripletBatchLayout, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, &l) in labels.iter().enumerate() {
        by_id.entry(l).or_default().push(pos);
    }
    let mut groups: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for (id, mut pos) in by_id {
        while pos.len() < layout.k {
            let extra = *pos.choose(rng).expect("non-empty");
            pos.push(extra);
        }
        pos.shuffle(rng);
        let chunks: Vec<Vec<usize>> = pos.chunks_exact(layout.k).map(<[usize]>::to_vec).collect();
        groups.insert(id, chunks);
    }
    let mut available: Vec<usize> = groups.keys().copied().collect();
    let mut batches = Vec::new();
    while available.len() >= layout.p {
        let picked: Vec<usize> = available.choose_multiple(rng, layout.p).copied().collect();
        let mut batch = Vec::with_capacity(layout.batch_size());
        for id in &picked {
            let g = groups.get_mut(id).expect("known id");
            batch.extend(g.pop().expect("has a group"));
            if g.is_empty() {
                available.retain(|a| a != id);
            }
        }
        batches.push(batch);
    }
    batches
}

/// Stacks images into `[B, 3, H, W]`, applying flip and random erasing
/// when `augment` is given.
pub fn load_batch(
    dataset: &Dataset,
    indices: &[usize],
    augment: Option<(&AugmentConfig, &mut ChaCha8Rng)>,
) -> Result<Tensor<f32>> {
    let c = &dataset.manifest.config;
    let (h, w) = (c.height, c.width);
    let len = c.image_len();
    let mut data = Vec::with_capacity(indices.len() * len);
    let mut augment = augment;
    for &i in indices {
        let mut img = dataset.image(i).to_vec();
        if let Some((aug, rng)) = augment.as_mut() {
            if aug.flip && rng.random_bool(0.5) {
                for row in img.chunks_mut(w) {
                    row.reverse();
                }
            }
            if aug.random_erase > 0.0 {
                random_erase(&mut img, h, w, aug.random_erase, *rng);
            }
        }
        data.extend(img);
    }
    Tensor::new(&[indices.len(), 3, h, w], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub batches: usize,
    /// Mean over batches of the summed per-head objective.
    pub total: f64,
    pub ce: f64,
    pub triplet: f64,
    pub center: f64,
}

pub struct TrainOutcome {
    pub model: EnsembleModel<f32>,
    pub epochs: Vec<EpochLog>,
    pub classes: BTreeMap<u32, usize>,
}

fn check_shape(dataset: &Dataset, cfg: &TrainConfig) -> Result<()> {
    let d = &dataset.manifest.config;
    if (d.height, d.width) != (cfg.trunk.height, cfg.trunk.width) || cfg.trunk.in_channels != 3 {
        return Err(Error::Config(format!(
            "trunk expects {}x{}x{} images, dataset has 3x{}x{}",
            cfg.trunk.in_channels, cfg.trunk.height, cfg.trunk.width, d.height, d.width
        )));
    }
    Ok(())
}

/// Trains on the protocol's train split. Deterministic for a given dataset
/// and config.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, cfg, |_| {})
}

/// `train` with a callback after every epoch.
pub fn train_with(dataset: &Dataset, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_shape(dataset, cfg)?;
    let protocol = make_protocol(&dataset.manifest, cfg.protocol)?;
    if protocol.train.is_empty() {
        return Err(Error::Data("protocol has an empty train split".into()));
    }
    let (labels, classes) = class_labels(dataset, &protocol.train);
    if classes.len() < cfg.batch.p {
        return Err(Error::Config(format!(
            "{} training identities cannot fill P = {}",
            classes.len(),
            cfg.batch.p
        )));
    }
    let patterns = cfg.ensemble.pattern_set()?;
    let mut model = EnsembleModel::<f32>::build(&cfg.trunk, &patterns, classes.len(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_SAMPLER);
    let mut opt = Optimizer::new(cfg.optimizer.clone());
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        let batches = identity_batches(&labels, &cfg.batch, &mut rng);
        let mut log = EpochLog {
            epoch,
            lr,
            batches: batches.len(),
            total: 0.0,
            ce: 0.0,
            triplet: 0.0,
            center: 0.0,
        };
        for batch in &batches {
            let rows: Vec<usize> = batch.iter().map(|&p| protocol.train[p]).collect();
            let y: Vec<usize> = batch.iter().map(|&p| labels[p]).collect();
            let x = load_batch(dataset, &rows, Some((&cfg.augment, &mut rng)))?;
            let feats = model.forward_all(&x, Mode::Train)?;
            let (total, heads) = {
                let tables: Vec<_> = model.heads().iter().map(|h| (&h.classifier, &h.centroids)).collect();
                total_loss(&feats, &y, &tables, &cfg.loss, Some(&cfg.batch))?
            };
            for (k, h) in heads.iter().enumerate() {
                if let Some(term) = h.non_finite_term() {
                    return Err(Error::Numeric { epoch, head: k, term });
                }
            }
            if !total.is_finite() {
                return Err(Error::Numeric { epoch, head: 0, term: "total" });
            }
            log.total += total as f64;
            log.ce += heads.iter().map(|h| h.ce as f64).sum::<f64>();
            log.triplet += heads.iter().map(|h| h.triplet as f64).sum::<f64>();
            log.center += heads.iter().map(|h| h.center as f64).sum::<f64>();
            model.zero_grad();
            model.apply_loss(&heads)?;
            opt.step(lr, |f| model.visit(f));
        }
        let n = batches.len().max(1) as f64;
        log.total /= n;
        log.ce /= n;
        log.triplet /= n;
        log.center /= n;
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutcome {
        model,
        epochs: logs,
        classes,
    })
}

/// Eval-mode features of `indices` in the given order. Rows are the
/// concatenated head features; segments record each head's width.
pub fn extract(model: &mut EnsembleModel<f32>, dataset: &Dataset, indices: &[usize]) -> Result<FeatureBank> {
    let m = model.num_heads();
    let f = model.feature_dim();
    let mut data = Vec::with_capacity(indices.len() * m * f);
    for chunk in indices.chunks(64) {
        let x = load_batch(dataset, chunk, None)?;
        let feats = model.forward_all(&x, Mode::Eval)?;
        for row in 0..chunk.len() {
            for head in &feats {
                data.extend_from_slice(&head.data()[row * f..(row + 1) * f]);
            }
        }
    }
    let labels = indices
        .iter()
        .map(|&i| {
            let r = dataset.manifest.records[i];
            RowLabel {
                identity: r.identity,
                camera: r.camera,
                domain: r.domain,
                split: r.split,
            }
        })
        .collect();
    FeatureBank::new(m * f, data, labels, vec![f; m])
}

/// Container with the config echo in the header and every named tensor.
pub fn checkpoint(model: &mut EnsembleModel<f32>, cfg: &TrainConfig, epoch: usize) -> Container {
    let mut c = Container::new(json!({
        "kind": "ensemble",
        "trunk": model.config(),
        "patterns": model.patterns().to_strings(),
        "num_classes": model.num_classes(),
        "config": cfg,
        "config_hash": cfg.hash(),
        "epoch": epoch,
    }));
    for (name, t) in model.named_tensors() {
        c.push(NamedTensor::f32(&name, t.shape(), t.data().to_vec()));
    }
    c
}

/// Rebuilds the model from a checkpoint container, checking that names and
/// shapes match the recorded architecture exactly.
pub fn restore(c: &Container) -> Result<(EnsembleModel<f32>, TrainConfig)> {
    c.expect_kind("ensemble")?;
    let field = |k: &str| {
        c.header
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("checkpoint header lacks `{k}`")))
    };
    let trunk = serde_json::from_value(field("trunk")?).map_err(|e| Error::Validation(e.to_string()))?;
    let patterns: Vec<String> = serde_json::from_value(field("patterns")?).map_err(|e| Error::Validation(e.to_string()))?;
    let num_classes: usize = serde_json::from_value(field("num_classes")?).map_err(|e| Error::Validation(e.to_string()))?;
    let cfg: TrainConfig = serde_json::from_value(field("config")?).map_err(|e| Error::Validation(e.to_string()))?;
    let patterns = PatternSet::parse_list(&patterns).map_err(|e| Error::Validation(e.to_string()))?;
    let mut model = EnsembleModel::<f32>::build(&trunk, &patterns, num_classes, 0)
        .map_err(|e| Error::Validation(e.to_string()))?;
    let stored: BTreeMap<&str, &NamedTensor> = c.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut seen = 0usize;
    let mut failure = None;
    model.visit(&mut |name, t| {
        if failure.is_some() {
            return;
        }
        match stored.get(name) {
            Some(s) if s.shape == t.shape() => match s.as_f32() {
                Ok(v) => {
                    t.data_mut().copy_from_slice(v);
                    seen += 1;
                }
                Err(e) => failure = Some(e),
            },
            Some(s) => {
                failure = Some(Error::Validation(format!(
                    "tensor `{name}` has shape {:?}, architecture expects {:?}",
                    s.shape,
                    t.shape()
                )))
            }
            None => failure = Some(Error::Validation(format!("checkpoint lacks tensor `{name}`"))),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if seen != stored.len() {
        return Err(Error::Validation(format!(
            "checkpoint has {} tensors, architecture uses {seen}",
            stored.len()
        )));
    }
    Ok((model, cfg))
}
