use std::fs;
use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{load_container, save_container, Container, NamedTensor};
use crate::reduce::{AutoEncoder, FeatureBank, PcaModel, RandomProjector, ReconstructionLoss};
use crate::synth::{camera_specs, domain_styles, identity_specs, Dataset, DatasetManifest};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const IMAGES_FILE: &str = "images.d2ck";

/// Writes `manifest.txt` and `images.d2ck` into `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), dataset.manifest.to_text())?;
    let c = &dataset.manifest.config;
    let mut container = Container::new(json!({
        "kind": "dataset",
        "generator": dataset.manifest.generator_version,
        "images": dataset.manifest.records.len(),
    }));
    container.push(NamedTensor::f32(
        "images",
        &[dataset.manifest.records.len(), 3, c.height, c.width],
        dataset.images.clone(),
    ));
    save_container(&dir.join(IMAGES_FILE), &container)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest = DatasetManifest::from_text(&text)?;
    manifest.config.validate().map_err(|e| Error::Data(e.to_string()))?;
    let container = load_container(&dir.join(IMAGES_FILE))?;
    container.expect_kind("dataset").map_err(|e| Error::Data(e.to_string()))?;
    let images = container.get("images").map_err(|e| Error::Data(e.to_string()))?;
    let c = &manifest.config;
    if images.shape != [manifest.records.len(), 3, c.height, c.width] {
        return Err(Error::Data(format!(
            "image block {:?} does not match the manifest",
            images.shape
        )));
    }
    Ok(Dataset {
        identities: identity_specs(c),
        styles: domain_styles(c),
        cameras: camera_specs(c),
        images: images.as_f32()?.to_vec(),
        manifest,
    })
}

/// A fitted reduction.
#[derive(Clone, Debug)]
pub enum Reducer {
    Pca(PcaModel),
    Projection(RandomProjector),
    AutoEncoder(AutoEncoder),
}

impl Reducer {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pca(_) => "pca",
            Self::Projection(_) => "rp",
            Self::AutoEncoder(_) => "ae",
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Pca(m) => m.output_dim(),
            Self::Projection(p) => p.output_dim(),
            Self::AutoEncoder(a) => a.code_dim(),
        }
    }

    pub fn apply(&self, bank: &FeatureBank) -> Result<FeatureBank> {
        match self {
            Self::Pca(m) => m.transform(bank),
            Self::Projection(p) => p.project(bank),
            Self::AutoEncoder(a) => a.transform(bank),
        }
    }

    pub fn to_container(&self) -> Container {
        match self {
            Self::Pca(m) => {
                let mut c = Container::new(json!({
                    "kind": "reducer",
                    "method": "pca",
                    "total_variance": m.total_variance(),
                }));
                c.push(NamedTensor::f64("mean", &[m.input_dim()], m.mean().to_vec()));
                c.push(NamedTensor::f64("components", &[m.output_dim(), m.input_dim()], m.components().to_vec()));
                c.push(NamedTensor::f64("eigenvalues", &[m.output_dim()], m.eigenvalues().to_vec()));
                c
            }
            Self::Projection(p) => {
                let mut c = Container::new(json!({
                    "kind": "reducer",
                    "method": "rp",
                    "seed": p.seed(),
                    "scale": p.scale(),
                }));
                c.push(NamedTensor::f32("matrix", &[p.input_dim(), p.output_dim()], p.matrix().to_vec()));
                c
            }
            Self::AutoEncoder(a) => {
                let mut c = Container::new(json!({
                    "kind": "reducer",
                    "method": "ae",
                    "loss": a.loss_kind(),
                    "loss_history": a.loss_history(),
                }));
                c.push(NamedTensor::f32("mean", &[a.input_dim()], a.mean().to_vec()));
                c.push(NamedTensor::f32("std", &[a.input_dim()], a.std().to_vec()));
                for (name, t) in a.named_tensors() {
                    c.push(NamedTensor::f32(&name, t.shape(), t.data().to_vec()));
                }
                c
            }
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("reducer")?;
        let method = c.header.get("method").and_then(|v| v.as_str()).unwrap_or("");
        let bad = |what: &str| Error::Validation(format!("reducer header lacks {what}"));
        match method {
            "pca" => {
                let total = c.header.get("total_variance").and_then(|v| v.as_f64()).ok_or_else(|| bad("total_variance"))?;
                Ok(Self::Pca(PcaModel::from_parts(
                    c.get("mean")?.as_f64()?.to_vec(),
                    c.get("components")?.as_f64()?.to_vec(),
                    c.get("eigenvalues")?.as_f64()?.to_vec(),
                    total,
                )?))
            }
            "rp" => {
                let m = c.get("matrix")?;
                if m.shape.len() != 2 {
                    return Err(Error::Validation("projection matrix must be 2-D".into()));
                }
                let seed = c.header.get("seed").and_then(|v| v.as_u64()).ok_or_else(|| bad("seed"))?;
                let scale = c.header.get("scale").and_then(|v| v.as_f64()).ok_or_else(|| bad("scale"))?;
                Ok(Self::Projection(RandomProjector::from_parts(
                    m.shape[0],
                    m.shape[1],
                    seed,
                    m.as_f32()?.to_vec(),
                    scale as f32,
                )?))
            }
            "ae" => {
                let loss: ReconstructionLoss = serde_json::from_value(c.header.get("loss").cloned().ok_or_else(|| bad("loss"))?)?;
                let history: Vec<f64> = serde_json::from_value(c.header.get("loss_history").cloned().unwrap_or_default())
                    .unwrap_or_default();
                let tensors: Vec<_> = c
                    .tensors
                    .iter()
                    .filter(|t| t.name.starts_with("encoder.") || t.name.starts_with("decoder."))
                    .map(|t| Ok((t.name.clone(), crate::tensor::Tensor::new(&t.shape, t.as_f32()?.to_vec())?)))
                    .collect::<Result<_>>()?;
                Ok(Self::AutoEncoder(AutoEncoder::from_parts(
                    c.get("mean")?.as_f32()?.to_vec(),
                    c.get("std")?.as_f32()?.to_vec(),
                    loss,
                    &tensors,
                    history,
                )?))
            }
            other => Err(Error::Validation(format!("unknown reducer method `{other}`"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_container(path, &self.to_container())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&load_container(path)?)
    }
}
