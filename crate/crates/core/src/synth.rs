//! Seeded multi-domain, multi-camera person-retrieval toy data.
//!
//! An image is rendered in two stages: identity content (a coloured figure
//! placed and noised by the camera) and then the domain style (gamma,
//! per-channel gain/bias, additive texture, blur). The stages are separate
//! public functions so style can be swapped on fixed content.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduce::Split;

pub const GENERATOR_VERSION: u32 = 1;

// Stream ids for the non-record substreams.
const STREAM_IDENTITY: u64 = u64::MAX;
const STREAM_DOMAIN: u64 = u64::MAX - 1;
const STREAM_CAMERA: u64 = u64::MAX - 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_identities: usize,
    /// Identities `0..train_identities` are training ids in every domain.
    pub train_identities: usize,
    pub num_domains: usize,
    pub num_cameras: usize,
    /// Images per (identity, domain, camera).
    pub images_per: usize,
    pub height: usize,
    pub width: usize,
    /// Std of per-image colour jitter around the identity template.
    pub appearance_jitter: f64,
    /// Scale of the domain style gap; 0 disables styles.
    pub style_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_identities: 50,
            train_identities: 30,
            num_domains: 4,
            num_cameras: 2,
            images_per: 4,
            height: 64,
            width: 32,
            appearance_jitter: 0.04,
            style_strength: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_identities < 2 {
            return Err(Error::Config("need at least two training identities".into()));
        }
        if self.train_identities >= self.num_identities {
            return Err(Error::Config(format!(
                "{} identities leave none for testing after {} training ids",
                self.num_identities, self.train_identities
            )));
        }
        if self.num_domains == 0 || self.num_domains > 64 {
            return Err(Error::Config(format!("domain count {} outside 1..=64", self.num_domains)));
        }
        if self.num_cameras < 2 {
            return Err(Error::Config("cross-camera queries need at least two cameras".into()));
        }
        if self.images_per < 2 {
            return Err(Error::Config("need at least two images per identity, domain and camera".into()));
        }
        if self.height < 8 || self.width < 4 {
            return Err(Error::Config(format!("image {}x{} too small", self.height, self.width)));
        }
        if !(self.appearance_jitter >= 0.0 && self.style_strength >= 0.0) {
            return Err(Error::Config("jitter and style strength must be non-negative".into()));
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn num_images(&self) -> usize {
        self.num_identities * self.num_domains * self.num_cameras * self.images_per
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub id: u32,
    pub head: [f64; 3],
    pub torso: [f64; 3],
    pub legs: [f64; 3],
    /// Secondary torso colour used by the stripe pattern.
    pub stripe: [f64; 3],
    /// Stripe period in rows; 0 means a plain torso.
    pub stripe_period: u32,
    pub torso_width: f64,
    pub leg_width: f64,
    pub torso_end: f64,
    pub head_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub domain: u32,
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    pub gamma: f64,
    pub texture_seed: u64,
    pub texture_amplitude: f64,
    pub blur_radius: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub camera: u32,
    /// Max horizontal shift as a fraction of the width.
    pub shift_jitter: f64,
    pub noise_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Row of the image tensor.
    pub offset: usize,
    pub identity: u32,
    pub camera: u32,
    pub domain: u32,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub config: SynthConfig,
    pub generator_version: u32,
    pub records: Vec<ImageRecord>,
}

/// Manifest plus the `N x 3 x H x W` image block.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub identities: Vec<IdentitySpec>,
    pub styles: Vec<DomainStyle>,
    pub cameras: Vec<CameraSpec>,
    pub images: Vec<f32>,
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn identity_specs(cfg: &SynthConfig) -> Vec<IdentitySpec> {
    let mut rng = substream(cfg.seed, STREAM_IDENTITY);
    (0..cfg.num_identities as u32)
        .map(|id| IdentitySpec {
            id,
            head: color(&mut rng),
            torso: color(&mut rng),
            legs: color(&mut rng),
            stripe: color(&mut rng),
            stripe_period: if rng.random_bool(0.5) { rng.random_range(2..5) } else { 0 },
            torso_width: rng.random_range(0.35..0.6),
            leg_width: rng.random_range(0.25..0.45),
            torso_end: rng.random_range(0.5..0.62),
            head_radius: rng.random_range(0.07..0.11),
        })
        .collect()
}

/// Domain `k`'s bias sits at angle `2πk/n` on a circle in colour space, so
/// the channel means of different domains stay apart whatever the draw.
pub fn domain_styles(cfg: &SynthConfig) -> Vec<DomainStyle> {
    let mut rng = substream(cfg.seed, STREAM_DOMAIN);
    let n = cfg.num_domains.max(1) as f64;
    let s = cfg.style_strength;
    (0..cfg.num_domains as u32)
        .map(|domain| {
            let angle = 2.0 * std::f64::consts::PI * domain as f64 / n + rng.random_range(-0.2..0.2);
            let mut gain = [1.0; 3];
            let mut bias = [0.0; 3];
            for c in 0..3 {
                let phase = angle + c as f64 * 2.0 * std::f64::consts::PI / 3.0;
                bias[c] = s * 0.5 * phase.cos();
                gain[c] = (1.0 + s * rng.random_range(-0.4..0.4)).max(0.05);
            }
            DomainStyle {
                domain,
                gain,
                bias,
                gamma: (1.0 + s * rng.random_range(-0.3..0.3)).max(0.1),
                texture_seed: rng.random(),
                texture_amplitude: s * rng.random_range(0.02..0.08),
                blur_radius: if s > 0.0 { rng.random_range(0..2) } else { 0 },
            }
        })
        .collect()
}

pub fn camera_specs(cfg: &SynthConfig) -> Vec<CameraSpec> {
    let mut rng = substream(cfg.seed, STREAM_CAMERA);
    (0..cfg.num_cameras as u32)
        .map(|camera| CameraSpec {
            camera,
            shift_jitter: rng.random_range(0.03..0.12),
            noise_sigma: rng.random_range(0.01..0.04),
        })
        .collect()
}

/// Pre-style image of one record, values nominally in `[0, 1]`.
pub fn render_content(
    cfg: &SynthConfig,
    identity: &IdentitySpec,
    camera: &CameraSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let (hf, wf) = (h as f64, w as f64);
    let jitter = Normal::new(0.0, cfg.appearance_jitter.max(1e-12)).expect("finite std");
    let tint = |c: [f64; 3], rng: &mut ChaCha8Rng| c.map(|v| v + jitter.sample(rng));
    let head = tint(identity.head, rng);
    let torso = tint(identity.torso, rng);
    let stripe = tint(identity.stripe, rng);
    let legs = tint(identity.legs, rng);
    let background = 0.45 + rng.random_range(-0.05..0.05);
    let cx = wf / 2.0 + rng.random_range(-1.0..=1.0) * camera.shift_jitter * wf;
    let dy = rng.random_range(-0.03..=0.03) * hf;
    let head_cy = 0.12 * hf + dy;
    let head_r = identity.head_radius * hf;
    let torso_top = head_cy + head_r;
    let torso_end = identity.torso_end * hf + dy;
    let legs_end = 0.95 * hf + dy;
    let noise = Normal::new(0.0, camera.noise_sigma.max(1e-12)).expect("finite std");

    let mut img = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let ddx = px - cx;
            let rgb = if (ddx * ddx + (py - head_cy).powi(2)).sqrt() <= head_r {
                head
            } else if py >= torso_top && py < torso_end && ddx.abs() <= identity.torso_width * wf / 2.0 {
                let period = identity.stripe_period as usize;
                if period > 0 && ((py - torso_top) as usize / period) % 2 == 1 {
                    stripe
                } else {
                    torso
                }
            } else if py >= torso_end
                && py < legs_end
                && ddx.abs() <= identity.leg_width * wf / 2.0
                && ddx.abs() >= 0.04 * wf
            {
                legs
            } else {
                [background; 3]
            };
            for c in 0..3 {
                img[(c * h + y) * w + x] = (rgb[c] + noise.sample(rng)) as f32;
            }
        }
    }
    img
}

fn box_blur(img: &mut [f32], h: usize, w: usize, r: usize) {
    if r == 0 {
        return;
    }
    for plane in img.chunks_mut(h * w) {
        let src = plane.to_vec();
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut n) = (0.0, 0.0);
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                        s += src[yy * w + xx];
                        n += 1.0;
                    }
                }
                plane[y * w + x] = s / n;
            }
        }
    }
}

/// Applies a domain style in place: gamma on clamped content, per-channel
/// affine, the domain texture, then blur.
pub fn apply_style(style: &DomainStyle, img: &mut [f32], h: usize, w: usize) {
    let mut trng = ChaCha8Rng::seed_from_u64(style.texture_seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                trng.random_range(0.5..3.0),
                trng.random_range(0.5..3.0),
                trng.random_range(0.0..std::f64::consts::TAU),
                trng.random_range(-1.0..1.0),
            )
        })
        .collect();
    for c in 0..3 {
        let (fy, fx, phase, sign) = waves[c];
        for y in 0..h {
            for x in 0..w {
                let i = (c * h + y) * w + x;
                let v = (img[i] as f64).clamp(0.0, 1.0).powf(style.gamma);
                let tex = style.texture_amplitude
                    * sign.signum()
                    * (std::f64::consts::TAU * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64) + phase).sin();
                img[i] = (style.gain[c] * v + style.bias[c] + tex) as f32;
            }
        }
    }
    box_blur(img, h, w, style.blur_radius);
}

/// Records in (domain, identity, camera, image) order. Test identities use
/// image 0 of every camera as a query and the rest as gallery.
fn records(cfg: &SynthConfig) -> Vec<ImageRecord> {
    let mut out = Vec::with_capacity(cfg.num_images());
    for domain in 0..cfg.num_domains as u32 {
        for identity in 0..cfg.num_identities as u32 {
            for camera in 0..cfg.num_cameras as u32 {
                for k in 0..cfg.images_per {
                    let split = if (identity as usize) < cfg.train_identities {
                        Split::Train
                    } else if k == 0 {
                        Split::Query
                    } else {
                        Split::Gallery
                    };
                    out.push(ImageRecord {
                        offset: out.len(),
                        identity,
                        camera,
                        domain,
                        split,
                    });
                }
            }
        }
    }
    out
}

/// Renders record `r` on its own substream.
pub fn render_record(
    cfg: &SynthConfig,
    record: &ImageRecord,
    identities: &[IdentitySpec],
    styles: &[DomainStyle],
    cameras: &[CameraSpec],
) -> Vec<f32> {
    let mut rng = substream(cfg.seed, record.offset as u64);
    let mut img = render_content(
        cfg,
        &identities[record.identity as usize],
        &cameras[record.camera as usize],
        &mut rng,
    );
    apply_style(&styles[record.domain as usize], &mut img, cfg.height, cfg.width);
    img
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let identities = identity_specs(cfg);
    let styles = domain_styles(cfg);
    let cameras = camera_specs(cfg);
    let records = records(cfg);
    let mut images = Vec::with_capacity(records.len() * cfg.image_len());
    for r in &records {
        images.extend(render_record(cfg, r, &identities, &styles, &cameras));
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            config: cfg.clone(),
            generator_version: GENERATOR_VERSION,
            records,
        },
        identities,
        styles,
        cameras,
        images,
    })
}

impl Dataset {
    pub fn image(&self, offset: usize) -> &[f32] {
        let len = self.manifest.config.image_len();
        &self.images[offset * len..(offset + 1) * len]
    }
}

/// Written as `single:D` or `loo:D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolMode {
    SingleDomain(u32),
    LeaveOneOut(u32),
}

impl std::fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::SingleDomain(d) => write!(f, "single:{d}"),
            Self::LeaveOneOut(d) => write!(f, "loo:{d}"),
        }
    }
}

impl FromStr for ProtocolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, domain) = s
            .split_once(':')
            .ok_or_else(|| Error::Argument(format!("protocol `{s}` is not `single:D` or `loo:D`")))?;
        let domain: u32 = domain
            .parse()
            .map_err(|_| Error::Argument(format!("bad domain in protocol `{s}`")))?;
        match kind {
            "single" => Ok(Self::SingleDomain(domain)),
            "loo" => Ok(Self::LeaveOneOut(domain)),
            _ => Err(Error::Argument(format!("unknown protocol kind `{kind}`"))),
        }
    }
}

impl Serialize for ProtocolMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ProtocolMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ProtocolMode {
    pub fn domain(self) -> u32 {
        match self {
            Self::SingleDomain(d) | Self::LeaveOneOut(d) => d,
        }
    }
}

/// Manifest row indices per role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Protocol {
    pub mode: ProtocolMode,
    pub train: Vec<usize>,
    pub query: Vec<usize>,
    pub gallery: Vec<usize>,
}

pub fn make_protocol(manifest: &DatasetManifest, mode: ProtocolMode) -> Result<Protocol> {
    let target = mode.domain();
    if target as usize >= manifest.config.num_domains {
        return Err(Error::Argument(format!(
            "domain {target} not in 0..{}",
            manifest.config.num_domains
        )));
    }
    if matches!(mode, ProtocolMode::LeaveOneOut(_)) && manifest.config.num_domains < 2 {
        return Err(Error::Argument("leave-one-out needs two or more domains".into()));
    }
    let mut p = Protocol {
        mode,
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
    };
    for r in &manifest.records {
        let in_target = r.domain == target;
        match (r.split, mode) {
            (Split::Train, ProtocolMode::SingleDomain(_)) if in_target => p.train.push(r.offset),
            (Split::Train, ProtocolMode::LeaveOneOut(_)) if !in_target => p.train.push(r.offset),
            (Split::Query, _) if in_target => p.query.push(r.offset),
            (Split::Gallery, _) if in_target => p.gallery.push(r.offset),
            _ => {}
        }
    }
    Ok(p)
}

impl DatasetManifest {
    /// Line format: a `d2fel-manifest` header, `key value` lines for the
    /// generator settings, then one `record offset identity camera domain split`
    /// line per image.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::from("d2fel-manifest 1\n");
        let _ = writeln!(out, "generator {}", self.generator_version);
        for (k, v) in [
            ("seed", c.seed.to_string()),
            ("num_identities", c.num_identities.to_string()),
            ("train_identities", c.train_identities.to_string()),
            ("num_domains", c.num_domains.to_string()),
            ("num_cameras", c.num_cameras.to_string()),
            ("images_per", c.images_per.to_string()),
            ("height", c.height.to_string()),
            ("width", c.width.to_string()),
            ("appearance_jitter", format!("{:?}", c.appearance_jitter)),
            ("style_strength", format!("{:?}", c.style_strength)),
        ] {
            let _ = writeln!(out, "{k} {v}");
        }
        for r in &self.records {
            let _ = writeln!(
                out,
                "record {} {} {} {} {}",
                r.offset,
                r.identity,
                r.camera,
                r.domain,
                r.split.name()
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Data(format!("manifest line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "d2fel-manifest 1")) => {}
            _ => return Err(Error::Data("missing manifest header".into())),
        }
        let mut config = SynthConfig::default();
        let mut generator_version = None;
        let mut records = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<u64> {
                fields
                    .get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(i, "expected an unsigned integer"))
            };
            let float = |k: usize| -> Result<f64> {
                fields
                    .get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(i, "expected a number"))
            };
            match fields.first().copied() {
                None => continue,
                Some("record") => {
                    if fields.len() != 6 {
                        return Err(bad(i, "record needs five fields"));
                    }
                    let offset = num(1)? as usize;
                    if offset != records.len() {
                        return Err(bad(i, "records out of order"));
                    }
                    records.push(ImageRecord {
                        offset,
                        identity: num(2)? as u32,
                        camera: num(3)? as u32,
                        domain: num(4)? as u32,
                        split: fields[5].parse().map_err(|_| bad(i, "unknown split"))?,
                    });
                }
                Some("generator") => generator_version = Some(num(1)? as u32),
                Some("seed") => config.seed = num(1)?,
                Some("num_identities") => config.num_identities = num(1)? as usize,
                Some("train_identities") => config.train_identities = num(1)? as usize,
                Some("num_domains") => config.num_domains = num(1)? as usize,
                Some("num_cameras") => config.num_cameras = num(1)? as usize,
                Some("images_per") => config.images_per = num(1)? as usize,
                Some("height") => config.height = num(1)? as usize,
                Some("width") => config.width = num(1)? as usize,
                Some("appearance_jitter") => config.appearance_jitter = float(1)?,
                Some("style_strength") => config.style_strength = float(1)?,
                Some(k) => return Err(bad(i, &format!("unknown key `{k}`"))),
            }
        }
        let generator_version = generator_version.ok_or_else(|| Error::Data("manifest lacks generator version".into()))?;
        if records.len() != config.num_images() {
            return Err(Error::Data(format!(
                "manifest lists {} records, settings imply {}",
                records.len(),
                config.num_images()
            )));
        }
        Ok(Self {
            config,
            generator_version,
            records,
        })
    }
}

/// Overwrites one random rectangle with uniform noise with probability `p`.
pub fn random_erase(img: &mut [f32], h: usize, w: usize, p: f64, rng: &mut impl Rng) {
    if !rng.random_bool(p.clamp(0.0, 1.0)) {
        return;
    }
    let area = (h * w) as f64;
    for _ in 0..10 {
        let target = area * rng.random_range(0.02..0.4);
        let aspect: f64 = rng.random_range(0.3..3.3);
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh >= h || ew >= w {
            continue;
        }
        let y0 = rng.random_range(0..=h - eh);
        let x0 = rng.random_range(0..=w - ew);
        for plane in img.chunks_mut(h * w) {
            for y in y0..y0 + eh {
                for x in x0..x0 + ew {
                    plane[y * w + x] = rng.random();
                }
            }
        }
        return;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> SynthConfig {
        SynthConfig {
            num_identities: 12,
            train_identities: 7,
            num_domains: 3,
            num_cameras: 2,
            images_per: 2,
            height: 16,
            width: 8,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn record_count() {
        let cfg = SynthConfig {
            num_identities: 50,
            train_identities: 30,
            num_domains: 4,
            num_cameras: 2,
            images_per: 4,
            ..Default::default()
        };
        assert_eq!(records(&cfg).len(), 1600);
    }

    #[test]
    fn deterministic_generation() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.manifest.to_text(), b.manifest.to_text());
        let c = generate_dataset(&SynthConfig { seed: 6, ..small() }).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn manifest_text_round_trip() {
        let d = generate_dataset(&small()).unwrap();
        let back = DatasetManifest::from_text(&d.manifest.to_text()).unwrap();
        assert_eq!(back, d.manifest);
        assert!(DatasetManifest::from_text("d2fel-manifest 1\ngenerator 1\nbogus 3\n").is_err());
    }

    #[test]
    fn protocols_keep_identities_apart() {
        let d = generate_dataset(&small()).unwrap();
        let m = &d.manifest;
        let loo = make_protocol(m, ProtocolMode::LeaveOneOut(2)).unwrap();
        assert!(loo.train.iter().all(|&i| m.records[i].domain != 2 && m.records[i].split == Split::Train));
        assert!(loo.query.iter().chain(&loo.gallery).all(|&i| m.records[i].domain == 2));
        let single = make_protocol(m, ProtocolMode::SingleDomain(1)).unwrap();
        let train_ids: HashSet<u32> = single.train.iter().map(|&i| m.records[i].identity).collect();
        let test_ids: HashSet<u32> = single.query.iter().chain(&single.gallery).map(|&i| m.records[i].identity).collect();
        assert!(train_ids.is_disjoint(&test_ids));
        for &q in &single.query {
            let qr = m.records[q];
            assert!(single
                .gallery
                .iter()
                .any(|&g| m.records[g].identity == qr.identity && m.records[g].camera != qr.camera));
        }
        assert!(make_protocol(m, ProtocolMode::SingleDomain(3)).is_err());
    }

    #[test]
    fn infeasible_configs() {
        assert!(matches!(
            generate_dataset(&SynthConfig { train_identities: 12, ..small() }),
            Err(Error::Config(_))
        ));
        assert!(generate_dataset(&SynthConfig { images_per: 1, ..small() }).is_err());
        assert!(generate_dataset(&SynthConfig { num_cameras: 1, ..small() }).is_err());
    }

    #[test]
    fn random_erase_touches_a_rectangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut img = vec![-1.0f32; 3 * 16 * 8];
        random_erase(&mut img, 16, 8, 1.0, &mut rng);
        let changed = img.iter().filter(|&&v| v != -1.0).count();
        assert!(changed > 0 && changed % 3 == 0);
        let mut untouched = vec![-1.0f32; 3 * 16 * 8];
        random_erase(&mut untouched, 16, 8, 0.0, &mut rng);
        assert!(untouched.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn protocol_mode_strings() {
        assert_eq!("loo:3".parse::<ProtocolMode>().unwrap(), ProtocolMode::LeaveOneOut(3));
        assert_eq!(ProtocolMode::SingleDomain(1).to_string(), "single:1");
        assert!("cross:1".parse::<ProtocolMode>().is_err());
    }
}
