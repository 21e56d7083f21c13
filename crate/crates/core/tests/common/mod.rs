//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use d2fel::reduce::{FeatureBank, RowLabel, Split};
use rand::Rng;

/// Sample covariance (divisor `n - 1`) of row-major `rows`.
pub fn covariance(rows: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for r in rows.chunks(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let mut c = vec![0.0; d * d];
    for r in rows.chunks(d) {
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    c.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    c
}

/// Cyclic Jacobi rotations on a symmetric matrix. Eigenvalues come back
/// descending with eigenvectors as rows.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| (a[j * n + j], (0..n).map(|k| v[k * n + j]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs.into_iter().unzip()
}

/// Textbook mAP and CMC. Gallery rows are ordered by distance with ties
/// broken by index; rows sharing identity and camera with the query are
/// dropped; queries without any remaining positive are skipped.
pub fn retrieval_oracle(query: &FeatureBank, gallery: &FeatureBank) -> Option<(f64, Vec<f64>)> {
    let ng = gallery.len();
    let mut aps = Vec::new();
    let mut first_hits = Vec::new();
    for (qi, ql) in query.labels().iter().enumerate() {
        let q = query.row(qi);
        let mut scored: Vec<(f64, usize)> = (0..ng)
            .map(|j| {
                let d: f64 = q
                    .iter()
                    .zip(gallery.row(j))
                    .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                    .sum();
                (d, j)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let kept: Vec<bool> = scored
            .iter()
            .filter(|&&(_, j)| {
                let g = &gallery.labels()[j];
                !(g.identity == ql.identity && g.camera == ql.camera)
            })
            .map(|&(_, j)| gallery.labels()[j].identity == ql.identity)
            .collect();
        let positives = kept.iter().filter(|&&m| m).count();
        if positives == 0 {
            continue;
        }
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (k, &m) in kept.iter().enumerate() {
            if m {
                hits += 1;
                precision_sum += hits as f64 / (k + 1) as f64;
            }
        }
        aps.push(precision_sum / hits as f64);
        first_hits.push(kept.iter().position(|&m| m).unwrap());
    }
    if aps.is_empty() {
        return None;
    }
    let n = aps.len();
    let map = aps.iter().sum::<f64>() / n as f64;
    let cmc = (0..ng)
        .map(|r| first_hits.iter().filter(|&&h| h <= r).count() as f64 / n as f64)
        .collect();
    Some((map, cmc))
}

/// Bank of random rows; `integer` features make exact distance ties likely.
pub fn random_bank(
    rng: &mut impl Rng,
    rows: usize,
    dim: usize,
    identities: u32,
    cameras: u32,
    integer: bool,
    split: Split,
) -> FeatureBank {
    let data: Vec<f32> = (0..rows * dim)
        .map(|_| {
            if integer {
                rng.random_range(0..3) as f32
            } else {
                rng.random_range(-1.0f32..1.0)
            }
        })
        .collect();
    let labels = (0..rows)
        .map(|_| RowLabel {
            identity: rng.random_range(0..identities),
            camera: rng.random_range(0..cameras),
            domain: 0,
            split,
        })
        .collect();
    FeatureBank::new(dim, data, labels, vec![dim]).unwrap()
}

/// Small dataset and trunk that train in well under a second per epoch.
pub fn tiny(seed: u64) -> (d2fel::synth::SynthConfig, d2fel::harness::TrainConfig) {
    use d2fel::ensemble::TrunkConfig;
    use d2fel::harness::TrainConfig;
    use d2fel::losses::TripletBatchLayout;
    use d2fel::synth::{ProtocolMode, SynthConfig};

    let data = SynthConfig {
        num_identities: 14,
        train_identities: 10,
        num_domains: 3,
        num_cameras: 2,
        images_per: 2,
        height: 16,
        width: 8,
        seed,
        ..Default::default()
    };
    let mut cfg = TrainConfig {
        seed,
        epochs: 2,
        protocol: ProtocolMode::LeaveOneOut(2),
        batch: TripletBatchLayout { p: 4, k: 4 },
        trunk: TrunkConfig {
            height: 16,
            width: 8,
            stem_channels: 8,
            stem_stride: 1,
            stage_widths: vec![8, 16],
            stage_blocks: vec![1, 2],
            stage_strides: vec![1, 2],
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.ensemble.depth = 2;
    cfg.schedule.warmup_epochs = 1;
    cfg.schedule.lr_start = 0.01;
    cfg.schedule.lr_base = 0.03;
    cfg.schedule.milestones = vec![];
    cfg.loss.triplet_margin = 0.3;
    (data, cfg)
}

/// Drives the built binary.
pub mod cli {
    use std::path::Path;
    use std::process::{Command, Output};

    const BIN: &str = env!("CARGO_BIN_EXE_d2fel");

    pub fn run(dir: &Path, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .arg("--out-dir")
            .arg(dir)
            .arg("--threads")
            .arg("1")
            .output()
            .unwrap()
    }

    pub fn ok(dir: &Path, args: &[&str]) -> Output {
        let out = run(dir, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    const DATA_TOML: &str = "num_identities = 14\ntrain_identities = 10\nnum_domains = 3\nnum_cameras = 2\nimages_per = 2\nheight = 16\nwidth = 8\n";

    pub fn write_configs(dir: &Path) -> (String, String) {
        let data = dir.join("data.toml");
        std::fs::write(&data, DATA_TOML).unwrap();
        let (_, cfg) = super::tiny(0);
        let train = dir.join("train.toml");
        std::fs::write(&train, cfg.to_toml().unwrap()).unwrap();
        (data.display().to_string(), train.display().to_string())
    }

    /// gen-data, train, extract, reduce-fit, reduce-apply and eval in `dir`.
    pub fn pipeline(dir: &Path) -> (String, Vec<u8>) {
        let (data_cfg, train_cfg) = write_configs(dir);
        let data = dir.join("data");
        let d = data.to_str().unwrap();
        ok(&data, &["gen-data", "--config", &data_cfg, "--seed", "7"]);
        ok(dir, &["train", "--config", &train_cfg, "--seed", "7", "--data", d]);
        let ck = dir.join("checkpoint.d2ck");
        let ck = ck.to_str().unwrap();
        for split in ["train", "query", "gallery"] {
            ok(dir, &["extract", "--checkpoint", ck, "--data", d, "--split", split]);
        }
        let bank = |n: &str| dir.join(n).display().to_string();
        ok(dir, &["reduce-fit", "--bank", &bank("train.d2fb"), "--method", "pca", "--dim", "8"]);
        for s in ["query", "gallery"] {
            ok(
                dir,
                &["reduce-apply", "--reducer", &bank("reducer.d2ck"), "--bank", &bank(&format!("{s}.d2fb")), "--name", &format!("{s}-pca.d2fb")],
            );
        }
        let out = ok(dir, &["eval", "--query", &bank("query-pca.d2fb"), "--gallery", &bank("gallery-pca.d2fb")]);
        let mut banks = Vec::new();
        for f in ["train.d2fb", "query.d2fb", "gallery.d2fb", "query-pca.d2fb", "gallery-pca.d2fb"] {
            banks.extend(std::fs::read(dir.join(f)).unwrap());
        }
        (String::from_utf8(out.stdout).unwrap(), banks)
    }
}
