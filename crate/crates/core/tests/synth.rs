use std::collections::BTreeSet;

use d2fel::reduce::Split;
use d2fel::synth::{generate_dataset, make_protocol, render_record, Dataset, ProtocolMode, SynthConfig};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        num_identities: 20,
        train_identities: 12,
        num_domains: 4,
        num_cameras: 2,
        images_per: 3,
        height: 32,
        width: 16,
        seed,
        ..Default::default()
    }
}

fn channel_means(img: &[f32]) -> [f64; 3] {
    let n = img.len() / 3;
    let mut m = [0.0; 3];
    for (c, plane) in img.chunks(n).enumerate() {
        m[c] = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    }
    m
}

/// Per-domain mean and std over images of the per-image channel means.
fn domain_stats(images: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let n = images.len() as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        mean[c] = images.iter().map(|m| m[c]).sum::<f64>() / n;
        std[c] = (images.iter().map(|m| (m[c] - mean[c]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    }
    (mean, std)
}

fn per_domain(ds: &Dataset) -> Vec<Vec<[f64; 3]>> {
    let mut out = vec![Vec::new(); ds.manifest.config.num_domains];
    for r in &ds.manifest.records {
        out[r.domain as usize].push(channel_means(ds.image(r.offset)));
    }
    out
}

#[test]
fn domains_are_separated_by_style() {
    for seed in 0..3 {
        let ds = generate_dataset(&small(seed)).unwrap();
        let stats: Vec<_> = per_domain(&ds).iter().map(|d| domain_stats(d)).collect();
        for a in 0..stats.len() {
            for b in a + 1..stats.len() {
                let gap = (0..3)
                    .map(|c| (stats[a].0[c] - stats[b].0[c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let within = (0..3)
                    .map(|c| stats[a].1[c].max(stats[b].1[c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(gap > 5.0 * within, "seed {seed} domains {a},{b}: gap {gap} within {within}");
            }
        }
    }
}

#[test]
fn restyled_content_takes_target_statistics() {
    let ds = generate_dataset(&small(4)).unwrap();
    let cfg = &ds.manifest.config;
    let stats: Vec<_> = per_domain(&ds).iter().map(|d| domain_stats(d)).collect();
    for (from, to) in [(0u32, 1u32), (2, 0), (3, 2)] {
        let restyled: Vec<[f64; 3]> = ds
            .manifest
            .records
            .iter()
            .filter(|r| r.domain == from)
            .map(|r| {
                let mut moved = *r;
                moved.domain = to;
                channel_means(&render_record(cfg, &moved, &ds.identities, &ds.styles, &ds.cameras))
            })
            .collect();
        let (mean, _) = domain_stats(&restyled);
        let (target, target_std) = stats[to as usize];
        let (source, _) = stats[from as usize];
        for c in 0..3 {
            assert!((mean[c] - target[c]).abs() < 0.5 * target_std[c], "channel {c}");
            assert!((mean[c] - target[c]).abs() < 0.1 * (source[c] - target[c]).abs().max(1e-3));
        }
    }
}

#[test]
fn same_content_differs_only_by_style() {
    // A record rendered under two styles keeps its identity content: the
    // style-free renders coincide when both domains share one style.
    let mut cfg = small(5);
    cfg.num_domains = 2;
    let ds = generate_dataset(&cfg).unwrap();
    let r = ds.manifest.records[7];
    let mut styles = ds.styles.clone();
    styles[1] = styles[0].clone();
    let mut other = r;
    other.domain = 1;
    let a = render_record(&cfg, &r, &ds.identities, &styles, &ds.cameras);
    let b = render_record(&cfg, &other, &ds.identities, &styles, &ds.cameras);
    assert_eq!(a, b);
}

#[test]
fn generation_is_reproducible() {
    let a = generate_dataset(&small(6)).unwrap();
    let b = generate_dataset(&small(6)).unwrap();
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.images, b.images);
    assert_eq!(a.manifest.to_text(), b.manifest.to_text());
    let c = generate_dataset(&small(7)).unwrap();
    assert_ne!(a.images, c.images);
}

#[test]
fn protocol_invariants() {
    let ds = generate_dataset(&small(8)).unwrap();
    let recs = &ds.manifest.records;
    for target in 0..4 {
        for mode in [ProtocolMode::LeaveOneOut(target), ProtocolMode::SingleDomain(target)] {
            let p = make_protocol(&ds.manifest, mode).unwrap();
            let ids = |rows: &[usize]| rows.iter().map(|&i| recs[i].identity).collect::<BTreeSet<_>>();
            assert!(ids(&p.train).is_disjoint(&ids(&p.query)));
            assert!(ids(&p.train).is_disjoint(&ids(&p.gallery)));
            assert!(p.train.iter().all(|&i| recs[i].split == Split::Train));
            match mode {
                ProtocolMode::LeaveOneOut(t) => assert!(p.train.iter().all(|&i| recs[i].domain != t)),
                ProtocolMode::SingleDomain(t) => assert!(p.train.iter().all(|&i| recs[i].domain == t)),
            }
            assert!(p.query.iter().chain(&p.gallery).all(|&i| recs[i].domain == target));
            for &q in &p.query {
                let cross = p
                    .gallery
                    .iter()
                    .any(|&g| recs[g].identity == recs[q].identity && recs[g].camera != recs[q].camera);
                assert!(cross, "query {q} lacks a cross-camera match");
            }
        }
    }
    assert!(make_protocol(&ds.manifest, ProtocolMode::LeaveOneOut(4)).is_err());
}

#[test]
fn image_count() {
    let cfg = SynthConfig {
        num_identities: 50,
        train_identities: 30,
        num_domains: 4,
        num_cameras: 2,
        images_per: 4,
        height: 8,
        width: 4,
        ..Default::default()
    };
    assert_eq!(generate_dataset(&cfg).unwrap().manifest.records.len(), 1600);
}
