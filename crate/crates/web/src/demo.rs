//! Demo computations, kept free of wasm types so they run natively too.

use d2fel::bottleneck::{BottleneckBlock, ChannelAffine, InSite};
use d2fel::layers::{Mode, Module};
use d2fel::reduce::{fit_pca, fit_random_projector, jl, FeatureBank, RowLabel, Split};
use d2fel::retrieval::{evaluate, EvalProtocol};
use d2fel::tensor::Tensor;
use d2fel::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct StyleShift {
    pub site: InSite,
    /// Max output change when the style probe is applied, with IN on.
    pub with_in: f64,
    pub without_in: f64,
    pub output_scale: f64,
}

/// Pushes a per-channel gain/bias through one residual block and measures
/// how much the output moves with and without IN.
pub fn style_shift(seed: u64, gain: f64, bias: f64, site: InSite) -> Result<StyleShift> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = 8;
    let mut block = BottleneckBlock::<f64>::new(channels, 4, channels, 1, &mut rng)
        .with_in(true)
        .with_site(site);
    block.set_in_epsilon(1e-12);
    let x = Tensor::randn(&[2, channels, 8, 4], 1.0, &mut rng);
    block.forward(&x, Mode::Train)?;
    let probe = ChannelAffine {
        gain: (0..channels).map(|c| gain * (1.0 + 0.25 * c as f64)).collect(),
        bias: (0..channels).map(|c| bias * if c % 2 == 0 { 1.0 } else { -1.0 }).collect(),
    };
    let mut shift = |apply_in: bool| -> Result<(f64, f64)> {
        block.apply_in = apply_in;
        block.pre_norm_affine = None;
        let plain = block.forward(&x, Mode::Eval)?;
        block.pre_norm_affine = Some(probe.clone());
        let styled = block.forward(&x, Mode::Eval)?;
        let diff = plain.data().iter().zip(styled.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = plain.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        Ok((diff, scale))
    };
    let (with_in, output_scale) = shift(true)?;
    let (without_in, _) = shift(false)?;
    Ok(StyleShift {
        site,
        with_in,
        without_in,
        output_scale,
    })
}

#[derive(Debug, Serialize)]
pub struct JlAudit {
    pub plan: jl::JlPlan,
    /// Fraction of pairs inside the band at the target dimension's epsilon.
    pub in_band: Option<f64>,
}

fn bank(dim: usize, data: Vec<f32>, ids: &[u32], split: Split) -> Result<FeatureBank> {
    let labels = ids
        .iter()
        .enumerate()
        .map(|(i, &identity)| RowLabel {
            identity,
            camera: (i % 2) as u32,
            domain: 0,
            split,
        })
        .collect();
    FeatureBank::new(dim, data, labels, vec![dim])
}

/// Plans a projection and, when `target` is set, checks it on `points`
/// Gaussian vectors of dimension `dim`.
pub fn jl_audit(seed: u64, points: usize, epsilon: f64, dim: usize, target: Option<usize>) -> Result<JlAudit> {
    let plan = jl::plan(points, epsilon, target)?;
    let in_band = match (target, plan.target_epsilon) {
        (Some(d), Some(eps)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..points * dim).map(|_| rng.sample(StandardNormal)).collect();
            let high = bank(dim, data, &vec![0; points], Split::Train)?;
            let low = fit_random_projector(dim, d, seed)?.project(&high)?;
            let sq = |b: &FeatureBank, i: usize, j: usize| -> f64 {
                b.row(i).iter().zip(b.row(j)).map(|(a, c)| (*a as f64 - *c as f64).powi(2)).sum()
            };
            let (mut inside, mut total) = (0usize, 0usize);
            for i in 0..points {
                for j in i + 1..points {
                    let (h, l) = (sq(&high, i, j), sq(&low, i, j));
                    inside += ((1.0 - eps) * h <= l && l <= (1.0 + eps) * h) as usize;
                    total += 1;
                }
            }
            Some(inside as f64 / total.max(1) as f64)
        }
        _ => None,
    };
    Ok(JlAudit { plan, in_band })
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub dim: usize,
    pub pca: f64,
    pub rp: f64,
}

/// Identity-clustered features living near a `rank`-dimensional subspace,
/// ranked after PCA and after random projection at halving dimensions.
pub fn reduction_curve(seed: u64, dim: usize, rank: usize, identities: usize) -> Result<Vec<CurvePoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = rank.clamp(1, dim);
    let basis: Vec<f32> = (0..rank * dim).map(|_| rng.sample(StandardNormal)).collect();
    let centers: Vec<Vec<f32>> = (0..identities)
        .map(|_| (0..rank).map(|_| 2.0 * rng.sample::<f32, _>(StandardNormal)).collect())
        .collect();
    let sample = |n: usize, split: Split, rng: &mut ChaCha8Rng| -> Result<FeatureBank> {
        let mut data = Vec::with_capacity(n * identities * dim);
        let mut ids = Vec::new();
        for (id, c) in centers.iter().enumerate() {
            for _ in 0..n {
                let z: Vec<f32> = c.iter().map(|v| v + rng.sample::<f32, _>(StandardNormal)).collect();
                for j in 0..dim {
                    let v: f32 = (0..rank).map(|k| z[k] * basis[k * dim + j]).sum();
                    data.push(v + 0.3 * rng.sample::<f32, _>(StandardNormal));
                }
                ids.push(id as u32);
            }
        }
        bank(dim, data, &ids, split)
    };
    let train = sample(4, Split::Train, &mut rng)?;
    let query = sample(1, Split::Query, &mut rng)?;
    let gallery = sample(3, Split::Gallery, &mut rng)?;
    let proto = EvalProtocol::default();
    let mut out = Vec::new();
    let mut d = dim;
    while d >= 1 {
        let pca = fit_pca(&train, d.min(train.len()))?;
        let rp = fit_random_projector(dim, d, seed)?;
        out.push(CurvePoint {
            dim: d,
            pca: evaluate(&pca.transform(&query)?, &pca.transform(&gallery)?, &proto)?.map,
            rp: evaluate(&rp.project(&query)?, &rp.project(&gallery)?, &proto)?.map,
        });
        if d == 1 {
            break;
        }
        d /= 2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_vanishes_under_in() {
        for site in [InSite::Join, InSite::Branch] {
            let s = style_shift(1, 3.0, 2.0, site).unwrap();
            assert!(s.with_in < 1e-8 * s.output_scale.max(1.0), "{s:?}");
            assert!(s.without_in > 1e-3);
        }
    }

    #[test]
    fn audit_reports_band() {
        let a = jl_audit(0, 40, 0.5, 256, Some(128)).unwrap();
        assert_eq!(a.plan.min_dim, jl::jl_min_dim(40, 0.5).unwrap());
        assert!(a.in_band.unwrap() > 0.9);
        assert!(jl_audit(0, 40, 0.5, 256, None).unwrap().in_band.is_none());
    }

    #[test]
    fn pca_holds_up_better_than_rp() {
        let c = reduction_curve(2, 64, 6, 12).unwrap();
        assert_eq!(c.iter().map(|p| p.dim).collect::<Vec<_>>(), vec![64, 32, 16, 8, 4, 2, 1]);
        let at8 = c.iter().find(|p| p.dim == 8).unwrap();
        assert!(at8.pca >= at8.rp, "{at8:?}");
    }
}
