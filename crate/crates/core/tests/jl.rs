use d2fel::reduce::{fit_random_projector, jl, jl_epsilon, jl_min_dim, FeatureBank, RowLabel, Split};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn reference_dimensions() {
    assert_eq!(jl_min_dim(10000, 0.2).unwrap(), 2126);
    assert_eq!(jl_min_dim(1000, 0.5).unwrap(), 332);
    assert!(jl_min_dim(1, 0.5).is_err());
    assert!(jl_min_dim(10, 1.0).is_err());
    assert!(jl_min_dim(10, 0.0).is_err());
}

#[test]
fn planner_reports_target_tolerance() {
    let p = jl::plan(200, 0.3, Some(512)).unwrap();
    assert_eq!(p.min_dim, jl_min_dim(200, 0.3).unwrap());
    let eps = p.target_epsilon.unwrap();
    assert!((eps - jl_epsilon(200, 512).unwrap()).abs() < 1e-15);
    assert_eq!(p.target_satisfies, Some(512 >= p.min_dim));
    assert!(jl_epsilon(200, 50).is_none());
}

proptest! {
    #[test]
    fn epsilon_inverts_min_dim(n in 2usize..100_000, eps in 0.05f64..0.95) {
        let d = jl_min_dim(n, eps).unwrap();
        let back = jl_epsilon(n, d).unwrap();
        prop_assert!(back <= eps + 1e-9);
        if d > 1 {
            if let Some(prev) = jl_epsilon(n, d - 1) {
                prop_assert!(prev > eps - 1e-9);
            }
        }
    }

    #[test]
    fn min_dim_monotone(n in 2usize..10_000, eps in 0.05f64..0.9) {
        prop_assert!(jl_min_dim(n + 1, eps).unwrap() >= jl_min_dim(n, eps).unwrap());
        prop_assert!(jl_min_dim(n, eps + 0.05).unwrap() <= jl_min_dim(n, eps).unwrap());
    }
}

/// Fraction of pairs whose projected squared distance stays in the band.
pub fn band_fraction(seed: u64, n: usize, dim: usize, d: usize, eps: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    let label = RowLabel {
        identity: 0,
        camera: 0,
        domain: 0,
        split: Split::Train,
    };
    let bank = FeatureBank::new(dim, data, vec![label; n], vec![]).unwrap();
    let p = fit_random_projector(dim, d, seed ^ 0x5eed).unwrap();
    let low = p.project(&bank).unwrap();
    let sq = |b: &FeatureBank, i: usize, j: usize| -> f64 {
        b.row(i).iter().zip(b.row(j)).map(|(a, c)| (*a as f64 - *c as f64).powi(2)).sum()
    };
    let mut inside = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let hi = sq(&bank, i, j);
            let lo = sq(&low, i, j);
            if (1.0 - eps) * hi <= lo && lo <= (1.0 + eps) * hi {
                inside += 1;
            }
            total += 1;
        }
    }
    inside as f64 / total as f64
}

#[test]
fn projection_keeps_pairs_in_band() {
    let eps = jl_epsilon(60, 512).unwrap();
    for seed in 0..3 {
        assert!(band_fraction(seed, 60, 1024, 512, eps) >= 0.95);
    }
}

#[test]
fn projection_is_seeded() {
    let a = fit_random_projector(16, 4, 7).unwrap();
    let b = fit_random_projector(16, 4, 7).unwrap();
    let c = fit_random_projector(16, 4, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.matrix(), c.matrix());
    assert!(fit_random_projector(4, 5, 0).is_err());
}
