//! Johnson–Lindenstrauss target-dimension planning.
//!
//! For `N` points, a Gaussian random projection to
//! `d >= 24 ln N / (3ε² − 2ε³)` dimensions preserves all pairwise squared
//! distances within a factor `1 ± ε`.

use serde::Serialize;

use crate::error::{Error, Result};

fn denominator(eps: f64) -> f64 {
    3.0 * eps * eps - 2.0 * eps * eps * eps
}

/// Smallest `d` satisfying the bound for `n` points at tolerance `epsilon`.
pub fn jl_min_dim(n: usize, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Argument(format!("epsilon {epsilon} outside (0, 1)")));
    }
    if n < 2 {
        return Err(Error::Argument("need at least two points".into()));
    }
    Ok((24.0 * (n as f64).ln() / denominator(epsilon)).ceil() as usize)
}

/// Tightest tolerance the bound certifies for `n` points at dimension `d`,
/// or `None` when `d < 24 ln N` (no `ε < 1` qualifies).
pub fn jl_epsilon(n: usize, d: usize) -> Option<f64> {
    if n < 2 || d == 0 {
        return None;
    }
    let need = 24.0 * (n as f64).ln() / d as f64;
    if need >= 1.0 {
        return None;
    }
    // 3ε² − 2ε³ is increasing on (0, 1).
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if denominator(mid) >= need {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Planner output: both the dimension the tolerance requires and, when a
/// target dimension is given, the tolerance that dimension certifies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JlPlan {
    pub points: usize,
    pub epsilon: f64,
    pub min_dim: usize,
    pub target_dim: Option<usize>,
    pub target_epsilon: Option<f64>,
    pub target_satisfies: Option<bool>,
}

pub fn plan(points: usize, epsilon: f64, target_dim: Option<usize>) -> Result<JlPlan> {
    let min_dim = jl_min_dim(points, epsilon)?;
    Ok(JlPlan {
        points,
        epsilon,
        min_dim,
        target_dim,
        target_epsilon: target_dim.and_then(|d| jl_epsilon(points, d)),
        target_satisfies: target_dim.map(|d| d >= min_dim),
    })
}
