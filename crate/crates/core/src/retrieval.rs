//! Query/gallery ranking, mAP and CMC.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduce::FeatureBank;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    Cosine,
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "cosine" => Ok(Self::Cosine),
            _ => Err(Error::Argument(format!("unknown distance `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub distance: DistanceKind,
    /// L2-normalize every head segment before ranking.
    pub normalize_heads: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Rows (queries first, then gallery) that were all-zero under cosine.
    pub zero_vectors: usize,
}

impl DistanceMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// All query-to-gallery distances in `f64`. Under cosine, a zero vector is
/// at distance 1 from everything.
pub fn pairwise_distances(queries: &FeatureBank, gallery: &FeatureBank, kind: DistanceKind) -> Result<DistanceMatrix> {
    if queries.dim() != gallery.dim() {
        return Err(Error::dims("pairwise_distances", &[queries.dim()], &[gallery.dim()]));
    }
    let q_norms: Vec<f64> = queries.rows().map(norm).collect();
    let g_norms: Vec<f64> = gallery.rows().map(norm).collect();
    let cols = gallery.len();
    let data: Vec<f64> = (0..queries.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let q = queries.row(i);
            let qn = q_norms[i];
            let g_norms = &g_norms;
            (0..cols).map(move |j| {
                let g = gallery.row(j);
                match kind {
                    DistanceKind::Euclidean => q
                        .iter()
                        .zip(g)
                        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                    DistanceKind::Cosine => {
                        if qn == 0.0 || g_norms[j] == 0.0 {
                            1.0
                        } else {
                            let dot: f64 = q.iter().zip(g).map(|(&a, &b)| a as f64 * b as f64).sum();
                            1.0 - dot / (qn * g_norms[j])
                        }
                    }
                }
            })
        })
        .collect();
    let zero_vectors = match kind {
        DistanceKind::Cosine => q_norms.iter().chain(&g_norms).filter(|&&n| n == 0.0).count(),
        DistanceKind::Euclidean => 0,
    };
    Ok(DistanceMatrix {
        rows: queries.len(),
        cols,
        data,
        zero_vectors,
    })
}

/// Gallery order for one query: stable by (distance, index).
pub fn rank_gallery(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    /// `cmc[r]` is the fraction of evaluated queries with a match in the top `r + 1`.
    pub cmc: Vec<f64>,
    pub rank1: f64,
    /// `None` for queries skipped for lack of a valid positive.
    pub per_query_ap: Vec<Option<f64>>,
    pub num_queries: usize,
    pub evaluated_queries: usize,
    pub skipped_queries: usize,
    pub gallery_size: usize,
    pub dim: usize,
    pub protocol: EvalProtocol,
    pub zero_vectors: usize,
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn rank(&self, r: usize) -> f64 {
        self.cmc.get(r.saturating_sub(1)).copied().unwrap_or(0.0)
    }

    /// Equality on every field except wall-clock time.
    pub fn same_numbers(&self, other: &Self) -> bool {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        } == Self {
            wall_clock_secs: 0.0,
            ..other.clone()
        }
    }
}

pub fn evaluate(queries: &FeatureBank, gallery: &FeatureBank, protocol: &EvalProtocol) -> Result<EvalReport> {
    let start = Stopwatch::start();
    let (q, g) = if protocol.normalize_heads {
        (queries.normalize_segments(), gallery.normalize_segments())
    } else {
        (queries.clone(), gallery.clone())
    };
    let dist = pairwise_distances(&q, &g, protocol.distance)?;
    let ng = gallery.len();
    let mut hits_at = vec![0usize; ng];
    let mut per_query_ap = Vec::with_capacity(queries.len());
    for (i, ql) in queries.labels().iter().enumerate() {
        let mut rank = 0usize;
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut first_hit = None;
        for j in rank_gallery(dist.row(i)) {
            let gl = &gallery.labels()[j];
            let same_id = gl.identity == ql.identity;
            if same_id && gl.camera == ql.camera {
                continue;
            }
            rank += 1;
            if same_id {
                hits += 1;
                precision_sum += hits as f64 / rank as f64;
                first_hit.get_or_insert(rank);
            }
        }
        match first_hit {
            Some(r) => {
                hits_at[r - 1] += 1;
                per_query_ap.push(Some(precision_sum / hits as f64));
            }
            None => per_query_ap.push(None),
        }
    }
    let evaluated = per_query_ap.iter().flatten().count();
    if evaluated == 0 {
        return Err(Error::Protocol("no query has a valid gallery match".into()));
    }
    let mut cmc = Vec::with_capacity(ng);
    let mut acc = 0usize;
    for h in hits_at {
        acc += h;
        cmc.push(acc as f64 / evaluated as f64);
    }
    let map = per_query_ap.iter().flatten().sum::<f64>() / evaluated as f64;
    Ok(EvalReport {
        map,
        rank1: cmc[0],
        cmc,
        num_queries: queries.len(),
        evaluated_queries: evaluated,
        skipped_queries: queries.len() - evaluated,
        per_query_ap,
        gallery_size: ng,
        dim: queries.dim(),
        protocol: *protocol,
        zero_vectors: dist.zero_vectors,
        wall_clock_secs: start.secs(),
    })
}

/// Named `(x, y)` series written as tab-separated blocks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub series: Vec<Series>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotData {
    pub fn push(&mut self, name: &str, x_label: &str, y_label: &str, points: Vec<(f64, f64)>) {
        self.series.push(Series {
            name: name.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            points,
        });
    }

    /// CMC curve of a report as `rank -> accuracy`.
    pub fn from_cmc(name: &str, report: &EvalReport) -> Self {
        let mut p = Self::default();
        p.push(
            name,
            "rank",
            "accuracy",
            report.cmc.iter().enumerate().map(|(r, &a)| ((r + 1) as f64, a)).collect(),
        );
        p
    }

    /// One block per series: `# name`, a header row, then the points;
    /// blocks are separated by a blank line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.series.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "# {}", s.name);
            let _ = writeln!(out, "{}\t{}", s.x_label, s.y_label);
            for (x, y) in &s.points {
                let _ = writeln!(out, "{x}\t{y}");
            }
        }
        out
    }
}

/// `Instant` panics on wasm32-unknown-unknown; there the clock reads zero.
struct Stopwatch(#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        return Self(std::time::Instant::now());
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        Self()
    }

    fn secs(&self) -> f64 {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        0.0
    }
}
