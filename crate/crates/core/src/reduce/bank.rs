use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn code(self) -> i32 {
        match self {
            Split::Train => 0,
            Split::Query => 1,
            Split::Gallery => 2,
        }
    }

    pub fn from_code(code: i32) -> Result<Self> {
        match code {
            0 => Ok(Split::Train),
            1 => Ok(Split::Query),
            2 => Ok(Split::Gallery),
            _ => Err(Error::Data(format!("unknown split code {code}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            _ => Err(Error::Argument(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowLabel {
    pub identity: u32,
    pub camera: u32,
    pub domain: u32,
    pub split: Split,
}

/// Row-major `N x dim` feature matrix with per-row labels.
///
/// `segments` records the per-head widths when rows are concatenated head
/// features; a bank with no head structure has a single segment.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    dim: usize,
    data: Vec<f32>,
    labels: Vec<RowLabel>,
    segments: Vec<usize>,
}

impl FeatureBank {
    pub fn new(dim: usize, data: Vec<f32>, labels: Vec<RowLabel>, segments: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("feature dimension must be positive".into()));
        }
        if data.len() != labels.len() * dim {
            return Err(Error::dims("feature bank", &[labels.len(), dim], &[data.len()]));
        }
        let segments = if segments.is_empty() { vec![dim] } else { segments };
        if segments.iter().sum::<usize>() != dim || segments.contains(&0) {
            return Err(Error::Argument(format!(
                "segments {segments:?} do not partition dimension {dim}"
            )));
        }
        Ok(Self {
            dim,
            data,
            labels,
            segments,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[RowLabel] {
        &self.labels
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.dim)
    }

    /// Same labels, new features (`N x dim`), single segment.
    pub fn with_features(&self, dim: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(dim, data, self.labels.clone(), Vec::new())
    }

    /// Rows whose label satisfies `keep`, in order.
    pub fn filter(&self, keep: impl Fn(&RowLabel) -> bool) -> Self {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (row, label) in self.rows().zip(&self.labels) {
            if keep(label) {
                data.extend_from_slice(row);
                labels.push(*label);
            }
        }
        Self {
            dim: self.dim,
            data,
            labels,
            segments: self.segments.clone(),
        }
    }

    pub fn split(&self, split: Split) -> Self {
        self.filter(|l| l.split == split)
    }

    /// Columns of head `k`.
    pub fn segment(&self, k: usize) -> Result<Self> {
        let width = *self
            .segments
            .get(k)
            .ok_or_else(|| Error::Argument(format!("segment {k} out of range")))?;
        let start: usize = self.segments[..k].iter().sum();
        let data = self
            .rows()
            .flat_map(|r| r[start..start + width].iter().copied())
            .collect();
        Self::new(width, data, self.labels.clone(), Vec::new())
    }

    /// Coordinatewise mean of equally wide segments.
    pub fn segment_average(&self) -> Result<Self> {
        let width = self.segments[0];
        if self.segments.iter().any(|&s| s != width) {
            return Err(Error::Argument("segments differ in width".into()));
        }
        let m = self.segments.len() as f32;
        let mut data = Vec::with_capacity(self.len() * width);
        for r in self.rows() {
            for i in 0..width {
                data.push(r.chunks(width).map(|s| s[i]).sum::<f32>() / m);
            }
        }
        Self::new(width, data, self.labels.clone(), Vec::new())
    }

    /// Scales every segment of every row to unit L2 norm.
    pub fn normalize_segments(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.dim) {
            let mut start = 0;
            for &w in &self.segments {
                let seg = &mut row[start..start + w];
                let norm = seg.iter().map(|v| v * v).sum::<f32>().sqrt();
                if norm > 0.0 {
                    seg.iter_mut().for_each(|v| *v /= norm);
                }
                start += w;
            }
        }
        Self {
            data,
            ..self.clone()
        }
    }

    /// Rows of both banks, `self` first.
    pub fn concat_rows(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::dims("concat_rows", &[self.dim], &[other.dim]));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            dim: self.dim,
            data,
            labels,
            segments: self.segments.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(identity: u32, split: Split) -> RowLabel {
        RowLabel {
            identity,
            camera: 0,
            domain: 0,
            split,
        }
    }

    #[test]
    fn segments_and_average() {
        let bank = FeatureBank::new(
            4,
            vec![0.0, 2.0, 2.0, 0.0, 1.0, 1.0, 3.0, 3.0],
            vec![label(0, Split::Query), label(1, Split::Gallery)],
            vec![2, 2],
        )
        .unwrap();
        assert_eq!(bank.segment(1).unwrap().data(), &[2.0, 0.0, 3.0, 3.0]);
        assert_eq!(bank.segment_average().unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(bank.split(Split::Gallery).len(), 1);
        let n = bank.normalize_segments();
        assert!((n.row(0)[1] - 1.0).abs() < 1e-7);
        assert!(FeatureBank::new(4, vec![0.0; 8], vec![label(0, Split::Train); 2], vec![3, 2]).is_err());
        assert!(FeatureBank::new(4, vec![0.0; 7], vec![label(0, Split::Train); 2], vec![]).is_err());
    }
}
