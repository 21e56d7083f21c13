//! Instance-normalization placement patterns over the final bottlenecks.
//!
//! Bottlenecks are counted backwards from the network output: bottleneck-1
//! is the last block. A pattern of depth `δ` holds one bit per block
//! `δ, …, 1`; bit `i - 1` of the mask is set when IN follows bottleneck-`i`.
//!
//! The textual form is a `0`/`1` string of length `δ` whose leftmost
//! character is bottleneck-`δ` (deepest) and rightmost is bottleneck-1, so
//! `"011"` applies IN after bottlenecks 2 and 1.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest depth for which the full combinatorial set may be enumerated.
pub const MAX_DEPTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InPattern {
    depth: usize,
    mask: u32,
}

impl InPattern {
    pub fn new(depth: usize, mask: u32) -> Result<Self> {
        if depth > 31 || (depth < 32 && u64::from(mask) >= 1u64 << depth) {
            return Err(Error::Argument(format!(
                "mask {mask:#b} does not fit in depth {depth}"
            )));
        }
        Ok(Self { depth, mask })
    }

    /// Pattern with IN nowhere.
    pub fn none(depth: usize) -> Self {
        Self { depth, mask: 0 }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    /// Whether IN follows bottleneck-`i` (1-indexed from the output end).
    pub fn applies_at(&self, bottleneck: usize) -> bool {
        bottleneck >= 1 && bottleneck <= self.depth && self.mask & (1 << (bottleneck - 1)) != 0
    }

    /// IN flags for the `depth` blocks in forward (input-to-output) order.
    pub fn forward_flags(&self) -> Vec<bool> {
        (1..=self.depth).rev().map(|i| self.applies_at(i)).collect()
    }

    pub fn ends_in_norm(&self) -> bool {
        self.applies_at(1)
    }
}

impl fmt::Display for InPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (1..=self.depth).rev() {
            f.write_str(if self.applies_at(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for InPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() > MAX_DEPTH * 4 {
            return Err(Error::Argument(format!("pattern `{s}` too long")));
        }
        let mut mask = 0u32;
        for ch in s.chars() {
            mask = (mask << 1)
                | match ch {
                    '0' => 0,
                    '1' => 1,
                    _ => {
                        return Err(Error::Argument(format!(
                            "pattern `{s}` may only contain '0' and '1'"
                        )))
                    }
                };
        }
        InPattern::new(s.len(), mask)
    }
}

impl Serialize for InPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered collection of patterns; one ensemble head per entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSet {
    patterns: Vec<InPattern>,
}

impl PatternSet {
    /// All `2^depth` patterns, ascending by mask. Pattern 0 is the No-IN head.
    pub fn full(depth: usize) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(Error::Capacity(format!(
                "full combinatorial set at depth {depth} exceeds the limit of {MAX_DEPTH}"
            )));
        }
        let patterns = (0..1u32 << depth)
            .map(|mask| InPattern { depth, mask })
            .collect();
        Ok(Self { patterns })
    }

    /// `heads` copies of the same pattern (self-ensemble without IN diversity).
    pub fn uniform(pattern: InPattern, heads: usize) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Argument("uniform pattern set needs at least one head".into()));
        }
        Ok(Self {
            patterns: vec![pattern; heads],
        })
    }

    /// Explicit subset in the given order. The first pattern belongs to the
    /// original network tail and must be the deepest.
    pub fn from_patterns(patterns: Vec<InPattern>) -> Result<Self> {
        let first = patterns
            .first()
            .ok_or_else(|| Error::Argument("pattern set must not be empty".into()))?;
        if patterns.iter().any(|p| p.depth > first.depth) {
            return Err(Error::Argument(
                "the first pattern must have the largest depth".into(),
            ));
        }
        Ok(Self { patterns })
    }

    pub fn parse_list<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        let patterns = items
            .iter()
            .map(|s| s.as_ref().trim().parse())
            .collect::<Result<Vec<_>>>()?;
        Self::from_patterns(patterns)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Depth of the deepest head.
    pub fn depth(&self) -> usize {
        self.patterns.first().map_or(0, |p| p.depth)
    }

    pub fn patterns(&self) -> &[InPattern] {
        &self.patterns
    }

    pub fn iter(&self) -> impl Iterator<Item = &InPattern> {
        self.patterns.iter()
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.patterns.iter().map(|p| p.to_string()).collect()
    }
}
