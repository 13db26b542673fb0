//! Interference kernels: symmetric nonnegative weights on `Z^d` offsets.
//!
//! A kernel assigns a weight `a_j` to each lattice offset `j`. The center
//! weight is pinned to `a_0 = 1` and every weight must equal the weight at
//! the negated offset. Kernels are stored sparsely as a support list; the
//! weight sum and the infinity-norm support radius are cached at
//! construction.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A lattice offset in `Z^d`.
pub type Offset = Vec<i64>;

/// Symmetric nonnegative interference weights with `a_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceKernel {
    dim: usize,
    entries: Vec<(Offset, f64)>,
    sum_a: f64,
    radius: i64,
}

fn inf_norm(offset: &[i64]) -> i64 {
    offset.iter().map(|c| c.abs()).max().unwrap_or(0)
}

impl InterferenceKernel {
    /// Validates and builds a kernel from `(offset, weight)` pairs.
    ///
    /// Zero weights are dropped from the support. Asymmetric or negative
    /// input is rejected rather than repaired: the distributional symmetry
    /// arguments downstream need `a_j = a_{-j}` exactly.
    pub fn new<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Offset, f64)>,
    {
        let mut map: BTreeMap<Offset, f64> = BTreeMap::new();
        for (offset, weight) in entries {
            if offset.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: offset.len(),
                    offset,
                });
            }
            if !(weight >= 0.0) {
                return Err(Error::NegativeWeight { offset, weight });
            }
            if map.insert(offset.clone(), weight).is_some() {
                return Err(Error::DuplicateOffset { offset });
            }
        }
        let center = vec![0i64; dim];
        if map.get(&center) != Some(&1.0) {
            return Err(Error::MissingCenter);
        }
        for (offset, weight) in &map {
            let negated: Offset = offset.iter().map(|c| -c).collect();
            if map.get(&negated) != Some(weight) {
                return Err(Error::AsymmetricKernel { offset: offset.clone() });
            }
        }
        let entries: Vec<(Offset, f64)> =
            map.into_iter().filter(|(_, w)| *w > 0.0).collect();
        let sum_a = entries.iter().map(|(_, w)| w).sum();
        let radius = entries.iter().map(|(o, _)| inf_norm(o)).max().unwrap_or(0);
        Ok(Self { dim, entries, sum_a, radius })
    }

    /// The kernel `{0: 1}`: no cross-site interference (each queue is M/M/1).
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![(vec![0; dim], 1.0)],
            sum_a: 1.0,
            radius: 0,
        }
    }

    /// Symmetric one-dimensional kernel `a_0 = 1`, `a_{±k} = weights[k-1]`.
    pub fn symmetric_1d(weights: &[f64]) -> Result<Self> {
        let mut entries = vec![(vec![0i64], 1.0)];
        for (k, &w) in weights.iter().enumerate() {
            let k = k as i64 + 1;
            entries.push((vec![k], w));
            entries.push((vec![-k], w));
        }
        Self::new(1, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Support entries, sorted by offset, zero weights removed.
    pub fn entries(&self) -> &[(Offset, f64)] {
        &self.entries
    }

    /// Cached `sum_j a_j`.
    pub fn sum(&self) -> f64 {
        self.sum_a
    }

    /// Infinity-norm support radius `L`.
    pub fn radius(&self) -> i64 {
        self.radius
    }

    /// Weight at `offset` (zero off the support).
    pub fn weight(&self, offset: &[i64]) -> f64 {
        self.entries
            .iter()
            .find(|(o, _)| o.as_slice() == offset)
            .map_or(0.0, |(_, w)| *w)
    }

    /// The queue process is stable below this arrival rate, `1 / sum_j a_j`.
    pub fn critical_rate(&self) -> f64 {
        1.0 / self.sum_a
    }

    /// Drops all weights outside the infinity-ball of radius `radius`.
    ///
    /// The center entry always survives, so the result is a valid kernel
    /// with its sum and radius recomputed.
    pub fn truncate(&self, radius: i64) -> Self {
        assert!(radius >= 0, "truncation radius must be nonnegative");
        let entries: Vec<(Offset, f64)> = self
            .entries
            .iter()
            .filter(|(o, _)| inf_norm(o) <= radius)
            .cloned()
            .collect();
        let sum_a = entries.iter().map(|(_, w)| w).sum();
        let r = entries.iter().map(|(o, _)| inf_norm(o)).max().unwrap_or(0);
        Self { dim: self.dim, entries, sum_a, radius: r }
    }
}

// Wire format: {"dim": d, "entries": [[c_1, ..., c_d, weight], ...]}.
impl Serialize for InterferenceKernel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            dim: usize,
            entries: Vec<Vec<serde_json::Value>>,
        }
        let entries = self
            .entries
            .iter()
            .map(|(o, w)| {
                let mut row: Vec<serde_json::Value> =
                    o.iter().map(|&c| serde_json::Value::from(c)).collect();
                row.push(serde_json::Value::from(*w));
                row
            })
            .collect();
        Repr { dim: self.dim, entries }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for InterferenceKernel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            dim: usize,
            entries: Vec<Vec<serde_json::Value>>,
        }
        let repr = Repr::deserialize(deserializer)?;
        let mut entries = Vec::with_capacity(repr.entries.len());
        for row in &repr.entries {
            if row.len() != repr.dim + 1 {
                return Err(D::Error::custom(format!(
                    "kernel entry has {} fields, expected {} coordinates plus a weight",
                    row.len(),
                    repr.dim
                )));
            }
            let mut offset = Vec::with_capacity(repr.dim);
            for v in &row[..repr.dim] {
                let c = v
                    .as_i64()
                    .or_else(|| v.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
                    .ok_or_else(|| D::Error::custom("kernel offset coordinate must be an integer"))?;
                offset.push(c);
            }
            let weight = row[repr.dim]
                .as_f64()
                .ok_or_else(|| D::Error::custom("kernel weight must be a number"))?;
            entries.push((offset, weight));
        }
        InterferenceKernel::new(repr.dim, entries).map_err(D::Error::custom)
    }
}
