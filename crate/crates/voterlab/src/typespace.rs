//! Finite metric space of types and the mutation measure living on it.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::measures::FiniteMeasure;
use crate::{Error, Result};

/// Slack for metric-axiom checks: triangle sums hit float associativity.
const METRIC_TOL: f64 = 1e-12;

/// Labelled finite metric space.
#[derive(Debug, Clone)]
pub struct TypeSpace {
    labels: Vec<String>,
    dist: Array2<f64>,
}

/// Serialised form of a [`TypeSpace`].
#[derive(Debug, Serialize, Deserialize)]
pub struct TypeSpaceJson {
    pub labels: Vec<String>,
    pub dist: Vec<Vec<f64>>,
}

impl TypeSpace {
    /// Validate and build from labels and a distance matrix.
    pub fn new(labels: Vec<String>, dist: Array2<f64>) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(Error::InvalidInput("type space needs at least one type".into()));
        }
        if dist.nrows() != m || dist.ncols() != m {
            return Err(Error::InvalidInput(format!(
                "distance matrix is {}x{}, expected {m}x{m}",
                dist.nrows(),
                dist.ncols()
            )));
        }
        for i in 0..m {
            if dist[[i, i]] != 0.0 {
                return Err(Error::InvalidInput(format!("nonzero self-distance at type {i}")));
            }
            for j in 0..m {
                let d = dist[[i, j]];
                if !d.is_finite() || (i != j && d <= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "distance between types {i} and {j} must be positive and finite"
                    )));
                }
                if (d - dist[[j, i]]).abs() > 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "distance matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    if dist[[i, k]] > dist[[i, j]] + dist[[j, k]] + METRIC_TOL {
                        return Err(Error::InvalidInput(format!(
                            "triangle inequality fails for types ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        Ok(Self { labels, dist })
    }

    /// `m` types embedded at equally spaced points of `[0,1]` with the
    /// Euclidean distance.
    pub fn equally_spaced(m: usize) -> Self {
        assert!(m > 0);
        let labels = (0..m).map(|i| format!("t{i}")).collect();
        let mut dist = Array2::zeros((m, m));
        let h = if m > 1 { 1.0 / (m - 1) as f64 } else { 0.0 };
        for i in 0..m {
            for j in 0..m {
                dist[[i, j]] = (i as f64 - j as f64).abs() * h;
            }
        }
        Self::new(labels, dist).expect("equally spaced embedding is a metric")
    }

    /// `m` types with every pairwise distance equal to one.
    pub fn discrete(m: usize) -> Self {
        assert!(m > 0);
        let labels = (0..m).map(|i| format!("t{i}")).collect();
        let mut dist = Array2::from_elem((m, m), 1.0);
        for i in 0..m {
            dist[[i, i]] = 0.0;
        }
        Self::new(labels, dist).expect("discrete space is a metric")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[[i, j]]
    }

    pub fn to_json(&self) -> TypeSpaceJson {
        TypeSpaceJson {
            labels: self.labels.clone(),
            dist: (0..self.len())
                .map(|i| (0..self.len()).map(|j| self.dist[[i, j]]).collect())
                .collect(),
        }
    }

    pub fn from_json(raw: &TypeSpaceJson) -> Result<Self> {
        let m = raw.labels.len();
        if raw.dist.len() != m || raw.dist.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidInput("ragged distance matrix".into()));
        }
        let mut dist = Array2::zeros((m, m));
        for (i, row) in raw.dist.iter().enumerate() {
            for (j, d) in row.iter().enumerate() {
                dist[[i, j]] = *d;
            }
        }
        Self::new(raw.labels.clone(), dist)
    }
}

/// Nonnegative weights on the types of a [`TypeSpace`]; not necessarily a
/// probability measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MutationMeasure {
    weights: Vec<f64>,
}

impl MutationMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("mutation weights must be nonnegative".into()));
        }
        Ok(Self { weights })
    }

    /// The zero measure: a voter model without mutation.
    pub fn zero(m: usize) -> Self {
        Self { weights: vec![0.0; m] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Total mass, written `mu(1)` in the generator displays.
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Normalised jump distribution; the zero measure normalises to zero.
    pub fn normalize(&self) -> FiniteMeasure {
        let total = self.total();
        let weights = if total > 0.0 {
            self.weights.iter().map(|w| w / total).collect()
        } else {
            vec![0.0; self.weights.len()]
        };
        FiniteMeasure::new(weights).expect("normalised weights stay nonnegative")
    }
}

/// Tent mollifier `J(r) = max(0, 1 - r)`; continuous, `J(0) = 1`, vanishing
/// on `[1, infinity)`.
pub fn mollifier(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidInput(format!("mollifier argument {r} is negative")));
    }
    Ok((1.0 - r).max(0.0))
}
