//! Sample sets for task completion times.
//!
//! Edges of the scheduling graph hold empirical distributions: a list of
//! completion-time draws. Deterministic settings produce degenerate
//! distributions, stored compactly so replay buffers stay small.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleSet {
    /// All draws equal; semantically `count` copies of `value`.
    Constant { value: f64, count: usize },
    Drawn(Vec<f64>),
}

impl SampleSet {
    pub fn constant(value: f64, count: usize) -> Self {
        assert!(count >= 1, "sample set must be non-empty");
        assert!(value >= 0.0 && value.is_finite(), "completion times are non-negative");
        SampleSet::Constant { value, count }
    }

    pub fn drawn(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "sample set must be non-empty");
        assert!(values.iter().all(|v| *v >= 0.0 && v.is_finite()));
        SampleSet::Drawn(values)
    }

    pub fn len(&self) -> usize {
        match self {
            SampleSet::Constant { count, .. } => *count,
            SampleSet::Drawn(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The i-th stored sample (indices wrap).
    pub fn get(&self, i: usize) -> f64 {
        match self {
            SampleSet::Constant { value, .. } => *value,
            SampleSet::Drawn(v) => v[i % v.len()],
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            SampleSet::Constant { value, .. } => *value,
            SampleSet::Drawn(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            SampleSet::Constant { value, .. } => *value,
            SampleSet::Drawn(v) => v.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }
}
