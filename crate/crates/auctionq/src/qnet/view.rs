//! Node-level views adapting environment states to the embedding pipeline.
//!
//! Sample sets are held as `Cow`s: the gridworld problem borrows them from
//! its state graph, while the machine-scheduling adapter synthesizes and owns
//! them (its completion times are sums of setup and processing times).

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::mrrc::{Matching, ProblemState};
use crate::samples::SampleSet;

use super::{AGE_FEATURE_SCALE, MRRC_TIME_SCALE};

/// A state reduced to what the Q-network consumes: one node per task, a
/// normalized per-node scalar, per-node base input features, and the sample
/// sets for every ordered task pair.
pub struct StateView<'a> {
    /// Stable node ids, in presentation order.
    pub ids: Vec<u32>,
    /// Normalized scalar concatenated before the value layer.
    pub node_scalar: Vec<f64>,
    pub feat_dim: usize,
    /// n * feat_dim, row per node; slot 0 is overwritten by the sampled
    /// completion time for assigned nodes.
    pub base_features: Vec<f64>,
    /// Divisor applied to completion-time samples before they enter the
    /// networks (keeps relu pre-activations O(1), like the age scale).
    pub time_scale: f64,
    /// n * n pairwise sample sets (None on the diagonal).
    tt: Vec<Option<Cow<'a, SampleSet>>>,
}

impl<'a> StateView<'a> {
    pub fn new(
        ids: Vec<u32>,
        node_scalar: Vec<f64>,
        feat_dim: usize,
        base_features: Vec<f64>,
        time_scale: f64,
        tt: Vec<Option<Cow<'a, SampleSet>>>,
    ) -> Result<Self> {
        let n = ids.len();
        if node_scalar.len() != n || base_features.len() != n * feat_dim || tt.len() != n * n {
            return Err(Error::DimensionMismatch("state view buffers".into()));
        }
        if !(time_scale > 0.0) {
            return Err(Error::Validation("time scale must be positive".into()));
        }
        Ok(StateView { ids, node_scalar, feat_dim, base_features, time_scale, tt })
    }

    /// View of the alive tasks of an MRRC state, in task-list order.
    pub fn from_mrrc(state: &'a ProblemState) -> Self {
        let alive: Vec<&crate::mrrc::Task> = state.tasks.iter().filter(|t| t.alive).collect();
        let n = alive.len();
        let ids: Vec<u32> = alive.iter().map(|t| t.id).collect();
        let node_scalar: Vec<f64> =
            alive.iter().map(|t| t.age as f64 / AGE_FEATURE_SCALE).collect();
        let mut tt = Vec::with_capacity(n * n);
        for a in &alive {
            for b in &alive {
                tt.push(if a.id == b.id {
                    None
                } else {
                    state.tt_edges.get((a.id, b.id)).map(|d| Cow::Borrowed(&d.samples))
                });
            }
        }
        StateView {
            ids,
            node_scalar,
            feat_dim: 1,
            base_features: vec![0.0; n],
            time_scale: MRRC_TIME_SCALE,
            tt,
        }
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn tt(&self, i: usize, j: usize) -> Option<&SampleSet> {
        self.tt[i * self.n() + j].as_deref()
    }

    pub fn node_index(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }
}

/// An action bound to a view: for each node, the assigning robot id and the
/// completion-time samples of that robot-task edge.
pub struct ActionBinding<'a> {
    pub assigned: Vec<Option<(u32, Cow<'a, SampleSet>)>>,
}

impl<'a> ActionBinding<'a> {
    pub fn none(view: &StateView<'_>) -> Self {
        ActionBinding { assigned: vec![None; view.n()] }
    }

    /// Bind an MRRC matching. Every matched task must be a node of the view
    /// and every matched edge must exist in the state.
    pub fn from_mrrc(
        state: &'a ProblemState,
        view: &StateView<'_>,
        action: &Matching,
    ) -> Result<Self> {
        let mut assigned = vec![None; view.n()];
        for &(r, t) in action.pairs() {
            let Some(node) = view.node_index(t) else {
                return Err(Error::InfeasibleMatching(format!(
                    "action references task {t} not present in the state"
                )));
            };
            let Some(edge) = state.rt_edges.get((r, t)) else {
                return Err(Error::InfeasibleMatching(format!("no edge for robot {r} task {t}")));
            };
            assigned[node] = Some((r, Cow::Borrowed(&edge.samples)));
        }
        Ok(ActionBinding { assigned })
    }
}
