//! Per-state evaluation context.
//!
//! Comparing candidate actions within one state is a ranking problem, so all
//! Q evaluations against the same context share common random numbers by
//! default: the presence matrix is computed once and the completion-time
//! draws are keyed by (robot, task, sample index) rather than by call order.
//! Switching CRN off makes every call draw fresh samples.

use std::cell::Cell;

use rand::Rng as _;

use crate::error::Result;
use crate::mrrc::{Matching, ProblemState};
use crate::rng;

use super::forward::{build_presence, q_forward, PresenceTape, SampleIndexer};
use super::view::{ActionBinding, StateView};
use super::{PresenceMatrix, QEstimate, QNetParams};

pub struct EvalContext<'a> {
    pub view: StateView<'a>,
    presence: PresenceTape,
    seed: u64,
    crn: bool,
    calls: Cell<usize>,
}

impl<'a> EvalContext<'a> {
    pub fn new(view: StateView<'a>, params: &QNetParams, seed: u64, crn: bool) -> Result<Self> {
        let presence = build_presence(&view, params, SampleIndexer::Hashed { seed }, false)?;
        Ok(EvalContext { view, presence, seed, crn, calls: Cell::new(0) })
    }

    pub fn presence(&self) -> PresenceMatrix {
        self.presence.matrix()
    }

    /// Number of Q evaluations served by this context.
    pub fn eval_count(&self) -> usize {
        self.calls.get()
    }

    /// Q estimate for an action binding against this context's state.
    pub fn q(&self, binding: &ActionBinding<'_>, params: &QNetParams) -> Result<QEstimate> {
        self.calls.set(self.calls.get() + 1);
        let salt = if self.crn { 0 } else { self.calls.get() as u64 };
        let seed = self.seed;
        let mut draw = |robot: u32, task: u32, l: usize, set: &crate::samples::SampleSet| {
            let idx = rng::mix(seed, &[0xa5, robot as u64, task as u64, l as u64, salt]);
            set.get((idx % set.len() as u64) as usize)
        };
        let (estimate, _) = q_forward(&self.view, binding, &self.presence, params, &mut draw, false)?;
        Ok(estimate)
    }

    /// Convenience: bind an MRRC matching (possibly partial) and evaluate.
    pub fn q_mrrc(
        &self,
        state: &'a ProblemState,
        action: &Matching,
        params: &QNetParams,
    ) -> Result<QEstimate> {
        let binding = ActionBinding::from_mrrc(state, &self.view, action)?;
        self.q(&binding, params)
    }
}

/// Presence probabilities for the alive tasks of a state, using the first
/// `m_presence` stored samples of every pair. A single-task state yields the
/// 1x1 zero matrix (there are no ordered pairs).
pub fn infer_presence(state: &ProblemState, params: &QNetParams) -> Result<PresenceMatrix> {
    params.validate()?;
    let view = StateView::from_mrrc(state);
    let tape = build_presence(&view, params, SampleIndexer::Sequential, false)?;
    Ok(tape.matrix())
}

/// Sampled Q value of (state, action). The action may be a partial matching;
/// unassigned tasks contribute zero input features and unassigned robots do
/// not enter the computation at all.
pub fn q_value(
    state: &ProblemState,
    action: &Matching,
    params: &QNetParams,
    rng: &mut rng::Rng,
) -> Result<QEstimate> {
    let view = StateView::from_mrrc(state);
    let ctx = EvalContext::new(view, params, rng.gen(), true)?;
    ctx.q_mrrc(state, action, params)
}
