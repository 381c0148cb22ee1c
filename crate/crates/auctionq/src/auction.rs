//! Auction-based assignment: iterative bidding and consensus that builds a
//! maximal matching with polynomially many Q evaluations.
//!
//! Each round, every unassigned robot evaluates extending the committed
//! partial matching by one edge to each unassigned task, ignoring the other
//! unassigned robots, and bids its best extension. The auctioneer commits the
//! single best bid. Rounds repeat until no edge can be added. The procedure
//! is kept sequential; the bidding structure exists for fidelity and
//! testability, not for distribution.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mrrc::{Matching, ProblemState, RobotId, TaskId};
use crate::qnet::{EvalContext, QNetParams, StateView};
use crate::rng::Rng;

/// The matching committed so far, plus the round counter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialMatching {
    pub pairs: Vec<(RobotId, TaskId)>,
    pub round: usize,
}

impl PartialMatching {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn has_robot(&self, r: RobotId) -> bool {
        self.pairs.iter().any(|(pr, _)| *pr == r)
    }

    pub fn has_task(&self, t: TaskId) -> bool {
        self.pairs.iter().any(|(_, pt)| *pt == t)
    }
}

/// A robot's best extension of the current partial matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub robot: RobotId,
    pub task: TaskId,
    pub value: f64,
}

/// One consensus round for the optional trace log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub bids: Vec<Bid>,
    pub winner: Bid,
}

/// Q-value oracle over partial matchings. The auction never interprets the
/// value beyond ranking, so stubs are fine in tests.
pub trait MatchValue {
    fn value(&mut self, pairs: &[(RobotId, TaskId)]) -> Result<f64>;
}

impl<F: FnMut(&[(RobotId, TaskId)]) -> f64> MatchValue for F {
    fn value(&mut self, pairs: &[(RobotId, TaskId)]) -> Result<f64> {
        Ok(self(pairs))
    }
}

/// Best bid for one robot: argmax over unassigned tasks of the value of
/// `partial + (robot, task)`, ties toward the lower task id. None when no
/// unassigned task remains.
pub fn best_bid_generic(
    robot: RobotId,
    partial: &PartialMatching,
    tasks: &[TaskId],
    value: &mut dyn MatchValue,
) -> Result<Option<Bid>> {
    let mut best: Option<Bid> = None;
    let mut candidate = partial.pairs.clone();
    for &t in tasks.iter().filter(|&&t| !partial.has_task(t)) {
        candidate.push((robot, t));
        let v = value.value(&candidate)?;
        candidate.pop();
        let better = match &best {
            None => true,
            Some(b) => v > b.value || (v == b.value && t < b.task),
        };
        if better {
            best = Some(Bid { robot, task: t, value: v });
        }
    }
    Ok(best)
}

/// Full bidding/consensus loop. Returns the maximal matching, the per-round
/// trace, and the value of the final matching (None when no round ran).
pub fn adp_select_generic(
    robots: &[RobotId],
    tasks: &[TaskId],
    value: &mut dyn MatchValue,
) -> Result<(Matching, Vec<RoundTrace>, Option<f64>)> {
    let mut partial = PartialMatching::empty();
    let mut trace = Vec::new();
    let mut final_value = None;
    loop {
        partial.round += 1;
        let mut bids: Vec<Bid> = Vec::new();
        for &r in robots.iter().filter(|&&r| !partial.has_robot(r)) {
            if let Some(bid) = best_bid_generic(r, &partial, tasks, value)? {
                bids.push(bid);
            }
        }
        // Consensus: the single best bid wins; ties break toward the lower
        // robot id, then the lower task id.
        let Some(winner) = bids.iter().copied().reduce(|a, b| {
            if b.value > a.value
                || (b.value == a.value && (b.robot, b.task) < (a.robot, a.task))
            {
                b
            } else {
                a
            }
        }) else {
            break;
        };
        partial.pairs.push((winner.robot, winner.task));
        final_value = Some(winner.value);
        trace.push(RoundTrace { round: partial.round, bids, winner });
    }
    Ok((Matching::new(partial.pairs)?, trace, final_value))
}

/// Number of Q evaluations `adp_select` makes for the given side sizes:
/// sum over rounds of (#unassigned robots x #unassigned tasks).
pub fn count_q_evals_for(n_robots: usize, n_tasks: usize) -> usize {
    let rounds = n_robots.min(n_tasks);
    (0..rounds).map(|k| (n_robots - k) * (n_tasks - k)).sum()
}

/// Evaluation count for a state.
pub fn count_q_evals(state: &ProblemState) -> usize {
    count_q_evals_for(state.robots.len(), state.n_alive())
}

/// Q oracle backed by the embedding network, sharing one evaluation context
/// (and therefore common random numbers) across all bids for the state.
pub struct QnetValue<'a> {
    pub state: &'a ProblemState,
    pub ctx: EvalContext<'a>,
    pub params: &'a QNetParams,
}

impl<'a> QnetValue<'a> {
    pub fn new(
        state: &'a ProblemState,
        params: &'a QNetParams,
        seed: u64,
        crn: bool,
    ) -> Result<Self> {
        let ctx = EvalContext::new(StateView::from_mrrc(state), params, seed, crn)?;
        Ok(QnetValue { state, ctx, params })
    }

    pub fn eval_count(&self) -> usize {
        self.ctx.eval_count()
    }
}

impl MatchValue for QnetValue<'_> {
    fn value(&mut self, pairs: &[(RobotId, TaskId)]) -> Result<f64> {
        let action = Matching::new(pairs.to_vec())?;
        Ok(self.ctx.q_mrrc(self.state, &action, self.params)?.value)
    }
}

/// Best bid for one robot against an MRRC state.
pub fn best_bid(
    robot: RobotId,
    partial: &PartialMatching,
    state: &ProblemState,
    params: &QNetParams,
    rng: &mut Rng,
) -> Result<Option<Bid>> {
    use rand::Rng as _;
    let mut value = QnetValue::new(state, params, rng.gen(), true)?;
    let tasks = state.alive_task_ids();
    best_bid_generic(robot, partial, &tasks, &mut value)
}

/// Auction-based policy for an MRRC state: returns the selected maximal
/// matching.
pub fn adp_select(
    state: &ProblemState,
    params: &QNetParams,
    rng: &mut Rng,
) -> Result<Matching> {
    Ok(adp_select_full(state, params, rng)?.0)
}

/// Auction-based policy returning the matching, the Q value of the final
/// matching (None when the state has no robot/task pair), and the number of
/// Q evaluations performed.
pub fn adp_select_full(
    state: &ProblemState,
    params: &QNetParams,
    rng: &mut Rng,
) -> Result<(Matching, Option<f64>, usize)> {
    use rand::Rng as _;
    let mut value = QnetValue::new(state, params, rng.gen(), true)?;
    let robots: Vec<RobotId> = state.robots.iter().map(|r| r.id).collect();
    let tasks = state.alive_task_ids();
    let (matching, _, q) = adp_select_generic(&robots, &tasks, &mut value)?;
    Ok((matching, q, value.eval_count()))
}
