//! Auction-fitted Q-iteration: rollouts with the auction policy,
//! parameter-space exploration, FIFO replay, and Bellman-target fitting.
//!
//! The Bellman target never applies a max over joint actions; the auction
//! policy selects the next-state action and its Q value backs the target.
//! Exploration perturbs a copy of the network weights for a whole episode
//! (epsilon-greedy action noise is deliberately absent: a randomly altered
//! assignment is catastrophic in this problem class).

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::auction::{adp_select_generic, MatchValue, QnetValue};
use crate::error::{Error, Result};
use crate::ipms::{epoch_step, generate_instance, IPMSInstance, IPMSState, IpmsNodeGraph};
use crate::mrrc::{
    enumerate_matchings, initial_state, is_terminal, step, Matching, MrrcEnv, ProblemState,
};
use crate::qnet::{loss_and_gradients, BatchItem, EvalContext, QNetParams, StateView};
use crate::rng::{self, Rng};

/// How the policy picks a joint assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSelection {
    /// Bidding/consensus auction (the method).
    Auction,
    /// Exhaustive argmax over all maximal matchings (ablation; guarded).
    ExhaustiveMax,
}

/// One stored interaction.
#[derive(Debug, Clone)]
pub struct Transition<S> {
    pub state: S,
    pub action: Matching,
    pub reward: f64,
    pub next: S,
    pub terminal: bool,
}

/// Environment abstraction shared by the gridworld and machine-scheduling
/// problems: seeded instances, value-semantics stepping, auction hooks, and
/// gradient-batch construction.
pub trait SchedulingEnv {
    type State: Clone;

    fn initial(&self, seed: u64) -> Result<Self::State>;
    fn is_terminal(&self, s: &Self::State) -> bool;
    fn step(&self, s: &Self::State, a: &Matching, rng: &mut Rng) -> Result<(Self::State, f64)>;

    /// Auction-selected action and the Q value of the returned matching.
    fn adp_action(
        &self,
        s: &Self::State,
        params: &QNetParams,
        seed: u64,
        crn: bool,
    ) -> Result<(Matching, Option<f64>)>;

    /// Exhaustive-argmax action (ablation arm). Guarded or unsupported.
    fn max_action(
        &self,
        _s: &Self::State,
        _params: &QNetParams,
        _seed: u64,
    ) -> Result<(Matching, Option<f64>)> {
        Err(Error::Validation("exhaustive max-action is not supported for this environment".into()))
    }

    /// A gradient-batch item borrowing from the stored state.
    fn batch_item<'a>(
        &self,
        s: &'a Self::State,
        a: &Matching,
        seed: u64,
        target: f64,
    ) -> Result<BatchItem<'a>>;

    /// Hard per-episode step cap guarding degenerate policies.
    fn step_cap(&self) -> usize;
}

fn select_action<E: SchedulingEnv>(
    env: &E,
    selection: ActionSelection,
    s: &E::State,
    params: &QNetParams,
    seed: u64,
    crn: bool,
) -> Result<(Matching, Option<f64>)> {
    match selection {
        ActionSelection::Auction => env.adp_action(s, params, seed, crn),
        ActionSelection::ExhaustiveMax => env.max_action(s, params, seed),
    }
}

/// Training hyperparameters. Defaults: gamma 0.99, plain SGD at 1e-3 with
/// gradient-norm clip 10, exploration probability decaying linearly from 1
/// to 0.05 over the first 30% of episodes, and noise scale 0.05 times each
/// matrix's RMS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub replay_capacity: usize,
    /// Parameter-noise scale as a fraction of each matrix's RMS.
    pub explore_sigma_scale: f64,
    /// Fraction of episodes over which exploration probability decays.
    pub explore_decay_frac: f64,
    pub explore_floor: f64,
    /// Evaluate every this many episodes (0 = only at the end).
    pub eval_every: usize,
    pub eval_instances: usize,
    pub action_selection: ActionSelection,
    /// Common random numbers across bids within one state.
    pub crn: bool,
    /// Rewards are multiplied by this factor inside Bellman targets, so the
    /// fitted values stay O(1) against the network's initialization scale.
    /// Pure scaling preserves every action ranking; evaluation returns are
    /// always reported unscaled.
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    /// Projected SGD onto the monotone weight cone (Q non-increasing in
    /// completion times). Keeps auction bid rankings coherent on partial
    /// matchings that the Bellman fit never visits.
    #[serde(default)]
    pub monotone_projection: bool,
    /// Return the parameters with the best periodic-evaluation return
    /// instead of the final ones (requires eval_every > 0).
    #[serde(default)]
    pub select_best: bool,
    pub seed: u64,
    /// Record wall-clock milliseconds per episode. Off by default so that
    /// re-runs of a seeded experiment are byte-identical.
    pub record_wall_time: bool,
}

fn default_reward_scale() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 1000,
            gamma: 0.99,
            batch_size: 16,
            learning_rate: 1e-3,
            grad_clip: 10.0,
            replay_capacity: 20_000,
            explore_sigma_scale: 0.05,
            explore_decay_frac: 0.3,
            explore_floor: 0.05,
            eval_every: 0,
            eval_instances: 20,
            action_selection: ActionSelection::Auction,
            crn: true,
            reward_scale: 1.0,
            monotone_projection: false,
            select_best: false,
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Validation(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return Err(Error::Validation("batch size and replay capacity must be positive".into()));
        }
        if self.learning_rate <= 0.0 || self.grad_clip <= 0.0 {
            return Err(Error::Validation("learning rate and clip must be positive".into()));
        }
        if !(self.reward_scale > 0.0) || !self.reward_scale.is_finite() {
            return Err(Error::Validation("reward scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.explore_decay_frac)
            || !(0.0..=1.0).contains(&self.explore_floor)
        {
            return Err(Error::Validation("exploration schedule out of range".into()));
        }
        Ok(())
    }

    /// Exploration probability at an episode index: linear decay from 1 to
    /// the floor over the first `explore_decay_frac` of episodes.
    pub fn explore_prob(&self, episode: usize) -> f64 {
        let span = (self.episodes as f64 * self.explore_decay_frac).ceil();
        if span <= 0.0 {
            return self.explore_floor;
        }
        let t = episode as f64 / span;
        if t >= 1.0 {
            self.explore_floor
        } else {
            1.0 - (1.0 - self.explore_floor) * t
        }
    }
}

/// Gaussian parameter-space noise: returns a perturbed copy; the source
/// parameters are never touched. Each matrix gets noise scaled to
/// `sigma_scale` times its own RMS.
pub fn perturb_params(params: &QNetParams, sigma_scale: f64, rng: &mut Rng) -> QNetParams {
    let mut noisy = params.clone();
    if sigma_scale <= 0.0 {
        return noisy;
    }
    for (_, m) in noisy.blocks_mut() {
        let rms = m.rms();
        if rms == 0.0 || !rms.is_finite() {
            continue;
        }
        let normal = Normal::new(0.0, sigma_scale * rms).unwrap();
        for v in &mut m.data {
            *v += normal.sample(rng);
        }
    }
    noisy
}

/// FIFO replay buffer.
pub struct ReplayBuffer<S> {
    items: VecDeque<Transition<S>>,
    capacity: usize,
}

impl<S> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        ReplayBuffer { items: VecDeque::with_capacity(capacity.min(65_536)), capacity }
    }

    pub fn push(&mut self, t: Transition<S>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Transition<S> {
        &self.items[idx]
    }

    /// Uniform sample of indices with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Vec<usize> {
        (0..batch).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}

/// Outcome of one episode rollout.
pub struct RolloutResult<S> {
    pub transitions: Vec<Transition<S>>,
    pub episode_return: f64,
    pub truncated: bool,
}

/// Roll one episode under the (possibly perturbed) parameters. If `explore`
/// is set, Gaussian parameter noise is drawn once and used for the entire
/// episode; the persistent parameters are untouched either way.
pub fn rollout<E: SchedulingEnv>(
    env: &E,
    selection: ActionSelection,
    state0: E::State,
    params: &QNetParams,
    explore: bool,
    sigma_scale: f64,
    crn: bool,
    rng_seed: u64,
) -> Result<RolloutResult<E::State>> {
    let mut noise_rng = rng::substream(rng_seed, &[0x01]);
    let mut step_rng = rng::substream(rng_seed, &[0x02]);
    let policy_params = if explore {
        perturb_params(params, sigma_scale, &mut noise_rng)
    } else {
        params.clone()
    };

    let mut transitions = Vec::new();
    let mut total = 0.0;
    let mut state = state0;
    let mut steps = 0usize;
    let cap = env.step_cap();
    while !env.is_terminal(&state) {
        if steps >= cap {
            return Ok(RolloutResult { transitions, episode_return: total, truncated: true });
        }
        let action_seed = rng::mix(rng_seed, &[0x03, steps as u64]);
        let (action, _) = select_action(env, selection, &state, &policy_params, action_seed, crn)?;
        let (next, reward) = env.step(&state, &action, &mut step_rng)?;
        total += reward;
        let terminal = env.is_terminal(&next);
        transitions.push(Transition {
            state: state.clone(),
            action,
            reward,
            next: next.clone(),
            terminal,
        });
        state = next;
        steps += 1;
    }
    Ok(RolloutResult { transitions, episode_return: total, truncated: false })
}

/// Bellman target: r for terminal transitions, otherwise
/// r + gamma * Q(next, policy(next)) with the policy-selected action.
/// The reward enters scaled by `reward_scale` (the fitted Q lives in the
/// scaled unit system).
pub fn bellman_target<E: SchedulingEnv>(
    env: &E,
    selection: ActionSelection,
    t: &Transition<E::State>,
    params: &QNetParams,
    gamma: f64,
    crn: bool,
    reward_scale: f64,
    seed: u64,
) -> Result<f64> {
    let r = t.reward * reward_scale;
    if t.terminal {
        return Ok(r);
    }
    if gamma == 0.0 {
        return Ok(r);
    }
    let (_, q) = select_action(env, selection, &t.next, params, seed, crn)?;
    Ok(r + gamma * q.unwrap_or(0.0))
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub wall_ms: u64,
    pub loss: Option<f64>,
    pub eval_mean_return: Option<f64>,
    pub eval_pct_optimal: Option<f64>,
    pub eval_pct_sga: Option<f64>,
    pub explore_prob: f64,
}

/// Periodic evaluation statistics an environment can report.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalMetrics {
    pub mean_return: f64,
    pub pct_optimal: Option<f64>,
    pub pct_sga: Option<f64>,
}

/// Hook computing evaluation metrics for the current parameters.
pub trait EvalHook {
    fn evaluate(&self, params: &QNetParams) -> Result<EvalMetrics>;
}

/// No evaluation.
pub struct NoEval;
impl EvalHook for NoEval {
    fn evaluate(&self, _params: &QNetParams) -> Result<EvalMetrics> {
        Ok(EvalMetrics::default())
    }
}

pub struct TrainOutcome {
    pub params: QNetParams,
    pub log: Vec<LogRow>,
    pub truncated_episodes: usize,
    /// Set when training aborted on a divergent (non-finite) loss; `params`
    /// then holds the last finite checkpoint.
    pub aborted: bool,
}

/// Auction-fitted Q-iteration: per episode, one exploration-scheduled
/// rollout feeds the replay buffer, then one SGD step fits a sampled batch
/// against targets computed with the current parameters.
pub fn train<E: SchedulingEnv>(
    env: &E,
    initial_params: QNetParams,
    config: &TrainConfig,
    eval: &dyn EvalHook,
) -> Result<TrainOutcome> {
    train_with_snapshots(env, initial_params, config, eval, |_, _| Ok(()))
}

/// `train` plus a per-episode snapshot callback (used for periodic
/// checkpoints).
pub fn train_with_snapshots<E: SchedulingEnv>(
    env: &E,
    initial_params: QNetParams,
    config: &TrainConfig,
    eval: &dyn EvalHook,
    mut on_episode: impl FnMut(usize, &QNetParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    initial_params.validate()?;
    let mut params = initial_params;
    let mut replay: ReplayBuffer<E::State> = ReplayBuffer::new(config.replay_capacity);
    let mut log = Vec::with_capacity(config.episodes);
    let mut truncated_episodes = 0usize;
    let mut best: Option<(f64, QNetParams)> = None;

    for episode in 0..config.episodes {
        let t0 = std::time::Instant::now();
        let ep_seed = rng::mix(config.seed, &[0xe0, episode as u64]);
        let explore_prob = config.explore_prob(episode);
        let explore = rng::substream(ep_seed, &[0x04]).gen::<f64>() < explore_prob;

        // Any non-finite value surfacing during the episode (rollout,
        // targets, or the fit itself) aborts training, handing back the
        // last finite parameters as the checkpoint.
        let state0 = env.initial(rng::mix(ep_seed, &[0x05]))?;
        let rolled = rollout(
            env,
            config.action_selection,
            state0,
            &params,
            explore,
            config.explore_sigma_scale,
            config.crn,
            rng::mix(ep_seed, &[0x06]),
        );
        let out = match rolled {
            Ok(out) => out,
            Err(Error::NonFinite(_)) => {
                return Ok(TrainOutcome { params, log, truncated_episodes, aborted: true });
            }
            Err(e) => return Err(e),
        };
        if out.truncated {
            truncated_episodes += 1;
        }
        for t in out.transitions {
            replay.push(t);
        }

        // One fitting step on a snapshot of the current parameters.
        let mut loss_out = None;
        let mut diverged = false;
        if replay.len() >= config.batch_size {
            let step_result = (|| -> Result<f64> {
                let mut batch_rng = rng::substream(ep_seed, &[0x07]);
                let indices = replay.sample_indices(config.batch_size, &mut batch_rng);
                let mut targets = Vec::with_capacity(indices.len());
                for (k, &idx) in indices.iter().enumerate() {
                    targets.push(bellman_target(
                        env,
                        config.action_selection,
                        replay.get(idx),
                        &params,
                        config.gamma,
                        config.crn,
                        config.reward_scale,
                        rng::mix(ep_seed, &[0x08, k as u64]),
                    )?);
                }
                let mut items = Vec::with_capacity(indices.len());
                for (k, (&idx, &target)) in indices.iter().zip(&targets).enumerate() {
                    let t = replay.get(idx);
                    items.push(env.batch_item(
                        &t.state,
                        &t.action,
                        rng::mix(ep_seed, &[0x09, k as u64]),
                        target,
                    )?);
                }
                let (loss, mut grads) = loss_and_gradients(&items, &params)?;
                grads.clip_global_norm(config.grad_clip);
                grads.apply_sgd(&mut params, config.learning_rate);
                if config.monotone_projection {
                    crate::qnet::project_monotone(&mut params);
                }
                Ok(loss)
            })();
            match step_result {
                Ok(loss) => loss_out = Some(loss),
                Err(Error::NonFinite(_)) => diverged = true,
                Err(e) => return Err(e),
            }
        }
        if diverged {
            log.push(LogRow {
                episode,
                wall_ms: 0,
                loss: None,
                eval_mean_return: None,
                eval_pct_optimal: None,
                eval_pct_sga: None,
                explore_prob,
            });
            return Ok(TrainOutcome { params, log, truncated_episodes, aborted: true });
        }

        let run_eval = config.eval_every > 0
            && ((episode + 1) % config.eval_every == 0 || episode + 1 == config.episodes);
        let metrics = if run_eval { Some(eval.evaluate(&params)?) } else { None };
        if config.select_best {
            if let Some(m) = &metrics {
                if best.as_ref().map_or(true, |(b, _)| m.mean_return > *b) {
                    best = Some((m.mean_return, params.clone()));
                }
            }
        }

        log.push(LogRow {
            episode,
            wall_ms: if config.record_wall_time { t0.elapsed().as_millis() as u64 } else { 0 },
            loss: loss_out,
            eval_mean_return: metrics.as_ref().map(|m| m.mean_return),
            eval_pct_optimal: metrics.as_ref().and_then(|m| m.pct_optimal),
            eval_pct_sga: metrics.as_ref().and_then(|m| m.pct_sga),
            explore_prob,
        });
        on_episode(episode, &params)?;
    }

    if let Some((_, chosen)) = best {
        params = chosen;
    }
    Ok(TrainOutcome { params, log, truncated_episodes, aborted: false })
}

/// Gridworld reward-collection environment bound to an instance family
/// (robot/task counts and the initial-age range).
pub struct MrrcSchedEnv {
    pub env: Arc<MrrcEnv>,
    pub n_robots: usize,
    pub n_tasks: usize,
    pub age_range: (u32, u32),
}

impl SchedulingEnv for MrrcSchedEnv {
    type State = ProblemState;

    fn initial(&self, seed: u64) -> Result<ProblemState> {
        initial_state(&self.env, self.n_robots, self.n_tasks, self.age_range, seed)
    }

    fn is_terminal(&self, s: &ProblemState) -> bool {
        is_terminal(s)
    }

    fn step(&self, s: &ProblemState, a: &Matching, rng: &mut Rng) -> Result<(ProblemState, f64)> {
        let (next, reward, _) = step(&self.env, s, a, rng)?;
        Ok((next, reward))
    }

    fn adp_action(
        &self,
        s: &ProblemState,
        params: &QNetParams,
        seed: u64,
        crn: bool,
    ) -> Result<(Matching, Option<f64>)> {
        let mut value = QnetValue::new(s, params, seed, crn)?;
        let robots: Vec<u32> = s.robots.iter().map(|r| r.id).collect();
        let tasks = s.alive_task_ids();
        let (matching, _, q) = adp_select_generic(&robots, &tasks, &mut value)?;
        Ok((matching, q))
    }

    fn max_action(
        &self,
        s: &ProblemState,
        params: &QNetParams,
        seed: u64,
    ) -> Result<(Matching, Option<f64>)> {
        let candidates = enumerate_matchings(s)?;
        let ctx = EvalContext::new(StateView::from_mrrc(s), params, seed, true)?;
        let mut best: Option<(Matching, f64)> = None;
        for m in candidates {
            let q = ctx.q_mrrc(s, &m, params)?.value;
            if best.as_ref().map_or(true, |(_, bq)| q > *bq) {
                best = Some((m, q));
            }
        }
        match best {
            Some((m, q)) => Ok((m, Some(q))),
            None => Ok((Matching::empty(), None)),
        }
    }

    fn batch_item<'a>(
        &self,
        s: &'a ProblemState,
        a: &Matching,
        seed: u64,
        target: f64,
    ) -> Result<BatchItem<'a>> {
        let view = StateView::from_mrrc(s);
        let binding = crate::qnet::ActionBinding::from_mrrc(s, &view, a)?;
        Ok(BatchItem { view, binding, seed, target })
    }

    fn step_cap(&self) -> usize {
        10 * (self.env.maze.width + self.env.maze.height) * self.n_tasks
    }
}

/// One machine-scheduling episode: the generated instance plus its state.
#[derive(Debug, Clone)]
pub struct IpmsEpisodeState {
    pub instance: Arc<IPMSInstance>,
    pub state: IPMSState,
}

/// Machine-scheduling environment over seeded instances.
pub struct IpmsSchedEnv {
    pub n_machines: usize,
    pub n_tasks: usize,
}

impl SchedulingEnv for IpmsSchedEnv {
    type State = IpmsEpisodeState;

    fn initial(&self, seed: u64) -> Result<IpmsEpisodeState> {
        let instance = Arc::new(generate_instance(seed, self.n_machines, self.n_tasks)?);
        let state = IPMSState::fresh(&instance);
        Ok(IpmsEpisodeState { instance, state })
    }

    fn is_terminal(&self, s: &IpmsEpisodeState) -> bool {
        s.state.is_terminal()
    }

    fn step(
        &self,
        s: &IpmsEpisodeState,
        a: &Matching,
        _rng: &mut Rng,
    ) -> Result<(IpmsEpisodeState, f64)> {
        let (next, elapsed) = epoch_step(&s.instance, &s.state, a)?;
        Ok((IpmsEpisodeState { instance: s.instance.clone(), state: next }, -elapsed))
    }

    fn adp_action(
        &self,
        s: &IpmsEpisodeState,
        params: &QNetParams,
        seed: u64,
        crn: bool,
    ) -> Result<(Matching, Option<f64>)> {
        let graph = IpmsNodeGraph::new(&s.instance, &s.state);
        let ctx = EvalContext::new(graph.owned_view(), params, seed, crn)?;
        let machines = s.state.assignable_machines();
        let tasks = s.state.assignable_tasks();
        struct Value<'g> {
            graph: &'g IpmsNodeGraph,
            instance: &'g IPMSInstance,
            state: &'g IPMSState,
            ctx: &'g EvalContext<'static>,
            params: &'g QNetParams,
        }
        impl MatchValue for Value<'_> {
            fn value(&mut self, pairs: &[(u32, u32)]) -> Result<f64> {
                let action = Matching::new(pairs.to_vec())?;
                let binding = self.graph.binding(self.instance, self.state, &action)?;
                Ok(self.ctx.q(&binding, self.params)?.value)
            }
        }
        let mut value = Value { graph: &graph, instance: &s.instance, state: &s.state, ctx: &ctx, params };
        let (matching, _, q) = adp_select_generic(&machines, &tasks, &mut value)?;
        // Epochs where nothing is assignable (all machines processing, or
        // all tasks locked) still have value carried by the running
        // machines; evaluate the empty matching explicitly.
        let q = match q {
            Some(v) => Some(v),
            None => {
                let binding = graph.binding(&s.instance, &s.state, &matching)?;
                Some(ctx.q(&binding, params)?.value)
            }
        };
        Ok((matching, q))
    }

    fn batch_item<'a>(
        &self,
        s: &'a IpmsEpisodeState,
        a: &Matching,
        seed: u64,
        target: f64,
    ) -> Result<BatchItem<'a>> {
        let graph = IpmsNodeGraph::new(&s.instance, &s.state);
        let binding = graph.binding(&s.instance, &s.state, a)?;
        Ok(BatchItem { view: graph.owned_view(), binding, seed, target })
    }

    fn step_cap(&self) -> usize {
        // One completion per epoch, plus slack for empty assignment epochs.
        4 * self.n_tasks + 8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_maze, MotionModel};
    use crate::mrrc::RewardRule;
    use crate::qnet::ArchConfig;

    fn sched_env(n_robots: usize, n_tasks: usize) -> MrrcSchedEnv {
        let maze = generate_maze(7, 11, 11, 0.0).unwrap();
        let env = MrrcEnv::new(maze, MotionModel::deterministic(), RewardRule::Linear)
            .with_edge_samples(2);
        MrrcSchedEnv { env: Arc::new(env), n_robots, n_tasks, age_range: (0, 60) }
    }

    fn tiny_params(seed: u64) -> QNetParams {
        QNetParams::init(ArchConfig::test_profile(), seed).unwrap()
    }

    /// Handcrafted weights making Q = minus the sum of assigned completion
    /// times: a greedy make-haste policy that always terminates episodes.
    fn distance_greedy_params() -> QNetParams {
        let mut p = tiny_params(0);
        for (_, m) in p.blocks_mut() {
            m.scale(0.0);
        }
        *p.e4.at_mut(0, 0) = 1.0; // mu[0] = x
        *p.e6.at_mut(0, 0) = 1.0; // gamma[0] = mu[0]
        *p.e7.at_mut(0, 0) = -1.0; // q = -sum x
        p
    }

    #[test]
    fn zero_sigma_exploration_matches_exploitation() {
        let env = sched_env(2, 3);
        let params = tiny_params(1);
        let s0 = env.initial(5).unwrap();
        let a = rollout(&env, ActionSelection::Auction, s0.clone(), &params, true, 0.0, true, 42)
            .unwrap();
        let b = rollout(&env, ActionSelection::Auction, s0, &params, false, 0.0, true, 42).unwrap();
        assert_eq!(a.episode_return, b.episode_return);
        assert_eq!(a.transitions.len(), b.transitions.len());
        for (x, y) in a.transitions.iter().zip(&b.transitions) {
            assert_eq!(x.action, y.action);
            assert_eq!(x.reward, y.reward);
        }
    }

    #[test]
    fn single_task_return_is_service_reward() {
        let env = sched_env(1, 1);
        let params = tiny_params(2);
        let s0 = env.initial(9).unwrap();
        let d = s0.rt_edges.get((0, 0)).unwrap().mean() as u32;
        let age = s0.tasks[0].age;
        let out =
            rollout(&env, ActionSelection::Auction, s0, &params, false, 0.0, true, 7).unwrap();
        assert_eq!(out.transitions.len(), d as usize);
        let expect = crate::mrrc::reward(env.env.reward_rule, age + d - 1);
        assert_eq!(out.episode_return, expect);
        assert!(out.transitions.last().unwrap().terminal);
    }

    /// Replayed-simulation oracle: feeding the recorded actions back through
    /// the dynamics with the same step stream reproduces the rewards.
    #[test]
    fn rollout_replay_consistency() {
        let env = sched_env(2, 4);
        let params = distance_greedy_params();
        let s0 = env.initial(11).unwrap();
        let out = rollout(&env, ActionSelection::Auction, s0.clone(), &params, false, 0.0, true, 13)
            .unwrap();
        assert!(!out.truncated);

        let mut step_rng = rng::substream(13, &[0x02]);
        let mut state = s0;
        let mut total = 0.0;
        for t in &out.transitions {
            let (next, reward) = env.step(&state, &t.action, &mut step_rng).unwrap();
            assert_eq!(reward, t.reward);
            total += reward;
            state = next;
        }
        assert_eq!(total, out.episode_return);
        assert!(env.is_terminal(&state));
        // Conservation: all tasks served exactly once over the episode.
        let served: f64 = out.transitions.iter().map(|t| t.reward).filter(|r| *r > 0.0).count() as f64;
        assert!(served >= 1.0);
    }

    #[test]
    fn bellman_terminal_and_zero_gamma() {
        let env = sched_env(1, 2);
        let params = tiny_params(4);
        let s = env.initial(3).unwrap();
        let t = Transition {
            state: s.clone(),
            action: Matching::new(vec![(0, 0)]).unwrap(),
            reward: 150.0,
            next: s.clone(),
            terminal: true,
        };
        assert_eq!(
            bellman_target(&env, ActionSelection::Auction, &t, &params, 0.99, true, 1.0, 1)
                .unwrap(),
            150.0
        );
        let t2 = Transition { terminal: false, ..t };
        assert_eq!(
            bellman_target(&env, ActionSelection::Auction, &t2, &params, 0.0, true, 1.0, 1)
                .unwrap(),
            150.0
        );
        // Scaled rewards scale the terminal target.
        let t3 = Transition { terminal: true, ..t2 };
        assert_eq!(
            bellman_target(&env, ActionSelection::Auction, &t3, &params, 0.99, true, 0.01, 1)
                .unwrap(),
            1.5
        );
    }

    /// Enumeration oracle: with one robot and two tasks in the next state,
    /// the auction target equals r + gamma * max of the two assignment Qs.
    #[test]
    fn bellman_matches_enumeration_for_single_robot() {
        let env = sched_env(1, 2);
        let params = tiny_params(5);
        let next = env.initial(21).unwrap();
        let t = Transition {
            state: next.clone(),
            action: Matching::new(vec![(0, 0)]).unwrap(),
            reward: 10.0,
            next: next.clone(),
            terminal: false,
        };
        let seed = 99;
        let target =
            bellman_target(&env, ActionSelection::Auction, &t, &params, 0.9, true, 1.0, seed)
                .unwrap();

        let mut value = QnetValue::new(&next, &params, seed, true).unwrap();
        let q0 = value.value(&[(0, 0)]).unwrap();
        let q1 = value.value(&[(0, 1)]).unwrap();
        assert!((target - (10.0 + 0.9 * q0.max(q1))).abs() < 1e-12);
    }

    #[test]
    fn replay_fifo_eviction() {
        let mut buf: ReplayBuffer<u32> = ReplayBuffer::new(3);
        for i in 0..5u32 {
            buf.push(Transition {
                state: i,
                action: Matching::empty(),
                reward: 0.0,
                next: i,
                terminal: false,
            });
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.get(0).state, 2);
        assert_eq!(buf.get(2).state, 4);
    }

    #[test]
    fn perturbation_leaves_source_untouched() {
        let params = tiny_params(6);
        let before = params.clone();
        let noisy = perturb_params(&params, 0.1, &mut rng::stream(1));
        assert_eq!(params, before);
        assert_ne!(noisy, before);
    }

    #[test]
    fn zero_episodes_returns_initial_params() {
        let env = sched_env(1, 1);
        let params = tiny_params(7);
        let config = TrainConfig { episodes: 0, ..TrainConfig::default() };
        let out = train(&env, params.clone(), &config, &NoEval).unwrap();
        assert_eq!(out.params, params);
        assert!(out.log.is_empty());
        assert!(!out.aborted);
    }

    /// Single-sample regression oracle: repeatedly fitting one deterministic
    /// transition against a fixed target drives the loss to zero, monotone
    /// after burn-in.
    #[test]
    fn repeated_transition_regression_converges() {
        let env = sched_env(1, 2);
        let mut params = tiny_params(8);
        let s = env.initial(31).unwrap();
        let action = Matching::new(vec![(0, 0)]).unwrap();
        let target = 25.0;

        let mut losses = Vec::new();
        for _ in 0..3000 {
            let item = env.batch_item(&s, &action, 55, target).unwrap();
            let (loss, mut grads) = loss_and_gradients(&[item], &params).unwrap();
            grads.clip_global_norm(10.0);
            grads.apply_sgd(&mut params, 2e-4);
            losses.push(loss);
        }
        let burn = 50;
        for w in losses[burn..].windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss increased after burn-in: {} -> {}", w[0], w[1]);
        }
        assert!(losses.last().unwrap() < &1e-3, "final loss {}", losses.last().unwrap());
    }

    /// Poisoned weights overflow the forward pass; training must abort
    /// gracefully with the last finite checkpoint rather than error out.
    #[test]
    fn divergent_loss_aborts_with_checkpoint() {
        let env = sched_env(1, 2);
        let mut params = tiny_params(11);
        for (_, m) in params.blocks_mut() {
            m.scale(1e200);
        }
        let config = TrainConfig { episodes: 3, batch_size: 1, ..TrainConfig::default() };
        let out = train(&env, params, &config, &NoEval).unwrap();
        assert!(out.aborted);
    }

    #[test]
    fn training_is_deterministic_given_seeds() {
        let env = sched_env(2, 3);
        let params = tiny_params(9);
        let config = TrainConfig {
            episodes: 6,
            batch_size: 4,
            eval_every: 3,
            eval_instances: 2,
            seed: 123,
            ..TrainConfig::default()
        };
        struct FixedEval;
        impl EvalHook for FixedEval {
            fn evaluate(&self, _p: &QNetParams) -> Result<EvalMetrics> {
                Ok(EvalMetrics { mean_return: 1.0, pct_optimal: None, pct_sga: None })
            }
        }
        let a = train(&env, params.clone(), &config, &FixedEval).unwrap();
        let b = train(&env, params, &config, &FixedEval).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn ipms_env_rolls_out_and_fits() {
        let env = IpmsSchedEnv { n_machines: 2, n_tasks: 4 };
        let params = QNetParams::init(
            ArchConfig { feat_dim: 2, ..ArchConfig::test_profile() },
            10,
        )
        .unwrap();
        let s0 = env.initial(77).unwrap();
        let out = rollout(&env, ActionSelection::Auction, s0, &params, false, 0.0, true, 3).unwrap();
        assert!(!out.truncated);
        // Return is minus the make-span.
        let makespan: f64 = out.transitions.iter().map(|t| -t.reward).sum();
        assert!(makespan >= out.transitions.len() as f64); // setups+procs are >= 1 apiece here
        assert!(out.episode_return < 0.0);

        // One gradient step works end to end.
        let t = &out.transitions[0];
        let item = env.batch_item(&t.state, &t.action, 5, -100.0).unwrap();
        let (loss, grads) = loss_and_gradients(&[item], &params).unwrap();
        assert!(loss.is_finite());
        assert!(grads.is_finite());
    }
}
