//! The multi-robot reward collection MDP: state graph, feasible matchings,
//! reward rules, and transition dynamics.
//!
//! A state is the directed graph over robots and alive tasks whose edges hold
//! completion-time distributions; an action is a maximal bipartite matching
//! between robots and tasks, recomputed every time-step (moving robots may be
//! redirected). A task is serviced the moment its assigned robot arrives, and
//! the reward depends only on the task's age at service.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Cell, CompletionTimeDistribution, Maze, MotionModel, RoutePlan};
use crate::rng::Rng;

pub type RobotId = u32;
pub type TaskId = u32;

/// Default number of stored samples per completion-time edge.
pub const DEFAULT_EDGE_SAMPLES: usize = 100;

/// Age cap reference: linear rewards start from this value, and age features
/// are normalized by the maximum initial age (100) elsewhere.
pub const LINEAR_REWARD_BASE: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RewardRule {
    /// f(age) = max(200 - age, 0)
    Linear,
    /// f(age) = lambda^age
    Nonlinear { lambda: f64 },
}

/// Reward collected when serving a task at the given age.
pub fn reward(rule: RewardRule, age: u32) -> f64 {
    match rule {
        RewardRule::Linear => (LINEAR_REWARD_BASE - age as f64).max(0.0),
        RewardRule::Nonlinear { lambda } => lambda.powi(age as i32),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub id: RobotId,
    pub position: Cell,
    /// Task committed by the most recently applied action, if it survived.
    pub assigned: Option<TaskId>,
}

impl Robot {
    pub fn busy(&self) -> bool {
        self.assigned.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub position: Cell,
    pub age: u32,
    pub alive: bool,
}

/// Sorted association list from id pairs to completion-time distributions.
/// (A plain map would need string keys to serialize as JSON.)
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    entries: Vec<((u32, u32), CompletionTimeDistribution)>,
}

impl EdgeSet {
    pub fn new() -> Self {
        EdgeSet { entries: Vec::new() }
    }

    pub fn insert(&mut self, key: (u32, u32), dist: CompletionTimeDistribution) {
        match self.entries.binary_search_by_key(&key, |(k, _)| *k) {
            Ok(i) => self.entries[i].1 = dist,
            Err(i) => self.entries.insert(i, (key, dist)),
        }
    }

    pub fn get(&self, key: (u32, u32)) -> Option<&CompletionTimeDistribution> {
        self.entries
            .binary_search_by_key(&key, |(k, _)| *k)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    pub fn retain(&mut self, mut keep: impl FnMut((u32, u32)) -> bool) {
        self.entries.retain(|(k, _)| keep(*k));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u32, u32), &CompletionTimeDistribution)> {
        self.entries.iter().map(|(k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// An action: a bipartite matching between robots and alive tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    pairs: Vec<(RobotId, TaskId)>,
}

impl Matching {
    pub fn empty() -> Self {
        Matching { pairs: Vec::new() }
    }

    pub fn new(mut pairs: Vec<(RobotId, TaskId)>) -> Result<Self> {
        pairs.sort_unstable();
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InfeasibleMatching(format!(
                    "robot {} appears twice",
                    w[0].0
                )));
            }
        }
        let mut tasks: Vec<TaskId> = pairs.iter().map(|p| p.1).collect();
        tasks.sort_unstable();
        for w in tasks.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InfeasibleMatching(format!("task {} appears twice", w[0])));
            }
        }
        Ok(Matching { pairs })
    }

    pub fn pairs(&self) -> &[(RobotId, TaskId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn task_for(&self, robot: RobotId) -> Option<TaskId> {
        self.pairs.iter().find(|(r, _)| *r == robot).map(|(_, t)| *t)
    }

    pub fn robot_for(&self, task: TaskId) -> Option<RobotId> {
        self.pairs.iter().find(|(_, t)| *t == task).map(|(r, _)| *r)
    }

    /// Compact text form for logs: "r0:t3|r1:t5".
    pub fn to_log_string(&self) -> String {
        if self.pairs.is_empty() {
            return "-".into();
        }
        self.pairs
            .iter()
            .map(|(r, t)| format!("r{r}:t{t}"))
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// The MRRC problem state graph G_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemState {
    pub robots: Vec<Robot>,
    pub tasks: Vec<Task>,
    pub rt_edges: EdgeSet,
    pub tt_edges: EdgeSet,
    pub clock: u32,
}

impl ProblemState {
    pub fn alive_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(|t| t.alive)
    }

    pub fn alive_task_ids(&self) -> Vec<TaskId> {
        self.alive_tasks().map(|t| t.id).collect()
    }

    pub fn n_alive(&self) -> usize {
        self.alive_tasks().count()
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn robot(&self, id: RobotId) -> Option<&Robot> {
        self.robots.iter().find(|r| r.id == id)
    }

    /// Feasibility: pairs reference known robots and alive tasks, and the
    /// matching is maximal (no unassigned robot/alive-task pair remains).
    pub fn validate_action(&self, action: &Matching) -> Result<()> {
        for &(r, t) in action.pairs() {
            if self.robot(r).is_none() {
                return Err(Error::InfeasibleMatching(format!("unknown robot {r}")));
            }
            match self.task(t) {
                None => return Err(Error::InfeasibleMatching(format!("unknown task {t}"))),
                Some(task) if !task.alive => {
                    return Err(Error::InfeasibleMatching(format!("task {t} already served")))
                }
                _ => {}
            }
        }
        let n_expected = self.robots.len().min(self.n_alive());
        if action.len() < n_expected {
            return Err(Error::InfeasibleMatching(format!(
                "matching of size {} is not maximal (expected {n_expected})",
                action.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Episode ends when every task has been served.
pub fn is_terminal(state: &ProblemState) -> bool {
    state.n_alive() == 0
}

/// Environment handle: maze, motion model, reward rule, and a cache of
/// per-goal routing plans. Sharable across worker threads.
pub struct MrrcEnv {
    pub maze: Maze,
    pub motion: MotionModel,
    pub reward_rule: RewardRule,
    pub edge_samples: usize,
    plans: Mutex<HashMap<Cell, Arc<RoutePlan>>>,
}

impl MrrcEnv {
    pub fn new(maze: Maze, motion: MotionModel, reward_rule: RewardRule) -> Self {
        MrrcEnv {
            maze,
            motion,
            reward_rule,
            edge_samples: DEFAULT_EDGE_SAMPLES,
            plans: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_edge_samples(mut self, n: usize) -> Self {
        assert!(n >= 1);
        self.edge_samples = n;
        self
    }

    /// Routing plan toward a goal cell, computed once and cached.
    pub fn plan_for(&self, goal: Cell) -> Result<Arc<RoutePlan>> {
        let mut cache = self.plans.lock().unwrap();
        if let Some(plan) = cache.get(&goal) {
            return Ok(plan.clone());
        }
        let plan = Arc::new(RoutePlan::new(&self.maze, &self.motion, goal)?);
        cache.insert(goal, plan.clone());
        Ok(plan)
    }

    fn edge(
        &self,
        from: Cell,
        to: Cell,
        rng: &mut Rng,
    ) -> Result<CompletionTimeDistribution> {
        self.plan_for(to)?
            .completion_times(&self.maze, &self.motion, from, self.edge_samples, rng)
    }
}

/// Seeded initial state: robots and tasks on distinct open cells, ages
/// uniform in `age_range` (inclusive), and all edge distributions populated.
pub fn initial_state(
    env: &MrrcEnv,
    n_robots: usize,
    n_tasks: usize,
    age_range: (u32, u32),
    seed: u64,
) -> Result<ProblemState> {
    if n_robots < 1 || n_tasks < 1 {
        return Err(Error::Validation("need at least one robot and one task".into()));
    }
    if age_range.0 > age_range.1 {
        return Err(Error::Validation(format!(
            "age range [{}, {}] is inverted",
            age_range.0, age_range.1
        )));
    }
    let mut open = env.maze.open_cells();
    if open.len() < n_robots + n_tasks {
        return Err(Error::Validation(format!(
            "maze has {} open cells but {} are needed",
            open.len(),
            n_robots + n_tasks
        )));
    }

    let mut rng = crate::rng::substream(seed, &[0x51a7e]);
    open.shuffle(&mut rng);
    let robots: Vec<Robot> = (0..n_robots)
        .map(|i| Robot { id: i as RobotId, position: open[i], assigned: None })
        .collect();
    let tasks: Vec<Task> = (0..n_tasks)
        .map(|i| Task {
            id: i as TaskId,
            position: open[n_robots + i],
            age: rng.gen_range(age_range.0..=age_range.1),
            alive: true,
        })
        .collect();

    let mut state = ProblemState {
        robots,
        tasks,
        rt_edges: EdgeSet::new(),
        tt_edges: EdgeSet::new(),
        clock: 0,
    };
    let mut edge_rng = crate::rng::substream(seed, &[0xed9e5]);
    refresh_rt_edges(env, &mut state, &mut edge_rng)?;
    for i in 0..state.tasks.len() {
        for j in 0..state.tasks.len() {
            if i == j {
                continue;
            }
            let (from, to) = (state.tasks[i].position, state.tasks[j].position);
            let dist = env.edge(from, to, &mut edge_rng)?;
            state.tt_edges.insert((state.tasks[i].id, state.tasks[j].id), dist);
        }
    }
    Ok(state)
}

fn refresh_rt_edges(env: &MrrcEnv, state: &mut ProblemState, rng: &mut Rng) -> Result<()> {
    let mut edges = EdgeSet::new();
    for robot in &state.robots {
        for task in state.tasks.iter().filter(|t| t.alive) {
            let dist = env.edge(robot.position, task.position, rng)?;
            edges.insert((robot.id, task.id), dist);
        }
    }
    state.rt_edges = edges;
    Ok(())
}

/// One time-step: robots advance toward their assigned tasks, arrivals are
/// serviced (reward uses the age before this step's increment), surviving
/// task ages and the clock tick, and the edge distributions are refreshed
/// for the new robot positions.
pub fn step(
    env: &MrrcEnv,
    state: &ProblemState,
    action: &Matching,
    rng: &mut Rng,
) -> Result<(ProblemState, f64, Vec<TaskId>)> {
    state.validate_action(action)?;
    let mut next = state.clone();

    let mut served: Vec<TaskId> = Vec::new();
    let mut total_reward = 0.0;
    for robot in next.robots.iter_mut() {
        robot.assigned = action.task_for(robot.id);
        let Some(task_id) = robot.assigned else { continue };
        let goal = state.task(task_id).unwrap().position;
        let plan = env.plan_for(goal)?;
        robot.position = plan.advance(&env.maze, &env.motion, robot.position, rng);
        if robot.position == goal {
            served.push(task_id);
            robot.assigned = None;
        }
    }

    for task in next.tasks.iter_mut() {
        if !task.alive {
            continue;
        }
        if served.contains(&task.id) {
            total_reward += reward(env.reward_rule, task.age);
            task.alive = false;
        } else {
            task.age += 1;
        }
    }
    next.clock += 1;

    next.tt_edges.retain(|(a, b)| !served.contains(&a) && !served.contains(&b));
    refresh_rt_edges(env, &mut next, rng)?;

    served.sort_unstable();
    Ok((next, total_reward, served))
}

/// All maximal matchings for the state. Guarded: |robots| * |alive tasks|
/// must not exceed 64.
pub fn enumerate_matchings(state: &ProblemState) -> Result<Vec<Matching>> {
    let tasks = state.alive_task_ids();
    let robots: Vec<RobotId> = state.robots.iter().map(|r| r.id).collect();
    if robots.len() * tasks.len() > 64 {
        return Err(Error::GuardExceeded(format!(
            "{} robots x {} tasks exceeds the enumeration guard of 64",
            robots.len(),
            tasks.len()
        )));
    }
    if tasks.is_empty() {
        return Ok(vec![Matching::empty()]);
    }

    // The bipartite graph is complete, so maximal matchings are exactly the
    // injections from the smaller side into the larger.
    let mut out = Vec::new();
    let k = robots.len().min(tasks.len());
    let mut chosen: Vec<(RobotId, TaskId)> = Vec::with_capacity(k);
    fn recurse(
        robots: &[RobotId],
        tasks: &[TaskId],
        used_tasks: &mut Vec<bool>,
        chosen: &mut Vec<(RobotId, TaskId)>,
        idx: usize,
        k: usize,
        out: &mut Vec<Matching>,
    ) {
        if chosen.len() == k {
            out.push(Matching::new(chosen.clone()).unwrap());
            return;
        }
        // Skip robots only when robots outnumber tasks.
        let remaining_robots = robots.len() - idx;
        let needed = k - chosen.len();
        if remaining_robots > needed {
            recurse(robots, tasks, used_tasks, chosen, idx + 1, k, out);
        }
        for (ti, &t) in tasks.iter().enumerate() {
            if !used_tasks[ti] {
                used_tasks[ti] = true;
                chosen.push((robots[idx], t));
                recurse(robots, tasks, used_tasks, chosen, idx + 1, k, out);
                chosen.pop();
                used_tasks[ti] = false;
            }
        }
    }
    let mut used = vec![false; tasks.len()];
    recurse(&robots, &tasks, &mut used, &mut chosen, 0, k, &mut out);
    out.sort_by(|a, b| a.pairs().cmp(b.pairs()));
    out.dedup();
    Ok(out)
}
