//! Comparison methods: the sequential greedy assignment policy, an exact
//! optimum for small deterministic instances, and a greedy + local-search
//! make-span heuristic for machine scheduling.

use std::collections::HashMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::gridworld::MotionMode;
use crate::ipms::IPMSInstance;
use crate::mrrc::{Matching, MrrcEnv, ProblemState, RewardRule, RobotId, TaskId};
use crate::rng;

/// Reward at a (possibly fractional) age; the continuous extension used by
/// greedy estimates.
pub fn reward_at(rule: RewardRule, age: f64) -> f64 {
    match rule {
        RewardRule::Linear => (crate::mrrc::LINEAR_REWARD_BASE - age).max(0.0),
        RewardRule::Nonlinear { lambda } => lambda.powf(age),
    }
}

/// Sequential greedy assignment: repeatedly commit the (robot, task) pair
/// with the best immediate estimated reward — the reward rule evaluated at
/// the task's age plus the mean completion time of that edge — until the
/// matching is maximal. Ties break toward (lower robot id, lower task id).
pub fn sga_policy(rule: RewardRule, state: &ProblemState) -> Matching {
    let mut free_robots: Vec<RobotId> = state.robots.iter().map(|r| r.id).collect();
    let mut free_tasks: Vec<TaskId> = state.alive_task_ids();
    let mut pairs = Vec::new();
    while !free_robots.is_empty() && !free_tasks.is_empty() {
        let mut best: Option<(f64, RobotId, TaskId)> = None;
        for &r in &free_robots {
            for &t in &free_tasks {
                let Some(edge) = state.rt_edges.get((r, t)) else { continue };
                let age = state.task(t).unwrap().age as f64;
                let v = reward_at(rule, age + edge.mean());
                let better = match &best {
                    None => true,
                    Some((bv, br, bt)) => {
                        v > *bv || (v == *bv && (r, t) < (*br, *bt))
                    }
                };
                if better {
                    best = Some((v, r, t));
                }
            }
        }
        let Some((_, r, t)) = best else { break };
        free_robots.retain(|&x| x != r);
        free_tasks.retain(|&x| x != t);
        pairs.push((r, t));
    }
    Matching::new(pairs).expect("greedy pairs are disjoint by construction")
}

/// Result of the exhaustive search for small deterministic instances.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub optimal_reward: f64,
    pub optimal_first_action: Matching,
    pub explored: usize,
    /// Per-robot task sequences realizing the optimum.
    pub plan: Vec<Vec<TaskId>>,
}

const ORACLE_MAX_ROBOTS: usize = 3;
const ORACLE_MAX_TASKS: usize = 8;

/// Exact maximum total reward via depth-first search with memoization over
/// (unserved-task set, per-robot location/availability), using deterministic
/// completion times. Children are expanded best-bound-first and cut off with
/// an admissible bound (every remaining task served at its earliest possible
/// time).
pub fn exact_optimal(env: &MrrcEnv, state: &ProblemState) -> Result<OracleResult> {
    exact_optimal_impl(env, state, true)
}

/// Pruning-off variant for cross-checks.
pub fn exact_optimal_unpruned(env: &MrrcEnv, state: &ProblemState) -> Result<OracleResult> {
    exact_optimal_impl(env, state, false)
}

fn exact_optimal_impl(env: &MrrcEnv, state: &ProblemState, prune: bool) -> Result<OracleResult> {
    if env.motion.mode != MotionMode::Deterministic {
        return Err(Error::Validation(
            "the exact oracle requires deterministic motion".into(),
        ));
    }
    let tasks: Vec<&crate::mrrc::Task> = state.tasks.iter().filter(|t| t.alive).collect();
    if state.robots.len() > ORACLE_MAX_ROBOTS || tasks.len() > ORACLE_MAX_TASKS {
        return Err(Error::GuardExceeded(format!(
            "oracle guard: {} robots x {} tasks (max {ORACLE_MAX_ROBOTS} x {ORACLE_MAX_TASKS})",
            state.robots.len(),
            tasks.len()
        )));
    }
    if tasks.is_empty() {
        return Ok(OracleResult {
            optimal_reward: 0.0,
            optimal_first_action: Matching::empty(),
            explored: 1,
            plan: vec![Vec::new(); state.robots.len()],
        });
    }

    // Distances from every relevant position to every task. Positions are
    // task cells plus the robots' start cells.
    let n = tasks.len();
    let mut dist = HashMap::new();
    let mut positions: Vec<(usize, usize)> = state.robots.iter().map(|r| r.position).collect();
    positions.extend(tasks.iter().map(|t| t.position));
    positions.sort_unstable();
    positions.dedup();
    for &from in &positions {
        let plan = env.plan_for(from)?; // distances are symmetric on the grid
        for (j, t) in tasks.iter().enumerate() {
            let d = plan.det_distance(t.position, &env.maze);
            dist.insert((from, j), d);
        }
    }

    let ages: Vec<u32> = tasks.iter().map(|t| t.age).collect();
    let rule = env.reward_rule;

    // Robot states are (position, next-available step), canonically sorted so
    // interchangeable robots share memo entries.
    let task_positions: Vec<(usize, usize)> = tasks.iter().map(|t| t.position).collect();

    struct Search {
        dist: HashMap<((usize, usize), usize), u32>,
        ages: Vec<u32>,
        rule: RewardRule,
        memo: HashMap<(u32, Vec<((usize, usize), u32)>), (f64, Option<(usize, usize)>)>,
        explored: usize,
        prune: bool,
        n: usize,
        task_positions: Vec<(usize, usize)>,
    }

    impl Search {
        /// Serving step for a robot at `pos` free at `avail` heading to task j.
        fn serve_step(&self, pos: (usize, usize), avail: u32, j: usize) -> u32 {
            avail + self.dist[&(pos, j)].saturating_sub(1)
        }

        fn reward_for(&self, j: usize, step: u32) -> f64 {
            crate::mrrc::reward(self.rule, self.ages[j] + step)
        }

        /// Admissible bound: each remaining task served at the earliest step
        /// any single robot could reach it.
        fn bound(&self, mask: u32, robots: &[((usize, usize), u32)]) -> f64 {
            let mut total = 0.0;
            for j in 0..self.n {
                if mask & (1 << j) != 0 {
                    let best = robots
                        .iter()
                        .map(|&(pos, avail)| self.serve_step(pos, avail, j))
                        .min()
                        .unwrap();
                    total += self.reward_for(j, best);
                }
            }
            total
        }

        /// Maximum reward collectible from (mask, robots), plus the argmax
        /// (robot index in sorted order, task index) move.
        fn solve(
            &mut self,
            mask: u32,
            robots: &Vec<((usize, usize), u32)>,
        ) -> (f64, Option<(usize, usize)>) {
            if mask == 0 {
                return (0.0, None);
            }
            let key = (mask, robots.clone());
            if let Some(hit) = self.memo.get(&key) {
                return *hit;
            }
            self.explored += 1;

            let mut moves: Vec<(f64, f64, usize, usize, Vec<((usize, usize), u32)>)> = Vec::new();
            for (ri, &(pos, avail)) in robots.iter().enumerate() {
                for j in 0..self.n {
                    if mask & (1 << j) == 0 {
                        continue;
                    }
                    let step = self.serve_step(pos, avail, j);
                    let immediate = self.reward_for(j, step);
                    let mut next_robots = robots.clone();
                    next_robots[ri] = (self.task_positions[j], step + 1);
                    next_robots.sort_unstable();
                    let rest_mask = mask & !(1 << j);
                    let optimistic = immediate
                        + if self.prune { self.bound(rest_mask, &next_robots) } else { f64::INFINITY };
                    moves.push((optimistic, immediate, ri, j, next_robots));
                }
            }
            if self.prune {
                moves.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            }

            let mut best = f64::NEG_INFINITY;
            let mut best_move = None;
            for (optimistic, immediate, ri, j, next_robots) in moves {
                if self.prune && optimistic <= best {
                    break;
                }
                let (sub, _) = self.solve(mask & !(1 << j), &next_robots);
                let total = immediate + sub;
                if total > best {
                    best = total;
                    best_move = Some((ri, j));
                }
            }
            self.memo.insert(key, (best, best_move));
            (best, best_move)
        }
    }

    let mut search = Search {
        dist,
        ages,
        rule,
        memo: HashMap::new(),
        explored: 0,
        prune,
        n,
        task_positions,
    };

    let full_mask = (1u32 << n) - 1;
    let mut robots: Vec<((usize, usize), u32)> =
        state.robots.iter().map(|r| (r.position, 0u32)).collect();
    robots.sort_unstable();
    let (value, _) = search.solve(full_mask, &robots);

    // Reconstruct per-robot sequences by replaying the memoized choices.
    // Robot identity is tracked through the sorted tuples by position/avail.
    let mut plan: Vec<Vec<TaskId>> = vec![Vec::new(); state.robots.len()];
    {
        // Map sorted tuple index back to original robot ids greedily.
        let mut tuples: Vec<(((usize, usize), u32), RobotId)> = state
            .robots
            .iter()
            .map(|r| (((r.position), 0u32), r.id))
            .collect();
        tuples.sort_unstable();
        let mut mask = full_mask;
        let mut robots_now: Vec<((usize, usize), u32)> =
            tuples.iter().map(|(t, _)| *t).collect();
        let mut owners: Vec<RobotId> = tuples.iter().map(|(_, id)| *id).collect();
        while mask != 0 {
            let (_, mv) = search.solve(mask, &robots_now);
            let Some((ri, j)) = mv else { break };
            let owner = owners[ri];
            plan[owner as usize].push(tasks[j].id);
            let step = search.serve_step(robots_now[ri].0, robots_now[ri].1, j);
            robots_now[ri] = (search.task_positions[j], step + 1);
            // Keep owners aligned under the canonical sort.
            let moved = robots_now[ri];
            let owner_moved = owners[ri];
            robots_now.remove(ri);
            owners.remove(ri);
            let pos = robots_now.binary_search(&moved).unwrap_or_else(|e| e);
            robots_now.insert(pos, moved);
            owners.insert(pos, owner_moved);
            mask &= !(1 << j);
        }
    }

    // First action: each robot heads to the first task of its sequence;
    // pad with nearest unclaimed tasks for maximality.
    let mut pairs: Vec<(RobotId, TaskId)> = Vec::new();
    let mut claimed: Vec<TaskId> = Vec::new();
    for robot in &state.robots {
        if let Some(&first) = plan[robot.id as usize].first() {
            pairs.push((robot.id, first));
            claimed.push(first);
        }
    }
    for robot in &state.robots {
        if pairs.iter().any(|(r, _)| *r == robot.id) {
            continue;
        }
        let mut candidates: Vec<(u32, TaskId)> = tasks
            .iter()
            .filter(|t| !claimed.contains(&t.id))
            .map(|t| (search.dist[&(robot.position, tasks.iter().position(|x| x.id == t.id).unwrap())], t.id))
            .collect();
        candidates.sort_unstable();
        if let Some(&(_, t)) = candidates.first() {
            pairs.push((robot.id, t));
            claimed.push(t);
        }
    }

    Ok(OracleResult {
        optimal_reward: value,
        optimal_first_action: Matching::new(pairs)?,
        explored: search.explored,
        plan,
    })
}

/// A machine schedule: one ordered lane of tasks per machine.
pub type Schedule = Vec<Vec<TaskId>>;

/// One Gantt-chart row of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GanttRow {
    pub machine: usize,
    pub task: TaskId,
    pub start: f64,
    pub setup_end: f64,
    pub finish: f64,
}

/// Flatten a schedule into Gantt rows (start, end-of-setup, finish per task).
pub fn gantt_rows(instance: &IPMSInstance, schedule: &Schedule) -> Vec<GanttRow> {
    let mut rows = Vec::new();
    for (machine, lane) in schedule.iter().enumerate() {
        let mut clock = 0.0;
        let mut prev = None;
        for &task in lane {
            let start = clock;
            let setup_end = start + instance.setup_before(prev, task);
            let finish = setup_end + instance.proc[task as usize];
            rows.push(GanttRow { machine, task, start, setup_end, finish });
            clock = finish;
            prev = Some(task);
        }
    }
    rows
}

/// Make-span of a complete schedule.
pub fn schedule_makespan(instance: &IPMSInstance, schedule: &Schedule) -> f64 {
    schedule
        .iter()
        .map(|lane| {
            let mut t = 0.0;
            let mut prev = None;
            for &task in lane {
                t += instance.setup_before(prev, task) + instance.proc[task as usize];
                prev = Some(task);
            }
            t
        })
        .fold(0.0, f64::max)
}

fn greedy_seed(instance: &IPMSInstance, order: Option<&[TaskId]>) -> Schedule {
    let n_machines = instance.n_machines;
    let mut lanes: Schedule = vec![Vec::new(); n_machines];
    let mut finish = vec![0.0f64; n_machines];
    let mut last: Vec<Option<TaskId>> = vec![None; n_machines];

    match order {
        Some(order) => {
            // Fixed task order; each task goes to the machine where it
            // finishes earliest.
            for &t in order {
                let (m, _) = (0..n_machines)
                    .map(|m| (m, finish[m] + instance.setup_before(last[m], t)))
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                    .unwrap();
                finish[m] += instance.setup_before(last[m], t) + instance.proc[t as usize];
                lanes[m].push(t);
                last[m] = Some(t);
            }
        }
        None => {
            // Global greedy: repeatedly commit the (machine, task) pair with
            // the earliest completion.
            let mut remaining: Vec<TaskId> = (0..instance.n_tasks() as TaskId).collect();
            while !remaining.is_empty() {
                let mut best: Option<(f64, usize, TaskId)> = None;
                for m in 0..n_machines {
                    for &t in &remaining {
                        let done = finish[m]
                            + instance.setup_before(last[m], t)
                            + instance.proc[t as usize];
                        let better = match &best {
                            None => true,
                            Some((bv, bm, bt)) => {
                                done < *bv || (done == *bv && (m, t) < (*bm, *bt))
                            }
                        };
                        if better {
                            best = Some((done, m, t));
                        }
                    }
                }
                let (done, m, t) = best.unwrap();
                finish[m] = done;
                lanes[m].push(t);
                last[m] = Some(t);
                remaining.retain(|&x| x != t);
            }
        }
    }
    lanes
}

/// First-improvement local search over three move kinds: swap two tasks
/// across machines, relocate one task to any position, and swap adjacent
/// tasks within a machine. Runs to a local optimum.
fn local_search(instance: &IPMSInstance, mut schedule: Schedule) -> (Schedule, f64) {
    let mut best = schedule_makespan(instance, &schedule);
    loop {
        let mut improved = false;

        'scan: {
            // Swap across machines.
            for m1 in 0..schedule.len() {
                for m2 in (m1 + 1)..schedule.len() {
                    for p1 in 0..schedule[m1].len() {
                        for p2 in 0..schedule[m2].len() {
                            let mut cand = schedule.clone();
                            let a = cand[m1][p1];
                            let b = cand[m2][p2];
                            cand[m1][p1] = b;
                            cand[m2][p2] = a;
                            let v = schedule_makespan(instance, &cand);
                            if v < best - 1e-9 {
                                schedule = cand;
                                best = v;
                                improved = true;
                                break 'scan;
                            }
                        }
                    }
                }
            }
            // Relocate one task.
            for m1 in 0..schedule.len() {
                for p1 in 0..schedule[m1].len() {
                    for m2 in 0..schedule.len() {
                        let max_pos = if m1 == m2 {
                            schedule[m2].len()
                        } else {
                            schedule[m2].len() + 1
                        };
                        for p2 in 0..max_pos {
                            if m1 == m2 && p2 == p1 {
                                continue;
                            }
                            let mut cand = schedule.clone();
                            let task = cand[m1].remove(p1);
                            let idx = p2.min(cand[m2].len());
                            cand[m2].insert(idx, task);
                            let v = schedule_makespan(instance, &cand);
                            if v < best - 1e-9 {
                                schedule = cand;
                                best = v;
                                improved = true;
                                break 'scan;
                            }
                        }
                    }
                }
            }
            // Swap adjacent within a machine.
            for m in 0..schedule.len() {
                for p in 1..schedule[m].len() {
                    let mut cand = schedule.clone();
                    cand[m].swap(p - 1, p);
                    let v = schedule_makespan(instance, &cand);
                    if v < best - 1e-9 {
                        schedule = cand;
                        best = v;
                        improved = true;
                        break 'scan;
                    }
                }
            }
        }

        if !improved {
            return (schedule, best);
        }
    }
}

/// Greedy list-scheduling seed plus first-improvement local search, repeated
/// over `restarts` seeds (the first restart uses the deterministic greedy
/// seed, later ones a shuffled insertion order). Returns the best schedule
/// found and its make-span.
pub fn ipms_local_search(
    instance: &IPMSInstance,
    restarts: usize,
    seed: u64,
) -> (Schedule, f64) {
    let restarts = restarts.max(1);
    let mut best: Option<(Schedule, f64)> = None;
    for k in 0..restarts {
        let start = if k == 0 {
            greedy_seed(instance, None)
        } else {
            let mut order: Vec<TaskId> = (0..instance.n_tasks() as TaskId).collect();
            order.shuffle(&mut rng::substream(seed, &[k as u64]));
            greedy_seed(instance, Some(&order))
        };
        let (schedule, makespan) = local_search(instance, start);
        if best.as_ref().map_or(true, |(_, b)| makespan < *b) {
            best = Some((schedule, makespan));
        }
    }
    best.unwrap()
}
