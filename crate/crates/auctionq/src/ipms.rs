//! Identical parallel machine scheduling with sequence-dependent setup
//! times: a continuous-time decision-epoch MDP with a make-span objective.
//!
//! Machines are identical; each task has a processing time and every ordered
//! task pair a setup time. A machine committed to processing cannot be
//! redirected; a machine still in setup can. Decisions happen at epochs: the
//! start, and every task completion. The per-epoch reward for learning is
//! minus the elapsed time, so maximizing return minimizes the make-span.

use std::borrow::Cow;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrrc::{Matching, TaskId};
use crate::qnet::{ActionBinding, StateView};
use crate::rng;
use crate::samples::SampleSet;

/// Processing times are drawn uniformly from this range.
pub const PROC_RANGE: (f64, f64) = (16.0, 64.0);
/// Setup times are drawn uniformly from this range.
pub const SETUP_RANGE: (f64, f64) = (0.0, 32.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IPMSInstance {
    pub seed: u64,
    pub n_machines: usize,
    /// Per-task processing time, hours.
    pub proc: Vec<f64>,
    /// `setup[i][j]`: setup before task j on a machine that last completed i.
    pub setup: Vec<Vec<f64>>,
    /// Setup before task j on a machine that has completed nothing yet.
    pub initial_setup: Vec<f64>,
}

/// Seeded instance: processing times uniform in [16, 64], setup times
/// uniform in [0, 32] (including the initial setup from idle).
pub fn generate_instance(seed: u64, n_machines: usize, n_tasks: usize) -> Result<IPMSInstance> {
    if n_machines < 1 || n_tasks < 1 {
        return Err(Error::Validation("need at least one machine and one task".into()));
    }
    let mut r = rng::substream(seed, &[0x1b35]);
    let proc: Vec<f64> = (0..n_tasks).map(|_| r.gen_range(PROC_RANGE.0..=PROC_RANGE.1)).collect();
    let setup: Vec<Vec<f64>> = (0..n_tasks)
        .map(|_| (0..n_tasks).map(|_| r.gen_range(SETUP_RANGE.0..=SETUP_RANGE.1)).collect())
        .collect();
    let initial_setup: Vec<f64> =
        (0..n_tasks).map(|_| r.gen_range(SETUP_RANGE.0..=SETUP_RANGE.1)).collect();
    Ok(IPMSInstance { seed, n_machines, proc, setup, initial_setup })
}

impl IPMSInstance {
    pub fn n_tasks(&self) -> usize {
        self.proc.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: IPMSInstance = serde_json::from_str(text)?;
        if inst.n_machines < 1
            || inst.proc.is_empty()
            || inst.setup.len() != inst.proc.len()
            || inst.setup.iter().any(|row| row.len() != inst.proc.len())
            || inst.initial_setup.len() != inst.proc.len()
        {
            return Err(Error::Validation("inconsistent instance file".into()));
        }
        Ok(inst)
    }

    /// Setup duration before `task` for a machine whose last completion was
    /// `prev` (None = fresh machine).
    pub fn setup_before(&self, prev: Option<TaskId>, task: TaskId) -> f64 {
        match prev {
            Some(p) => self.setup[p as usize][task as usize],
            None => self.initial_setup[task as usize],
        }
    }

    /// Classic make-span lower bounds: the longest single completion and the
    /// per-machine share of total processing.
    pub fn lower_bound(&self) -> f64 {
        let max_proc = self.proc.iter().cloned().fold(0.0, f64::max);
        let total: f64 = self.proc.iter().sum();
        max_proc.max(total / self.n_machines as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Setup,
    Processing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub phase: Phase,
    pub task: Option<TaskId>,
    /// Time left in the current phase.
    pub time_remaining: f64,
    pub last_completed: Option<TaskId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IPMSState {
    pub machines: Vec<MachineState>,
    /// Tasks not yet completed (processing tasks included), ascending.
    pub unserved: Vec<TaskId>,
    pub clock: f64,
}

impl IPMSState {
    pub fn fresh(instance: &IPMSInstance) -> Self {
        IPMSState {
            machines: vec![
                MachineState {
                    phase: Phase::Idle,
                    task: None,
                    time_remaining: 0.0,
                    last_completed: None,
                };
                instance.n_machines
            ],
            unserved: (0..instance.n_tasks() as TaskId).collect(),
            clock: 0.0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.unserved.is_empty()
    }

    /// Machines that may receive (new) assignments this epoch.
    pub fn assignable_machines(&self) -> Vec<u32> {
        self.machines
            .iter()
            .enumerate()
            .filter(|(_, m)| m.phase != Phase::Processing)
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Unserved tasks not locked to a processing machine.
    pub fn assignable_tasks(&self) -> Vec<TaskId> {
        let locked: Vec<TaskId> = self
            .machines
            .iter()
            .filter(|m| m.phase == Phase::Processing)
            .filter_map(|m| m.task)
            .collect();
        self.unserved.iter().copied().filter(|t| !locked.contains(t)).collect()
    }

    /// Total time until the machine completes its current task, or None.
    fn completion_in(&self, instance: &IPMSInstance, idx: usize) -> Option<f64> {
        let m = &self.machines[idx];
        match m.phase {
            Phase::Idle => None,
            Phase::Setup => Some(m.time_remaining + instance.proc[m.task.unwrap() as usize]),
            Phase::Processing => Some(m.time_remaining),
        }
    }

    /// Completion time if `machine` were assigned `task` now: remaining setup
    /// (or a fresh setup) plus processing.
    pub fn assignment_completion(
        &self,
        instance: &IPMSInstance,
        machine: u32,
        task: TaskId,
    ) -> f64 {
        let m = &self.machines[machine as usize];
        let setup = if m.phase == Phase::Setup && m.task == Some(task) {
            m.time_remaining
        } else {
            instance.setup_before(m.last_completed, task)
        };
        setup + instance.proc[task as usize]
    }

    pub fn validate_action(&self, instance: &IPMSInstance, action: &Matching) -> Result<()> {
        let machines = self.assignable_machines();
        let tasks = self.assignable_tasks();
        for &(m, t) in action.pairs() {
            if m as usize >= self.machines.len() {
                return Err(Error::InfeasibleMatching(format!("unknown machine {m}")));
            }
            if self.machines[m as usize].phase == Phase::Processing {
                return Err(Error::InfeasibleMatching(format!(
                    "machine {m} is processing and cannot be redirected"
                )));
            }
            if !tasks.contains(&t) {
                return Err(Error::InfeasibleMatching(format!("task {t} is not assignable")));
            }
        }
        let expected = machines.len().min(tasks.len());
        if action.len() < expected {
            return Err(Error::InfeasibleMatching(format!(
                "matching of size {} is not maximal (expected {expected})",
                action.len()
            )));
        }
        let _ = instance;
        Ok(())
    }
}

/// Apply a (maximal) matching of assignable machines to assignable tasks and
/// advance the clock to the next task completion. Returns the elapsed time,
/// which is 0 when the state was already terminal.
pub fn epoch_step(
    instance: &IPMSInstance,
    state: &IPMSState,
    action: &Matching,
) -> Result<(IPMSState, f64)> {
    state.validate_action(instance, action)?;
    let mut next = state.clone();

    // Apply assignments: redirected setups restart, unmatched setup machines
    // abandon their task and fall idle.
    for idx in 0..next.machines.len() {
        if next.machines[idx].phase == Phase::Processing {
            continue;
        }
        match action.task_for(idx as u32) {
            Some(task) => {
                let keep_progress = next.machines[idx].phase == Phase::Setup
                    && next.machines[idx].task == Some(task);
                if !keep_progress {
                    let m = &mut next.machines[idx];
                    m.phase = Phase::Setup;
                    m.time_remaining = instance.setup_before(m.last_completed, task);
                    m.task = Some(task);
                }
            }
            None => {
                let m = &mut next.machines[idx];
                m.phase = Phase::Idle;
                m.task = None;
                m.time_remaining = 0.0;
            }
        }
    }

    // Next decision epoch: the earliest task completion among busy machines.
    let completions: Vec<Option<f64>> =
        (0..next.machines.len()).map(|i| next.completion_in(instance, i)).collect();
    let Some(elapsed) = completions.iter().flatten().cloned().fold(None, |acc: Option<f64>, c| {
        Some(match acc {
            None => c,
            Some(a) => a.min(c),
        })
    }) else {
        if next.is_terminal() {
            return Ok((next, 0.0));
        }
        return Err(Error::InfeasibleMatching(
            "no machine is busy but tasks remain".into(),
        ));
    };

    for (idx, completion) in completions.iter().enumerate() {
        let Some(total) = completion else { continue };
        let m = &mut next.machines[idx];
        if *total == elapsed {
            let done = m.task.take().unwrap();
            m.phase = Phase::Idle;
            m.time_remaining = 0.0;
            m.last_completed = Some(done);
            next.unserved.retain(|&t| t != done);
        } else {
            match m.phase {
                Phase::Setup if elapsed >= m.time_remaining => {
                    m.phase = Phase::Processing;
                    m.time_remaining = total - elapsed;
                }
                _ => m.time_remaining -= elapsed,
            }
        }
    }
    next.clock += elapsed;
    Ok((next, elapsed))
}

/// Make-span of a completed trace of per-epoch elapsed times.
pub fn makespan(elapsed: &[f64]) -> f64 {
    elapsed.iter().sum()
}

/// Owned per-state node graph feeding the Q-network: nodes are unserved
/// tasks, pair samples are setup + processing sums, node features are
/// (completion-time slot, normalized remaining-task count), and the
/// concatenated scalar is the processing time normalized by its maximum.
pub struct IpmsNodeGraph {
    pub ids: Vec<TaskId>,
    node_scalar: Vec<f64>,
    base: Vec<f64>,
    tt: Vec<Option<SampleSet>>,
    n_total: usize,
}

impl IpmsNodeGraph {
    pub fn new(instance: &IPMSInstance, state: &IPMSState) -> Self {
        let ids = state.unserved.clone();
        let n = ids.len();
        let node_scalar: Vec<f64> =
            ids.iter().map(|&t| instance.proc[t as usize] / PROC_RANGE.1).collect();
        let remaining_frac = n as f64 / instance.n_tasks() as f64;
        let mut base = vec![0.0; n * 2];
        for i in 0..n {
            base[i * 2 + 1] = remaining_frac;
        }
        let mut tt = Vec::with_capacity(n * n);
        for &a in &ids {
            for &b in &ids {
                tt.push(if a == b {
                    None
                } else {
                    Some(SampleSet::constant(
                        instance.setup[a as usize][b as usize] + instance.proc[b as usize],
                        1,
                    ))
                });
            }
        }
        IpmsNodeGraph { ids, node_scalar, base, tt, n_total: instance.n_tasks() }
    }

    pub fn view(&self) -> StateView<'_> {
        StateView::new(
            self.ids.clone(),
            self.node_scalar.clone(),
            2,
            self.base.clone(),
            PROC_RANGE.1,
            self.tt.iter().map(|o| o.as_ref().map(Cow::Borrowed)).collect(),
        )
        .expect("buffers sized consistently")
    }

    /// A view that owns its sample sets (usable at any lifetime).
    pub fn owned_view(&self) -> StateView<'static> {
        StateView::new(
            self.ids.clone(),
            self.node_scalar.clone(),
            2,
            self.base.clone(),
            PROC_RANGE.1,
            self.tt.iter().map(|o| o.clone().map(Cow::Owned)).collect(),
        )
        .expect("buffers sized consistently")
    }

    /// Bind a matching over assignable machines, and implicitly the tasks
    /// locked to processing machines (their remaining time is the sample).
    pub fn binding<'a>(
        &self,
        instance: &IPMSInstance,
        state: &IPMSState,
        action: &Matching,
    ) -> Result<ActionBinding<'a>> {
        let n = self.ids.len();
        let mut assigned: Vec<Option<(u32, Cow<'a, SampleSet>)>> = vec![None; n];
        let node_of = |t: TaskId| self.ids.iter().position(|&x| x == t);
        for &(m, t) in action.pairs() {
            let Some(node) = node_of(t) else {
                return Err(Error::InfeasibleMatching(format!(
                    "action references completed task {t}"
                )));
            };
            let value = state.assignment_completion(instance, m, t);
            assigned[node] = Some((m, Cow::Owned(SampleSet::constant(value, 1))));
        }
        for (idx, machine) in state.machines.iter().enumerate() {
            if machine.phase == Phase::Processing {
                if let Some(node) = machine.task.and_then(node_of) {
                    assigned[node] = Some((
                        idx as u32,
                        Cow::Owned(SampleSet::constant(machine.time_remaining, 1)),
                    ));
                }
            }
        }
        Ok(ActionBinding { assigned })
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_generation_deterministic() {
        let a = generate_instance(5, 3, 10).unwrap();
        let b = generate_instance(5, 3, 10).unwrap();
        assert_eq!(a, b);
        let c = generate_instance(6, 3, 10).unwrap();
        assert_ne!(a, c);
        assert!(a.proc.iter().all(|&p| (16.0..=64.0).contains(&p)));
        assert!(a.setup.iter().flatten().all(|&s| (0.0..=32.0).contains(&s)));
    }

    #[test]
    fn processing_time_mean_near_forty() {
        // Uniform [16, 64] has mean 40.
        let inst = generate_instance(1, 2, 1000).unwrap();
        let mean: f64 = inst.proc.iter().sum::<f64>() / inst.proc.len() as f64;
        assert!((38.0..=42.0).contains(&mean), "mean processing time {mean}");
    }

    #[test]
    fn zero_setups_make_completion_equal_processing() {
        let mut inst = generate_instance(2, 1, 3).unwrap();
        inst.setup.iter_mut().flatten().for_each(|s| *s = 0.0);
        inst.initial_setup.iter_mut().for_each(|s| *s = 0.0);
        let state = IPMSState::fresh(&inst);
        let action = Matching::new(vec![(0, 0)]).unwrap();
        let (next, elapsed) = epoch_step(&inst, &state, &action).unwrap();
        assert!((elapsed - inst.proc[0]).abs() < 1e-12);
        assert_eq!(next.unserved, vec![1, 2]);
    }

    #[test]
    fn single_machine_single_task() {
        let inst = generate_instance(3, 1, 1).unwrap();
        let state = IPMSState::fresh(&inst);
        let action = Matching::new(vec![(0, 0)]).unwrap();
        let (next, elapsed) = epoch_step(&inst, &state, &action).unwrap();
        assert!((elapsed - (inst.initial_setup[0] + inst.proc[0])).abs() < 1e-12);
        assert!(next.is_terminal());
        assert_eq!(next.clock, elapsed);
        assert_eq!(next.machines[0].last_completed, Some(0));
    }

    #[test]
    fn two_idle_machines_elapse_to_first_completion() {
        let inst = generate_instance(7, 2, 2).unwrap();
        let state = IPMSState::fresh(&inst);
        let action = Matching::new(vec![(0, 0), (1, 1)]).unwrap();
        let (next, elapsed) = epoch_step(&inst, &state, &action).unwrap();
        let c0 = inst.initial_setup[0] + inst.proc[0];
        let c1 = inst.initial_setup[1] + inst.proc[1];
        assert!((elapsed - c0.min(c1)).abs() < 1e-12);
        assert_eq!(next.unserved.len(), 1);
        // The slower machine crossed into processing (its setup is over).
        let slower = if c0 < c1 { 1 } else { 0 };
        assert_eq!(next.machines[slower].phase, Phase::Processing);
    }

    /// Gantt-chart oracle: a fixed two-machine/four-task schedule, simulated
    /// by hand with explicit start/finish arithmetic.
    #[test]
    fn fixed_schedule_matches_gantt_oracle() {
        let mut inst = generate_instance(9, 2, 4).unwrap();
        // Pin readable numbers.
        inst.proc = vec![10.0, 20.0, 30.0, 5.0];
        inst.initial_setup = vec![1.0, 2.0, 3.0, 4.0];
        inst.setup = vec![
            vec![0.0, 5.0, 6.0, 7.0],
            vec![5.0, 0.0, 2.0, 1.0],
            vec![6.0, 2.0, 0.0, 3.0],
            vec![7.0, 1.0, 3.0, 0.0],
        ];

        // Plan: machine 0 runs tasks 0 then 2; machine 1 runs 1 then 3.
        // Machine 0: finish(0) = 1 + 10 = 11; finish(2) = 11 + 6 + 30 = 47.
        // Machine 1: finish(1) = 2 + 20 = 22; finish(3) = 22 + 1 + 5 = 28.
        // Make-span = 47.
        let mut state = IPMSState::fresh(&inst);
        let mut elapsed_log = Vec::new();
        let plan: [&[TaskId]; 2] = [&[0, 2], &[1, 3]];
        let mut cursor = [0usize; 2];
        while !state.is_terminal() {
            let mut pairs = Vec::new();
            for m in state.assignable_machines() {
                let lane = &plan[m as usize];
                while cursor[m as usize] < lane.len()
                    && !state.unserved.contains(&lane[cursor[m as usize]])
                {
                    cursor[m as usize] += 1;
                }
                if cursor[m as usize] < lane.len() {
                    let t = lane[cursor[m as usize]];
                    if state.assignable_tasks().contains(&t) {
                        pairs.push((m, t));
                    }
                }
            }
            let action = Matching::new(pairs).unwrap();
            let (next, elapsed) = epoch_step(&inst, &state, &action).unwrap();
            elapsed_log.push(elapsed);
            state = next;
        }
        assert!((makespan(&elapsed_log) - 47.0).abs() < 1e-9);
        assert!((state.clock - 47.0).abs() < 1e-12);
    }

    #[test]
    fn processing_machines_cannot_be_redirected() {
        let mut inst = generate_instance(11, 1, 2).unwrap();
        inst.initial_setup = vec![2.0, 2.0];
        inst.proc = vec![50.0, 50.0];
        let state = IPMSState::fresh(&inst);
        let (mid, _) = epoch_step(&inst, &state, &Matching::new(vec![(0, 0)]).unwrap()).unwrap();
        // Task 0 completed; machine idle again: fine. Build a processing
        // state by hand instead.
        assert_eq!(mid.unserved, vec![1]);

        let mut busy = IPMSState::fresh(&inst);
        busy.machines[0].phase = Phase::Processing;
        busy.machines[0].task = Some(0);
        busy.machines[0].time_remaining = 10.0;
        let redirect = Matching::new(vec![(0, 1)]).unwrap();
        assert!(epoch_step(&inst, &busy, &redirect).is_err());
        // Empty action: the machine keeps processing and completes.
        let (after, elapsed) = epoch_step(&inst, &busy, &Matching::empty()).unwrap();
        assert_eq!(elapsed, 10.0);
        assert!(!after.unserved.contains(&0));
    }

    /// Permutation oracle: single machine, three tasks, minimum over all six
    /// service orders computed independently.
    #[test]
    fn single_machine_three_tasks_brute_force() {
        let mut inst = generate_instance(13, 1, 3).unwrap();
        inst.proc = vec![10.0, 12.0, 7.0];
        inst.initial_setup = vec![3.0, 1.0, 2.0];
        inst.setup = vec![
            vec![0.0, 4.0, 9.0],
            vec![2.0, 0.0, 3.0],
            vec![8.0, 6.0, 0.0],
        ];

        let orders: Vec<Vec<TaskId>> = vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ];
        let hand = |order: &[TaskId]| -> f64 {
            let mut t = 0.0;
            let mut prev: Option<TaskId> = None;
            for &task in order {
                t += inst.setup_before(prev, task) + inst.proc[task as usize];
                prev = Some(task);
            }
            t
        };
        let best_hand = orders.iter().map(|o| hand(o)).fold(f64::INFINITY, f64::min);

        let run = |order: &[TaskId]| -> f64 {
            let mut state = IPMSState::fresh(&inst);
            let mut total = 0.0;
            let mut i = 0;
            while !state.is_terminal() {
                let action = Matching::new(vec![(0, order[i])]).unwrap();
                let (next, elapsed) = epoch_step(&inst, &state, &action).unwrap();
                total += elapsed;
                state = next;
                i += 1;
            }
            total
        };
        let best_run = orders.iter().map(|o| run(o)).fold(f64::INFINITY, f64::min);
        assert!((best_run - best_hand).abs() < 1e-9);
        assert!(best_run >= inst.lower_bound());
    }

    #[test]
    fn node_graph_features() {
        let mut inst = generate_instance(15, 2, 3).unwrap();
        inst.proc = vec![32.0, 64.0, 16.0];
        let state = IPMSState::fresh(&inst);
        let graph = IpmsNodeGraph::new(&inst, &state);
        let view = graph.view();
        assert_eq!(view.n(), 3);
        assert_eq!(view.node_scalar, vec![0.5, 1.0, 0.25]);
        assert_eq!(view.feat_dim, 2);
        // Remaining fraction starts at 1.
        assert_eq!(view.base_features[1], 1.0);
        let tt = view.tt(0, 1).unwrap();
        assert_eq!(tt.get(0), inst.setup[0][1] + inst.proc[1]);
    }
}
