use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::samples::SampleSet;

use super::{Cell, CompletionTimeDistribution, Maze, MotionMode, MotionModel};

const VI_MAX_SWEEPS: usize = 10_000;
const VI_TOLERANCE: f64 = 1e-9;

/// Length of a shortest path between two passable cells under unit step cost.
pub fn shortest_time_det(maze: &Maze, from: Cell, to: Cell) -> Result<u32> {
    if !maze.is_open(from) || !maze.is_open(to) {
        return Err(Error::Validation(format!(
            "both cells must be passable, got {from:?} -> {to:?}"
        )));
    }
    // Unit edge weights, so this is Dijkstra with a trivial priority structure.
    let mut dist = vec![u32::MAX; maze.width * maze.height];
    let mut heap: BinaryHeap<Reverse<(u32, usize, usize)>> = BinaryHeap::new();
    dist[maze.index(from)] = 0;
    heap.push(Reverse((0, from.0, from.1)));
    while let Some(Reverse((d, x, y))) = heap.pop() {
        let cell = (x, y);
        if cell == to {
            return Ok(d);
        }
        if d > dist[maze.index(cell)] {
            continue;
        }
        for dir in 0..4 {
            let next = maze.move_from(cell, dir);
            if next != cell && d + 1 < dist[maze.index(next)] {
                dist[maze.index(next)] = d + 1;
                heap.push(Reverse((d + 1, next.0, next.1)));
            }
        }
    }
    Err(Error::Unreachable { from, to })
}

/// Expected steps-to-goal for every cell under the optimal movement policy.
#[derive(Debug, Clone)]
pub struct ArrivalTimes {
    pub goal: Cell,
    width: usize,
    values: Vec<f64>,
}

impl ArrivalTimes {
    pub fn at(&self, cell: Cell) -> f64 {
        self.values[cell.1 * self.width + cell.0]
    }
}

/// Value-iteration fixed point of expected steps-to-goal; the goal cell has
/// value 0 and walls are unreachable (infinite).
pub fn expected_time_stoch(maze: &Maze, motion: &MotionModel, goal: Cell) -> Result<ArrivalTimes> {
    let plan = RoutePlan::new(maze, motion, goal)?;
    Ok(ArrivalTimes { goal, width: maze.width, values: plan.expected.clone() })
}

/// Precomputed routing toward one goal cell: shortest-path distances, the
/// optimal per-cell movement policy, and expected arrival times.
#[derive(Debug, Clone)]
pub struct RoutePlan {
    pub goal: Cell,
    mode: MotionMode,
    det_dist: Vec<u32>,
    policy: Vec<u8>,
    expected: Vec<f64>,
}

impl RoutePlan {
    pub fn new(maze: &Maze, motion: &MotionModel, goal: Cell) -> Result<Self> {
        if !maze.is_open(goal) {
            return Err(Error::Validation(format!("goal cell {goal:?} is a wall")));
        }
        let det_dist = bfs_distances(maze, goal);
        let (expected, policy) = match motion.mode {
            MotionMode::Deterministic => {
                let expected = det_dist
                    .iter()
                    .map(|&d| if d == u32::MAX { f64::INFINITY } else { d as f64 })
                    .collect();
                (expected, det_policy(maze, &det_dist))
            }
            MotionMode::Stochastic => value_iteration(maze, motion, goal)?,
        };
        Ok(RoutePlan { goal, mode: motion.mode, det_dist, policy, expected })
    }

    pub fn det_distance(&self, from: Cell, maze: &Maze) -> u32 {
        self.det_dist[maze.index(from)]
    }

    pub fn mean_time(&self, from: Cell, maze: &Maze) -> f64 {
        self.expected[maze.index(from)]
    }

    /// One motion step toward the goal: intended move from the routing
    /// policy, resolved through the slip model.
    pub fn advance(&self, maze: &Maze, motion: &MotionModel, from: Cell, rng: &mut Rng) -> Cell {
        if from == self.goal {
            return from;
        }
        let intended = self.policy[maze.index(from)] as usize;
        debug_assert!(intended < 4, "no policy for cell {from:?}");
        let dir = match motion.mode {
            MotionMode::Deterministic => intended,
            MotionMode::Stochastic => {
                let (success, slip) = motion.probs(maze.is_dotted(from));
                let u: f64 = rng.gen();
                if u < success {
                    intended
                } else {
                    // The three other directions in fixed order.
                    let k = (((u - success) / slip) as usize).min(2);
                    (0..4).filter(|&d| d != intended).nth(k).unwrap()
                }
            }
        };
        maze.move_from(from, dir)
    }

    /// One full rollout from `from` to the goal; returns elapsed time-steps.
    pub fn sample_one(&self, maze: &Maze, motion: &MotionModel, from: Cell, rng: &mut Rng) -> f64 {
        let mut cell = from;
        let mut steps = 0u64;
        while cell != self.goal {
            cell = self.advance(maze, motion, cell, rng);
            steps += 1;
        }
        steps as f64
    }

    /// `count` independent rollouts of the optimal routing policy.
    pub fn completion_times(
        &self,
        maze: &Maze,
        motion: &MotionModel,
        from: Cell,
        count: usize,
        rng: &mut Rng,
    ) -> Result<CompletionTimeDistribution> {
        if count < 1 {
            return Err(Error::Validation("sample count must be at least 1".into()));
        }
        if !maze.is_open(from) {
            return Err(Error::Validation(format!("origin cell {from:?} is a wall")));
        }
        if self.det_dist[maze.index(from)] == u32::MAX {
            return Err(Error::Unreachable { from, to: self.goal });
        }
        let samples = match self.mode {
            MotionMode::Deterministic => {
                SampleSet::constant(self.det_dist[maze.index(from)] as f64, count)
            }
            MotionMode::Stochastic => SampleSet::drawn(
                (0..count).map(|_| self.sample_one(maze, motion, from, rng)).collect(),
            ),
        };
        Ok(CompletionTimeDistribution::new(from, self.goal, samples))
    }
}

/// `count` independent rollouts from `from` to `to`; in deterministic mode
/// this is `count` copies of the shortest-path length.
pub fn sample_completion_times(
    maze: &Maze,
    motion: &MotionModel,
    from: Cell,
    to: Cell,
    count: usize,
    rng: &mut Rng,
) -> Result<CompletionTimeDistribution> {
    let plan = RoutePlan::new(maze, motion, to)?;
    plan.completion_times(maze, motion, from, count, rng)
}

fn bfs_distances(maze: &Maze, goal: Cell) -> Vec<u32> {
    let mut dist = vec![u32::MAX; maze.width * maze.height];
    let mut queue = std::collections::VecDeque::new();
    dist[maze.index(goal)] = 0;
    queue.push_back(goal);
    while let Some(cell) = queue.pop_front() {
        let d = dist[maze.index(cell)];
        for dir in 0..4 {
            let next = maze.move_from(cell, dir);
            if next != cell && dist[maze.index(next)] == u32::MAX {
                dist[maze.index(next)] = d + 1;
                queue.push_back(next);
            }
        }
    }
    dist
}

/// First direction (in fixed order) that strictly decreases the distance.
fn det_policy(maze: &Maze, dist: &[u32]) -> Vec<u8> {
    let mut policy = vec![u8::MAX; dist.len()];
    for y in 0..maze.height {
        for x in 0..maze.width {
            let cell = (x, y);
            let d = dist[maze.index(cell)];
            if d == u32::MAX || d == 0 {
                continue;
            }
            for dir in 0..4 {
                let next = maze.move_from(cell, dir);
                if next != cell && dist[maze.index(next)] == d - 1 {
                    policy[maze.index(cell)] = dir as u8;
                    break;
                }
            }
        }
    }
    policy
}

/// Synchronous value-iteration sweeps for expected steps-to-goal.
fn value_iteration(
    maze: &Maze,
    motion: &MotionModel,
    goal: Cell,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let n = maze.width * maze.height;
    let open: Vec<Cell> = maze.open_cells();
    let mut values = vec![f64::INFINITY; n];
    for &c in &open {
        values[maze.index(c)] = 0.0;
    }

    // Expected next-state value for each (cell, intended direction).
    let action_value = |values: &[f64], cell: Cell, intended: usize| -> f64 {
        let (success, slip) = motion.probs(maze.is_dotted(cell));
        let mut acc = 0.0;
        for dir in 0..4 {
            let p = if dir == intended { success } else { slip };
            if p > 0.0 {
                acc += p * values[maze.index(maze.move_from(cell, dir))];
            }
        }
        acc
    };

    let mut next = values.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..VI_MAX_SWEEPS {
        residual = 0.0;
        for &cell in &open {
            if cell == goal {
                continue;
            }
            let best = (0..4)
                .map(|a| action_value(&values, cell, a))
                .fold(f64::INFINITY, f64::min);
            let v = 1.0 + best;
            residual = residual.max((v - values[maze.index(cell)]).abs());
            next[maze.index(cell)] = v;
        }
        std::mem::swap(&mut values, &mut next);
        if residual < VI_TOLERANCE {
            let mut policy = vec![u8::MAX; n];
            for &cell in &open {
                if cell == goal {
                    continue;
                }
                let mut best = f64::INFINITY;
                let mut arg = u8::MAX;
                for a in 0..4 {
                    let q = action_value(&values, cell, a);
                    if q < best {
                        best = q;
                        arg = a as u8;
                    }
                }
                policy[maze.index(cell)] = arg;
            }
            return Ok((values, policy));
        }
    }
    Err(Error::NoConvergence { residual, sweeps: VI_MAX_SWEEPS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::generate_maze;
    use crate::rng;

    /// Independent breadth-first-search oracle.
    fn bfs_oracle(maze: &Maze, from: Cell, to: Cell) -> Option<u32> {
        let mut dist = std::collections::HashMap::new();
        let mut queue = std::collections::VecDeque::new();
        dist.insert(from, 0u32);
        queue.push_back(from);
        while let Some(cell) = queue.pop_front() {
            let d = dist[&cell];
            if cell == to {
                return Some(d);
            }
            for dir in 0..4 {
                let next = maze.move_from(cell, dir);
                if next != cell && !dist.contains_key(&next) {
                    dist.insert(next, d + 1);
                    queue.push_back(next);
                }
            }
        }
        None
    }

    fn corridor() -> Maze {
        Maze::from_text("#####\n#   #\n#####").unwrap()
    }

    #[test]
    fn shortest_identity_and_adjacent() {
        let maze = generate_maze(1, 11, 11, 0.0).unwrap();
        assert_eq!(shortest_time_det(&maze, (1, 1), (1, 1)).unwrap(), 0);
        let open = maze.open_cells();
        let a = open[0];
        let b = (0..4).map(|d| maze.move_from(a, d)).find(|&c| c != a).unwrap();
        assert_eq!(shortest_time_det(&maze, a, b).unwrap(), 1);
    }

    #[test]
    fn shortest_matches_bfs_oracle() {
        let maze = generate_maze(11, 11, 11, 0.2).unwrap();
        let open = maze.open_cells();
        let mut r = rng::stream(5);
        for _ in 0..50 {
            let a = open[r.gen_range(0..open.len())];
            let b = open[r.gen_range(0..open.len())];
            assert_eq!(shortest_time_det(&maze, a, b).unwrap(), bfs_oracle(&maze, a, b).unwrap());
        }
    }

    #[test]
    fn rejects_wall_endpoints() {
        let maze = generate_maze(1, 5, 5, 0.0).unwrap();
        assert!(shortest_time_det(&maze, (0, 0), (1, 1)).is_err());
    }

    #[test]
    fn expected_time_goal_is_zero() {
        let maze = generate_maze(2, 9, 9, 0.3).unwrap();
        let times = expected_time_stoch(&maze, &MotionModel::stochastic(), (1, 1)).unwrap();
        assert_eq!(times.at((1, 1)), 0.0);
    }

    #[test]
    fn degenerate_stochastic_equals_shortest_path() {
        let maze = generate_maze(3, 9, 9, 0.4).unwrap();
        let motion = MotionModel::custom(MotionMode::Stochastic, 1.0, 1.0).unwrap();
        let times = expected_time_stoch(&maze, &motion, (1, 1)).unwrap();
        for cell in maze.open_cells() {
            let d = shortest_time_det(&maze, cell, (1, 1)).unwrap();
            assert!(
                (times.at(cell) - d as f64).abs() < 1e-6,
                "cell {cell:?}: vi {} vs bfs {d}",
                times.at(cell)
            );
        }
    }

    #[test]
    fn corridor_matches_linear_system_oracle() {
        // Three open cells A(1,1) B(2,1) goal(3,1), undotted, success 0.7.
        // With V(goal) = 0 the optimal policy heads right everywhere, so
        //   V_A = 1 + 0.7 V_B + 0.3 V_A        (left/up/down slip into walls)
        //   V_B = 1 + 0.7*0 + 0.1 V_A + 0.2 V_B
        // Solve the 2x2 system independently and compare.
        let maze = corridor();
        let motion = MotionModel::stochastic();
        let times = expected_time_stoch(&maze, &motion, (3, 1)).unwrap();

        // 0.7 V_A - 0.7 V_B = 1 ; -0.1 V_A + 0.8 V_B = 1
        let (a11, a12, b1) = (0.7, -0.7, 1.0);
        let (a21, a22, b2) = (-0.1, 0.8, 1.0);
        let det = a11 * a22 - a12 * a21;
        let va = (b1 * a22 - a12 * b2) / det;
        let vb = (a11 * b2 - b1 * a21) / det;

        assert!((times.at((1, 1)) - va).abs() < 1e-8, "{} vs {va}", times.at((1, 1)));
        assert!((times.at((2, 1)) - vb).abs() < 1e-8, "{} vs {vb}", times.at((2, 1)));
    }

    #[test]
    fn deterministic_samples_are_path_lengths() {
        let maze = generate_maze(1, 7, 7, 0.0).unwrap();
        let open = maze.open_cells();
        let a = open[0];
        let b = (0..4).map(|d| maze.move_from(a, d)).find(|&c| c != a).unwrap();
        let mut r = rng::stream(0);
        let dist =
            sample_completion_times(&maze, &MotionModel::deterministic(), a, b, 3, &mut r).unwrap();
        assert_eq!(dist.samples.len(), 3);
        assert_eq!(dist.samples.get(0), 1.0);
        assert_eq!(dist.samples.get(2), 1.0);

        let same =
            sample_completion_times(&maze, &MotionModel::deterministic(), a, a, 4, &mut r).unwrap();
        assert_eq!(same.mean(), 0.0);
    }

    #[test]
    fn stochastic_sample_mean_consistent_with_value_iteration() {
        let maze = corridor();
        let motion = MotionModel::stochastic();
        let times = expected_time_stoch(&maze, &motion, (3, 1)).unwrap();
        let mut r = rng::stream(9);
        let n = 4000;
        let dist = sample_completion_times(&maze, &motion, (1, 1), (3, 1), n, &mut r).unwrap();
        let mean = dist.mean();
        let var = match &dist.samples {
            SampleSet::Drawn(v) => {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
            }
            _ => unreachable!(),
        };
        let se = (var / n as f64).sqrt();
        let expect = times.at((1, 1));
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "sample mean {mean} not within 3 SE ({se}) of {expect}"
        );
    }

    #[test]
    fn stochastic_samples_dominate_shortest_path() {
        let maze = generate_maze(6, 9, 9, 0.5).unwrap();
        let motion = MotionModel::stochastic();
        let open = maze.open_cells();
        let mut r = rng::stream(11);
        for _ in 0..10 {
            let a = open[r.gen_range(0..open.len())];
            let b = open[r.gen_range(0..open.len())];
            let d = shortest_time_det(&maze, a, b).unwrap() as f64;
            let dist = sample_completion_times(&maze, &motion, a, b, 40, &mut r).unwrap();
            assert!(dist.samples.min() >= d, "sample below shortest-path bound");
        }
    }
}
