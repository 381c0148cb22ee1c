//! Seeded maze world with deterministic/stochastic robot motion and routing
//! oracles that produce task-completion-time distributions.
//!
//! Routing inside the maze is treated as a solved subproblem: a robot headed
//! for a goal cell follows the optimal routing policy (shortest path when
//! motion is deterministic, the value-iteration policy when it slips), and the
//! scheduler above only ever sees the resulting arrival-time distributions.

mod maze;
mod routing;

pub use maze::{generate_maze, Maze};
pub use routing::{
    expected_time_stoch, sample_completion_times, shortest_time_det, ArrivalTimes, RoutePlan,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::SampleSet;

/// Grid coordinate, (x, y) with y indexing rows from the top.
pub type Cell = (usize, usize);

/// The four movement directions, in the fixed order used everywhere
/// (ties in routing break toward the lower index).
pub const DIRS: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionMode {
    Deterministic,
    Stochastic,
}

/// Per-cell movement model: the chance of executing the intended direction
/// depends on whether the current cell is dotted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub mode: MotionMode,
    pub dotted_success: f64,
    pub dotted_slip: f64,
    pub plain_success: f64,
    pub plain_slip: f64,
}

impl MotionModel {
    pub fn deterministic() -> Self {
        MotionModel {
            mode: MotionMode::Deterministic,
            dotted_success: 1.0,
            dotted_slip: 0.0,
            plain_success: 1.0,
            plain_slip: 0.0,
        }
    }

    /// 55% intended / 15% each other direction on dotted cells,
    /// 70% / 10% on plain cells.
    pub fn stochastic() -> Self {
        MotionModel {
            mode: MotionMode::Stochastic,
            dotted_success: 0.55,
            dotted_slip: 0.15,
            plain_success: 0.70,
            plain_slip: 0.10,
        }
    }

    pub fn custom(
        mode: MotionMode,
        dotted_success: f64,
        plain_success: f64,
    ) -> Result<Self> {
        let m = MotionModel {
            mode,
            dotted_success,
            dotted_slip: (1.0 - dotted_success) / 3.0,
            plain_success,
            plain_slip: (1.0 - plain_success) / 3.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (s, p) in [
            (self.dotted_success, self.dotted_slip),
            (self.plain_success, self.plain_slip),
        ] {
            if !(0.0..=1.0).contains(&s) || p < 0.0 || (s + 3.0 * p - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!(
                    "movement probabilities must sum to 1 over the four directions \
                     (success {s}, slip {p})"
                )));
            }
        }
        if self.mode == MotionMode::Deterministic
            && (self.dotted_success != 1.0 || self.plain_success != 1.0)
        {
            return Err(Error::Validation(
                "deterministic mode requires intended-move probability 1".into(),
            ));
        }
        Ok(())
    }

    /// (intended, per-other-direction) probabilities for a cell.
    pub fn probs(&self, dotted: bool) -> (f64, f64) {
        if dotted {
            (self.dotted_success, self.dotted_slip)
        } else {
            (self.plain_success, self.plain_slip)
        }
    }
}

/// Empirical arrival-time distribution between two cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionTimeDistribution {
    pub origin: Cell,
    pub destination: Cell,
    pub samples: SampleSet,
}

impl CompletionTimeDistribution {
    pub fn new(origin: Cell, destination: Cell, samples: SampleSet) -> Self {
        CompletionTimeDistribution { origin, destination, samples }
    }

    pub fn mean(&self) -> f64 {
        self.samples.mean()
    }
}
