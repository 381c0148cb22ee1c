//! Generate a maze, print it, and query the routing oracles.
//!
//! ```sh
//! cargo run --example maze_playground
//! ```

use auctionq::gridworld::{
    expected_time_stoch, generate_maze, sample_completion_times, shortest_time_det, MotionModel,
};
use auctionq::rng;

fn main() {
    let maze = generate_maze(7, 11, 11, 0.3).unwrap();
    println!("maze (seed 7, 11x11, 30% dotted):\n{}", maze.to_text());

    let open = maze.open_cells();
    let (from, to) = (open[0], open[open.len() - 1]);
    let d = shortest_time_det(&maze, from, to).unwrap();
    println!("shortest path {from:?} -> {to:?}: {d} steps");

    let motion = MotionModel::stochastic();
    let times = expected_time_stoch(&maze, &motion, to).unwrap();
    println!("expected steps under slips from {from:?}: {:.2}", times.at(from));

    let mut r = rng::stream(42);
    let dist = sample_completion_times(&maze, &motion, from, to, 8, &mut r).unwrap();
    let samples: Vec<f64> = (0..8).map(|i| dist.samples.get(i)).collect();
    println!("eight sampled completion times: {samples:?} (mean {:.2})", dist.mean());
}
