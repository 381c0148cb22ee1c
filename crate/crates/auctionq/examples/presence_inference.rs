//! Infer the pairwise presence probabilities for a small task graph and
//! show the row-stochastic structure.
//!
//! ```sh
//! cargo run --example presence_inference
//! ```

use auctionq::gridworld::{generate_maze, MotionModel};
use auctionq::mrrc::{initial_state, MrrcEnv, RewardRule};
use auctionq::qnet::{infer_presence, ArchConfig, QNetParams};

fn main() {
    let maze = generate_maze(11, 11, 11, 0.3).unwrap();
    let env = MrrcEnv::new(maze, MotionModel::stochastic(), RewardRule::Linear)
        .with_edge_samples(40);
    let state = initial_state(&env, 2, 5, (0, 100), 8).unwrap();

    let params = QNetParams::init(ArchConfig { d: 16, p_hidden: 8, ..ArchConfig::default() }, 4)
        .unwrap();
    let p = infer_presence(&state, &params).unwrap();
    p.validate().unwrap();

    println!("presence matrix over {} tasks (row-stochastic, zero diagonal):", p.n);
    for i in 0..p.n {
        let row: Vec<String> = (0..p.n).map(|j| format!("{:5.3}", p.at(i, j))).collect();
        let sum: f64 = (0..p.n).filter(|&j| j != i).map(|j| p.at(i, j)).sum();
        println!("  task {i}: [{}]  row sum {sum:.9}", row.join(", "));
    }
}
