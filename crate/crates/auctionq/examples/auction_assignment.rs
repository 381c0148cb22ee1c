//! Run the bidding/consensus auction on one state and print every round,
//! then verify the evaluation-count formula.
//!
//! ```sh
//! cargo run --example auction_assignment
//! ```

use auctionq::auction::{adp_select_generic, count_q_evals, QnetValue};
use auctionq::gridworld::{generate_maze, MotionModel};
use auctionq::mrrc::{initial_state, MrrcEnv, RewardRule};
use auctionq::qnet::{ArchConfig, QNetParams};

fn main() {
    let maze = generate_maze(7, 11, 11, 0.0).unwrap();
    let env = MrrcEnv::new(maze, MotionModel::deterministic(), RewardRule::Linear)
        .with_edge_samples(10);
    let state = initial_state(&env, 3, 5, (0, 100), 5).unwrap();
    let params = QNetParams::init(ArchConfig { d: 16, p_hidden: 8, ..ArchConfig::default() }, 2)
        .unwrap();

    let mut value = QnetValue::new(&state, &params, 99, true).unwrap();
    let robots: Vec<u32> = state.robots.iter().map(|r| r.id).collect();
    let tasks = state.alive_task_ids();
    let (matching, trace, final_q) = adp_select_generic(&robots, &tasks, &mut value).unwrap();

    for round in &trace {
        println!("round {}:", round.round);
        for bid in &round.bids {
            println!("    robot {} bids task {} at {:.4}", bid.robot, bid.task, bid.value);
        }
        println!("  winner: robot {} -> task {}", round.winner.robot, round.winner.task);
    }
    println!("\nselected matching: {}", matching.to_log_string());
    println!("value of the final matching: {:.4}", final_q.unwrap());
    println!(
        "q evaluations: {} (closed form {})",
        value.eval_count(),
        count_q_evals(&state)
    );
    assert_eq!(value.eval_count(), count_q_evals(&state));
}
