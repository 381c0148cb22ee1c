//! Roll one reward-collection episode under the greedy baseline policy,
//! printing a per-step log.
//!
//! ```sh
//! cargo run --example mrrc_episode
//! ```

use auctionq::baselines::sga_policy;
use auctionq::gridworld::{generate_maze, MotionModel};
use auctionq::mrrc::{initial_state, is_terminal, step, MrrcEnv, RewardRule};
use auctionq::rng;

fn main() {
    let maze = generate_maze(7, 11, 11, 0.0).unwrap();
    let env = MrrcEnv::new(maze, MotionModel::deterministic(), RewardRule::Linear)
        .with_edge_samples(10);
    let mut state = initial_state(&env, 2, 5, (0, 100), 3).unwrap();

    println!("robots at {:?}", state.robots.iter().map(|r| r.position).collect::<Vec<_>>());
    println!(
        "tasks at {:?} with ages {:?}\n",
        state.tasks.iter().map(|t| t.position).collect::<Vec<_>>(),
        state.tasks.iter().map(|t| t.age).collect::<Vec<_>>()
    );

    let mut total = 0.0;
    let mut r = rng::stream(1);
    println!("clock  action          reward  remaining");
    while !is_terminal(&state) {
        let action = sga_policy(env.reward_rule, &state);
        let (next, reward, served) = step(&env, &state, &action, &mut r).unwrap();
        if reward > 0.0 || state.clock % 5 == 0 {
            println!(
                "{:5}  {:14}  {:6.0}  {}{}",
                state.clock,
                action.to_log_string(),
                reward,
                next.n_alive(),
                if served.is_empty() { String::new() } else { format!("  served {served:?}") }
            );
        }
        total += reward;
        state = next;
    }
    println!("\nepisode return {total} in {} steps", state.clock);
}
