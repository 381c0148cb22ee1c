//! Exhaustive optimum on tiny deterministic instances, compared against the
//! greedy baseline and random play.
//!
//! ```sh
//! cargo run --example exact_oracle
//! ```

use auctionq::baselines::{exact_optimal, sga_policy};
use auctionq::gridworld::{generate_maze, MotionModel};
use auctionq::mrrc::{initial_state, is_terminal, step, Matching, MrrcEnv, RewardRule};
use auctionq::rng;
use rand::Rng as _;

fn main() {
    let maze = generate_maze(7, 11, 11, 0.0).unwrap();
    let env = MrrcEnv::new(maze, MotionModel::deterministic(), RewardRule::Linear)
        .with_edge_samples(4);

    println!("instance   oracle      sga   random   explored");
    for seed in 0..6u64 {
        let state = initial_state(&env, 2, 5, (0, 90), seed).unwrap();
        let oracle = exact_optimal(&env, &state).unwrap();

        // Greedy rollout.
        let mut cur = state.clone();
        let mut sga = 0.0;
        let mut r = rng::stream(seed);
        while !is_terminal(&cur) {
            let action = sga_policy(env.reward_rule, &cur);
            let (next, rew, _) = step(&env, &cur, &action, &mut r).unwrap();
            sga += rew;
            cur = next;
        }

        // One random rollout.
        let mut cur = state.clone();
        let mut random = 0.0;
        let mut r = rng::substream(seed, &[1]);
        while !is_terminal(&cur) {
            let mut tasks = cur.alive_task_ids();
            let mut pairs = Vec::new();
            for robot in &cur.robots {
                if tasks.is_empty() {
                    break;
                }
                pairs.push((robot.id, tasks.remove(r.gen_range(0..tasks.len()))));
            }
            let (next, rew, _) = step(&env, &cur, &Matching::new(pairs).unwrap(), &mut r).unwrap();
            random += rew;
            cur = next;
        }

        assert!(sga <= oracle.optimal_reward + 1e-9);
        assert!(random <= oracle.optimal_reward + 1e-9);
        println!(
            "{seed:8}   {:6.0}   {sga:6.0}   {random:6.0}   {:8}",
            oracle.optimal_reward, oracle.explored
        );
    }
    println!("\nthe oracle upper-bounds every rollout, as it must");
}
