//! Auction-fitted Q-iteration on a small reward-collection benchmark:
//! train for a few hundred episodes, then score against the exact optimum
//! and the greedy baseline.
//!
//! ```sh
//! cargo run --example train_mrrc
//! ```

use std::sync::Arc;

use auctionq::experiment::eval::{eval_policy_set, summarize, MrrcEvalHook};
use auctionq::gridworld::{generate_maze, MotionModel};
use auctionq::mrrc::{MrrcEnv, RewardRule};
use auctionq::qnet::{ArchConfig, QNetParams};
use auctionq::trainer::{train, ActionSelection, MrrcSchedEnv, TrainConfig};

fn main() {
    let maze = generate_maze(7, 11, 11, 0.3).unwrap();
    let env = MrrcEnv::new(maze, MotionModel::deterministic(), RewardRule::Linear)
        .with_edge_samples(100);
    let sched = MrrcSchedEnv { env: Arc::new(env), n_robots: 2, n_tasks: 8, age_range: (0, 100) };

    let arch = ArchConfig {
        d: 16,
        p_hidden: 8,
        t1: 2,
        t2: 2,
        m_presence: 1,
        n_samples: 1,
        ..ArchConfig::default()
    };
    let config = TrainConfig {
        episodes: 600,
        eval_every: 50,
        eval_instances: 10,
        reward_scale: 0.005,
        monotone_projection: true,
        select_best: true,
        seed: 1,
        ..TrainConfig::default()
    };
    let hook = MrrcEvalHook {
        sched: &sched,
        selection: ActionSelection::Auction,
        n: 10,
        eval_seed: 31,
        with_oracle: true,
        oracle_cache: None,
        workers: 2,
    };

    println!("training 2 robots / 8 tasks for {} episodes...", config.episodes);
    let params0 = QNetParams::init(arch, config.seed).unwrap();
    let outcome = train(&sched, params0, &config, &hook).unwrap();
    for row in outcome.log.iter().filter(|r| r.eval_mean_return.is_some()) {
        println!(
            "  episode {:4}: eval return {:7.1}  pct optimal {:5.1}  pct greedy {:5.1}",
            row.episode,
            row.eval_mean_return.unwrap(),
            row.eval_pct_optimal.unwrap_or(f64::NAN),
            row.eval_pct_sga.unwrap_or(f64::NAN),
        );
    }

    let evals = eval_policy_set(
        &sched,
        &outcome.params,
        ActionSelection::Auction,
        20,
        500,
        true,
        None,
        2,
    )
    .unwrap();
    let s = summarize(&evals).unwrap();
    println!(
        "\nheld-out set: mean return {:.1} = {:.1}% of optimal, {:.1}% of greedy",
        s.mean_return,
        s.pct_optimal.unwrap(),
        s.pct_sga.unwrap()
    );
}
