//! Learning-based multi-robot and parallel-machine scheduling.
//!
//! Robots (or machines) service spatially distributed tasks whose rewards
//! decay with age (or whose total make-span should shrink). Assignment
//! decisions are made jointly at every time-step / decision epoch:
//!
//! * a Q-function over (state, matching) pairs is inferred by a two-layer
//!   message-passing embedding of the task graph, whose messages are
//!   weighted by learned pairwise presence probabilities ([`qnet`]);
//! * joint assignments come from an iterative bidding/consensus auction that
//!   needs only polynomially many Q evaluations ([`auction`]);
//! * the Q-function is fitted by auction-fitted Q-iteration: Bellman targets
//!   use the auction-selected action instead of an exhaustive max, and
//!   exploration perturbs network weights for whole episodes ([`trainer`]).
//!
//! Two environments implement the shared scheduling interface: a seeded
//! gridworld with deterministic or slip-prone motion ([`gridworld`] +
//! [`mrrc`]) and continuous-time identical parallel machine scheduling with
//! sequence-dependent setup times ([`ipms`]). Exact and greedy baselines for
//! desk-scale verification live in [`baselines`], and [`experiment`] binds
//! everything into seeded, byte-reproducible experiment commands (also
//! exposed through the `auctionq` binary).
//!
//! Start with the runnable examples:
//!
//! ```sh
//! cargo run --example maze_playground     # mazes and routing oracles
//! cargo run --example mrrc_episode        # one reward-collection episode
//! cargo run --example presence_inference  # pairwise presence probabilities
//! cargo run --example auction_assignment  # bidding/consensus rounds
//! cargo run --example gradient_check      # analytic vs finite-difference
//! cargo run --example exact_oracle        # exhaustive optimum on tiny instances
//! cargo run --example train_mrrc          # auction-fitted Q-iteration, end to end
//! cargo run --example ipms_schedule       # machine scheduling + local search
//! ```

pub mod auction;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod gridworld;
pub mod ipms;
pub mod linalg;
pub mod mrrc;
pub mod qnet;
pub mod rng;
pub mod samples;
pub mod trainer;
