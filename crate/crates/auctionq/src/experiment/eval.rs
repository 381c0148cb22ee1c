//! Seeded evaluation of policies against the greedy and exact baselines.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{exact_optimal, ipms_local_search, sga_policy};
use crate::error::{Error, Result};
use crate::mrrc::{is_terminal, step};
use crate::qnet::QNetParams;
use crate::rng;
use crate::trainer::{
    rollout, ActionSelection, EvalHook, EvalMetrics, IpmsSchedEnv, MrrcSchedEnv, SchedulingEnv,
};

use super::{fnv1a64, parallel_map};

/// Per-instance evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEval {
    pub instance: usize,
    pub seed: u64,
    pub policy_return: f64,
    pub sga_return: f64,
    pub oracle_reward: Option<f64>,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_instances: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_sga_return: f64,
    /// 100 * sum(policy) / sum(oracle), when every instance has an oracle.
    pub pct_optimal: Option<f64>,
    /// 100 * sum(policy) / sum(sga).
    pub pct_sga: Option<f64>,
}

/// Greedy-policy rollout under the environment's reward rule.
fn sga_rollout(sched: &MrrcSchedEnv, seed: u64) -> Result<f64> {
    let mut state = sched.initial(seed)?;
    let mut total = 0.0;
    let mut r = rng::substream(seed, &[0x5a]);
    let mut steps = 0usize;
    while !is_terminal(&state) && steps < sched.step_cap() {
        let action = sga_policy(sched.env.reward_rule, &state);
        let (next, reward, _) = step(&sched.env, &state, &action, &mut r)?;
        total += reward;
        state = next;
        steps += 1;
    }
    Ok(total)
}

/// Evaluate a trained policy on `n` seeded instances, with SGA on the same
/// instances and the exact oracle when requested (deterministic motion and
/// guard-sized instances only). Oracle values are cached on disk when a
/// cache directory is given.
pub fn eval_policy_set(
    sched: &MrrcSchedEnv,
    params: &QNetParams,
    selection: ActionSelection,
    n: usize,
    eval_seed: u64,
    with_oracle: bool,
    oracle_cache: Option<&Path>,
    workers: usize,
) -> Result<Vec<InstanceEval>> {
    let results = parallel_map(n, workers, |i| -> Result<InstanceEval> {
        let seed = rng::mix(eval_seed, &[0xe7a1, i as u64]);
        let state0 = sched.initial(seed)?;
        let out = rollout(
            sched,
            selection,
            state0.clone(),
            params,
            false,
            0.0,
            true,
            rng::mix(seed, &[0x10]),
        )?;
        let sga_return = sga_rollout(sched, seed)?;
        let oracle_reward = if with_oracle {
            Some(cached_oracle(sched, seed, oracle_cache)?)
        } else {
            None
        };
        Ok(InstanceEval {
            instance: i,
            seed,
            policy_return: out.episode_return,
            sga_return,
            oracle_reward,
            truncated: out.truncated,
        })
    });
    results.into_iter().collect()
}

/// Exact-oracle value for the instance a seed generates, with a disk cache
/// keyed by the state's content hash.
fn cached_oracle(sched: &MrrcSchedEnv, seed: u64, cache: Option<&Path>) -> Result<f64> {
    let state = sched.initial(seed)?;
    let key = {
        let json = state.to_json()?;
        let rule = format!("{:?}", sched.env.reward_rule);
        format!("{:016x}", fnv1a64(format!("{rule}|{json}").as_bytes()))
    };
    let path: Option<PathBuf> = cache.map(|dir| dir.join(format!("{key}.json")));
    if let Some(p) = &path {
        if let Ok(text) = std::fs::read_to_string(p) {
            #[derive(Deserialize)]
            struct Cached {
                optimal_reward: f64,
            }
            if let Ok(c) = serde_json::from_str::<Cached>(&text) {
                return Ok(c.optimal_reward);
            }
        }
    }
    let oracle = exact_optimal(&sched.env, &state)?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        #[derive(Serialize)]
        struct Cached {
            optimal_reward: f64,
            explored: usize,
        }
        std::fs::write(
            p,
            serde_json::to_string(&Cached {
                optimal_reward: oracle.optimal_reward,
                explored: oracle.explored,
            })?,
        )?;
    }
    Ok(oracle.optimal_reward)
}

pub fn summarize(evals: &[InstanceEval]) -> Result<EvalSummary> {
    if evals.is_empty() {
        return Err(Error::Validation("no evaluation instances".into()));
    }
    let n = evals.len();
    let mean = evals.iter().map(|e| e.policy_return).sum::<f64>() / n as f64;
    let var = evals.iter().map(|e| (e.policy_return - mean).powi(2)).sum::<f64>()
        / (n as f64 - 1.0).max(1.0);
    let sga_sum: f64 = evals.iter().map(|e| e.sga_return).sum();
    let policy_sum: f64 = evals.iter().map(|e| e.policy_return).sum();
    let pct_sga = if sga_sum > 0.0 { Some(100.0 * policy_sum / sga_sum) } else { None };
    let pct_optimal = if evals.iter().all(|e| e.oracle_reward.is_some()) {
        let oracle_sum: f64 = evals.iter().map(|e| e.oracle_reward.unwrap()).sum();
        (oracle_sum > 0.0).then(|| 100.0 * policy_sum / oracle_sum)
    } else {
        None
    };
    Ok(EvalSummary {
        n_instances: n,
        mean_return: mean,
        std_return: var.sqrt(),
        mean_sga_return: sga_sum / n as f64,
        pct_optimal,
        pct_sga,
    })
}

/// Training-time evaluation hook for gridworld experiments.
pub struct MrrcEvalHook<'a> {
    pub sched: &'a MrrcSchedEnv,
    pub selection: ActionSelection,
    pub n: usize,
    pub eval_seed: u64,
    pub with_oracle: bool,
    pub oracle_cache: Option<PathBuf>,
    pub workers: usize,
}

impl EvalHook for MrrcEvalHook<'_> {
    fn evaluate(&self, params: &QNetParams) -> Result<EvalMetrics> {
        let evals = eval_policy_set(
            self.sched,
            params,
            self.selection,
            self.n,
            self.eval_seed,
            self.with_oracle,
            self.oracle_cache.as_deref(),
            self.workers,
        )?;
        let s = summarize(&evals)?;
        Ok(EvalMetrics {
            mean_return: s.mean_return,
            pct_optimal: s.pct_optimal,
            pct_sga: s.pct_sga,
        })
    }
}

/// Per-instance result of an IPMS policy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpmsInstanceEval {
    pub instance: usize,
    pub seed: u64,
    pub policy_makespan: f64,
    pub local_search_makespan: f64,
    pub lower_bound: f64,
    pub truncated: bool,
}

/// Evaluate a trained IPMS policy against the local-search baseline on `n`
/// seeded instances.
pub fn eval_ipms_set(
    env: &IpmsSchedEnv,
    params: &QNetParams,
    n: usize,
    eval_seed: u64,
    ls_restarts: usize,
    workers: usize,
) -> Result<Vec<IpmsInstanceEval>> {
    let results = parallel_map(n, workers, |i| -> Result<IpmsInstanceEval> {
        let seed = rng::mix(eval_seed, &[0x19e5, i as u64]);
        let s0 = env.initial(seed)?;
        let out = rollout(
            env,
            ActionSelection::Auction,
            s0.clone(),
            params,
            false,
            0.0,
            true,
            rng::mix(seed, &[0x11]),
        )?;
        let policy_makespan = -out.episode_return;
        let (_, ls) = ipms_local_search(&s0.instance, ls_restarts, rng::mix(seed, &[0x12]));
        Ok(IpmsInstanceEval {
            instance: i,
            seed,
            policy_makespan,
            local_search_makespan: ls,
            lower_bound: s0.instance.lower_bound(),
            truncated: out.truncated,
        })
    });
    results.into_iter().collect()
}

/// Training-time hook for IPMS: mean return only (baseline ratios are
/// computed by the results command, not during training).
pub struct IpmsEvalHook<'a> {
    pub env: &'a IpmsSchedEnv,
    pub n: usize,
    pub eval_seed: u64,
    pub workers: usize,
}

impl EvalHook for IpmsEvalHook<'_> {
    fn evaluate(&self, params: &QNetParams) -> Result<EvalMetrics> {
        let returns = parallel_map(self.n, self.workers, |i| -> Result<f64> {
            let seed = rng::mix(self.eval_seed, &[0x19e5, i as u64]);
            let s0 = self.env.initial(seed)?;
            let out = rollout(
                self.env,
                ActionSelection::Auction,
                s0,
                params,
                false,
                0.0,
                true,
                rng::mix(seed, &[0x11]),
            )?;
            Ok(out.episode_return)
        });
        let returns: Vec<f64> = returns.into_iter().collect::<Result<_>>()?;
        let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
        Ok(EvalMetrics { mean_return: mean, pct_optimal: None, pct_sga: None })
    }
}
