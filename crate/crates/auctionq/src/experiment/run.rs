//! The experiment commands behind the CLI subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::auction::adp_select_generic;
use crate::auction::QnetValue;
use crate::baselines::exact_optimal;
use crate::error::{Error, Result};
use crate::mrrc::{is_terminal, step, Matching};
use crate::qnet::{
    finite_difference_report, load_checkpoint, save_checkpoint, ArchConfig, BatchItem, QNetParams,
    StateView,
};
use crate::rng;
use crate::trainer::{
    train_with_snapshots, ActionSelection, IpmsSchedEnv, LogRow, MrrcSchedEnv, SchedulingEnv,
    TrainConfig, TrainOutcome,
};

use super::csv::{
    CsvFile, CsvField, ABLATE_CURVES_HEADER, ABLATE_FINAL_HEADER, EPISODE_TRACE_HEADER,
    EVAL_INSTANCES_HEADER, EVAL_SUMMARY_HEADER, GANTT_HEADER, GRADCHECK_HEADER,
    IPMS_RESULTS_HEADER, ORACLE_HEADER, TRAIN_LOG_HEADER, TRANSFER_HEADER,
};
use super::eval::{
    eval_ipms_set, eval_policy_set, summarize, IpmsEvalHook, InstanceEval, MrrcEvalHook,
};
use super::{version_string, worker_count, EnvKind, ExperimentConfig};

pub struct TrainArtifacts {
    pub out_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub outcome: TrainOutcome,
}

fn write_train_log(
    rows: &[LogRow],
    path: &Path,
    config_hash: &str,
) -> Result<()> {
    let mut csv = CsvFile::new(TRAIN_LOG_HEADER, &version_string(), config_hash);
    for r in rows {
        csv.push_row(&[
            CsvField::UInt(r.episode as u64),
            CsvField::UInt(r.wall_ms),
            CsvField::OptFloat(r.loss),
            CsvField::OptFloat(r.eval_mean_return),
            CsvField::OptFloat(r.eval_pct_optimal),
            CsvField::OptFloat(r.eval_pct_sga),
            CsvField::Float(r.explore_prob),
        ]);
    }
    csv.write(path)
}

fn mrrc_sched(config: &ExperimentConfig, size: (usize, usize)) -> Result<MrrcSchedEnv> {
    Ok(MrrcSchedEnv {
        env: Arc::new(config.mrrc_env()?),
        n_robots: size.0,
        n_tasks: size.1,
        age_range: config.age_range,
    })
}

/// Oracle eligibility: deterministic motion within the search guard.
fn oracle_eligible(config: &ExperimentConfig, size: (usize, usize)) -> bool {
    config.problem.env == EnvKind::MrrcDet && size.0 <= 3 && size.1 <= 8
}

/// Train on the first configured size and write the log plus checkpoints.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainArtifacts> {
    config.validate()?;
    let out_dir = config.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(
        out_dir.join("config_used.json"),
        serde_json::to_string_pretty(config)?,
    )?;
    let hash = config.config_hash();
    let workers = worker_count();

    let params0 = QNetParams::init(config.arch, config.train.seed)?;
    let outcome = match config.problem.env {
        EnvKind::Ipms => {
            let env = IpmsSchedEnv { n_machines: config.sizes[0].0, n_tasks: config.sizes[0].1 };
            let hook = IpmsEvalHook {
                env: &env,
                n: config.eval_instances,
                eval_seed: rng::mix(config.eval_seed, &[0x7a11d]),
                workers,
            };
            train_snap(config, &env, params0, &hook, &out_dir)?
        }
        _ => {
            let sched = mrrc_sched(config, config.sizes[0])?;
            // Periodic evaluation (and best-checkpoint selection) runs on a
            // validation stream derived from, but distinct from, the final
            // evaluation seed.
            let hook = MrrcEvalHook {
                sched: &sched,
                selection: config.train.action_selection,
                n: config.eval_instances,
                eval_seed: rng::mix(config.eval_seed, &[0x7a11d]),
                with_oracle: oracle_eligible(config, config.sizes[0]),
                oracle_cache: Some(out_dir.join("oracle_cache")),
                workers,
            };
            train_snap(config, &sched, params0, &hook, &out_dir)?
        }
    };

    let log_path = out_dir.join("training_log.csv");
    write_train_log(&outcome.log, &log_path, &hash)?;
    let final_checkpoint = out_dir.join("checkpoint_final.json");
    save_checkpoint(&outcome.params, &final_checkpoint)?;
    if outcome.aborted {
        eprintln!("training aborted on divergent loss; checkpoint holds the last finite state");
    }
    Ok(TrainArtifacts { out_dir, final_checkpoint, log_path, outcome })
}

fn train_snap<E: SchedulingEnv>(
    config: &ExperimentConfig,
    env: &E,
    params0: QNetParams,
    hook: &dyn crate::trainer::EvalHook,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let every = config.checkpoint_every;
    train_with_snapshots(env, params0, &config.train, hook, |episode, params| {
        if every > 0 && (episode + 1) % every == 0 {
            save_checkpoint(params, &out_dir.join(format!("checkpoint_ep{:06}.json", episode + 1)))?;
        }
        Ok(())
    })
}

pub struct EvalArtifacts {
    pub instances: Vec<InstanceEval>,
    pub summary_path: PathBuf,
}

/// Evaluate a checkpoint on the first configured size; writes per-instance
/// and summary CSVs (plus optional traces for the first instance).
pub fn cmd_eval(checkpoint: &Path, config: &ExperimentConfig) -> Result<EvalArtifacts> {
    config.validate()?;
    if config.problem.env == EnvKind::Ipms {
        return Err(Error::Validation("use the ipms command for machine scheduling".into()));
    }
    let out_dir = config.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let hash = config.config_hash();
    let params = load_checkpoint(checkpoint)?;
    let sched = mrrc_sched(config, config.sizes[0])?;
    let with_oracle = oracle_eligible(config, config.sizes[0]);
    let evals = eval_policy_set(
        &sched,
        &params,
        config.train.action_selection,
        config.eval_instances,
        config.eval_seed,
        with_oracle,
        Some(&out_dir.join("oracle_cache")),
        worker_count(),
    )?;

    let mut csv = CsvFile::new(EVAL_INSTANCES_HEADER, &version_string(), &hash);
    for e in &evals {
        let pct_opt = e.oracle_reward.and_then(|o| (o > 0.0).then(|| 100.0 * e.policy_return / o));
        let pct_sga = (e.sga_return > 0.0).then(|| 100.0 * e.policy_return / e.sga_return);
        csv.push_row(&[
            CsvField::UInt(e.instance as u64),
            CsvField::UInt(e.seed),
            CsvField::Float(e.policy_return),
            CsvField::Float(e.sga_return),
            CsvField::OptFloat(e.oracle_reward),
            CsvField::OptFloat(pct_opt),
            CsvField::OptFloat(pct_sga),
            CsvField::Bool(e.truncated),
        ]);
    }
    csv.write(&out_dir.join("eval_instances.csv"))?;

    let s = summarize(&evals)?;
    let mut csv = CsvFile::new(EVAL_SUMMARY_HEADER, &version_string(), &hash);
    csv.push_row(&[
        CsvField::UInt(s.n_instances as u64),
        CsvField::Float(s.mean_return),
        CsvField::Float(s.std_return),
        CsvField::Float(s.mean_sga_return),
        CsvField::OptFloat(s.pct_optimal),
        CsvField::OptFloat(s.pct_sga),
    ]);
    let summary_path = out_dir.join("eval_summary.csv");
    csv.write(&summary_path)?;

    if config.emit_traces {
        emit_traces(config, &sched, &params, &out_dir, &hash)?;
    }
    Ok(EvalArtifacts { instances: evals, summary_path })
}

/// Episode trace CSV and auction trace JSONL for the first eval instance.
fn emit_traces(
    config: &ExperimentConfig,
    sched: &MrrcSchedEnv,
    params: &QNetParams,
    out_dir: &Path,
    hash: &str,
) -> Result<()> {
    let seed = rng::mix(config.eval_seed, &[0xe7a1, 0]);
    let mut state = sched.initial(seed)?;
    let mut step_rng = rng::substream(seed, &[0x77]);
    let mut csv = CsvFile::new(EPISODE_TRACE_HEADER, &version_string(), hash);
    let mut jsonl = String::new();
    let mut steps = 0usize;
    while !is_terminal(&state) && steps < sched.step_cap() {
        let mut value = QnetValue::new(&state, params, rng::mix(seed, &[0x78, steps as u64]), true)?;
        let robots: Vec<u32> = state.robots.iter().map(|r| r.id).collect();
        let tasks = state.alive_task_ids();
        let (action, trace, _) = adp_select_generic(&robots, &tasks, &mut value)?;
        for round in &trace {
            jsonl.push_str(&serde_json::to_string(round)?);
            jsonl.push('\n');
        }
        let (next, reward, _) = step(&sched.env, &state, &action, &mut step_rng)?;
        csv.push_row(&[
            CsvField::UInt(state.clock as u64),
            CsvField::Str(&action.to_log_string()),
            CsvField::Float(reward),
            CsvField::UInt(next.n_alive() as u64),
        ]);
        state = next;
        steps += 1;
    }
    csv.write(&out_dir.join("episode_trace.csv"))?;
    std::fs::write(out_dir.join("auction_trace.jsonl"), jsonl)?;
    Ok(())
}

/// Evaluate one checkpoint across all configured sizes without retraining.
pub fn cmd_transfer(checkpoint: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    if config.problem.env == EnvKind::Ipms {
        return Err(Error::Validation("transfer evaluation applies to the gridworld problem".into()));
    }
    let out_dir = config.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let hash = config.config_hash();
    let params = load_checkpoint(checkpoint)?;
    let workers = worker_count();

    let mut csv = CsvFile::new(TRANSFER_HEADER, &version_string(), &hash);
    for &size in &config.sizes {
        let sched = mrrc_sched(config, size)?;
        let with_oracle = oracle_eligible(config, size);
        let evals = eval_policy_set(
            &sched,
            &params,
            config.train.action_selection,
            config.eval_instances,
            config.eval_seed,
            with_oracle,
            Some(&out_dir.join("oracle_cache")),
            workers,
        )?;
        let s = summarize(&evals)?;

        // Optional baseline trained at this size, for the ratio column.
        let baseline = config
            .transfer_baselines
            .iter()
            .find(|b| (b.robots, b.tasks) == size)
            .map(|b| -> Result<f64> {
                let bp = load_checkpoint(Path::new(&b.checkpoint))?;
                let evals = eval_policy_set(
                    &sched,
                    &bp,
                    config.train.action_selection,
                    config.eval_instances,
                    config.eval_seed,
                    false,
                    None,
                    workers,
                )?;
                Ok(summarize(&evals)?.mean_return)
            })
            .transpose()?;
        let ratio = baseline.and_then(|b| (b != 0.0).then(|| 100.0 * s.mean_return / b));

        csv.push_row(&[
            CsvField::UInt(size.0 as u64),
            CsvField::UInt(size.1 as u64),
            CsvField::Float(s.mean_return),
            CsvField::OptFloat(s.pct_sga),
            CsvField::OptFloat(s.pct_optimal),
            CsvField::OptFloat(baseline),
            CsvField::OptFloat(ratio),
        ]);
    }
    let path = out_dir.join("transfer.csv");
    csv.write(&path)?;
    Ok(path)
}

const ABLATION_ARMS: [&str; 4] = ["full", "single-layer", "uniform-p", "max-op"];

/// Derive the architecture/selection for one ablation arm.
pub fn ablation_arm(arch: ArchConfig, train: TrainConfig, arm: &str) -> (ArchConfig, TrainConfig) {
    let mut arch = arch;
    let mut train = train;
    match arm {
        "full" => {}
        "single-layer" => arch.flags.single_layer = true,
        "uniform-p" => arch.flags.uniform_presence = true,
        "max-op" => train.action_selection = ActionSelection::ExhaustiveMax,
        other => panic!("unknown ablation arm {other}"),
    }
    (arch, train)
}

/// Train and evaluate the full method and its three ablation arms with
/// shared seeds; emits long-format learning curves and final returns.
pub fn cmd_ablate(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    if config.problem.env == EnvKind::Ipms {
        return Err(Error::Validation("the ablation study runs on the gridworld problem".into()));
    }
    let out_dir = config.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let hash = config.config_hash();
    let size = config.sizes[0];
    let workers = worker_count();

    let mut curves = CsvFile::new(ABLATE_CURVES_HEADER, &version_string(), &hash);
    let mut finals = CsvFile::new(ABLATE_FINAL_HEADER, &version_string(), &hash);

    for arm in ABLATION_ARMS {
        if arm == "max-op" && size.0 * size.1 > 64 {
            eprintln!(
                "note: skipping max-op arm ({} x {} exceeds the enumeration guard of 64)",
                size.0, size.1
            );
            continue;
        }
        let (arch, train_cfg) = ablation_arm(config.arch, config.train, arm);
        let sched = mrrc_sched(config, size)?;
        let hook = MrrcEvalHook {
            sched: &sched,
            selection: train_cfg.action_selection,
            n: config.eval_instances,
            eval_seed: config.eval_seed,
            with_oracle: false,
            oracle_cache: None,
            workers,
        };
        let params0 = QNetParams::init(arch, train_cfg.seed)?;
        let outcome = crate::trainer::train(&sched, params0, &train_cfg, &hook)?;
        for r in &outcome.log {
            curves.push_row(&[
                CsvField::Str(arm),
                CsvField::UInt(train_cfg.seed),
                CsvField::UInt(r.episode as u64),
                CsvField::OptFloat(r.loss),
                CsvField::OptFloat(r.eval_mean_return),
                CsvField::Float(r.explore_prob),
            ]);
        }
        let evals = eval_policy_set(
            &sched,
            &outcome.params,
            train_cfg.action_selection,
            config.eval_instances,
            config.eval_seed,
            false,
            None,
            workers,
        )?;
        let s = summarize(&evals)?;
        finals.push_row(&[
            CsvField::Str(arm),
            CsvField::UInt(train_cfg.seed),
            CsvField::Float(s.mean_return),
        ]);
        save_checkpoint(&outcome.params, &out_dir.join(format!("checkpoint_{arm}.json")))?;
    }
    curves.write(&out_dir.join("ablate_curves.csv"))?;
    let path = out_dir.join("ablate_final.csv");
    finals.write(&path)?;
    Ok(path)
}

/// Train on machine-scheduling instances and compare against the greedy +
/// local-search baseline.
pub fn cmd_ipms(config: &ExperimentConfig, ls_restarts: usize) -> Result<PathBuf> {
    config.validate()?;
    if config.problem.env != EnvKind::Ipms {
        return Err(Error::Validation("config does not describe a machine-scheduling problem".into()));
    }
    let artifacts = cmd_train(config)?;
    let env = IpmsSchedEnv { n_machines: config.sizes[0].0, n_tasks: config.sizes[0].1 };
    let evals = eval_ipms_set(
        &env,
        &artifacts.outcome.params,
        config.eval_instances,
        config.eval_seed,
        ls_restarts,
        worker_count(),
    )?;
    let hash = config.config_hash();
    let mut csv = CsvFile::new(IPMS_RESULTS_HEADER, &version_string(), &hash);
    for e in &evals {
        csv.push_row(&[
            CsvField::UInt(e.instance as u64),
            CsvField::UInt(e.seed),
            CsvField::Float(e.policy_makespan),
            CsvField::Float(e.local_search_makespan),
            CsvField::Float(100.0 * e.policy_makespan / e.local_search_makespan),
            CsvField::Float(e.lower_bound),
        ]);
    }
    let path = artifacts.out_dir.join("ipms_results.csv");
    csv.write(&path)?;

    // First instance artifacts: the instance file and the baseline
    // schedule's Gantt rows.
    let seed0 = rng::mix(config.eval_seed, &[0x19e5, 0]);
    let instance = crate::ipms::generate_instance(seed0, config.sizes[0].0, config.sizes[0].1)?;
    std::fs::write(artifacts.out_dir.join("instance_0.json"), instance.to_json()?)?;
    let (schedule, _) = crate::baselines::ipms_local_search(&instance, ls_restarts, rng::mix(seed0, &[0x12]));
    let mut gantt = CsvFile::new(GANTT_HEADER, &version_string(), &hash);
    for row in crate::baselines::gantt_rows(&instance, &schedule) {
        gantt.push_row(&[
            CsvField::UInt(row.machine as u64),
            CsvField::UInt(row.task as u64),
            CsvField::Float(row.start),
            CsvField::Float(row.setup_end),
            CsvField::Float(row.finish),
        ]);
    }
    gantt.write(&artifacts.out_dir.join("gantt_instance_0.csv"))?;
    Ok(path)
}

/// Finite-difference gradient verification on seeded tiny instances
/// (embedding width 4, two sweeps, two samples, at most three tasks).
/// Returns the per-block worst relative errors and whether all pass 1e-4.
pub fn cmd_gradcheck(
    instances: usize,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(Vec<(String, f64)>, bool)> {
    use crate::gridworld::{generate_maze, MotionModel};
    use crate::mrrc::{initial_state, MrrcEnv, RewardRule};
    use rand::Rng as _;

    let maze = generate_maze(21, 9, 9, 0.4)?;
    let env = MrrcEnv::new(maze, MotionModel::stochastic(), RewardRule::Linear)
        .with_edge_samples(6);
    let params = QNetParams::init(ArchConfig::test_profile(), seed)?;

    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut states = Vec::new();
    let mut rng = rng::substream(seed, &[0x9c]);
    for i in 0..instances {
        let n_tasks = 2 + (i % 2); // 2 or 3 tasks
        let n_robots = 1 + (i % 2);
        let state = initial_state(&env, n_robots, n_tasks, (0, 100), rng.gen())?;
        let target = rng.gen_range(-20.0..120.0);
        states.push((state, target));
    }
    for (i, (state, target)) in states.iter().enumerate() {
        let view = StateView::from_mrrc(state);
        let pairs: Vec<(u32, u32)> = state
            .robots
            .iter()
            .zip(state.alive_task_ids())
            .map(|(r, t)| (r.id, t))
            .collect();
        let action = Matching::new(pairs)?;
        let binding = crate::qnet::ActionBinding::from_mrrc(state, &view, &action)?;
        let item = BatchItem { view, binding, seed: rng::mix(seed, &[i as u64]), target: *target };
        let report = finite_difference_report(std::slice::from_ref(&item), &params, 1e-5)?;
        for (name, err) in report {
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some((_, w)) => *w = w.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    let pass = worst.iter().all(|(_, e)| *e < 1e-4);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = CsvFile::new(GRADCHECK_HEADER, &version_string(), "gradcheck");
        for (name, err) in &worst {
            csv.push_row(&[CsvField::Str(name), CsvField::Float(*err)]);
        }
        csv.write(&dir.join("gradcheck.csv"))?;
    }
    Ok((worst, pass))
}

/// Compute (and cache) exact optima for the configured evaluation set.
pub fn cmd_oracle(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    let size = config.sizes[0];
    if !oracle_eligible(config, size) {
        return Err(Error::GuardExceeded(format!(
            "oracle requires deterministic motion and sizes within 3 robots / 8 tasks, got {size:?}"
        )));
    }
    let out_dir = config.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let hash = config.config_hash();
    let sched = mrrc_sched(config, size)?;
    let mut csv = CsvFile::new(ORACLE_HEADER, &version_string(), &hash);
    for i in 0..config.eval_instances {
        let seed = rng::mix(config.eval_seed, &[0xe7a1, i as u64]);
        let state = sched.initial(seed)?;
        let oracle = exact_optimal(&sched.env, &state)?;
        csv.push_row(&[
            CsvField::UInt(i as u64),
            CsvField::UInt(seed),
            CsvField::Float(oracle.optimal_reward),
            CsvField::UInt(oracle.explored as u64),
        ]);
    }
    let path = out_dir.join("oracle.csv");
    csv.write(&path)?;
    Ok(path)
}
