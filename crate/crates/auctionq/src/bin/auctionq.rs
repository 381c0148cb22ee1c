//! Experiment runner. Thin argument dispatch over the library's experiment
//! commands; every experiment is described by a JSON config file.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auctionq::error::Error;
use auctionq::experiment::{run, ExperimentConfig};

const USAGE: &str = "\
auctionq — multi-robot / parallel-machine scheduling experiments

USAGE:
    auctionq train     <config.json>
    auctionq eval      <checkpoint.json> <config.json>
    auctionq transfer  <checkpoint.json> <config.json>
    auctionq ablate    <config.json>
    auctionq ipms      <config.json> [--restarts N]
    auctionq gradcheck [--instances N] [--seed S] [--out DIR]
    auctionq oracle    <config.json>

Environment overrides: AUCTIONQ_OUT_DIR (output root), AUCTIONQ_WORKERS.
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), Error> {
    let Some(cmd) = args.first() else {
        eprint!("{USAGE}");
        return Err(Error::Validation("missing subcommand".into()));
    };
    match cmd.as_str() {
        "train" => {
            let config = load_config(args.get(1))?;
            let artifacts = run::cmd_train(&config)?;
            println!(
                "trained {} episodes -> {}",
                config.train.episodes,
                artifacts.final_checkpoint.display()
            );
            Ok(())
        }
        "eval" => {
            let (checkpoint, config) = checkpoint_and_config(args)?;
            let artifacts = run::cmd_eval(&checkpoint, &config)?;
            println!("evaluated {} instances -> {}", artifacts.instances.len(), artifacts.summary_path.display());
            Ok(())
        }
        "transfer" => {
            let (checkpoint, config) = checkpoint_and_config(args)?;
            let path = run::cmd_transfer(&checkpoint, &config)?;
            println!("transfer table -> {}", path.display());
            Ok(())
        }
        "ablate" => {
            let config = load_config(args.get(1))?;
            let path = run::cmd_ablate(&config)?;
            println!("ablation results -> {}", path.display());
            Ok(())
        }
        "ipms" => {
            let config = load_config(args.get(1))?;
            let restarts = flag_value(args, "--restarts")?.unwrap_or(10);
            let path = run::cmd_ipms(&config, restarts)?;
            println!("ipms results -> {}", path.display());
            Ok(())
        }
        "gradcheck" => {
            let instances = flag_value(args, "--instances")?.unwrap_or(20);
            let seed = flag_value(args, "--seed")?.unwrap_or(1);
            let out = flag_path(args, "--out");
            let (report, pass) = run::cmd_gradcheck(instances, seed, out.as_deref())?;
            for (block, err) in &report {
                println!("{block}: max relative error {err:.3e}");
            }
            if pass {
                println!("gradcheck PASS (all blocks < 1e-4)");
                Ok(())
            } else {
                Err(Error::NonFinite("analytic gradients disagree with finite differences".into()))
            }
        }
        "oracle" => {
            let config = load_config(args.get(1))?;
            let path = run::cmd_oracle(&config)?;
            println!("oracle table -> {}", path.display());
            Ok(())
        }
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(())
        }
        other => {
            eprint!("{USAGE}");
            Err(Error::Validation(format!("unknown subcommand {other:?}")))
        }
    }
}

fn load_config(arg: Option<&String>) -> Result<ExperimentConfig, Error> {
    let Some(path) = arg else {
        return Err(Error::Validation("missing config path".into()));
    };
    ExperimentConfig::load(Path::new(path))
}

fn checkpoint_and_config(args: &[String]) -> Result<(PathBuf, ExperimentConfig), Error> {
    let Some(checkpoint) = args.get(1) else {
        return Err(Error::Validation("missing checkpoint path".into()));
    };
    let config = load_config(args.get(2))?;
    Ok((PathBuf::from(checkpoint), config))
}

fn flag_value<T: std::str::FromStr>(args: &[String], flag: &str) -> Result<Option<T>, Error> {
    match args.iter().position(|a| a == flag) {
        None => Ok(None),
        Some(i) => match args.get(i + 1) {
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Validation(format!("bad value for {flag}: {v:?}"))),
            None => Err(Error::Validation(format!("{flag} needs a value"))),
        },
    }
}

fn flag_path(args: &[String], flag: &str) -> Option<PathBuf> {
    args.iter().position(|a| a == flag).and_then(|i| args.get(i + 1)).map(PathBuf::from)
}
