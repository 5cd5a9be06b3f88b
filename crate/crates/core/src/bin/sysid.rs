use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sysid_core::harness::{read_curves_csv, run_experiment, RunArgs};
use sysid_core::metrics::summarize;
use sysid_core::model::{pick_hyperparams, HyperParamInputs, Preset};

#[derive(Parser)]
#[command(
    name = "sysid",
    version,
    about = "Streaming linear system identification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Run estimators over simulated VAR(1) streams and write a results CSV.
    Run(RunArgs),
    /// Print final-error statistics of a results CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Print the theory-preset hyperparameters for a horizon and norm bound.
    Params {
        #[arg(long = "T")]
        horizon: f64,
        /// Upper bound on ||A*||.
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 22.0)]
        alpha: f64,
        #[arg(long, default_value_t = 5)]
        d: usize,
        /// Noise variance; tr(Sigma) = d * sigma.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long = "r-constant", default_value_t = 1.0)]
        r_constant: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> sysid_core::Result<()> {
    match command {
        Command::Run(args) => {
            let cfg = args.into_config()?;
            let result = run_experiment(&cfg)?;
            result.write(&cfg.out)?;
            let rows: usize = result.curves.iter().map(|c| c.records.len()).sum();
            println!("wrote {rows} rows to {}", cfg.out.display());
            print_summary(&result.curves);
        }
        Command::Summarize { input } => {
            let curves = read_curves_csv(&input)?;
            print_summary(&curves);
        }
        Command::Params {
            horizon,
            rho,
            alpha,
            d,
            sigma,
            r_constant,
        } => {
            let mut inputs = HyperParamInputs::new(horizon.round() as usize, rho, d as f64 * sigma);
            inputs.alpha = alpha;
            inputs.r_constant = r_constant;
            let hp = pick_hyperparams(&inputs, Preset::Theory)?;
            println!("T     = {}", hp.horizon);
            println!("u     = {}", hp.gap);
            println!("B     = {}", hp.buffer_size);
            println!("S     = {}", hp.span());
            println!("N     = {}", hp.n_buffers());
            println!("R     = {}", hp.r);
            println!("gamma = {}", hp.gamma);
            println!("a     = {}", hp.burn_in);
        }
    }
    Ok(())
}

fn print_summary(curves: &[sysid_core::metrics::ErrorCurve]) {
    let rows = summarize(curves);
    println!(
        "{:<11} {:>4} {:>12} {:>12} {:>12} {:>12} {:>9}",
        "estimator", "runs", "param_err", "std", "pred_excess", "std", "vs_ols"
    );
    for r in rows {
        let ratio = r
            .param_ratio_vs_ols
            .map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        println!(
            "{:<11} {:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>9}",
            r.estimator.name(),
            r.runs,
            r.mean_param_err,
            r.std_param_err,
            r.mean_pred_excess,
            r.std_pred_excess,
            ratio
        );
    }
}
