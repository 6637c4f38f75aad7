use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use secrelay::config::{default_config, NetworkConfig};
use secrelay::dnn::{self, SurrogateModel, TrainConfig};
use secrelay::experiments::{self, SweepSpec};
use secrelay::parallel::Execution;
use secrelay::spca::SpcaOptions;
use secrelay::Error;

#[derive(Parser)]
#[command(name = "secrelay", version, about = "Secrecy-rate beamforming for untrusted relay networks")]
struct Cli {
    /// Network configuration JSON; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Run trials on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one realization and print the solution as JSON.
    Solve,
    /// Run a parameter sweep described by a JSON spec and write the CSV.
    Sweep {
        spec: PathBuf,
        /// Also write per-trial records as JSON lines.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Generate an SPCA-labelled dataset as JSON lines; resumes an existing file.
    GenData {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Train the surrogate on a dataset and write the model JSON.
    Train {
        data: PathBuf,
        /// Training options JSON; defaults are used when omitted.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a model on the validation split of a dataset.
    Eval {
        model: PathBuf,
        data: PathBuf,
        /// Evaluate on every sample instead of the validation split.
        #[arg(long)]
        all: bool,
    },
    /// Time the solver against surrogate inference, one model per size.
    Bench {
        #[arg(required = true)]
        models: Vec<PathBuf>,
    },
    /// Compare SPCA with the brute-force power-grid oracle.
    Oracle {
        /// Grid values per power axis.
        #[arg(long, default_value_t = 40)]
        grid: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidConfig(_) | Error::InvalidArgument(_) => 1,
                _ => 2,
            })
        }
    }
}

fn load_config(cli: &Cli) -> secrelay::Result<NetworkConfig> {
    let mut cfg = match &cli.config {
        Some(p) => NetworkConfig::from_json_file(p)?,
        None => default_config(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn exec(cli: &Cli) -> Execution {
    if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn require_out(cli: &Cli) -> secrelay::Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::InvalidArgument("--out is required".into()))
}

fn print_json(v: &serde_json::Value) -> secrelay::Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(cli: &Cli) -> secrelay::Result<()> {
    let opts = SpcaOptions::default();
    match &cli.cmd {
        Command::Solve => {
            let cfg = load_config(cli)?;
            let inst = experiments::solve_instance(&cfg, cfg.seed, &opts)?;
            let solution = inst.solution.as_ref().map(|s| {
                let mut j = s.to_json();
                // Wall times would make the output differ between runs.
                j.as_object_mut().map(|o| o.remove("solve_times"));
                j
            });
            let out = json!({
                "seed": cfg.seed,
                "N": cfg.n,
                "N_E": cfg.n_e,
                "fipsa": inst.fipsa.as_ref().map(|f| f.to_json()),
                "solution": solution,
                "error": inst.error,
            });
            match &cli.out {
                Some(p) => std::fs::write(p, serde_json::to_string_pretty(&out)? + "\n")?,
                None => print_json(&out)?,
            }
            if inst.error.is_some() {
                return Err(Error::Solver(inst.error.clone().unwrap_or_default()));
            }
        }
        Command::Sweep { spec, records } => {
            let mut spec: SweepSpec = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
            if let Some(c) = &cli.config {
                spec.base = NetworkConfig::from_json_file(c)?;
            }
            if let Some(t) = cli.trials {
                spec.trials = t;
            }
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let out = cli
                .out
                .clone()
                .or_else(|| spec.output.clone())
                .ok_or_else(|| Error::InvalidArgument("sweep needs --out or an output path in the spec".into()))?;
            let res = experiments::run_sweep(&spec, &opts, exec(cli))?;
            experiments::write_csv(&res.rows, &out)?;
            if let Some(r) = records {
                let flat: Vec<_> = res.records.into_iter().flatten().collect();
                experiments::write_records(&flat, r)?;
            }
            log::info!("wrote {}", out.display());
        }
        Command::GenData { samples } => {
            let cfg = load_config(cli)?;
            let out = require_out(cli)?;
            dnn::generate_dataset(&cfg, *samples, cfg.seed, &opts, exec(cli), Some(out))?;
        }
        Command::Train { data, train_config, epochs } => {
            let mut tc: TrainConfig = match train_config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            if let Some(e) = epochs {
                tc.epochs = *e;
            }
            if let Some(s) = cli.seed {
                tc.seed = s;
            }
            let out = require_out(cli)?;
            let (samples, _) = dnn::read_dataset(data)?;
            let (model, report) = dnn::train(&samples, &tc)?;
            model.save(out)?;
            print_json(&json!({
                "best_epoch": report.best_epoch,
                "best_val_mse": report.best_val_mse,
                "final_val_mse": report.final_val_mse,
            }))?;
        }
        Command::Eval { model, data, all } => {
            let cfg = load_config(cli)?;
            let model = SurrogateModel::load(model)?;
            let (samples, _) = dnn::read_dataset(data)?;
            let idx: Vec<usize> = if *all {
                (0..samples.len()).collect()
            } else {
                dnn::split_indices(samples.len(), model.meta.train_fraction, model.meta.train_seed).1
            };
            let chosen: Vec<&dnn::Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let report = dnn::evaluate(&model, &cfg, &chosen, exec(cli))?;
            print_json(&serde_json::to_value(&report)?)?;
        }
        Command::Bench { models } => {
            let base = load_config(cli)?;
            let mut entries = vec![];
            for p in models {
                let m = SurrogateModel::load(p)?;
                let mut cfg = base.resized(m.meta.n, m.meta.n_e);
                cfg.seed = base.seed;
                entries.push((cfg, m));
            }
            let rows = experiments::bench_timing(&entries, cli.trials.unwrap_or(10), &opts)?;
            print_json(&serde_json::to_value(&rows)?)?;
        }
        Command::Oracle { grid } => {
            let cfg = load_config(cli)?;
            if *grid == 0 {
                return Err(Error::InvalidArgument("--grid must be at least 1".into()));
            }
            let rows = experiments::compare_oracle(&cfg, cli.trials.unwrap_or(50), grid - 1, &opts, exec(cli))?;
            let mut gaps: Vec<f64> = rows.iter().map(|r| (r.r_s_spca - r.r_s_oracle).abs()).collect();
            gaps.sort_by(f64::total_cmp);
            let within = rows.iter().filter(|r| r.r_s_spca >= r.r_s_oracle - 0.05).count();
            print_json(&json!({
                "trials": rows.len(),
                "median_abs_gap": gaps.get(gaps.len() / 2),
                "frac_within_0.05": within as f64 / rows.len().max(1) as f64,
                "rows": rows,
            }))?;
        }
    }
    Ok(())
}
