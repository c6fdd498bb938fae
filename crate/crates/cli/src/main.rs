use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mfpinn::harness::{self, Approach, RunConfig};
use mfpinn::{Error, Precision};

#[derive(Parser)]
#[command(name = "mfpinn", version, about = "Multi-fidelity physics-informed network experiments")]
struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in presets, or print one as JSON.
    Presets { name: Option<String> },
    /// Print the JSON schema of config files.
    Schema,
    /// Run the reference solvers and write dataset.csv.
    GenerateData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model (or every approach with `--approach all`).
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        budget: Budget,
        /// mf, single-hf, hf-with-data or all.
        #[arg(long)]
        approach: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-score a saved run on the test split.
    Evaluate {
        /// Run directory holding checkpoint.json.
        #[arg(long)]
        run: PathBuf,
        /// Config to use instead of the run's config.json.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Repeat an inverse run over consecutive seeds and summarize the parameters.
    Infer {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        budget: Budget,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect run directories into summary.csv and slices.csv.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset CSV replacing the configured data source.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct Budget {
    /// Multiplies both iteration counts.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    adam_iters: Option<usize>,
    #[arg(long)]
    lbfgs_iters: Option<usize>,
    /// f32 or f64 training arithmetic.
    #[arg(long)]
    precision: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(n)) => RunConfig::preset(n)?,
            (None, None) => return Err(Error::Config("pass --config or --preset".into())),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.dataset {
            cfg.data.dataset = Some(d.clone());
            cfg.data.generator = None;
        }
        Ok(cfg)
    }
}

impl Budget {
    fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig, Error> {
        if let Some(s) = self.scale {
            cfg = cfg.scaled(s)?;
        }
        if let Some(n) = self.adam_iters {
            cfg.schedule.adam_iters = n;
        }
        if let Some(n) = self.lbfgs_iters {
            cfg.schedule.lbfgs_iters = n;
        }
        if let Some(p) = &self.precision {
            cfg.schedule.precision = match p.as_str() {
                "f32" => Precision::F32,
                "f64" => Precision::F64,
                other => return Err(Error::Config(format!("unknown precision `{other}`"))),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn train(cfg: RunConfig, approach: Option<&str>, out: Option<&Path>) -> Result<(), Error> {
    let results = match approach {
        Some("all") => harness::compare(&cfg, &Approach::ALL, out)?,
        Some(a) => {
            let mut c = cfg;
            c.approach = a.parse()?;
            c.validate()?;
            vec![harness::run(&c, out)?]
        }
        None => vec![harness::run(&cfg, out)?],
    };
    let records: Vec<_> = results.iter().map(|r| r.record()).collect();
    print(&serde_json::to_value(records)?);
    Ok(())
}

fn evaluate(run: &Path, config: Option<&Path>, dataset: Option<&Path>) -> Result<(), Error> {
    let mut cfg = RunConfig::load(config.map_or_else(|| run.join("config.json"), Path::to_path_buf))?;
    let saved = run.join("dataset.csv");
    if let Some(d) = dataset {
        cfg.data.dataset = Some(d.to_path_buf());
    } else if cfg.data.dataset.is_none() && saved.exists() {
        cfg.data.dataset = Some(saved);
    }
    let report = harness::evaluate_saved(&cfg, run)?;
    print(&serde_json::to_value(report)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Presets { name: None } => {
            for n in RunConfig::preset_names() {
                println!("{n}");
            }
        }
        Command::Presets { name: Some(n) } => println!("{}", RunConfig::preset(&n)?.to_json()?),
        Command::Schema => print(&RunConfig::json_schema()),
        Command::GenerateData { cfg, out } => {
            let cfg = cfg.load()?;
            let data = harness::load_data(&cfg)?;
            let path = harness::save_data(&data, &out)?;
            print(&json!({ "dataset": path, "rows": data.dataset.rows.len(), "meta": data.meta }));
        }
        Command::Train {
            cfg,
            budget,
            approach,
            out,
        } => {
            let cfg = budget.apply(cfg.load()?)?;
            let out = out.or_else(|| cfg.output_dir.clone());
            train(cfg, approach.as_deref(), out.as_deref())?;
        }
        Command::Evaluate { run, config, dataset } => evaluate(&run, config.as_deref(), dataset.as_deref())?,
        Command::Infer { cfg, budget, runs, out } => {
            let cfg = budget.apply(cfg.load()?)?;
            let out = out.or_else(|| cfg.output_dir.clone());
            let summary = harness::infer(&cfg, runs, out.as_deref())?;
            print(&serde_json::to_value(summary)?);
        }
        Command::Report { out, runs } => {
            let n = harness::report(&runs, &out)?;
            print(&json!({ "runs": n, "summary": out.join("summary.csv"), "slices": out.join("slices.csv") }));
        }
    }
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "kind": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim()),
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp_secs().init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
