use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairldp_core::dataset::RawTable;
use fairldp_core::pipeline::{to_json, DesignReport, EvaluateReport};
use fairldp_core::{cmd_design, cmd_evaluate, cmd_perturb, cmd_sweep, cmd_verify, Error, MechanismKind, RunConfig};

/// Design, apply and evaluate fairness-aware LDP mechanisms for a sensitive
/// attribute.
#[derive(Parser)]
#[command(name = "fairldp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a mechanism for the dataset and write its JSON report.
    Design {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Perturb the sensitive column of the dataset with a designed mechanism.
    Perturb {
        #[command(flatten)]
        run: RunArgs,
        /// Report written by `design`.
        #[arg(long)]
        design: PathBuf,
    },
    /// Train on perturbed training splits, score on original test splits.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Also write one CSV row per trial here.
        #[arg(long)]
        per_trial_csv: Option<PathBuf>,
    },
    /// Evaluate every (mechanism, epsilon) pair and emit a long table.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated privacy levels; defaults to the config's sweep list.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        /// Comma-separated mechanism names; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        mechanisms: Option<Vec<String>>,
        /// Emit JSON instead of CSV.
        #[arg(long)]
        json: bool,
    },
    /// Re-check a design report and/or an evaluation report.
    Verify {
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config file plus overrides; flags win over the file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    mechanism: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Run trials one at a time.
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    skip_undefined_groups: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let text = std::fs::read_to_string(&self.config)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", self.config.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if let Some(d) = &self.data {
            cfg.data = Some(d.display().to_string());
        }
        if let Some(m) = &self.mechanism {
            cfg.mechanism = MechanismKind::parse(m)?;
        }
        if self.epsilon.is_some() {
            cfg.epsilon = self.epsilon;
        }
        if self.zeta.is_some() {
            cfg.zeta = self.zeta;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.split.trials = t;
        }
        if self.serial {
            cfg.parallel = false;
        }
        if self.skip_undefined_groups {
            cfg.eval.skip_undefined_groups = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Design { run } => {
            let cfg = run.load()?;
            let report = cmd_design(&cfg, &cfg.load_dataset()?)?;
            emit(run.out.as_deref(), &to_json(&report)?)?;
        }
        Command::Perturb { run, design } => {
            let cfg = run.load()?;
            let report: DesignReport = read_json(&design)?;
            let table = RawTable::read(Path::new(cfg.data_path()?))?;
            emit(run.out.as_deref(), &cmd_perturb(&table, &cfg.columns, &report, cfg.seed)?)?;
        }
        Command::Evaluate { run, per_trial_csv } => {
            let cfg = run.load()?;
            let report = cmd_evaluate(&cfg, &cfg.load_dataset()?)?;
            if let Some(p) = per_trial_csv {
                std::fs::write(p, report.per_trial_csv()?)?;
            }
            emit(run.out.as_deref(), &to_json(&report)?)?;
        }
        Command::Sweep { run, epsilons, mechanisms, json } => {
            let cfg = run.load()?;
            let from_cfg = cfg.sweep.clone();
            let epsilons = epsilons.or_else(|| from_cfg.as_ref().map(|s| s.epsilons.clone())).unwrap_or_default();
            let kinds = match mechanisms {
                Some(names) => names.iter().map(|n| MechanismKind::parse(n)).collect::<Result<Vec<_>, _>>()?,
                None => from_cfg.map(|s| s.mechanisms).unwrap_or_default(),
            };
            let table = cmd_sweep(&cfg, &cfg.load_dataset()?, &epsilons, &kinds)?;
            let text = if json { to_json(&table)? } else { table.to_csv()? };
            emit(run.out.as_deref(), &text)?;
        }
        Command::Verify { design, report, out } => {
            let design: Option<DesignReport> = design.as_deref().map(read_json).transpose()?;
            let report: Option<EvaluateReport> = report.as_deref().map(read_json).transpose()?;
            let result = cmd_verify(design.as_ref(), report.as_ref())?;
            emit(out.as_deref(), &to_json(&result)?)?;
            if !result.passed {
                for c in result.checks.iter().filter(|c| !c.passed) {
                    eprintln!("check failed: {}: {}", c.name, c.detail);
                }
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
