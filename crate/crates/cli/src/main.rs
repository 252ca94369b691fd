use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use altmin_cli::config::RunConfig;
use altmin_cli::{gradcheck, gridsearch, presets, theory_cmd, train, CliError, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "altmin", version, about = "Online alternating minimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration; writes metrics.csv and model.ckpt
    Train(Common),
    /// Run every point of a grid (list-valued keys) and rank the results
    Gridsearch(Common),
    /// Check the stochastic AM error bounds on a block quadratic
    Theory(Common),
    /// Compare every analytic gradient and solver against its oracle
    Gradcheck(Common),
    /// List the built-in presets
    Presets,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset; keys from --config override it
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the `seed` key
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(p) = &self.preset {
            cfg.set_one("preset", p)?;
        }
        if let Some(s) = self.seed {
            cfg.set_one("seed", s)?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = presets::expand(&c.load()?)?;
            let rows = train::cmd_train(&cfg, &c.out)?;
            if let Some(last) = rows.last() {
                println!(
                    "{} epoch {}: {} loss {:.4} accuracy {:.4}",
                    last.algo, last.epoch, last.split, last.loss, last.accuracy
                );
            }
            println!("wrote {}", c.out.join(train::METRICS_FILE).display());
        }
        Command::Gridsearch(c) => {
            let report = gridsearch::cmd_gridsearch(&c.load()?, &c.out)?;
            let top = &report.ranking[0];
            println!("best: {} (mean accuracy {:.4})", report.best().label(), top.mean_accuracy);
            println!(
                "{} runs over {} points; wrote {}",
                report.runs.len(),
                report.points.len(),
                c.out.join(gridsearch::RESULTS_FILE).display()
            );
        }
        Command::Theory(c) => {
            let res = theory_cmd::cmd_theory(&c.load()?, &c.out);
            if matches!(res, Ok(_) | Err(CliError::Check(_))) {
                println!("wrote {}", c.out.join(theory_cmd::THEORY_FILE).display());
            }
            let o = res?;
            println!("all {} rows pass, slope {:.3}", o.rows.len(), o.final_rate.slope);
        }
        Command::Gradcheck(c) => {
            let res = gradcheck::cmd_gradcheck(&c.load()?, &c.out);
            if matches!(res, Ok(_) | Err(CliError::Check(_))) {
                println!("wrote {}", c.out.join(gradcheck::GRADCHECK_FILE).display());
            }
            let r = res?;
            println!("{} checks in {} families pass", r.results.len(), r.families().len());
        }
        Command::Presets => {
            for name in presets::preset_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
