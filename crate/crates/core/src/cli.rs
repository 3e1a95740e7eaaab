//! Command-line front end. The binary is a thin wrapper around [`run`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::Error;
use crate::harness::{
    collect_dataset, control_benchmark, control_summary, monte_carlo, open_loop_benchmark,
    write_closed_loop_csv, write_report, write_timing_csv, BenchmarkSummary, ReportFormat,
};
use crate::verify::{self, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "rokdeepc",
    version,
    about = "Kernel-based data-driven predictive control experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record a data set and write clean.csv and measured.csv.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Measurement noise variance (defaults to experiment.control_noise).
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Open-loop prediction errors of all predictors.
    PredictBench {
        #[command(flatten)]
        common: Common,
    },
    /// One closed-loop run per configured controller.
    ControlBench {
        #[command(flatten)]
        common: Common,
    },
    /// Repeated closed-loop runs with fresh data sets.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Property battery; exits 1 naming any failed property.
    Verify {
        /// Closed-loop config for the performance-bound check (the bundled example if omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides experiment.seed (and the Monte Carlo base seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Io { .. } | Error::Parse { .. } | Error::Serde(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_SOLVER,
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn load(common: &Common) -> crate::Result<Self> {
        let mut cfg = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(out) = &common.out {
            cfg.output.dir = out.clone();
        }
        cfg.validate()?;
        let out = cfg.output.dir.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(out.clone(), e))?;
        Ok(Self {
            cfg,
            out,
            quiet: common.quiet,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            let _ = writeln!(std::io::stdout(), "{}", line.as_ref());
        }
    }

    fn write_summary(&self, summary: &BenchmarkSummary, stem: &str) -> crate::Result<()> {
        write_report(
            summary,
            self.path(&format!("{stem}.csv")),
            ReportFormat::Csv,
        )?;
        write_report(
            summary,
            self.path(&format!("{stem}.json")),
            ReportFormat::Json,
        )
    }

    fn print_stats(&self, summary: &BenchmarkSummary) {
        self.say(format!(
            "{:<28} {:>12} {:>14} {:>12} {:>5} {:>5}",
            "method", "noise_var", "mean", "std", "runs", "fail"
        ));
        for s in &summary.stats {
            self.say(format!(
                "{:<28} {:>12.3e} {:>14.6} {:>12.6} {:>5} {:>5}",
                s.method, s.noise_variance, s.mean, s.std, s.runs, s.failures
            ));
        }
    }
}

fn execute(cli: Cli) -> crate::Result<i32> {
    match cli.command {
        Command::Collect { common, noise } => {
            let ctx = Ctx::load(&common)?;
            let e = &ctx.cfg.experiment;
            let noise = noise.unwrap_or(e.control_noise);
            if !(noise >= 0.0 && noise.is_finite()) {
                return Err(Error::Config {
                    path: "--noise".into(),
                    message: "must be a finite variance >= 0".into(),
                });
            }
            let (clean, measured) = collect_dataset(&ctx.cfg, e.seed, noise)?;
            clean.save_csv(ctx.path("clean.csv"))?;
            measured.save_csv(ctx.path("measured.csv"))?;
            ctx.say(format!(
                "wrote {} samples to {}",
                clean.len(),
                ctx.out.display()
            ));
        }
        Command::PredictBench { common } => {
            let ctx = Ctx::load(&common)?;
            let summary = open_loop_benchmark(&ctx.cfg)?;
            ctx.write_summary(&summary, "prediction")?;
            ctx.print_stats(&summary);
        }
        Command::ControlBench { common } => {
            let ctx = Ctx::load(&common)?;
            let records = control_benchmark(&ctx.cfg)?;
            write_closed_loop_csv(&records, ctx.path("closed_loop.csv"))?;
            write_timing_csv(&records, ctx.path("timing.csv"))?;
            let summary = control_summary(&ctx.cfg, &records);
            ctx.write_summary(&summary, "control")?;
            ctx.say(format!(
                "{:<28} {:>14} {:>14} {:>12}",
                "method", "cost", "cost_measured", "solve_s"
            ));
            for r in &records {
                let total: f64 = r.solve_time_s.iter().sum();
                ctx.say(format!(
                    "{:<28} {:>14.6} {:>14.6} {:>12.3}",
                    r.method, r.realized_cost, r.realized_cost_measured, total
                ));
            }
        }
        Command::Montecarlo { common, runs } => {
            let ctx = Ctx::load(&common)?;
            let n_runs = runs.unwrap_or(ctx.cfg.montecarlo.n_runs);
            let summary = monte_carlo(&ctx.cfg, n_runs, ctx.cfg.experiment.seed)?;
            ctx.write_summary(&summary, "montecarlo")?;
            ctx.print_stats(&summary);
        }
        Command::Verify {
            config,
            seed,
            quiet,
        } => {
            let mut opts = VerifyOptions::default();
            if let Some(path) = config {
                opts.bound_config = RunConfig::load(path)?;
            }
            if let Some(seed) = seed {
                opts.seed = seed;
            }
            return verify_battery(&opts, quiet);
        }
    }
    Ok(EXIT_OK)
}

fn verify_battery(opts: &VerifyOptions, quiet: bool) -> crate::Result<i32> {
    let outcomes = verify::run_all(opts)?;
    let mut failed = Vec::new();
    for o in &outcomes {
        if !quiet {
            println!("{o}");
        }
        if !o.passed {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("property failure: {}", failed.join(", "));
        Ok(EXIT_PROPERTY)
    }
}
