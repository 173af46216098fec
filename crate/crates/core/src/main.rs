use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qpf::harness::{self, Backend, ExperimentConfig, VerifyOptions};
use qpf::Error;

/// Quantum trajectories and projection filtering for a driven atom in a cavity.
#[derive(Debug, Parser)]
#[command(name = "qpf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunFlags {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range `N..M` (half-open) or comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunFlags {
    fn config(&self) -> qpf::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::moderate(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = harness::parse_seeds(s)?;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(dt) = self.dt {
            cfg.grid.dt = dt;
        }
        if let Some(n) = self.steps {
            cfg.grid.n_steps = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate measurement records, one per seed.
    Simulate(RunFlags),
    /// Run a filter over a record file.
    Filter {
        record: PathBuf,
        /// qpde, qpde-fd, density, projection or wonham-frozen.
        #[arg(long)]
        backend: String,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Compare two estimate files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Record whose side-channel jumps are used for the delay analysis.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the oracle and analytic-limit suites.
    Verify {
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Perturb the closed-form weight drift (tests the verifier).
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_weight_drift: f64,
        /// Steps per record in the Wonham reduction suite.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the full pipeline over the cartesian product of `sweep.KEY` values.
    Sweep(RunFlags),
}

fn run(cli: Cli) -> qpf::Result<()> {
    match cli.command {
        Command::Simulate(flags) => {
            let cfg = flags.config()?;
            for p in harness::cmd_simulate(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Filter { record, backend, flags } => {
            let backend = Backend::parse(&backend)?;
            let cfg = flags.config()?;
            for p in harness::cmd_filter(&record, backend, &cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Compare { a, b, record, out } => {
            let (metrics, path) = harness::cmd_compare(&a, &b, record.as_deref(), &out)?;
            print!("{}", qpf::io::render_key_values(&metrics.to_metadata()));
            println!("{}", path.display());
        }
        Command::Verify {
            out,
            perturb_weight_drift,
            steps,
        } => {
            let opts = VerifyOptions {
                perturb_weight_drift,
                reduction_steps: steps,
            };
            let report = harness::cmd_verify(&opts, Some(&out))?;
            print!("{}", report.render());
            if !report.passed() {
                let failed: Vec<_> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
                return Err(Error::Verification(failed.join(", ")));
            }
        }
        Command::Sweep(flags) => {
            let cfg = flags.config()?;
            println!("{}", harness::cmd_sweep(&cfg)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
