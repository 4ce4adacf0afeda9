use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ftsim_cli::config::{ModelSource, RunConfig};
use ftsim_cli::{cmd_cct, cmd_compare, cmd_equilibrium, cmd_simulate, CliError};
use ftsim_core::integrators::Method;

#[derive(Parser)]
#[command(name = "ftsim", version, about = "Fault-transient simulation of a multi-mass synchronous generator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model preset name (overrides the config's model)
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Step size in seconds
    #[arg(long)]
    h: Option<f64>,
    /// Fault duration in seconds
    #[arg(long = "t-break")]
    t_break: Option<f64>,
    /// Absolute end time in seconds
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Emit one row every N steps
    #[arg(long)]
    decimation: Option<usize>,
    /// Parallel probes for `cct`
    #[arg(long)]
    jobs: Option<usize>,
    /// Write the fitted reduction matrices as CSV
    #[arg(long = "dump-reduction")]
    dump_reduction: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a stage equilibrium and print it in both frames
    Equilibrium {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        stage: usize,
    },
    /// Run the three-stage fault transient
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Keep integrating after a pole slip is detected
        #[arg(long)]
        no_early_stop: bool,
    },
    /// Bisect the break time for the critical clearing time
    Cct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run two methods on the same scenario and compare them
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method, default_value = "pc-beta0.5")]
        against: Method,
        #[arg(long)]
        no_early_stop: bool,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn build_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &c.preset {
        cfg.model = ModelSource::Preset(p.clone());
    }
    if let Some(m) = c.method {
        cfg.scenario.method = m;
    }
    if let Some(h) = c.h {
        cfg.scenario.h = h;
    }
    if let Some(t) = c.t_break {
        cfg.scenario.t_break = t;
    }
    if let Some(t) = c.horizon {
        cfg.scenario.t_horizon = Some(t);
    }
    if let Some(d) = &c.out_dir {
        cfg.output.dir = d.clone();
    }
    if let Some(d) = c.decimation {
        cfg.output.decimation = d;
    }
    if let Some(j) = c.jobs {
        cfg.cct.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match cli.cmd {
        Cmd::Equilibrium { common, stage } => {
            let cfg = build_config(&common)?;
            cmd_equilibrium(&cfg, stage, common.out_dir.as_deref(), common.dump_reduction, &mut stdout)
        }
        Cmd::Simulate { common, no_early_stop } => {
            let mut cfg = build_config(&common)?;
            cfg.scenario.stop_when_unstable &= !no_early_stop;
            cmd_simulate(&cfg, common.dump_reduction, &mut stdout).map(|_| ())
        }
        Cmd::Cct { common, lo, hi, tol } => {
            let mut cfg = build_config(&common)?;
            cfg.cct.lo = lo.unwrap_or(cfg.cct.lo);
            cfg.cct.hi = hi.unwrap_or(cfg.cct.hi);
            cfg.cct.tol = tol.unwrap_or(cfg.cct.tol);
            cfg.validate()?;
            cmd_cct(&cfg, &mut stdout).map(|_| ())
        }
        Cmd::Compare { common, against, no_early_stop } => {
            let mut cfg = build_config(&common)?;
            cfg.scenario.stop_when_unstable &= !no_early_stop;
            cmd_compare(&cfg, against, &mut stdout)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FTSIM_LOG", "warn")).init();
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
            eprintln!("ftsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
