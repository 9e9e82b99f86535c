use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfg_select::harness::{self, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "mfg-select", version, about = "Equilibrium selection experiments for a linear-quadratic mean-field game")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or a .csv path for single-table runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to MFG_SELECT_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Time step of the shared grid.
    #[arg(long, global = true)]
    dt: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate eta, w, r, k.
    Coeffs,
    /// Tabulate the viscous field, the entropy field, their gap and its bound.
    Field {
        #[arg(long, value_delimiter = ',')]
        sigma0: Vec<f64>,
        #[arg(long)]
        lattice: Option<usize>,
    },
    /// Simulate the common-noise mean process.
    SimulateMfg {
        #[arg(long, value_delimiter = ',')]
        sigma0: Vec<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Simulate the N-player mean, aggregate or exact.
    SimulateNplayer {
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        picard_iters: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Closed-form and Monte Carlo equilibrium costs.
    Cost {
        /// Monte Carlo paths per equilibrium; 0 skips the simulation.
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Run a verification suite.
    Verify {
        #[arg(long, default_value = "acceptance")]
        suite: String,
    },
}

fn build_config(cli: &Cli) -> mfg_select::Result<ExperimentConfig> {
    let common = &cli.common;
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    if let Some(dt) = common.dt {
        cfg.dt = dt;
    }
    match &cli.command {
        Command::Coeffs => cfg.kind = ExperimentKind::Coeffs,
        Command::Field { sigma0, lattice } => {
            cfg.kind = ExperimentKind::Field;
            if !sigma0.is_empty() {
                cfg.sigma0_list = sigma0.clone();
            }
            if let Some(l) = lattice {
                cfg.lattice = *l;
            }
        }
        Command::SimulateMfg { sigma0, paths, tolerance } => {
            cfg.kind = ExperimentKind::Mfg;
            if !sigma0.is_empty() {
                cfg.sigma0_list = sigma0.clone();
            }
            if let Some(p) = paths {
                cfg.paths = *p;
            }
            if let Some(t) = tolerance {
                cfg.tolerance = *t;
            }
        }
        Command::SimulateNplayer { n, runs, exact, picard_iters, tolerance } => {
            cfg.kind = ExperimentKind::Nplayer;
            if !n.is_empty() {
                cfg.n_list = n.clone();
            }
            if let Some(r) = runs {
                cfg.runs = *r;
            }
            cfg.exact |= *exact;
            if let Some(k) = picard_iters {
                cfg.picard.max_iterations = *k;
            }
            if let Some(t) = tolerance {
                cfg.tolerance = *t;
            }
        }
        Command::Cost { paths } => {
            cfg.kind = ExperimentKind::Cost;
            if let Some(p) = paths {
                cfg.mc_paths = *p;
            }
        }
        Command::Verify { suite } => {
            cfg.kind = ExperimentKind::Verify;
            cfg.suite = suite.clone();
        }
    }
    cfg.threads = harness::resolve_threads(cfg.threads)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(harness::error_exit_code(&e) as u8);
        }
    };
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match harness::run(&cfg) {
        Ok(summary) => {
            for c in &summary.checks {
                eprintln!("{}", c.line());
            }
            for a in &summary.artifacts {
                println!("{}", a.display());
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::error_exit_code(&e) as u8)
        }
    }
}
