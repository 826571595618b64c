use clap::{Args, Parser, Subcommand};
use phi4lab::runner::{self, Command, RunConfig};
use phi4lab::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Reproducible experiments for the renormalized φ⁴ measure on the 2-torus
/// and its Bose-gas approximation.
#[derive(Parser)]
#[command(name = "phi4lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Green function table against the line-sum oracle
    Green,
    /// Field covariance diagnostics
    Sample,
    /// τ^ε, E^ε, ϱ_ν and their log slopes
    Counterterms,
    /// L² distance scans in ε and N
    L2Scan,
    /// Tail curve of V^ε_N
    Nelson,
    /// Gaussian integration by parts checks
    Ibp,
    /// Finite-mode Bose gas against the classical field theory
    Bosegas,
    /// Bridge path moment estimates
    Bridges,
}

#[derive(Args)]
struct Flags {
    /// TOML config file; flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    nu: Option<f64>,
    /// ultraviolet cutoff N
    #[arg(long = "n", global = true)]
    n: Option<f64>,
    /// second cutoff M ≥ N
    #[arg(long = "m", global = true)]
    m: Option<f64>,
    /// moment orders, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    p: Option<Vec<u32>>,
    /// grid side L (rounded up to a power of two)
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Fourier modes as "a,b;c,d"
    #[arg(long, global = true)]
    modes: Option<String>,
    #[arg(long, global = true)]
    n_max: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    n_list: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    nu_list: Option<Vec<f64>>,
    /// default: $PHI4LAB_SEED, then a fixed constant
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<u64>,
    #[arg(long, global = true)]
    batches: Option<usize>,
    /// worker threads (default: available cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// output directory (default: phi4lab-out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Flags {
    fn into_config(self) -> phi4lab::Result<(Option<PathBuf>, RunConfig)> {
        let modes = self.modes.as_deref().map(runner::parse_modes).transpose().map_err(|e| Error::Config(e.to_string()))?;
        Ok((
            self.config,
            RunConfig {
                kappa: self.kappa,
                eps: self.eps,
                nu: self.nu,
                n: self.n,
                m: self.m,
                p: self.p,
                grid: self.grid,
                modes,
                n_max: self.n_max,
                eps_list: self.eps_list,
                n_list: self.n_list,
                nu_list: self.nu_list,
                seed: self.seed,
                samples: self.samples,
                batches: self.batches,
                workers: self.workers,
                out: self.out,
            },
        ))
    }
}

fn command(c: Cmd) -> Command {
    match c {
        Cmd::Green => Command::Green,
        Cmd::Sample => Command::Sample,
        Cmd::Counterterms => Command::Counterterms,
        Cmd::L2Scan => Command::L2Scan,
        Cmd::Nelson => Command::Nelson,
        Cmd::Ibp => Command::Ibp,
        Cmd::Bosegas => Command::Bosegas,
        Cmd::Bridges => Command::Bridges,
    }
}

fn resolve(flags: Flags) -> phi4lab::Result<RunConfig> {
    let (path, flags) = flags.into_config()?;
    let base = match path {
        Some(p) => RunConfig::from_file(&p).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
            e => Error::Config(format!("{}: {e}", p.display())),
        })?,
        None => RunConfig::default(),
    };
    Ok(base.merged(flags))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = command(cli.command);
    let cfg = match resolve(cli.flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("phi4lab: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(w) = cfg.workers {
        if w == 0 {
            eprintln!("phi4lab: config: workers must be at least 1");
            return ExitCode::from(2);
        }
        // rayon is only configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match runner::run(cmd, &cfg) {
        Ok(m) => {
            for a in &m.assertions {
                println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
            }
            println!("{} {:.1}s {}", m.command, m.wall_time_s, m.csv);
            if m.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ (Error::Config(_) | Error::InvalidParameter(_))) => {
            eprintln!("phi4lab: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("phi4lab: {e}");
            ExitCode::from(1)
        }
    }
}
