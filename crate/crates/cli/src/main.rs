//! Command-line front end: run, sweep, synth, flops.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use ttbsim_core::harness::{run_config, sweep, synth_workload, RunConfig};
use ttbsim_core::reference::flops_breakdown;
use ttbsim_core::{BundleShape, SimError};

#[derive(Parser)]
#[command(name = "ttbsim", version, about = "Token-time-bundle spiking transformer accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one configuration and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TTBS spike tensor used as the block-0 input.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run one configuration per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// theta_s, bundle_volume or theta_p
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Write a synthetic spike tensor.
    Synth {
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0.0)]
        cluster: f64,
        /// TxNxD
        #[arg(long)]
        shape: String,
        /// BTxBN, the bundle shape spikes cluster into.
        #[arg(long, default_value = "2x4")]
        bundle: BundleShape,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the operation count breakdown of a model.
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
}

/// A failure with its machine-readable class.
struct Failure {
    kind: String,
    message: String,
    code: u8,
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Self {
            kind: e.kind().into(),
            message: e.to_string(),
            code: 1,
        }
    }
}

impl Failure {
    fn at(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::from(SimError::Io(e)).at(path))
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(|e| Failure::from(e).at(path))
}

fn parse_tnd(s: &str) -> Result<(usize, usize, usize), Failure> {
    let dims: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| SimError::Config(format!("shape {s:?}: {e}")))?;
    match dims[..] {
        [t, n, d] if t > 0 && n > 0 && d > 0 => Ok((t, n, d)),
        _ => Err(SimError::Config(format!("shape {s:?} is not TxNxD with positive sizes")).into()),
    }
}

fn execute(cmd: Cmd) -> Result<serde_json::Value, Failure> {
    match cmd {
        Cmd::Run { config, out, input } => {
            let cfg = load(&config)?;
            let report = run_config(&cfg, input.as_deref())?;
            write(&out, &report.to_json())?;
            Ok(json!({
                "out": out,
                "config_hash": report.config_hash,
                "latency_cycles": report.totals.latency_cycles,
                "energy_pj": report.totals.energy_pj,
                "edp": report.totals.edp,
            }))
        }
        Cmd::Sweep {
            config,
            param,
            values,
            out,
            input,
        } => {
            let cfg = load(&config)?;
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            let result = sweep(&cfg, param.parse()?, &values, input.as_deref())?;
            write(&out, &result.to_json())?;
            let failed = result.failures();
            if failed > 0 {
                return Err(Failure {
                    kind: "sweep_failures".into(),
                    message: format!("{failed} of {} points failed, see {}", values.len(), out.display()),
                    code: 3,
                });
            }
            Ok(json!({ "out": out, "points": values.len() }))
        }
        Cmd::Synth {
            rate,
            cluster,
            shape,
            bundle,
            seed,
            out,
        } => {
            let (t, n, d) = parse_tnd(&shape)?;
            let x = synth_workload(t, n, d, rate, cluster, bundle, seed)?;
            x.save(&out).map_err(|e| Failure::from(e).at(&out))?;
            Ok(json!({ "out": out, "spikes": x.popcount(), "density": x.density() }))
        }
        Cmd::Flops { config } => {
            let cfg = load(&config)?;
            cfg.model.validate()?;
            Ok(serde_json::to_value(flops_breakdown(&cfg.model)).expect("breakdown serializes"))
        }
    }
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": f.kind, "message": f.message } }));
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(&Failure {
                kind: "usage".into(),
                message: e.to_string().trim().to_string(),
                code: 2,
            })
        }
    };
    match execute(cli.cmd) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => fail(&f),
    }
}
