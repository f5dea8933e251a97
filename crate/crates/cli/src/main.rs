use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use roughflow_cli::config::{ExperimentConfig, Preset};
use roughflow_cli::verify::{self, JacobianFault, Suite};
use roughflow_cli::{experiment, plot, CliError};
use roughflow_core::rough_driver::sample_fbm_with;
use roughflow_core::{FbmMethod, Grid};

#[derive(Parser)]
#[command(
    name = "roughflow",
    version,
    about = "Gradient flows of RDE endpoint losses under fractional Brownian drivers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an H-sweep from a config file or a preset.
    Run {
        /// TOML experiment config.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Output directory (default: `out_dir` from the config, else `runs/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Render `figure_<label>.svg` from the aggregate of a run directory.
    Plot {
        #[arg(required_unless_present = "out")]
        dir: Option<PathBuf>,
        #[arg(long, conflicts_with = "dir")]
        out: Option<PathBuf>,
    },
    /// Run numerical checks; exits 1 if any fails.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        /// Corrupt one Jacobian entry to exercise the gradient check.
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
        /// Write the JSON report here as well as printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write sampled fBm paths as CSV (`t,w0,w1,...`).
    FbmDump {
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        hurst: f64,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "auto")]
        method: Method,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    Jacobian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Auto,
    Circulant,
    Cholesky,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            config,
            preset,
            out,
            workers,
        } => {
            let configs = match (config, preset) {
                (Some(path), _) => vec![ExperimentConfig::load(&path)?],
                (None, Some(p)) => ExperimentConfig::preset(p),
                (None, None) => return Err(CliError::Config("need --config or --preset".into())),
            };
            let several = configs.len() > 1;
            for cfg in &configs {
                for w in cfg.hurst_warnings() {
                    eprintln!("{w}");
                }
                let dir = match (&out, &cfg.out_dir) {
                    (Some(o), _) if several => o.join(&cfg.name),
                    (Some(o), _) => o.clone(),
                    (None, Some(d)) => d.clone(),
                    (None, None) => Path::new("runs").join(&cfg.name),
                };
                let summary = experiment::cmd_run(cfg, &dir, workers)?;
                for line in experiment::summary_lines(&summary) {
                    println!("{line}");
                }
            }
            Ok(())
        }
        Command::Plot { dir, out } => {
            let dir = dir.or(out).expect("clap requires one");
            for p in plot::cmd_plot(&dir)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Verify {
            suite,
            inject_fault,
            out,
        } => {
            // the gradient instances alternate step2(2) (n = 3) and step3 (n = 5);
            // row 2 exists in both
            let fault = inject_fault.map(|Fault::Jacobian| JacobianFault::default_for(3));
            let rep = verify::report(suite, fault);
            for c in &rep.checks {
                println!(
                    "{} {}/{}: measured {:.3e}, tolerance {:.3e}; {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.suite,
                    c.name,
                    c.measured,
                    c.tolerance,
                    c.detail
                );
            }
            let json = serde_json::to_string_pretty(&rep).expect("report is serializable");
            match out {
                Some(p) => std::fs::write(&p, json)?,
                None => println!("{json}"),
            }
            if rep.passed {
                Ok(())
            } else {
                let failed: Vec<String> = rep
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.clone())
                    .collect();
                Err(CliError::Check(failed.join(", ")))
            }
        }
        Command::FbmDump {
            steps,
            hurst,
            channels,
            seed,
            out,
            method,
        } => {
            let method = match method {
                Method::Auto => FbmMethod::Auto,
                Method::Circulant => FbmMethod::CirculantEmbedding,
                Method::Cholesky => FbmMethod::Cholesky,
            };
            let input = |e: roughflow_core::Error| CliError::Input(e.to_string());
            if channels == 0 {
                return Err(CliError::Input("channels must be positive".into()));
            }
            let drv =
                sample_fbm_with(Grid::new(steps).map_err(input)?, channels, hurst, seed, method).map_err(input)?;
            match out {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(&p)?);
                    drv.write_csv(&mut w)?;
                    w.flush()?;
                }
                None => drv.write_csv(std::io::stdout().lock())?,
            }
            Ok(())
        }
    }
}
