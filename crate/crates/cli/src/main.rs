use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qcsam::experiment::{self, ExperimentConfig};
use qcsam::{verify, Error};

#[derive(Parser)]
#[command(name = "qcsam", version, about = "Quantum complex-valued self-attention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration over its seeds.
    Run(Overrides),
    /// Run the qubits x classes x heads grid.
    Sweep(Overrides),
    /// Run the built-in oracle checks (and circuit-path checks on data with --config).
    Verify(Overrides),
}

#[derive(Args, Default)]
struct Overrides {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    qubits: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Comma-separated labels, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u8>>,
    #[arg(long)]
    attention_mode: Option<String>,
    #[arg(long)]
    qfm_layers: Option<usize>,
    #[arg(long)]
    qffn_layers: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    per_class_train: Option<usize>,
    #[arg(long)]
    per_class_test: Option<usize>,
    #[arg(long)]
    verify_circuit_path: bool,
}

impl Overrides {
    fn config(&self) -> qcsam::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            c.output = o.clone();
        }
        if let Some(d) = &self.data_dir {
            c.data_dir = Some(d.clone());
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.qubits {
            c.n_qubits = v;
        }
        if let Some(v) = self.heads {
            c.heads = v;
        }
        if let Some(v) = &self.classes {
            c.classes = v.clone();
        }
        if let Some(v) = &self.attention_mode {
            c.attention_mode = v.clone();
        }
        if let Some(v) = self.qfm_layers {
            c.qfm_layers = v;
        }
        if let Some(v) = self.qffn_layers {
            c.qffn_layers = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.per_class_train {
            c.per_class_train = v;
        }
        if let Some(v) = self.per_class_test {
            c.per_class_test = v;
        }
        if self.verify_circuit_path {
            c.verify_circuit_path = true;
        }
        c.validate()?;
        Ok(c)
    }
}

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Json(_) => EXIT_CONFIG,
        Error::Inconsistent(_) => EXIT_VERIFY,
        _ => EXIT_DATA,
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let fail = |e: Error| (exit_code(&e), e.to_string());
    match cli.command {
        Command::Run(o) => {
            let c = o.config().map_err(fail)?;
            let s = experiment::run(&c, |r| {
                eprintln!(
                    "seed {} epoch {:>3}  loss {:.4}  train {:.4}  test {:.4}  {:.1}s",
                    r.seed, r.epoch, r.train_loss, r.train_acc, r.test_acc, r.wall_time_seconds
                );
            })
            .map_err(fail)?;
            println!("test accuracy {} % over {} seeds", s.test_acc, s.seeds.len());
            println!("results in {}", c.output.display());
        }
        Command::Sweep(o) => {
            let c = o.config().map_err(fail)?;
            let cells = experiment::sweep(&c, |cell| {
                eprintln!(
                    "{} qubits, {} classes, {}H: {}",
                    cell.n_qubits, cell.n_classes, cell.heads, cell.result
                );
                if let Some(e) = &cell.error {
                    eprintln!("  {e}");
                }
            })
            .map_err(fail)?;
            let failed = cells.iter().filter(|c| c.error.is_some()).count();
            println!("{} cells, {failed} failed; table in {}", cells.len(), c.output.join("sweep.csv").display());
        }
        Command::Verify(o) => {
            let seed = o.seed.unwrap_or(0);
            let checks = verify::run_checks(seed).map_err(fail)?;
            let mut ok = true;
            for r in &checks {
                println!(
                    "{} {:<30} max error {:.3e} (tolerance {:.0e})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_error,
                    r.tolerance
                );
                ok &= r.passed;
            }
            if o.config.is_some() {
                let mut c = o.config().map_err(fail)?;
                if c.grids().iter().all(|g| g.0 * g.1 <= 8) {
                    c.epochs = 0;
                    c.verify_circuit_path = true;
                    c.verify_samples = c.verify_samples.max(1);
                    match experiment::run_experiment(&c, |_| {}) {
                        Ok((_, s)) => {
                            let d = s.seeds.iter().filter_map(|r| r.circuit_path_max_deviation).fold(0.0, f64::max);
                            println!("PASS {:<30} max error {d:.3e} (tolerance 1e-6)", "circuit_path_on_data");
                        }
                        Err(Error::Inconsistent(d)) => {
                            println!("FAIL {:<30} max error {d:.3e} (tolerance 1e-6)", "circuit_path_on_data");
                            ok = false;
                        }
                        Err(e) => return Err(fail(e)),
                    }
                } else {
                    println!("SKIP circuit_path_on_data (more than 8 patches per head)");
                }
            }
            if !ok {
                return Err((EXIT_VERIFY, "verification failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
