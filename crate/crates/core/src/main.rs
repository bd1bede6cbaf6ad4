use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use supg_rom::assembly::DeltaRule;
use supg_rom::bench::{emit_report, run_experiment_with, BenchError, ExperimentConfig, ExperimentReport};
use supg_rom::pod_rom::{ReducedModel, RomMode};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "supg-rom", version, about = "SUPG optimal control with POD-Galerkin reduced models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the offline phase and the test-set sweep, then write the report.
    Run(RunArgs),
    /// Print the eigenvalue decay stored in an offline directory.
    Inspect {
        #[arg(long, value_name = "DIR")]
        offline: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    OnlineOffline,
    OnlyOffline,
    Both,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["preset", "config"])))]
struct RunArgs {
    /// graetz-steady, graetz-parabolic, square-steady or square-parabolic
    #[arg(long)]
    preset: Option<String>,
    /// JSON experiment configuration
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    ntrain: Option<usize>,
    #[arg(long)]
    ntest: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Constant SUPG parameter
    #[arg(long)]
    stab_delta: Option<f64>,
    #[arg(long)]
    seed_train: Option<u64>,
    #[arg(long)]
    seed_test: Option<u64>,
    #[arg(long)]
    mesh_nx: Option<usize>,
    #[arg(long)]
    mesh_ny: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, BenchError> {
        let mut c = match (&self.preset, &self.config) {
            (Some(name), _) => ExperimentConfig::preset(name)?,
            (None, Some(path)) => ExperimentConfig::from_json_file(path)?,
            (None, None) => unreachable!("clap requires one source"),
        };
        if let Some(v) = self.nmax {
            c.n_max = v;
        }
        if let Some(v) = self.ntrain {
            c.n_train = v;
        }
        if let Some(v) = self.ntest {
            c.n_test = v;
        }
        if let Some(m) = self.mode {
            c.modes = match m {
                ModeArg::OnlineOffline => vec![RomMode::OnlineOffline],
                ModeArg::OnlyOffline => vec![RomMode::OnlyOffline],
                ModeArg::Both => RomMode::ALL.to_vec(),
            };
        }
        if let Some(d) = self.stab_delta {
            c.delta_rule = DeltaRule::Constant(d);
        }
        if let Some(v) = self.seed_train {
            c.seed_train = v;
        }
        if let Some(v) = self.seed_test {
            c.seed_test = v;
        }
        if let Some(v) = self.mesh_nx {
            c.mesh_nx = v;
        }
        if let Some(v) = self.mesh_ny {
            c.mesh_ny = v;
        }
        if self.out.is_some() {
            c.out_dir = self.out.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_summary(report: &ExperimentReport) {
    println!(
        "{}: KKT dimension {}, offline {:.1} s, mean high-fidelity solve {:.3} s",
        report.config.problem.name(),
        report.kkt_dim,
        report.offline_seconds,
        report.hf_seconds.iter().sum::<f64>() / report.hf_seconds.len().max(1) as f64
    );
    for m in &report.modes {
        println!("{}", m.mode.name());
        println!("{:>4} {:>11} {:>11} {:>11} {:>10}", "N", "e_y", "e_u", "e_p", "speedup");
        for (e, s) in m.errors.iter().zip(&m.speedup) {
            println!(
                "{:>4} {:>11.3e} {:>11.3e} {:>11.3e} {:>10.1}",
                e.n, e.e_y, e.e_u, e.e_p, s.avg
            );
        }
    }
}

fn run(args: &RunArgs) -> ExitCode {
    let config = match args.config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let offline = config.out_dir.as_ref().map(|d| d.join("offline"));
    let result = run_experiment_with(&config, offline.as_deref(), |line| eprintln!("{line}"));
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_SOLVER });
        }
    };
    print_summary(&report);
    if let Some(dir) = &config.out_dir {
        if let Err(e) = emit_report(&report, dir) {
            eprintln!("error: cannot write report to {}: {e}", dir.display());
            return ExitCode::from(EXIT_SOLVER);
        }
        eprintln!("report written to {}", dir.display());
    }
    match &report.failure {
        Some(f) => {
            eprintln!("error: run aborted, report is partial: {f}");
            ExitCode::from(EXIT_SOLVER)
        }
        None => ExitCode::SUCCESS,
    }
}

fn inspect(dir: &Path) -> ExitCode {
    let dir = if dir.join("manifest.json").exists() {
        dir.to_path_buf()
    } else {
        dir.join("offline")
    };
    let model = match ReducedModel::load(&dir) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {}: {e}", dir.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let info = model.info();
    println!(
        "{}: N_train = {}, N_max = {}, seed = {}",
        info.problem.name(),
        info.n_train,
        info.n_max,
        info.seed
    );
    let r = model.truncation_report();
    println!(
        "{:>4} {:>12} {:>12} {:>12} {:>12}",
        "n", "state", "control", "adjoint", "state/lead"
    );
    let lead = r.state.eigenvalues.first().copied().unwrap_or(0.0);
    for i in 0..r.state.eigenvalues.len() {
        let s = r.state.eigenvalues[i];
        println!(
            "{:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            i + 1,
            s,
            r.control.eigenvalues.get(i).copied().unwrap_or(f64::NAN),
            r.adjoint.eigenvalues.get(i).copied().unwrap_or(f64::NAN),
            if lead > 0.0 { s / lead } else { 0.0 }
        );
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => run(args),
        Command::Inspect { offline } => inspect(offline),
    }
}
