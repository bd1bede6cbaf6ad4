//! Experiment driver: offline phase, test-set sweep, averaged errors and speedups.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{DeltaRule, ProblemDef, ProblemId, Stabilization, TimeGrid};
use crate::mesh::{Mesh, MeshError};
use crate::ocp_steady::OcpError;
use crate::pod_rom::{build_offline, draw_training_set, Gram, HighFidelity, RomError, RomMode, TruncationReport};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Rom(#[from] RomError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// Configuration problems versus failures while solving.
    pub fn is_config(&self) -> bool {
        matches!(self, BenchError::Config(_) | BenchError::Mesh(_) | BenchError::Json(_))
            || matches!(self, BenchError::Ocp(OcpError::Assembly(_)))
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// How space-time errors are aggregated for parabolic problems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParabolicError {
    /// Ratio of Δt-weighted space-time norms.
    #[default]
    SpaceTimeNorm,
    /// Sum over time steps of per-step relative errors.
    SumOfSteps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemId,
    pub mesh_nx: usize,
    pub mesh_ny: usize,
    pub parameter_box: Vec<(f64, f64)>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_max: usize,
    pub delta_rule: DeltaRule,
    pub alpha: f64,
    #[serde(default)]
    pub time: Option<TimeGrid>,
    pub seed_train: u64,
    pub seed_test: u64,
    pub modes: Vec<RomMode>,
    #[serde(default)]
    pub parabolic_error: ParabolicError,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub const PRESETS: [&'static str; 4] = ["graetz-steady", "graetz-parabolic", "square-steady", "square-parabolic"];

    pub fn preset(name: &str) -> Result<Self> {
        let id = ProblemId::from_name(name).ok_or_else(|| {
            BenchError::Config(format!(
                "unknown preset {name:?}; expected one of {}",
                Self::PRESETS.join(", ")
            ))
        })?;
        let defaults = ProblemDef::preset(id);
        let (h, n_max) = match id {
            ProblemId::GraetzSteady => (0.029, 20),
            ProblemId::GraetzParabolic => (0.038, 20),
            ProblemId::SquareSteady => (0.025, 50),
            ProblemId::SquareParabolic => (0.036, 30),
        };
        let (nx, ny) = Mesh::with_target_h(id.domain(), h)?.grid();
        Ok(Self {
            problem: id,
            mesh_nx: nx,
            mesh_ny: ny,
            parameter_box: defaults.parameter_box,
            n_train: 100,
            n_test: 100,
            n_max,
            delta_rule: defaults.delta_rule,
            alpha: defaults.alpha,
            time: defaults.time,
            seed_train: 7,
            seed_test: 1007,
            modes: RomMode::ALL.to_vec(),
            parabolic_error: ParabolicError::default(),
            out_dir: None,
        })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
    }

    pub fn problem_def(&self) -> ProblemDef {
        ProblemDef {
            alpha: self.alpha,
            delta_rule: self.delta_rule,
            time: self.time,
            parameter_box: self.parameter_box.clone(),
            ..ProblemDef::preset(self.problem)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.n_test < 1 {
            return bad("n_test must be at least 1".into());
        }
        if self.n_max < 1 || self.n_max > self.n_train {
            return bad(format!("need 1 <= n_max <= n_train, got n_max = {}, n_train = {}", self.n_max, self.n_train));
        }
        if self.seed_train == self.seed_test {
            return bad("training and test seeds must differ".into());
        }
        if self.modes.is_empty() {
            return bad("no reduction mode selected".into());
        }
        self.problem_def()
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        Mesh::structured(self.problem.domain(), self.mesh_nx, self.mesh_ny)?.observation_mask()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub n: usize,
    pub e_y: f64,
    pub e_u: f64,
    pub e_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub n: usize,
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: RomMode,
    /// Test-set averaged relative errors, one row per truncation `N = 1..=N_max`.
    pub errors: Vec<ErrorRow>,
    pub speedup: Vec<SpeedupRow>,
    /// Largest reduced gradient-equation residual over all solves.
    pub max_gradient_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub valid: bool,
    pub failure: Option<String>,
    pub modes: Vec<ModeReport>,
    pub eigenvalues: TruncationReport,
    pub n_free_state: usize,
    pub kkt_dim: usize,
    pub offline_seconds: f64,
    /// High-fidelity wall time per test parameter.
    pub hf_seconds: Vec<f64>,
    pub max_hf_gradient_deviation: f64,
    pub environment: String,
}

impl ExperimentReport {
    pub fn mode(&self, mode: RomMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

fn environment_note() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}, {threads} hardware thread(s), {} build",
        std::env::consts::OS,
        std::env::consts::ARCH,
        if cfg!(debug_assertions) { "debug" } else { "optimized" }
    )
}

fn relative(reference: &[f64], approx: &[f64], gram: &Gram) -> f64 {
    let diff: Vec<f64> = reference.iter().zip(approx).map(|(a, b)| a - b).collect();
    let denom = gram.norm(reference);
    if denom == 0.0 {
        gram.norm(&diff)
    } else {
        gram.norm(&diff) / denom
    }
}

fn sum_of_steps(reference: &[f64], approx: &[f64], spatial: &Gram, steps: usize) -> f64 {
    let len = reference.len() / steps;
    (0..steps)
        .map(|i| relative(&reference[i * len..(i + 1) * len], &approx[i * len..(i + 1) * len], spatial))
        .sum()
}

/// Relative errors of one reduced solution against its high-fidelity reference.
struct ErrorMeasure {
    state: Gram,
    control: Gram,
    steps: Option<(usize, Gram, Gram)>,
}

impl ErrorMeasure {
    fn new(hf: &HighFidelity, rule: ParabolicError) -> Self {
        let grams = hf.grams();
        let steps = match (hf, rule) {
            (HighFidelity::SpaceTime(s), ParabolicError::SumOfSteps) => Some((
                s.time().n_steps,
                Gram::spatial(hf.catalog().state_gram()),
                Gram::spatial(hf.catalog().control_gram()),
            )),
            _ => None,
        };
        Self {
            state: grams.state,
            control: grams.control,
            steps,
        }
    }

    fn errors(&self, hf: [&[f64]; 3], rom: [&[f64]; 3]) -> [f64; 3] {
        match &self.steps {
            None => [
                relative(hf[0], rom[0], &self.state),
                relative(hf[1], rom[1], &self.control),
                relative(hf[2], rom[2], &self.state),
            ],
            Some((n, gy, gu)) => [
                sum_of_steps(hf[0], rom[0], gy, *n),
                sum_of_steps(hf[1], rom[1], gu, *n),
                sum_of_steps(hf[2], rom[2], gy, *n),
            ],
        }
    }
}

struct Accumulator {
    errors: Vec<[f64; 3]>,
    speedups: Vec<Vec<f64>>,
    max_gradient_residual: f64,
}

/// Runs the offline phase and the test-set sweep for every configured mode.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(config, None, |_| {})
}

/// As [`run_experiment`], optionally saving the offline data and reporting progress through `log`.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    offline_dir: Option<&Path>,
    mut log: impl FnMut(&str),
) -> Result<ExperimentReport> {
    config.validate()?;
    let problem = config.problem_def();
    let mesh = Mesh::structured(config.problem.domain(), config.mesh_nx, config.mesh_ny)?;
    let hf = HighFidelity::new(&problem, &mesh)?;
    let kkt_dim = hf.kkt(Stabilization::Supg).dim();
    log(&format!(
        "{}: mesh {}x{}, KKT dimension {kkt_dim}",
        config.problem.name(),
        config.mesh_nx,
        config.mesh_ny
    ));

    let training = draw_training_set(&config.parameter_box, config.n_train, config.seed_train)?;
    let test = draw_training_set(&config.parameter_box, config.n_test, config.seed_test)?;
    let start = Instant::now();
    let (model, _) = build_offline(&hf, &training, config.n_max)?;
    let offline_seconds = start.elapsed().as_secs_f64();
    log(&format!("offline phase: {offline_seconds:.1} s"));
    if let Some(dir) = offline_dir {
        model.save(dir)?;
    }

    let measure = ErrorMeasure::new(&hf, config.parabolic_error);
    let mut acc: Vec<Accumulator> = config
        .modes
        .iter()
        .map(|_| Accumulator {
            errors: vec![[0.0; 3]; config.n_max],
            speedups: vec![Vec::with_capacity(config.n_test); config.n_max],
            max_gradient_residual: 0.0,
        })
        .collect();
    let mut hf_seconds = Vec::with_capacity(config.n_test);
    let mut max_dev = 0.0f64;
    let mut failure = None;

    'outer: for (k, mu) in test.samples.iter().enumerate() {
        let reference = match hf.solve(mu, Stabilization::Supg) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(format!("high-fidelity solve {k} failed: {e}"));
                break;
            }
        };
        max_dev = max_dev.max(hf.gradient_deviation(&reference));
        hf_seconds.push(reference.wall_time);
        for (mode, a) in config.modes.iter().zip(acc.iter_mut()) {
            for n in 1..=config.n_max {
                let sol = match model.solve(mu, n, *mode) {
                    Ok(s) => s,
                    Err(e) => {
                        failure = Some(e.to_string());
                        break 'outer;
                    }
                };
                a.max_gradient_residual = a.max_gradient_residual.max(sol.gradient_residual);
                let (y, u, p) = model.expand(&sol);
                let e = measure.errors([&reference.y, &reference.u, &reference.p], [&y, &u, &p]);
                for (t, v) in a.errors[n - 1].iter_mut().zip(e) {
                    *t += v;
                }
                a.speedups[n - 1].push(reference.wall_time / sol.wall_time.max(1e-9));
            }
        }
        if (k + 1) % 10 == 0 || k + 1 == config.n_test {
            log(&format!("test parameters: {}/{}", k + 1, config.n_test));
        }
    }

    let done = hf_seconds.len().max(1) as f64;
    let modes = config
        .modes
        .iter()
        .zip(acc)
        .map(|(&mode, a)| ModeReport {
            mode,
            errors: a
                .errors
                .iter()
                .enumerate()
                .map(|(i, e)| ErrorRow {
                    n: i + 1,
                    e_y: e[0] / done,
                    e_u: e[1] / done,
                    e_p: e[2] / done,
                })
                .collect(),
            speedup: a
                .speedups
                .iter()
                .enumerate()
                .map(|(i, s)| SpeedupRow {
                    n: i + 1,
                    min: s.iter().copied().fold(f64::INFINITY, f64::min),
                    avg: s.iter().sum::<f64>() / s.len().max(1) as f64,
                    max: s.iter().copied().fold(0.0, f64::max),
                })
                .collect(),
            max_gradient_residual: a.max_gradient_residual,
        })
        .collect();

    Ok(ExperimentReport {
        config: config.clone(),
        valid: failure.is_none(),
        failure,
        modes,
        eigenvalues: model.truncation_report(),
        n_free_state: hf.catalog().spaces().n_free(),
        kkt_dim,
        offline_seconds,
        hf_seconds,
        max_hf_gradient_deviation: max_dev,
        environment: environment_note(),
    })
}

fn log10(v: f64) -> f64 {
    if v > 0.0 {
        v.log10()
    } else {
        f64::NEG_INFINITY
    }
}

/// Writes `report.json`, `errors_<mode>.csv`, `speedup_<mode>.csv` and `eigenvalues.csv`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    for m in &report.modes {
        let mut w = csv::Writer::from_path(dir.join(format!("errors_{}.csv", m.mode.name())))?;
        w.write_record(["N", "e_y", "e_u", "e_p", "log10_e_y", "log10_e_u", "log10_e_p"])?;
        for r in &m.errors {
            w.serialize((r.n, r.e_y, r.e_u, r.e_p, log10(r.e_y), log10(r.e_u), log10(r.e_p)))?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(format!("speedup_{}.csv", m.mode.name())))?;
        w.write_record(["N", "min", "avg", "max"])?;
        for r in &m.speedup {
            w.serialize((r.n, r.min, r.avg, r.max))?;
        }
        w.flush()?;
    }
    let e = &report.eigenvalues;
    let mut w = csv::Writer::from_path(dir.join("eigenvalues.csv"))?;
    w.write_record(["n", "state", "control", "adjoint"])?;
    let rows = e.state.eigenvalues.len().max(e.control.eigenvalues.len()).max(e.adjoint.eigenvalues.len());
    let cell = |v: &[f64], i: usize| v.get(i).map_or(String::new(), |x| x.to_string());
    for i in 0..rows {
        w.write_record([
            (i + 1).to_string(),
            cell(&e.state.eigenvalues, i),
            cell(&e.control.eigenvalues, i),
            cell(&e.adjoint.eigenvalues, i),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("report.json"))?)?)
}
