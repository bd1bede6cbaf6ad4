use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    aggregated_basis, collect_snapshots, correlation_matrix, pod_basis, truncation_report, AggregatedBasis, HighFidelity,
    PodBasis, Result, RomError, SnapshotSet, TrainingSet, TruncationReport,
};
use crate::assembly::{DeltaRule, ProblemId, Stabilization, Theta};
use crate::kkt::KktAffine;
use crate::linalg::{dense_solve, read_matrix, write_matrix};

/// Which operators the online system is projected from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RomMode {
    /// Stabilized operators online, as offline.
    OnlineOffline,
    /// Stabilized snapshots, plain Galerkin operators online.
    OnlyOffline,
}

impl RomMode {
    pub const ALL: [RomMode; 2] = [RomMode::OnlineOffline, RomMode::OnlyOffline];

    pub fn name(self) -> &'static str {
        match self {
            RomMode::OnlineOffline => "online-offline",
            RomMode::OnlyOffline => "only-offline",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn stabilization(self) -> Stabilization {
        match self {
            RomMode::OnlineOffline => Stabilization::Supg,
            RomMode::OnlyOffline => Stabilization::None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Projected terms in the layout `[Z | U | Z]` at the offline size.
#[derive(Clone, Debug)]
struct Family {
    terms: Vec<(Theta, DMatrix<f64>)>,
    rhs: Vec<(Theta, DVector<f64>)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OfflineInfo {
    pub problem: ProblemId,
    pub n_max: usize,
    pub n_train: usize,
    pub seed: u64,
    pub alpha: f64,
    pub delta_rule: DeltaRule,
    /// High-fidelity wall time per snapshot.
    pub snapshot_times: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReducedModel {
    info: OfflineInfo,
    state: PodBasis,
    control: PodBasis,
    adjoint: PodBasis,
    z: AggregatedBasis,
    families: Vec<Family>,
}

#[derive(Clone, Debug)]
pub struct ReducedSolution {
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    pub n: usize,
    pub mode: RomMode,
    /// Seconds for coefficient evaluation, reduced assembly and the dense solve.
    pub wall_time: f64,
    /// `‖r‖ / max(1, ‖b‖)` of the whole reduced system.
    pub residual: f64,
    /// Same measure restricted to the gradient-equation rows.
    pub gradient_residual: f64,
}

fn project(kkt: &KktAffine, bases: [&DMatrix<f64>; 3]) -> Family {
    let widths = bases.map(|b| b.ncols());
    let offsets = [0, widths[0], widths[0] + widths[1]];
    let dim = widths.iter().sum();
    let mut terms: BTreeMap<Theta, DMatrix<f64>> = BTreeMap::new();
    for b in kkt.blocks() {
        let av = b.matrix.mul_dense(bases[b.col]);
        let p = bases[b.row].transpose() * av;
        let target = terms
            .entry(b.theta.clone())
            .or_insert_with(|| DMatrix::zeros(dim, dim));
        let mut view = target.view_mut((offsets[b.row], offsets[b.col]), p.shape());
        view += p;
    }
    let mut rhs: BTreeMap<Theta, DVector<f64>> = BTreeMap::new();
    for t in kkt.rhs_terms() {
        let p = bases[t.row].transpose() * DVector::from_column_slice(&t.vector);
        let target = rhs.entry(t.theta.clone()).or_insert_with(|| DVector::zeros(dim));
        let mut view = target.rows_mut(offsets[t.row], p.len());
        view += p;
    }
    Family {
        terms: terms.into_iter().collect(),
        rhs: rhs.into_iter().collect(),
    }
}

impl ReducedModel {
    /// Projects both operator families of `hf` onto the given bases.
    pub fn build(
        hf: &HighFidelity,
        info: OfflineInfo,
        state: PodBasis,
        control: PodBasis,
        adjoint: PodBasis,
        z: AggregatedBasis,
    ) -> Result<Self> {
        let [ny, nu, np] = hf.kkt(Stabilization::Supg).sizes();
        if z.vectors.nrows() != ny || z.vectors.nrows() != np || control.vectors.nrows() != nu {
            return Err(RomError::Dimension(format!(
                "bases of lengths ({}, {}) for blocks ({ny}, {nu}, {np})",
                z.vectors.nrows(),
                control.vectors.nrows()
            )));
        }
        let families = RomMode::ALL
            .iter()
            .map(|m| project(hf.kkt(m.stabilization()), [&z.vectors, &control.vectors, &z.vectors]))
            .collect();
        Ok(Self {
            info,
            state,
            control,
            adjoint,
            z,
            families,
        })
    }

    pub fn info(&self) -> &OfflineInfo {
        &self.info
    }

    pub fn n_max(&self) -> usize {
        self.info.n_max
    }

    pub fn aggregated(&self) -> &AggregatedBasis {
        &self.z
    }

    pub fn state_basis(&self) -> &PodBasis {
        &self.state
    }

    pub fn control_basis(&self) -> &PodBasis {
        &self.control
    }

    pub fn adjoint_basis(&self) -> &PodBasis {
        &self.adjoint
    }

    pub fn truncation_report(&self) -> TruncationReport {
        truncation_report(&self.state, &self.control, &self.adjoint)
    }

    pub fn n_terms(&self, mode: RomMode) -> usize {
        self.families[mode.index()].terms.len()
    }

    /// Reduced block sizes `(state, control, adjoint)` at truncation `n`.
    pub fn block_sizes(&self, n: usize) -> [usize; 3] {
        let nz = self.z.columns_for(n);
        [nz, n.min(self.control.len()), nz]
    }

    fn indices(&self, n: usize) -> Vec<usize> {
        let [nz, nu, _] = self.block_sizes(n);
        let (zmax, umax) = (self.z.len(), self.control.len());
        (0..nz)
            .chain(zmax..zmax + nu)
            .chain(zmax + umax..zmax + umax + nz)
            .collect()
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(RomError::EmptyBasis);
        }
        if n > self.info.n_max {
            return Err(RomError::Truncation {
                requested: n,
                available: self.info.n_max,
            });
        }
        Ok(())
    }

    /// Reduced matrix and right-hand side at `mu`.
    pub fn system(&self, mu: &[f64], n: usize, mode: RomMode) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.check_n(n)?;
        Ok(self.assemble(mu, &self.indices(n), mode))
    }

    fn assemble(&self, mu: &[f64], idx: &[usize], mode: RomMode) -> (DMatrix<f64>, DVector<f64>) {
        let fam = &self.families[mode.index()];
        let d = idx.len();
        let mut a = DMatrix::zeros(d, d);
        for (theta, m) in &fam.terms {
            let c = theta.eval(mu);
            for (bj, &j) in idx.iter().enumerate() {
                let src = m.column(j);
                let mut dst = a.column_mut(bj);
                for (bi, &i) in idx.iter().enumerate() {
                    dst[bi] += c * src[i];
                }
            }
        }
        let mut b = DVector::zeros(d);
        for (theta, v) in &fam.rhs {
            let c = theta.eval(mu);
            for (bi, &i) in idx.iter().enumerate() {
                b[bi] += c * v[i];
            }
        }
        (a, b)
    }

    pub fn solve(&self, mu: &[f64], n: usize, mode: RomMode) -> Result<ReducedSolution> {
        self.check_n(n)?;
        if mu.len() != self.info.problem.n_params() {
            return Err(RomError::Dimension(format!(
                "parameter of length {}, expected {}",
                mu.len(),
                self.info.problem.n_params()
            )));
        }
        let idx = self.indices(n);
        let start = Instant::now();
        let (a, b) = self.assemble(mu, &idx, mode);
        let x = dense_solve(a.clone(), &b).map_err(|source| RomError::ReducedSolve {
            mu: mu.to_vec(),
            n,
            mode,
            source,
        })?;
        let wall_time = start.elapsed().as_secs_f64();
        let r = &b - &a * &x;
        let scale = b.norm().max(1.0);
        let [nz, nu, _] = self.block_sizes(n);
        Ok(ReducedSolution {
            y: x.rows(0, nz).into_owned(),
            u: x.rows(nz, nu).into_owned(),
            p: x.rows(nz + nu, nz).into_owned(),
            n,
            mode,
            wall_time,
            residual: r.norm() / scale,
            gradient_residual: r.rows(nz, nu).norm() / scale,
        })
    }

    /// Reduced coefficients mapped back to high-fidelity (homogenized) coordinates.
    pub fn expand(&self, sol: &ReducedSolution) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let z = self.z.vectors.columns(0, sol.y.len());
        let u = self.control.vectors.columns(0, sol.u.len());
        (
            (z * &sol.y).as_slice().to_vec(),
            (u * &sol.u).as_slice().to_vec(),
            (z * &sol.p).as_slice().to_vec(),
        )
    }

    /// Writes bases and projected terms as ROMXMAT1 files with a JSON manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix(dir.join("basis_z.romx"), &self.z.vectors)?;
        for (name, b) in [("state", &self.state), ("control", &self.control), ("adjoint", &self.adjoint)] {
            write_matrix(dir.join(format!("basis_{name}.romx")), &b.vectors)?;
        }
        let mut families = serde_json::Map::new();
        for mode in RomMode::ALL {
            let fam = &self.families[mode.index()];
            let mut terms = Vec::new();
            for (k, (theta, m)) in fam.terms.iter().enumerate() {
                let file = format!("{}_term{k}.romx", mode.name());
                write_matrix(dir.join(&file), m)?;
                terms.push(serde_json::json!({ "theta": theta, "display": theta.to_string(), "file": file }));
            }
            let mut rhs = Vec::new();
            for (k, (theta, v)) in fam.rhs.iter().enumerate() {
                let file = format!("{}_rhs{k}.romx", mode.name());
                write_matrix(dir.join(&file), &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))?;
                rhs.push(serde_json::json!({ "theta": theta, "display": theta.to_string(), "file": file }));
            }
            families.insert(mode.name().into(), serde_json::json!({ "terms": terms, "rhs": rhs }));
        }
        let basis_meta = |b: &PodBasis| {
            serde_json::json!({ "eigenvalues": b.eigenvalues, "requested": b.requested, "warning": b.warning })
        };
        let manifest = serde_json::json!({
            "format": "supg-rom offline v1",
            "info": self.info,
            "z_origin_rank": self.z.origin_rank,
            "bases": {
                "state": basis_meta(&self.state),
                "control": basis_meta(&self.control),
                "adjoint": basis_meta(&self.adjoint),
            },
            "modes": families,
        });
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("json"),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| RomError::Format(format!("manifest.json: {e}")))?;
        let field = |v: &serde_json::Value, key: &str| -> Result<serde_json::Value> {
            v.get(key)
                .cloned()
                .ok_or_else(|| RomError::Format(format!("missing field {key}")))
        };
        fn parse<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T> {
            serde_json::from_value(v).map_err(|e| RomError::Format(e.to_string()))
        }
        let info: OfflineInfo = parse(field(&manifest, "info")?)?;
        let origin_rank: Vec<usize> = parse(field(&manifest, "z_origin_rank")?)?;
        let bases = field(&manifest, "bases")?;
        let load_basis = |name: &str| -> Result<PodBasis> {
            let meta = field(&bases, name)?;
            Ok(PodBasis {
                vectors: read_matrix(dir.join(format!("basis_{name}.romx")))?,
                eigenvalues: parse(field(&meta, "eigenvalues")?)?,
                requested: parse(field(&meta, "requested")?)?,
                warning: parse(field(&meta, "warning")?)?,
            })
        };
        let state = load_basis("state")?;
        let control = load_basis("control")?;
        let adjoint = load_basis("adjoint")?;
        let z = AggregatedBasis {
            vectors: read_matrix(dir.join("basis_z.romx"))?,
            origin_rank,
        };
        if z.vectors.ncols() != z.origin_rank.len() {
            return Err(RomError::Format("aggregated basis and rank list disagree".into()));
        }
        let dim = 2 * z.len() + control.len();
        let modes = field(&manifest, "modes")?;
        let mut families = Vec::new();
        for mode in RomMode::ALL {
            let fam = field(&modes, mode.name())?;
            let entries = |key: &str| -> Result<Vec<(Theta, DMatrix<f64>)>> {
                let list: Vec<serde_json::Value> = parse(field(&fam, key)?)?;
                list.into_iter()
                    .map(|e| {
                        let theta: Theta = parse(field(&e, "theta")?)?;
                        let file: String = parse(field(&e, "file")?)?;
                        let m = read_matrix(dir.join(file))?;
                        if m.nrows() != dim {
                            return Err(RomError::Format(format!("term of {} rows, expected {dim}", m.nrows())));
                        }
                        Ok((theta, m))
                    })
                    .collect()
            };
            let terms = entries("terms")?;
            let rhs = entries("rhs")?
                .into_iter()
                .map(|(t, m)| (t, m.column(0).into_owned()))
                .collect();
            families.push(Family { terms, rhs });
        }
        Ok(Self {
            info,
            state,
            control,
            adjoint,
            z,
            families,
        })
    }
}

/// Snapshots, bases and both projected families for one training set.
pub fn build_offline(hf: &HighFidelity, training: &TrainingSet, n_max: usize) -> Result<(ReducedModel, SnapshotSet)> {
    if n_max == 0 {
        return Err(RomError::EmptyBasis);
    }
    let snaps = collect_snapshots(hf, training, Stabilization::Supg)?;
    let gy = &snaps.grams.state;
    let gu = &snaps.grams.control;
    let state = pod_basis(&correlation_matrix(&snaps.y, gy)?, &snaps.y, gy, n_max)?;
    let control = pod_basis(&correlation_matrix(&snaps.u, gu)?, &snaps.u, gu, n_max)?;
    let adjoint = pod_basis(&correlation_matrix(&snaps.p, gy)?, &snaps.p, gy, n_max)?;
    let z = aggregated_basis(&state, &adjoint, gy)?;
    let problem = hf.problem();
    let info = OfflineInfo {
        problem: problem.id,
        n_max,
        n_train: training.len(),
        seed: training.rng_seed,
        alpha: problem.alpha,
        delta_rule: problem.delta_rule,
        snapshot_times: snaps.wall_times.clone(),
    };
    let model = ReducedModel::build(hf, info, state, control, adjoint, z)?;
    Ok((model, snaps))
}
