//! Experiment harness: TOML configuration, matrix snapshots, trajectory CSV,
//! JSON reports, and the `mlnc` subcommands.
//!
//! Exit codes: 0 pass, 1 verification failure, 2 usage/config/snapshot
//! error, 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labelspace::{generate_dataset, Counts, Dataset, LabelConfig};
use crate::landscape::{escape_test, probe, EscapeReport, ProbeOptions};
use crate::lemmas::{run_lemmas, DEFAULT_DRAWS};
use crate::metrics::MetricReport;
use crate::optimizer::{init_state, train, Record, TrainConfig, Trajectory};
use crate::theory::{construct_global, verify_global, BalancedProblem};
use crate::ufm::{objective, Hyperparams, ModelState};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VERIFY_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const CSV_SCHEMA: &str = "# mlnc-trajectory v1";
pub const SNAPSHOT_FORMAT: &str = "mlnc-matrix";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric { .. } | Error::Solver { .. } | Error::Degenerate(_) => EXIT_NUMERIC,
        Error::Argument(_) | Error::Config(_) | Error::Snapshot(_) | Error::Io(_) => EXIT_USAGE,
    }
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsSection {
    pub num_classes: usize,
    pub max_multiplicity: usize,
    /// Keyed by multiplicity (TOML keys are strings): an integer for a
    /// balanced count, or an array of per-subset counts in rank order.
    pub counts: BTreeMap<String, Counts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub lambda_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seeds: Vec<u64>,
    pub max_iters: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub grad_tol: f64,
    pub init_scale: f64,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            seeds: vec![0, 1, 2, 3, 4],
            max_iters: t.max_iters,
            step_size: t.step_size,
            momentum: t.momentum,
            grad_tol: t.grad_tol,
            init_scale: t.init_scale,
            log_every: t.log_every,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_iters: self.max_iters,
            step_size: self.step_size,
            momentum: self.momentum,
            grad_tol: self.grad_tol,
            seed,
            init_scale: self.init_scale,
            log_every: self.log_every,
            record_metrics: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Relative tolerance for every optimality check.
    pub tol: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstructSection {
    pub rotation_seed: u64,
}

impl Default for ConstructSection {
    fn default() -> Self {
        ConstructSection { rotation_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeSection {
    pub grad_tol: f64,
    pub eig_iters: usize,
    pub eig_tol: f64,
    pub f_tol: f64,
}

impl Default for LandscapeSection {
    fn default() -> Self {
        let p = ProbeOptions::default();
        LandscapeSection {
            grad_tol: p.grad_tol,
            eig_iters: p.eig_iters,
            eig_tol: p.eig_tol,
            f_tol: p.f_tol,
        }
    }
}

impl LandscapeSection {
    pub fn options(&self) -> ProbeOptions {
        ProbeOptions {
            grad_tol: self.grad_tol,
            eig_iters: self.eig_iters,
            eig_tol: self.eig_tol,
            f_tol: self.f_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub labels: LabelsSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub construct: ConstructSection,
    #[serde(default)]
    pub landscape: LandscapeSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn label_config(&self) -> Result<LabelConfig> {
        let mut counts = BTreeMap::new();
        for (key, value) in &self.labels.counts {
            let m: usize = key
                .parse()
                .map_err(|_| Error::Config(format!("counts key {key:?} is not a multiplicity")))?;
            counts.insert(m, value.clone());
        }
        let cfg = LabelConfig {
            num_classes: self.labels.num_classes,
            max_multiplicity: self.labels.max_multiplicity,
            counts,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams::new(self.model.d, self.model.lambda_w, self.model.lambda_h, self.model.lambda_b)
    }

    /// Re-check every embedded invariant.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| Error::Config(e.to_string());
        self.label_config()?;
        self.hyperparams().validate().map_err(as_config)?;
        if self.train.seeds.is_empty() {
            return Err(Error::Config("train.seeds must not be empty".into()));
        }
        self.train.train_config(0).validate().map_err(as_config)?;
        if !(self.verify.tol > 0.0) {
            return Err(Error::Config("verify.tol must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the parsed config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn dataset(&self) -> Result<Dataset> {
        generate_dataset(&self.label_config()?)
    }
}

// ---------------------------------------------------------------- snapshots

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotManifest {
    pub format: String,
    pub version: u32,
    pub label: String,
    pub shape: Vec<usize>,
    pub layout: String,
    pub dtype: String,
    pub config_hash: String,
    pub payload: String,
    pub payload_sha256: String,
}

/// A matrix (or vector, with a one-element shape) stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSnapshot {
    pub manifest: SnapshotManifest,
    pub values: Vec<f64>,
}

impl MatrixSnapshot {
    pub fn from_matrix(label: &str, m: &DMatrix<f64>, config_hash: &str) -> Self {
        let values = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)])
            .collect();
        Self::new(label, vec![m.nrows(), m.ncols()], values, config_hash)
    }

    pub fn from_vector(label: &str, v: &DVector<f64>, config_hash: &str) -> Self {
        Self::new(label, vec![v.len()], v.iter().copied().collect(), config_hash)
    }

    fn new(label: &str, shape: Vec<usize>, values: Vec<f64>, config_hash: &str) -> Self {
        let payload = encode(&values);
        MatrixSnapshot {
            manifest: SnapshotManifest {
                format: SNAPSHOT_FORMAT.into(),
                version: SNAPSHOT_VERSION,
                label: label.into(),
                shape,
                layout: "row-major".into(),
                dtype: "f64le".into(),
                config_hash: config_hash.into(),
                payload: format!("{label}.bin"),
                payload_sha256: hex::encode(Sha256::digest(&payload)),
            },
            values,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.manifest.shape[..] {
            [r, c] => Ok(DMatrix::from_row_slice(r, c, &self.values)),
            _ => Err(Error::Snapshot(format!("{} is not a matrix", self.manifest.label))),
        }
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        match self.manifest.shape[..] {
            [n] => Ok(DVector::from_column_slice(&self.values[..n])),
            _ => Err(Error::Snapshot(format!("{} is not a vector", self.manifest.label))),
        }
    }

    /// Write `<label>.json` and `<label>.bin` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(&self.manifest.payload), encode(&self.values))?;
        fs::write(
            dir.join(format!("{}.json", self.manifest.label)),
            to_json(&self.manifest)?,
        )?;
        Ok(())
    }

    pub fn read(dir: &Path, label: &str) -> Result<Self> {
        let manifest_path = dir.join(format!("{label}.json"));
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::Snapshot(format!("{}: {e}", manifest_path.display())))?;
        let manifest: SnapshotManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Snapshot(format!("{}: {e}", manifest_path.display())))?;
        if manifest.format != SNAPSHOT_FORMAT
            || manifest.version != SNAPSHOT_VERSION
            || manifest.layout != "row-major"
            || manifest.dtype != "f64le"
            || manifest.label != label
        {
            return Err(Error::Snapshot(format!(
                "{}: unsupported manifest",
                manifest_path.display()
            )));
        }
        let bytes = fs::read(dir.join(&manifest.payload))
            .map_err(|e| Error::Snapshot(format!("{label} payload: {e}")))?;
        let expected: usize = manifest.shape.iter().product::<usize>() * 8;
        if bytes.len() != expected {
            return Err(Error::Snapshot(format!(
                "{label} payload has {} bytes, manifest implies {expected}",
                bytes.len()
            )));
        }
        if hex::encode(Sha256::digest(&bytes)) != manifest.payload_sha256 {
            return Err(Error::Snapshot(format!("{label} payload checksum mismatch")));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(MatrixSnapshot { manifest, values })
    }
}

fn encode(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Write `W`, `H` and `b` snapshots into `dir`.
pub fn write_state(dir: &Path, state: &ModelState, config_hash: &str) -> Result<()> {
    MatrixSnapshot::from_matrix("W", &state.w, config_hash).write(dir)?;
    MatrixSnapshot::from_matrix("H", &state.h, config_hash).write(dir)?;
    MatrixSnapshot::from_vector("b", &state.b, config_hash).write(dir)
}

pub fn read_state(dir: &Path) -> Result<ModelState> {
    let w = MatrixSnapshot::read(dir, "W")?.to_matrix()?;
    let h = MatrixSnapshot::read(dir, "H")?.to_matrix()?;
    let b = MatrixSnapshot::read(dir, "b")?.to_vector()?;
    if w.ncols() != h.nrows() || w.nrows() != b.len() {
        return Err(Error::Snapshot(format!(
            "inconsistent shapes: W {}x{}, H {}x{}, b {}",
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols(),
            b.len()
        )));
    }
    Ok(ModelState { w, h, b })
}

// ---------------------------------------------------------------- trajectory CSV

pub fn csv_header(max_multiplicity: usize) -> String {
    let mut cols = vec!["iter".to_string(), "f".into(), "grad_norm".into()];
    cols.extend((1..=max_multiplicity).map(|m| format!("nc1_m{m}")));
    cols.extend(["nc2".into(), "nc3".into(), "ncm".into()]);
    cols.join(",")
}

fn fmt_f64(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_nan() => "nan".into(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) if x == f64::NEG_INFINITY => "-inf".into(),
        Some(x) => format!("{x:e}"),
        None => "nan".into(),
    }
}

pub fn write_trajectory_csv(records: &[Record], max_multiplicity: usize) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA);
    out.push('\n');
    out.push_str(&csv_header(max_multiplicity));
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{}", r.iter, fmt_f64(Some(r.f)), fmt_f64(Some(r.grad_norm)));
        let m = r.metrics.as_ref();
        for mult in 1..=max_multiplicity {
            let v = m.and_then(|m| m.nc1.get(&mult).copied());
            let _ = write!(out, ",{}", fmt_f64(v));
        }
        for v in [m.and_then(|m| m.nc2), m.and_then(|m| m.nc3), m.and_then(|m| m.ncm)] {
            let _ = write!(out, ",{}", fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub iter: usize,
    pub f: f64,
    pub grad_norm: f64,
    /// `nc1_m1..nc1_mM`, then nc2, nc3, ncm.
    pub metrics: Vec<f64>,
}

/// Parse a trajectory CSV, rejecting any schema or header drift.
pub fn read_trajectory_csv(text: &str) -> Result<(usize, Vec<CsvRow>)> {
    let bad = |msg: String| Error::Snapshot(format!("trajectory CSV: {msg}"));
    let mut lines = text.split('\n');
    if lines.next() != Some(CSV_SCHEMA) {
        return Err(bad("missing or unknown schema line".into()));
    }
    let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
    let ncols = header.split(',').count();
    if ncols < 7 {
        return Err(bad("header too short".into()));
    }
    let max_m = ncols - 6;
    if header != csv_header(max_m) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(bad(format!("row {n} has {} fields", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("row {n}: bad number {s:?}")));
        rows.push(CsvRow {
            iter: fields[0].parse().map_err(|_| bad(format!("row {n}: bad iter")))?,
            f: num(fields[1])?,
            grad_norm: num(fields[2])?,
            metrics: fields[3..].iter().map(|s| num(s)).collect::<Result<_>>()?,
        });
    }
    Ok((max_m, rows))
}

// ---------------------------------------------------------------- reports

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_json(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub final_step_size: f64,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seeds: Vec<SeedSummary>,
    pub best_seed: Option<u64>,
    pub best_f: Option<f64>,
    /// `(max f − min f)/|min f|` over successful seeds.
    pub relative_spread: Option<f64>,
    /// Analytic optimum when counts are balanced within each multiplicity.
    pub analytic_bound: Option<f64>,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Train every seed, writing `seed_<s>/trajectory.csv`, `seed_<s>/state/`
/// and `summary.json`. A numeric failure in any seed still writes the
/// other seeds' outputs (and the failing seed's last finite state) before
/// returning the error.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    let data = cfg.dataset()?;
    let hp = cfg.hyperparams();
    let hash = cfg.hash();
    let results: Vec<(u64, Result<Trajectory>)> = cfg
        .train
        .seeds
        .par_iter()
        .map(|&seed| {
            let tc = cfg.train.train_config(seed);
            let s0 = init_state(&data, &hp, seed, tc.init_scale);
            (seed, train(&s0, &data, &hp, &tc))
        })
        .collect();

    let mut seeds = Vec::new();
    let mut first_err = None;
    for (seed, res) in results {
        let dir = seed_dir(out, seed);
        fs::create_dir_all(&dir)?;
        match res {
            Ok(t) => {
                fs::write(
                    dir.join("trajectory.csv"),
                    write_trajectory_csv(&t.records, cfg.labels.max_multiplicity),
                )?;
                write_state(&dir.join("state"), &t.final_state, &hash)?;
                let last = t.final_record();
                seeds.push(SeedSummary {
                    seed,
                    iterations: t.iterations,
                    converged: t.converged,
                    final_f: last.f,
                    final_grad_norm: last.grad_norm,
                    final_step_size: t.final_step_size,
                    metrics: last.metrics.clone(),
                    error: None,
                });
            }
            Err(e) => {
                if let Error::Numeric {
                    last_state: Some(s), ..
                } = &e
                {
                    write_state(&dir.join("last_state"), s, &hash)?;
                }
                seeds.push(SeedSummary {
                    seed,
                    iterations: 0,
                    converged: false,
                    final_f: f64::NAN,
                    final_grad_norm: f64::NAN,
                    final_step_size: f64::NAN,
                    metrics: None,
                    error: Some(e.to_string()),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    let ok: Vec<&SeedSummary> = seeds.iter().filter(|s| s.error.is_none()).collect();
    let best = ok
        .iter()
        .min_by(|a, b| a.final_f.total_cmp(&b.final_f))
        .map(|s| (s.seed, s.final_f));
    let spread = best.map(|(_, fmin)| {
        let fmax = ok.iter().map(|s| s.final_f).fold(f64::NEG_INFINITY, f64::max);
        (fmax - fmin) / fmin.abs().max(f64::MIN_POSITIVE)
    });
    let analytic_bound = match BalancedProblem::new(&data, &hp) {
        Ok(p) => p.optimal_rho().ok().map(|s| s.bound),
        Err(_) => None,
    };
    let summary = TrainSummary {
        config_hash: hash,
        seeds,
        best_seed: best.map(|b| b.0),
        best_f: best.map(|b| b.1),
        relative_spread: spread,
        analytic_bound,
    };
    write_json(&out.join("summary.json"), &summary)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructSummary {
    pub config_hash: String,
    pub rotation_seed: u64,
    pub c_system_residual: f64,
    /// Objective recomputed at the constructed state.
    pub objective: f64,
    pub solution: crate::theory::AnalyticSolution,
}

/// Solve for `ρ*`, build the analytic global, and write `solution.json`
/// and `state/`.
pub fn run_construct(cfg: &ExperimentConfig, out: &Path) -> Result<ConstructSummary> {
    let data = cfg.dataset()?;
    let hp = cfg.hyperparams();
    let problem = BalancedProblem::new(&data, &hp)?;
    let solution = problem.optimal_rho()?;
    let state = construct_global(&data, &hp, &solution, cfg.construct.rotation_seed)?;
    let summary = ConstructSummary {
        config_hash: cfg.hash(),
        rotation_seed: cfg.construct.rotation_seed,
        c_system_residual: solution.c_system_residual(),
        objective: objective(&state, &data, &hp)?,
        solution,
    };
    write_state(&out.join("state"), &state, &summary.config_hash)?;
    write_json(&out.join("solution.json"), &summary)?;
    Ok(summary)
}

fn load_state_for(cfg: &ExperimentConfig, data: &Dataset, snapshot: &Path) -> Result<ModelState> {
    let state = read_state(snapshot)?;
    state
        .check_shapes(data, &cfg.hyperparams())
        .map_err(|e| Error::Snapshot(e.to_string()))?;
    Ok(state)
}

/// Verify a snapshot; writes `verification.json` into `out` when given.
pub fn run_verify(
    cfg: &ExperimentConfig,
    snapshot: &Path,
    out: Option<&Path>,
) -> Result<crate::theory::VerificationReport> {
    let data = cfg.dataset()?;
    let state = load_state_for(cfg, &data, snapshot)?;
    let report = verify_global(&state, &data, &cfg.hyperparams(), cfg.verify.tol)?;
    if let Some(out) = out {
        write_json(&out.join("verification.json"), &report)?;
    }
    Ok(report)
}

pub fn verification_table(report: &crate::theory::VerificationReport) -> String {
    let mut s = format!("{:<22} {:>12} {:>10}  status\n", "check", "residual", "tol");
    for c in &report.checks {
        let _ = writeln!(
            s,
            "{:<22} {:>12.3e} {:>10.1e}  {}",
            c.name,
            c.residual,
            c.tol,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeSummary {
    pub config_hash: String,
    pub source: String,
    pub curvature: crate::landscape::CurvatureReport,
    pub escape: Option<EscapeReport>,
}

/// Probe the origin or a snapshot; optionally run the escape test from it.
pub fn run_landscape(
    cfg: &ExperimentConfig,
    snapshot: Option<&Path>,
    escape: bool,
    out: &Path,
) -> Result<LandscapeSummary> {
    let data = cfg.dataset()?;
    let hp = cfg.hyperparams();
    let (state, source) = match snapshot {
        Some(p) => (load_state_for(cfg, &data, p)?, p.display().to_string()),
        None => (
            ModelState::zeros(data.num_classes(), hp.d, data.len()),
            "origin".to_string(),
        ),
    };
    let pr = probe(&state, &data, &hp, &cfg.landscape.options())?;
    let hash = cfg.hash();
    let escape = if escape {
        let seed = cfg.train.seeds[0];
        let rep = escape_test(
            &state,
            &pr.direction,
            &data,
            &hp,
            &cfg.train.train_config(seed),
            cfg.verify.tol,
        )?;
        write_state(&out.join("escape_state"), &rep.final_state, &hash)?;
        Some(rep)
    } else {
        None
    };
    let summary = LandscapeSummary {
        config_hash: hash,
        source,
        curvature: pr.report,
        escape,
    };
    write_json(&out.join("landscape.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- command line

#[derive(Debug, Parser)]
#[command(name = "mlnc", version, about = "Multi-label neural collapse under the unconstrained feature model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (defaults to the config's `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gradient descent from every configured seed.
    Train(Common),
    /// Build the analytic global minimizer.
    Construct(Common),
    /// Check the optimality conditions on a snapshot.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Snapshot directory holding W, H and b.
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Curvature probe at a snapshot or at the origin.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "origin", required_unless_present = "origin")]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        origin: bool,
        /// Follow the negative-curvature direction and retrain.
        #[arg(long)]
        escape: bool,
    },
    /// Exact and randomized checks of the supporting identities.
    Lemmas {
        #[arg(long, default_value_t = 8)]
        max_k: usize,
        #[arg(long, default_value_t = DEFAULT_DRAWS)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_common(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.train.seeds = vec![seed];
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Argument("no --out given and config has no output_dir".into()))?;
    Ok((cfg, out))
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(c) => {
            let (cfg, out) = load_common(&c)?;
            let s = run_train(&cfg, &out)?;
            for r in &s.seeds {
                println!(
                    "seed {:>4}  iters {:>7}  converged {:<5}  f {:.15e}  |grad| {:.3e}",
                    r.seed, r.iterations, r.converged, r.final_f, r.final_grad_norm
                );
            }
            if let Some(spread) = s.relative_spread {
                println!("relative spread of final f: {spread:.3e}");
            }
            Ok(EXIT_PASS)
        }
        Command::Construct(c) => {
            let (cfg, out) = load_common(&c)?;
            let s = run_construct(&cfg, &out)?;
            println!(
                "rho* {:.12e}  bound {:.15e}  f {:.15e}  c-system residual {:.2e}",
                s.solution.rho, s.solution.bound, s.objective, s.c_system_residual
            );
            Ok(EXIT_PASS)
        }
        Command::Verify { common, snapshot } => {
            let (cfg, out) = load_common(&common)?;
            let rep = run_verify(&cfg, &snapshot, Some(&out))?;
            print!("{}", verification_table(&rep));
            Ok(if rep.pass { EXIT_PASS } else { EXIT_VERIFY_FAIL })
        }
        Command::Landscape {
            common,
            snapshot,
            origin: _,
            escape,
        } => {
            let (cfg, out) = load_common(&common)?;
            let s = run_landscape(&cfg, snapshot.as_deref(), escape, &out)?;
            let c = &s.curvature;
            println!(
                "{}: |grad| {:.3e}  lambda_min {:.6e}  residual {:.2e}  {}",
                s.source, c.grad_norm, c.lambda_min_estimate, c.eigvec_residual, c.classification
            );
            if let Some(e) = &s.escape {
                let verified = e.verification.as_ref().map(|v| v.pass);
                println!(
                    "escape: f {:.9} -> {:.9}  converged {}  verified {:?}",
                    e.f_saddle, e.f_final, e.converged, verified
                );
                if !(e.descended && verified.unwrap_or(true)) {
                    return Ok(EXIT_VERIFY_FAIL);
                }
            }
            Ok(EXIT_PASS)
        }
        Command::Lemmas {
            max_k,
            draws,
            seed,
            out,
        } => {
            let rep = run_lemmas(max_k, draws, seed)?;
            print!("{}", rep.table());
            if let Some(out) = out {
                write_json(&out.join("lemmas.json"), &rep)?;
            }
            Ok(if rep.pass { EXIT_PASS } else { EXIT_VERIFY_FAIL })
        }
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
