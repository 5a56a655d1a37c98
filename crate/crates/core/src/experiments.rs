//! Batch experiments behind the `speclab` command line tool.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`]. Samples
//! come from `(seed, index)` streams, are computed on a worker pool, collected
//! in index order and only then reduced and written, so data tables are
//! byte-identical across runs and worker counts. Only `metadata.json` carries
//! wall-clock information.

use std::f64::consts::{LN_2, TAU};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::eigensolver::{determinant, eigenvalues};
use crate::ensemble::{sample_matrix, sample_rng, sample_unit_disk, EnsembleSpec, MatrixSample};
use crate::error::{Error, Result};
use crate::localization::{
    ideal_variance, localization_spectrum, sinh_closed_form, LocalizationRecord,
};
use crate::operators::{build_balanced, build_undeformed, Deformation};
use crate::spectra::{
    hole_radius, moments, poisson_residual, radial_counts, smooth, DensityProfile,
    LyapunovCurve, UNIT_DISK_MEAN_LOG_B,
};
use crate::transfer::{duality_det, winding_number};

/// Split-trajectory threshold: a second candidate within this factor of the
/// nearest one makes a continuation step ambiguous.
pub const AMBIGUITY_RATIO: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Spectrum,
    DeformSweep,
    PhaseSweep,
    Density,
    Thouless,
    GammaScatter,
    #[serde(rename = "variance-3d")]
    Variance3d,
    HoleVsXi,
    DualityCheck,
    WindingCheck,
    HermitianHn,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        Self::Spectrum,
        Self::DeformSweep,
        Self::PhaseSweep,
        Self::Density,
        Self::Thouless,
        Self::GammaScatter,
        Self::Variance3d,
        Self::HoleVsXi,
        Self::DualityCheck,
        Self::WindingCheck,
        Self::HermitianHn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Spectrum => "spectrum",
            Self::DeformSweep => "deform-sweep",
            Self::PhaseSweep => "phase-sweep",
            Self::Density => "density",
            Self::Thouless => "thouless",
            Self::GammaScatter => "gamma-scatter",
            Self::Variance3d => "variance-3d",
            Self::HoleVsXi => "hole-vs-xi",
            Self::DualityCheck => "duality-check",
            Self::WindingCheck => "winding-check",
            Self::HermitianHn => "hermitian-hn",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::InvalidParameter(format!("unknown format '{s}'"))),
        }
    }
}

/// Full description of one run; echoed verbatim into `metadata.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub samples: usize,
    pub xi: Vec<f64>,
    pub phi: f64,
    pub bins: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    /// Moving-average window for the density, in bins.
    pub smooth_window: usize,
    /// Upper edge of the radial histogram.
    pub r_max: f64,
    /// Number of phase steps in a sweep.
    pub phi_steps: usize,
    /// Swept fraction of the `2π/n` period.
    pub phi_span: f64,
    /// Half-width of the diagonal disorder for the Hermitian chain.
    pub hn_width: f64,
    /// Half-width of the accepted band around the Lyapunov curve.
    pub scatter_band: f64,
    /// Radial window of the plateau and quadratic fits.
    pub fit_window: f64,
    /// Length of the single chain used for transfer-matrix exponents.
    pub chain_length: usize,
}

impl ExperimentConfig {
    /// Defaults sized after the figure each experiment reproduces.
    pub fn defaults(experiment: ExperimentKind, out_dir: impl Into<PathBuf>) -> Self {
        use ExperimentKind::*;
        let (n, samples, xi): (usize, usize, Vec<f64>) = match experiment {
            Spectrum => (800, 1, vec![0.0, 0.5]),
            DeformSweep => (400, 3, vec![0.0, 0.25, 0.5, 0.75, 1.0]),
            PhaseSweep => (100, 1, vec![0.5]),
            Density | Thouless => (1000, 100, vec![0.0]),
            GammaScatter => (800, 1, vec![0.0]),
            Variance3d => (800, 1, vec![LN_2]),
            HoleVsXi => (800, 4, (1..=15).map(|k| 0.1 * k as f64).collect()),
            DualityCheck => (12, 100, vec![0.0, 1.0]),
            WindingCheck => (200, 50, vec![0.5, 0.7, 1.0]),
            HermitianHn => (600, 1, vec![0.0, 1.0]),
        };
        Self {
            experiment,
            n,
            samples,
            xi,
            phi: 0.0,
            bins: 300,
            seed: 2024,
            out_dir: out_dir.into(),
            format: OutputFormat::Csv,
            smooth_window: 10,
            r_max: 3.0,
            phi_steps: 16,
            phi_span: 0.5,
            hn_width: 3.5,
            scatter_band: 0.15,
            fit_window: 0.5,
            chain_length: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n < 3 {
            return Err(Error::SizeTooSmall { n: self.n });
        }
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        if self.xi.is_empty() || self.xi.iter().any(|x| !x.is_finite()) {
            return bad("xi must be a non-empty list of finite values".into());
        }
        if !self.phi.is_finite() {
            return bad("phi must be finite".into());
        }
        if self.bins == 0 || !(self.r_max > 0.0) {
            return bad("bins and r_max must be positive".into());
        }
        if self.smooth_window == 0 || self.smooth_window > self.bins {
            return bad(format!("smoothing window must lie in 1..={}", self.bins));
        }
        if self.phi_steps == 0 || !self.phi_span.is_finite() {
            return bad("phase sweep needs at least one step and a finite span".into());
        }
        if !(self.hn_width > 0.0) || !(self.scatter_band > 0.0) || !(self.fit_window > 0.0) {
            return bad("width, band and fit window must be positive".into());
        }
        if self.chain_length < 3 {
            return Err(Error::SizeTooSmall {
                n: self.chain_length,
            });
        }
        Ok(())
    }

    fn deformation(&self, xi: f64) -> Result<Deformation> {
        Deformation::new(xi, self.phi)
    }

    fn unit_disk(&self) -> EnsembleSpec {
        EnsembleSpec::unit_disk(self.n, self.samples, self.seed)
    }

    /// One long chain on a stream disjoint from the ensemble samples.
    fn chain(&self) -> Result<MatrixSample> {
        let spec = EnsembleSpec::unit_disk(self.chain_length, self.samples + 1, self.seed);
        sample_matrix(&spec, self.samples)
    }
}

/// Random parameters for check experiments, on streams disjoint from the
/// matrix entries.
fn param_rng(seed: u64, index: u64) -> ChaCha8Rng {
    sample_rng(seed ^ 0x5bd1_e995_9e37_79b9, index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Flag(bool),
    Missing,
}

impl Cell {
    fn opt(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Real)
    }

    fn to_field(self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => v.to_string(),
            Cell::Flag(v) => v.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn to_json(self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Real(v) => json!(v),
            Cell::Flag(v) => json!(v),
            Cell::Missing => Value::Null,
        }
    }
}

/// One output table; written as `<name>.csv` or `<name>.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<PathBuf> {
        let path = dir.join(format!("{}.{}", self.name, format.extension()));
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
                w.write_record(&self.columns).map_err(csv_error)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(|c| c.to_field()))
                        .map_err(csv_error)?;
                }
                w.flush()?;
            }
            OutputFormat::Json => {
                let rows: Vec<Vec<Value>> = self
                    .rows
                    .iter()
                    .map(|r| r.iter().map(|c| c.to_json()).collect())
                    .collect();
                let doc = json!({ "columns": self.columns, "rows": rows });
                fs::write(&path, serde_json::to_vec_pretty(&doc).map_err(json_error)?)?;
            }
        }
        Ok(path)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Io(e.to_string())
}

fn spectrum_row(sample_index: usize, e: Complex64) -> Vec<Cell> {
    vec![Cell::Int(sample_index as i64), Cell::Real(e.re), Cell::Real(e.im)]
}

const SPECTRUM_COLUMNS: [&str; 3] = ["sample_index", "re_E", "im_E"];

/// A sample-level failure that was skipped and tallied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub sample_index: usize,
    pub xi: Option<f64>,
    pub message: String,
}

/// Tables and diagnostics of one experiment before anything is written.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub failures: Vec<Failure>,
    pub diagnostics: Map<String, Value>,
}

impl Outcome {
    fn fail(&mut self, sample_index: usize, xi: Option<f64>, e: &Error) {
        self.failures.push(Failure {
            sample_index,
            xi,
            message: e.to_string(),
        });
    }

    fn note(&mut self, key: &str, value: Value) {
        self.diagnostics.insert(key.to_string(), value);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub tables: Vec<PathBuf>,
    pub metadata: PathBuf,
    pub failures: usize,
}

/// Runs `config` on `workers` threads and writes its tables and metadata.
pub fn run(config: &ExperimentConfig, workers: usize) -> Result<RunReport> {
    config.validate()?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let clock = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let outcome = pool.install(|| compute(config))?;
    let wall_time = clock.elapsed().as_secs_f64();

    fs::create_dir_all(&config.out_dir)?;
    let mut tables = Vec::with_capacity(outcome.tables.len());
    for t in &outcome.tables {
        tables.push(t.write(&config.out_dir, config.format)?);
    }
    let metadata = config.out_dir.join("metadata.json");
    let doc = json!({
        "config": config,
        "library": { "name": "speclab", "version": env!("CARGO_PKG_VERSION") },
        "workers": workers.max(1),
        "started_unix_s": started,
        "wall_time_s": wall_time,
        "failure_count": outcome.failures.len(),
        "failures": outcome.failures,
        "tables": tables
            .iter()
            .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect::<Vec<_>>(),
        "diagnostics": outcome.diagnostics,
    });
    fs::write(&metadata, serde_json::to_vec_pretty(&doc).map_err(json_error)?)?;
    Ok(RunReport {
        tables,
        metadata,
        failures: outcome.failures.len(),
    })
}

/// Computes an experiment's tables on the current rayon pool.
pub fn compute(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    use ExperimentKind::*;
    match config.experiment {
        Spectrum => spectrum(config),
        DeformSweep => deform_sweep(config),
        PhaseSweep => phase_sweep(config),
        Density => density(config),
        Thouless => thouless(config),
        GammaScatter => gamma_scatter(config),
        Variance3d => variance_3d(config),
        HoleVsXi => hole_vs_xi(config),
        DualityCheck => duality_check(config),
        WindingCheck => winding_check(config),
        HermitianHn => hermitian_hn(config),
    }
}

/// `f(i)` for every sample index, in index order.
fn per_sample<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..count).into_par_iter().map(f).collect()
}

/// Eigenvalues of `M_b(z)` for every sample and every `xi`, indexed
/// `[xi][sample]`.
fn deformed_spectra(
    config: &ExperimentConfig,
    spec: &EnsembleSpec,
) -> Vec<Vec<Result<Vec<Complex64>>>> {
    let per = per_sample(config.samples, |i| {
        let s = sample_matrix(spec, i);
        config
            .xi
            .iter()
            .map(|&xi| {
                let s = s.as_ref().map_err(Clone::clone)?;
                eigenvalues(&build_balanced(s, &config.deformation(xi)?))
            })
            .collect::<Vec<_>>()
    });
    (0..config.xi.len())
        .map(|k| per.iter().map(|row| row[k].clone()).collect())
        .collect()
}

fn spectrum_tables(
    config: &ExperimentConfig,
    spec: &EnsembleSpec,
    prefix: &str,
    out: &mut Outcome,
) {
    let all = deformed_spectra(config, spec);
    let mut max_im = Vec::new();
    for (k, (xi, per)) in config.xi.iter().zip(all).enumerate() {
        let mut t = Table::new(format!("{prefix}_xi{k}"), &SPECTRUM_COLUMNS);
        let mut worst = 0.0f64;
        for (i, r) in per.into_iter().enumerate() {
            match r {
                Ok(eigs) => {
                    for e in eigs {
                        worst = worst.max(e.im.abs());
                        t.push(spectrum_row(i, e));
                    }
                }
                Err(e) => out.fail(i, Some(*xi), &e),
            }
        }
        max_im.push(worst);
        out.tables.push(t);
    }
    out.note("xi_by_table", json!(config.xi));
    out.note("max_abs_im_by_table", json!(max_im));
}

fn spectrum(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    spectrum_tables(config, &config.unit_disk(), "spectrum", &mut out);
    Ok(out)
}

fn hermitian_hn(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let spec = EnsembleSpec::hermitian_hn(config.n, config.hn_width, config.samples, config.seed);
    spectrum_tables(config, &spec, "hn", &mut out);
    Ok(out)
}

fn deform_sweep(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let all = deformed_spectra(config, &config.unit_disk());
    let mut t = Table::new("deform_sweep", &["xi", "sample_index", "re_E", "im_E"]);
    let mut summary = Table::new(
        "deform_sweep_summary",
        &["xi", "sample_index", "min_abs_E", "max_abs_E"],
    );
    for (&xi, per) in config.xi.iter().zip(all) {
        for (i, r) in per.into_iter().enumerate() {
            match r {
                Ok(eigs) => {
                    let (lo, hi) = eigs.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), e| {
                        (lo.min(e.norm()), hi.max(e.norm()))
                    });
                    summary.push(vec![
                        Cell::Real(xi),
                        Cell::Int(i as i64),
                        Cell::Real(lo),
                        Cell::Real(hi),
                    ]);
                    for e in eigs {
                        t.push(vec![
                            Cell::Real(xi),
                            Cell::Int(i as i64),
                            Cell::Real(e.re),
                            Cell::Real(e.im),
                        ]);
                    }
                }
                Err(e) => out.fail(i, Some(xi), &e),
            }
        }
    }
    out.tables.push(t);
    out.tables.push(summary);
    Ok(out)
}

/// Persistent labels for eigenvalues followed across consecutive steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectories {
    /// `paths[label][step]`.
    pub paths: Vec<Vec<Complex64>>,
    pub total_displacement: Vec<f64>,
    /// Some step of this label had two candidates within `AMBIGUITY_RATIO`.
    pub split: Vec<bool>,
}

impl Trajectories {
    pub fn labels(&self) -> usize {
        self.paths.len()
    }

    pub fn start(&self, label: usize) -> Complex64 {
        self.paths[label][0]
    }

    pub fn end(&self, label: usize) -> Complex64 {
        *self.paths[label].last().expect("at least one step")
    }
}

/// Labels eigenvalues of consecutive steps by nearest-neighbor continuation.
///
/// Each step is a global greedy assignment, closest pairs first, so every
/// label moves to a distinct eigenvalue of the next step.
pub fn trajectory_continuation(steps: &[Vec<Complex64>]) -> Result<Trajectories> {
    let first = steps.first().ok_or(Error::EmptyInput)?;
    let n = first.len();
    if steps.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidParameter(
            "all steps must hold the same number of eigenvalues".into(),
        ));
    }
    let mut paths: Vec<Vec<Complex64>> = first.iter().map(|&e| vec![e]).collect();
    let mut total_displacement = vec![0.0; n];
    let mut split = vec![false; n];
    for next in &steps[1..] {
        let current: Vec<Complex64> = paths.iter().map(|p| *p.last().expect("nonempty")).collect();
        let mut pairs = Vec::with_capacity(n * n);
        for (i, a) in current.iter().enumerate() {
            let mut nearest = [f64::INFINITY; 2];
            for (j, b) in next.iter().enumerate() {
                let d = (a - b).norm();
                pairs.push((d, i, j));
                if d < nearest[0] {
                    nearest = [d, nearest[0]];
                } else if d < nearest[1] {
                    nearest[1] = d;
                }
            }
            if nearest[0] > 0.0 && nearest[1] <= AMBIGUITY_RATIO * nearest[0] {
                split[i] = true;
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut taken_label = vec![false; n];
        let mut taken_next = vec![false; n];
        for (d, i, j) in pairs {
            if !taken_label[i] && !taken_next[j] {
                taken_label[i] = true;
                taken_next[j] = true;
                paths[i].push(next[j]);
                total_displacement[i] += d;
            }
        }
    }
    Ok(Trajectories {
        paths,
        total_displacement,
        split,
    })
}

/// Phases `phi + span · (2π/n) · k / steps` for `k = 0..=steps`.
pub fn sweep_phases(phi: f64, n: usize, span: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| phi + span * TAU / n as f64 * k as f64 / steps as f64)
        .collect()
}

fn phase_sweep(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let xi = config.xi[0];
    let sample = sample_matrix(&config.unit_disk(), 0)?;
    let phases = sweep_phases(config.phi, config.n, config.phi_span, config.phi_steps);
    let steps: Vec<Result<Vec<Complex64>>> = per_sample(phases.len(), |k| {
        eigenvalues(&build_balanced(&sample, &Deformation::new(xi, phases[k])?))
    });
    let mut tables = Vec::new();
    for r in steps {
        match r {
            Ok(eigs) => tables.push(eigs),
            Err(e) => {
                out.fail(0, Some(xi), &e);
                return Ok(out);
            }
        }
    }
    for (k, eigs) in tables.iter().enumerate() {
        let mut t = Table::new(format!("phase_step_{k:02}"), &SPECTRUM_COLUMNS);
        for &e in eigs {
            t.push(spectrum_row(0, e));
        }
        out.tables.push(t);
    }
    let traj = trajectory_continuation(&tables)?;
    let mut t = Table::new("trajectories", &["label", "phi", "re_E", "im_E"]);
    let mut summary = Table::new(
        "trajectory_summary",
        &["label", "total_displacement", "split", "start_abs_E"],
    );
    for (label, path) in traj.paths.iter().enumerate() {
        for (phi, e) in phases.iter().zip(path) {
            t.push(vec![
                Cell::Int(label as i64),
                Cell::Real(*phi),
                Cell::Real(e.re),
                Cell::Real(e.im),
            ]);
        }
        summary.push(vec![
            Cell::Int(label as i64),
            Cell::Real(traj.total_displacement[label]),
            Cell::Flag(traj.split[label]),
            Cell::Real(path[0].norm()),
        ]);
    }
    out.tables.push(t);
    out.tables.push(summary);
    out.note("phases", json!(phases));
    out.note("split_labels", json!(traj.split.iter().filter(|s| **s).count()));
    Ok(out)
}

/// Undeformed spectra of all samples, in index order, with failures tallied.
fn undeformed_spectra(config: &ExperimentConfig, out: &mut Outcome) -> Vec<Vec<Complex64>> {
    let spec = config.unit_disk();
    let results = per_sample(config.samples, |i| {
        let s = sample_matrix(&spec, i)?;
        eigenvalues(&build_undeformed(&s))
    });
    let mut kept = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(e) => kept.push(e),
            Err(e) => out.fail(i, Some(0.0), &e),
        }
    }
    kept
}

/// Pools per-sample histograms by element-wise addition in index order.
fn pooled_profile(spectra: &[Vec<Complex64>], bins: usize, r_max: f64) -> Result<DensityProfile> {
    let mut counts = vec![0u64; bins];
    let mut overflow = 0;
    for eigs in spectra {
        let (c, o) = radial_counts(eigs, bins, r_max);
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        overflow += o;
    }
    DensityProfile::from_counts(counts, overflow, r_max)
}

fn density(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let spectra = undeformed_spectra(config, &mut out);
    if spectra.is_empty() {
        return Err(Error::EmptyInput);
    }
    let raw = pooled_profile(&spectra, config.bins, config.r_max)?;
    let smoothed = smooth(&raw, config.smooth_window)?;
    let mut t = Table::new(
        "density",
        &["r_lo", "r_hi", "count", "density", "density_smoothed", "n0"],
    );
    for i in 0..raw.bins() {
        t.push(vec![
            Cell::Real(raw.bin_edges[i]),
            Cell::Real(raw.bin_edges[i + 1]),
            Cell::Int(raw.counts[i] as i64),
            Cell::Real(raw.density[i]),
            Cell::Real(smoothed.density[i]),
            Cell::Real(raw.n0[i + 1]),
        ]);
    }
    out.tables.push(t);
    let mut m = Table::new("moments", &["k", "value", "std_error"]);
    for k in 1..=4 {
        let mo = moments(&spectra, k)?;
        m.push(vec![Cell::Int(k as i64), Cell::Real(mo.value), Cell::opt(mo.std_error)]);
    }
    out.tables.push(m);
    out.note("plateau", json!(smoothed.plateau(0.0, config.fit_window)));
    out.note("plateau_window", json!([0.0, config.fit_window]));
    out.note("total", json!(raw.total));
    out.note("overflow", json!(raw.overflow));
    out.note("mass", json!(raw.mass()));
    Ok(out)
}

/// Radii `0, r_max/bins, ..., r_max`.
fn edge_grid(config: &ExperimentConfig) -> Vec<f64> {
    (0..=config.bins)
        .map(|i| config.r_max * i as f64 / config.bins as f64)
        .collect()
}

fn thouless(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let spectra = undeformed_spectra(config, &mut out);
    if spectra.is_empty() {
        return Err(Error::EmptyInput);
    }
    let smoothed = smooth(
        &pooled_profile(&spectra, config.bins, config.r_max)?,
        config.smooth_window,
    )?;
    let curve = LyapunovCurve::from_profile(&smoothed, &edge_grid(config), UNIT_DISK_MEAN_LOG_B)?;
    let mut t = Table::new("thouless", &["r", "gamma", "gamma_outside_support"]);
    for (&r, &g) in curve.radii.iter().zip(&curve.gamma) {
        let outside = (r > 0.0).then(|| r.ln() - UNIT_DISK_MEAN_LOG_B);
        t.push(vec![Cell::Real(r), Cell::Real(g), Cell::opt(outside)]);
    }
    out.tables.push(t);

    let chain = config.chain()?;
    let radii: Vec<f64> = (1..=10).map(|k| 0.25 * k as f64).collect();
    let direct = LyapunovCurve::from_transfer(&chain, &radii)?;
    let mut tr = Table::new("thouless_transfer", &["r", "xi_plus", "gamma_thouless"]);
    for (&r, &g) in radii.iter().zip(&direct.gamma) {
        tr.push(vec![Cell::Real(r), Cell::Real(g), Cell::Real(curve.gamma_at(r))]);
    }
    out.tables.push(tr);

    let on_mid = LyapunovCurve::on_midpoints(&smoothed, UNIT_DISK_MEAN_LOG_B)?;
    let residual = poisson_residual(&smoothed, &on_mid)?;
    let mut p = Table::new("poisson", &["r", "residual"]);
    for (r, v) in smoothed.midpoints()[1..].iter().zip(residual) {
        p.push(vec![Cell::Real(*r), Cell::Real(v)]);
    }
    out.tables.push(p);

    let fit = curve.quadratic_fit(config.fit_window);
    out.note("gamma_at_zero", json!(curve.gamma_at(0.0)));
    out.note("quadratic_fit", json!(fit.map(|(c0, c2)| json!({"c0": c0, "c2": c2}))));
    out.note("fit_window", json!([0.0, config.fit_window]));
    out.note("mean_log_b", json!(UNIT_DISK_MEAN_LOG_B));
    out.note("chain_length", json!(config.chain_length));
    out.note("chain_mean_log_b", json!(chain.mean_log_abs_b()));
    Ok(out)
}

fn localization_records(config: &ExperimentConfig) -> Result<Vec<LocalizationRecord>> {
    let sample = sample_matrix(&config.unit_disk(), 0)?;
    localization_spectrum(&build_balanced(&sample, &config.deformation(config.xi[0])?))
}

/// Fraction of unflagged records whose rate lies within `band` of the curve.
pub fn fraction_within_band(records: &[LocalizationRecord], curve: &LyapunovCurve, band: f64) -> f64 {
    let unflagged: Vec<&LocalizationRecord> = records.iter().filter(|r| !r.flagged).collect();
    if unflagged.is_empty() {
        return 0.0;
    }
    let inside = unflagged
        .iter()
        .filter(|r| {
            r.rate
                .is_some_and(|g| (g - curve.gamma_at(r.eigenvalue.norm())).abs() <= band)
        })
        .count();
    inside as f64 / unflagged.len() as f64
}

fn gamma_scatter(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let records = localization_records(config)?;
    let mut t = Table::new(
        "scatter",
        &["abs_E", "variance", "rate", "flagged", "seam_flag"],
    );
    for r in &records {
        t.push(vec![
            Cell::Real(r.eigenvalue.norm()),
            Cell::Real(r.variance),
            Cell::opt(r.rate),
            Cell::Flag(r.flagged),
            Cell::Flag(r.seam_flag),
        ]);
    }
    out.tables.push(t);
    let grid: Vec<f64> = (0..=60).map(|k| 0.05 * k as f64).collect();
    let curve = LyapunovCurve::from_transfer(&config.chain()?, &grid)?;
    let mut c = Table::new("gamma_curve", &["r", "gamma"]);
    for (&r, &g) in curve.radii.iter().zip(&curve.gamma) {
        c.push(vec![Cell::Real(r), Cell::Real(g)]);
    }
    out.tables.push(c);
    out.note("band", json!(config.scatter_band));
    out.note(
        "fraction_within_band",
        json!(fraction_within_band(&records, &curve, config.scatter_band)),
    );
    out.note("curve_source", json!("transfer-matrix exponent of one long chain"));
    out.note(
        "rate_oracle",
        json!("inverse of the brute-force spread of the truncated ideal profile"),
    );
    out.note(
        "ideal_spread_at_rate_1",
        json!({
            "brute_force": ideal_variance(1.0, config.n)?.value,
            "sinh_inverse_rate": sinh_closed_form(1.0),
        }),
    );
    Ok(out)
}

fn variance_3d(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let records = localization_records(config)?;
    let mut t = Table::new(
        "variance_3d",
        &["re_E", "im_E", "variance", "rate", "flagged", "seam_flag"],
    );
    for r in &records {
        t.push(vec![
            Cell::Real(r.eigenvalue.re),
            Cell::Real(r.eigenvalue.im),
            Cell::Real(r.variance),
            Cell::opt(r.rate),
            Cell::Flag(r.flagged),
            Cell::Flag(r.seam_flag),
        ]);
    }
    out.tables.push(t);
    out.note("xi", json!(config.xi[0]));
    Ok(out)
}

fn hole_vs_xi(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let spectra = undeformed_spectra(config, &mut out);
    if spectra.is_empty() {
        return Err(Error::EmptyInput);
    }
    let smoothed = smooth(
        &pooled_profile(&spectra, config.bins, config.r_max)?,
        config.smooth_window,
    )?;
    let curve = LyapunovCurve::from_profile(&smoothed, &edge_grid(config), UNIT_DISK_MEAN_LOG_B)?;
    let deformed = deformed_spectra(config, &config.unit_disk());
    let mut t = Table::new(
        "hole_vs_xi",
        &["xi", "predicted_radius", "min_abs_E_mean", "min_abs_E_lowest", "samples_used"],
    );
    for (&xi, per) in config.xi.iter().zip(deformed) {
        let mut minima = Vec::new();
        for (i, r) in per.into_iter().enumerate() {
            match r {
                Ok(eigs) => minima.push(eigs.iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min)),
                Err(e) => out.fail(i, Some(xi), &e),
            }
        }
        let predicted = hole_radius(&curve, xi)?.radius;
        let mean = (!minima.is_empty()).then(|| minima.iter().sum::<f64>() / minima.len() as f64);
        let lowest = minima.iter().copied().reduce(f64::min);
        t.push(vec![
            Cell::Real(xi),
            Cell::opt(predicted),
            Cell::opt(mean),
            Cell::opt(lowest),
            Cell::Int(minima.len() as i64),
        ]);
    }
    out.tables.push(t);
    out.note("gamma_at_zero", json!(curve.gamma_at(0.0)));
    Ok(out)
}

/// One random duality configuration: sample, energy and deformation.
pub struct DualityCase {
    pub sample: MatrixSample,
    pub energy: Complex64,
    pub deformation: Deformation,
}

/// Configuration `index` of size `n`: `|E| ≤ 2.5` uniform over the disk,
/// `xi ∈ [0, 1]`, `phi ∈ [0, 2π)`.
pub fn duality_case(seed: u64, n: usize, index: usize, count: usize) -> Result<DualityCase> {
    let sample = sample_matrix(&EnsembleSpec::unit_disk(n, count, seed), index)?;
    let mut rng = param_rng(seed, (n as u64) << 32 | index as u64);
    let energy = 2.5 * sample_unit_disk(&mut rng);
    let deformation = Deformation::new(rng.random::<f64>(), TAU * rng.random::<f64>())?;
    Ok(DualityCase {
        sample,
        energy,
        deformation,
    })
}

fn duality_check(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let sizes: Vec<usize> = (3..=config.n).collect();
    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&n| (0..config.samples).map(move |j| (n, j)))
        .collect();
    let results = per_sample(jobs.len(), |k| {
        let (n, j) = jobs[k];
        let case = duality_case(config.seed, n, j, config.samples)?;
        let dual = duality_det(&case.sample, case.energy, &case.deformation)?;
        let dense = determinant(&build_balanced(&case.sample, &case.deformation), case.energy)?;
        Ok::<_, Error>((case, dual, dense))
    });
    let mut t = Table::new(
        "duality",
        &[
            "n",
            "re_E",
            "im_E",
            "xi",
            "phi",
            "log_magnitude_duality",
            "log_magnitude_dense",
            "relative_difference",
            "reduced_precision",
        ],
    );
    let mut worst = 0.0f64;
    for ((n, j), r) in jobs.iter().zip(results) {
        match r {
            Ok((case, dual, dense)) => {
                let rel = dual.value.relative_difference(&dense);
                worst = worst.max(rel);
                t.push(vec![
                    Cell::Int(*n as i64),
                    Cell::Real(case.energy.re),
                    Cell::Real(case.energy.im),
                    Cell::Real(case.deformation.xi()),
                    Cell::Real(case.deformation.phi()),
                    Cell::Real(dual.log_magnitude()),
                    Cell::Real(dense.log_magnitude),
                    Cell::Real(rel),
                    Cell::Flag(dual.reduced_precision()),
                ]);
            }
            Err(e) => out.fail(*j, None, &e),
        }
    }
    out.tables.push(t);
    out.note("max_relative_difference", json!(worst));
    Ok(out)
}

/// One random winding configuration: radius uniform in `[0.1, 2.2]`, phase
/// uniform, `xi` cycled through `xis`.
pub fn winding_case(
    seed: u64,
    n: usize,
    index: usize,
    count: usize,
    xis: &[f64],
) -> Result<(MatrixSample, Deformation, f64)> {
    let sample = sample_matrix(&EnsembleSpec::unit_disk(n, count, seed), index)?;
    let mut rng = param_rng(seed ^ 0xa5a5, index as u64);
    let d = Deformation::new(xis[index % xis.len()], TAU * rng.random::<f64>())?;
    let radius = 0.1 + 2.1 * rng.random::<f64>();
    Ok((sample, d, radius))
}

fn winding_check(config: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let results = per_sample(config.samples, |j| {
        let (s, d, r) = winding_case(config.seed, config.n, j, config.samples, &config.xi)?;
        let report = winding_number(&s, &d, r, 8 * config.n)?;
        let eigs = eigenvalues(&build_balanced(&s, &d))?;
        let inside = eigs.iter().filter(|e| e.norm() < report.radius).count();
        Ok::<_, Error>((d.xi(), report, inside))
    });
    let mut t = Table::new("winding", &["radius", "winding", "eig_count_inside"]);
    let mut mismatches = 0;
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok((_, report, inside)) => {
                if report.winding != inside as i64 {
                    mismatches += 1;
                }
                t.push(vec![
                    Cell::Real(report.radius),
                    Cell::Int(report.winding),
                    Cell::Int(inside as i64),
                ]);
            }
            Err(e) => out.fail(j, None, &e),
        }
    }
    out.tables.push(t);
    out.note("mismatches", json!(mismatches));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn zero_sweep_has_zero_displacement() {
        let step = vec![c(0.0, 0.0), c(1.0, 0.5), c(-0.3, 2.0)];
        let traj = trajectory_continuation(&[step.clone(), step.clone()]).unwrap();
        assert!(traj.total_displacement.iter().all(|d| *d == 0.0));
        assert!(traj.split.iter().all(|s| !s));
        for l in 0..3 {
            assert_eq!(traj.start(l), traj.end(l));
        }
    }

    #[test]
    fn continuation_follows_rotating_points() {
        let n = 6;
        let steps: Vec<Vec<Complex64>> = (0..=8)
            .map(|k| {
                let shift = TAU / n as f64 * k as f64 / 8.0;
                let mut v: Vec<Complex64> = (0..n)
                    .map(|j| Complex64::from_polar(1.0, TAU * j as f64 / n as f64 + shift))
                    .collect();
                v.push(c(3.0, 0.0));
                v.reverse();
                v
            })
            .collect();
        let traj = trajectory_continuation(&steps).unwrap();
        for l in 0..traj.labels() {
            if traj.start(l) == c(3.0, 0.0) {
                assert_eq!(traj.total_displacement[l], 0.0);
                continue;
            }
            let others = (0..traj.labels())
                .filter(|&m| m != l)
                .map(|m| (traj.end(l) - traj.start(m)).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(others < 1e-12);
            assert!(!traj.split[l]);
        }
        assert!(trajectory_continuation(&[]).is_err());
        assert!(trajectory_continuation(&[vec![c(0.0, 0.0)], vec![]]).is_err());
    }

    #[test]
    fn ambiguous_step_is_flagged() {
        let traj = trajectory_continuation(&[vec![c(0.0, 0.0), c(5.0, 0.0)], vec![c(1.0, 0.0), c(-1.05, 0.0)]])
            .unwrap();
        assert!(traj.split[0]);
    }

    #[test]
    fn sweep_phases_cover_the_span() {
        let p = sweep_phases(0.1, 100, 1.0, 16);
        assert_eq!(p.len(), 17);
        assert_eq!(p[0], 0.1);
        assert!((p[16] - 0.1 - TAU / 100.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Spectrum, "/tmp/x");
        assert!(cfg.validate().is_ok());
        cfg.n = 2;
        assert!(cfg.validate().is_err());
        cfg.n = 10;
        cfg.xi.clear();
        assert!(cfg.validate().is_err());
        cfg.xi = vec![0.0];
        cfg.smooth_window = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn small_runs_write_declared_schemas() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Density, dir.path());
        cfg.n = 40;
        cfg.samples = 3;
        cfg.bins = 30;
        let report = run(&cfg, 2).unwrap();
        assert_eq!(report.failures, 0);
        let text = fs::read_to_string(dir.path().join("density.csv")).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "r_lo,r_hi,count,density,density_smoothed,n0"
        );
        assert_eq!(text.lines().count(), 31);
        let meta: Value =
            serde_json::from_str(&fs::read_to_string(report.metadata).unwrap()).unwrap();
        assert_eq!(meta["config"]["n"], json!(40));
        assert_eq!(meta["config"]["experiment"], json!("density"));
    }
}
