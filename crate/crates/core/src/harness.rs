//! Experiment configuration, run orchestration and output bundles.
//!
//! Every run writes into a fresh directory: CSV series, a `schema.json`
//! describing their columns, and a `manifest.json` echoing the resolved
//! configuration. The manifest's `content_hash` covers the configuration and
//! every output byte, so two runs of the same configuration and seed produce
//! the same hash.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{fmt_f64, Field, FieldError, Grid};
use crate::noise::{NoiseBasis, NoiseMode};
use crate::pde::{simulate, PdeError, SimConfig, Trajectory};
use crate::peakon::{simulate_peakons, PeakonError, PeakonState};
use crate::peaks::find_peaks;
use crate::slope::{mc_breaking_probability, riccati_mean_bound, SlopeError, SlopeModel, SlopeSDEParams};
use crate::spectrum::{ch_spectrum, emergent_speeds, isospectral_drift, SpectrumError};
use crate::steepening::{
    breaking_time_bound, detect_blowup, refined_breaking_time, slope_record, track, write_records_csv,
    SlopeRecord, SteepeningError,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("output directory {0} already exists and is not empty")]
    OutputExists(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Peakon(#[from] PeakonError),
    #[error(transparent)]
    Slope(#[from] SlopeError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Steepening(#[from] SteepeningError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SimulateCh,
    SimulateSch,
    Peakons,
    SlopeMc,
    Spectrum,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateCh => "simulate-ch",
            Command::SimulateSch => "simulate-sch",
            Command::Peakons => "peakons",
            Command::SlopeMc => "slope-mc",
            Command::Spectrum => "spectrum",
        }
    }
}

// ---------------------------------------------------------------- config

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub length: f64,
    pub n: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { length: 40.0, n: 1024 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_final: f64,
    pub output_stride: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_final: 10.0, output_stride: 100 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakonSpec {
    pub p: f64,
    pub q: f64,
}

/// Initial data. Profiles are centred at `center`, which defaults to `L/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `u = a·exp(−(x − c)²/(2w²))`
    Gaussian { amplitude: f64, width: f64, center: Option<f64> },
    /// `m = u − u_xx = a·exp(−(x − c)²/(2w²))`, so `m > 0` everywhere.
    GaussianMomentum { amplitude: f64, width: f64, center: Option<f64> },
    /// `u = −a(x − c)·exp(−(x − c)²/(2w²))`: slope `−a` at the symmetry point.
    Antisymmetric { amplitude: f64, width: f64, center: Option<f64> },
    /// Peakons sampled with the periodic Green's function.
    PeakonList { peakons: Vec<PeakonSpec> },
    /// Velocity samples, `x,value` CSV or raw little-endian doubles.
    SampledFile { path: PathBuf },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Gaussian { amplitude: 1.0, width: 1.0, center: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModeConfig {
    Constant { c: f64 },
    Exponential { c: f64, a: f64, b: f64 },
    SampledFile { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub modes: Vec<NoiseModeConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    /// A PDE run ends as broken once `sup|u_x|` exceeds this.
    pub blowup_threshold: f64,
    /// Slope level that counts as breaking in the tracked records.
    pub slope_threshold: f64,
    /// Repeat deterministic runs at `dt/2` and accept a breaking time only if both agree.
    pub refine: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self { blowup_threshold: crate::pde::DEFAULT_BLOWUP_THRESHOLD, slope_threshold: -50.0, refine: false }
    }
}

/// Slope Monte-Carlo settings. `s0`, `m` and `xi_norm` default to the values
/// measured on the initial condition and the constant noise modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_paths: usize,
    pub eps: f64,
    pub model: SlopeModel,
    pub s0: Option<f64>,
    pub m: Option<f64>,
    pub xi_norm: Option<f64>,
    pub threshold: f64,
    pub record_stride: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100,
            eps: 0.1,
            model: SlopeModel::Comparison,
            s0: None,
            m: None,
            xi_norm: None,
            threshold: -1e6,
            record_stride: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub k_max: usize,
    /// Peaks followed for the speed comparison; 0 skips it.
    pub n_peaks: usize,
    /// Number of final snapshots used for the speed fit.
    pub window: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { k_max: 3, n_peaks: 0, window: 10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub time: TimeConfig,
    pub initial_condition: InitialCondition,
    pub noise: NoiseConfig,
    pub tracking: TrackingConfig,
    pub mc: McConfig,
    pub spectrum: SpectrumConfig,
    pub seed: u64,
}

fn positive(errs: &mut Vec<String>, name: &str, v: f64) {
    if !(v.is_finite() && v > 0.0) {
        errs.push(format!("{name} must be positive and finite (got {v})"));
    }
}

fn finite(errs: &mut Vec<String>, name: &str, v: f64) {
    if !v.is_finite() {
        errs.push(format!("{name} must be finite (got {v})"));
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads a configuration file, or the configuration echoed in a manifest.
    pub fn load(path: &Path) -> Result<(Self, Option<Command>), HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let json_err = |source| HarnessError::Json { path: path.to_path_buf(), source };
        let value: Value = serde_json::from_str(&text).map_err(json_err)?;
        if value.get("manifest_version").is_some() {
            let m: Manifest = serde_json::from_value(value).map_err(json_err)?;
            return Ok((m.config, Some(m.command)));
        }
        Ok((serde_json::from_value(value).map_err(json_err)?, None))
    }

    /// Every problem with the configuration that does not need the files it names.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut errs = Vec::new();
        let d = &self.domain;
        if d.n < 16 || !d.n.is_power_of_two() {
            errs.push(format!("domain.n must be a power of two of at least 16 (got {})", d.n));
        }
        positive(&mut errs, "domain.length", d.length);
        positive(&mut errs, "time.dt", self.time.dt);
        positive(&mut errs, "time.t_final", self.time.t_final);
        if self.time.output_stride == 0 {
            errs.push("time.output_stride must be at least 1".into());
        }
        match &self.initial_condition {
            InitialCondition::Gaussian { amplitude, width, center }
            | InitialCondition::GaussianMomentum { amplitude, width, center }
            | InitialCondition::Antisymmetric { amplitude, width, center } => {
                finite(&mut errs, "initial_condition.amplitude", *amplitude);
                positive(&mut errs, "initial_condition.width", *width);
                if let Some(c) = center {
                    finite(&mut errs, "initial_condition.center", *c);
                }
            }
            InitialCondition::PeakonList { peakons } => {
                if peakons.is_empty() {
                    errs.push("initial_condition.peakons must not be empty".into());
                }
                for (i, pk) in peakons.iter().enumerate() {
                    finite(&mut errs, &format!("initial_condition.peakons[{i}].p"), pk.p);
                    finite(&mut errs, &format!("initial_condition.peakons[{i}].q"), pk.q);
                }
            }
            InitialCondition::SampledFile { .. } => {}
        }
        if self.noise.enabled && self.noise.modes.is_empty() {
            errs.push("noise.modes must not be empty when noise.enabled is true".into());
        }
        for (i, m) in self.noise.modes.iter().enumerate() {
            match m {
                NoiseModeConfig::Constant { c } => finite(&mut errs, &format!("noise.modes[{i}].c"), *c),
                NoiseModeConfig::Exponential { c, a, b } => {
                    for (k, v) in [("c", c), ("a", a), ("b", b)] {
                        finite(&mut errs, &format!("noise.modes[{i}].{k}"), *v);
                    }
                }
                NoiseModeConfig::SampledFile { .. } => {}
            }
        }
        positive(&mut errs, "tracking.blowup_threshold", self.tracking.blowup_threshold);
        if !(self.tracking.slope_threshold < 0.0) {
            errs.push(format!("tracking.slope_threshold must be negative (got {})", self.tracking.slope_threshold));
        }
        if self.mc.n_paths == 0 {
            errs.push("mc.n_paths must be at least 1".into());
        }
        if !(self.mc.eps > 0.0 && self.mc.eps < 1.0 / 3.0) {
            errs.push(format!("mc.eps must lie in (0, 1/3) (got {})", self.mc.eps));
        }
        if self.mc.record_stride == 0 {
            errs.push("mc.record_stride must be at least 1".into());
        }
        if self.spectrum.k_max == 0 {
            errs.push("spectrum.k_max must be at least 1".into());
        }
        if self.spectrum.n_peaks > 0 && self.spectrum.window < 2 {
            errs.push("spectrum.window must be at least 2".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(errs))
        }
    }

    pub fn grid(&self) -> Result<Grid, HarnessError> {
        Ok(Grid::new(self.domain.n, self.domain.length)?)
    }

    /// Initial velocity on the configured grid.
    pub fn initial_field(&self, grid: &Grid) -> Result<Field, HarnessError> {
        let centre = |c: &Option<f64>| c.unwrap_or(0.5 * grid.length());
        let bump = |a: f64, w: f64, c: f64| move |x: f64| a * (-(x - c).powi(2) / (2.0 * w * w)).exp();
        Ok(match &self.initial_condition {
            InitialCondition::Gaussian { amplitude, width, center } => {
                Field::from_fn(grid, bump(*amplitude, *width, centre(center)))?
            }
            InitialCondition::GaussianMomentum { amplitude, width, center } => {
                Field::from_fn(grid, bump(*amplitude, *width, centre(center)))?.helmholtz_invert()
            }
            InitialCondition::Antisymmetric { amplitude, width, center } => {
                let c = centre(center);
                let g = bump(*amplitude, *width, c);
                Field::from_fn(grid, |x| -(x - c) * g(x))?
            }
            InitialCondition::PeakonList { .. } => self.peakon_state()?.to_field(grid)?,
            InitialCondition::SampledFile { path } => Field::load(grid, path)?,
        })
    }

    pub fn peakon_state(&self) -> Result<PeakonState, HarnessError> {
        match &self.initial_condition {
            InitialCondition::PeakonList { peakons } => Ok(PeakonState::new(
                peakons.iter().map(|p| p.q).collect(),
                peakons.iter().map(|p| p.p).collect(),
            )?),
            _ => Err(HarnessError::Config(vec![
                "initial_condition must be peakon_list for a peakon run".into()
            ])),
        }
    }

    /// The noise modes, or none when noise is disabled.
    pub fn noise_modes(&self, grid: &Grid) -> Result<Vec<NoiseMode>, HarnessError> {
        if !self.noise.enabled {
            return Ok(Vec::new());
        }
        self.noise
            .modes
            .iter()
            .map(|m| {
                Ok(match m {
                    NoiseModeConfig::Constant { c } => NoiseMode::Constant { c: *c },
                    NoiseModeConfig::Exponential { c, a, b } => NoiseMode::Exponential { c: *c, a: *a, b: *b },
                    NoiseModeConfig::SampledFile { path } => NoiseMode::Sampled(Field::load(grid, path)?),
                })
            })
            .collect()
    }

    pub fn sim_config(&self) -> Result<SimConfig, HarnessError> {
        let grid = self.grid()?;
        let u0 = self.initial_field(&grid)?;
        let basis = NoiseBasis::new(&grid, self.noise_modes(&grid)?)?;
        let mut cfg = SimConfig::deterministic(u0, self.time.dt, self.time.t_final, self.time.output_stride)
            .with_noise(basis);
        cfg.blowup_threshold = self.tracking.blowup_threshold;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Slope SDE parameters, measuring what the configuration leaves open.
    pub fn slope_params(&self) -> Result<SlopeSDEParams, HarnessError> {
        let mc = &self.mc;
        let (s0, m) = match (mc.s0, mc.m) {
            (Some(s0), Some(m)) => (s0, m),
            _ => {
                let grid = self.grid()?;
                let u0 = self.initial_field(&grid)?.dealiased();
                let s0 = match mc.s0 {
                    Some(s) => s,
                    None => slope_record(&u0, 0.0, None)?.s,
                };
                (s0, mc.m.unwrap_or_else(|| u0.steepening_constant()))
            }
        };
        let xi_norm = match mc.xi_norm {
            Some(x) => x,
            None => {
                let mut sq = 0.0;
                for (i, mode) in self.noise.modes.iter().enumerate().filter(|_| self.noise.enabled) {
                    match mode {
                        NoiseModeConfig::Constant { c } => sq += c * c,
                        _ => {
                            return Err(HarnessError::Config(vec![format!(
                                "noise.modes[{i}] is not constant; set mc.xi_norm explicitly"
                            )]))
                        }
                    }
                }
                sq.sqrt()
            }
        };
        let p = SlopeSDEParams {
            s0,
            m,
            xi_norm,
            eps: mc.eps,
            dt: self.time.dt,
            t_final: self.time.t_final,
            threshold: mc.threshold,
        };
        p.validate()?;
        Ok(p)
    }
}

// ---------------------------------------------------------------- output

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: Command,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub package: String,
    pub version: String,
    pub wall_time_s: f64,
    /// Sorted by name.
    pub files: Vec<FileEntry>,
    /// SHA-256 over the canonical config JSON and every file's name and bytes.
    pub content_hash: String,
}

/// `<command>-<seed>-<12 hex digits of the config hash>`, a stable directory name for a run.
pub fn default_run_name(command: Command, config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(serde_json::to_vec(config).expect("serializable config"));
    format!("{}-{}-{}", command.name(), config.seed, &hex(&digest)[..12])
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Files of a run, collected in memory and written only once complete.
#[derive(Default)]
pub struct Bundle {
    files: BTreeMap<String, Vec<u8>>,
    schema: BTreeMap<String, Value>,
}

impl Bundle {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    fn csv(
        &mut self,
        name: &str,
        description: &str,
        columns: &[&str],
        write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) {
        let mut buf = Vec::new();
        write(&mut buf).expect("writing to memory");
        self.add(name, buf);
        self.schema.insert(name.to_string(), json!({ "description": description, "columns": columns }));
    }

    fn json(&mut self, name: &str, description: &str, value: &impl Serialize) {
        let mut buf = serde_json::to_vec_pretty(value).expect("serializable output");
        buf.push(b'\n');
        self.add(name, buf);
        self.schema.insert(name.to_string(), json!({ "description": description }));
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }
}

fn write_pairs(w: &mut Vec<u8>, header: &str, rows: impl Iterator<Item = (f64, f64)>) -> std::io::Result<()> {
    writeln!(w, "{header}")?;
    for (a, b) in rows {
        writeln!(w, "{},{}", fmt_f64(a), fmt_f64(b))?;
    }
    Ok(())
}

/// Writes the bundle, schema and manifest into `out`, which must not exist or be empty.
/// Files go to a sibling staging directory first, so a failed write leaves no partial run.
pub fn write_bundle(
    out: &Path,
    command: Command,
    config: &ExperimentConfig,
    mut bundle: Bundle,
    wall_time_s: f64,
) -> Result<Manifest, HarnessError> {
    if out.exists() && fs::read_dir(out).map_err(io_err(out))?.next().is_some() {
        return Err(HarnessError::OutputExists(out.to_path_buf()));
    }
    let schema = std::mem::take(&mut bundle.schema);
    bundle.json("schema.json", "columns of every CSV file in this directory", &schema);

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("serializable config"));
    hasher.update(command.name().as_bytes());
    let mut files = Vec::new();
    for (name, bytes) in &bundle.files {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
        files.push(FileEntry { name: name.clone(), sha256: hex(&Sha256::digest(bytes)), bytes: bytes.len() });
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        command,
        config: config.clone(),
        seed: config.seed,
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s,
        files,
        content_hash: hex(&hasher.finalize()),
    };

    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let leaf = out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    let staging = parent.join(format!(".{leaf}.partial-{}", std::process::id()));
    let result = (|| {
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        for (name, bytes) in &bundle.files {
            let path = staging.join(name);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        let path = staging.join("manifest.json");
        let mut text = serde_json::to_vec_pretty(&manifest).expect("serializable manifest");
        text.push(b'\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        if out.exists() {
            fs::remove_dir(out).map_err(io_err(out))?;
        }
        fs::rename(&staging, out).map_err(io_err(out))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result?;
    Ok(manifest)
}

// ---------------------------------------------------------------- runs

fn diagnostics_schema() -> [&'static str; 7] {
    ["t", "h", "norm12", "momentum", "supu", "supux", "broken"]
}

const SLOPE_COLUMNS: [&str; 6] = ["t", "nu", "s", "u_at_nu", "kconv_at_nu", "envelope"];

/// Slope records of a trajectory; empty when there is no inflection to track.
fn tracked(traj: &Trajectory) -> Result<Vec<SlopeRecord>, HarnessError> {
    Ok(track(traj)?)
}

fn peak_counts(traj: &Trajectory) -> Vec<(f64, usize, f64, f64)> {
    traj.times
        .iter()
        .zip(&traj.snapshots)
        .map(|(&t, u)| {
            let sup = u.sup_norm();
            let peaks = find_peaks(u, 0.05 * sup, 0.05 * sup, 5.0 * u.grid().dx());
            let (h, x) = peaks.first().map_or((0.0, 0.0), |p| (p.height, p.x));
            (t, peaks.len(), h, x)
        })
        .collect()
}

fn trajectory_files(bundle: &mut Bundle, prefix: &str, traj: &Trajectory, records: &[SlopeRecord]) {
    bundle.csv(
        &format!("{prefix}diagnostics.csv"),
        "conserved quantities and sup norms per output time; broken is 0 or 1",
        &diagnostics_schema(),
        |w| traj.write_diagnostics_csv(w),
    );
    bundle.csv(
        &format!("{prefix}slope.csv"),
        "inflection point tracking; envelope empty when the bound does not apply",
        &SLOPE_COLUMNS,
        |w| write_records_csv(records, w),
    );
    bundle.csv(&format!("{prefix}final_u.csv"), "velocity at the final time", &["x", "value"], |w| {
        traj.final_state.write_csv(w).map_err(std::io::Error::other)
    });
}

#[derive(Clone, Debug, Serialize)]
struct RunSummary {
    final_time: f64,
    broken: bool,
    blowup_time: Option<f64>,
    hamiltonian_drift: f64,
    norm12_drift: f64,
    momentum_drift: f64,
    steepening_constant: f64,
    s0: Option<f64>,
    breaking_time_bound: Option<f64>,
    detected_breaking_time: Option<f64>,
    refined_breaking_time: Option<f64>,
}

fn summarize(traj: &Trajectory, records: &[SlopeRecord], threshold: f64) -> RunSummary {
    let s0 = records.first().map(|r| r.s);
    let m = traj.steepening_constant();
    RunSummary {
        final_time: traj.final_time,
        broken: traj.is_broken(),
        blowup_time: traj.blowup.map(|b| b.time),
        hamiltonian_drift: traj.relative_drift(|d| d.hamiltonian),
        norm12_drift: traj.relative_drift(|d| d.norm_12),
        momentum_drift: traj.relative_drift(|d| d.momentum),
        steepening_constant: m,
        s0,
        breaking_time_bound: s0.and_then(|s| breaking_time_bound(s, m).ok()),
        detected_breaking_time: detect_blowup(records, threshold),
        refined_breaking_time: None,
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T, HarnessError>) -> Result<(T, f64), HarnessError> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64()))
}

/// Builds the bundle for `command` without touching the filesystem.
pub fn build(command: Command, config: &ExperimentConfig) -> Result<Bundle, HarnessError> {
    config.validate()?;
    match command {
        Command::SimulateCh => bundle_ch(config),
        Command::SimulateSch => bundle_sch(config),
        Command::Peakons => bundle_peakons(config),
        Command::SlopeMc => bundle_slope_mc(config),
        Command::Spectrum => bundle_spectrum(config),
    }
}

/// Runs `command` and writes its bundle to `out`.
pub fn run(command: Command, config: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    let (bundle, wall) = timed(|| build(command, config))?;
    write_bundle(out, command, config, bundle, wall)
}

pub fn run_ch(config: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    run(Command::SimulateCh, config, out)
}

pub fn run_sch(config: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    run(Command::SimulateSch, config, out)
}

pub fn run_peakons(config: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    run(Command::Peakons, config, out)
}

pub fn run_slope_mc(config: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    run(Command::SlopeMc, config, out)
}

pub fn run_spectrum(config: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    run(Command::Spectrum, config, out)
}

fn bundle_ch(config: &ExperimentConfig) -> Result<Bundle, HarnessError> {
    let mut cfg = config.sim_config()?;
    cfg.basis = NoiseBasis::empty(cfg.initial.grid());
    let traj = simulate(&cfg, config.seed, 0)?;
    let records = tracked(&traj)?;
    let mut summary = summarize(&traj, &records, config.tracking.slope_threshold);
    if config.tracking.refine {
        let mut fine = cfg.clone();
        fine.dt *= 0.5;
        fine.output_stride *= 2;
        let ftraj = simulate(&fine, config.seed, 0)?;
        let frec = tracked(&ftraj)?;
        summary.refined_breaking_time = refined_breaking_time(
            summary.detected_breaking_time,
            detect_blowup(&frec, config.tracking.slope_threshold),
            cfg.dt,
        );
    }

    let mut bundle = Bundle::default();
    trajectory_files(&mut bundle, "", &traj, &records);
    let counts = peak_counts(&traj);
    bundle.csv(
        "peaks.csv",
        "number of separated maxima per output time, with the tallest one",
        &["t", "count", "tallest_height", "tallest_x"],
        |w| {
            writeln!(w, "t,count,tallest_height,tallest_x")?;
            for (t, c, h, x) in &counts {
                writeln!(w, "{},{},{},{}", fmt_f64(*t), c, fmt_f64(*h), fmt_f64(*x))?;
            }
            Ok(())
        },
    );
    bundle.csv("plot_hamiltonian.csv", "plot data", &["t", "h"], |w| {
        write_pairs(w, "t,h", traj.diagnostics.iter().map(|d| (d.t, d.hamiltonian)))
    });
    bundle.csv("plot_slope.csv", "plot data", &["t", "s"], |w| {
        write_pairs(w, "t,s", records.iter().map(|r| (r.t, r.s)))
    });
    bundle.json("summary.json", "drifts, blow-up and breaking times", &summary);
    Ok(bundle)
}

fn bundle_sch(config: &ExperimentConfig) -> Result<Bundle, HarnessError> {
    let cfg = config.sim_config()?;
    let n_paths = config.mc.n_paths;
    let runs = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| -> Result<_, HarnessError> {
            let traj = simulate(&cfg, config.seed, path)?;
            let records = tracked(&traj)?;
            let summary = summarize(&traj, &records, config.tracking.slope_threshold);
            Ok((traj, records, summary))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut bundle = Bundle::default();
    for (path, (traj, records, _)) in runs.iter().enumerate() {
        trajectory_files(&mut bundle, &format!("path_{path:04}/"), traj, records);
    }
    bundle.csv(
        "paths.csv",
        "one row per path: pathwise drifts and breaking outcome",
        &["path", "seed", "final_time", "broken", "h_drift", "norm12_drift", "steepening_constant"],
        |w| {
            writeln!(w, "path,seed,final_time,broken,h_drift,norm12_drift,steepening_constant")?;
            for (path, (_, _, s)) in runs.iter().enumerate() {
                writeln!(
                    w,
                    "{path},{},{},{},{},{},{}",
                    config.seed,
                    fmt_f64(s.final_time),
                    u8::from(s.broken),
                    fmt_f64(s.hamiltonian_drift),
                    fmt_f64(s.norm12_drift),
                    fmt_f64(s.steepening_constant)
                )?;
            }
            Ok(())
        },
    );
    let summaries: Vec<&RunSummary> = runs.iter().map(|r| &r.2).collect();
    bundle.json("summary.json", "per-path drifts, blow-up and breaking times", &summaries);
    Ok(bundle)
}

fn bundle_peakons(config: &ExperimentConfig) -> Result<Bundle, HarnessError> {
    let state = config.peakon_state()?;
    let grid = config.grid()?;
    let modes = config.noise_modes(&grid)?;
    if modes.iter().any(|m| matches!(m, NoiseMode::Sampled(_))) {
        return Err(HarnessError::Config(vec!["noise.modes: sampled modes are periodic; peakons live on the line".into()]));
    }
    let mut bundle = Bundle::default();
    let runs = if modes.is_empty() { 1 } else { config.mc.n_paths };
    for path in 0..runs as u64 {
        let traj = simulate_peakons(
            &state,
            config.time.dt,
            config.time.t_final,
            config.time.output_stride,
            &modes,
            config.seed,
            path,
        )?;
        let prefix = if modes.is_empty() { String::new() } else { format!("path_{path:04}/") };
        let m = state.len();
        let mut columns = vec!["t".to_string()];
        columns.extend((1..=m).map(|a| format!("q{a}")));
        columns.extend((1..=m).map(|a| format!("p{a}")));
        columns.push("h".into());
        let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
        bundle.csv(&format!("{prefix}peakons.csv"), "peakon positions, momenta and Hamiltonian", &columns, |w| {
            traj.write_csv(w)
        });
        bundle.csv(&format!("{prefix}plot_hamiltonian.csv"), "plot data", &["t", "h"], |w| {
            write_pairs(w, "t,h", traj.times.iter().zip(&traj.states).map(|(t, s)| (*t, s.hamiltonian())))
        });
    }
    Ok(bundle)
}

#[derive(Serialize)]
struct McReport<'a> {
    model: SlopeModel,
    params: SlopeSDEParams,
    master_seed: u64,
    n_paths: usize,
    n_broken: usize,
    p_hat: f64,
    wilson_low: f64,
    wilson_high: f64,
    riccati_blowup_time: Option<f64>,
    config: &'a ExperimentConfig,
}

fn bundle_slope_mc(config: &ExperimentConfig) -> Result<Bundle, HarnessError> {
    let params = config.slope_params()?;
    let summary = mc_breaking_probability(config.mc.model, &params, config.mc.n_paths, config.seed, config.mc.record_stride)?;
    let mut bundle = Bundle::default();
    bundle.csv("paths.csv", "per-path outcome; breaking_time empty when unbroken", &["path", "seed", "broken", "breaking_time"], |w| {
        summary.write_paths_csv(w)
    });
    bundle.csv("mean.csv", "mean slope over all paths, broken paths held at the threshold", &["t", "mean", "std_err"], |w| {
        summary.write_mean_csv(w)
    });
    let bound: Vec<(f64, f64)> = summary
        .times
        .iter()
        .filter_map(|&t| riccati_mean_bound(&params, t).ok().map(|b| (t, b)))
        .collect();
    bundle.csv("mean_bound.csv", "upper bound on the mean slope; -inf after its blow-up time", &["t", "bound"], |w| {
        write_pairs(w, "t,bound", bound.iter().copied())
    });
    let report = McReport {
        model: summary.model,
        params,
        master_seed: summary.master_seed,
        n_paths: summary.n_paths,
        n_broken: summary.n_broken,
        p_hat: summary.p_hat,
        wilson_low: summary.wilson_low,
        wilson_high: summary.wilson_high,
        riccati_blowup_time: crate::slope::riccati_blowup_time(&params).ok(),
        config,
    };
    bundle.json("summary.json", "breaking probability estimate with its 95% Wilson interval", &report);
    Ok(bundle)
}

#[derive(Serialize)]
struct SpectrumReport {
    initial: crate::spectrum::SpectrumResult,
    max_drift: f64,
    speeds: Vec<SpeedRow>,
}

#[derive(Clone, Copy, Serialize)]
struct SpeedRow {
    rank: usize,
    eigenvalue: f64,
    height: f64,
    speed: f64,
}

fn bundle_spectrum(config: &ExperimentConfig) -> Result<Bundle, HarnessError> {
    let k = config.spectrum.k_max;
    let cfg = config.sim_config()?;
    let initial = ch_spectrum(&cfg.initial.dealiased().helmholtz_apply(), k)?;
    let traj = simulate(&cfg, config.seed, 0)?;
    let drift = isospectral_drift(&traj.snapshots, k)?;
    let speeds = if config.spectrum.n_peaks > 0 {
        emergent_speeds(&traj.times, &traj.snapshots, config.spectrum.n_peaks, config.spectrum.window)?
            .into_iter()
            .zip(&initial.eigenvalues)
            .enumerate()
            .map(|(rank, (p, l))| SpeedRow { rank: rank + 1, eigenvalue: *l, height: p.height, speed: p.speed })
            .collect()
    } else {
        Vec::new()
    };
    let mut bundle = Bundle::default();
    bundle.csv("drift.csv", "largest relative eigenvalue change since t = 0", &["t", "drift"], |w| {
        write_pairs(w, "t,drift", traj.times.iter().copied().zip(drift.iter().copied()))
    });
    bundle.csv("speeds.csv", "emergent peak speeds against initial eigenvalues, by rank", &["rank", "eigenvalue", "height", "speed"], |w| {
        writeln!(w, "rank,eigenvalue,height,speed")?;
        for r in &speeds {
            writeln!(w, "{},{},{},{}", r.rank, fmt_f64(r.eigenvalue), fmt_f64(r.height), fmt_f64(r.speed))?;
        }
        Ok(())
    });
    let report = SpectrumReport { initial, max_drift: drift.iter().copied().fold(0.0, f64::max), speeds };
    bundle.json("spectrum.json", "initial eigenvalues, drift and speed comparison", &report);
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            domain: DomainConfig { length: 20.0, n: 128 },
            time: TimeConfig { dt: 1e-2, t_final: 0.2, output_stride: 5 },
            ..Default::default()
        }
    }

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"domain": {"lenght": 3}}"#).is_err());
    }

    #[test]
    fn validation_names_every_bad_field() {
        let mut c = small();
        c.domain.n = 100;
        c.time.dt = -1.0;
        c.mc.eps = 0.5;
        c.tracking.slope_threshold = 1.0;
        c.noise.enabled = true;
        let Err(HarnessError::Config(errs)) = c.validate() else { panic!() };
        for name in ["domain.n", "time.dt", "mc.eps", "tracking.slope_threshold", "noise.modes"] {
            assert!(errs.iter().any(|e| e.starts_with(name)), "{name} missing from {errs:?}");
        }
    }

    #[test]
    fn initial_conditions() {
        let c = small();
        let g = c.grid().unwrap();
        let u = c.initial_field(&g).unwrap();
        assert!((u.sup_norm() - 1.0).abs() < 1e-12);
        let anti = ExperimentConfig {
            initial_condition: InitialCondition::Antisymmetric { amplitude: 3.0, width: 1.0, center: None },
            ..small()
        };
        let u = anti.initial_field(&g).unwrap();
        assert!((u.derivative().values()[64] + 3.0).abs() < 1e-6);
        assert!(u.values()[64].abs() < 1e-15);
    }

    #[test]
    fn ch_bundle_lists_its_schema() {
        let b = build(Command::SimulateCh, &small()).unwrap();
        let names: Vec<&str> = b.names().collect();
        for n in ["diagnostics.csv", "slope.csv", "peaks.csv", "summary.json"] {
            assert!(names.contains(&n));
            assert!(b.schema.contains_key(n));
        }
    }
}
