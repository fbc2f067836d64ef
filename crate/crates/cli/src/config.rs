//! Run configuration: a TOML file with one section per command, plus flag overrides.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use qrm_core::hilbert::{HilbertSpace, SystemParams};
use serde::{Deserialize, Serialize};

/// Validation failure naming the offending key.
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration `{}`: {}", self.key, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cutoff {
    Fixed(usize),
    Named(String),
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff::Named("auto".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    pub omega0: f64,
    #[serde(rename = "Omega")]
    pub omega: f64,
    /// λ / √(ω₀Ω/2).
    pub lambda_ratio: f64,
    pub kappa: f64,
    pub gamma: f64,
    /// `"auto"` or an integer.
    pub fock_cutoff: Cutoff,
    /// Largest cutoff the automatic rule may grow to.
    pub max_fock_cutoff: usize,
}

impl Default for ParamsSection {
    fn default() -> Self {
        Self {
            omega0: 1.0,
            omega: 50.0,
            lambda_ratio: 1.4,
            kappa: 0.5,
            gamma: 0.05,
            fock_cutoff: Cutoff::default(),
            max_fock_cutoff: 600,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapSection {
    pub k: usize,
    pub ratio_threshold: f64,
    pub method: String,
}

impl Default for GapSection {
    fn default() -> Self {
        Self {
            k: 6,
            ratio_threshold: 0.2,
            method: "auto".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub k: usize,
    pub method: String,
    /// Also write the right eigenvectors ρᵢ as CSV matrices.
    pub write_states: bool,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            k: 8,
            method: "auto".into(),
            write_states: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QfuncSection {
    pub points: usize,
    /// Half width of the square grid; automatic when absent.
    pub half_width: Option<f64>,
    pub peak_threshold: f64,
    /// Floor of the log10-scaled export.
    pub log_floor: f64,
}

impl Default for QfuncSection {
    fn default() -> Self {
        Self {
            points: 201,
            half_width: None,
            peak_threshold: 0.05,
            log_floor: -8.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanfieldSection {
    pub t_max: f64,
    pub rtol: f64,
    pub samples: usize,
    /// Radius of the normal-phase quench.
    pub r: f64,
    pub thetas: Vec<f64>,
    /// `"np"`, `"smp"` or `"both"`.
    pub quench: String,
}

impl Default for MeanfieldSection {
    fn default() -> Self {
        Self {
            t_max: 400.0,
            rtol: 1e-9,
            samples: 4001,
            r: 10.0,
            thetas: (1..=6).map(|k| k as f64 * PI / 7.0).collect(),
            quench: "both".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CumulantSection {
    pub order: u32,
    /// `"auto"`, `"np"`, `"plus"` or `"minus"`: the mean-field point used as seed.
    pub branch: String,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CumulantSection {
    fn default() -> Self {
        Self {
            order: 6,
            branch: "auto".into(),
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSection {
    pub rank_tolerance: f64,
    pub cluster_tolerance: f64,
    pub edge_threshold: f64,
    pub grid_points: usize,
    pub peak_threshold: f64,
    pub expected_components: usize,
}

impl Default for PcaSection {
    fn default() -> Self {
        Self {
            rank_tolerance: 1e-6,
            cluster_tolerance: 1e-3,
            edge_threshold: 0.3,
            grid_points: 121,
            peak_threshold: 0.05,
            expected_components: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    /// Automatic when absent.
    pub dt: Option<f64>,
    pub t_max: f64,
    pub record_stride: usize,
    pub trajectories: usize,
    /// `"parity-breaking"` (coherent product state at the ⟨x̂⟩ < 0 fixed point),
    /// `"normal"` (|0,↓⟩) or `"steady-eigenstate"` (dominant localized eigenstate of ρ_s).
    pub initial: String,
    pub peak_path: bool,
    pub grid_points: usize,
    pub peak_threshold: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            dt: None,
            t_max: 100.0,
            record_stride: 50,
            trajectories: 1,
            initial: "parity-breaking".into(),
            peak_path: false,
            grid_points: 81,
            peak_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    /// Ω/ω₀ values.
    pub omega_ratios: Vec<f64>,
    pub gammas: Vec<f64>,
    pub k: usize,
    pub ratio_threshold: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            omega_ratios: vec![20.0, 40.0, 80.0],
            gammas: vec![0.05, 0.0],
            k: 4,
            ratio_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// CSV with a `gamma` column and the fit columns below, usually `scan.csv`.
    pub input: Option<PathBuf>,
    /// Column holding the abscissa: `"ratio"` (ω₀/Ω) or `"gamma"`.
    pub x_column: String,
    pub y_column: String,
    pub zero_threshold_factor: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            input: None,
            x_column: "ratio".into(),
            y_column: "delta".into(),
            zero_threshold_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
    pub threads: usize,
    pub memory_budget_gib: f64,
    pub params: ParamsSection,
    pub gap: GapSection,
    pub spectrum: SpectrumSection,
    pub qfunc: QfuncSection,
    pub meanfield: MeanfieldSection,
    pub cumulant: CumulantSection,
    pub pca: PcaSection,
    pub trajectory: TrajectorySection,
    pub scan: ScanSection,
    pub fit: FitSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("qrm-out"),
            seed: 7,
            cache_dir: None,
            threads: 1,
            memory_budget_gib: 6.0,
            params: ParamsSection::default(),
            gap: GapSection::default(),
            spectrum: SpectrumSection::default(),
            qfunc: QfuncSection::default(),
            meanfield: MeanfieldSection::default(),
            cumulant: CumulantSection::default(),
            pca: PcaSection::default(),
            trajectory: TrajectorySection::default(),
            scan: ScanSection::default(),
            fit: FitSection::default(),
        }
    }
}

/// Reads `path` (if any), applies `overrides` of the form `section.key=value` and
/// deserializes. Override values are parsed as TOML and fall back to strings.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| err("config", format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| err("config", format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| err(o, "overrides take the form key=value"))?;
        let key = key.trim();
        let value = parse_value(value.trim());
        set_path(&mut table, key, value).map_err(|r| err(key, r))?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| err(&error_key(&e), e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    // unknown-field messages name the field in backticks
    msg.split('`').nth(1).map(str::to_string).unwrap_or_else(|| "config".into())
}

fn parse_value(s: &str) -> toml::Value {
    let probe = format!("v = {s}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(s.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), String> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().ok_or("empty key")?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("`{p}` is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(err(key, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(err(key, format!("must be non-negative and finite, got {v}")))
    }
}

fn method_ok(key: &str, m: &str) -> Result<(), ConfigError> {
    match m {
        "auto" | "dense" | "shift-invert" => Ok(()),
        _ => Err(err(key, format!("expected auto, dense or shift-invert, got {m:?}"))),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.params;
        positive("params.omega0", p.omega0)?;
        positive("params.Omega", p.omega)?;
        non_negative("params.lambda_ratio", p.lambda_ratio)?;
        non_negative("params.kappa", p.kappa)?;
        non_negative("params.gamma", p.gamma)?;
        match &p.fock_cutoff {
            Cutoff::Fixed(n) if *n < 2 => return Err(err("params.fock_cutoff", "must be ≥ 2")),
            Cutoff::Named(s) if s != "auto" => return Err(err("params.fock_cutoff", format!("expected \"auto\" or an integer, got {s:?}"))),
            _ => {}
        }
        if p.max_fock_cutoff < 2 {
            return Err(err("params.max_fock_cutoff", "must be ≥ 2"));
        }
        if self.threads == 0 {
            return Err(err("threads", "must be ≥ 1"));
        }
        positive("memory_budget_gib", self.memory_budget_gib)?;
        if self.gap.k < 3 {
            return Err(err("gap.k", "must be ≥ 3"));
        }
        positive("gap.ratio_threshold", self.gap.ratio_threshold)?;
        method_ok("gap.method", &self.gap.method)?;
        if self.spectrum.k < 2 {
            return Err(err("spectrum.k", "must be ≥ 2"));
        }
        method_ok("spectrum.method", &self.spectrum.method)?;
        if self.qfunc.points < 3 {
            return Err(err("qfunc.points", "must be ≥ 3"));
        }
        if let Some(h) = self.qfunc.half_width {
            positive("qfunc.half_width", h)?;
        }
        let t = self.qfunc.peak_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(err("qfunc.peak_threshold", "must lie in (0, 1)"));
        }
        positive("meanfield.t_max", self.meanfield.t_max)?;
        positive("meanfield.rtol", self.meanfield.rtol)?;
        if self.meanfield.samples < 2 {
            return Err(err("meanfield.samples", "must be ≥ 2"));
        }
        non_negative("meanfield.r", self.meanfield.r)?;
        if !matches!(self.meanfield.quench.as_str(), "np" | "smp" | "both") {
            return Err(err("meanfield.quench", "expected np, smp or both"));
        }
        if !(1..=6).contains(&self.cumulant.order) {
            return Err(err("cumulant.order", "supported orders are 1..=6"));
        }
        if !matches!(self.cumulant.branch.as_str(), "auto" | "np" | "plus" | "minus") {
            return Err(err("cumulant.branch", "expected auto, np, plus or minus"));
        }
        positive("cumulant.tol", self.cumulant.tol)?;
        positive("pca.rank_tolerance", self.pca.rank_tolerance)?;
        non_negative("pca.cluster_tolerance", self.pca.cluster_tolerance)?;
        let e = self.pca.edge_threshold;
        if !(0.0..1.0).contains(&e) {
            return Err(err("pca.edge_threshold", "must lie in [0, 1)"));
        }
        if self.pca.grid_points < 3 {
            return Err(err("pca.grid_points", "must be ≥ 3"));
        }
        if let Some(dt) = self.trajectory.dt {
            positive("trajectory.dt", dt)?;
        }
        positive("trajectory.t_max", self.trajectory.t_max)?;
        if self.trajectory.record_stride == 0 {
            return Err(err("trajectory.record_stride", "must be ≥ 1"));
        }
        if self.trajectory.trajectories == 0 {
            return Err(err("trajectory.trajectories", "must be ≥ 1"));
        }
        if !matches!(self.trajectory.initial.as_str(), "parity-breaking" | "normal" | "steady-eigenstate") {
            return Err(err("trajectory.initial", "expected parity-breaking, normal or steady-eigenstate"));
        }
        if self.scan.omega_ratios.is_empty() || self.scan.omega_ratios.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
            return Err(err("scan.omega_ratios", "must be a non-empty list of positive numbers"));
        }
        if self.scan.gammas.is_empty() || self.scan.gammas.iter().any(|&g| !(g.is_finite() && g >= 0.0)) {
            return Err(err("scan.gammas", "must be a non-empty list of non-negative numbers"));
        }
        if self.scan.k < 3 {
            return Err(err("scan.k", "must be ≥ 3"));
        }
        positive("fit.zero_threshold_factor", self.fit.zero_threshold_factor)?;
        self.system_params()?;
        Ok(())
    }

    pub fn system_params(&self) -> Result<SystemParams, ConfigError> {
        let p = &self.params;
        SystemParams::with_lambda_ratio(p.omega0, p.omega, p.lambda_ratio, p.kappa, p.gamma).map_err(|e| err("params", e.to_string()))
    }

    pub fn fixed_space(&self) -> Option<HilbertSpace> {
        match self.params.fock_cutoff {
            Cutoff::Fixed(n) => HilbertSpace::new(n).ok(),
            Cutoff::Named(_) => None,
        }
    }

    pub fn memory_budget(&self) -> usize {
        (self.memory_budget_gib * (1u64 << 30) as f64) as usize
    }
}
