//! Strict JSON experiment configs. Unknown keys are rejected and every
//! error carries a JSON pointer into the config document.

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain_geometry::DomainSpec;
use crate::error::{Error, Result};
use crate::measure_family::{
    family_controls, ControlSet, LawSimulator, ScheduleMode, SdeCoefficients, Spacing,
};
use crate::path_engine::TimeGrid;
use crate::regularity_lab::ControlRule;
use crate::tagged::{locate, tagged_serde};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    ExitStats,
    CheckConditions,
    ExitIdentity,
    MomentBound,
    QcProbe,
    Counterexample,
    PartitionApprox,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::ExitStats => "exit-stats",
            Self::CheckConditions => "check-conditions",
            Self::ExitIdentity => "exit-identity",
            Self::MomentBound => "moment-bound",
            Self::QcProbe => "qc-probe",
            Self::Counterexample => "counterexample",
            Self::PartitionApprox => "partition-approx",
        }
    }
}

fn config_err(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn from_value<T: DeserializeOwned>(v: &Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(v.clone()).map_err(|e| {
        let base = format!("{prefix}{}", crate::tagged::pointer_of(e.path().iter()));
        let (pointer, message) = locate(&base, &e.inner().to_string());
        config_err(pointer, message)
    })
}

/// Parsed and validated config together with the document it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub experiment: Experiment,
    /// Optional top-level `output_dir`; `--out` takes precedence.
    pub output_dir: Option<String>,
    pub raw: Value,
    pub body: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub enum ExperimentConfig {
    Simulate(SimulateConfig),
    ExitStats(ExitStatsConfig),
    CheckConditions(CheckConditionsConfig),
    ExitIdentity(ExitIdentityConfig),
    MomentBound(MomentBoundConfig),
    QcProbe(QcProbeConfig),
    Counterexample(CounterexampleConfig),
    PartitionApprox(PartitionConfig),
}

pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let raw: Value = serde_json::from_str(text).map_err(|e| config_err("", format!("invalid JSON: {e}")))?;
    let obj = raw
        .as_object()
        .ok_or_else(|| config_err("", "config must be a JSON object"))?;
    let tag = obj
        .get("experiment")
        .ok_or_else(|| config_err("/experiment", "missing field `experiment`"))?;
    let experiment: Experiment = from_value(tag, "/experiment")?;
    let output_dir = match obj.get("output_dir") {
        None => None,
        Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
        Some(_) => return Err(config_err("/output_dir", "must be a nonempty string")),
    };
    let mut typed = raw.clone();
    typed.as_object_mut().expect("checked above").remove("output_dir");
    let body = match experiment {
        Experiment::Simulate => ExperimentConfig::Simulate(from_value(&typed, "")?),
        Experiment::ExitStats => ExperimentConfig::ExitStats(from_value(&typed, "")?),
        Experiment::CheckConditions => ExperimentConfig::CheckConditions(from_value(&typed, "")?),
        Experiment::ExitIdentity => ExperimentConfig::ExitIdentity(from_value(&typed, "")?),
        Experiment::MomentBound => ExperimentConfig::MomentBound(from_value(&typed, "")?),
        Experiment::QcProbe => ExperimentConfig::QcProbe(from_value(&typed, "")?),
        Experiment::Counterexample => ExperimentConfig::Counterexample(from_value(&typed, "")?),
        Experiment::PartitionApprox => ExperimentConfig::PartitionApprox(from_value(&typed, "")?),
    };
    body.validate()?;
    Ok(LoadedConfig {
        experiment,
        output_dir,
        raw,
        body,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
}

impl GridConfig {
    pub fn build(&self, at: &str) -> Result<TimeGrid> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(config_err(format!("{at}/horizon"), "horizon must be > 0"));
        }
        match (self.steps, self.dt) {
            (Some(0), _) => Err(config_err(format!("{at}/steps"), "steps must be at least 1")),
            (Some(n), None) => TimeGrid::new(self.horizon, n).map_err(|e| config_err(format!("{at}/steps"), e.to_string())),
            (None, Some(dt)) => TimeGrid::with_dt(self.horizon, dt).map_err(|e| config_err(format!("{at}/dt"), e.to_string())),
            (Some(_), Some(_)) => Err(config_err(format!("{at}/dt"), "give either `steps` or `dt`, not both")),
            (None, None) => Err(config_err(at.to_string(), "one of `steps` or `dt` is required")),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SpacingConfig {
    #[default]
    Linear,
    Geometric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(remote = "Self", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaConfig {
    ScalarInterval {
        lo: f64,
        hi: f64,
        /// Number of grid points in `[lo, hi]`.
        #[serde(rename = "grid")]
        n: usize,
        #[serde(default)]
        spacing: SpacingConfig,
    },
    ScalarVols {
        sigmas: Vec<f64>,
    },
    MatrixList {
        matrices: Vec<Vec<Vec<f64>>>,
    },
    AnisotropicDiag2 {
        alphas: Vec<f64>,
    },
}

tagged_serde!(GammaConfig, "type");

impl GammaConfig {
    pub fn build(&self, at: &str) -> Result<ControlSet> {
        let wrap = |e: Error| config_err(at.to_string(), e.to_string());
        match self {
            Self::ScalarInterval { lo, hi, n, spacing } => {
                let sp = match spacing {
                    SpacingConfig::Linear => Spacing::Linear,
                    SpacingConfig::Geometric => Spacing::Geometric,
                };
                ControlSet::scalar_interval(*lo, *hi, *n, sp).map_err(wrap)
            }
            Self::ScalarVols { sigmas } => ControlSet::scalar_vols(sigmas.clone()).map_err(wrap),
            Self::MatrixList { matrices } => {
                let mut ms = Vec::with_capacity(matrices.len());
                for (i, m) in matrices.iter().enumerate() {
                    let k = m.len();
                    if k == 0 || m.iter().any(|row| row.len() != k) {
                        return Err(config_err(format!("{at}/matrices/{i}"), "matrix must be square and nonempty"));
                    }
                    let flat: Vec<f64> = m.iter().flatten().copied().collect();
                    ms.push(DMatrix::from_row_slice(k, k, &flat));
                }
                ControlSet::matrix_list(ms).map_err(|e| config_err(format!("{at}/matrices"), e.to_string()))
            }
            Self::AnisotropicDiag2 { alphas } => ControlSet::anisotropic(alphas.clone()).map_err(wrap),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(remote = "Self", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    #[default]
    ConstantOnly,
    OneSwitch {
        switch_times: Vec<f64>,
    },
    RandomSwitch {
        count: usize,
        switch_times: Vec<f64>,
        seed: u64,
    },
}

tagged_serde!(ScheduleConfig, "mode");

impl ScheduleConfig {
    fn mode(&self) -> ScheduleMode {
        match self {
            Self::ConstantOnly => ScheduleMode::ConstantOnly,
            Self::OneSwitch { switch_times } => ScheduleMode::OneSwitch {
                switch_times: switch_times.clone(),
            },
            Self::RandomSwitch {
                count,
                switch_times,
                seed,
            } => ScheduleMode::RandomSwitch {
                count: *count,
                switch_times: switch_times.clone(),
                seed: *seed,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(remote = "Self", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// Canonical process under G-Brownian laws.
    Gbm {
        gamma: GammaConfig,
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default)]
        schedule: ScheduleConfig,
    },
    /// Euler scheme with constant drift and diffusion matrix (`d x k`,
    /// row-major) driven by the controlled noise.
    Gsde {
        gamma: GammaConfig,
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        drift: Vec<f64>,
        sigma: Vec<f64>,
        #[serde(default)]
        schedule: ScheduleConfig,
    },
    /// Dirac laws on constant paths.
    Pointmass { xs: Vec<f64> },
}

tagged_serde!(FamilyConfig, "family");

impl GammaConfig {
    fn dim(&self) -> usize {
        match self {
            Self::ScalarInterval { .. } | Self::ScalarVols { .. } => 1,
            Self::MatrixList { matrices } => matrices.first().map_or(1, Vec::len),
            Self::AnisotropicDiag2 { .. } => 2,
        }
    }
}

impl FamilyConfig {
    /// State dimension: `x0`, then `dim`, then the natural dimension of the
    /// volatility set (or of the drift for `gsde`).
    pub fn dim(&self) -> usize {
        match self {
            Self::Gbm { x0, dim, gamma, .. } => x0.as_ref().map(Vec::len).or(*dim).unwrap_or_else(|| gamma.dim()),
            Self::Gsde { x0, dim, drift, .. } => x0.as_ref().map(Vec::len).or(*dim).unwrap_or(drift.len()),
            Self::Pointmass { .. } => 1,
        }
    }

    fn x0(&self) -> Vec<f64> {
        match self {
            Self::Gbm { x0: Some(x), .. } | Self::Gsde { x0: Some(x), .. } => x.clone(),
            _ => vec![0.0; self.dim()],
        }
    }

    fn check(&self, at: &str) -> Result<()> {
        match self {
            Self::Gbm { x0, dim, .. } | Self::Gsde { x0, dim, .. } => {
                if *dim == Some(0) {
                    return Err(config_err(format!("{at}/dim"), "must be at least 1"));
                }
                if let (Some(x), Some(d)) = (x0, dim) {
                    if x.len() != *d {
                        return Err(config_err(format!("{at}/x0"), format!("expected {d} entries, got {}", x.len())));
                    }
                }
            }
            Self::Pointmass { .. } => {}
        }
        Ok(())
    }

    /// One simulator per law on `grid`.
    pub fn build(&self, grid: TimeGrid, at: &str) -> Result<Vec<LawSimulator>> {
        match self {
            Self::Gbm { gamma, schedule, .. } => {
                let x0 = &self.x0();
                let set = gamma.build(&format!("{at}/gamma"))?;
                let laws = family_controls(&set, &schedule.mode()).map_err(|e| config_err(format!("{at}/schedule"), e.to_string()))?;
                laws.iter()
                    .map(|law| LawSimulator::brownian(&set, law, grid, x0).map_err(|e| config_err(format!("{at}/x0"), e.to_string())))
                    .collect()
            }
            Self::Gsde {
                gamma,
                drift,
                sigma,
                schedule,
                ..
            } => {
                let x0 = &self.x0();
                let set = gamma.build(&format!("{at}/gamma"))?;
                let k = set
                    .noise_dim()
                    .ok_or_else(|| config_err(format!("{at}/gamma"), "volatility set required"))?;
                if drift.len() != x0.len() {
                    return Err(config_err(format!("{at}/drift"), format!("expected {} entries", x0.len())));
                }
                if sigma.len() != x0.len() * k {
                    return Err(config_err(format!("{at}/sigma"), format!("expected {} entries", x0.len() * k)));
                }
                let laws = family_controls(&set, &schedule.mode()).map_err(|e| config_err(format!("{at}/schedule"), e.to_string()))?;
                laws.iter()
                    .map(|law| {
                        let coeffs = SdeCoefficients::constant(drift.clone(), sigma.clone(), k)
                            .map_err(|e| config_err(format!("{at}/sigma"), e.to_string()))?;
                        LawSimulator::sde(coeffs, &set, law, grid, x0).map_err(|e| config_err(at.to_string(), e.to_string()))
                    })
                    .collect()
            }
            Self::Pointmass { xs } => {
                let set = ControlSet::point_mass(xs.clone()).map_err(|e| config_err(format!("{at}/xs"), e.to_string()))?;
                let ControlSet::PointMass { xs } = set else {
                    unreachable!("point_mass builds a point-mass set")
                };
                Ok(xs
                    .iter()
                    .enumerate()
                    .map(|(id, &x)| LawSimulator::frozen(id, format!("x={x}"), grid, &[x]))
                    .collect())
            }
        }
    }
}

fn check_domain(q: &DomainSpec, dim: usize, at: &str) -> Result<()> {
    q.validate().map_err(|e| config_err(at.to_string(), e.to_string()))?;
    if q.dim() != dim {
        return Err(config_err(
            at.to_string(),
            format!("domain has dimension {}, family has {dim}", q.dim()),
        ));
    }
    Ok(())
}

fn positive(v: f64, at: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(at.to_string(), format!("must be > 0, got {v}")))
    }
}

fn nonzero(n: usize, at: &str) -> Result<()> {
    if n == 0 {
        Err(config_err(at.to_string(), "must be at least 1"))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathFormat {
    Ndjson,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub grid: GridConfig,
    pub family: FamilyConfig,
    pub n_paths: usize,
    /// Paths written to disk per law; `0` disables the export.
    #[serde(default)]
    pub export_paths: usize,
    #[serde(default = "default_format")]
    pub format: PathFormat,
}

fn default_format() -> PathFormat {
    PathFormat::Ndjson
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitStatsConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub grid: GridConfig,
    pub family: FamilyConfig,
    pub domain: DomainSpec,
    pub n_paths: usize,
    pub clamp: f64,
    #[serde(default)]
    pub export_exits: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Holds,
    Violated,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum RuleConfig {
    /// One-sided rule when the domain is a ray, two-sided otherwise.
    #[default]
    Auto,
    TwoSided,
    LowerRay,
    UpperRay,
}

impl RuleConfig {
    pub fn resolve(self, q: Option<&DomainSpec>) -> ControlRule {
        match self {
            Self::Auto => q.map_or(ControlRule::TwoSided, ControlRule::for_domain),
            Self::TwoSided => ControlRule::TwoSided,
            Self::LowerRay => ControlRule::LowerRay,
            Self::UpperRay => ControlRule::UpperRay,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConditionsConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub grid: GridConfig,
    pub family: FamilyConfig,
    /// When given, each record is checked up to its closure exit.
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    /// Each `λ` is checked separately.
    pub lambdas: Vec<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub rule: RuleConfig,
    pub n_paths: usize,
    #[serde(default)]
    pub expect: Option<Expectation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitIdentityConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub family: FamilyConfig,
    pub domain: DomainSpec,
    pub clamp: f64,
    pub grid: LevelGridConfig,
    pub n_paths: usize,
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub rule: RuleConfig,
    #[serde(default = "default_n_check")]
    pub n_check: usize,
    /// Upper limit on the gap at the finest level.
    #[serde(default = "default_max_finest_gap")]
    pub max_finest_gap: f64,
}

/// Refinement levels for the exit identity. Each level simulates on
/// `[0, clamp]`; a `horizon`, if given, must cover the clamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelGridConfig {
    #[serde(default)]
    pub horizon: Option<f64>,
    pub dt_levels: Vec<f64>,
}

fn default_n_check() -> usize {
    16
}

fn default_max_finest_gap() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanOracle {
    pub value: f64,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentBoundConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// The horizon is the cap `T` in `min(τ, T)`.
    pub grid: GridConfig,
    pub family: FamilyConfig,
    pub domain: DomainSpec,
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub component: usize,
    pub n_paths: usize,
    #[serde(default = "default_n_check")]
    pub n_check: usize,
    /// Reference value for `E[min(τ, T)]`, checked with a relative tolerance.
    #[serde(default)]
    pub mean_oracle: Option<MeanOracle>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalConfig {
    TauOpen,
    TauClosed,
    Endpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscontinuityLimit {
    pub delta: f64,
    pub max_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QcProbeConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub grid: GridConfig,
    pub family: FamilyConfig,
    pub domain: DomainSpec,
    pub functional: FunctionalConfig,
    pub clamp: f64,
    /// Sharpness levels `n` of the continuous exit-time approximants.
    #[serde(default)]
    pub approximant_levels: Vec<f64>,
    pub eps: f64,
    pub deltas: Vec<f64>,
    pub n_paths: usize,
    #[serde(default)]
    pub limit: Option<DiscontinuityLimit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(remote = "Self", rename_all = "snake_case", deny_unknown_fields)]
pub enum CounterexampleCase {
    Pointmass {
        #[serde(default = "default_points")]
        xs: Vec<f64>,
        #[serde(default = "default_point_steps")]
        steps: usize,
    },
    DegenerateGbm {
        sigma_lo: f64,
        sigma_hi: f64,
        n_sigmas: usize,
        #[serde(default)]
        spacing: SpacingConfig,
        grid: GridConfig,
        n_paths: usize,
        near_radius: f64,
        #[serde(default = "default_witness_steps")]
        witness_steps: usize,
        #[serde(default = "default_windows")]
        windows: Vec<usize>,
        #[serde(default = "default_min_capacity")]
        min_capacity: f64,
    },
    #[serde(rename = "anisotropic_2d")]
    Anisotropic2d {
        alphas: Vec<f64>,
        grid: GridConfig,
        n_paths: usize,
        near_radius: f64,
        #[serde(default = "default_witness_steps")]
        witness_steps: usize,
        #[serde(default = "default_windows")]
        windows: Vec<usize>,
        #[serde(default = "default_focus_alpha")]
        focus_alpha: f64,
        #[serde(default = "default_min_capacity")]
        min_capacity: f64,
    },
}

tagged_serde!(CounterexampleCase, "which");

fn default_points() -> Vec<f64> {
    (0..=20).map(|i| -1.0 + 0.1 * i as f64).map(|x: f64| (x * 10.0).round() / 10.0).collect()
}

fn default_point_steps() -> usize {
    100
}

fn default_witness_steps() -> usize {
    2
}

fn default_windows() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32, 64, 128, 256]
}

fn default_min_capacity() -> f64 {
    0.9
}

fn default_focus_alpha() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub case: CounterexampleCase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub levels: Vec<u32>,
    /// Random `τ` drawn uniformly from `[0, 1]`.
    #[serde(default)]
    pub n_tau: usize,
    /// Extra fixed `τ` values.
    #[serde(default)]
    pub taus: Vec<f64>,
    pub grid_steps: usize,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        match self {
            Self::Simulate(c) => {
                c.family.check("/family")?;
                c.grid.build("/grid")?;
                nonzero(c.n_paths, "/n_paths")?;
            }
            Self::ExitStats(c) => {
                c.family.check("/family")?;
                c.grid.build("/grid")?;
                check_domain(&c.domain, c.family.dim(), "/domain")?;
                positive(c.clamp, "/clamp")?;
                if c.clamp > c.grid.horizon {
                    return Err(config_err("/clamp", "clamp must not exceed the grid horizon"));
                }
                nonzero(c.n_paths, "/n_paths")?;
            }
            Self::CheckConditions(c) => {
                c.family.check("/family")?;
                c.grid.build("/grid")?;
                if let Some(q) = &c.domain {
                    check_domain(q, c.family.dim(), "/domain")?;
                }
                if c.lambdas.is_empty() {
                    return Err(config_err("/lambdas", "at least one lambda is required"));
                }
                for (i, l) in c.lambdas.iter().enumerate() {
                    positive(*l, &format!("/lambdas/{i}"))?;
                }
                positive(c.epsilon, "/epsilon")?;
                nonzero(c.n_paths, "/n_paths")?;
            }
            Self::ExitIdentity(c) => {
                c.family.check("/family")?;
                check_domain(&c.domain, c.family.dim(), "/domain")?;
                positive(c.clamp, "/clamp")?;
                if let Some(h) = c.grid.horizon {
                    if !(h >= c.clamp) {
                        return Err(config_err("/grid/horizon", "horizon must cover the clamp"));
                    }
                }
                let levels = &c.grid.dt_levels;
                if levels.is_empty() {
                    return Err(config_err("/grid/dt_levels", "at least one level is required"));
                }
                for (i, dt) in levels.iter().enumerate() {
                    positive(*dt, &format!("/grid/dt_levels/{i}"))?;
                    if i > 0 && *dt >= levels[i - 1] {
                        return Err(config_err(format!("/grid/dt_levels/{i}"), "levels must be strictly decreasing"));
                    }
                }
                positive(c.lambda, "/lambda")?;
                positive(c.epsilon, "/epsilon")?;
                nonzero(c.n_paths, "/n_paths")?;
                if !(c.max_finest_gap >= 0.0) {
                    return Err(config_err("/max_finest_gap", "must be >= 0"));
                }
            }
            Self::MomentBound(c) => {
                c.family.check("/family")?;
                c.grid.build("/grid")?;
                check_domain(&c.domain, c.family.dim(), "/domain")?;
                if !c.domain.is_bounded() {
                    return Err(config_err("/domain", "moment bound needs a bounded domain"));
                }
                if c.lambda == 0.0 || !c.lambda.is_finite() {
                    return Err(config_err("/lambda", "must be nonzero"));
                }
                positive(c.epsilon, "/epsilon")?;
                if c.component >= c.domain.dim() {
                    return Err(config_err("/component", "coordinate index out of range"));
                }
                nonzero(c.n_paths, "/n_paths")?;
                if let Some(o) = &c.mean_oracle {
                    positive(o.rel_tol, "/mean_oracle/rel_tol")?;
                }
            }
            Self::QcProbe(c) => {
                c.family.check("/family")?;
                c.grid.build("/grid")?;
                check_domain(&c.domain, c.family.dim(), "/domain")?;
                positive(c.clamp, "/clamp")?;
                positive(c.eps, "/eps")?;
                for (i, d) in c.deltas.iter().enumerate() {
                    positive(*d, &format!("/deltas/{i}"))?;
                }
                for (i, n) in c.approximant_levels.iter().enumerate() {
                    positive(*n, &format!("/approximant_levels/{i}"))?;
                }
                if c.functional == FunctionalConfig::Endpoint && !c.approximant_levels.is_empty() {
                    return Err(config_err("/approximant_levels", "exit-time approximants need an exit-time functional"));
                }
                nonzero(c.n_paths, "/n_paths")?;
                if let Some(l) = &c.limit {
                    if !c.deltas.contains(&l.delta) {
                        return Err(config_err("/limit/delta", "must be one of `deltas`"));
                    }
                }
            }
            Self::Counterexample(c) => match &c.case {
                CounterexampleCase::Pointmass { xs, steps } => {
                    nonzero(*steps, "/case/steps")?;
                    ControlSet::point_mass(xs.clone()).map_err(|e| config_err("/case/xs", e.to_string()))?;
                }
                CounterexampleCase::DegenerateGbm {
                    grid,
                    n_paths,
                    near_radius,
                    ..
                }
                | CounterexampleCase::Anisotropic2d {
                    grid,
                    n_paths,
                    near_radius,
                    ..
                } => {
                    let g = grid.build("/case/grid")?;
                    if g.horizon() != 1.0 {
                        return Err(config_err("/case/grid/horizon", "counterexamples clamp at 1; horizon must be 1"));
                    }
                    nonzero(*n_paths, "/case/n_paths")?;
                    positive(*near_radius, "/case/near_radius")?;
                }
            },
            Self::PartitionApprox(c) => {
                if c.levels.is_empty() {
                    return Err(config_err("/levels", "at least one level is required"));
                }
                for (i, k) in c.levels.iter().enumerate() {
                    if *k == 0 || *k > 20 {
                        return Err(config_err(format!("/levels/{i}"), "level must be in 1..=20"));
                    }
                }
                for (i, t) in c.taus.iter().enumerate() {
                    if !(0.0..=1.0).contains(t) {
                        return Err(config_err(format!("/taus/{i}"), "tau must lie in [0, 1]"));
                    }
                }
                if c.n_tau == 0 && c.taus.is_empty() {
                    return Err(config_err("/n_tau", "no tau values requested"));
                }
                nonzero(c.grid_steps, "/grid_steps")?;
            }
        }
        Ok(())
    }
}
