use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::model::{EmbeddingPoint, ModelConfig, PerturbSite, PointInit, DEFAULT_EMBEDDING_SCALE};
use crate::probes::{log_grid, BoundaryConfig, NearTieConfig, RegimeThresholds};

pub const SCHEMA_VERSION: u32 = 1;

/// One probe invocation, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub plot: bool,
    #[serde(default)]
    pub overwrite: bool,
    /// Spectrum sidecars; defaults to `<output_dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub point: PointConfig,
    pub probe: ProbeSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("chaoscope-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointConfig {
    pub seed: u64,
    pub scale: f64,
    pub init: PointInit,
    pub site: PerturbSite,
}

impl Default for PointConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scale: DEFAULT_EMBEDDING_SCALE,
            init: PointInit::Gaussian,
            site: PerturbSite::Last,
        }
    }
}

impl PointConfig {
    pub fn build(&self, model: &ModelConfig) -> EmbeddingPoint {
        EmbeddingPoint::seeded_with(model.seq_len, model.d_model, self.seed, self.scale, self.init)
            .with_site(self.site)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeSpec {
    Sweep(SweepSpec),
    LayerGain(LayerGainSpec),
    Instability(InstabilitySpec),
    MicroContinuity(MicroContinuitySpec),
    DecisionMap(DecisionMapSpec),
    AngularBoundary(AngularSpec),
    SpectrumBoundary(SpectrumBoundarySpec),
    NoiseKappa(NoiseSpec),
}

impl ProbeSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProbeSpec::Sweep(_) => "sweep",
            ProbeSpec::LayerGain(_) => "layer_gain",
            ProbeSpec::Instability(_) => "instability",
            ProbeSpec::MicroContinuity(_) => "micro_continuity",
            ProbeSpec::DecisionMap(_) => "decision_map",
            ProbeSpec::AngularBoundary(_) => "angular_boundary",
            ProbeSpec::SpectrumBoundary(_) => "spectrum_boundary",
            ProbeSpec::NoiseKappa(_) => "noise_kappa",
        }
    }
}

/// Log-spaced ε values, `n` points from `min` to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsGrid {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Default for EpsGrid {
    fn default() -> Self {
        Self {
            min: 1e-14,
            max: 1e-1,
            n: 120,
        }
    }
}

impl EpsGrid {
    pub fn values(&self) -> Result<Vec<f64>, ReportError> {
        if !(self.min > 0.0 && self.max > self.min && self.n >= 2) {
            return Err(ReportError::Invalid(format!(
                "probe.eps needs 0 < min < max and n ≥ 2, got {self:?}"
            )));
        }
        Ok(log_grid(self.min, self.max, self.n))
    }
}

fn dirs(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Direction names: `v<k>` singular vector (1-based), `e<i>` coordinate axis,
/// `rand<seed>` seeded random unit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub eps: EpsGrid,
    pub directions: Vec<String>,
    pub thresholds: RegimeThresholds,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            eps: EpsGrid::default(),
            directions: dirs(&["v1"]),
            thresholds: RegimeThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerGainSpec {
    pub eps: f64,
    pub directions: Vec<String>,
}

impl Default for LayerGainSpec {
    fn default() -> Self {
        Self {
            eps: 0.1,
            directions: dirs(&["v1"]),
        }
    }
}

/// `ε_i = start + i·step`; without `start` the window is centred on the
/// FP32 boundary `s_max` along the direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstabilitySpec {
    pub direction: String,
    pub step: f64,
    pub n_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
}

impl Default for InstabilitySpec {
    fn default() -> Self {
        Self {
            direction: "v1".into(),
            step: 1e-13,
            n_points: 1000,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroContinuitySpec {
    pub direction: String,
    pub delta: f64,
    pub n_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
}

impl Default for MicroContinuitySpec {
    fn default() -> Self {
        Self {
            direction: "v1".into(),
            delta: 1e-13,
            n_steps: 1000,
            start: None,
        }
    }
}

/// The map is centred on a near-tie point found along `tie_direction`;
/// `dir_i`/`dir_j` are resolved against the spectrum at that point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionMapSpec {
    pub dir_i: String,
    pub dir_j: String,
    pub eps_range: f64,
    pub step: f64,
    pub tie_direction: String,
    pub near_tie: NearTieConfig,
}

impl Default for DecisionMapSpec {
    fn default() -> Self {
        Self {
            dir_i: "v1".into(),
            dir_j: "v2".into(),
            eps_range: 1e-8,
            step: 2e-10,
            tie_direction: "v1".into(),
            near_tie: NearTieConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AngularSpec {
    pub dir_a: String,
    pub dir_b: String,
    pub n_angles: usize,
    pub search: BoundaryConfig,
}

impl Default for AngularSpec {
    fn default() -> Self {
        Self {
            dir_a: "v1".into(),
            dir_b: "v2".into(),
            n_angles: 360,
            search: BoundaryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumBoundarySpec {
    pub search: BoundaryConfig,
}

/// `repeats` runs per sample count, seeded `seed`, `seed + 1`, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub direction: String,
    pub eps: f64,
    pub samples: Vec<usize>,
    pub repeats: usize,
    pub noise_mag: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            direction: "v1".into(),
            eps: 1e-9,
            samples: vec![1, 10, 100],
            repeats: 10,
            noise_mag: 1e-9,
            seed: 0,
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn parse_error(origin: &str, text: &str, e: toml::de::Error) -> ReportError {
    let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
    ReportError::Parse {
        origin: origin.to_string(),
        line,
        column,
        message: e.message().trim().to_string(),
    }
}

impl RunConfig {
    /// Parses and validates a config. `origin` names the source in diagnostics.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ReportError> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| parse_error(origin, text, e))?;
        // serde reports a missing `seed` without its table; name the full path
        for path in ["schema_version", "model", "model.seed", "probe", "probe.kind"] {
            let mut node: Option<&toml::Value> = None;
            let mut table = Some(&raw);
            for part in path.split('.') {
                node = table.and_then(|t| t.get(part));
                table = node.and_then(toml::Value::as_table);
            }
            if node.is_none() {
                return Err(ReportError::MissingField(path.to_string()));
            }
        }
        if let Some(v) = raw.get("schema_version").and_then(toml::Value::as_integer) {
            if v != SCHEMA_VERSION as i64 {
                return Err(ReportError::SchemaVersion { found: v });
            }
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| parse_error(origin, text, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        self.model.validate()?;
        if !(self.point.scale > 0.0 && self.point.scale.is_finite()) {
            return Err(ReportError::Invalid("point.scale must be positive".into()));
        }
        if let PerturbSite::Position(p) = self.point.site {
            if p >= self.model.seq_len {
                return Err(ReportError::Invalid(format!(
                    "point.site position {p} is outside seq_len {}",
                    self.model.seq_len
                )));
            }
        }
        match &self.probe {
            ProbeSpec::Sweep(s) => {
                s.eps.values()?;
                if s.directions.is_empty() {
                    return Err(ReportError::Invalid("probe.directions is empty".into()));
                }
            }
            ProbeSpec::LayerGain(s) if s.directions.is_empty() => {
                return Err(ReportError::Invalid("probe.directions is empty".into()));
            }
            ProbeSpec::NoiseKappa(s) if s.samples.is_empty() || s.repeats == 0 => {
                return Err(ReportError::Invalid(
                    "probe.samples must be non-empty and probe.repeats positive".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }
}
