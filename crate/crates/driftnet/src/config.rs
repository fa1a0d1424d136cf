//! Experiment configuration: built-in defaults matching the published
//! experimental setup, TOML or JSON config files, and repeatable
//! `key=value` overrides with dotted paths for nested settings.
//!
//! Precedence is exactly: built-in defaults < config file < `--set`
//! overrides (< an explicit `--seed` flag).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::StalenessWeighting;
use crate::error::{Error, Result};
use crate::harness::Condition;
use crate::mobility::{GridBounds, RwpParams};
use crate::optimizer::AnnealingSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub width: f64,
    pub height: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 1000.0,
            height: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlumeConfig {
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Peak concentration; also the upper bound of the inversion range.
    pub amplitude: f64,
    /// Random-walk step length of the plume center, meters per step.
    pub walk_step: f64,
}

impl Default for PlumeConfig {
    fn default() -> Self {
        Self {
            sigma_x: 50.0,
            sigma_y: 50.0,
            amplitude: 100.0,
            walk_step: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub pause_max: u32,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            v_min: 1.0,
            v_max: 5.0,
            pause_max: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaConfig {
    pub initial_temp: f64,
    pub cooling_rate: f64,
    pub iterations: u32,
    pub proposal_sigma: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub initial_lambda: f64,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            initial_temp: 1.0,
            cooling_rate: 0.95,
            iterations: 500,
            proposal_sigma: 0.01,
            lambda_min: 0.0,
            lambda_max: 1.0,
            initial_lambda: 0.01,
        }
    }
}

/// Full experiment parameterization. The defaults reproduce the published
/// setup: 30 sensors with 20 m transmission range on a 1 km^2 grid, a
/// sigma = 50 m Gaussian plume, quadratic drift initialized from
/// d0 in (0, 1.5), d1 in (2, 3), d2 in (1, 2) with alpha = 0.002, and
/// 10 repetitions of 1000 steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_sensors: usize,
    pub grid: GridConfig,
    /// Transmission range in meters.
    pub range: f64,
    pub steps: u64,
    pub repetitions: u32,
    /// Polynomial degree r of the drift model.
    pub degree: usize,
    /// Uniform initialization interval per coefficient, length degree + 1.
    pub drift_init_ranges: Vec<[f64; 2]>,
    /// Per-coefficient drift rate per step, length degree + 1.
    pub alpha: Vec<f64>,
    /// Additive Gaussian measurement noise (0 disables it).
    pub noise_sigma: f64,
    /// Bench repeatability noise on training-trace responses. Without it
    /// the offline decay-constant search is degenerate: noiseless samples
    /// make arbitrarily aggressive forgetting look free.
    pub training_noise_sigma: f64,
    /// Calibration-table cap; 0 disables eviction.
    pub table_cap: usize,
    /// Fraction of the concentration range below which two consensus
    /// estimates count as one stimulus level for the refit trigger.
    pub usable_resolution: f64,
    /// Minimum steps between exchanges of the same sensor pair. Sustained
    /// contacts re-exchange only this often; 0 exchanges on every step of
    /// contact.
    pub exchange_interval: u64,
    /// Factory calibration points seeded into each table at deployment
    /// (0 disables seeding).
    pub factory_table_size: usize,
    /// Consensus staleness weighting: "reciprocal" or "exponential:<lambda>".
    pub consensus_weighting: String,
    /// "per_sensor" tunes one lambda per sensor; "shared" tunes a single
    /// network-wide lambda on the pooled objective.
    pub lambda_mode: String,
    /// Length of the synthesized offline training trace.
    pub training_steps: u64,
    /// Condition used by `run` and by the size sweep.
    pub scheme: String,
    /// Conditions compared by `compare-weights`.
    pub schemes: Vec<String>,
    /// Network sizes visited by `sweep-size`.
    pub sizes: Vec<usize>,
    pub plume: PlumeConfig,
    pub mobility: MobilityConfig,
    pub sa: SaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_sensors: 30,
            grid: GridConfig::default(),
            range: 20.0,
            steps: 1000,
            repetitions: 10,
            degree: 2,
            drift_init_ranges: vec![[0.0, 1.5], [2.0, 3.0], [1.0, 2.0]],
            alpha: vec![0.002; 3],
            noise_sigma: 0.0,
            training_noise_sigma: 0.5,
            table_cap: 256,
            usable_resolution: 0.02,
            exchange_interval: 8,
            factory_table_size: 8,
            consensus_weighting: "reciprocal".into(),
            lambda_mode: "per_sensor".into(),
            training_steps: 200,
            scheme: "optimized".into(),
            schemes: vec![
                "uncalibrated".into(),
                "uniform".into(),
                "reciprocal_age".into(),
                "optimized".into(),
            ],
            sizes: vec![5, 10, 20, 30, 40, 50],
            plume: PlumeConfig::default(),
            mobility: MobilityConfig::default(),
            sa: SaConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Builds the resolved config: defaults, then the optional file, then
    /// each `key=value` override, then an explicit seed.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut value = toml::Value::try_from(ExperimentConfig::default())
            .map_err(|e| Error::Config(format!("defaults serialization failed: {e}")))?;

        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            let file_value = parse_config_text(&text, path)?;
            deep_merge(&mut value, file_value);
        }

        for assignment in overrides {
            let fragment = parse_override(assignment)?;
            deep_merge(&mut value, fragment);
        }

        if let Some(seed) = seed {
            deep_merge(
                &mut value,
                toml::Value::try_from(std::collections::BTreeMap::from([("seed", seed)])).unwrap(),
            );
        }

        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 {
            return Err(Error::Config("n_sensors must be at least 1".into()));
        }
        self.grid_bounds()?;
        if !(self.range > 0.0) {
            return Err(Error::Config(format!(
                "transmission range must be positive, got {}",
                self.range
            )));
        }
        if self.steps == 0 || self.repetitions == 0 {
            return Err(Error::Config(
                "steps and repetitions must both be at least 1".into(),
            ));
        }
        if self.degree < 1 {
            return Err(Error::Config("drift degree must be at least 1".into()));
        }
        let want = self.degree + 1;
        if self.drift_init_ranges.len() != want {
            return Err(Error::Config(format!(
                "drift_init_ranges must have {} entries for degree {}, got {}",
                want,
                self.degree,
                self.drift_init_ranges.len()
            )));
        }
        for [low, high] in &self.drift_init_ranges {
            if !(low <= high) {
                return Err(Error::Config(format!(
                    "drift init range ({low}, {high}) has low > high"
                )));
            }
        }
        if self.alpha.len() != want {
            return Err(Error::Config(format!(
                "alpha must have {} entries for degree {}, got {}",
                want,
                self.degree,
                self.alpha.len()
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.training_noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "training_noise_sigma must be non-negative, got {}",
                self.training_noise_sigma
            )));
        }
        if !(self.usable_resolution >= 0.0 && self.usable_resolution < 1.0) {
            return Err(Error::Config(format!(
                "usable_resolution must lie in [0, 1), got {}",
                self.usable_resolution
            )));
        }
        if self.training_steps < (self.degree + 2) as u64 {
            return Err(Error::Config(format!(
                "training_steps must be at least {} for degree {}",
                self.degree + 2,
                self.degree
            )));
        }
        self.consensus()?;
        Condition::parse(&self.scheme)?;
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes must not be empty".into()));
        }
        for s in &self.schemes {
            Condition::parse(s)?;
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("sizes must be non-empty and positive".into()));
        }
        match self.lambda_mode.as_str() {
            "per_sensor" | "shared" => {}
            other => {
                return Err(Error::Config(format!(
                    "lambda_mode must be per_sensor or shared, got {other}"
                )))
            }
        }
        // Plume and annealing parameters are validated by their constructors.
        crate::plume::PlumeField::new(
            self.grid_bounds()?.center(),
            self.plume.sigma_x,
            self.plume.sigma_y,
            self.plume.amplitude,
            self.plume.walk_step,
            &self.grid_bounds()?,
        )?;
        self.rwp_params().validate()?;
        self.sa_schedule().validate()?;
        Ok(())
    }

    pub fn grid_bounds(&self) -> Result<GridBounds> {
        GridBounds::new(self.grid.width, self.grid.height)
    }

    pub fn rwp_params(&self) -> RwpParams {
        RwpParams {
            v_min: self.mobility.v_min,
            v_max: self.mobility.v_max,
            pause_max: self.mobility.pause_max,
        }
    }

    pub fn sa_schedule(&self) -> AnnealingSchedule {
        AnnealingSchedule {
            initial_temp: self.sa.initial_temp,
            cooling_rate: self.sa.cooling_rate,
            iterations: self.sa.iterations,
            proposal_sigma: self.sa.proposal_sigma,
            lambda_bounds: (self.sa.lambda_min, self.sa.lambda_max),
            initial_lambda: self.sa.initial_lambda,
        }
    }

    pub fn consensus(&self) -> Result<StalenessWeighting> {
        let s = self.consensus_weighting.as_str();
        if s == "reciprocal" {
            return Ok(StalenessWeighting::Reciprocal);
        }
        if let Some(rest) = s.strip_prefix("exponential:") {
            let lambda: f64 = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad consensus decay constant: {rest}")))?;
            if lambda < 0.0 {
                return Err(Error::Config(
                    "consensus decay constant must be non-negative".into(),
                ));
            }
            return Ok(StalenessWeighting::Exponential { lambda });
        }
        Err(Error::Config(format!(
            "consensus_weighting must be reciprocal or exponential:<lambda>, got {s}"
        )))
    }

    /// Table cap as an option; 0 means unlimited.
    pub fn table_cap_opt(&self) -> Option<usize> {
        if self.table_cap == 0 {
            None
        } else {
            Some(self.table_cap)
        }
    }

    /// Upper bound of the concentration range used for inversion. Twice the
    /// plume amplitude, so a drifted sensor can report overshoot instead of
    /// silently clamping to the physical peak.
    pub fn x_max(&self) -> f64 {
        2.0 * self.plume.amplitude
    }
}

fn parse_config_text(text: &str, path: &Path) -> Result<toml::Value> {
    let is_json = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    if is_json {
        serde_json::from_str::<toml::Value>(text)
            .map_err(|e| Error::Config(format!("invalid JSON config {}: {e}", path.display())))
    } else {
        toml::from_str::<toml::Value>(text)
            .map_err(|e| Error::Config(format!("invalid TOML config {}: {e}", path.display())))
    }
}

/// Parses one `key=value` override as a TOML fragment. The value is tried
/// verbatim first, then as a bare comma-separated list, then as a string, so
/// `n_sensors=5`, `sizes=5,10,20`, and `scheme=optimized` all work. Dotted
/// keys (`plume.amplitude=50`) address nested tables.
fn parse_override(assignment: &str) -> Result<toml::Value> {
    let (key, value) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!("override must look like key=value, got {assignment}"))
    })?;
    let key = key.trim();
    let value = value.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("empty key in override {assignment}")));
    }
    let candidates = [
        format!("{key} = {value}"),
        format!("{key} = [{value}]"),
        format!("{key} = \"{}\"", value.replace('\\', "\\\\").replace('"', "\\\"")),
    ];
    for candidate in &candidates {
        if let Ok(v) = toml::from_str::<toml::Value>(candidate) {
            return Ok(v);
        }
    }
    Err(Error::Config(format!(
        "cannot parse override value in {assignment}"
    )))
}

/// Recursively merges `incoming` onto `base`; tables merge key-wise,
/// everything else replaces.
fn deep_merge(base: &mut toml::Value, incoming: toml::Value) {
    match (base, incoming) {
        (toml::Value::Table(base_table), toml::Value::Table(incoming_table)) => {
            for (key, value) in incoming_table {
                match base_table.get_mut(&key) {
                    Some(existing) => deep_merge(existing, value),
                    None => {
                        base_table.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}
