//! The TOML run configuration shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use stgat_core::experiment::ExperimentConfig;
use stgat_core::geo::GridSpec;
use stgat_core::model::LossWeights;
use stgat_core::params::ModelDims;
use stgat_core::synth::{meal_peaks, random_events, EventPlan, EventSpike, MealPeak, ScenarioSpec};
use stgat_core::temporal::{ChannelFlags, TemporalWindowSpec};
use stgat_core::train::{derive_seed, Optimizer, TrainConfig};

use crate::error::{CliError, PathContext, Result};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every component seed is derived from it by name.
    pub seed: u64,
    pub grid: GridSection,
    pub ingest: IngestSection,
    pub model: ModelSection,
    pub temporal: TemporalSection,
    pub train: TrainSection,
    pub baseline: BaselineSection,
    pub scenario: ScenarioSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_length_km: f64,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geo_threshold_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub granularity_min: usize,
    /// Corpus length in days; by default one past the last order's day.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub days: Option<usize>,
    /// `YYYY-MM-DD` of day 0; by default the first order's date.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_date: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub z: usize,
    pub hidden: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    pub eps_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalSection {
    pub n_days: usize,
    pub h_hours: usize,
    pub linear: bool,
    pub stpp: bool,
    pub stpm: bool,
    pub nonlinear: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub w_demand: f64,
    pub w_od: f64,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub ar_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub days: usize,
    /// Generation granularity; defaults to the ingest granularity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub granularity_min: Option<usize>,
    pub start_date: String,
    /// Orders per origin-destination pair per slot before modulation.
    pub base_rate: f64,
    /// Amplitude of the default lunch and dinner peaks when `meal_peaks` is empty.
    pub meal_amplitude: f64,
    pub meal_peaks: Vec<MealPeak>,
    pub events: Vec<EventSpike>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_events: Option<EventPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dest_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orders: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            grid: GridSection::default(),
            ingest: IngestSection::default(),
            model: ModelSection::default(),
            temporal: TemporalSection::default(),
            train: TrainSection::default(),
            baseline: BaselineSection::default(),
            scenario: ScenarioSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            origin_lat: 30.0,
            origin_lon: 120.0,
            cell_length_km: 2.5,
            rows: 4,
            cols: 4,
            geo_threshold_km: None,
        }
    }
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            granularity_min: 15,
            days: None,
            start_date: None,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelDims::default();
        Self {
            z: d.z,
            hidden: d.hidden,
            heads: d.heads,
            leaky_slope: d.leaky_slope,
            eps_h: stgat_core::spatial::DEFAULT_EPS_H,
        }
    }
}

impl Default for TemporalSection {
    fn default() -> Self {
        let w = TemporalWindowSpec::default();
        Self {
            n_days: w.n_days,
            h_hours: w.h_hours,
            linear: true,
            stpp: true,
            stpm: true,
            nonlinear: true,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let (beta1, beta2, adam_eps) = match Optimizer::default() {
            Optimizer::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            Optimizer::Sgd => (0.9, 0.999, 1e-8),
        };
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lambda: t.lambda,
            w_demand: t.loss_weights.demand,
            w_od: t.loss_weights.od,
            optimizer: "adam".into(),
            beta1,
            beta2,
            adam_eps,
        }
    }
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            ar_order: stgat_core::baselines::DEFAULT_AR_ORDER,
        }
    }
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            days: 14,
            granularity_min: None,
            start_date: "2024-01-01".into(),
            base_rate: 0.05,
            meal_amplitude: 3.0,
            meal_peaks: Vec::new(),
            events: Vec::new(),
            random_events: None,
            dest_weights: None,
        }
    }
}

fn parse_date(s: &str, field: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| CliError::user(format!("{field}: `{s}` is not YYYY-MM-DD ({e})")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::user(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::user(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section, including the ones the current command does not use.
    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        stgat_core::ingest::slots_per_day(self.ingest.granularity_min)?;
        if let Some(d) = &self.ingest.start_date {
            parse_date(d, "ingest.start_date")?;
        }
        if self.ingest.days == Some(0) {
            return Err(CliError::user("ingest.days must be at least 1"));
        }
        self.dims().validate()?;
        let min = stgat_core::ingest::EMBEDDING_FEATURES;
        if self.model.z < min {
            return Err(stgat_core::Error::EmbeddingTooSmall { z: self.model.z, min }.into());
        }
        if !(self.model.eps_h > 0.0 && self.model.eps_h.is_finite()) {
            return Err(CliError::user(format!("model.eps_h must be positive, got {}", self.model.eps_h)));
        }
        self.window().validate()?;
        self.train_config()?.validate()?;
        if !(self.train.learning_rate > 0.0) {
            return Err(CliError::user(format!("train.learning_rate must be positive, got {}", self.train.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.train.lambda) {
            return Err(CliError::user(format!("train.lambda must lie in [0, 1], got {}", self.train.lambda)));
        }
        if self.baseline.ar_order == 0 {
            return Err(CliError::user("baseline.ar_order must be at least 1"));
        }
        self.scenario()?.validate()?;
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        let g = &self.grid;
        GridSpec {
            origin_lat: g.origin_lat,
            origin_lon: g.origin_lon,
            cell_length_km: g.cell_length_km,
            rows: g.rows,
            cols: g.cols,
            geo_threshold_km: g.geo_threshold_km,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            z: self.model.z,
            hidden: self.model.hidden,
            heads: self.model.heads,
            leaky_slope: self.model.leaky_slope,
        }
    }

    pub fn window(&self) -> TemporalWindowSpec {
        let t = &self.temporal;
        TemporalWindowSpec {
            n_days: t.n_days,
            h_hours: t.h_hours,
            granularity_min: self.ingest.granularity_min,
            channels: ChannelFlags {
                linear: t.linear,
                stpp: t.stpp,
                stpm: t.stpm,
                nonlinear: t.nonlinear,
            },
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let optimizer = match t.optimizer.as_str() {
            "adam" => Optimizer::Adam {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.adam_eps,
            },
            "sgd" => Optimizer::Sgd,
            other => return Err(CliError::user(format!("train.optimizer must be `adam` or `sgd`, got `{other}`"))),
        };
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: self.seed_for("train"),
            lambda: t.lambda,
            loss_weights: LossWeights {
                demand: t.w_demand,
                od: t.w_od,
            },
            optimizer,
        })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            dims: self.dims(),
            window: self.window(),
            train: self.train_config()?,
            eps_h: self.model.eps_h,
            ar_order: self.baseline.ar_order,
        })
    }

    pub fn scenario_granularity(&self) -> usize {
        self.scenario.granularity_min.unwrap_or(self.ingest.granularity_min)
    }

    pub fn scenario_start(&self) -> Result<NaiveDate> {
        parse_date(&self.scenario.start_date, "scenario.start_date")
    }

    pub fn scenario(&self) -> Result<ScenarioSpec> {
        let s = &self.scenario;
        let gran = self.scenario_granularity();
        self.scenario_start()?;
        let mut spec = ScenarioSpec::new(self.grid(), s.days, gran, s.base_rate, self.seed_for("scenario"));
        spec.meal_peaks = if s.meal_peaks.is_empty() && s.meal_amplitude > 0.0 {
            meal_peaks(gran, s.meal_amplitude)
        } else {
            s.meal_peaks.clone()
        };
        spec.events = s.events.clone();
        if let Some(plan) = &s.random_events {
            spec.events.extend(random_events(plan, s.days, gran, spec.grid.n_cells(), self.seed_for("events"))?);
        }
        spec.dest_weights = s.dest_weights.clone();
        Ok(spec)
    }

    pub fn seed_for(&self, component: &str) -> u64 {
        derive_seed(self.seed, component)
    }

    /// Component seeds as logged next to outputs.
    pub fn seeds(&self) -> Vec<(String, u64)> {
        ["train", "scenario", "events"].iter().map(|c| (c.to_string(), self.seed_for(c))).collect()
    }

    /// Stable hash of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", derive_seed(0, &self.to_toml()))
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).at(&path)
    }
}
