//! MAPE-k / MAE-k metrics, metric reports and evaluation drivers.

use alloc::string::String;
use alloc::vec::Vec;

use crate::baselines::{historical_average_predict, DemandAr};
use crate::error::{Error, Result};
use crate::ingest::{Corpus, HistoryStats, SlotIndex};
use crate::model::{predict, FeatureStore};
use crate::params::ModelParams;
use crate::temporal::TemporalWindowSpec;
use crate::tensor::Tensor2;
use crate::transfer::ForecastResult;

/// Thresholds on the actual value reported by [`MetricReport`].
pub const THRESHOLDS: [u32; 3] = [0, 3, 5];

fn check(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::LengthMismatch { left: actual.len(), right: predicted.len() });
    }
    Ok(())
}

/// Number of entries with `actual ≥ k`.
pub fn qualifying(actual: &[f64], k: f64) -> usize {
    actual.iter().filter(|&&y| y >= k).count()
}

/// Mean of `|y − ŷ| / (y + 1)` over entries with `y ≥ k`, accumulated left
/// to right; 0 when nothing qualifies.
pub fn mape_k(actual: &[f64], predicted: &[f64], k: f64) -> Result<f64> {
    check(actual, predicted)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (&y, &p) in actual.iter().zip(predicted) {
        if y >= k {
            total += (y - p).abs() / (y + 1.0);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean of `|y − ŷ|` over entries with `y ≥ k`; 0 when nothing qualifies.
pub fn mae_k(actual: &[f64], predicted: &[f64], k: f64) -> Result<f64> {
    check(actual, predicted)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (&y, &p) in actual.iter().zip(predicted) {
        if y >= k {
            total += (y - p).abs();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Task {
    Demand,
    Od,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdMetrics {
    pub k: u32,
    pub mape: f64,
    pub mae: f64,
    pub count: usize,
    /// No entry reached the threshold; both metrics are reported as 0.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub task: Task,
    /// Which predictor output was scored, e.g. `blended`, `raw`, `havg`.
    pub variant: String,
    pub fingerprint: String,
    pub thresholds: Vec<ThresholdMetrics>,
}

impl MetricReport {
    pub fn compute(task: Task, variant: &str, actual: &[f64], predicted: &[f64]) -> Result<Self> {
        let thresholds = THRESHOLDS
            .iter()
            .map(|&k| {
                let kf = k as f64;
                let count = qualifying(actual, kf);
                Ok(ThresholdMetrics {
                    k,
                    mape: mape_k(actual, predicted, kf)?,
                    mae: mae_k(actual, predicted, kf)?,
                    count,
                    empty: count == 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            task,
            variant: variant.into(),
            fingerprint: String::new(),
            thresholds,
        })
    }

    pub fn at(&self, k: u32) -> Option<&ThresholdMetrics> {
        self.thresholds.iter().find(|t| t.k == k)
    }

    /// MAPE at threshold 0.
    pub fn mape0(&self) -> f64 {
        self.at(0).map_or(f64::NAN, |t| t.mape)
    }
}

/// A demand vector and OD matrix for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub target: SlotIndex,
    pub demand: Vec<f64>,
    pub od: Tensor2,
}

pub trait Predictor {
    fn name(&self) -> &str;
    fn forecast(&self, target: SlotIndex) -> Result<Prediction>;
}

pub struct HistoricalAverage<'a> {
    pub history: &'a HistoryStats,
}

impl Predictor for HistoricalAverage<'_> {
    fn name(&self) -> &str {
        "havg"
    }

    fn forecast(&self, target: SlotIndex) -> Result<Prediction> {
        let (demand, od) = historical_average_predict(self.history, target)?;
        Ok(Prediction { target, demand, od })
    }
}

/// Per-cell AR demand with the historical-average OD matrix.
pub struct AutoRegressive<'a> {
    pub ar: &'a DemandAr,
    pub corpus: &'a Corpus,
    pub history: &'a HistoryStats,
}

impl Predictor for AutoRegressive<'_> {
    fn name(&self) -> &str {
        "ar"
    }

    fn forecast(&self, target: SlotIndex) -> Result<Prediction> {
        let demand = self.ar.predict(self.corpus, target)?;
        let (_, od) = historical_average_predict(self.history, target)?;
        Ok(Prediction { target, demand, od })
    }
}

/// The trained model with history blending.
pub struct ModelForecaster<'a> {
    pub params: &'a ModelParams,
    pub window: &'a TemporalWindowSpec,
    pub store: &'a FeatureStore,
    pub history: &'a HistoryStats,
    pub lambda: f64,
}

impl ModelForecaster<'_> {
    pub fn forecast_result(&self, target: SlotIndex) -> Result<ForecastResult> {
        let (demand, probs) = predict(self.params, self.window, self.store, target)?;
        let (hd, hod) = historical_average_predict(self.history, target)?;
        ForecastResult::new(target, demand, probs, &hd, &hod, self.lambda)
    }
}

impl Predictor for ModelForecaster<'_> {
    fn name(&self) -> &str {
        "model"
    }

    fn forecast(&self, target: SlotIndex) -> Result<Prediction> {
        let f = self.forecast_result(target)?;
        Ok(Prediction { target, demand: f.blended_demand, od: f.blended_od })
    }
}

/// Citywide demand of one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeriesRow {
    pub day: usize,
    pub slot: usize,
    pub total_actual: f64,
    pub total_predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub demand: MetricReport,
    pub od: MetricReport,
    pub series: Vec<SeriesRow>,
}

/// Score predictions against the corpus, in the given target order.
pub fn score(corpus: &Corpus, predictions: &[Prediction], variant: &str) -> Result<Evaluation> {
    if predictions.is_empty() {
        return Err(Error::InsufficientData("no test slots to evaluate".into()));
    }
    let mut actual_d = Vec::new();
    let mut pred_d = Vec::new();
    let mut actual_od = Vec::new();
    let mut pred_od = Vec::new();
    let mut series = Vec::with_capacity(predictions.len());
    for p in predictions {
        let m = corpus
            .get(p.target)
            .ok_or(Error::SlotOutOfRange { day: p.target.day, slot: p.target.slot })?;
        let demand = m.demand();
        if p.demand.len() != demand.len() {
            return Err(Error::LengthMismatch { left: p.demand.len(), right: demand.len() });
        }
        let od = m.to_dense();
        if p.od.shape() != od.shape() {
            return Err(Error::LengthMismatch { left: p.od.len(), right: od.len() });
        }
        series.push(SeriesRow {
            day: p.target.day,
            slot: p.target.slot,
            total_actual: demand.iter().sum(),
            total_predicted: p.demand.iter().sum(),
        });
        actual_d.extend_from_slice(&demand);
        pred_d.extend_from_slice(&p.demand);
        actual_od.extend_from_slice(od.as_slice());
        pred_od.extend_from_slice(p.od.as_slice());
    }
    Ok(Evaluation {
        demand: MetricReport::compute(Task::Demand, variant, &actual_d, &pred_d)?,
        od: MetricReport::compute(Task::Od, variant, &actual_od, &pred_od)?,
        series,
    })
}

pub fn evaluate(predictor: &dyn Predictor, corpus: &Corpus, targets: &[SlotIndex]) -> Result<Evaluation> {
    let predictions = targets.iter().map(|&t| predictor.forecast(t)).collect::<Result<Vec<_>>>()?;
    score(corpus, &predictions, predictor.name())
}

/// Model evaluation of both the raw and the history-blended outputs.
pub struct ModelEvaluation {
    pub raw: Evaluation,
    pub blended: Evaluation,
    pub forecasts: Vec<ForecastResult>,
}

pub fn evaluate_model(model: &ModelForecaster<'_>, corpus: &Corpus, targets: &[SlotIndex]) -> Result<ModelEvaluation> {
    let forecasts = targets.iter().map(|&t| model.forecast_result(t)).collect::<Result<Vec<_>>>()?;
    let pick = |blended: bool| -> Vec<Prediction> {
        forecasts
            .iter()
            .map(|f| Prediction {
                target: f.target,
                demand: f.demand(blended).to_vec(),
                od: f.od(blended).clone(),
            })
            .collect()
    };
    Ok(ModelEvaluation {
        raw: score(corpus, &pick(false), "raw")?,
        blended: score(corpus, &pick(true), "blended")?,
        forecasts,
    })
}
