//! In-memory train-and-evaluate runs over a corpus.

use alloc::vec::Vec;

use crate::baselines::DemandAr;
use alloc::format;

use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_model, AutoRegressive, Evaluation, HistoricalAverage, ModelEvaluation, ModelForecaster};
use crate::ingest::{history_stats, Corpus, DegreeScaler, HistoryStats, SlotIndex};
use crate::model::FeatureStore;
use crate::params::{ModelDims, ModelParams};
use crate::spatial::DEFAULT_EPS_H;
use crate::temporal::TemporalWindowSpec;
use crate::train::{derive_seed, split, target_slots, train, EpochLoss, SplitPlan, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentConfig {
    pub dims: ModelDims,
    pub window: TemporalWindowSpec,
    pub train: TrainConfig,
    pub eps_h: f64,
    pub ar_order: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::default(),
            window: TemporalWindowSpec::default(),
            train: TrainConfig::default(),
            eps_h: DEFAULT_EPS_H,
            ar_order: crate::baselines::DEFAULT_AR_ORDER,
        }
    }
}

/// Everything derived from a corpus before training.
pub struct Prepared {
    pub plan: SplitPlan,
    pub scaler: DegreeScaler,
    pub history: HistoryStats,
    pub store: FeatureStore,
    pub train_targets: Vec<SlotIndex>,
    pub val_targets: Vec<SlotIndex>,
    pub test_targets: Vec<SlotIndex>,
}

pub fn prepare(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<Prepared> {
    prepare_with(corpus, cfg, split(corpus.days)?)
}

/// As [`prepare`] with an explicit day partition.
pub fn prepare_with(corpus: &Corpus, cfg: &ExperimentConfig, plan: SplitPlan) -> Result<Prepared> {
    if plan.train.is_empty() || plan.train.end > corpus.days || plan.test.end > corpus.days {
        return Err(Error::InvalidConfig(format!("split {plan:?} does not fit {} days", corpus.days)));
    }
    let spd = corpus.slots_per_day();
    let train_slots = &corpus.matrices()[plan.train.start * spd..plan.train.end * spd];
    let scaler = DegreeScaler::fit(train_slots);
    let history = history_stats(corpus, plan.train.clone())?;
    let store = FeatureStore::build(corpus, cfg.dims.z, cfg.eps_h, &scaler)?;
    let train_targets = target_slots(&store, plan.train.clone(), &cfg.window);
    let val_targets = target_slots(&store, plan.validation.clone(), &cfg.window);
    let test_targets = target_slots(&store, plan.test.clone(), &cfg.window);
    Ok(Prepared {
        plan,
        scaler,
        history,
        store,
        train_targets,
        val_targets,
        test_targets,
    })
}

pub struct ExperimentOutcome {
    pub prepared: Prepared,
    pub training: TrainOutcome,
    pub model: ModelEvaluation,
    pub havg: Evaluation,
}

pub fn initial_params(cfg: &ExperimentConfig) -> Result<ModelParams> {
    ModelParams::init(cfg.dims, derive_seed(cfg.train.seed, "init"))
}

/// Split, train from seeded initial parameters, then score the best
/// parameters and the historical average on the test days.
pub fn run(corpus: &Corpus, cfg: &ExperimentConfig, on_epoch: impl FnMut(&EpochLoss)) -> Result<ExperimentOutcome> {
    run_prepared(corpus, cfg, prepare(corpus, cfg)?, on_epoch)
}

pub fn run_prepared(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    prepared: Prepared,
    on_epoch: impl FnMut(&EpochLoss),
) -> Result<ExperimentOutcome> {
    let training = train(
        initial_params(cfg)?,
        &cfg.window,
        &prepared.store,
        &prepared.train_targets,
        &prepared.val_targets,
        &cfg.train,
        on_epoch,
    )?;
    let forecaster = ModelForecaster {
        params: &training.best,
        window: &cfg.window,
        store: &prepared.store,
        history: &prepared.history,
        lambda: cfg.train.lambda,
    };
    let model = evaluate_model(&forecaster, corpus, &prepared.test_targets)?;
    let havg = evaluate(&HistoricalAverage { history: &prepared.history }, corpus, &prepared.test_targets)?;
    Ok(ExperimentOutcome {
        prepared,
        training,
        model,
        havg,
    })
}

/// AR baseline fit on the training days and scored on the test days.
pub fn run_ar(corpus: &Corpus, prepared: &Prepared, order: usize) -> Result<Evaluation> {
    let ar = DemandAr::fit(corpus, prepared.plan.train.clone(), order)?;
    evaluate(
        &AutoRegressive {
            ar: &ar,
            corpus,
            history: &prepared.history,
        },
        corpus,
        &prepared.test_targets,
    )
}
