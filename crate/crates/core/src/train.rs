//! Training loop, optimizers, chronological split and seed derivation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::SlotIndex;
use crate::model::{batch_gradient, batch_loss, FeatureStore, LossWeights};
use crate::params::{GradientSet, ModelParams};
use crate::tape::smooth_l1_value;
use crate::temporal::TemporalWindowSpec;
use crate::tensor::Tensor2;

/// Derive an independent seed for a named consumer of a root seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finaliser.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut x = root ^ h;
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// `0.5 d²` for `|d| < 1`, else `|d| − 0.5`, with `d = x − y`.
pub fn smooth_l1(x: f64, y: f64) -> f64 {
    smooth_l1_value(x - y)
}

/// Weighted sum of the mean Smooth-L1 over demand entries and over OD entries.
pub fn forecast_loss(
    pred_demand: &[f64],
    demand: &[f64],
    pred_od: &Tensor2,
    od: &Tensor2,
    weights: &LossWeights,
) -> Result<f64> {
    if pred_demand.len() != demand.len() {
        return Err(Error::LengthMismatch { left: pred_demand.len(), right: demand.len() });
    }
    if pred_od.shape() != od.shape() {
        return Err(Error::LengthMismatch { left: pred_od.len(), right: od.len() });
    }
    let mean = |a: &[f64], b: &[f64]| {
        if a.is_empty() {
            0.0
        } else {
            a.iter().zip(b).map(|(x, y)| smooth_l1(*x, *y)).sum::<f64>() / a.len() as f64
        }
    };
    Ok(weights.demand * mean(pred_demand, demand) + weights.od * mean(pred_od.as_slice(), od.as_slice()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    /// Target slots per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Blend weight of the model output against history at evaluation.
    pub lambda: f64,
    pub loss_weights: LossWeights,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 2,
            learning_rate: 0.001,
            seed: 0,
            lambda: crate::transfer::DEFAULT_LAMBDA,
            loss_weights: LossWeights::default(),
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "epochs and batch_size must be positive, got {} and {}",
                self.epochs, self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        let w = &self.loss_weights;
        if w.demand < 0.0 || w.od < 0.0 || !(w.demand + w.od > 0.0) {
            return Err(Error::InvalidConfig(format!("loss weights must be non-negative with a positive sum, got {w:?}")));
        }
        Ok(())
    }
}

/// Chronological day ranges: `floor(0.8 d)` training days, `floor(0.1 d)`
/// validation days, the remainder for test.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitPlan {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

pub const MIN_SPLIT_DAYS: usize = 10;

impl SplitPlan {
    /// Every day in training, nothing held out. For corpora too short to split.
    pub fn train_only(days: usize) -> Self {
        Self {
            train: 0..days,
            validation: days..days,
            test: days..days,
        }
    }
}

pub fn split(days: usize) -> Result<SplitPlan> {
    if days < MIN_SPLIT_DAYS {
        return Err(Error::InsufficientData(format!(
            "a chronological split needs at least {MIN_SPLIT_DAYS} days, got {days}"
        )));
    }
    let train = days * 8 / 10;
    let val = days / 10;
    Ok(SplitPlan {
        train: 0..train,
        validation: train..train + val,
        test: train + val..days,
    })
}

/// Every slot of `days` whose day-based channels have full history.
pub fn target_slots(store: &FeatureStore, days: Range<usize>, window: &TemporalWindowSpec) -> Vec<SlotIndex> {
    let first = days.start.max(window.n_days);
    (first..days.end.min(store.days))
        .flat_map(|d| (0..store.slots_per_day).map(move |s| SlotIndex::new(d, s)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (the last epoch's when
    /// there is no validation set).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub trace: Vec<EpochLoss>,
}

struct AdamState {
    m: GradientSet,
    v: GradientSet,
    step: i32,
}

fn apply_step(params: &mut ModelParams, grads: &GradientSet, cfg: &TrainConfig, state: &mut Option<AdamState>) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.tensors.iter_mut().zip(grads) {
                for (x, d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *x -= lr * d;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let s = state.get_or_insert_with(|| AdamState {
                m: params.zeros_like(),
                v: params.zeros_like(),
                step: 0,
            });
            s.step += 1;
            let c1 = 1.0 - libm::pow(beta1, s.step as f64);
            let c2 = 1.0 - libm::pow(beta2, s.step as f64);
            for (k, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
                let (m, v) = (s.m[k].as_mut_slice(), s.v[k].as_mut_slice());
                for (e, (x, d)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                    m[e] = beta1 * m[e] + (1.0 - beta1) * d;
                    v[e] = beta2 * v[e] + (1.0 - beta2) * d * d;
                    let mh = m[e] / c1;
                    let vh = v[e] / c2;
                    *x -= lr * mh / (libm::sqrt(vh) + eps);
                }
            }
        }
    }
}

fn describe(targets: &[SlotIndex]) -> String {
    let list: Vec<String> = targets.iter().map(|t| format!("day {} slot {}", t.day, t.slot)).collect();
    list.join(", ")
}

/// Train from `init`, shuffling `train` targets each epoch with a seed
/// derived from `cfg.seed`.
///
/// `on_epoch` observes each epoch's losses as they are produced.
pub fn train(
    init: ModelParams,
    window: &TemporalWindowSpec,
    store: &FeatureStore,
    train: &[SlotIndex],
    validation: &[SlotIndex],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    window.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("no training target slots".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut params = init;
    let mut state = None;
    let mut order: Vec<SlotIndex> = train.to_vec();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradient(&params, window, store, batch, &cfg.loss_weights).map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss {
                    context: format!("epoch {epoch}, batch [{}]", describe(batch)),
                },
                other => other,
            })?;
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    context: format!("non-finite gradient at epoch {epoch}, batch [{}]", describe(batch)),
                });
            }
            total += loss * batch.len() as f64;
            apply_step(&mut params, &grads, cfg, &mut state);
        }
        let train_loss = total / order.len() as f64;
        let val_loss = if validation.is_empty() {
            None
        } else {
            let v = batch_loss(&params, window, store, validation, &cfg.loss_weights)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("validation loss at epoch {epoch}"),
                });
            }
            Some(v)
        };
        let record = EpochLoss { epoch, train_loss, val_loss };
        on_epoch(&record);
        trace.push(record);
        let score = val_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(b, _, _)| score < *b || val_loss.is_none()) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GridSpec;
    use crate::ingest::{Corpus, DegreeScaler, SlotODMatrix};
    use crate::params::ModelDims;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.5, 0.0), 0.125);
        assert_eq!(smooth_l1(0.0, 2.0), 1.5);
        assert_eq!(smooth_l1(1.0, 0.0), 0.5);
    }

    #[test]
    fn smooth_l1_is_c1_at_the_kink() {
        // a power-of-two step keeps both one-sided quotients exact
        let h = libm::ldexp(1.0, -30);
        let left = (smooth_l1(1.0, 0.0) - smooth_l1(1.0 - h, 0.0)) / h;
        let right = (smooth_l1(1.0 + h, 0.0) - smooth_l1(1.0, 0.0)) / h;
        assert!((left - right).abs() < 1e-9, "{left} vs {right}");
        assert_eq!(smooth_l1(1.0, 0.0), 0.5);
    }

    #[test]
    fn smooth_l1_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (x, y): (f64, f64) = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let d = (x - y).abs();
            let expect = if d < 1.0 { 0.5 * d * d } else { d - 0.5 };
            assert_eq!(smooth_l1(x, y), expect);
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(split(10).unwrap(), SplitPlan { train: 0..8, validation: 8..9, test: 9..10 });
        let s = split(20).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (16, 2, 2));
        let s = split(13).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (10, 1, 2));
        assert!(split(9).is_err());
    }

    proptest! {
        #[test]
        fn split_is_chronological_and_disjoint(days in 10usize..400) {
            let s = split(days).unwrap();
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.validation.start);
            prop_assert_eq!(s.validation.end, s.test.start);
            prop_assert_eq!(s.test.end, days);
            prop_assert!(!s.validation.is_empty() && !s.test.is_empty());
        }

        #[test]
        fn loss_is_non_negative(x in -50.0f64..50.0, y in -50.0f64..50.0) {
            prop_assert!(smooth_l1(x, y) >= 0.0);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(7, "shuffle"), derive_seed(7, "shuffle"));
    }

    fn tiny() -> (FeatureStore, TemporalWindowSpec, Vec<SlotIndex>) {
        let grid = GridSpec::new(30.0, 120.0, 2.5, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ms = Vec::new();
        for d in 0..3 {
            for s in 0..24 {
                let t: Vec<_> = (0..rng.random_range(0..6)).map(|_| (rng.random_range(0..4), rng.random_range(0..4), rng.random_range(1..3))).collect();
                ms.push(SlotODMatrix::from_triples(d, s, 4, &t).unwrap());
            }
        }
        let c = Corpus::new(grid, 60, 0, 3, ms).unwrap();
        let store = FeatureStore::build(&c, 13, 1e-6, &DegreeScaler::fit(c.matrices())).unwrap();
        let window = TemporalWindowSpec { n_days: 1, h_hours: 2, granularity_min: 60, ..Default::default() };
        let targets = target_slots(&store, 0..3, &window);
        (store, window, targets)
    }

    fn dims() -> ModelDims {
        ModelDims { z: 13, hidden: 6, heads: 2, leaky_slope: 0.2 }
    }

    #[test]
    fn targets_skip_days_without_history() {
        let (_, _, targets) = tiny();
        assert_eq!(targets.len(), 48);
        assert!(targets.iter().all(|t| t.day >= 1));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (store, window, targets) = tiny();
        let p = ModelParams::init(dims(), 1).unwrap();
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, ..Default::default() };
        let out = train(p.clone(), &window, &store, &targets[..6], &targets[6..8], &cfg, |_| {}).unwrap();
        assert_eq!(out.last, p);
        let vals: Vec<_> = out.trace.iter().map(|e| e.val_loss.unwrap()).collect();
        assert!(vals.iter().all(|&v| v == vals[0]));
        let tr: Vec<_> = out.trace.iter().map(|e| e.train_loss).collect();
        assert!(tr.iter().all(|&v| (v - tr[0]).abs() < 1e-12));
    }

    #[test]
    fn training_is_deterministic() {
        let (store, window, targets) = tiny();
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.01, seed: 9, ..Default::default() };
        let run = || train(ModelParams::init(dims(), 2).unwrap(), &window, &store, &targets[..10], &targets[10..12], &cfg, |_| {}).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.best, b.best);
        assert!(a.trace.iter().all(|e| e.train_loss.to_bits() == b.trace[e.epoch - 1].train_loss.to_bits()));
    }

    #[test]
    fn small_gradient_steps_do_not_increase_batch_loss() {
        let (store, window, targets) = tiny();
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = TrainConfig { learning_rate: 1e-5, optimizer: Optimizer::Sgd, ..Default::default() };
        for _ in 0..20 {
            let p = ModelParams::init(dims(), rng.random()).unwrap();
            let batch: Vec<SlotIndex> = (0..2).map(|_| targets[rng.random_range(0..targets.len())]).collect();
            let (before, g) = batch_gradient(&p, &window, &store, &batch, &w).unwrap();
            let mut q = p.clone();
            apply_step(&mut q, &g, &cfg, &mut None);
            let after = batch_loss(&q, &window, &store, &batch, &w).unwrap();
            assert!(after <= before, "{after} > {before}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { loss_weights: LossWeights { demand: 0.0, od: 0.0 }, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lambda: 2.0, ..Default::default() }.validate().is_err());
    }
}
