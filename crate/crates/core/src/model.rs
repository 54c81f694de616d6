//! The full forecaster: spatial layer per slot, four temporal channels,
//! fusion, demand head and transferring attention.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geo::DistanceGraph;
use crate::ingest::{init_embeddings, Corpus, DegreeScaler, GraphSnapshot, SlotIndex, SlotTime};
use crate::params::{GradientSet, ModelParams};
use crate::spatial::{spatial_forward, NeighborMatrices, SlotFeatures};
use crate::tape::{Tape, Var};
use crate::temporal::{channel_embed_tape, fuse_tape, gather_channel_slots, TemporalWindowSpec};
use crate::transfer::{demand_head_tape, transfer_probs_tape};

/// Relative weights of the demand and OD terms of the training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub demand: f64,
    pub od: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { demand: 1.0, od: 1.0 }
    }
}

/// Constants of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotData {
    /// Embeddings and neighbour matrices built from the slot's own orders.
    pub observed: SlotFeatures,
    /// Embeddings used when the slot is the forecast target: its own time
    /// features with the degrees of the previous slot.
    pub query_embeddings: crate::Tensor2,
    /// Observed demand, `n × 1`.
    pub demand: crate::Tensor2,
    /// Observed OD counts, `n × n`.
    pub od: crate::Tensor2,
}

/// Precomputed per-slot inputs and targets for a whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub n: usize,
    pub days: usize,
    pub slots_per_day: usize,
    pub geo: NeighborMatrices,
    pub empty: NeighborMatrices,
    pub slots: Vec<SlotData>,
}

impl FeatureStore {
    pub fn build(corpus: &Corpus, z: usize, eps_h: f64, scaler: &DegreeScaler) -> Result<Self> {
        let n = corpus.n();
        let spd = corpus.slots_per_day();
        let dist = DistanceGraph::for_grid(&corpus.grid)?;
        let geo = NeighborMatrices::geographic(&dist, corpus.grid.threshold_km())?;
        let mut slots = Vec::with_capacity(corpus.matrices().len());
        let mut prev: Option<GraphSnapshot> = None;
        for m in corpus.matrices() {
            let idx = SlotIndex::new(m.day, m.slot);
            let time = SlotTime {
                slot: m.slot,
                slots_per_day: spd,
                weekday: corpus.weekday(m.day),
            };
            let snap = GraphSnapshot::new(m);
            let observed = init_embeddings(&snap.in_degree, &snap.out_degree, &corpus.grid, z, time, scaler)?;
            let zeros = alloc::vec![0.0; n];
            let query_embeddings = match (&prev, corpus.previous(idx)) {
                (Some(p), Some(_)) => init_embeddings(&p.in_degree, &p.out_degree, &corpus.grid, z, time, scaler)?,
                _ => init_embeddings(&zeros, &zeros, &corpus.grid, z, time, scaler)?,
            };
            let demand = crate::Tensor2::column(&m.demand());
            let od = snap.od.clone();
            slots.push(SlotData {
                observed: SlotFeatures::new(observed, &snap, eps_h),
                query_embeddings,
                demand,
                od,
            });
            prev = Some(snap);
        }
        Ok(Self {
            n,
            days: corpus.days,
            slots_per_day: spd,
            geo,
            empty: NeighborMatrices::empty(n),
            slots,
        })
    }

    fn offset(&self, idx: SlotIndex) -> Option<usize> {
        (idx.day < self.days && idx.slot < self.slots_per_day).then(|| idx.day * self.slots_per_day + idx.slot)
    }

    pub fn contains(&self, idx: SlotIndex) -> bool {
        self.offset(idx).is_some()
    }

    pub fn slot(&self, idx: SlotIndex) -> Option<&SlotData> {
        self.offset(idx).map(|o| &self.slots[o])
    }

    fn previous(&self, idx: SlotIndex) -> Option<&SlotData> {
        let o = self.offset(idx)?;
        o.checked_sub(1).map(|p| &self.slots[p])
    }

    fn require(&self, idx: SlotIndex) -> Result<&SlotData> {
        self.slot(idx).ok_or(Error::SlotOutOfRange { day: idx.day, slot: idx.slot })
    }
}

/// Tape variables of one forecast.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// `n × 1` demand.
    pub demand: Var,
    /// `n × n` transferring probabilities.
    pub probs: Var,
    /// `n × n` OD flows.
    pub od: Var,
}

/// Spatial-layer outputs already recorded on a tape, keyed by slot.
pub type SpatialCache = BTreeMap<SlotIndex, Var>;

fn observed_spatial<'a>(
    tape: &mut Tape<'a>,
    vars: &[Var],
    params: &ModelParams,
    store: &'a FeatureStore,
    idx: SlotIndex,
    cache: &mut SpatialCache,
) -> Result<Var> {
    if let Some(&v) = cache.get(&idx) {
        return Ok(v);
    }
    let s = store.require(idx)?;
    let f = &s.observed;
    let v = spatial_forward(tape, vars, params, &f.embeddings, &f.forward, &f.backward, &store.geo);
    cache.insert(idx, v);
    Ok(v)
}

/// Record one forecast of `target` on the tape.
pub fn forward<'a>(
    tape: &mut Tape<'a>,
    vars: &[Var],
    params: &ModelParams,
    window: &TemporalWindowSpec,
    store: &'a FeatureStore,
    target: SlotIndex,
    cache: &mut SpatialCache,
) -> Result<Outputs> {
    if vars.len() != params.tensors.len() {
        return Err(Error::InvalidConfig(format!(
            "{} tape variables for {} parameter tensors",
            vars.len(),
            params.tensors.len()
        )));
    }
    let t = store.require(target)?;
    let (fwd, bwd) = match store.previous(target) {
        Some(p) => (&p.observed.forward, &p.observed.backward),
        None => (&store.empty, &store.empty),
    };
    let query = spatial_forward(tape, vars, params, &t.query_embeddings, fwd, bwd, &store.geo);

    let mut channels = Vec::with_capacity(4);
    for c in window.channels.active() {
        let past: Vec<SlotIndex> = gather_channel_slots(target, window, c)
            .into_iter()
            .filter(|s| store.contains(*s))
            .collect();
        let mut kv = Vec::with_capacity(past.len());
        for s in past {
            kv.push(observed_spatial(tape, vars, params, store, s, cache)?);
        }
        let ids = &params.layout.channels[c as usize];
        let v = match channel_embed_tape(tape, query, &kv, ids, vars) {
            Some(v) => v,
            None => tape.constant_owned(crate::Tensor2::zeros(store.n, params.dims.hidden)),
        };
        channels.push(v);
    }
    let l = &params.layout;
    let fused = fuse_tape(tape, &channels, vars[l.fuse_q], vars[l.fuse_k]);
    let demand = demand_head_tape(tape, fused, vars, params);
    let probs = transfer_probs_tape(tape, fused, vars, params);
    let od = tape.scale_rows(demand, probs);
    Ok(Outputs { demand, probs, od })
}

/// `w_d · SmoothL1(δ̂, δ) + w_od · SmoothL1(Δ̂, Δ)` for one target.
pub fn loss_term<'a>(tape: &mut Tape<'a>, out: &Outputs, store: &'a FeatureStore, target: SlotIndex, weights: &LossWeights) -> Result<Var> {
    let t = store.require(target)?;
    let ld = tape.smooth_l1_mean(out.demand, &t.demand);
    let lo = tape.smooth_l1_mean(out.od, &t.od);
    Ok(tape.weighted_sum(&[(ld, weights.demand), (lo, weights.od)]))
}

fn batch_tape<'a>(
    tape: &mut Tape<'a>,
    params: &'a ModelParams,
    window: &TemporalWindowSpec,
    store: &'a FeatureStore,
    targets: &[SlotIndex],
    weights: &LossWeights,
) -> Result<(Vec<Var>, Var)> {
    if targets.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.borrowed(t)).collect();
    let mut cache = SpatialCache::new();
    let share = 1.0 / targets.len() as f64;
    let mut terms = Vec::with_capacity(targets.len());
    for &t in targets {
        let out = forward(tape, &vars, params, window, store, t, &mut cache)?;
        terms.push((loss_term(tape, &out, store, t, weights)?, share));
    }
    let loss = tape.weighted_sum(&terms);
    Ok((vars, loss))
}

/// Mean loss over `targets`.
pub fn batch_loss(params: &ModelParams, window: &TemporalWindowSpec, store: &FeatureStore, targets: &[SlotIndex], weights: &LossWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let (_, loss) = batch_tape(&mut tape, params, window, store, targets, weights)?;
    Ok(tape.scalar(loss))
}

/// Mean loss over `targets` and its gradient with respect to every parameter.
pub fn batch_gradient(
    params: &ModelParams,
    window: &TemporalWindowSpec,
    store: &FeatureStore,
    targets: &[SlotIndex],
    weights: &LossWeights,
) -> Result<(f64, GradientSet)> {
    let mut tape = Tape::new();
    let (vars, loss) = batch_tape(&mut tape, params, window, store, targets, weights)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: format!("batch starting at {:?}", targets[0]),
        });
    }
    let mut grads = tape.backward(loss);
    let out = vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| crate::Tensor2::zeros(p.rows(), p.cols())))
        .collect();
    Ok((value, out))
}

/// Raw model demand and transferring probabilities for one target.
pub fn predict(params: &ModelParams, window: &TemporalWindowSpec, store: &FeatureStore, target: SlotIndex) -> Result<(Vec<f64>, crate::Tensor2)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.constant(t)).collect();
    let mut cache = SpatialCache::new();
    let out = forward(&mut tape, &vars, params, window, store, target, &mut cache)?;
    Ok((tape.value(out.demand).as_slice().to_vec(), tape.value(out.probs).clone()))
}
