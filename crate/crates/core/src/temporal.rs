//! Four-channel temporal attention and the channel fusion step.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::ingest::{slots_per_day, SlotIndex};
use crate::params::ChannelIds;
use crate::tape::{Tape, Var};
use crate::tensor::{self, matmul_bt, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Channel {
    /// Same slot on each of the past N days.
    Linear = 0,
    /// One hour before the target slot on each of the past N days.
    Stpp = 1,
    /// One hour after the target slot on each of the past N days.
    Stpm = 2,
    /// The preceding h hours of the target day.
    Nonlinear = 3,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Linear, Channel::Stpp, Channel::Stpm, Channel::Nonlinear];

    pub fn name(self) -> &'static str {
        crate::params::CHANNEL_NAMES[self as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelFlags {
    pub linear: bool,
    pub stpp: bool,
    pub stpm: bool,
    pub nonlinear: bool,
}

impl Default for ChannelFlags {
    fn default() -> Self {
        Self {
            linear: true,
            stpp: true,
            stpm: true,
            nonlinear: true,
        }
    }
}

impl ChannelFlags {
    pub fn enabled(&self, c: Channel) -> bool {
        match c {
            Channel::Linear => self.linear,
            Channel::Stpp => self.stpp,
            Channel::Stpm => self.stpm,
            Channel::Nonlinear => self.nonlinear,
        }
    }

    pub fn active(&self) -> Vec<Channel> {
        Channel::ALL.into_iter().filter(|&c| self.enabled(c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TemporalWindowSpec {
    pub n_days: usize,
    pub h_hours: usize,
    pub granularity_min: usize,
    pub channels: ChannelFlags,
}

impl Default for TemporalWindowSpec {
    fn default() -> Self {
        Self {
            n_days: 5,
            h_hours: 6,
            granularity_min: 15,
            channels: ChannelFlags::default(),
        }
    }
}

impl TemporalWindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_days == 0 || self.h_hours == 0 {
            return Err(Error::InvalidConfig(format!(
                "temporal window needs n_days >= 1 and h_hours >= 1, got {} and {}",
                self.n_days, self.h_hours
            )));
        }
        if self.channels.active().is_empty() {
            return Err(Error::InvalidConfig("at least one temporal channel must be enabled".into()));
        }
        slots_per_day(self.granularity_min)?;
        Ok(())
    }

    /// Slots spanning one hour, rounded up so that coarse slots (over an hour)
    /// step back to the slot holding the instant one hour earlier.
    pub fn slots_per_hour(&self) -> usize {
        60usize.div_ceil(self.granularity_min)
    }

    /// Same-day slots covering the last `h_hours`, rounded up.
    pub fn recent_depth(&self) -> usize {
        (self.h_hours * 60).div_ceil(self.granularity_min)
    }
}

/// Past slots feeding one channel for a target slot, nearest first.
///
/// Day channels skip days before day 0; hour-shifted slots that fall outside
/// the day are dropped; the recent channel stops at the start of the day.
pub fn gather_channel_slots(target: SlotIndex, spec: &TemporalWindowSpec, channel: Channel) -> Vec<SlotIndex> {
    let sph = spec.slots_per_hour();
    let spd = 1440 / spec.granularity_min;
    let past_days = (1..=spec.n_days).filter_map(|k| target.day.checked_sub(k));
    match channel {
        Channel::Linear => past_days.map(|d| SlotIndex::new(d, target.slot)).collect(),
        Channel::Stpp => match target.slot.checked_sub(sph) {
            Some(s) => past_days.map(|d| SlotIndex::new(d, s)).collect(),
            None => Vec::new(),
        },
        Channel::Stpm => {
            let s = target.slot + sph;
            if s < spd {
                past_days.map(|d| SlotIndex::new(d, s)).collect()
            } else {
                Vec::new()
            }
        }
        Channel::Nonlinear => {
            let depth = spec.recent_depth().min(target.slot);
            (1..=depth).map(|k| SlotIndex::new(target.day, target.slot - k)).collect()
        }
    }
}

/// `softmax((E_q W_Qᵀ)(E_kv W_Kᵀ)ᵀ / √z') · (E_kv W_Vᵀ)`, rows of `E` being nodes.
pub fn scaled_dot_attention(
    query: &Tensor2,
    key_value: &Tensor2,
    w_q: &Tensor2,
    w_k: &Tensor2,
    w_v: &Tensor2,
) -> Result<Tensor2> {
    if query.shape() != key_value.shape() {
        return Err(shape_err(
            "scaled_dot_attention",
            format!("query {:?} vs key/value {:?}", query.shape(), key_value.shape()),
        ));
    }
    let q = matmul_bt(query, w_q)?;
    let k = matmul_bt(key_value, w_k)?;
    let v = matmul_bt(key_value, w_v)?;
    let scale = 1.0 / libm::sqrt(q.cols() as f64);
    let s = matmul_bt(&q, &k)?.scale(scale);
    let mut w = Tensor2::zeros(s.rows(), s.cols());
    for r in 0..s.rows() {
        w.row_mut(r).copy_from_slice(&tensor::softmax(s.row(r)));
    }
    tensor::matmul(&w, &v)
}

/// Mean of the attention outputs of `query` against each past slot; zero
/// when there is none.
pub fn channel_embed(query: &Tensor2, past: &[&Tensor2], w_q: &Tensor2, w_k: &Tensor2, w_v: &Tensor2) -> Result<Tensor2> {
    let mut acc = Tensor2::zeros(query.rows(), w_v.rows());
    for kv in past {
        acc.add_assign(&scaled_dot_attention(query, kv, w_q, w_k, w_v)?);
    }
    if past.is_empty() {
        return Ok(acc);
    }
    Ok(acc.scale(1.0 / past.len() as f64))
}

/// Per-node self-attention over the sequence of channel embeddings, then a
/// mean over the sequence. Values are the channel embeddings themselves.
pub fn fuse_channels(channels: &[&Tensor2], w_q: &Tensor2, w_k: &Tensor2) -> Result<Tensor2> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidConfig("fusion needs at least one channel".into()))?;
    let (n, h) = first.shape();
    if let Some(bad) = channels.iter().find(|c| c.shape() != (n, h)) {
        return Err(shape_err("fuse_channels", format!("{:?} vs {:?}", bad.shape(), (n, h))));
    }
    let qs = channels.iter().map(|c| matmul_bt(c, w_q)).collect::<Result<Vec<_>>>()?;
    let ks = channels.iter().map(|c| matmul_bt(c, w_k)).collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / libm::sqrt(h as f64);
    let m = channels.len();
    let mut out = Tensor2::zeros(n, h);
    for i in 0..n {
        for a in 0..m {
            let scores: Vec<f64> = (0..m).map(|b| tensor::dot(qs[a].row(i), ks[b].row(i)) * scale).collect();
            let w = tensor::softmax(&scores);
            for (b, wb) in w.iter().enumerate() {
                for (o, x) in out.row_mut(i).iter_mut().zip(channels[b].row(i)) {
                    *o += wb * x / m as f64;
                }
            }
        }
    }
    Ok(out)
}

/// Tape form of [`scaled_dot_attention`].
pub fn attention_tape(tape: &mut Tape<'_>, query: Var, key_value: Var, ids: &ChannelIds, params: &[Var]) -> Var {
    let q = tape.matmul_bt(query, params[ids.w_q]);
    let k = tape.matmul_bt(key_value, params[ids.w_k]);
    let v = tape.matmul_bt(key_value, params[ids.w_v]);
    let scale = 1.0 / libm::sqrt(tape.value(q).cols() as f64);
    let s = tape.matmul_bt(q, k);
    let s = tape.scale(s, scale);
    let w = tape.row_softmax(s);
    tape.matmul(w, v)
}

/// Tape form of [`channel_embed`]. Returns `None` for an empty gather list;
/// the caller substitutes a zero constant.
pub fn channel_embed_tape(tape: &mut Tape<'_>, query: Var, past: &[Var], ids: &ChannelIds, params: &[Var]) -> Option<Var> {
    if past.is_empty() {
        return None;
    }
    let outs: Vec<Var> = past.iter().map(|&kv| attention_tape(tape, query, kv, ids, params)).collect();
    Some(tape.mean(&outs))
}

/// Tape form of [`fuse_channels`].
pub fn fuse_tape(tape: &mut Tape<'_>, channels: &[Var], w_q: Var, w_k: Var) -> Var {
    assert!(!channels.is_empty(), "fusion needs at least one channel");
    let h = tape.value(channels[0]).cols();
    let scale = 1.0 / libm::sqrt(h as f64);
    let qs: Vec<Var> = channels.iter().map(|&c| tape.matmul_bt(c, w_q)).collect();
    let ks: Vec<Var> = channels.iter().map(|&c| tape.matmul_bt(c, w_k)).collect();
    let m = channels.len();
    let mut outs = Vec::with_capacity(m);
    for &q in &qs {
        let cols: Vec<Var> = ks.iter().map(|&k| tape.row_dot(q, k)).collect();
        let s = tape.concat_cols(&cols);
        let s = tape.scale(s, scale);
        let w = tape.row_softmax(s);
        let terms: Vec<(Var, f64)> = (0..m)
            .map(|b| {
                let wb = tape.slice_cols(w, b, 1);
                (tape.scale_rows(wb, channels[b]), 1.0)
            })
            .collect();
        outs.push(tape.weighted_sum(&terms));
    }
    tape.mean(&outs)
}
