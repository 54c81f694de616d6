//! Demand head, transferring probabilities and OD reconstruction.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::ingest::SlotIndex;
use crate::params::ModelParams;
use crate::tape::{Tape, Var};
use crate::tensor::{self, dot, leaky_relu, softplus, Tensor2};

/// Default weight of the model output when blending with history.
pub const DEFAULT_LAMBDA: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub target: SlotIndex,
    pub raw_demand: Vec<f64>,
    pub transfer_probs: Tensor2,
    pub raw_od: Tensor2,
    pub blended_demand: Vec<f64>,
    pub blended_od: Tensor2,
}

impl ForecastResult {
    pub fn new(target: SlotIndex, raw_demand: Vec<f64>, transfer_probs: Tensor2, history_demand: &[f64], history_od: &Tensor2, lambda: f64) -> Result<Self> {
        let raw_od = od_from_demand(&raw_demand, &transfer_probs)?;
        let blended_demand = blend_with_history(&raw_demand, history_demand, lambda)?;
        let blended = blend_with_history(raw_od.as_slice(), history_od.as_slice(), lambda)?;
        let blended_od = Tensor2::from_vec(raw_od.rows(), raw_od.cols(), blended)?;
        Ok(Self {
            target,
            raw_demand,
            transfer_probs,
            raw_od,
            blended_demand,
            blended_od,
        })
    }

    pub fn demand(&self, blended: bool) -> &[f64] {
        if blended {
            &self.blended_demand
        } else {
            &self.raw_demand
        }
    }

    pub fn od(&self, blended: bool) -> &Tensor2 {
        if blended {
            &self.blended_od
        } else {
            &self.raw_od
        }
    }
}

/// `softplus(w2 · LeakyReLU(W1 x + b1) + b2)` per node.
pub fn demand_head(fused: &Tensor2, params: &ModelParams) -> Result<Vec<f64>> {
    let l = &params.layout;
    let w1 = &params.tensors[l.head_w1];
    let b1 = &params.tensors[l.head_b1];
    let w2 = &params.tensors[l.head_w2];
    let b2 = params.tensors[l.head_b2][(0, 0)];
    if fused.cols() != w1.cols() {
        return Err(shape_err("demand_head", format!("embeddings {:?}, W1 {:?}", fused.shape(), w1.shape())));
    }
    let slope = params.dims.leaky_slope;
    Ok((0..fused.rows())
        .map(|i| {
            let hidden: Vec<f64> = (0..w1.rows())
                .map(|r| leaky_relu(dot(w1.row(r), fused.row(i)) + b1[(0, r)], slope))
                .collect();
            softplus(dot(w2.row(0), &hidden) + b2)
        })
        .collect())
}

/// Row-wise softmax of `LeakyReLU(aᵀ[W e_i ⊕ W e_j])` over destinations `j`.
pub fn transfer_probs(emb: &Tensor2, params: &ModelParams) -> Result<Tensor2> {
    let l = &params.layout;
    let w = &params.tensors[l.transfer_w];
    let a = params.tensors[l.transfer_a].as_slice();
    let hw = tensor::matmul_bt(emb, w)?;
    let h = hw.cols();
    let (a_o, a_d) = a.split_at(h);
    let u: Vec<f64> = (0..hw.rows()).map(|i| dot(a_o, hw.row(i))).collect();
    let v: Vec<f64> = (0..hw.rows()).map(|j| dot(a_d, hw.row(j))).collect();
    let n = emb.rows();
    let mut p = Tensor2::zeros(n, n);
    for i in 0..n {
        let s: Vec<f64> = v.iter().map(|&vj| leaky_relu(u[i] + vj, params.dims.leaky_slope)).collect();
        p.row_mut(i).copy_from_slice(&tensor::softmax(&s));
    }
    Ok(p)
}

/// `Δ̂_ij = δ̂_i · p_ij`.
pub fn od_from_demand(demand: &[f64], probs: &Tensor2) -> Result<Tensor2> {
    if probs.rows() != demand.len() {
        return Err(Error::LengthMismatch { left: demand.len(), right: probs.rows() });
    }
    let mut od = probs.clone();
    for (i, &d) in demand.iter().enumerate() {
        for x in od.row_mut(i) {
            *x *= d;
        }
    }
    Ok(od)
}

/// `λ · raw + (1 − λ) · history`, elementwise.
pub fn blend_with_history(raw: &[f64], history: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("blend weight must lie in [0, 1], got {lambda}")));
    }
    if raw.len() != history.len() {
        return Err(Error::LengthMismatch { left: raw.len(), right: history.len() });
    }
    Ok(raw.iter().zip(history).map(|(r, h)| lambda * r + (1.0 - lambda) * h).collect())
}

/// Tape form of [`demand_head`]; returns `n × 1`.
pub fn demand_head_tape(tape: &mut Tape<'_>, fused: Var, params: &[Var], model: &ModelParams) -> Var {
    let l = &model.layout;
    let h = tape.matmul_bt(fused, params[l.head_w1]);
    let h = tape.add_row(h, params[l.head_b1]);
    let h = tape.leaky_relu(h, model.dims.leaky_slope);
    let o = tape.matmul_bt(h, params[l.head_w2]);
    let o = tape.add_row(o, params[l.head_b2]);
    tape.softplus(o)
}

/// Tape form of [`transfer_probs`]; returns `n × n`.
pub fn transfer_probs_tape(tape: &mut Tape<'_>, emb: Var, params: &[Var], model: &ModelParams) -> Var {
    let l = &model.layout;
    let h = model.dims.hidden;
    let hw = tape.matmul_bt(emb, params[l.transfer_w]);
    let a_o = tape.slice_rows(params[l.transfer_a], 0, h);
    let a_d = tape.slice_rows(params[l.transfer_a], h, h);
    let u = tape.matmul(hw, a_o);
    let v = tape.matmul(hw, a_d);
    let s = tape.pair_score(u, v, None);
    let s = tape.leaky_relu(s, model.dims.leaky_slope);
    tape.row_softmax(s)
}
