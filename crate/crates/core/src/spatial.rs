//! Spatial attention over forward, backward and geographical neighbours.
//!
//! The per-node functions ([`attention_score`], [`normalize_scores`],
//! [`aggregate`], [`multi_head_spatial`]) are straight-line reference
//! implementations. [`spatial_forward`] evaluates the same layer for all
//! nodes of a slot at once on a [`Tape`] so that it can be differentiated.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::geo::{geo_neighbors, DistanceGraph};
use crate::ingest::GraphSnapshot;
use crate::params::ModelParams;
use crate::tape::{Tape, Var};
use crate::tensor::{self, dot, leaky_relu, sigmoid, Tensor2};

/// Smoothing constant `h` of the request-intensity pre-weights.
pub const DEFAULT_EPS_H: f64 = 1e-6;

/// Neighbour kinds, in the block order of the aggregated embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborKind {
    Forward = 0,
    Backward = 1,
    Geographic = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSets {
    pub forward: Vec<Vec<usize>>,
    pub backward: Vec<Vec<usize>>,
    pub geographic: Vec<Vec<usize>>,
}

impl NeighborSets {
    pub fn of(&self, kind: NeighborKind) -> &[Vec<usize>] {
        match kind {
            NeighborKind::Forward => &self.forward,
            NeighborKind::Backward => &self.backward,
            NeighborKind::Geographic => &self.geographic,
        }
    }
}

pub fn neighbor_sets(snapshot: &GraphSnapshot, dist: &DistanceGraph, threshold_km: f64) -> Result<NeighborSets> {
    let n = snapshot.n();
    if dist.n() != n {
        return Err(shape_err("neighbor_sets", format!("OD over {n} cells, distances over {}", dist.n())));
    }
    Ok(NeighborSets {
        forward: snapshot.forward.clone(),
        backward: snapshot.backward.clone(),
        geographic: (0..n).map(|i| geo_neighbors(i, dist, threshold_km)).collect(),
    })
}

/// Prior weights of one node's neighbours, as `(neighbour, weight)` pairs in
/// the order of the corresponding neighbour set.
#[derive(Debug, Clone, PartialEq)]
pub struct PreWeights {
    pub alpha: Vec<(usize, f64)>,
    pub beta: Vec<(usize, f64)>,
    pub gamma: Vec<(usize, f64)>,
}

impl PreWeights {
    pub fn of(&self, kind: NeighborKind) -> &[(usize, f64)] {
        match kind {
            NeighborKind::Forward => &self.alpha,
            NeighborKind::Backward => &self.beta,
            NeighborKind::Geographic => &self.gamma,
        }
    }
}

/// `α_j = Δ_ij / (Σ_F Δ_ik + h)`, `β_j = Δ_ji / (Σ_B Δ_ki + h)`,
/// `γ_j = d_ij⁻¹ / Σ_Q d_ik⁻¹`.
pub fn pre_weights(i: usize, sets: &NeighborSets, od: &Tensor2, dist: &DistanceGraph, eps_h: f64) -> Result<PreWeights> {
    if !(eps_h > 0.0) {
        return Err(Error::InvalidConfig(format!("eps_h must be positive, got {eps_h}")));
    }
    let fwd = &sets.forward[i];
    let out_total: f64 = fwd.iter().map(|&k| od[(i, k)]).sum();
    let alpha = fwd.iter().map(|&j| (j, od[(i, j)] / (out_total + eps_h))).collect();

    let bwd = &sets.backward[i];
    let in_total: f64 = bwd.iter().map(|&k| od[(k, i)]).sum();
    let beta = bwd.iter().map(|&j| (j, od[(j, i)] / (in_total + eps_h))).collect();

    let geo = &sets.geographic[i];
    let mut inv = Vec::with_capacity(geo.len());
    for &j in geo {
        let d = dist.get(i, j);
        if d <= 0.0 {
            return Err(Error::ZeroDistance { i, j });
        }
        inv.push(1.0 / d);
    }
    let inv_total: f64 = inv.iter().sum();
    let gamma = geo.iter().zip(inv).map(|(&j, w)| (j, w / inv_total)).collect();
    Ok(PreWeights { alpha, beta, gamma })
}

fn mat_vec(w: &Tensor2, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(shape_err("mat_vec", format!("{:?} x {}", w.shape(), x.len())));
    }
    Ok((0..w.rows()).map(|r| dot(w.row(r), x)).collect())
}

/// `LeakyReLU(aᵀ · (W_c e_i ⊕ w_prior · W_c e_j))`.
pub fn attention_score(e_i: &[f64], e_j: &[f64], w_prior: f64, w_c: &Tensor2, a: &[f64], slope: f64) -> Result<f64> {
    let hi = mat_vec(w_c, e_i)?;
    let hj = mat_vec(w_c, e_j)?;
    if a.len() != 2 * hi.len() {
        return Err(shape_err("attention_score", format!("a has {} entries, need {}", a.len(), 2 * hi.len())));
    }
    let (a_self, a_nbr) = a.split_at(hi.len());
    Ok(leaky_relu(dot(a_self, &hi) + w_prior * dot(a_nbr, &hj), slope))
}

/// Softmax within each neighbour type; empty types stay empty.
pub fn normalize_scores(scores: &[Vec<f64>; 3]) -> [Vec<f64>; 3] {
    [
        tensor::softmax(&scores[0]),
        tensor::softmax(&scores[1]),
        tensor::softmax(&scores[2]),
    ]
}

/// `W_s e_i ⊕ Σ_F F_ij W_s e_j ⊕ Σ_B B_ij W_s e_j ⊕ Σ_Q Q_ij W_s e_j`, width `4z'`.
///
/// `weights[k]` pairs each neighbour of type `k` with its normalised weight.
pub fn aggregate(e_i: &[f64], weights: &[Vec<(usize, f64)>; 3], embeddings: &Tensor2, w_s: &Tensor2) -> Result<Vec<f64>> {
    let h = w_s.rows();
    let mut out = mat_vec(w_s, e_i)?;
    for group in weights {
        let mut block = vec![0.0; h];
        for &(j, w) in group {
            if j >= embeddings.rows() {
                return Err(shape_err("aggregate", format!("neighbour {j} outside {} nodes", embeddings.rows())));
            }
            let hj = mat_vec(w_s, embeddings.row(j))?;
            for (b, v) in block.iter_mut().zip(hj) {
                *b += w * v;
            }
        }
        out.extend(block);
    }
    Ok(out)
}

/// Everything a spatial head needs about one slot.
pub struct SpatialContext<'a> {
    pub embeddings: &'a Tensor2,
    pub sets: &'a NeighborSets,
    pub priors: &'a [PreWeights],
}

/// Reference evaluation of the gated multi-head spatial layer for one node.
pub fn multi_head_spatial(i: usize, ctx: &SpatialContext<'_>, params: &ModelParams) -> Result<Vec<f64>> {
    let l = &params.layout;
    let slope = params.dims.leaky_slope;
    let e_i = ctx.embeddings.row(i);
    let mut heads = Vec::with_capacity(l.heads.len());
    for ids in &l.heads {
        let w_c = &params.tensors[ids.w_c];
        let mut weighted: [Vec<(usize, f64)>; 3] = Default::default();
        for kind in [NeighborKind::Forward, NeighborKind::Backward, NeighborKind::Geographic] {
            let k = kind as usize;
            let a = params.tensors[ids.a[k]].as_slice();
            let prior = ctx.priors[i].of(kind);
            let scores = prior
                .iter()
                .map(|&(j, w)| attention_score(e_i, ctx.embeddings.row(j), w, w_c, a, slope))
                .collect::<Result<Vec<_>>>()?;
            let norm = tensor::softmax(&scores);
            weighted[k] = prior.iter().map(|p| p.0).zip(norm).collect();
        }
        heads.push(aggregate(e_i, &weighted, ctx.embeddings, &params.tensors[ids.w_s])?);
    }
    let width = heads[0].len();
    let k = heads.len() as f64;
    let mean: Vec<f64> = (0..width).map(|c| heads.iter().map(|h| h[c]).sum::<f64>() / k).collect();
    let gate_w = &params.tensors[l.gate_w];
    let gate_b = &params.tensors[l.gate_b];
    let mut mixed = vec![0.0; width];
    for (hd, head) in heads.iter().enumerate() {
        let g = sigmoid(dot(gate_w.row(hd), &mean) + gate_b[(0, hd)]);
        for (m, v) in mixed.iter_mut().zip(head) {
            *m += g * v;
        }
    }
    mat_vec(&params.tensors[l.proj], &mixed)
}

/// Dense prior/mask pair for one neighbour type: `prior[i][j]` holds the
/// pre-weight of `j` as a neighbour of `i`, `mask[i][j]` is 1 where `j` is one.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMatrices {
    pub prior: Tensor2,
    pub mask: Tensor2,
}

impl NeighborMatrices {
    /// No neighbours at all.
    pub fn empty(n: usize) -> Self {
        Self {
            prior: Tensor2::zeros(n, n),
            mask: Tensor2::zeros(n, n),
        }
    }

    fn from_pairs(n: usize, rows: impl Iterator<Item = Vec<(usize, f64)>>) -> Self {
        let mut prior = Tensor2::zeros(n, n);
        let mut mask = Tensor2::zeros(n, n);
        for (i, pairs) in rows.enumerate() {
            for (j, w) in pairs {
                prior[(i, j)] = w;
                mask[(i, j)] = 1.0;
            }
        }
        Self { prior, mask }
    }

    /// Geographical neighbours and inverse-distance weights; static over time.
    pub fn geographic(dist: &DistanceGraph, threshold_km: f64) -> Result<Self> {
        let n = dist.n();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let nbrs = geo_neighbors(i, dist, threshold_km);
            let mut inv = Vec::with_capacity(nbrs.len());
            for &j in &nbrs {
                let d = dist.get(i, j);
                if d <= 0.0 {
                    return Err(Error::ZeroDistance { i, j });
                }
                inv.push(1.0 / d);
            }
            let total: f64 = inv.iter().sum();
            rows.push(nbrs.into_iter().zip(inv).map(|(j, w)| (j, w / total)).collect());
        }
        Ok(Self::from_pairs(n, rows.into_iter()))
    }
}

/// Constant inputs of the spatial layer for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotFeatures {
    pub embeddings: Tensor2,
    pub forward: NeighborMatrices,
    pub backward: NeighborMatrices,
}

impl SlotFeatures {
    pub fn new(embeddings: Tensor2, snapshot: &GraphSnapshot, eps_h: f64) -> Self {
        let n = snapshot.n();
        let od = &snapshot.od;
        let forward = NeighborMatrices::from_pairs(
            n,
            (0..n).map(|i| {
                let total: f64 = snapshot.forward[i].iter().map(|&k| od[(i, k)]).sum();
                snapshot.forward[i].iter().map(|&j| (j, od[(i, j)] / (total + eps_h))).collect()
            }),
        );
        let backward = NeighborMatrices::from_pairs(
            n,
            (0..n).map(|i| {
                let total: f64 = snapshot.backward[i].iter().map(|&k| od[(k, i)]).sum();
                snapshot.backward[i].iter().map(|&j| (j, od[(j, i)] / (total + eps_h))).collect()
            }),
        );
        Self {
            embeddings,
            forward,
            backward,
        }
    }
}

/// Differentiable spatial layer for all nodes of a slot; returns `n × z'`.
///
/// `params` holds one tape variable per parameter tensor, in layout order.
/// The embeddings and the OD-derived neighbour matrices are passed
/// separately so that a slot's embeddings can be paired with another slot's
/// graph.
pub fn spatial_forward<'a>(
    tape: &mut Tape<'a>,
    params: &[Var],
    model: &ModelParams,
    embeddings: &'a Tensor2,
    forward: &'a NeighborMatrices,
    backward: &'a NeighborMatrices,
    geo: &'a NeighborMatrices,
) -> Var {
    let l = &model.layout;
    let h = model.dims.hidden;
    let slope = model.dims.leaky_slope;
    let e = tape.constant(embeddings);
    let kinds = [forward, backward, geo];
    let mut heads = Vec::with_capacity(l.heads.len());
    for ids in &l.heads {
        let hc = tape.matmul_bt(e, params[ids.w_c]);
        let hs = tape.matmul_bt(e, params[ids.w_s]);
        let mut blocks = vec![hs];
        for (k, nm) in kinds.iter().enumerate() {
            let a = params[ids.a[k]];
            let a_self = tape.slice_rows(a, 0, h);
            let a_nbr = tape.slice_rows(a, h, h);
            let u = tape.matmul(hc, a_self);
            let v = tape.matmul(hc, a_nbr);
            let s = tape.pair_score(u, v, Some(&nm.prior));
            let s = tape.leaky_relu(s, slope);
            let w = tape.masked_row_softmax(s, &nm.mask);
            blocks.push(tape.matmul(w, hs));
        }
        heads.push(tape.concat_cols(&blocks));
    }
    let mean = tape.mean(&heads);
    let logits = tape.matmul_bt(mean, params[l.gate_w]);
    let logits = tape.add_row(logits, params[l.gate_b]);
    let gates = tape.sigmoid(logits);
    let mut terms = Vec::with_capacity(heads.len());
    for (k, &head) in heads.iter().enumerate() {
        let g = tape.slice_cols(gates, k, 1);
        terms.push((tape.scale_rows(g, head), 1.0));
    }
    let mixed = tape.weighted_sum(&terms);
    tape.matmul_bt(mixed, params[l.proj])
}
