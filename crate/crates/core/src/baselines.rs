//! Historical-average and auto-regressive reference predictors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::ingest::{Corpus, HistoryStats, SlotIndex};
use crate::tensor::Tensor2;

/// Default AR lag order in slots.
pub const DEFAULT_AR_ORDER: usize = 8;

/// Diagonal penalty used when the normal equations are singular.
pub const RIDGE_PENALTY: f64 = 1e-6;

/// Training mean demand vector and OD matrix for the target's slot-of-day.
pub fn historical_average_predict(history: &HistoryStats, target: SlotIndex) -> Result<(Vec<f64>, Tensor2)> {
    if target.slot >= history.slots_per_day() {
        return Err(Error::SlotOutOfRange { day: target.day, slot: target.slot });
    }
    Ok((history.demand_at(target.slot).to_vec(), history.od_at(target.slot).clone()))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArModel {
    pub order: usize,
    /// `coefficients[k]` multiplies the value `k + 1` steps back.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Set when the fit needed the ridge fallback.
    pub ridge: bool,
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting; `None`
/// when a pivot falls below `tol` relative to the largest diagonal entry.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    Some(x)
}

/// Least-squares fit of `x_t = c + Σ_k φ_k x_{t−k}` over a series.
pub fn ar_fit(series: &[f64], order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::InvalidConfig("AR order must be at least 1".into()));
    }
    if series.len() <= order + 1 {
        return Err(Error::InsufficientData(format!(
            "AR({order}) needs more than {} observations, got {}",
            order + 1,
            series.len()
        )));
    }
    // Design row: [1, x_{t-1}, …, x_{t-p}].
    let dim = order + 1;
    let mut xtx = vec![vec![0.0; dim]; dim];
    let mut xty = vec![0.0; dim];
    let mut row = vec![0.0; dim];
    for t in order..series.len() {
        row[0] = 1.0;
        for k in 0..order {
            row[k + 1] = series[t - 1 - k];
        }
        for i in 0..dim {
            xty[i] += row[i] * series[t];
            for j in 0..dim {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let (beta, ridge) = match solve(xtx.clone(), xty.clone()) {
        Some(b) => (b, false),
        None => {
            let mut reg = xtx;
            for (i, r) in reg.iter_mut().enumerate().skip(1) {
                r[i] += RIDGE_PENALTY;
            }
            let b = solve(reg, xty).ok_or_else(|| Error::InsufficientData("AR normal equations stay singular under ridge".into()))?;
            (b, true)
        }
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData("AR fit produced non-finite coefficients".into()));
    }
    Ok(ArModel {
        order,
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        ridge,
    })
}

/// One-step forecast from the most recent `order` values, oldest first;
/// clamped at zero.
pub fn ar_predict(model: &ArModel, window: &[f64]) -> Result<f64> {
    if window.len() != model.order {
        return Err(Error::LengthMismatch { left: window.len(), right: model.order });
    }
    let raw = model.intercept
        + model
            .coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| c * window[window.len() - 1 - k])
            .sum::<f64>();
    Ok(raw.max(0.0))
}

/// One AR model per cell, fit on the cells' demand series over `days`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DemandAr {
    pub models: Vec<ArModel>,
}

impl DemandAr {
    pub fn fit(corpus: &Corpus, days: Range<usize>, order: usize) -> Result<Self> {
        let n = corpus.n();
        let mut series = vec![Vec::new(); n];
        for day in days {
            for slot in 0..corpus.slots_per_day() {
                let m = corpus
                    .get(SlotIndex::new(day, slot))
                    .ok_or(Error::SlotOutOfRange { day, slot })?;
                for (s, d) in series.iter_mut().zip(m.demand()) {
                    s.push(d);
                }
            }
        }
        let models = series.iter().map(|s| ar_fit(s, order)).collect::<Result<Vec<_>>>()?;
        Ok(Self { models })
    }

    pub fn order(&self) -> usize {
        self.models.first().map_or(0, |m| m.order)
    }

    /// Forecast of every cell's demand at `target` from the observed
    /// demand of the preceding slots.
    pub fn predict(&self, corpus: &Corpus, target: SlotIndex) -> Result<Vec<f64>> {
        let p = self.order();
        let mut recent = Vec::with_capacity(p);
        let mut at = target;
        for _ in 0..p {
            at = corpus.previous(at).ok_or_else(|| {
                Error::InsufficientData(format!("AR({p}) has no history before day {} slot {}", target.day, target.slot))
            })?;
            recent.push(corpus.get(at).ok_or(Error::SlotOutOfRange { day: at.day, slot: at.slot })?.demand());
        }
        recent.reverse();
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let window: Vec<f64> = recent.iter().map(|d| d[i]).collect();
                ar_predict(m, &window)
            })
            .collect()
    }
}
