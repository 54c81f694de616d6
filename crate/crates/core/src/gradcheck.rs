//! Central finite-difference verification of analytic gradients.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Floor of the relative-error denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryCheck {
    pub tensor: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Entries at or above the tolerance.
    pub failures: usize,
    pub worst: Option<EntryCheck>,
    /// Largest relative error per parameter tensor (`NaN` where unchecked).
    pub per_tensor: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Compare `analytic` against `(f(θ+ε) − f(θ−ε)) / 2ε` entry by entry.
///
/// With `sample = Some((count, seed))` and more than `count` scalars, only a
/// seeded uniform sample of `count` entries is perturbed.
pub fn grad_check<P, F>(
    params: &mut P,
    analytic: &[Tensor2],
    mut loss: F,
    eps: f64,
    tolerance: f64,
    sample: Option<(usize, u64)>,
) -> Result<GradCheckReport>
where
    P: AsRef<[Tensor2]> + AsMut<[Tensor2]>,
    F: FnMut(&P) -> Result<f64>,
{
    let shapes: Vec<(usize, usize)> = params.as_ref().iter().map(Tensor2::shape).collect();
    if shapes.len() != analytic.len() || shapes.iter().zip(analytic).any(|(s, g)| *s != g.shape()) {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            detail: format!("{} parameter tensors vs {} gradients", shapes.len(), analytic.len()),
        });
    }
    let mut flat: Vec<(usize, usize)> = Vec::new();
    for (t, &(r, c)) in shapes.iter().enumerate() {
        flat.extend((0..r * c).map(|e| (t, e)));
    }
    if let Some((count, seed)) = sample {
        if flat.len() > count {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, flat.len(), count).into_vec();
            picked.sort_unstable();
            flat = picked.into_iter().map(|i| flat[i]).collect();
        }
    }

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        failures: 0,
        worst: None,
        per_tensor: alloc::vec![f64::NAN; shapes.len()],
        tolerance,
    };
    for (t, e) in flat {
        let orig = params.as_ref()[t].as_slice()[e];
        params.as_mut()[t].as_mut_slice()[e] = orig + eps;
        let up = loss(params)?;
        params.as_mut()[t].as_mut_slice()[e] = orig - eps;
        let down = loss(params)?;
        params.as_mut()[t].as_mut_slice()[e] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteLoss {
                context: format!("perturbing tensor {t} entry {e}"),
            });
        }
        let numeric = (up - down) / (2.0 * eps);
        let g = analytic[t].as_slice()[e];
        let rel = relative_error(g, numeric);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max((g - numeric).abs());
        if rel >= tolerance {
            report.failures += 1;
        }
        let slot = &mut report.per_tensor[t];
        if slot.is_nan() || rel > *slot {
            *slot = rel;
        }
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(EntryCheck { tensor: t, entry: e, analytic: g, numeric, rel_error: rel });
        }
    }
    Ok(report)
}
