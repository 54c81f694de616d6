//! Seeded synthetic order corpora with meal-time periodicity and event spikes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geo::GridSpec;
use crate::ingest::{slots_per_day, OrderEvent};
use crate::train::derive_seed;

/// Gaussian bump `amplitude · exp(−(s − center)² / 2 width²)` over slot-of-day.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MealPeak {
    pub center_slot: f64,
    pub width_slots: f64,
    pub amplitude: f64,
}

/// Multiplies origin rates by `1 + amplitude` on `cells` during `slots` of `day`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventSpike {
    pub day: usize,
    pub slots: Range<usize>,
    pub cells: Vec<usize>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenarioSpec {
    pub grid: GridSpec,
    pub days: usize,
    pub granularity_min: usize,
    /// Orders per origin-destination pair per slot before modulation.
    pub base_rate: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub meal_peaks: Vec<MealPeak>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub events: Vec<EventSpike>,
    /// `n × n` row-major destination weights per origin; all ones when absent.
    #[cfg_attr(feature = "serde", serde(default))]
    pub dest_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(grid: GridSpec, days: usize, granularity_min: usize, base_rate: f64, seed: u64) -> Self {
        Self {
            grid,
            days,
            granularity_min,
            base_rate,
            meal_peaks: Vec::new(),
            events: Vec::new(),
            dest_weights: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let spd = slots_per_day(self.granularity_min)?;
        let n = self.grid.n_cells();
        if !(self.base_rate >= 0.0 && self.base_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("base rate must be finite and >= 0, got {}", self.base_rate)));
        }
        for p in &self.meal_peaks {
            if !(p.width_slots > 0.0) || !(p.amplitude >= 0.0) {
                return Err(Error::InvalidConfig(format!("meal peak needs width > 0 and amplitude >= 0: {p:?}")));
            }
        }
        for e in &self.events {
            if !(e.amplitude >= 0.0) || e.slots.end > spd || e.cells.iter().any(|&c| c >= n) {
                return Err(Error::InvalidConfig(format!("event spike outside the scenario or negative: {e:?}")));
            }
        }
        if let Some(w) = &self.dest_weights {
            if w.len() != n * n || w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidConfig(format!(
                    "destination weights need {} non-negative entries",
                    n * n
                )));
            }
        }
        Ok(())
    }

    pub fn slots_per_day(&self) -> usize {
        1440 / self.granularity_min
    }

    /// `1 + Σ bumps` at a slot-of-day.
    pub fn periodic_factor(&self, slot: usize) -> f64 {
        let s = slot as f64;
        1.0 + self
            .meal_peaks
            .iter()
            .map(|p| {
                let d = (s - p.center_slot) / p.width_slots;
                p.amplitude * libm::exp(-0.5 * d * d)
            })
            .sum::<f64>()
    }

    pub fn event_factor(&self, day: usize, slot: usize, origin: usize) -> f64 {
        self.events
            .iter()
            .filter(|e| e.day == day && e.slots.contains(&slot) && e.cells.contains(&origin))
            .map(|e| 1.0 + e.amplitude)
            .product()
    }

    pub fn dest_weight(&self, origin: usize, dest: usize) -> f64 {
        match &self.dest_weights {
            Some(w) => w[origin * self.grid.n_cells() + dest],
            None => 1.0,
        }
    }
}

/// Noiseless rates indexed by `(day, slot, origin, destination)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTensor {
    pub days: usize,
    pub slots_per_day: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl RateTensor {
    pub fn get(&self, day: usize, slot: usize, i: usize, j: usize) -> f64 {
        self.data[((day * self.slots_per_day + slot) * self.n + i) * self.n + j]
    }

    /// Expected demand of every origin in a slot.
    pub fn demand(&self, day: usize, slot: usize) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(day, slot, i, j)).sum()).collect()
    }
}

pub fn reference_rates(spec: &ScenarioSpec) -> Result<RateTensor> {
    spec.validate()?;
    let (spd, n) = (spec.slots_per_day(), spec.grid.n_cells());
    let mut data = Vec::with_capacity(spec.days * spd * n * n);
    for day in 0..spec.days {
        for slot in 0..spd {
            let periodic = spec.base_rate * spec.periodic_factor(slot);
            for i in 0..n {
                let origin = periodic * spec.event_factor(day, slot, i);
                for j in 0..n {
                    data.push(origin * spec.dest_weight(i, j));
                }
            }
        }
    }
    Ok(RateTensor {
        days: spec.days,
        slots_per_day: spd,
        n,
        data,
    })
}

/// Interior point of a cell, `u` and `v` uniform in `[0.001, 0.999)`.
fn point_in(grid: &GridSpec, cell: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (lat0, lon0) = grid.cell_corner(cell);
    let u: f64 = rng.random_range(0.001..0.999);
    let v: f64 = rng.random_range(0.001..0.999);
    (lat0 + u * grid.lat_step(), lon0 + v * grid.lon_step())
}

/// Poisson order counts per `(day, slot, origin, destination)` with uniform
/// timestamps inside the slot and uniform positions inside the cells. Each
/// day draws from its own derived seed. Events are sorted by time.
pub fn generate(spec: &ScenarioSpec) -> Result<Vec<OrderEvent>> {
    let rates = reference_rates(spec)?;
    let slot_secs = spec.granularity_min as u64 * 60;
    let (spd, n) = (rates.slots_per_day, rates.n);
    let mut events = Vec::new();
    for day in 0..spec.days {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("day-{day}")));
        for slot in 0..spd {
            let start = (day * spd + slot) as u64 * slot_secs;
            for i in 0..n {
                for j in 0..n {
                    let rate = rates.get(day, slot, i, j);
                    if rate <= 0.0 {
                        continue;
                    }
                    let count = Poisson::new(rate)
                        .map_err(|e| Error::InvalidConfig(format!("Poisson rate {rate}: {e}")))?
                        .sample(&mut rng) as u64;
                    for _ in 0..count {
                        let offset = rng.random_range(0..slot_secs);
                        let (plat, plon) = point_in(&spec.grid, i, &mut rng);
                        let (dlat, dlon) = point_in(&spec.grid, j, &mut rng);
                        events.push(OrderEvent {
                            elapsed_secs: start + offset,
                            pickup_lat: plat,
                            pickup_lon: plon,
                            dropoff_lat: dlat,
                            dropoff_lon: dlon,
                        });
                    }
                }
            }
        }
    }
    events.sort_by_key(|e| e.elapsed_secs);
    Ok(events)
}

/// Lunch and dinner bumps at 12:00 and 18:30 for a given granularity.
pub fn meal_peaks(granularity_min: usize, amplitude: f64) -> Vec<MealPeak> {
    let per_hour = 60.0 / granularity_min as f64;
    vec![
        MealPeak { center_slot: 12.0 * per_hour, width_slots: per_hour, amplitude },
        MealPeak { center_slot: 18.5 * per_hour, width_slots: per_hour, amplitude },
    ]
}

/// Recipe for daily event spikes at random cells and start hours.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventPlan {
    pub per_day: usize,
    pub duration_min: usize,
    /// Start hours are drawn uniformly from `first_hour..last_hour`.
    pub first_hour: usize,
    pub last_hour: usize,
    pub amplitude: f64,
}

impl EventPlan {
    pub fn validate(&self) -> Result<()> {
        if self.duration_min == 0 || self.first_hour >= self.last_hour || self.last_hour > 24 || !(self.amplitude >= 0.0) {
            return Err(Error::InvalidConfig(format!("event plan needs duration > 0, first_hour < last_hour <= 24, amplitude >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Draws `plan.per_day` single-cell spikes for each day.
pub fn random_events(plan: &EventPlan, days: usize, granularity_min: usize, n_cells: usize, seed: u64) -> Result<Vec<EventSpike>> {
    plan.validate()?;
    let spd = slots_per_day(granularity_min)?;
    if n_cells == 0 {
        return Err(Error::InvalidConfig("event plan over an empty grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = plan.duration_min.div_ceil(granularity_min);
    let mut out = Vec::with_capacity(days * plan.per_day);
    for day in 0..days {
        for _ in 0..plan.per_day {
            let start = rng.random_range(plan.first_hour..plan.last_hour) * 60 / granularity_min;
            let cell = rng.random_range(0..n_cells);
            out.push(EventSpike {
                day,
                slots: start..(start + len).min(spd),
                cells: vec![cell],
                amplitude: plan.amplitude,
            });
        }
    }
    Ok(out)
}
