//! Slot discretization, per-slot OD matrices, degrees, initial node
//! embeddings and per-slot-of-day historical averages.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::geo::GridSpec;
use crate::tensor::Tensor2;

/// Minutes in a day.
pub const MINUTES_PER_DAY: usize = 1440;

/// Number of fixed features in the embedding layout (before zero padding).
pub const EMBEDDING_FEATURES: usize = 13;

/// An order reduced to what the model consumes: seconds since midnight of
/// the first corpus day, pickup and dropoff coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderEvent {
    pub elapsed_secs: u64,
    pub pickup_lat: f64,
    pub pickup_lon: f64,
    pub dropoff_lat: f64,
    pub dropoff_lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotIndex {
    pub day: usize,
    pub slot: usize,
}

impl SlotIndex {
    pub fn new(day: usize, slot: usize) -> Self {
        Self { day, slot }
    }
}

/// Slots per day for a granularity that divides the day exactly.
pub fn slots_per_day(granularity_min: usize) -> Result<usize> {
    if granularity_min == 0 || MINUTES_PER_DAY % granularity_min != 0 {
        return Err(Error::InvalidConfig(format!(
            "slot granularity {granularity_min} min must divide {MINUTES_PER_DAY}"
        )));
    }
    Ok(MINUTES_PER_DAY / granularity_min)
}

pub fn slot_of(elapsed_secs: u64, granularity_min: usize) -> SlotIndex {
    let minutes = elapsed_secs / 60;
    let day = (minutes / MINUTES_PER_DAY as u64) as usize;
    let minute_of_day = (minutes % MINUTES_PER_DAY as u64) as usize;
    SlotIndex {
        day,
        slot: minute_of_day / granularity_min,
    }
}

/// Sparse per-slot OD counts; only non-zero entries are stored, sorted by
/// `(origin, destination)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotODMatrix {
    pub day: usize,
    pub slot: usize,
    n: usize,
    entries: Vec<(usize, usize, u32)>,
}

impl SlotODMatrix {
    pub fn empty(day: usize, slot: usize, n: usize) -> Self {
        Self {
            day,
            slot,
            n,
            entries: Vec::new(),
        }
    }

    /// Builds a matrix from `(i, j, count)` triples; duplicates are summed
    /// and zero counts dropped.
    pub fn from_triples(day: usize, slot: usize, n: usize, triples: &[(usize, usize, u32)]) -> Result<Self> {
        let mut entries: Vec<(usize, usize, u32)> = Vec::with_capacity(triples.len());
        let mut sorted = triples.to_vec();
        sorted.sort_unstable();
        for (i, j, c) in sorted {
            if i >= n || j >= n {
                return Err(Error::InvalidConfig(format!("OD entry ({i}, {j}) outside {n} cells")));
            }
            if c == 0 {
                continue;
            }
            match entries.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += c,
                _ => entries.push((i, j, c)),
            }
        }
        Ok(Self { day, slot, n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, u32)] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.entries
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&(i, j)))
            .map_or(0, |k| self.entries[k].2)
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.2 as u64).sum()
    }

    pub fn to_dense(&self) -> Tensor2 {
        let mut t = Tensor2::zeros(self.n, self.n);
        for &(i, j, c) in &self.entries {
            t[(i, j)] = c as f64;
        }
        t
    }

    /// Orders originating in each cell (row sums).
    pub fn demand(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(i, _, c) in &self.entries {
            d[i] += c as f64;
        }
        d
    }
}

/// `(in_degree, out_degree)`: column sums and row sums.
pub fn degrees(od: &SlotODMatrix) -> (Vec<f64>, Vec<f64>) {
    let mut in_deg = vec![0.0; od.n];
    let mut out_deg = vec![0.0; od.n];
    for &(i, j, c) in &od.entries {
        out_deg[i] += c as f64;
        in_deg[j] += c as f64;
    }
    (in_deg, out_deg)
}

/// A slot's OD matrix with its derived degree vectors and neighbour lists.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub od: Tensor2,
    pub in_degree: Vec<f64>,
    pub out_degree: Vec<f64>,
    /// `forward[i]`: cells receiving orders from `i`.
    pub forward: Vec<Vec<usize>>,
    /// `backward[i]`: cells sending orders to `i`.
    pub backward: Vec<Vec<usize>>,
}

impl GraphSnapshot {
    pub fn new(od: &SlotODMatrix) -> Self {
        let (in_degree, out_degree) = degrees(od);
        let mut forward = vec![Vec::new(); od.n];
        let mut backward = vec![Vec::new(); od.n];
        for &(i, j, _) in &od.entries {
            forward[i].push(j);
            backward[j].push(i);
        }
        for b in &mut backward {
            b.sort_unstable();
        }
        Self {
            od: od.to_dense(),
            in_degree,
            out_degree,
            forward,
            backward,
        }
    }

    pub fn n(&self) -> usize {
        self.od.rows()
    }
}

/// Accumulates order events into one OD matrix per `(day, slot)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdBuild {
    /// Dense list over `days × slots_per_day`, indexed `day * spd + slot`.
    pub matrices: Vec<SlotODMatrix>,
    pub accepted: usize,
    /// Events whose pickup or dropoff falls outside the grid.
    pub skipped_outside: usize,
    pub days: usize,
}

/// Bins events into per-slot OD matrices. `days` fixes the corpus length;
/// when `None` it is one past the last event's day. Events past the corpus
/// end are counted as skipped.
pub fn build_od(events: &[OrderEvent], grid: &GridSpec, granularity_min: usize, days: Option<usize>) -> Result<OdBuild> {
    grid.validate()?;
    let spd = slots_per_day(granularity_min)?;
    let n = grid.n_cells();
    let days = days.unwrap_or_else(|| {
        events
            .iter()
            .map(|e| slot_of(e.elapsed_secs, granularity_min).day + 1)
            .max()
            .unwrap_or(0)
    });
    let mut counts: Vec<Vec<(usize, usize, u32)>> = vec![Vec::new(); days * spd];
    let (mut accepted, mut skipped) = (0, 0);
    for e in events {
        let idx = slot_of(e.elapsed_secs, granularity_min);
        let cells = (
            grid.cell_of(e.pickup_lat, e.pickup_lon),
            grid.cell_of(e.dropoff_lat, e.dropoff_lon),
        );
        match cells {
            (Some(o), Some(d)) if idx.day < days => {
                counts[idx.day * spd + idx.slot].push((o, d, 1));
                accepted += 1;
            }
            _ => skipped += 1,
        }
    }
    let matrices = counts
        .iter()
        .enumerate()
        .map(|(k, triples)| SlotODMatrix::from_triples(k / spd, k % spd, n, triples))
        .collect::<Result<Vec<_>>>()?;
    Ok(OdBuild {
        matrices,
        accepted,
        skipped_outside: skipped,
        days,
    })
}

/// The ingested corpus: one OD matrix for every `(day, slot)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub grid: GridSpec,
    pub granularity_min: usize,
    /// Weekday of day 0, Monday = 0.
    pub start_weekday: usize,
    pub days: usize,
    matrices: Vec<SlotODMatrix>,
}

impl Corpus {
    pub fn new(grid: GridSpec, granularity_min: usize, start_weekday: usize, days: usize, matrices: Vec<SlotODMatrix>) -> Result<Self> {
        grid.validate()?;
        let spd = slots_per_day(granularity_min)?;
        if matrices.len() != days * spd {
            return Err(Error::InvalidConfig(format!(
                "{days} days of {spd} slots need {} matrices, got {}",
                days * spd,
                matrices.len()
            )));
        }
        for (k, m) in matrices.iter().enumerate() {
            if m.day != k / spd || m.slot != k % spd || m.n() != grid.n_cells() {
                return Err(Error::InvalidConfig(format!(
                    "matrix {k} is (day {}, slot {}) over {} cells",
                    m.day,
                    m.slot,
                    m.n()
                )));
            }
        }
        Ok(Self {
            grid,
            granularity_min,
            start_weekday: start_weekday % 7,
            days,
            matrices,
        })
    }

    pub fn from_build(grid: GridSpec, granularity_min: usize, start_weekday: usize, build: OdBuild) -> Result<Self> {
        Self::new(grid, granularity_min, start_weekday, build.days, build.matrices)
    }

    pub fn n(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn slots_per_day(&self) -> usize {
        MINUTES_PER_DAY / self.granularity_min
    }

    pub fn slots_per_hour(&self) -> usize {
        (60 / self.granularity_min).max(1)
    }

    pub fn matrices(&self) -> &[SlotODMatrix] {
        &self.matrices
    }

    pub fn get(&self, idx: SlotIndex) -> Option<&SlotODMatrix> {
        (idx.day < self.days && idx.slot < self.slots_per_day())
            .then(|| &self.matrices[idx.day * self.slots_per_day() + idx.slot])
    }

    pub fn contains(&self, idx: SlotIndex) -> bool {
        self.get(idx).is_some()
    }

    /// The slot immediately before `idx`, crossing midnight.
    pub fn previous(&self, idx: SlotIndex) -> Option<SlotIndex> {
        match (idx.day, idx.slot) {
            (_, s) if s > 0 => Some(SlotIndex::new(idx.day, s - 1)),
            (0, _) => None,
            (d, _) => Some(SlotIndex::new(d - 1, self.slots_per_day() - 1)),
        }
    }

    pub fn weekday(&self, day: usize) -> usize {
        (self.start_weekday + day) % 7
    }

    pub fn total_orders(&self) -> u64 {
        self.matrices.iter().map(SlotODMatrix::total).sum()
    }
}

/// Time features of the slot an embedding describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotTime {
    pub slot: usize,
    pub slots_per_day: usize,
    /// Monday = 0.
    pub weekday: usize,
}

/// Degree normalizers fitted on the training split: degrees are divided by
/// `1 + max`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DegreeScaler {
    pub max_in: f64,
    pub max_out: f64,
}

impl DegreeScaler {
    pub fn fit<'a>(matrices: impl IntoIterator<Item = &'a SlotODMatrix>) -> Self {
        let mut s = Self { max_in: 0.0, max_out: 0.0 };
        for m in matrices {
            let (i, o) = degrees(m);
            s.max_in = i.into_iter().fold(s.max_in, f64::max);
            s.max_out = o.into_iter().fold(s.max_out, f64::max);
        }
        s
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Initial embeddings, one row per cell:
/// `[id, row, col, slot, weekday one-hot ×7, in_degree, out_degree, 0…]`.
///
/// Positional features are divided by their maximum value (0/0 → 0), degrees
/// by `1 + max` from the training split; the degrees are clamped into
/// `[0, 1]` so that unusually busy evaluation slots stay in range.
pub fn init_embeddings(
    in_degree: &[f64],
    out_degree: &[f64],
    grid: &GridSpec,
    z: usize,
    time: SlotTime,
    scaler: &DegreeScaler,
) -> Result<Tensor2> {
    if z < EMBEDDING_FEATURES {
        return Err(Error::EmbeddingTooSmall {
            z,
            min: EMBEDDING_FEATURES,
        });
    }
    let n = grid.n_cells();
    if in_degree.len() != n || out_degree.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: in_degree.len().min(out_degree.len()),
        });
    }
    let mut e = Tensor2::zeros(n, z);
    for id in 0..n {
        let (row, col) = (id / grid.cols, id % grid.cols);
        let r = e.row_mut(id);
        r[0] = ratio(id, n - 1);
        r[1] = ratio(row, grid.rows - 1);
        r[2] = ratio(col, grid.cols - 1);
        r[3] = ratio(time.slot, time.slots_per_day.saturating_sub(1));
        r[4 + time.weekday % 7] = 1.0;
        r[11] = (in_degree[id] / (1.0 + scaler.max_in)).clamp(0.0, 1.0);
        r[12] = (out_degree[id] / (1.0 + scaler.max_out)).clamp(0.0, 1.0);
    }
    Ok(e)
}

/// Per slot-of-day means of demand vectors and OD matrices over training days.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStats {
    pub demand: Vec<Vec<f64>>,
    pub od: Vec<Tensor2>,
}

impl HistoryStats {
    pub fn slots_per_day(&self) -> usize {
        self.demand.len()
    }

    pub fn demand_at(&self, slot: usize) -> &[f64] {
        &self.demand[slot]
    }

    pub fn od_at(&self, slot: usize) -> &Tensor2 {
        &self.od[slot]
    }
}

pub fn history_stats(corpus: &Corpus, days: Range<usize>) -> Result<HistoryStats> {
    if days.is_empty() || days.end > corpus.days {
        return Err(Error::InsufficientData(format!(
            "history needs at least one training day inside 0..{}, got {days:?}",
            corpus.days
        )));
    }
    let (n, spd) = (corpus.n(), corpus.slots_per_day());
    let count = days.len() as f64;
    let mut demand = vec![vec![0.0; n]; spd];
    let mut od = vec![Tensor2::zeros(n, n); spd];
    for day in days {
        for slot in 0..spd {
            let m = corpus.get(SlotIndex::new(day, slot)).expect("day within corpus");
            for &(i, j, c) in m.entries() {
                demand[slot][i] += c as f64;
                od[slot][(i, j)] += c as f64;
            }
        }
    }
    for slot in 0..spd {
        demand[slot].iter_mut().for_each(|v| *v /= count);
        od[slot] = od[slot].scale(1.0 / count);
    }
    Ok(HistoryStats { demand, od })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        GridSpec::new(30.0, 120.0, 2.5, 2, 3)
    }

    fn centre(g: &GridSpec, id: usize) -> (f64, f64) {
        let (lat, lon) = g.cell_corner(id);
        (lat + 0.5 * g.lat_step(), lon + 0.5 * g.lon_step())
    }

    fn event(g: &GridSpec, secs: u64, o: usize, d: usize) -> OrderEvent {
        let (a, b) = centre(g, o);
        let (c, e) = centre(g, d);
        OrderEvent {
            elapsed_secs: secs,
            pickup_lat: a,
            pickup_lon: b,
            dropoff_lat: c,
            dropoff_lon: e,
        }
    }

    #[test]
    fn slot_examples() {
        assert_eq!(slot_of(0, 15), SlotIndex::new(0, 0));
        assert_eq!(slot_of((12 * 60 + 7) * 60, 15), SlotIndex::new(0, 48));
        assert_eq!(slot_of((23 * 60 + 59) * 60 + 59, 15), SlotIndex::new(0, 95));
        assert_eq!(slot_of(86_400 + 60, 15), SlotIndex::new(1, 0));
        assert_eq!(slots_per_day(15).unwrap(), 96);
        assert_eq!(slots_per_day(120).unwrap(), 12);
        assert!(slots_per_day(7).is_err());
        assert!(slots_per_day(0).is_err());
    }

    #[test]
    fn five_orders_between_two_cells() {
        let g = grid();
        let events: Vec<_> = (0..5).map(|k| event(&g, 60 * k, 1, 2)).collect();
        let b = build_od(&events, &g, 15, None).unwrap();
        assert_eq!(b.matrices.len(), 96);
        assert_eq!(b.matrices[0].get(1, 2), 5);
        assert_eq!(b.matrices[0].total(), 5);
        assert_eq!(b.matrices[1].total(), 0);
        assert_eq!(b.matrices[1].to_dense(), Tensor2::zeros(6, 6));
    }

    #[test]
    fn direct_counting() {
        let g = grid();
        let events = [event(&g, 10, 0, 4), event(&g, 20, 0, 4), event(&g, 30, 4, 5)];
        let b = build_od(&events, &g, 15, Some(1)).unwrap();
        let m = &b.matrices[0];
        assert_eq!((m.get(0, 4), m.get(4, 5), m.total()), (2, 1, 3));
        assert_eq!(b.accepted, 3);
    }

    #[test]
    fn outside_records_are_skipped() {
        let g = grid();
        let mut e = event(&g, 10, 0, 1);
        e.dropoff_lat = 10.0;
        let late = event(&g, 5 * 86_400, 0, 1);
        let b = build_od(&[e, event(&g, 10, 0, 1), late], &g, 15, Some(2)).unwrap();
        assert_eq!((b.accepted, b.skipped_outside), (1, 2));
    }

    #[test]
    fn degree_examples() {
        let zero = SlotODMatrix::empty(0, 0, 4);
        assert_eq!(degrees(&zero), (vec![0.0; 4], vec![0.0; 4]));
        let m = SlotODMatrix::from_triples(0, 0, 4, &[(1, 2, 5)]).unwrap();
        let (i, o) = degrees(&m);
        assert_eq!(o, vec![0.0, 5.0, 0.0, 0.0]);
        assert_eq!(i, vec![0.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn degrees_match_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut triples = Vec::new();
            let mut dense = [[0u32; 5]; 5];
            for i in 0..5 {
                for j in 0..5 {
                    let c = rng.random_range(0..4u32);
                    dense[i][j] = c;
                    triples.push((i, j, c));
                }
            }
            let m = SlotODMatrix::from_triples(0, 0, 5, &triples).unwrap();
            let (i_deg, o_deg) = degrees(&m);
            for k in 0..5 {
                let mut row = 0.0;
                let mut col = 0.0;
                for t in 0..5 {
                    row += dense[k][t] as f64;
                    col += dense[t][k] as f64;
                }
                assert_eq!(o_deg[k], row);
                assert_eq!(i_deg[k], col);
            }
            let total: f64 = o_deg.iter().sum();
            assert_eq!(total, i_deg.iter().sum::<f64>());
            assert_eq!(total, m.total() as f64);
            assert!(m.entries().iter().all(|e| e.2 > 0));
        }
    }

    #[test]
    fn embeddings_layout() {
        let single = GridSpec::new(30.0, 120.0, 2.5, 1, 1);
        let scaler = DegreeScaler { max_in: 4.0, max_out: 9.0 };
        let t = SlotTime { slot: 0, slots_per_day: 96, weekday: 0 };
        let e = init_embeddings(&[4.0], &[1.0], &single, 16, t, &scaler).unwrap();
        assert_eq!(&e.row(0)[..4], &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&e.row(0)[4..11], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(e[(0, 11)], 4.0 / 5.0);
        assert!(e[(0, 11)] < 1.0);
        assert_eq!(e[(0, 12)], 0.1);
        assert!(e.row(0)[13..].iter().all(|&v| v == 0.0));
        assert!(matches!(
            init_embeddings(&[0.0], &[0.0], &single, 12, t, &scaler),
            Err(Error::EmbeddingTooSmall { .. })
        ));

        let g = grid();
        let t = SlotTime { slot: 95, slots_per_day: 96, weekday: 6 };
        let e = init_embeddings(&[0.0; 6], &[0.0; 6], &g, 13, t, &scaler).unwrap();
        assert_eq!(&e.row(5)[..4], &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(e[(5, 10)], 1.0);
        assert!(e.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    fn corpus_from(days: &[Vec<(usize, usize, usize, u32)>], g: &GridSpec, gran: usize) -> Corpus {
        let spd = slots_per_day(gran).unwrap();
        let mut ms = Vec::new();
        for (d, trip) in days.iter().enumerate() {
            for s in 0..spd {
                let t: Vec<_> = trip.iter().filter(|x| x.0 == s).map(|x| (x.1, x.2, x.3)).collect();
                ms.push(SlotODMatrix::from_triples(d, s, g.n_cells(), &t).unwrap());
            }
        }
        Corpus::new(g.clone(), gran, 0, days.len(), ms).unwrap()
    }

    #[test]
    fn history_means() {
        let g = grid();
        let c = corpus_from(&[vec![(3, 0, 1, 2)], vec![(3, 0, 1, 4)]], &g, 360);
        let one = history_stats(&c, 0..1).unwrap();
        assert_eq!(one.od_at(3)[(0, 1)], 2.0);
        let h = history_stats(&c, 0..2).unwrap();
        assert_eq!(h.od_at(3)[(0, 1)], 3.0);
        assert_eq!(h.demand_at(3)[0], 3.0);
        assert_eq!(h.demand_at(2)[0], 0.0);
        assert!(history_stats(&c, 0..0).is_err());
    }

    #[test]
    fn history_matches_naive_accumulation() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let days: Vec<Vec<_>> = (0..3)
            .map(|_| {
                (0..40)
                    .map(|_| (rng.random_range(0..4), rng.random_range(0..6), rng.random_range(0..6), rng.random_range(1..3)))
                    .collect()
            })
            .collect();
        let c = corpus_from(&days, &g, 360);
        let h = history_stats(&c, 0..3).unwrap();
        for s in 0..4 {
            for i in 0..6 {
                for j in 0..6 {
                    let mut total = 0.0;
                    for d in &days {
                        for x in d {
                            if x.0 == s && x.1 == i && x.2 == j {
                                total += x.3 as f64;
                            }
                        }
                    }
                    assert!((h.od_at(s)[(i, j)] - total / 3.0).abs() < 1e-12);
                }
                let row: f64 = (0..6).map(|j| h.od_at(s)[(i, j)]).sum();
                assert!((h.demand_at(s)[i] - row).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn previous_slot_crosses_midnight() {
        let g = grid();
        let c = corpus_from(&[vec![], vec![]], &g, 360);
        assert_eq!(c.previous(SlotIndex::new(1, 0)), Some(SlotIndex::new(0, 3)));
        assert_eq!(c.previous(SlotIndex::new(1, 2)), Some(SlotIndex::new(1, 1)));
        assert_eq!(c.previous(SlotIndex::new(0, 0)), None);
    }
}
