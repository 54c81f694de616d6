//! Uniform grid partition of the service area and haversine geometry.
//!
//! Cells are laid out row-major from the south-west corner: row 0 is the
//! southernmost band, column 0 the westernmost, and `id = row * cols + col`.
//! Cell extents use local flat-earth degree steps; distances between cell
//! centres are great-circle distances.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometres spanned by one degree of latitude (and of longitude at the
/// equator) on a sphere of radius [`EARTH_RADIUS_KM`].
pub const KM_PER_DEGREE: f64 = 111.195;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    /// Latitude of the south-west corner, degrees.
    pub origin_lat: f64,
    /// Longitude of the south-west corner, degrees.
    pub origin_lon: f64,
    pub cell_length_km: f64,
    pub rows: usize,
    pub cols: usize,
    /// Geographical neighbour threshold `L`; defaults to twice the cell length.
    #[cfg_attr(feature = "serde", serde(default))]
    pub geo_threshold_km: Option<f64>,
}

impl GridSpec {
    pub fn new(origin_lat: f64, origin_lon: f64, cell_length_km: f64, rows: usize, cols: usize) -> Self {
        Self {
            origin_lat,
            origin_lon,
            cell_length_km,
            rows,
            cols,
            geo_threshold_km: None,
        }
    }

    pub fn with_threshold(mut self, km: f64) -> Self {
        self.geo_threshold_km = Some(km);
        self
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn threshold_km(&self) -> f64 {
        self.geo_threshold_km.unwrap_or(2.0 * self.cell_length_km)
    }

    pub fn lat_step(&self) -> f64 {
        self.cell_length_km / KM_PER_DEGREE
    }

    pub fn lon_step(&self) -> f64 {
        self.cell_length_km / (KM_PER_DEGREE * libm::cos(self.origin_lat.to_radians()))
    }

    /// `(min_lat, min_lon, max_lat, max_lon)` of the whole grid.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_lat,
            self.origin_lon,
            self.origin_lat + self.rows as f64 * self.lat_step(),
            self.origin_lon + self.cols as f64 * self.lon_step(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidGrid(format!(
                "rows and cols must be positive, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.cell_length_km > 0.0 && self.cell_length_km.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "cell length must be positive, got {}",
                self.cell_length_km
            )));
        }
        let l = self.threshold_km();
        if !(l > 0.0) {
            return Err(Error::InvalidGrid(format!("geo threshold must be positive, got {l}")));
        }
        let (lat0, lon0, lat1, lon1) = self.bounding_box();
        if !(-90.0..=90.0).contains(&lat0)
            || !(-90.0..=90.0).contains(&lat1)
            || !(-180.0..=180.0).contains(&lon0)
            || !(-180.0..=180.0).contains(&lon1)
            || self.origin_lat.abs() >= 89.0
        {
            return Err(Error::InvalidGrid(format!(
                "grid [{lat0}, {lon0}]..[{lat1}, {lon1}] leaves the valid coordinate range"
            )));
        }
        Ok(())
    }

    /// Cell containing a point, using half-open `[low, high)` extents.
    ///
    /// Offsets are snapped by a 1e-9 cell fraction so that a cell's own
    /// corner (as returned by [`GridSpec::cell_corner`]) maps back to it.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<usize> {
        const SNAP: f64 = 1e-9;
        let r = libm::floor((lat - self.origin_lat) / self.lat_step() + SNAP);
        let c = libm::floor((lon - self.origin_lon) / self.lon_step() + SNAP);
        if !(r >= 0.0 && c >= 0.0) {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        (r < self.rows && c < self.cols).then(|| r * self.cols + c)
    }

    /// `(min_lat, min_lon)` corner of a cell.
    pub fn cell_corner(&self, id: usize) -> (f64, f64) {
        let (row, col) = (id / self.cols, id % self.cols);
        (
            self.origin_lat + row as f64 * self.lat_step(),
            self.origin_lon + col as f64 * self.lon_step(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub center_lat: f64,
    pub center_lon: f64,
}

pub fn build_grid(spec: &GridSpec) -> Result<Vec<GridCell>> {
    spec.validate()?;
    let (dlat, dlon) = (spec.lat_step(), spec.lon_step());
    let mut cells = Vec::with_capacity(spec.n_cells());
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            cells.push(GridCell {
                id: row * spec.cols + col,
                row,
                col,
                center_lat: spec.origin_lat + (row as f64 + 0.5) * dlat,
                center_lon: spec.origin_lon + (col as f64 + 0.5) * dlon,
            });
        }
    }
    Ok(cells)
}

/// Great-circle distance in kilometres.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> Result<f64> {
    for (lat, lon) in [(lat1, lon1), (lat2, lon2)] {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::CoordinateOutOfRange { lat, lon });
        }
    }
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = p2 - p1;
    let dlambda = (lon2 - lon1).to_radians();
    let s_phi = libm::sin(dphi / 2.0);
    let s_lambda = libm::sin(dlambda / 2.0);
    let h = s_phi * s_phi + libm::cos(p1) * libm::cos(p2) * s_lambda * s_lambda;
    Ok(2.0 * EARTH_RADIUS_KM * libm::asin(libm::sqrt(h.min(1.0))))
}

/// Symmetric matrix of centre-to-centre haversine distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceGraph {
    n: usize,
    d: Vec<f64>,
}

impl DistanceGraph {
    pub fn from_cells(cells: &[GridCell]) -> Result<Self> {
        let n = cells.len();
        let mut d = alloc::vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (&cells[i], &cells[j]);
                let km = haversine_km(a.center_lat, a.center_lon, b.center_lat, b.center_lon)?;
                d[i * n + j] = km;
                d[j * n + i] = km;
            }
        }
        Ok(Self { n, d })
    }

    pub fn for_grid(spec: &GridSpec) -> Result<Self> {
        Self::from_cells(&build_grid(spec)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// All cells other than `cell_id` whose centre lies within `threshold_km`.
pub fn geo_neighbors(cell_id: usize, dist: &DistanceGraph, threshold_km: f64) -> Vec<usize> {
    assert!(cell_id < dist.n(), "cell {cell_id} outside grid of {}", dist.n());
    (0..dist.n())
        .filter(|&j| j != cell_id && dist.get(cell_id, j) <= threshold_km)
        .collect()
}
