//! The grid world's non-fire state: structure, scan certainty, victim and
//! debris beliefs, wind, and the per-step update laws that evolve them.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridGeometry, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentParams {
    /// Scan certainty lost per global step (σ).
    pub decay: f64,
    /// Average population density in persons per square metre.
    pub population_density: f64,
    /// Maximum number of victims per fine cell.
    pub max_victims: u8,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        EnvironmentParams {
            decay: 0.01,
            population_density: 0.06,
            max_victims: 5,
        }
    }
}

impl EnvironmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay >= 0.0 && self.decay <= 1.0) {
            return Err(Error::param("decay", "must lie in [0, 1]"));
        }
        if !(self.population_density >= 0.0 && self.population_density.is_finite()) {
            return Err(Error::param("population_density", "must be finite and non-negative"));
        }
        if self.max_victims == 0 {
            return Err(Error::param("max_victims", "must be at least 1"));
        }
        Ok(())
    }
}

pub fn update_scan_certainty(prev: f64, scanned: bool, decay: f64, accuracy: f64) -> f64 {
    let decayed = prev - decay;
    if scanned {
        decayed.max(accuracy)
    } else {
        decayed.max(0.0)
    }
}

pub fn update_victim_probability(
    prev: f64,
    scanned: bool,
    perceived: u8,
    max_victims: u8,
    certainty: f64,
) -> f64 {
    match (scanned, perceived) {
        (false, _) => prev,
        (true, 0) => 1.0 - certainty,
        (true, n) => f64::from(n) * certainty / f64::from(max_victims),
    }
}

pub fn update_debris(prev: f64, scanned: bool, occupancy: f64, certainty: f64) -> f64 {
    if !scanned {
        prev
    } else if occupancy > 0.0 {
        occupancy * certainty
    } else {
        1.0 - certainty
    }
}

/// Victim estimate used by the objective: the scanned belief where one
/// exists, otherwise a population prior scaled by debris occupancy.
pub fn estimate_victims(
    scanned: bool,
    victim_prob: f64,
    population_density: f64,
    cell_area: f64,
    occupancy: f64,
) -> f64 {
    if scanned {
        victim_prob
    } else {
        population_density * cell_area * occupancy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Mean,
    Max,
}

/// Block-aggregates `m` by `factor` using an arbitrary reducer over each
/// (possibly truncated) block.
pub fn coarsen_with<T, U>(
    m: &Array2<T>,
    factor: usize,
    mut reduce: impl FnMut(ArrayView2<'_, T>) -> U,
) -> Result<Array2<U>> {
    if factor == 0 {
        return Err(Error::param("factor", "coarsening factor must be positive"));
    }
    let (n_h, n_v) = m.dim();
    let (c_h, c_v) = (n_h.div_ceil(factor), n_v.div_ceil(factor));
    let mut out = Vec::with_capacity(c_h * c_v);
    for ci in 0..c_h {
        for cj in 0..c_v {
            let rows = ci * factor..((ci + 1) * factor).min(n_h);
            let cols = cj * factor..((cj + 1) * factor).min(n_v);
            out.push(reduce(m.slice(ndarray::s![rows, cols])));
        }
    }
    Ok(Array2::from_shape_vec((c_h, c_v), out).expect("coarse shape matches block count"))
}

pub fn coarsen(m: &Matrix, factor: usize, pooling: Pooling) -> Result<Matrix> {
    coarsen_with(m, factor, |block| match pooling {
        Pooling::Mean => block.sum() / block.len() as f64,
        Pooling::Max => block.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// A completed scan of one fine cell by one robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReport {
    pub robot: usize,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentState {
    pub geometry: GridGeometry,
    pub structure: Matrix,
    /// Ground-truth debris occupancy fraction, known from the building map.
    pub occupancy: Matrix,
    /// Perceived debris belief.
    pub debris: Matrix,
    /// One certainty matrix per robot.
    pub scan_certainty: Vec<Matrix>,
    pub victim_prob: Matrix,
    /// Whether any robot has ever scanned the cell.
    pub scanned: Array2<bool>,
    /// Victim count revealed when the cell is scanned.
    pub perceived_victims: Array2<u8>,
    pub wind_speed: Matrix,
    /// Radians counterclockwise from east; the direction the wind blows towards.
    pub wind_dir: Matrix,
    pub step: u64,
}

impl EnvironmentState {
    /// The standard initialisation: structure 1, occupancy and debris 0.5,
    /// calm wind pointing south-east, nothing scanned.
    pub fn new(geometry: GridGeometry, n_robots: usize) -> Self {
        let shape = geometry.shape();
        EnvironmentState {
            geometry,
            structure: Matrix::ones(shape),
            occupancy: Matrix::from_elem(shape, 0.5),
            debris: Matrix::from_elem(shape, 0.5),
            scan_certainty: vec![Matrix::zeros(shape); n_robots],
            victim_prob: Matrix::zeros(shape),
            scanned: Array2::from_elem(shape, false),
            perceived_victims: Array2::zeros(shape),
            wind_speed: Matrix::zeros(shape),
            wind_dir: Matrix::from_elem(shape, -std::f64::consts::FRAC_PI_4),
            step: 0,
        }
    }

    pub fn n_robots(&self) -> usize {
        self.scan_certainty.len()
    }

    pub fn validate(&self, max_victims: u8) -> Result<()> {
        let g = &self.geometry;
        for m in [
            &self.structure,
            &self.occupancy,
            &self.debris,
            &self.victim_prob,
            &self.wind_speed,
            &self.wind_dir,
        ]
        .into_iter()
        .chain(self.scan_certainty.iter())
        {
            g.check_shape(m)?;
        }
        g.check_shape(&self.scanned)?;
        g.check_shape(&self.perceived_victims)?;
        let unit = |name: &'static str, m: &Matrix| {
            if m.iter().all(|v| (0.0..=1.0).contains(v)) {
                Ok(())
            } else {
                Err(Error::param(name, "entries must lie in [0, 1]"))
            }
        };
        unit("structure", &self.structure)?;
        unit("occupancy", &self.occupancy)?;
        unit("debris", &self.debris)?;
        unit("victim_prob", &self.victim_prob)?;
        for m in &self.scan_certainty {
            unit("scan_certainty", m)?;
        }
        if self.perceived_victims.iter().any(|&n| n > max_victims) {
            return Err(Error::param("perceived_victims", "count exceeds max_victims"));
        }
        if self.wind_speed.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param("wind_speed", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// Element-wise max over robots: a cell is known if anyone scanned it recently.
    pub fn fused_scan_at(&self, i: usize, j: usize) -> f64 {
        self.scan_certainty
            .iter()
            .map(|m| m[[i, j]])
            .fold(0.0, f64::max)
    }

    pub fn fused_scan_certainty(&self) -> Matrix {
        Matrix::from_shape_fn(self.geometry.shape(), |(i, j)| self.fused_scan_at(i, j))
    }

    pub fn victim_estimate_at(&self, i: usize, j: usize, params: &EnvironmentParams) -> f64 {
        estimate_victims(
            self.scanned[[i, j]],
            self.victim_prob[[i, j]],
            params.population_density,
            self.geometry.cell_area(),
            self.occupancy[[i, j]],
        )
    }

    pub fn victim_estimate(&self, params: &EnvironmentParams) -> Matrix {
        Matrix::from_shape_fn(self.geometry.shape(), |(i, j)| {
            self.victim_estimate_at(i, j, params)
        })
    }

    /// Applies one global step of the update laws. `accuracy[r]` is robot
    /// `r`'s sensor accuracy. Reports are applied in the order given, so
    /// callers merge them by robot id.
    pub fn advance(&mut self, reports: &[ScanReport], accuracy: &[f64], params: &EnvironmentParams) {
        assert_eq!(accuracy.len(), self.n_robots(), "one accuracy per robot");
        let decay = params.decay;
        for m in &mut self.scan_certainty {
            m.mapv_inplace(|s| update_scan_certainty(s, false, decay, 0.0));
        }
        for report in reports {
            let idx = report.cell.index();
            let certainty = &mut self.scan_certainty[report.robot][idx];
            // The decay above already applied `prev - σ`; the scanned branch only
            // raises the floor to the sensor accuracy.
            *certainty = certainty.max(accuracy[report.robot]);
            let s = *certainty;
            self.victim_prob[idx] = update_victim_probability(
                self.victim_prob[idx],
                true,
                self.perceived_victims[idx],
                params.max_victims,
                s,
            );
            self.debris[idx] = update_debris(self.debris[idx], true, self.occupancy[idx], s);
            self.scanned[idx] = true;
        }
        self.step += 1;
    }

    pub fn advanced(&self, reports: &[ScanReport], accuracy: &[f64], params: &EnvironmentParams) -> Self {
        let mut next = self.clone();
        next.advance(reports, accuracy, params);
        next
    }
}
