//! Wildfire cellular automaton: spread probability, ability-to-spread ramp,
//! the five-state fire machine, fire-risk time and downwind proximity maps.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{coarsen_with, EnvironmentState};
use crate::error::{Error, Result};
use crate::grid::{Cell, GridGeometry, Matrix};

/// Fire-risk time assigned to cells that cannot burn, in minutes.
pub const NO_RISK_MINUTES: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum FireState {
    NonFlammable = 0,
    Flammable = 1,
    Catching = 2,
    Burning = 3,
    Extinguished = 4,
}

impl FireState {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => FireState::NonFlammable,
            1 => FireState::Flammable,
            2 => FireState::Catching,
            3 => FireState::Burning,
            4 => FireState::Extinguished,
            _ => return None,
        })
    }

    /// Catching or burning.
    pub fn is_active(self) -> bool {
        matches!(self, FireState::Catching | FireState::Burning)
    }

    /// Pooling rank used when coarsening: active fire dominates a block.
    fn severity(self) -> u8 {
        match self {
            FireState::NonFlammable => 0,
            FireState::Extinguished => 1,
            FireState::Flammable => 2,
            FireState::Catching => 3,
            FireState::Burning => 4,
        }
    }

    /// Display colour for exported frames and plots.
    pub fn colour(self) -> &'static str {
        match self {
            FireState::NonFlammable => "#bdbdbd",
            FireState::Flammable => "#4caf50",
            FireState::Catching => "#ff9800",
            FireState::Burning => "#e53935",
            FireState::Extinguished => "#212121",
        }
    }
}

/// The five named fire and wind constants of the case-study configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireConstants {
    pub c_fs1: f64,
    pub c_fs2: f64,
    pub c_wm1: f64,
    pub c_wm2: f64,
    pub c_wmd: f64,
}

impl Default for FireConstants {
    fn default() -> Self {
        FireConstants {
            c_fs1: 0.2,
            c_fs2: 0.2,
            c_wm1: 0.1,
            c_wm2: 0.1,
            c_wmd: 0.4,
        }
    }
}

/// How the distance term in the spread exponent is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpreadDistance {
    /// Euclidean distance between cell centres in cell lengths.
    Cells,
    /// Squared Euclidean distance between cell centres in square metres.
    SquaredMetres,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireModelParams {
    /// Multiplier on structure, occupancy and ability.
    pub spread_scale: f64,
    /// Coefficient on the source-target distance inside the exponent.
    pub distance_coeff: f64,
    /// Coefficient on mean wind speed inside the exponent.
    pub speed_coeff: f64,
    /// Coefficient on wind speed times alignment inside the exponent.
    pub alignment_coeff: f64,
    /// Deterministic ignition threshold. The default keeps the threshold
    /// front close to the mean stochastic front under the default constants.
    pub threshold: f64,
    /// Steps from ignition until a catching cell burns.
    pub ignition_steps: i64,
    /// Steps from ignition until a burning cell is extinguished.
    pub burnout_steps: i64,
    pub wind_radius: usize,
    pub low_wind: f64,
    pub high_wind: f64,
    pub distance: SpreadDistance,
}

impl FireModelParams {
    /// Maps the named constants onto the spread law. The distance constant
    /// enters with a negative sign so that spread weakens with distance.
    pub fn from_constants(
        c: &FireConstants,
        step_seconds: f64,
        ignition_seconds: f64,
        burnout_seconds: f64,
    ) -> Self {
        FireModelParams {
            spread_scale: c.c_fs1,
            distance_coeff: -c.c_fs2,
            speed_coeff: c.c_wm1,
            alignment_coeff: c.c_wm2,
            threshold: 0.1,
            ignition_steps: (ignition_seconds / step_seconds).ceil() as i64,
            burnout_steps: (burnout_seconds / step_seconds).ceil() as i64,
            wind_radius: 3,
            low_wind: 1.0,
            high_wind: 5.0,
            distance: SpreadDistance::Cells,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.ignition_steps && self.ignition_steps < self.burnout_steps) {
            return Err(Error::param(
                "ignition_steps",
                "require 0 < ignition steps < burnout steps",
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::param("threshold", "must lie in (0, 1)"));
        }
        if self.wind_radius == 0 {
            return Err(Error::param("wind_radius", "must be at least 1"));
        }
        if !(self.low_wind <= self.high_wind) {
            return Err(Error::param("low_wind", "tier cutoffs must be ordered"));
        }
        Ok(())
    }
}

impl Default for FireModelParams {
    fn default() -> Self {
        Self::from_constants(&FireConstants::default(), 15.0, 120.0, 600.0)
    }
}

/// Constants of the downwind direction component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindModel {
    pub base: f64,
    pub directional: f64,
}

impl WindModel {
    pub fn from_constants(c: &FireConstants) -> Self {
        WindModel {
            base: c.c_wm1,
            directional: c.c_wmd,
        }
    }
}

impl Default for WindModel {
    fn default() -> Self {
        Self::from_constants(&FireConstants::default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FireGrid {
    pub state: Array2<FireState>,
    /// Step at which each cell caught fire, if ever.
    pub ignition_step: Array2<Option<i64>>,
    /// Global step this grid describes.
    pub step: i64,
}

impl FireGrid {
    pub fn uniform(shape: (usize, usize), state: FireState) -> Self {
        FireGrid {
            state: Array2::from_elem(shape, state),
            ignition_step: Array2::from_elem(shape, None),
            step: 0,
        }
    }

    /// Marks a cell as burning with an ignition step chosen so that it can
    /// spread immediately.
    pub fn ignite(&mut self, cell: Cell, params: &FireModelParams) {
        self.state[cell.index()] = FireState::Burning;
        self.ignition_step[cell.index()] = Some(self.step - params.ignition_steps);
    }

    pub fn active_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.state
            .indexed_iter()
            .filter(|(_, s)| s.is_active())
            .map(|((i, j), _)| Cell::new(i, j))
    }

    pub fn count(&self, state: FireState) -> usize {
        self.state.iter().filter(|&&s| s == state).count()
    }

    pub fn codes(&self) -> Matrix {
        self.state.mapv(|s| f64::from(s.code()))
    }
}

/// Neighbourhood offsets within Chebyshev radius `radius`, excluding the
/// origin, in row-major order.
pub fn chebyshev_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    (-r..=r)
        .flat_map(|di| (-r..=r).map(move |dj| (di, dj)))
        .filter(|&o| o != (0, 0))
        .collect()
}

pub fn neighbourhood_radius(wind_speed: f64, params: &FireModelParams) -> usize {
    let tier = if wind_speed < params.low_wind {
        1
    } else if wind_speed <= params.high_wind {
        2
    } else {
        3
    };
    tier.min(params.wind_radius)
}

pub fn spread_neighbourhood(wind_speed: f64, params: &FireModelParams) -> Vec<(isize, isize)> {
    chebyshev_offsets(neighbourhood_radius(wind_speed, params))
}

fn ramp_up(d: f64, k2: f64, k10: f64) -> f64 {
    (4.0 * d + 0.2 * k10 - 4.2 * k2) / (k10 - k2)
}

fn ramp_down(d: f64, k2: f64, k10: f64) -> f64 {
    1.25 * (k10 - d) / (k10 - k2)
}

/// Capacity of a burning cell to ignite neighbours, zero outside the burn window.
pub fn fire_ability(k: i64, k_fire: i64, ignition_steps: i64, burnout_steps: i64) -> f64 {
    fire_ability_elapsed((k - k_fire) as f64, ignition_steps as f64, burnout_steps as f64)
}

/// [`fire_ability`] as a function of (possibly fractional) steps since ignition.
pub fn fire_ability_elapsed(d: f64, k2: f64, k10: f64) -> f64 {
    if d < k2 || d > k10 {
        return 0.0;
    }
    if d <= 0.2 * k10 + 0.8 * k2 {
        ramp_up(d, k2, k10)
    } else {
        ramp_down(d, k2, k10)
    }
}

fn spread_distance(geometry: &GridGeometry, source: Cell, target: Cell, kind: SpreadDistance) -> f64 {
    match kind {
        SpreadDistance::SquaredMetres => geometry.squared_distance(source, target),
        SpreadDistance::Cells => {
            let di = source.i as f64 - target.i as f64;
            let dj = source.j as f64 - target.j as f64;
            (di * di + dj * dj).sqrt()
        }
    }
}

/// Unclamped single-source spread contribution from a burning `source` with
/// the given ability to a `target` cell.
pub fn spread_contribution(
    env: &EnvironmentState,
    params: &FireModelParams,
    source: Cell,
    target: Cell,
    ability: f64,
) -> f64 {
    let (s, t) = (source.index(), target.index());
    let speed = 0.5 * (env.wind_speed[s] + env.wind_speed[t]);
    let (ds, dt) = (env.wind_dir[s], env.wind_dir[t]);
    let mean_dir = (ds.sin() + dt.sin()).atan2(ds.cos() + dt.cos());
    let dx = (target.i as f64 - source.i as f64) * env.geometry.cell_len_x;
    let dy = (target.j as f64 - source.j as f64) * env.geometry.cell_len_y;
    let alignment = (mean_dir - dy.atan2(dx)).cos();
    let delta = spread_distance(&env.geometry, source, target, params.distance);
    params.spread_scale
        * env.structure[t]
        * env.occupancy[t]
        * ability
        * (params.distance_coeff * delta
            + params.speed_coeff * speed
            + params.alignment_coeff * speed * alignment)
            .exp()
}

/// Spread probability from a single burning source, clamped to `[0, 1]`.
pub fn spread_probability(
    env: &EnvironmentState,
    fire: &FireGrid,
    params: &FireModelParams,
    source: Cell,
    target: Cell,
) -> f64 {
    let ability = match fire.ignition_step[source.index()] {
        Some(k_fire) if fire.state[source.index()] == FireState::Burning => {
            fire_ability(fire.step, k_fire, params.ignition_steps, params.burnout_steps)
        }
        _ => 0.0,
    };
    spread_contribution(env, params, source, target, ability).min(1.0)
}

/// Accumulated spread probability onto every flammable cell, summed over
/// burning sources and clamped to 1.
pub fn spread_probability_map(env: &EnvironmentState, fire: &FireGrid, params: &FireModelParams) -> Matrix {
    let (n_h, n_v) = fire.state.dim();
    let mut acc = Matrix::zeros((n_h, n_v));
    let neighbourhoods: Vec<_> = (1..=3).map(chebyshev_offsets).collect();
    for ((i, j), &state) in fire.state.indexed_iter() {
        if state != FireState::Burning {
            continue;
        }
        let Some(k_fire) = fire.ignition_step[[i, j]] else {
            continue;
        };
        let ability = fire_ability(fire.step, k_fire, params.ignition_steps, params.burnout_steps);
        if ability <= 0.0 {
            continue;
        }
        let source = Cell::new(i, j);
        let radius = neighbourhood_radius(env.wind_speed[[i, j]], params);
        for &(di, dj) in &neighbourhoods[radius - 1] {
            let Some(target) = source.offset(di, dj, n_h, n_v) else {
                continue;
            };
            if fire.state[target.index()] == FireState::Flammable {
                acc[target.index()] += spread_contribution(env, params, source, target, ability);
            }
        }
    }
    acc.mapv_inplace(|p| p.min(1.0));
    acc
}

/// How ignition decisions are made for flammable cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ignition {
    /// Compare the spread probability against a uniform draw from a
    /// counter-based stream keyed by (seed, step, cell).
    Stochastic { seed: u64 },
    /// Ignite wherever the spread probability exceeds the threshold.
    Threshold,
}

fn ignition_stream(seed: u64, step: i64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

fn draw_at(rng: &mut ChaCha8Rng, cell_index: usize) -> f64 {
    rng.set_word_pos(cell_index as u128 * 2);
    rng.gen::<f64>()
}

/// The uniform draw used for a cell at a step; exposed for replay checks.
pub fn ignition_draw(seed: u64, step: i64, cell_index: usize) -> f64 {
    draw_at(&mut ignition_stream(seed, step), cell_index)
}

/// Advances the automaton by one global step.
pub fn step_fire(fire: &FireGrid, env: &EnvironmentState, params: &FireModelParams, mode: Ignition) -> FireGrid {
    let k = fire.step;
    let has_burning = fire.state.iter().any(|&s| s == FireState::Burning);
    let probs = has_burning.then(|| spread_probability_map(env, fire, params));
    let mut rng = match mode {
        Ignition::Stochastic { seed } => Some(ignition_stream(seed, k)),
        Ignition::Threshold => None,
    };
    let n_v = fire.state.ncols();
    let mut next = fire.clone();
    next.step = k + 1;
    for ((i, j), &state) in fire.state.indexed_iter() {
        let k_fire = fire.ignition_step[[i, j]];
        match state {
            FireState::Flammable => {
                let p = probs.as_ref().map_or(0.0, |m| m[[i, j]]);
                if p <= 0.0 {
                    continue;
                }
                let ignite = match rng.as_mut() {
                    Some(rng) => draw_at(rng, i * n_v + j) < p,
                    None => p > params.threshold,
                };
                if ignite {
                    next.state[[i, j]] = FireState::Catching;
                    next.ignition_step[[i, j]] = Some(k);
                }
            }
            FireState::Catching => {
                if k_fire.is_some_and(|kf| k >= kf + params.ignition_steps) {
                    next.state[[i, j]] = FireState::Burning;
                }
            }
            FireState::Burning => {
                if k_fire.is_some_and(|kf| k >= kf + params.burnout_steps) {
                    next.state[[i, j]] = FireState::Extinguished;
                }
            }
            FireState::NonFlammable | FireState::Extinguished => {}
        }
    }
    next
}

/// Coarsens fire states so that active fire inside a block is never hidden.
pub fn coarsen_fire(states: &Array2<FireState>, factor: usize) -> Result<Array2<FireState>> {
    coarsen_with(states, factor, |block| {
        block
            .iter()
            .copied()
            .max_by_key(|s| s.severity())
            .expect("blocks are never empty")
    })
}

/// Minutes until each cell is at risk of burning, by wind regime.
pub fn fire_risk_time(states: &Array2<FireState>, wind_speed: &Matrix, params: &FireModelParams) -> Matrix {
    let (n_h, n_v) = states.dim();
    let mut risk = Matrix::from_elem((n_h, n_v), NO_RISK_MINUTES);
    let burning: Vec<Cell> = cells_in(states, FireState::Burning);
    let catching: Vec<Cell> = cells_in(states, FireState::Catching);
    if burning.is_empty() && catching.is_empty() {
        return risk;
    }
    let nearest = |cell: Cell, set: &[Cell]| {
        set.iter()
            .filter(|&&c| c != cell)
            .map(|&c| cell.chebyshev(c))
            .min()
            .unwrap_or(usize::MAX)
    };
    for ((i, j), &state) in states.indexed_iter() {
        if state == FireState::NonFlammable {
            continue;
        }
        let cell = Cell::new(i, j);
        let b = nearest(cell, &burning);
        let c = nearest(cell, &catching);
        let v = wind_speed[[i, j]];
        let minutes = if v < params.low_wind {
            if b <= 1 {
                Some(0.0)
            } else if c <= 1 || b <= 2 {
                Some(2.0)
            } else if c <= 2 || b <= 3 {
                Some(4.0)
            } else if c <= 3 {
                Some(6.0)
            } else {
                None
            }
        } else if v <= params.high_wind {
            if b <= 2 {
                Some(0.0)
            } else if c <= 2 {
                Some(2.0)
            } else {
                None
            }
        } else if b <= 3 {
            Some(0.0)
        } else if c <= 1 {
            Some(2.0)
        } else {
            None
        };
        if let Some(m) = minutes {
            risk[[i, j]] = m;
        }
    }
    risk
}

fn cells_in(states: &Array2<FireState>, wanted: FireState) -> Vec<Cell> {
    states
        .indexed_iter()
        .filter(|(_, &s)| s == wanted)
        .map(|((i, j), _)| Cell::new(i, j))
        .collect()
}

/// Direction component of downwind proximity for a cell offset `(dx, dy)`
/// from a fire, in cell units.
pub fn downwind_direction(speed: f64, wind_dir: f64, dx: f64, dy: f64, model: &WindModel) -> f64 {
    let bearing = dy.atan2(dx);
    (speed * (model.base + model.directional * ((wind_dir - bearing).cos() - 1.0))).exp()
}

/// Distance component of downwind proximity, in cell units.
pub fn downwind_distance(dx: f64, dy: f64, n_h: usize, n_v: usize) -> f64 {
    let diag = ((n_h * n_h + n_v * n_v) as f64).sqrt();
    1.0 - (dx * dx + dy * dy).sqrt() / diag
}

/// Proximity to active fire, inverted so that 1 means far from any fire.
pub fn downwind_map(states: &Array2<FireState>, wind_speed: &Matrix, wind_dir: &Matrix, model: &WindModel) -> Matrix {
    let (n_h, n_v) = states.dim();
    let fires: Vec<Cell> = states
        .indexed_iter()
        .filter(|(_, s)| s.is_active())
        .map(|((i, j), _)| Cell::new(i, j))
        .collect();
    Matrix::from_shape_fn((n_h, n_v), |(i, j)| {
        let speed = wind_speed[[i, j]];
        let dir = wind_dir[[i, j]];
        let proximity = fires
            .iter()
            .map(|s| {
                let dx = i as f64 - s.i as f64;
                let dy = j as f64 - s.j as f64;
                let distance = downwind_distance(dx, dy, n_h, n_v);
                if speed == 0.0 {
                    distance
                } else {
                    downwind_direction(speed, dir, dx, dy, model) * distance
                }
            })
            .fold(0.0, f64::max);
        1.0 - proximity.clamp(0.0, 1.0)
    })
}
