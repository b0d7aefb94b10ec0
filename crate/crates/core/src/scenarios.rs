//! Seeded construction of the benchmark worlds.

use std::f64::consts::FRAC_PI_4;

use noise::{NoiseFn, Perlin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentState;
use crate::error::{Error, Result};
use crate::fire::{FireConstants, FireGrid, FireModelParams, FireState, WindModel};
use crate::grid::{Cell, GridGeometry, Matrix};
use crate::predictive::derive_seed;
use crate::robot::{scan_time, RobotState};
use crate::sim::{SimParams, Setup};

const VICTIM_STREAM: u64 = 1;
const FIRE_STREAM: u64 = 2;
const MAP_STREAM: u64 = 3;
const RUN_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    SmallStatic,
    SmallDynamic,
    Complex,
    LargeLocalMap,
    /// A 9x9 grid with one central fire, for checking the wind-range cut-off.
    WindRange,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::SmallStatic,
        ScenarioKind::SmallDynamic,
        ScenarioKind::Complex,
        ScenarioKind::LargeLocalMap,
        ScenarioKind::WindRange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::SmallStatic => "small-static",
            ScenarioKind::SmallDynamic => "small-dynamic",
            ScenarioKind::Complex => "complex",
            ScenarioKind::LargeLocalMap => "large-local-map",
            ScenarioKind::WindRange => "wind-range",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param("scenario", format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n_h: usize,
    pub n_v: usize,
    pub cell_len: f64,
    pub n_robots: usize,
    pub sim: SimParams,
    pub wind_speed: f64,
    pub wind_direction: f64,
    /// Grid spacing of the Perlin lattice, in cells.
    pub noise_spacing: f64,
    pub population_centres: usize,
    pub random_ignitions: usize,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        let base = ScenarioSpec {
            kind,
            n_h: 40,
            n_v: 40,
            cell_len: 10.0,
            n_robots: 2,
            sim: SimParams::default(),
            wind_speed: 0.0,
            wind_direction: -FRAC_PI_4,
            noise_spacing: 8.0,
            population_centres: 0,
            random_ignitions: 0,
        };
        match kind {
            ScenarioKind::SmallStatic | ScenarioKind::SmallDynamic => base,
            ScenarioKind::Complex => {
                let constants = FireConstants {
                    c_fs1: 0.8,
                    c_fs2: 2.5,
                    c_wm1: 0.1,
                    c_wm2: 1.5,
                    c_wmd: 0.9,
                };
                let sim = SimParams {
                    fire: FireModelParams::from_constants(&constants, base.sim.step_seconds, 120.0, 600.0),
                    wind_model: WindModel::from_constants(&constants),
                    ..base.sim
                };
                ScenarioSpec {
                    n_h: 60,
                    n_v: 60,
                    sim,
                    wind_speed: 1.0,
                    wind_direction: FRAC_PI_4,
                    population_centres: 3,
                    random_ignitions: 2,
                    ..base
                }
            }
            ScenarioKind::LargeLocalMap => ScenarioSpec {
                n_h: 200,
                n_v: 200,
                population_centres: 2,
                ..base
            },
            ScenarioKind::WindRange => ScenarioSpec {
                n_h: 9,
                n_v: 9,
                n_robots: 1,
                sim: SimParams { coarsening: 1, ..base.sim },
                wind_speed: 6.0,
                wind_direction: FRAC_PI_4,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let geometry = GridGeometry::square(self.n_h, self.n_v, self.cell_len)?;
        geometry.coarsened(self.sim.coarsening)?;
        if self.n_robots == 0 {
            return Err(Error::param("n_robots", "must be at least 1"));
        }
        let coarse = geometry.coarsened(self.sim.coarsening)?;
        if self.n_robots > coarse.len() {
            return Err(Error::param("n_robots", "more robots than coarse cells"));
        }
        if !(self.wind_speed >= 0.0 && self.wind_speed.is_finite()) {
            return Err(Error::param("wind_speed", "must be finite and non-negative"));
        }
        if !(self.noise_spacing > 0.0) {
            return Err(Error::param("noise_spacing", "must be positive"));
        }
        self.sim.validate()
    }
}

/// Per-run seeds expanded from one master seed; the same list is used for
/// every architecture so that runs are paired.
pub fn seed_sequence(n_sim: usize, master_seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut seeds = Vec::with_capacity(n_sim);
    while seeds.len() < n_sim {
        let s = rng.gen::<u64>();
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    seeds
}

/// Robots on adjacent coarse cells along the southern edge, from the west corner.
pub fn spawn_cells(n_robots: usize, coarse: &GridGeometry) -> Vec<Cell> {
    (0..n_robots).map(|r| Cell::new(r % coarse.n_h, r / coarse.n_h)).collect()
}

fn perlin_structure(n_h: usize, n_v: usize, spacing: f64, seed: u64) -> Matrix {
    let perlin = Perlin::new(seed as u32);
    let raw = Matrix::from_shape_fn((n_h, n_v), |(i, j)| perlin.get([i as f64 / spacing + 0.5, j as f64 / spacing + 0.5]));
    normalise_unit(raw)
}

fn gaussian_centres(n_h: usize, n_v: usize, centres: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let sigma_x = n_h as f64 / 8.0;
    let sigma_y = n_v as f64 / 8.0;
    let means: Vec<(f64, f64)> = (0..centres)
        .map(|_| (rng.gen_range(0.0..n_h as f64), rng.gen_range(0.0..n_v as f64)))
        .collect();
    let raw = Matrix::from_shape_fn((n_h, n_v), |(i, j)| {
        means
            .iter()
            .map(|&(mx, my)| {
                let dx = (i as f64 - mx) / sigma_x;
                let dy = (j as f64 - my) / sigma_y;
                (-0.5 * (dx * dx + dy * dy)).exp()
            })
            .sum()
    });
    let peak = raw.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        raw.mapv(|v| v / peak)
    } else {
        raw
    }
}

fn normalise_unit(m: Matrix) -> Matrix {
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        m.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Matrix::ones(m.dim())
    }
}

/// Ground-truth victims: a Poisson count around the occupancy-scaled
/// population, capped per cell.
fn place_victims(env: &mut EnvironmentState, density: f64, max_victims: u8, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = env.geometry.cell_area();
    for ((i, j), &o) in env.occupancy.indexed_iter() {
        let mean = density * area * o;
        let count = if mean > 0.0 {
            Poisson::new(mean).map_or(0.0, |d| d.sample(&mut rng))
        } else {
            0.0
        };
        env.perceived_victims[[i, j]] = count.min(f64::from(max_victims)) as u8;
    }
}

fn ignite_all(fire: &mut FireGrid, cells: &[Cell], params: &FireModelParams) {
    for &c in cells {
        fire.ignite(c, params);
    }
}

/// Builds the world described by `spec`; a pure function of `(spec, seed)`.
pub fn build_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Setup> {
    spec.validate()?;
    let geometry = GridGeometry::square(spec.n_h, spec.n_v, spec.cell_len)?;
    let coarse = geometry.coarsened(spec.sim.coarsening)?;
    let mut env = EnvironmentState::new(geometry, spec.n_robots);
    env.wind_speed = Matrix::from_elem(geometry.shape(), spec.wind_speed);
    env.wind_dir = Matrix::from_elem(geometry.shape(), spec.wind_direction);

    let mut map_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, MAP_STREAM));
    match spec.kind {
        ScenarioKind::Complex => {
            env.structure = perlin_structure(spec.n_h, spec.n_v, spec.noise_spacing, map_rng.gen());
            env.occupancy = gaussian_centres(spec.n_h, spec.n_v, spec.population_centres, &mut map_rng);
        }
        ScenarioKind::LargeLocalMap => {
            env.occupancy = gaussian_centres(spec.n_h, spec.n_v, spec.population_centres, &mut map_rng);
        }
        _ => {}
    }
    env.debris = env.occupancy.clone();
    let env_params = spec.sim.environment;
    place_victims(&mut env, env_params.population_density, env_params.max_victims, derive_seed(seed, VICTIM_STREAM));

    let fire_params = spec.sim.fire;
    let mut fire = FireGrid::uniform(geometry.shape(), FireState::Flammable);
    match spec.kind {
        ScenarioKind::SmallStatic => {}
        ScenarioKind::SmallDynamic => {
            // A 2x2 block just south-west of the grid centre.
            let (ci, cj) = (spec.n_h / 2 - 1, spec.n_v / 2);
            let cells: Vec<Cell> = (ci..ci + 2).flat_map(|i| (cj..cj + 2).map(move |j| Cell::new(i, j))).collect();
            ignite_all(&mut fire, &cells, &fire_params);
        }
        ScenarioKind::Complex => {
            let cells: Vec<Cell> = (0..spec.random_ignitions)
                .map(|_| Cell::new(map_rng.gen_range(0..spec.n_h), map_rng.gen_range(0..spec.n_v)))
                .collect();
            ignite_all(&mut fire, &cells, &fire_params);
        }
        ScenarioKind::LargeLocalMap => {
            let cells: Vec<Cell> = (1..3).flat_map(|i| (1..3).map(move |j| Cell::new(i, j))).collect();
            ignite_all(&mut fire, &cells, &fire_params);
        }
        ScenarioKind::WindRange => {
            ignite_all(&mut fire, &[Cell::new(spec.n_h / 2, spec.n_v / 2)], &fire_params);
        }
    }

    let scan_seconds = scan_time(spec.sim.robot.scan_rate, coarse.cell_len_x, coarse.cell_len_y);
    let robots = spawn_cells(spec.n_robots, &coarse)
        .into_iter()
        .enumerate()
        .map(|(r, cell)| RobotState::new(r, cell, spec.sim.robot, scan_seconds))
        .collect();
    env.validate(env_params.max_victims)?;
    Ok(Setup {
        params: spec.sim,
        env,
        fire,
        robots,
        fire_seed: derive_seed(seed, FIRE_STREAM),
        run_seed: derive_seed(seed, RUN_STREAM),
    })
}
