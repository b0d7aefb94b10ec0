//! The closed loop shared by the plant and the predictor: robots choose and
//! scan targets, the environment decays and absorbs scans, and the fire
//! evolves along a precomputed track that robots cannot influence.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::environment::{coarsen, EnvironmentParams, EnvironmentState, Pooling, ScanReport};
use crate::error::{Error, Result};
use crate::fire::{coarsen_fire, downwind_map, fire_risk_time, step_fire, FireGrid, FireModelParams, Ignition, WindModel};
use crate::fuzzy::{attraction_map, Aggregation, FuzzyController, InputView, LocalWindow, Theta};
use crate::grid::{Cell, Coarsening, GridGeometry, Matrix};
use crate::robot::{feasible_set, mean_wind, scan_time, step_robot_flc, step_robot_mpc, Kinematics, RobotParams, RobotState, Task, Wind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveParams {
    pub c_o1: f64,
    pub c_o2: f64,
    /// Weight every unscanned victim carries regardless of fire. With 0 the
    /// cost is the exact complement of the fire-weighted scan reward.
    pub coverage_weight: f64,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        ObjectiveParams {
            c_o1: 1.0,
            c_o2: 1.0,
            coverage_weight: 1.0,
        }
    }
}

/// Physical and timing constants of one simulated world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Global step `T` in seconds.
    pub step_seconds: f64,
    pub coarsening: usize,
    pub environment: EnvironmentParams,
    pub fire: FireModelParams,
    pub wind_model: WindModel,
    pub robot: RobotParams,
    /// Control interval; also bounds how far a robot may plan a single leg.
    pub t_ctrl: f64,
    pub objective: ObjectiveParams,
    pub aggregation: Aggregation,
    /// Restricts target selection (and predicted cost) to a window of this
    /// many coarse cells around each robot.
    pub local_radius: Option<usize>,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            step_seconds: 15.0,
            coarsening: 5,
            environment: EnvironmentParams::default(),
            fire: FireModelParams::default(),
            wind_model: WindModel::default(),
            robot: RobotParams::default(),
            t_ctrl: 300.0,
            objective: ObjectiveParams::default(),
            aggregation: Aggregation::default(),
            local_radius: None,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_seconds > 0.0 && self.step_seconds.is_finite()) {
            return Err(Error::param("step_seconds", "must be positive"));
        }
        if self.coarsening == 0 {
            return Err(Error::param("coarsening", "must be at least 1"));
        }
        if !(self.robot.airspeed > 0.0) {
            return Err(Error::param("airspeed", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.robot.sensor_accuracy) {
            return Err(Error::param("sensor_accuracy", "must lie in [0, 1]"));
        }
        if !(self.robot.scan_rate >= 0.0) {
            return Err(Error::param("scan_rate", "must be non-negative"));
        }
        if !(self.t_ctrl > 0.0) {
            return Err(Error::param("t_ctrl", "must be positive"));
        }
        if self.local_radius == Some(0) {
            return Err(Error::param("local_radius", "must be at least 1"));
        }
        self.environment.validate()?;
        self.fire.validate()
    }
}

/// Fire state at one step with the maps robots and the cost read from it.
#[derive(Debug, Clone, PartialEq)]
pub struct FireFrame {
    pub fire: Arc<FireGrid>,
    /// Fine-grid downwind proximity, inverted (1 far from fire).
    pub downwind: Arc<Matrix>,
    /// Coarse-grid fire risk time in minutes.
    pub risk: Arc<Matrix>,
}

/// Consecutive fire frames starting at some global step.
#[derive(Debug, Clone, PartialEq)]
pub struct FireTrack {
    pub frames: Vec<FireFrame>,
}

impl FireTrack {
    /// Evolves `initial` for `steps` steps, returning `steps + 1` frames.
    /// Derived maps are reused while the fire pattern they depend on is unchanged.
    pub fn simulate(
        initial: &FireGrid,
        env: &EnvironmentState,
        params: &SimParams,
        steps: usize,
        mode: Ignition,
    ) -> Result<FireTrack> {
        let coarse_speed = coarsen(&env.wind_speed, params.coarsening, Pooling::Mean)?;
        let mut frames = Vec::with_capacity(steps + 1);
        let mut current = initial.clone();
        let mut previous: Option<(FireFrame, Array2<bool>, Array2<crate::fire::FireState>)> = None;
        for n in 0..=steps {
            if n > 0 {
                current = step_fire(&current, env, &params.fire, mode);
            }
            let active = current.state.mapv(|s| s.is_active());
            let coarse = coarsen_fire(&current.state, params.coarsening)?;
            let downwind = match &previous {
                Some((f, a, _)) if *a == active => f.downwind.clone(),
                _ => Arc::new(downwind_map(&current.state, &env.wind_speed, &env.wind_dir, &params.wind_model)),
            };
            let risk = match &previous {
                Some((f, _, c)) if *c == coarse => f.risk.clone(),
                _ => Arc::new(fire_risk_time(&coarse, &coarse_speed, &params.fire)),
            };
            let frame = FireFrame {
                fire: Arc::new(current.clone()),
                downwind,
                risk,
            };
            frames.push(frame.clone());
            previous = Some((frame, active, coarse));
        }
        Ok(FireTrack { frames })
    }

    /// Number of steps covered (one fewer than the frame count).
    pub fn steps(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }
}

/// How robots pick their next target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Guidance {
    /// Argmax of the robot's fuzzy attraction map at each scan completion.
    Fuzzy,
    /// Follow the target queue installed by the planner.
    Queue,
}

/// Read-only data shared by every copy of a world.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub params: SimParams,
    pub coarsening: Coarsening,
    pub scan_seconds: f64,
    /// Mean wind over each coarse position's reachable set.
    pub wind_at: Array2<Wind>,
    pub accuracy: Vec<f64>,
    pub max_response: f64,
}

impl SimContext {
    pub fn new(params: SimParams, env: &EnvironmentState, n_robots: usize) -> Result<Self> {
        params.validate()?;
        let coarsening = Coarsening::new(env.geometry, params.coarsening)?;
        let coarse = coarsening.coarse;
        let speed = coarsen(&env.wind_speed, params.coarsening, Pooling::Mean)?;
        let dir = coarse_direction(&env.wind_dir, params.coarsening)?;
        let wind_at = Array2::from_shape_fn(coarse.shape(), |(i, j)| {
            let reach = feasible_set(&coarse, Cell::new(i, j), params.robot.airspeed, params.t_ctrl);
            mean_wind(&reach, &speed, &dir)
        });
        let scan_seconds = scan_time(params.robot.scan_rate, coarse.cell_len_x, coarse.cell_len_y);
        let all: Vec<Cell> = coarse.cells().collect();
        let overall = Kinematics {
            geometry: coarse,
            wind: mean_wind(&all, &speed, &dir),
            scan_seconds,
        };
        Ok(SimContext {
            params,
            coarsening,
            scan_seconds,
            wind_at,
            accuracy: vec![params.robot.sensor_accuracy; n_robots],
            max_response: overall.max_response_time(params.robot.airspeed),
        })
    }

    pub fn coarse(&self) -> GridGeometry {
        self.coarsening.coarse
    }

    pub fn kinematics_at(&self, cell: Cell) -> Kinematics {
        Kinematics {
            geometry: self.coarsening.coarse,
            wind: self.wind_at[cell.index()],
            scan_seconds: self.scan_seconds,
        }
    }
}

fn coarse_direction(dir: &Matrix, factor: usize) -> Result<Matrix> {
    crate::environment::coarsen_with(dir, factor, |block| {
        let (s, c) = block.iter().fold((0.0, 0.0), |(s, c), d| (s + d.sin(), c + d.cos()));
        s.atan2(c)
    })
}

/// Fine cells a cost is accumulated over, as flat row-major indices in
/// increasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    indices: Vec<usize>,
}

impl Region {
    pub fn from_mask(mask: &Array2<bool>) -> Self {
        let n_v = mask.ncols();
        let indices = mask.indexed_iter().filter(|(_, &m)| m).map(|((i, j), _)| i * n_v + j).collect();
        Region { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn flat<T>(m: &Array2<T>) -> &[T] {
    m.as_slice().expect("matrices are kept in standard layout")
}

/// Per-cell quantities the cost and reward read, in flat form.
pub(crate) struct CellTerms<'a> {
    scanned: &'a [bool],
    victim_prob: &'a [f64],
    occupancy: &'a [f64],
    scans: Vec<&'a [f64]>,
    downwind: &'a [f64],
    prior_scale: f64,
}

impl<'a> CellTerms<'a> {
    pub(crate) fn new(env: &'a EnvironmentState, downwind: &'a Matrix, params: &SimParams) -> Self {
        CellTerms {
            scanned: flat(&env.scanned),
            victim_prob: flat(&env.victim_prob),
            occupancy: flat(&env.occupancy),
            scans: env.scan_certainty.iter().map(flat).collect(),
            downwind: flat(downwind),
            prior_scale: params.environment.population_density * env.geometry.cell_area(),
        }
    }

    #[inline]
    pub(crate) fn victim(&self, idx: usize) -> f64 {
        if self.scanned[idx] {
            self.victim_prob[idx]
        } else {
            self.prior_scale * self.occupancy[idx]
        }
    }

    #[inline]
    pub(crate) fn scan(&self, idx: usize) -> f64 {
        self.scans.iter().map(|m| m[idx]).fold(0.0, f64::max)
    }

    #[inline]
    pub(crate) fn downwind(&self, idx: usize) -> f64 {
        self.downwind[idx]
    }

    /// Sums `f` over the region (or every cell) in increasing index order.
    pub(crate) fn sum(&self, region: Option<&Region>, f: impl Fn(&Self, usize) -> f64) -> f64 {
        let mut total = 0.0;
        match region {
            Some(r) => {
                for &idx in r.indices() {
                    total += f(self, idx);
                }
            }
            None => {
                for idx in 0..self.scanned.len() {
                    total += f(self, idx);
                }
            }
        }
        total
    }
}

/// Victim-weighted uncertainty, with extra weight near fire:
/// `sum m_hat * (1 - s) * (coverage_weight + c_o1 - c_o2 * downwind)`.
pub fn step_cost(env: &EnvironmentState, downwind: &Matrix, params: &SimParams, region: Option<&Region>) -> f64 {
    let o = params.objective;
    CellTerms::new(env, downwind, params).sum(region, |t, idx| {
        let weight = o.coverage_weight + o.c_o1 - o.c_o2 * t.downwind(idx);
        t.victim(idx) * (1.0 - t.scan(idx)) * weight
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub k: u64,
    pub robot: usize,
    pub position: Cell,
    pub task: u8,
    pub target: Cell,
}

/// Coarse per-step inputs shared by every robot choosing a target that step.
struct CoarseView {
    victim: Matrix,
    scan: Vec<Matrix>,
}

impl CoarseView {
    fn build(env: &EnvironmentState, ctx: &SimContext) -> Self {
        let factor = ctx.params.coarsening;
        let estimate = env.victim_estimate(&ctx.params.environment);
        let mut victim = coarsen(&estimate, factor, Pooling::Mean).expect("validated factor");
        let scale = victim.iter().copied().fold(1.0, f64::max);
        victim.mapv_inplace(|v| v / scale);
        let scan = env
            .scan_certainty
            .iter()
            .map(|m| coarsen(m, factor, Pooling::Mean).expect("validated factor"))
            .collect();
        CoarseView { victim, scan }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub env: EnvironmentState,
    pub robots: Vec<RobotState>,
    pub controllers: Vec<FuzzyController>,
    pub guidance: Guidance,
    /// Sum of attraction values of every target chosen so far.
    pub attraction_total: f64,
}

impl World {
    pub fn new(env: EnvironmentState, robots: Vec<RobotState>, guidance: Guidance, aggregation: Aggregation) -> Self {
        let controllers = vec![FuzzyController::new(Theta::default()).with_aggregation(aggregation); robots.len()];
        World {
            env,
            robots,
            controllers,
            guidance,
            attraction_total: 0.0,
        }
    }

    pub fn thetas(&self) -> Vec<Theta> {
        self.controllers.iter().map(|c| c.theta).collect()
    }

    pub fn set_thetas(&mut self, thetas: &[Theta]) {
        for (c, t) in self.controllers.iter_mut().zip(thetas) {
            c.theta = *t;
        }
    }

    pub fn trajectory_rows(&self) -> impl Iterator<Item = TrajectoryRow> + '_ {
        self.robots.iter().map(|r| TrajectoryRow {
            k: self.env.step,
            robot: r.id,
            position: r.position,
            task: r.task.code(),
            target: r.target,
        })
    }

    /// One global step against the fire frame for the current step.
    pub fn step(&mut self, ctx: &SimContext, frame: &FireFrame) {
        let World {
            env,
            robots,
            controllers,
            guidance,
            attraction_total,
        } = self;
        let dt = ctx.params.step_seconds;
        let mut reports = Vec::new();
        let mut choosing = Vec::new();
        for (slot, robot) in robots.iter_mut().enumerate() {
            let finishing = robot.task == Task::Scan && robot.scan_remaining <= 0.0;
            let scanned = match guidance {
                // The next target is chosen once this step's scans are applied.
                Guidance::Fuzzy if finishing => {
                    choosing.push(slot);
                    Some(robot.position)
                }
                Guidance::Fuzzy => step_robot_flc(robot, dt, &ctx.kinematics_at(robot.position), |rb| rb.position),
                Guidance::Queue => step_robot_mpc(robot, dt, &ctx.kinematics_at(robot.position)),
            };
            if let Some(cell) = scanned {
                let id = robot.id;
                reports.extend(ctx.coarsening.fine_cells(cell).map(|c| ScanReport { robot: id, cell: c }));
            }
        }
        reports.sort_by_key(|r| r.robot);
        env.advance(&reports, &ctx.accuracy, &ctx.params.environment);
        if choosing.is_empty() {
            return;
        }
        let view = CoarseView::build(env, ctx);
        for slot in choosing {
            let robot = &mut robots[slot];
            let kin = ctx.kinematics_at(robot.position);
            let controller = &controllers[robot.id];
            step_robot_flc(robot, dt, &kin, |rb| {
                let (cell, value) = select_target(rb, controller, &kin, &view, &frame.risk, ctx);
                *attraction_total += value;
                cell
            });
        }
    }
}

fn select_target(
    robot: &RobotState,
    controller: &FuzzyController,
    kin: &Kinematics,
    view: &CoarseView,
    risk: &Matrix,
    ctx: &SimContext,
) -> (Cell, f64) {
    let coarse = ctx.coarse();
    let candidates = feasible_set(&coarse, robot.position, robot.params.airspeed, ctx.params.t_ctrl);
    let window = ctx
        .params
        .local_radius
        .map(|r| LocalWindow::around(robot.position, r, coarse.shape()));
    let inputs = InputView {
        kinematics: kin,
        victim: &view.victim,
        risk_minutes: risk,
        scan: &view.scan[robot.id],
        max_response: ctx.max_response,
    };
    attraction_map(controller, robot, &inputs, &candidates, window.as_ref())
        .argmax()
        .unwrap_or((robot.position, 0.0))
}

/// Everything needed to start a run: the world at step 0 and the plant's fire.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub params: SimParams,
    pub env: EnvironmentState,
    pub fire: FireGrid,
    pub robots: Vec<RobotState>,
    /// Seed of the plant's ignition draws.
    pub fire_seed: u64,
    /// Seed for everything else that is random during a run (solver draws).
    pub run_seed: u64,
}

impl Setup {
    pub fn context(&self) -> Result<SimContext> {
        SimContext::new(self.params, &self.env, self.robots.len())
    }

    pub fn plant_ignition(&self) -> Ignition {
        Ignition::Stochastic { seed: self.fire_seed }
    }
}
