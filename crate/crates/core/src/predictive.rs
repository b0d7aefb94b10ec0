//! Supervisory layer: predicts the closed loop under candidate decisions and
//! tunes fuzzy surfaces (MPFC) or plans target queues (MPC) at control steps.

use std::time::Instant;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fire::Ignition;
use crate::fuzzy::{check_theta_constraints, LocalWindow, OrderingConstraint, Theta, THETA_LEN};
use crate::grid::{Cell, Matrix};
use crate::robot::Task;
use crate::optim::{genetic_algorithm, pattern_search, Budget, GeneticOptions, PatternSearchOptions};
use crate::environment::EnvironmentState;
use crate::sim::{step_cost, CellTerms, FireFrame, FireTrack, Guidance, Region, SimContext, SimParams, Setup, TrajectoryRow, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    CentralisedMpfc,
    DecentralisedMpfc,
    CentralisedMpc,
    DecentralisedMpc,
    PretunedFlc,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::PretunedFlc,
        Architecture::CentralisedMpfc,
        Architecture::DecentralisedMpfc,
        Architecture::CentralisedMpc,
        Architecture::DecentralisedMpc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::CentralisedMpfc => "centralised-mpfc",
            Architecture::DecentralisedMpfc => "decentralised-mpfc",
            Architecture::CentralisedMpc => "centralised-mpc",
            Architecture::DecentralisedMpc => "decentralised-mpc",
            Architecture::PretunedFlc => "pretuned-flc",
        }
    }

    pub fn guidance(self) -> Guidance {
        match self {
            Architecture::CentralisedMpc | Architecture::DecentralisedMpc => Guidance::Queue,
            _ => Guidance::Fuzzy,
        }
    }

    pub fn is_decentralised(self) -> bool {
        matches!(self, Architecture::DecentralisedMpfc | Architecture::DecentralisedMpc)
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::param("architecture", format!("unknown architecture `{s}`")))
    }
}

/// How the predictor evolves fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// Deterministic: ignite wherever the spread probability exceeds the threshold.
    #[default]
    ProbabilityThreshold,
    /// Replay the plant's own ignition draws.
    Exact,
}

/// What a tuning solve minimises over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuningObjective {
    /// Sum of per-step costs (the quantity logged as J).
    #[default]
    Cost,
    /// Negated fire-weighted scan reward, see [`objective`].
    Reward,
    /// Negated sum of attraction of chosen targets.
    Attraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub architecture: Architecture,
    pub prediction_mode: PredictionMode,
    /// Prediction horizon in global steps.
    pub horizon: usize,
    pub tuning_objective: TuningObjective,
    pub budget: Budget,
    pub pattern: PatternSearchOptions,
    pub genetic: GeneticOptions,
    pub theta_lower: f64,
    pub theta_upper: f64,
    pub ordering: OrderingConstraint,
    /// Targets per robot planned by the queue baseline.
    pub queue_length: usize,
    /// When set, a control step only triggers a solve if the realised cost
    /// since the last solve deviates from its prediction by this fraction.
    pub event_trigger: Option<f64>,
    /// Order in which decentralised per-robot problems are solved; `None`
    /// means by robot id. Results never depend on it.
    pub solve_order: Option<Vec<usize>>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            architecture: Architecture::PretunedFlc,
            prediction_mode: PredictionMode::default(),
            horizon: 21,
            tuning_objective: TuningObjective::default(),
            budget: Budget::default(),
            pattern: PatternSearchOptions::default(),
            genetic: GeneticOptions::default(),
            theta_lower: -1.0,
            theta_upper: 1.0,
            ordering: OrderingConstraint::surface_constants(),
            queue_length: 4,
            event_trigger: None,
            solve_order: None,
        }
    }
}

impl ControlConfig {
    pub fn for_architecture(architecture: Architecture) -> Self {
        ControlConfig {
            architecture,
            ..Default::default()
        }
    }

    /// Global steps per control interval.
    pub fn control_steps(step_seconds: f64, t_ctrl: f64) -> Result<usize> {
        let ratio = t_ctrl / step_seconds;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 {
            return Err(Error::param("t_ctrl", "must be a positive multiple of the global step"));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self, step_seconds: f64, t_ctrl: f64, n_robots: usize) -> Result<()> {
        let control = Self::control_steps(step_seconds, t_ctrl)?;
        if self.architecture != Architecture::PretunedFlc && self.horizon < control {
            return Err(Error::param("horizon", "must cover at least one control interval"));
        }
        if !(self.theta_lower < self.theta_upper) {
            return Err(Error::param("theta_lower", "must be below theta_upper"));
        }
        if self.queue_length == 0 {
            return Err(Error::param("queue_length", "must be at least 1"));
        }
        if self.event_trigger.is_some_and(|f| !(f >= 0.0)) {
            return Err(Error::param("event_trigger", "must be non-negative"));
        }
        if self.ordering.chains.iter().flatten().any(|&i| i >= THETA_LEN) {
            return Err(Error::param("ordering", "index out of range"));
        }
        if let Some(order) = &self.solve_order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..n_robots).collect::<Vec<_>>() {
                return Err(Error::param("solve_order", "must be a permutation of robot ids"));
            }
        }
        Ok(())
    }

    fn theta_feasible(&self, theta: &[f64]) -> bool {
        check_theta_constraints(theta, self.theta_lower, self.theta_upper, &self.ordering)
    }
}

/// Matrices the reward form reads at one predicted step.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveFrame<'a> {
    pub victim: &'a Matrix,
    pub scan: &'a Matrix,
    pub downwind: &'a Matrix,
}

/// Fire-weighted scan reward summed over steps and cells:
/// `victim * scan * (c_o1 - c_o2 * downwind)`. Larger is better.
pub fn objective(frames: &[ObjectiveFrame<'_>], c_o1: f64, c_o2: f64) -> f64 {
    frames
        .iter()
        .map(|f| {
            ndarray::Zip::from(f.victim)
                .and(f.scan)
                .and(f.downwind)
                .fold(0.0, |acc, &v, &s, &d| acc + v * s * (c_o1 - c_o2 * d))
        })
        .sum()
}

/// One step of the reward form evaluated directly on a world state.
pub fn step_reward(env: &EnvironmentState, downwind: &Matrix, params: &SimParams, region: Option<&Region>) -> f64 {
    let o = params.objective;
    CellTerms::new(env, downwind, params).sum(region, |t, idx| t.victim(idx) * t.scan(idx) * (o.c_o1 - o.c_o2 * t.downwind(idx)))
}

/// Per-step predicted values and their total.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub steps: Vec<f64>,
    pub total: f64,
}

/// Rolls a copy of `world` forward over `frames` (one more frame than steps)
/// and scores it. Lower is better for every tuning objective.
pub fn predict(
    world: &World,
    ctx: &SimContext,
    frames: &[FireFrame],
    horizon: usize,
    objective_kind: TuningObjective,
    region: Option<&Region>,
) -> Prediction {
    let mut w = world.clone();
    let horizon = horizon.min(frames.len().saturating_sub(1));
    let mut steps = Vec::with_capacity(horizon);
    let p = &ctx.params;
    for n in 0..horizon {
        let before = w.attraction_total;
        w.step(ctx, &frames[n]);
        let downwind = &frames[n + 1].downwind;
        let value = match objective_kind {
            TuningObjective::Cost => step_cost(&w.env, downwind, p, region),
            TuningObjective::Reward => -step_reward(&w.env, downwind, p, region),
            TuningObjective::Attraction => -(w.attraction_total - before),
        };
        steps.push(value);
    }
    let total = steps.iter().sum();
    Prediction { steps, total }
}

/// Fine cells under the union of every robot's coarse local window.
pub fn local_cost_region(world: &World, ctx: &SimContext) -> Option<Region> {
    let radius = ctx.params.local_radius?;
    let coarse = ctx.coarse();
    let mut mask = Array2::from_elem(world.env.geometry.shape(), false);
    for robot in &world.robots {
        let window = LocalWindow::around(robot.position, radius, coarse.shape());
        for i in window.rows.clone() {
            for j in window.cols.clone() {
                for fine in ctx.coarsening.fine_cells(Cell::new(i, j)) {
                    mask[fine.index()] = true;
                }
            }
        }
    }
    Some(Region::from_mask(&mask))
}

/// Independent 64-bit seed for a labelled sub-stream of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Outcome of one tuning or planning problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub k: u64,
    pub architecture: Architecture,
    /// Robot solved for, `None` for centralised problems.
    pub robot: Option<usize>,
    pub dimension: usize,
    pub evaluations: usize,
    /// Best predicted horizon value; infinite if nothing feasible was evaluated.
    pub predicted: f64,
    /// Whether the result was applied (false keeps the current decision).
    pub accepted: bool,
}

/// Everything a solve reads: the frozen world and the predicted fire.
pub struct Snapshot<'a> {
    pub world: &'a World,
    pub ctx: &'a SimContext,
    pub frames: &'a [FireFrame],
    pub region: Option<&'a Region>,
    /// Run seed from which solver randomness is derived.
    pub seed: u64,
}

impl Snapshot<'_> {
    fn predict(&self, world: &World, config: &ControlConfig) -> f64 {
        predict(world, self.ctx, self.frames, config.horizon, config.tuning_objective, self.region).total
    }
}

fn pattern_options(config: &ControlConfig) -> PatternSearchOptions {
    PatternSearchOptions {
        budget: config.budget,
        ..config.pattern
    }
}

/// Tunes fuzzy surfaces by pattern search, warm-started from the current ones.
/// Centralised: one problem over all robots. Decentralised: one problem per
/// robot with the others held at their current surfaces, all on the same
/// snapshot. Returns the new surfaces and one record per problem.
pub fn tune_mpfc(snapshot: &Snapshot<'_>, config: &ControlConfig) -> (Vec<Theta>, Vec<SolveRecord>) {
    let current = snapshot.world.thetas();
    let k = snapshot.world.env.step;
    let opts = pattern_options(config);
    if !config.architecture.is_decentralised() {
        let dim = current.len() * THETA_LEN;
        let x0: Vec<f64> = current.iter().flat_map(|t| t.0).collect();
        let split = |x: &[f64]| -> Vec<Theta> { x.chunks(THETA_LEN).map(|c| Theta::from_slice(c).expect("chunk length")).collect() };
        let mut scratch = snapshot.world.clone();
        let result = pattern_search(
            |x| {
                scratch.set_thetas(&split(x));
                snapshot.predict(&scratch, config)
            },
            |x| x.chunks(THETA_LEN).all(|c| config.theta_feasible(c)),
            &x0,
            &vec![config.theta_lower; dim],
            &vec![config.theta_upper; dim],
            None,
            &opts,
        );
        let accepted = result.value.is_finite() && result.x.chunks(THETA_LEN).all(|c| config.theta_feasible(c));
        let thetas = if accepted { split(&result.x) } else { current };
        let record = SolveRecord {
            k,
            architecture: config.architecture,
            robot: None,
            dimension: dim,
            evaluations: result.evaluations,
            predicted: result.value,
            accepted,
        };
        return (thetas, vec![record]);
    }

    let order = solve_order(config, current.len());
    let mut outcomes: Vec<Option<(Theta, SolveRecord)>> = vec![None; current.len()];
    for &r in &order {
        let mut scratch = snapshot.world.clone();
        let result = pattern_search(
            |x| {
                scratch.controllers[r].theta = Theta::from_slice(x).expect("theta length");
                snapshot.predict(&scratch, config)
            },
            |x| config.theta_feasible(x),
            &current[r].0,
            &[config.theta_lower; THETA_LEN],
            &[config.theta_upper; THETA_LEN],
            None,
            &opts,
        );
        let accepted = result.value.is_finite() && config.theta_feasible(&result.x);
        let theta = if accepted {
            Theta::from_slice(&result.x).expect("theta length")
        } else {
            current[r]
        };
        let record = SolveRecord {
            k,
            architecture: config.architecture,
            robot: Some(r),
            dimension: THETA_LEN,
            evaluations: result.evaluations,
            predicted: result.value,
            accepted,
        };
        outcomes[r] = Some((theta, record));
    }
    let (thetas, records): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|o| o.expect("every robot solved")).unzip();
    (thetas, records)
}

fn solve_order(config: &ControlConfig, n: usize) -> Vec<usize> {
    config.solve_order.clone().unwrap_or_else(|| (0..n).collect())
}

/// Cell a busy robot is committed to; idle robots are free to go anywhere.
fn commitment(world: &World, r: usize) -> Option<Cell> {
    let robot = &world.robots[r];
    (robot.task != Task::Idle).then_some(robot.target)
}

/// Remaining planned cells of a robot, starting at its current commitment
/// (or its position when idle).
fn queue_remainder(world: &World, r: usize) -> Vec<Cell> {
    let robot = &world.robots[r];
    match commitment(world, r) {
        Some(target) => {
            let mut cells = vec![target];
            if let Some(q) = &robot.queue {
                cells.extend(q.cells.iter().skip(q.cursor + 1).copied());
            }
            cells
        }
        None => vec![robot.position],
    }
}

fn encode_queue(cells: &[Cell], length: usize) -> Vec<i64> {
    let last = *cells.last().expect("non-empty queue");
    (0..length)
        .map(|n| cells.get(n).copied().unwrap_or(last))
        .flat_map(|c| [c.i as i64, c.j as i64])
        .collect()
}

fn decode_queues(x: &[i64], length: usize) -> Vec<Vec<Cell>> {
    x.chunks(2 * length)
        .map(|q| q.chunks(2).map(|c| Cell::new(c[0] as usize, c[1] as usize)).collect())
        .collect()
}

fn install_queues(world: &mut World, robots: &[usize], queues: &[Vec<Cell>]) {
    for (&r, cells) in robots.iter().zip(queues) {
        world.robots[r].assign_queue(cells.clone());
    }
}

/// Plans target queues by genetic search. The first cell of a busy robot's
/// queue is pinned to its current commitment.
pub fn tune_mpc(snapshot: &Snapshot<'_>, config: &ControlConfig, solve_index: u64) -> (Vec<Vec<Cell>>, Vec<SolveRecord>) {
    let world = snapshot.world;
    let ctx = snapshot.ctx;
    let n = world.robots.len();
    let len = config.queue_length;
    let k = world.env.step;
    let coarse = ctx.coarse();
    let (n_h, n_v) = coarse.shape();
    let reach = ctx.params.robot.airspeed * ctx.params.t_ctrl;
    // Each leg, including an idle robot's departure, fits in one control interval.
    let legs_feasible = |robots: &[usize], x: &[i64]| {
        robots.iter().zip(decode_queues(x, len)).all(|(&r, q)| {
            let start = commitment(world, r).unwrap_or(world.robots[r].position);
            std::iter::once(&start)
                .chain(&q)
                .zip(&q)
                .all(|(&a, &b)| coarse.distance(a, b) <= reach + 1e-9)
        })
    };
    let current: Vec<Vec<Cell>> = (0..n).map(|r| queue_remainder(world, r)).collect();
    let problems: Vec<Vec<usize>> = if config.architecture.is_decentralised() {
        solve_order(config, n).into_iter().map(|r| vec![r]).collect()
    } else {
        vec![(0..n).collect()]
    };

    let mut planned = current.clone();
    let mut records = Vec::new();
    for robots in problems {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for &r in &robots {
            let pinned = commitment(world, r);
            for n in 0..len {
                match pinned.filter(|_| n == 0) {
                    Some(first) => {
                        lower.extend([first.i as i64, first.j as i64]);
                        upper.extend([first.i as i64, first.j as i64]);
                    }
                    None => {
                        lower.extend([0, 0]);
                        upper.extend([n_h as i64 - 1, n_v as i64 - 1]);
                    }
                }
            }
        }
        // Every free cell starts at the grid origin.
        let ones: Vec<i64> = robots
            .iter()
            .flat_map(|&r| {
                let mut cells = vec![Cell::new(0, 0); len];
                if let Some(first) = commitment(world, r) {
                    cells[0] = first;
                }
                encode_queue(&cells, len)
            })
            .collect();
        let previous: Vec<i64> = robots.iter().flat_map(|&r| encode_queue(&current[r], len)).collect();
        let mut seed = derive_seed(snapshot.seed, solve_index);
        if config.architecture.is_decentralised() {
            seed = derive_seed(seed, robots[0] as u64);
        }
        let opts = GeneticOptions {
            budget: config.budget,
            seed,
            ..config.genetic
        };
        let mut scratch = world.clone();
        for r in 0..n {
            if !robots.contains(&r) {
                scratch.robots[r].assign_queue(current[r].clone());
            }
        }
        let result = genetic_algorithm(
            |x| {
                let mut w = scratch.clone();
                install_queues(&mut w, &robots, &decode_queues(x, len));
                snapshot.predict(&w, config)
            },
            |x| legs_feasible(&robots, x),
            &lower,
            &upper,
            &[ones, previous],
            &opts,
        );
        let accepted = result.value.is_finite() && legs_feasible(&robots, &result.x);
        if accepted {
            for (&r, q) in robots.iter().zip(decode_queues(&result.x, len)) {
                planned[r] = q;
            }
        }
        records.push(SolveRecord {
            k,
            architecture: config.architecture,
            robot: config.architecture.is_decentralised().then_some(robots[0]),
            dimension: robots.len() * len * 2,
            evaluations: result.evaluations,
            predicted: result.value,
            accepted,
        });
    }
    records.sort_by_key(|r| r.robot);
    (planned, records)
}

/// Per-run outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub architecture: Architecture,
    /// Cost after each global step.
    pub costs: Vec<f64>,
    /// Wall time of each control-step solve, in seconds.
    pub solve_seconds: Vec<f64>,
    pub solves: Vec<SolveRecord>,
    pub trajectory: Vec<TrajectoryRow>,
    /// Surfaces in force after each control step, tagged with the step.
    pub thetas: Vec<(u64, Vec<Theta>)>,
    /// Fire codes at every step when requested.
    pub fire: Option<Vec<Matrix>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub steps: usize,
    pub record_fire: bool,
}

/// Runs one architecture on a set-up world for `options.steps` global steps.
pub fn run_architecture(setup: &Setup, config: &ControlConfig, options: RunOptions) -> Result<RunOutput> {
    let ctx = setup.context()?;
    config.validate(setup.params.step_seconds, setup.params.t_ctrl, setup.robots.len())?;
    let control = ControlConfig::control_steps(setup.params.step_seconds, setup.params.t_ctrl)?;
    let arch = config.architecture;
    let predictive = arch != Architecture::PretunedFlc;
    let horizon = if predictive { config.horizon } else { 0 };
    let plant = FireTrack::simulate(&setup.fire, &setup.env, &setup.params, options.steps + horizon, setup.plant_ignition())?;

    let mut world = World::new(setup.env.clone(), setup.robots.clone(), arch.guidance(), setup.params.aggregation);
    let mut out = RunOutput {
        architecture: arch,
        costs: Vec::with_capacity(options.steps),
        solve_seconds: Vec::new(),
        solves: Vec::new(),
        trajectory: Vec::new(),
        thetas: Vec::new(),
        fire: options.record_fire.then(Vec::new),
    };
    // Predicted per-step cost of the plan in force, aligned with the step it was made at.
    let mut expected: Option<(usize, Vec<f64>)> = None;
    let mut solve_index = 0u64;

    for k in 0..options.steps {
        if predictive && k % control == 0 && should_solve(config, &expected, &out.costs, k) {
            let frames_owned;
            let frames: &[FireFrame] = match config.prediction_mode {
                PredictionMode::Exact => &plant.frames[k..],
                PredictionMode::ProbabilityThreshold => {
                    frames_owned =
                        FireTrack::simulate(&plant.frames[k].fire, &world.env, &setup.params, horizon, Ignition::Threshold)?.frames;
                    &frames_owned
                }
            };
            let region = local_cost_region(&world, &ctx);
            let snapshot = Snapshot {
                world: &world,
                ctx: &ctx,
                frames,
                region: region.as_ref(),
                seed: setup.run_seed,
            };
            let started = Instant::now();
            let records = match arch.guidance() {
                Guidance::Fuzzy => {
                    let (thetas, records) = tune_mpfc(&snapshot, config);
                    world.set_thetas(&thetas);
                    records
                }
                Guidance::Queue => {
                    let (queues, records) = tune_mpc(&snapshot, config, solve_index);
                    for (r, q) in queues.into_iter().enumerate() {
                        world.robots[r].assign_queue(q);
                    }
                    records
                }
            };
            out.solve_seconds.push(started.elapsed().as_secs_f64());
            out.solves.extend(records);
            out.thetas.push((k as u64, world.thetas()));
            solve_index += 1;
            if config.event_trigger.is_some() {
                let plan = predict(&world, &ctx, frames, horizon, TuningObjective::Cost, region.as_ref());
                expected = Some((k, plan.steps));
            }
        }
        out.trajectory.extend(world.trajectory_rows());
        if let Some(fire) = out.fire.as_mut() {
            fire.push(plant.frames[k].fire.codes());
        }
        world.step(&ctx, &plant.frames[k]);
        out.costs.push(step_cost(&world.env, &plant.frames[k + 1].downwind, &setup.params, None));
    }
    Ok(out)
}

fn should_solve(config: &ControlConfig, expected: &Option<(usize, Vec<f64>)>, realised: &[f64], k: usize) -> bool {
    let Some(fraction) = config.event_trigger else {
        return true;
    };
    let Some((start, predicted)) = expected else {
        return true;
    };
    let span = (k - start).min(predicted.len());
    if span == 0 {
        return true;
    }
    let predicted: f64 = predicted[..span].iter().sum();
    let actual: f64 = realised[*start..start + span].iter().sum();
    if predicted == 0.0 {
        return actual != 0.0;
    }
    ((actual - predicted) / predicted).abs() > fraction
}
