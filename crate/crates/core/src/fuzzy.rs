//! Type-1 Takagi-Sugeno inference over four normalised cell features, the
//! per-robot attraction maps built from it, and local-window restriction.
//!
//! Inputs, in order: time efficiency, victim priority, fire risk time and
//! scan certainty. There are three rules, one per label (low, medium, high),
//! each with a linear consequent `w . x + c`. The parameter vector is laid
//! out surface-major: `[w1, w2, w3, w4, c]` for low, then medium, then high.

use std::ops::Range;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fire::NO_RISK_MINUTES;
use crate::grid::{Cell, Matrix};
use crate::robot::{Kinematics, RobotState, Task};

pub const INPUTS: usize = 4;
pub const RULES: usize = 3;
pub const SURFACE_LEN: usize = INPUTS + 1;
pub const THETA_LEN: usize = RULES * SURFACE_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Low,
    Medium,
    High,
}

impl Label {
    pub const ALL: [Label; RULES] = [Label::Low, Label::Medium, Label::High];
}

/// Triangular membership function with vertices `a <= b <= c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipFunction {
    pub label: Label,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MembershipFunction {
    pub fn new(label: Label, a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a <= b && b <= c) {
            return Err(Error::param("membership", format!("vertices {a}, {b}, {c} are not ordered")));
        }
        Ok(MembershipFunction { label, a, b, c })
    }

    pub fn degree(&self, x: f64) -> f64 {
        mf_degree(self, x)
    }
}

pub fn mf_degree(mf: &MembershipFunction, x: f64) -> f64 {
    let MembershipFunction { a, b, c, .. } = *mf;
    if x < a || x > c {
        0.0
    } else if x == b {
        1.0
    } else if x < b {
        (x - a) / (b - a)
    } else {
        (c - x) / (c - b)
    }
}

pub fn default_memberships() -> [MembershipFunction; RULES] {
    [
        MembershipFunction {
            label: Label::Low,
            a: 0.0,
            b: 0.0,
            c: 0.5,
        },
        MembershipFunction {
            label: Label::Medium,
            a: 0.0,
            b: 0.5,
            c: 1.0,
        },
        MembershipFunction {
            label: Label::High,
            a: 0.5,
            b: 1.0,
            c: 1.0,
        },
    ]
}

/// How a rule combines the degrees of its four same-labelled antecedents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Arithmetic mean. With a partition-of-unity MF set the firing
    /// strengths always sum to one.
    #[default]
    Mean,
    /// Product t-norm. Vanishes whenever any input has zero degree in the
    /// rule's label, which leaves many cells with no rule firing at all.
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Theta(pub [f64; THETA_LEN]);

impl Theta {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; THETA_LEN] = values
            .try_into()
            .map_err(|_| Error::param("theta", format!("expected {THETA_LEN} values, got {}", values.len())))?;
        Ok(Theta(arr))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn surface(&self, rule: usize) -> &[f64] {
        &self.0[rule * SURFACE_LEN..(rule + 1) * SURFACE_LEN]
    }
}

impl Default for Theta {
    fn default() -> Self {
        let mut v = [0.0; THETA_LEN];
        for (rule, constant) in [0.0, 0.5, 1.0].into_iter().enumerate() {
            v[rule * SURFACE_LEN..(rule + 1) * SURFACE_LEN].copy_from_slice(&[-1.0, 1.0, -1.0, -1.0, constant]);
        }
        Theta(v)
    }
}

impl TryFrom<Vec<f64>> for Theta {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Theta::from_slice(&v)
    }
}

impl From<Theta> for Vec<f64> {
    fn from(t: Theta) -> Self {
        t.0.to_vec()
    }
}

/// Strict ordering chains over 0-based parameter indices: each chain
/// `[a, b, c, ..]` requires `theta[a] < theta[b] < theta[c] < ..`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingConstraint {
    pub chains: Vec<Vec<usize>>,
}

impl OrderingConstraint {
    pub fn none() -> Self {
        OrderingConstraint { chains: vec![] }
    }

    /// Keeps the output surfaces ordered by their constants: low < medium < high.
    pub fn surface_constants() -> Self {
        OrderingConstraint {
            chains: vec![(0..RULES).map(|r| r * SURFACE_LEN + INPUTS).collect()],
        }
    }

    /// One triple `(i-1, i, i+1)` per given 1-based centre index.
    pub fn literal_triples(centres: &[usize]) -> Self {
        OrderingConstraint {
            chains: centres.iter().map(|&i| vec![i - 2, i - 1, i]).collect(),
        }
    }

    pub fn is_satisfied(&self, theta: &[f64]) -> bool {
        self.chains.iter().all(|chain| {
            chain
                .windows(2)
                .all(|w| matches!((theta.get(w[0]), theta.get(w[1])), (Some(a), Some(b)) if a < b))
        })
    }
}

impl Default for OrderingConstraint {
    fn default() -> Self {
        Self::surface_constants()
    }
}

pub fn check_theta_constraints(theta: &[f64], lower: f64, upper: f64, ordering: &OrderingConstraint) -> bool {
    theta.len() == THETA_LEN
        && theta.iter().all(|&v| v >= lower && v <= upper)
        && ordering.is_satisfied(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyController {
    /// Membership functions per input, indexed `[input][rule]`.
    pub memberships: [[MembershipFunction; RULES]; INPUTS],
    pub aggregation: Aggregation,
    pub theta: Theta,
}

impl FuzzyController {
    pub fn new(theta: Theta) -> Self {
        FuzzyController {
            memberships: [default_memberships(); INPUTS],
            aggregation: Aggregation::default(),
            theta,
        }
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn firing_strengths(&self, inputs: [f64; INPUTS]) -> [f64; RULES] {
        let mut w = [0.0; RULES];
        for (rule, strength) in w.iter_mut().enumerate() {
            let degrees = (0..INPUTS).map(|n| self.memberships[n][rule].degree(inputs[n]));
            *strength = match self.aggregation {
                Aggregation::Mean => degrees.sum::<f64>() / INPUTS as f64,
                Aggregation::Product => degrees.product(),
            };
        }
        w
    }

    pub fn tsk_evaluate(&self, inputs: [f64; INPUTS]) -> f64 {
        tsk_evaluate(self, inputs)
    }
}

impl Default for FuzzyController {
    fn default() -> Self {
        Self::new(Theta::default())
    }
}

/// Firing-strength weighted average of the linear rule surfaces; zero when
/// no rule fires.
pub fn tsk_evaluate(controller: &FuzzyController, inputs: [f64; INPUTS]) -> f64 {
    let w = controller.firing_strengths(inputs);
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut out = 0.0;
    for (rule, &strength) in w.iter().enumerate() {
        if strength == 0.0 {
            continue;
        }
        let p = controller.theta.surface(rule);
        let surface = p[..INPUTS].iter().zip(&inputs).map(|(a, x)| a * x).sum::<f64>() + p[INPUTS];
        out += strength * surface;
    }
    out / total
}

/// Coarse-grid snapshot a robot's controller reads when choosing a target.
#[derive(Debug, Clone, Copy)]
pub struct InputView<'a> {
    pub kinematics: &'a Kinematics,
    /// Victim estimate already scaled into `[0, 1]`.
    pub victim: &'a Matrix,
    /// Fire risk time in minutes.
    pub risk_minutes: &'a Matrix,
    /// This robot's own scan certainty.
    pub scan: &'a Matrix,
    pub max_response: f64,
}

/// Seconds until the robot could finish its current commitment and reach `cell`.
pub fn response_time(robot: &RobotState, kin: &Kinematics, cell: Cell) -> Option<f64> {
    match robot.task {
        Task::Travel => Some(
            robot.travel_remaining.max(0.0)
                + robot.scan_remaining.max(0.0)
                + kin.travel_time(robot, robot.target, cell)?,
        ),
        Task::Scan | Task::Idle => Some(robot.scan_remaining.max(0.0) + kin.travel_time(robot, robot.position, cell)?),
    }
}

/// Normalised inputs for one candidate cell; `None` if the cell cannot be reached.
pub fn compute_inputs(robot: &RobotState, view: &InputView<'_>, cell: Cell) -> Option<[f64; INPUTS]> {
    let response = response_time(robot, view.kinematics, cell)?;
    let idx = cell.index();
    let time = if view.max_response > 0.0 {
        response / view.max_response
    } else {
        0.0
    };
    Some([
        time.clamp(0.0, 1.0),
        view.victim[idx].clamp(0.0, 1.0),
        (view.risk_minutes[idx] / NO_RISK_MINUTES).clamp(0.0, 1.0),
        view.scan[idx].clamp(0.0, 1.0),
    ])
}

/// Per-cell attraction. `None` marks cells the robot may not select.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractionMap {
    pub values: Array2<Option<f64>>,
}

impl AttractionMap {
    pub fn empty(shape: (usize, usize)) -> Self {
        AttractionMap {
            values: Array2::from_elem(shape, None),
        }
    }

    /// Highest attraction, ties broken by the first cell in row-major order.
    pub fn argmax(&self) -> Option<(Cell, f64)> {
        let mut best: Option<(Cell, f64)> = None;
        for ((i, j), v) in self.values.indexed_iter() {
            if let Some(v) = *v {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((Cell::new(i, j), v));
                }
            }
        }
        best
    }

    /// Numeric copy with the sentinel replaced by `fill`.
    pub fn to_matrix(&self, fill: f64) -> Matrix {
        self.values.mapv(|v| v.unwrap_or(fill))
    }
}

/// Evaluates the controller on every candidate, optionally restricted to a window.
pub fn attraction_map(
    controller: &FuzzyController,
    robot: &RobotState,
    view: &InputView<'_>,
    candidates: &[Cell],
    window: Option<&LocalWindow>,
) -> AttractionMap {
    let mut map = AttractionMap::empty(view.kinematics.geometry.shape());
    for &cell in candidates {
        if window.is_some_and(|w| !w.contains(cell)) {
            continue;
        }
        if let Some(inputs) = compute_inputs(robot, view, cell) {
            map.values[cell.index()] = Some(tsk_evaluate(controller, inputs));
        }
    }
    map
}

/// Square window of radius `r` around a cell, clipped at the grid border.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalWindow {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl LocalWindow {
    pub fn around(centre: Cell, radius: usize, shape: (usize, usize)) -> Self {
        LocalWindow {
            rows: centre.i.saturating_sub(radius)..(centre.i + radius + 1).min(shape.0),
            cols: centre.j.saturating_sub(radius)..(centre.j + radius + 1).min(shape.1),
        }
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.rows.contains(&cell.i) && self.cols.contains(&cell.j)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn to_local(&self, cell: Cell) -> Option<Cell> {
        self.contains(cell)
            .then(|| Cell::new(cell.i - self.rows.start, cell.j - self.cols.start))
    }

    pub fn to_global(&self, local: Cell) -> Cell {
        Cell::new(local.i + self.rows.start, local.j + self.cols.start)
    }

    /// Writes a local matrix back into global coordinates.
    pub fn restore<T: Clone>(&self, local: &Array2<T>, global: &mut Array2<T>) {
        global
            .slice_mut(s![self.rows.clone(), self.cols.clone()])
            .assign(local);
    }
}

pub fn local_slice<T: Clone>(matrix: &Array2<T>, centre: Cell, radius: usize) -> (Array2<T>, LocalWindow) {
    let window = LocalWindow::around(centre, radius, matrix.dim());
    let local = matrix.slice(s![window.rows.clone(), window.cols.clone()]).to_owned();
    (local, window)
}
