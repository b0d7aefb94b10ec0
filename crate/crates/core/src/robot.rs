//! Robot kinematics under wind, travel and scan timing, feasible target sets,
//! and the travel/scan state machines for fuzzy-guided and queue-guided robots.
//!
//! Robots live on the coarse grid. Positions change only when a travel leg
//! completes; the robot is then treated as being at the target cell's centre.

use serde::{Deserialize, Serialize};

use crate::grid::{Cell, GridGeometry, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Travel,
    Scan,
    /// Queue exhausted; holding position until the next plan arrives.
    Idle,
}

impl Task {
    /// Numeric task code used in trajectory exports (travel 0, scan 1).
    pub fn code(self) -> u8 {
        match self {
            Task::Travel => 0,
            Task::Scan | Task::Idle => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    /// Nominal airspeed in m/s.
    pub airspeed: f64,
    /// Scan time per square metre.
    pub scan_rate: f64,
    pub sensor_accuracy: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            airspeed: 5.0,
            scan_rate: 0.01,
            sensor_accuracy: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetQueue {
    pub cells: Vec<Cell>,
    /// Index of the cell currently being travelled to or scanned.
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: usize,
    pub position: Cell,
    pub target: Cell,
    pub task: Task,
    pub travel_remaining: f64,
    pub scan_remaining: f64,
    pub params: RobotParams,
    pub queue: Option<TargetQueue>,
}

impl RobotState {
    /// A robot that starts by scanning its own cell.
    pub fn new(id: usize, position: Cell, params: RobotParams, scan_seconds: f64) -> Self {
        RobotState {
            id,
            position,
            target: position,
            task: Task::Scan,
            travel_remaining: 0.0,
            scan_remaining: scan_seconds,
            params,
            queue: None,
        }
    }

    /// Installs a fresh target queue. For a busy robot the first entry is
    /// expected to be its current commitment; an idle robot departs for the
    /// first entry on its next step.
    pub fn assign_queue(&mut self, cells: Vec<Cell>) {
        self.queue = Some(TargetQueue { cells, cursor: 0 });
    }
}

/// Wind summarised over a region: arithmetic mean speed and circular mean direction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wind {
    pub speed: f64,
    pub direction: f64,
}

pub fn mean_wind(cells: &[Cell], speed: &Matrix, direction: &Matrix) -> Wind {
    if cells.is_empty() {
        return Wind::default();
    }
    let n = cells.len() as f64;
    let (mut s, mut sin, mut cos) = (0.0, 0.0, 0.0);
    for c in cells {
        s += speed[c.index()];
        let d = direction[c.index()];
        sin += d.sin();
        cos += d.cos();
    }
    Wind {
        speed: s / n,
        direction: sin.atan2(cos),
    }
}

/// Cells whose centres lie within `airspeed * t_ctrl` metres of the position.
pub fn feasible_set(geometry: &GridGeometry, position: Cell, airspeed: f64, t_ctrl: f64) -> Vec<Cell> {
    let reach = airspeed * t_ctrl;
    let reach_sq = reach * reach * (1.0 + 1e-12);
    geometry
        .cells()
        .filter(|&c| geometry.squared_distance(position, c) <= reach_sq)
        .collect()
}

pub fn scan_time(scan_rate: f64, cell_len_x: f64, cell_len_y: f64) -> f64 {
    scan_rate * cell_len_x * cell_len_y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading {
    pub ground: f64,
    pub correction: f64,
    pub heading: f64,
}

/// Heading that keeps the ground track pointed at the target. `None` when
/// the crosswind is too strong to be compensated.
pub fn heading(geometry: &GridGeometry, position: Cell, target: Cell, airspeed: f64, wind: Wind) -> Option<Heading> {
    let (px, py) = geometry.centre(position);
    let (tx, ty) = geometry.centre(target);
    let ground = (ty - py).atan2(tx - px);
    let correction = if wind.speed == 0.0 {
        0.0
    } else {
        if airspeed <= 0.0 {
            return None;
        }
        let arg = wind.speed / airspeed * (ground - wind.direction).sin();
        if arg.abs() > 1.0 {
            return None;
        }
        arg.asin()
    };
    Some(Heading {
        ground,
        correction,
        heading: ground + correction,
    })
}

pub fn ground_speed(airspeed: f64, wind: Wind, heading: f64) -> f64 {
    let sq = airspeed * airspeed
        + wind.speed * wind.speed
        + 2.0 * airspeed * wind.speed * (wind.direction - heading).cos();
    sq.max(0.0).sqrt()
}

/// Seconds to fly from `position` to `target`; `None` if unreachable.
pub fn travel_time(geometry: &GridGeometry, position: Cell, target: Cell, airspeed: f64, wind: Wind) -> Option<f64> {
    if position == target {
        return Some(0.0);
    }
    let h = heading(geometry, position, target, airspeed, wind)?;
    let v = ground_speed(airspeed, wind, h.heading);
    (v > 0.0).then(|| geometry.distance(position, target) / v)
}

/// Geometry and wind needed to time robot actions on the coarse grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub geometry: GridGeometry,
    pub wind: Wind,
    pub scan_seconds: f64,
}

impl Kinematics {
    pub fn travel_time(&self, robot: &RobotState, from: Cell, to: Cell) -> Option<f64> {
        travel_time(&self.geometry, from, to, robot.params.airspeed, self.wind)
    }

    /// Longest corner-to-corner flight plus one scan.
    pub fn max_response_time(&self, airspeed: f64) -> f64 {
        let g = &self.geometry;
        let corners = [
            Cell::new(0, 0),
            Cell::new(g.n_h - 1, 0),
            Cell::new(0, g.n_v - 1),
            Cell::new(g.n_h - 1, g.n_v - 1),
        ];
        let mut longest: f64 = 0.0;
        for &a in &corners {
            for &b in &corners {
                if let Some(t) = travel_time(g, a, b, airspeed, self.wind) {
                    longest = longest.max(t);
                }
            }
        }
        longest + self.scan_seconds
    }
}

fn start_leg(robot: &mut RobotState, next: Cell, kin: &Kinematics) {
    match kin.travel_time(robot, robot.position, next) {
        Some(t) => {
            robot.target = next;
            robot.travel_remaining = t;
        }
        None => {
            robot.target = robot.position;
            robot.travel_remaining = 0.0;
        }
    }
    robot.task = Task::Travel;
    robot.scan_remaining = kin.scan_seconds;
}

/// Shared travel branch. Returns `true` if the step was consumed.
fn advance_travel(robot: &mut RobotState, dt: f64) {
    if robot.travel_remaining > 0.0 {
        robot.travel_remaining -= dt;
    } else {
        robot.task = Task::Scan;
        robot.position = robot.target;
        robot.travel_remaining = 0.0;
    }
}

/// One step of a fuzzy-guided robot. `choose` is consulted only when a scan
/// completes and returns the next target. Returns the scanned cell, if any.
pub fn step_robot_flc(
    robot: &mut RobotState,
    dt: f64,
    kin: &Kinematics,
    choose: impl FnOnce(&RobotState) -> Cell,
) -> Option<Cell> {
    match robot.task {
        Task::Travel => {
            advance_travel(robot, dt);
            None
        }
        Task::Scan if robot.scan_remaining > 0.0 => {
            robot.scan_remaining -= dt;
            None
        }
        Task::Scan => {
            let done = robot.position;
            let next = choose(robot);
            start_leg(robot, next, kin);
            Some(done)
        }
        Task::Idle => {
            if let Some(cell) = robot.queue.as_ref().and_then(|q| q.cells.get(q.cursor).copied()) {
                start_leg(robot, cell, kin);
            }
            None
        }
    }
}

/// One step of a queue-guided robot. Returns the scanned cell, if any.
pub fn step_robot_mpc(robot: &mut RobotState, dt: f64, kin: &Kinematics) -> Option<Cell> {
    match robot.task {
        Task::Travel => {
            advance_travel(robot, dt);
            None
        }
        Task::Scan if robot.scan_remaining > 0.0 => {
            robot.scan_remaining -= dt;
            None
        }
        Task::Scan => {
            let done = robot.position;
            let next = robot.queue.as_mut().and_then(|q| {
                q.cursor += 1;
                q.cells.get(q.cursor).copied()
            });
            match next {
                Some(cell) => start_leg(robot, cell, kin),
                None => robot.task = Task::Idle,
            }
            Some(done)
        }
        Task::Idle => {
            if let Some(cell) = robot.queue.as_ref().and_then(|q| q.cells.get(q.cursor).copied()) {
                start_leg(robot, cell, kin);
            }
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn geom(n: usize, len: f64) -> GridGeometry {
        GridGeometry::square(n, n, len).unwrap()
    }

    fn kin(n: usize) -> Kinematics {
        Kinematics {
            geometry: geom(n, 50.0),
            wind: Wind::default(),
            scan_seconds: 25.0,
        }
    }

    #[test]
    fn feasible_set_examples() {
        let g = geom(40, 10.0);
        let p = Cell::new(20, 20);
        assert_eq!(feasible_set(&g, p, 0.0, 30.0), vec![p]);
        assert_eq!(feasible_set(&g, p, 100.0, 30.0).len(), g.len());
        let within = feasible_set(&g, p, 5.0, 30.0);
        let oracle: Vec<_> = g
            .cells()
            .filter(|&c| {
                let di = c.i as f64 - 20.0;
                let dj = c.j as f64 - 20.0;
                (di * di + dj * dj).sqrt() * 10.0 <= 150.0
            })
            .collect();
        assert_eq!(within, oracle);
        assert!(within.contains(&Cell::new(35, 20)));
        assert!(!within.contains(&Cell::new(36, 20)));
    }

    #[test]
    fn scan_time_examples() {
        assert_eq!(scan_time(0.01, 10.0, 10.0), 1.0);
        assert_eq!(scan_time(0.01, 50.0, 50.0), 25.0);
        assert_eq!(scan_time(0.0, 50.0, 50.0), 0.0);
    }

    #[test]
    fn heading_examples() {
        let g = geom(10, 10.0);
        let (a, b) = (Cell::new(1, 1), Cell::new(4, 5));
        let h = heading(&g, a, b, 5.0, Wind::default()).unwrap();
        assert_eq!(h.correction, 0.0);
        assert_eq!(h.heading, h.ground);
        let along = Wind {
            speed: 2.0,
            direction: h.ground,
        };
        assert_abs_diff_eq!(heading(&g, a, b, 5.0, along).unwrap().correction, 0.0, epsilon = 1e-12);
        let east = Cell::new(5, 1);
        let north_wind = Wind {
            speed: 5.0,
            direction: FRAC_PI_2,
        };
        let h = heading(&g, a, east, 5.0, north_wind).unwrap();
        assert_abs_diff_eq!(h.correction, -FRAC_PI_2, epsilon = 1e-12);
        let gale = Wind {
            speed: 6.0,
            direction: FRAC_PI_2,
        };
        assert!(heading(&g, a, east, 5.0, gale).is_none());
    }

    #[test]
    fn heading_handles_western_targets() {
        let g = geom(10, 10.0);
        let h = heading(&g, Cell::new(5, 5), Cell::new(2, 5), 5.0, Wind::default()).unwrap();
        assert_abs_diff_eq!(h.ground.abs(), std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn travel_time_examples() {
        let g = geom(20, 10.0);
        let a = Cell::new(0, 0);
        assert_abs_diff_eq!(travel_time(&g, a, Cell::new(10, 0), 5.0, Wind::default()).unwrap(), 20.0);
        assert_eq!(travel_time(&g, a, a, 5.0, Wind::default()).unwrap(), 0.0);
        let tail = Wind {
            speed: 1.0,
            direction: FRAC_PI_4,
        };
        let t = travel_time(&g, a, Cell::new(6, 6), 5.0, tail).unwrap();
        assert_abs_diff_eq!(t, g.distance(a, Cell::new(6, 6)) / 6.0, epsilon = 1e-9);
        let crosswind = Wind {
            speed: 3.0,
            direction: FRAC_PI_2,
        };
        let t = travel_time(&g, a, Cell::new(8, 0), 5.0, crosswind).unwrap();
        assert_abs_diff_eq!(t, 80.0 / 4.0, epsilon = 1e-9);
    }

    #[test]
    fn mean_wind_is_circular() {
        let speed = Matrix::from_elem((1, 2), 2.0);
        let dir = ndarray::array![[3.0, -3.0]];
        let w = mean_wind(&[Cell::new(0, 0), Cell::new(0, 1)], &speed, &dir);
        assert_eq!(w.speed, 2.0);
        assert_abs_diff_eq!(w.direction.abs(), std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn flc_travel_decrements() {
        let k = kin(4);
        let mut r = RobotState::new(0, Cell::new(0, 0), RobotParams::default(), 25.0);
        r.task = Task::Travel;
        r.travel_remaining = 45.0;
        r.target = Cell::new(3, 3);
        let before = r.clone();
        assert_eq!(step_robot_flc(&mut r, 15.0, &k, |_| unreachable!()), None);
        assert_eq!(r.travel_remaining, 30.0);
        assert_eq!(RobotState { travel_remaining: 45.0, ..r }, before);
    }

    #[test]
    fn flc_arrival_switches_to_scan() {
        let k = kin(4);
        let mut r = RobotState::new(0, Cell::new(0, 0), RobotParams::default(), 25.0);
        r.task = Task::Travel;
        r.travel_remaining = 0.0;
        r.target = Cell::new(2, 1);
        assert_eq!(step_robot_flc(&mut r, 15.0, &k, |_| unreachable!()), None);
        assert_eq!(r.task, Task::Scan);
        assert_eq!(r.position, Cell::new(2, 1));
    }

    #[test]
    fn flc_scan_completion_selects_target_and_reports() {
        let k = kin(4);
        let mut r = RobotState::new(0, Cell::new(1, 1), RobotParams::default(), 0.0);
        let out = step_robot_flc(&mut r, 15.0, &k, |_| Cell::new(3, 1));
        assert_eq!(out, Some(Cell::new(1, 1)));
        assert_eq!(r.task, Task::Travel);
        assert_eq!(r.target, Cell::new(3, 1));
        assert_abs_diff_eq!(r.travel_remaining, 20.0);
        assert_eq!(r.scan_remaining, 25.0);
    }

    #[test]
    fn full_cycle_emits_one_report_per_scan() {
        let k = kin(4);
        let mut r = RobotState::new(0, Cell::new(0, 0), RobotParams::default(), 25.0);
        let mut reports = vec![];
        let targets = [Cell::new(1, 0), Cell::new(1, 1), Cell::new(3, 3)];
        let mut next = targets.iter().copied().cycle();
        for _ in 0..60 {
            let pos_before = r.position;
            let task_before = r.task;
            if let Some(c) = step_robot_flc(&mut r, 15.0, &k, |_| next.next().unwrap()) {
                reports.push(c);
            }
            if r.position != pos_before {
                assert_eq!(task_before, Task::Travel);
                assert_eq!(r.task, Task::Scan);
            }
        }
        assert_eq!(reports[0], Cell::new(0, 0));
        assert_eq!(&reports[1..4], &targets);
    }

    #[test]
    fn mpc_queue_advances_then_idles() {
        let k = kin(4);
        let mut r = RobotState::new(0, Cell::new(2, 2), RobotParams::default(), 0.0);
        r.assign_queue(vec![Cell::new(2, 2), Cell::new(3, 3)]);
        assert_eq!(step_robot_mpc(&mut r, 15.0, &k), Some(Cell::new(2, 2)));
        assert_eq!(r.queue.as_ref().unwrap().cursor, 1);
        assert_eq!(r.target, Cell::new(3, 3));
        assert_eq!(r.task, Task::Travel);
        let mut reports = vec![];
        for _ in 0..20 {
            reports.extend(step_robot_mpc(&mut r, 15.0, &k));
        }
        assert_eq!(reports, vec![Cell::new(3, 3)]);
        assert_eq!(r.task, Task::Idle);
        assert_eq!(r.position, Cell::new(3, 3));
        r.assign_queue(vec![Cell::new(0, 0), Cell::new(1, 1)]);
        assert_eq!(r.queue.as_ref().unwrap().cursor, 0);
        assert_eq!(r.task, Task::Idle);
        assert_eq!(step_robot_mpc(&mut r, 15.0, &k), None);
        assert_eq!((r.task, r.target), (Task::Travel, Cell::new(0, 0)));
    }

    proptest! {
        #[test]
        fn calm_heading_is_ground_track(a in (0usize..20, 0usize..20), b in (0usize..20, 0usize..20)) {
            let g = geom(20, 10.0);
            let (a, b) = (Cell::new(a.0, a.1), Cell::new(b.0, b.1));
            prop_assume!(a != b);
            let h = heading(&g, a, b, 5.0, Wind::default()).unwrap();
            prop_assert_eq!(h.heading, h.ground);
        }

        #[test]
        fn calm_travel_time_is_symmetric(a in (0usize..20, 0usize..20), b in (0usize..20, 0usize..20)) {
            let g = geom(20, 10.0);
            let (a, b) = (Cell::new(a.0, a.1), Cell::new(b.0, b.1));
            let w = Wind::default();
            prop_assert_eq!(travel_time(&g, a, b, 5.0, w), travel_time(&g, b, a, 5.0, w));
        }

        #[test]
        fn ground_track_is_preserved(
            b in (0usize..20, 0usize..20),
            speed in 0.0f64..4.9,
            dir in -3.2f64..3.2,
        ) {
            // The corrected heading plus wind must produce a velocity along the track.
            let g = geom(20, 10.0);
            let (a, b) = (Cell::new(10, 10), Cell::new(b.0, b.1));
            prop_assume!(a != b);
            let w = Wind { speed, direction: dir };
            let h = heading(&g, a, b, 5.0, w).unwrap();
            let vx = 5.0 * h.heading.cos() + speed * dir.cos();
            let vy = 5.0 * h.heading.sin() + speed * dir.sin();
            let cross = vx * h.ground.sin() - vy * h.ground.cos();
            prop_assert!(cross.abs() < 1e-9);
            let along = vx * h.ground.cos() + vy * h.ground.sin();
            prop_assert!((along - ground_speed(5.0, w, h.heading)).abs() < 1e-9);
        }
    }
}
