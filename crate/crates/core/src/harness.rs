//! Repeated seeded runs, confidence bands, baseline normalisation and
//! parameter sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictive::{run_architecture, Architecture, ControlConfig, PredictionMode, RunOptions, RunOutput};
use crate::scenarios::{build_scenario, seed_sequence, ScenarioSpec};

/// z-value of a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

/// Per-run series used for statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    /// Cost after each global step.
    pub costs: Vec<f64>,
    /// Wall time of each solve, in seconds.
    pub solve_seconds: Vec<f64>,
    /// Mean cost over the run.
    pub summary: f64,
}

impl RunMetrics {
    pub fn new(seed: u64, costs: Vec<f64>, solve_seconds: Vec<f64>) -> Self {
        let summary = mean(&costs);
        RunMetrics {
            seed,
            costs,
            solve_seconds,
            summary,
        }
    }

    pub fn from_output(seed: u64, out: &RunOutput) -> Self {
        Self::new(seed, out.costs.clone(), out.solve_seconds.clone())
    }

    pub fn mean_solve_seconds(&self) -> Option<f64> {
        (!self.solve_seconds.is_empty()).then(|| mean(&self.solve_seconds))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean and 95% half-width of a sample. A single value has half-width 0
/// and is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Interval {
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::param("runs", "need at least one value"));
        }
        let m = mean(values);
        let half_width = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            Z_95 * (var / n as f64).sqrt()
        };
        Ok(Interval {
            mean: m,
            half_width,
            n,
        })
    }

    pub fn lo(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.half_width
    }

    /// True when the width is zero only because there was one sample.
    pub fn single_sample(&self) -> bool {
        self.n < 2
    }
}

/// Point-wise mean and 95% band of aligned series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub runs: usize,
}

impl SeriesStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn single_run(&self) -> bool {
        self.runs < 2
    }
}

/// Aggregates series of equal length point by point.
pub fn aggregate_series(series: &[&[f64]]) -> Result<SeriesStats> {
    let first = series.first().ok_or_else(|| Error::param("runs", "need at least one run"))?;
    if series.iter().any(|s| s.len() != first.len()) {
        return Err(Error::param("runs", "series lengths differ"));
    }
    let mut stats = SeriesStats {
        mean: Vec::with_capacity(first.len()),
        ci_lo: Vec::with_capacity(first.len()),
        ci_hi: Vec::with_capacity(first.len()),
        runs: series.len(),
    };
    let mut column = Vec::with_capacity(series.len());
    for k in 0..first.len() {
        column.clear();
        column.extend(series.iter().map(|s| s[k]));
        let iv = Interval::of(&column)?;
        stats.mean.push(iv.mean);
        stats.ci_lo.push(iv.lo());
        stats.ci_hi.push(iv.hi());
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub costs: SeriesStats,
    /// Solve times over the solves every run shares (runs with event
    /// triggering may solve a different number of times).
    pub solve_seconds: SeriesStats,
    /// Interval of per-run mean cost.
    pub summary: Interval,
    /// Interval of per-run mean solve time; `None` without solves.
    pub solve_summary: Option<Interval>,
}

impl Aggregate {
    pub fn single_run(&self) -> bool {
        self.costs.single_run()
    }
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<Aggregate> {
    let costs: Vec<&[f64]> = runs.iter().map(|r| r.costs.as_slice()).collect();
    let costs = aggregate_series(&costs)?;
    let shared = runs.iter().map(|r| r.solve_seconds.len()).min().unwrap_or(0);
    let solves: Vec<&[f64]> = runs.iter().map(|r| &r.solve_seconds[..shared]).collect();
    let solve_seconds = aggregate_series(&solves)?;
    let summaries: Vec<f64> = runs.iter().map(|r| r.summary).collect();
    let solve_means: Option<Vec<f64>> = runs.iter().map(RunMetrics::mean_solve_seconds).collect();
    Ok(Aggregate {
        costs,
        solve_seconds,
        summary: Interval::of(&summaries)?,
        solve_summary: solve_means.map(|m| Interval::of(&m)).transpose()?,
    })
}

/// Percent difference against a baseline; `None` where the baseline is 0.
pub fn normalise_against_baseline(series: &[f64], baseline: &[f64]) -> Result<Vec<Option<f64>>> {
    if series.len() != baseline.len() {
        return Err(Error::param("baseline", "series lengths differ"));
    }
    Ok(series
        .iter()
        .zip(baseline)
        .map(|(&x, &b)| (b != 0.0).then(|| 100.0 * (x - b) / b))
        .collect())
}

/// Least-squares line through the sweep points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Fewer than two distinct x values: slope is 0 by convention.
    pub degenerate: bool,
}

pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    if points.is_empty() {
        return LinearFit {
            slope: 0.0,
            intercept: 0.0,
            degenerate: true,
        };
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return LinearFit {
            slope: 0.0,
            intercept: my,
            degenerate: true,
        };
    }
    let slope = sxy / sxx;
    LinearFit {
        slope,
        intercept: my - slope * mx,
        degenerate: false,
    }
}

/// A batch of seeded runs of one architecture on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub scenario: ScenarioSpec,
    pub control: ControlConfig,
    /// Simulated time per run, in seconds.
    pub duration_seconds: f64,
    pub n_sim: usize,
    pub master_seed: u64,
    /// Run seeds concurrently. Leave off when solve times are compared.
    pub parallel: bool,
    pub record_fire: bool,
}

impl Experiment {
    pub fn new(scenario: ScenarioSpec, architecture: Architecture) -> Self {
        Experiment {
            scenario,
            control: ControlConfig::for_architecture(architecture),
            duration_seconds: 5000.0,
            n_sim: 5,
            master_seed: 2024,
            parallel: true,
            record_fire: false,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration_seconds / self.scenario.sim.step_seconds).floor() as usize
    }

    pub fn seeds(&self) -> Vec<u64> {
        seed_sequence(self.n_sim, self.master_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sim == 0 {
            return Err(Error::param("n_sim", "must be at least 1"));
        }
        if !(self.duration_seconds >= 0.0 && self.duration_seconds.is_finite()) {
            return Err(Error::param("duration_seconds", "must be finite and non-negative"));
        }
        self.scenario.validate()?;
        self.control
            .validate(self.scenario.sim.step_seconds, self.scenario.sim.t_ctrl, self.scenario.n_robots)
    }
}

/// Output of one seeded run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededRun {
    pub seed: u64,
    pub output: RunOutput,
}

impl SeededRun {
    pub fn metrics(&self) -> RunMetrics {
        RunMetrics::from_output(self.seed, &self.output)
    }
}

fn run_seed(exp: &Experiment, seed: u64) -> Result<SeededRun> {
    let setup = build_scenario(&exp.scenario, seed)?;
    let options = RunOptions {
        steps: exp.steps(),
        record_fire: exp.record_fire,
    };
    let output = run_architecture(&setup, &exp.control, options)?;
    Ok(SeededRun { seed, output })
}

/// Runs every seed; results are in seed order whether or not they ran concurrently.
pub fn run_experiment(exp: &Experiment) -> Result<Vec<SeededRun>> {
    exp.validate()?;
    let seeds = exp.seeds();
    if exp.parallel {
        seeds.par_iter().map(|&s| run_seed(exp, s)).collect()
    } else {
        seeds.iter().map(|&s| run_seed(exp, s)).collect()
    }
}

pub fn metrics_of(runs: &[SeededRun]) -> Vec<RunMetrics> {
    runs.iter().map(SeededRun::metrics).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    Robots,
    EnvSize,
    ControlInterval,
    Horizon,
    LocalRadius,
    PredictionMode,
    Architecture,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 7] = [
        SweepParameter::Robots,
        SweepParameter::EnvSize,
        SweepParameter::ControlInterval,
        SweepParameter::Horizon,
        SweepParameter::LocalRadius,
        SweepParameter::PredictionMode,
        SweepParameter::Architecture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Robots => "robots",
            SweepParameter::EnvSize => "env-size",
            SweepParameter::ControlInterval => "t-ctrl",
            SweepParameter::Horizon => "horizon",
            SweepParameter::LocalRadius => "local-radius",
            SweepParameter::PredictionMode => "prediction-mode",
            SweepParameter::Architecture => "architecture",
        }
    }

    /// Applies `value` to a copy of `base`, returning the numeric abscissa
    /// for the trend fit when the parameter is numeric.
    pub fn apply(self, value: &str, base: &Experiment) -> Result<(Experiment, Option<f64>)> {
        let mut exp = base.clone();
        let number = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::param(self.name(), format!("`{value}` is not a number")))
        };
        let count = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| Error::param(self.name(), format!("`{value}` is not a count")))
        };
        let x = match self {
            SweepParameter::Robots => {
                exp.scenario.n_robots = count()?;
                Some(exp.scenario.n_robots as f64)
            }
            SweepParameter::EnvSize => {
                let n = count()?;
                exp.scenario.n_h = n;
                exp.scenario.n_v = n;
                Some(n as f64)
            }
            SweepParameter::ControlInterval => {
                exp.scenario.sim.t_ctrl = number()?;
                Some(exp.scenario.sim.t_ctrl)
            }
            SweepParameter::Horizon => {
                exp.control.horizon = count()?;
                Some(exp.control.horizon as f64)
            }
            SweepParameter::LocalRadius => {
                if value == "global" {
                    exp.scenario.sim.local_radius = None;
                    None
                } else {
                    let r = count()?;
                    exp.scenario.sim.local_radius = Some(r);
                    Some(r as f64)
                }
            }
            SweepParameter::PredictionMode => {
                exp.control.prediction_mode = match value {
                    "probability-threshold" => PredictionMode::ProbabilityThreshold,
                    "exact" => PredictionMode::Exact,
                    _ => return Err(Error::param(self.name(), format!("unknown mode `{value}`"))),
                };
                None
            }
            SweepParameter::Architecture => {
                exp.control.architecture = value.parse()?;
                None
            }
        };
        exp.validate()?;
        Ok((exp, x))
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SweepParameter::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::param("parameter", format!("unknown sweep parameter `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub x: Option<f64>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
    /// Trend of mean cost against the numeric values, when there are any.
    pub fit: Option<LinearFit>,
}

/// One aggregate per value, plus a first-order trend of mean cost.
pub fn sweep(parameter: SweepParameter, values: &[String], base: &Experiment) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::param("values", "need at least one value"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let (exp, x) = parameter.apply(value, base)?;
        let runs = run_experiment(&exp)?;
        rows.push(SweepRow {
            value: value.clone(),
            x,
            aggregate: aggregate(&metrics_of(&runs))?,
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.x.map(|x| (x, r.aggregate.summary.mean))).collect();
    let fit = (!points.is_empty()).then(|| linear_fit(&points));
    Ok(SweepTable { parameter, rows, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::ScenarioKind;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn metrics(costs: &[f64]) -> RunMetrics {
        RunMetrics::new(0, costs.to_vec(), vec![])
    }

    #[test]
    fn two_run_interval_matches_hand_statistics() {
        let agg = aggregate(&[metrics(&[1.0]), metrics(&[3.0])]).unwrap();
        // mean 2, sample sd sqrt(2), sem 1.
        assert_abs_diff_eq!(agg.costs.mean[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.costs.ci_lo[0], 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.costs.ci_hi[0], 3.96, epsilon = 1e-12);
        assert!(!agg.single_run());
    }

    #[test]
    fn identical_runs_have_zero_width() {
        let runs = vec![metrics(&[4.0, 5.0]); 5];
        let agg = aggregate(&runs).unwrap();
        assert_eq!(agg.costs.ci_lo, agg.costs.mean);
        assert_eq!(agg.costs.ci_hi, agg.costs.mean);
        assert_eq!(agg.summary.half_width, 0.0);
    }

    #[test]
    fn single_run_is_flagged() {
        let agg = aggregate(&[metrics(&[4.0])]).unwrap();
        assert!(agg.single_run() && agg.summary.single_sample());
        assert_eq!(agg.costs.ci_lo, vec![4.0]);
        assert!(agg.solve_summary.is_none());
    }

    #[test]
    fn misaligned_or_empty_runs_are_rejected() {
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[metrics(&[1.0]), metrics(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn solve_times_use_shared_solves() {
        let a = RunMetrics::new(0, vec![1.0], vec![0.1, 0.2, 0.3]);
        let b = RunMetrics::new(1, vec![1.0], vec![0.3]);
        let agg = aggregate(&[a, b]).unwrap();
        assert_eq!(agg.solve_seconds.len(), 1);
        assert_abs_diff_eq!(agg.solve_seconds.mean[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(agg.solve_summary.unwrap().mean, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn normalisation_examples() {
        let out = normalise_against_baseline(&[10.0, 9.0, 1.0], &[10.0, 10.0, 0.0]).unwrap();
        assert_eq!(out[0], Some(0.0));
        assert_abs_diff_eq!(out[1].unwrap(), -10.0, epsilon = 1e-12);
        assert_eq!(out[2], None);
        assert!(normalise_against_baseline(&[1.0], &[]).is_err());
    }

    #[test]
    fn linear_fit_examples() {
        let fit = linear_fit(&[(1.0, 1.0), (2.0, 3.0), (3.0, 5.0)]);
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, -1.0, epsilon = 1e-12);
        assert!(!fit.degenerate);
        let single = linear_fit(&[(2.0, 7.0)]);
        assert_eq!((single.slope, single.intercept, single.degenerate), (0.0, 7.0, true));
    }

    fn quick(kind: ScenarioKind, arch: Architecture) -> Experiment {
        let mut scenario = ScenarioSpec::new(kind);
        scenario.n_h = 20;
        scenario.n_v = 20;
        Experiment {
            duration_seconds: 600.0,
            n_sim: 2,
            ..Experiment::new(scenario, arch)
        }
    }

    #[test]
    fn robot_sweep_gives_one_aggregate_per_value() {
        let base = quick(ScenarioKind::SmallStatic, Architecture::PretunedFlc);
        let values: Vec<String> = ["2", "3", "4"].map(String::from).to_vec();
        let table = sweep(SweepParameter::Robots, &values, &base).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.rows.iter().map(|r| r.x).collect::<Vec<_>>(), vec![Some(2.0), Some(3.0), Some(4.0)]);
        assert!(!table.fit.unwrap().degenerate);
        assert!(table.rows.iter().all(|r| r.aggregate.costs.len() == 40));
    }

    #[test]
    fn ignored_parameter_gives_identical_aggregates() {
        let base = quick(ScenarioKind::SmallDynamic, Architecture::PretunedFlc);
        let values: Vec<String> = ["20", "30", "40"].map(String::from).to_vec();
        let table = sweep(SweepParameter::Horizon, &values, &base).unwrap();
        assert!(table.rows.windows(2).all(|w| w[0].aggregate == w[1].aggregate));
        assert_eq!(table.fit.unwrap().slope, 0.0);
    }

    #[test]
    fn parallel_and_sequential_runs_agree() {
        let par = quick(ScenarioKind::SmallDynamic, Architecture::CentralisedMpc);
        let seq = Experiment { parallel: false, ..par.clone() };
        let strip = |runs: Vec<SeededRun>| -> Vec<Vec<f64>> { runs.into_iter().map(|r| r.output.costs).collect() };
        assert_eq!(strip(run_experiment(&par).unwrap()), strip(run_experiment(&seq).unwrap()));
    }

    #[test]
    fn sweep_values_are_validated() {
        let base = quick(ScenarioKind::SmallStatic, Architecture::CentralisedMpfc);
        assert!(SweepParameter::Robots.apply("two", &base).is_err());
        assert!(SweepParameter::Horizon.apply("3", &base).is_err());
        assert!(SweepParameter::PredictionMode.apply("psychic", &base).is_err());
        let (exp, x) = SweepParameter::LocalRadius.apply("global", &base).unwrap();
        assert_eq!((exp.scenario.sim.local_radius, x), (None, None));
        let (exp, _) = SweepParameter::Architecture.apply("decentralised-mpc", &base).unwrap();
        assert_eq!(exp.control.architecture, Architecture::DecentralisedMpc);
        assert_eq!("t-ctrl".parse::<SweepParameter>().unwrap(), SweepParameter::ControlInterval);
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(
            runs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..6),
            rotate in 0usize..6,
        ) {
            let metrics: Vec<RunMetrics> = runs.iter().map(|c| RunMetrics::new(0, c.clone(), vec![])).collect();
            let mut shuffled = metrics.clone();
            shuffled.rotate_left(rotate % metrics.len());
            shuffled.reverse();
            let a = aggregate(&metrics).unwrap();
            let b = aggregate(&shuffled).unwrap();
            for k in 0..4 {
                prop_assert!((a.costs.mean[k] - b.costs.mean[k]).abs() <= 1e-9);
                prop_assert!((a.costs.ci_hi[k] - b.costs.ci_hi[k]).abs() <= 1e-9);
            }
        }

        #[test]
        fn bands_contain_the_mean(runs in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..8)) {
            let metrics: Vec<RunMetrics> = runs.iter().map(|c| RunMetrics::new(0, c.clone(), vec![])).collect();
            let a = aggregate(&metrics).unwrap();
            for k in 0..3 {
                prop_assert!(a.costs.ci_lo[k] <= a.costs.mean[k] && a.costs.mean[k] <= a.costs.ci_hi[k]);
            }
        }
    }
}
