use serde::{Deserialize, Serialize};

use super::{project_to_bounds, Budget, OptimResult, Tracker};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSearchOptions {
    pub budget: Budget,
    /// Initial mesh as a fraction of each coordinate's range.
    pub initial_mesh: f64,
    pub expansion: f64,
    pub contraction: f64,
    /// Stop once the mesh scale falls below this.
    pub min_mesh: f64,
}

impl Default for PatternSearchOptions {
    fn default() -> Self {
        PatternSearchOptions {
            budget: Budget::default(),
            initial_mesh: 0.25,
            expansion: 2.0,
            contraction: 0.5,
            min_mesh: 1e-9,
        }
    }
}

/// Coordinate pattern search with complete polling.
///
/// `initial_value`, when known, is used as `f(x0)` without spending budget.
/// Poll points are projected onto the box; points that coincide with the
/// incumbent after projection are skipped. The mesh grows after a successful
/// poll (never beyond its initial size) and shrinks after a failed one.
pub fn pattern_search<F, C>(
    f: F,
    feasible: C,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    initial_value: Option<f64>,
    opts: &PatternSearchOptions,
) -> OptimResult<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
    C: Fn(&[f64]) -> bool,
{
    let mut t = Tracker::new(f, opts.budget.max_evaluations);
    let mut x = project_to_bounds(x0, lower, upper);
    let mut fx = match initial_value {
        Some(v) => v,
        None if !t.exhausted() && feasible(&x) => {
            let v = (t.f)(&x);
            t.record(v);
            v
        }
        None => f64::INFINITY,
    };
    let base: Vec<f64> = lower
        .iter()
        .zip(upper)
        .map(|(lo, hi)| opts.initial_mesh * (hi - lo))
        .collect();
    let mut scale = 1.0;
    let mut iterations = 0;

    while iterations < opts.budget.max_iterations && !t.exhausted() && scale >= opts.min_mesh {
        iterations += 1;
        let mut best: Option<(Vec<f64>, f64)> = None;
        'poll: for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut p = x.clone();
                p[i] = (x[i] + sign * scale * base[i]).clamp(lower[i], upper[i]);
                if p[i] == x[i] || !feasible(&p) {
                    continue;
                }
                if t.exhausted() {
                    break 'poll;
                }
                let v = (t.f)(&p);
                t.record(v);
                if best.as_ref().is_none_or(|(_, b)| v < *b) {
                    best = Some((p, v));
                }
            }
        }
        match best {
            Some((p, v)) if v < fx => {
                x = p;
                fx = v;
                scale = (scale * opts.expansion).min(1.0);
            }
            _ => scale *= opts.contraction,
        }
    }

    OptimResult {
        x,
        value: fx,
        evaluations: t.evaluations,
        iterations,
        trace: t.trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::cell::Cell;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn run<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64]) -> OptimResult<Vec<f64>> {
        let n = x0.len();
        pattern_search(f, |_| true, x0, &vec![-1.0; n], &vec![1.0; n], None, &PatternSearchOptions::default())
    }

    #[test]
    fn stays_at_optimum() {
        let r = run(sphere, &[0.0, 0.0, 0.0]);
        assert_eq!(r.x, vec![0.0; 3]);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn first_poll_reaches_half() {
        let r = run(|x| (x[0] - 0.5).powi(2), &[0.0]);
        assert_eq!(r.trace[1].value, 0.0);
        assert_eq!(r.x, vec![0.5]);
        assert!(r.value <= 0.25);
    }

    #[test]
    fn flat_landscape_keeps_start_and_shrinks() {
        let opts = PatternSearchOptions {
            budget: Budget {
                max_evaluations: 10_000,
                max_iterations: 20,
            },
            ..Default::default()
        };
        let r = pattern_search(|_| 1.0, |_| true, &[0.2, -0.3], &[-1.0; 2], &[1.0; 2], None, &opts);
        assert_eq!(r.x, vec![0.2, -0.3]);
        assert_eq!(r.iterations, 20);
    }

    #[test]
    fn zero_budget_returns_start() {
        let opts = PatternSearchOptions {
            budget: Budget {
                max_evaluations: 0,
                max_iterations: 100,
            },
            ..Default::default()
        };
        let r = pattern_search(|_| unreachable!(), |_| true, &[0.4], &[-1.0], &[1.0], None, &opts);
        assert_eq!((r.x, r.evaluations), (vec![0.4], 0));
        let r = pattern_search(|_| unreachable!(), |_| true, &[0.4], &[-1.0], &[1.0], Some(3.0), &opts);
        assert_eq!(r.value, 3.0);
    }

    #[test]
    fn known_start_value_saves_an_evaluation() {
        let r = pattern_search(
            sphere,
            |_| true,
            &[0.5],
            &[-1.0],
            &[1.0],
            Some(0.25),
            &PatternSearchOptions::default(),
        );
        assert_eq!(r.trace[0].value, 1.0);
    }

    #[test]
    fn infeasible_points_are_not_evaluated() {
        let calls = Cell::new(0);
        let r = pattern_search(
            |x| {
                calls.set(calls.get() + 1);
                assert!(x[0] <= 0.0);
                -x[0]
            },
            |x| x[0] <= 0.0,
            &[0.0],
            &[-1.0],
            &[1.0],
            None,
            &PatternSearchOptions::default(),
        );
        assert_eq!(r.x, vec![0.0]);
        assert_eq!(calls.get(), r.evaluations);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn contracts_hold_on_fuzzed_problems(
            dim in 1usize..8,
            centre in proptest::collection::vec(-3.0f64..3.0, 8),
            start in proptest::collection::vec(-1.0f64..1.0, 8),
            max_evaluations in 0usize..150,
            max_iterations in 0usize..50,
            noise in 0u64..4,
        ) {
            let lower = vec![-1.0; dim];
            let upper: Vec<f64> = (0..dim).map(|i| 0.5 + i as f64 * 0.1).collect();
            let x0 = project_to_bounds(&start[..dim], &lower, &upper);
            let calls = Cell::new(0usize);
            let f = |x: &[f64]| {
                calls.set(calls.get() + 1);
                for (v, (lo, hi)) in x.iter().zip(lower.iter().zip(&upper)) {
                    assert!(v >= lo && v <= hi);
                }
                let d: f64 = x.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum();
                d + (noise as f64) * (x[0] * 13.0).sin()
            };
            let opts = PatternSearchOptions { budget: Budget { max_evaluations, max_iterations }, ..Default::default() };
            let r = pattern_search(f, |_| true, &x0, &lower, &upper, None, &opts);
            prop_assert!(calls.get() <= max_evaluations);
            prop_assert_eq!(calls.get(), r.evaluations);
            prop_assert!(r.iterations <= max_iterations);
            for w in r.trace.windows(2) {
                prop_assert!(w[1].best <= w[0].best);
            }
            if let Some(first) = r.trace.first() {
                prop_assert!(r.value <= first.value);
                prop_assert_eq!(r.value, r.trace.last().unwrap().best);
            }
        }
    }
}
