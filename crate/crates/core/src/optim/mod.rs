//! Derivative-free optimisers with hard evaluation budgets.
//!
//! Both optimisers minimise. Candidates rejected by the feasibility predicate
//! are never passed to the objective and do not consume budget.

mod genetic;
mod pattern;

pub use genetic::{genetic_algorithm, GeneticOptions};
pub use pattern::{pattern_search, PatternSearchOptions};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub max_evaluations: usize,
    /// Poll iterations for pattern search, generations for the GA.
    pub max_iterations: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_evaluations: 100,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub evaluation: usize,
    pub value: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult<X> {
    pub x: X,
    /// Objective at `x`; infinite if nothing was evaluated.
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
}

pub fn project_to_bounds(x: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
        .collect()
}

/// Counts objective calls and records the best-so-far trace.
struct Tracker<F> {
    f: F,
    budget: usize,
    evaluations: usize,
    best: f64,
    trace: Vec<TraceEntry>,
}

impl<F> Tracker<F> {
    fn new(f: F, budget: usize) -> Self {
        Tracker {
            f,
            budget,
            evaluations: 0,
            best: f64::INFINITY,
            trace: Vec::new(),
        }
    }

    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    fn record(&mut self, value: f64) {
        self.evaluations += 1;
        if value < self.best {
            self.best = value;
        }
        self.trace.push(TraceEntry {
            evaluation: self.evaluations,
            value,
            best: self.best,
        });
    }
}
