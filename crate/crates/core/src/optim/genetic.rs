use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Budget, OptimResult, Tracker};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneticOptions {
    pub budget: Budget,
    pub population: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    /// Per-gene reset probability; `None` means `1 / dimension`.
    pub mutation_rate: Option<f64>,
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GeneticOptions {
    fn default() -> Self {
        GeneticOptions {
            budget: Budget::default(),
            population: 100,
            tournament: 2,
            crossover_rate: 0.8,
            mutation_rate: None,
            elitism: 1,
            seed: 0,
        }
    }
}

/// Integer-coded GA with tournament selection, uniform crossover,
/// uniform-reset mutation and elitism.
///
/// `initial` individuals seed the first population (clamped to bounds); the
/// rest is drawn uniformly. Repeated genotypes are served from a cache and do
/// not consume budget. Returns the best individual ever evaluated.
pub fn genetic_algorithm<F, C>(
    f: F,
    feasible: C,
    lower: &[i64],
    upper: &[i64],
    initial: &[Vec<i64>],
    opts: &GeneticOptions,
) -> OptimResult<Vec<i64>>
where
    F: FnMut(&[i64]) -> f64,
    C: Fn(&[i64]) -> bool,
{
    let dim = lower.len();
    let size = opts.population.max(2);
    let mutation = opts.mutation_rate.unwrap_or(1.0 / dim.max(1) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut t = Tracker::new(f, opts.budget.max_evaluations);
    let mut cache: HashMap<Vec<i64>, f64> = HashMap::new();
    let mut best: Option<(Vec<i64>, f64)> = None;

    let mut evaluate = |x: &Vec<i64>, t: &mut Tracker<F>, best: &mut Option<(Vec<i64>, f64)>| -> f64 {
        if let Some(&v) = cache.get(x) {
            return v;
        }
        if !feasible(x) {
            cache.insert(x.clone(), f64::INFINITY);
            return f64::INFINITY;
        }
        if t.exhausted() {
            return f64::INFINITY;
        }
        let v = (t.f)(x);
        t.record(v);
        cache.insert(x.clone(), v);
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            *best = Some((x.clone(), v));
        }
        v
    };

    let random = |rng: &mut ChaCha8Rng| -> Vec<i64> { (0..dim).map(|g| rng.gen_range(lower[g]..=upper[g])).collect() };
    let mut population: Vec<Vec<i64>> = initial
        .iter()
        .take(size)
        .map(|x| x.iter().enumerate().map(|(g, &v)| v.clamp(lower[g], upper[g])).collect())
        .collect();
    while population.len() < size {
        population.push(random(&mut rng));
    }
    let mut fitness: Vec<f64> = population.iter().map(|x| evaluate(x, &mut t, &mut best)).collect();

    let mut generations = 0;
    while generations < opts.budget.max_iterations && !t.exhausted() {
        generations += 1;
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));
        let mut next: Vec<Vec<i64>> = order.iter().take(opts.elitism.min(size)).map(|&i| population[i].clone()).collect();
        while next.len() < size {
            let a = tournament(&fitness, opts.tournament, &mut rng);
            let b = tournament(&fitness, opts.tournament, &mut rng);
            let mut child = if rng.gen::<f64>() < opts.crossover_rate {
                (0..dim)
                    .map(|g| if rng.gen::<bool>() { population[a][g] } else { population[b][g] })
                    .collect()
            } else {
                population[a].clone()
            };
            for (g, gene) in child.iter_mut().enumerate() {
                if rng.gen::<f64>() < mutation {
                    *gene = rng.gen_range(lower[g]..=upper[g]);
                }
            }
            next.push(child);
        }
        population = next;
        fitness = population.iter().map(|x| evaluate(x, &mut t, &mut best)).collect();
    }

    let (x, value) = best.unwrap_or_else(|| {
        let fallback = population.first().cloned().unwrap_or_else(|| lower.to_vec());
        (fallback, f64::INFINITY)
    });
    OptimResult {
        x,
        value,
        evaluations: t.evaluations,
        iterations: generations,
        trace: t.trace,
    }
}

fn tournament(fitness: &[f64], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut winner = rng.gen_range(0..fitness.len());
    for _ in 1..size.max(1) {
        let c = rng.gen_range(0..fitness.len());
        if fitness[c] < fitness[winner] {
            winner = c;
        }
    }
    winner
}
