//! CSV renderings of matrices, series and trajectories. Floats use the
//! shortest representation that round-trips, so equal values give equal bytes.

use std::fmt::Write;

use crate::harness::SeriesStats;
use crate::sim::TrajectoryRow;
use crate::Matrix;

/// `i,j,value` in row-major order.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::from("i,j,value\n");
    for ((i, j), v) in m.indexed_iter() {
        writeln!(out, "{i},{j},{v}").expect("write to string");
    }
    out
}

/// `k,cost` with k starting at 1 (the cost after the first step).
pub fn cost_csv(costs: &[f64]) -> String {
    let mut out = String::from("k,cost\n");
    for (k, c) in costs.iter().enumerate() {
        writeln!(out, "{},{c}", k + 1).expect("write to string");
    }
    out
}

/// `k,mean,ci_lo,ci_hi`, with k starting at `first_k`.
pub fn aggregate_csv(stats: &SeriesStats, first_k: usize) -> String {
    let mut out = String::from("k,mean,ci_lo,ci_hi\n");
    for (n, ((m, lo), hi)) in stats.mean.iter().zip(&stats.ci_lo).zip(&stats.ci_hi).enumerate() {
        writeln!(out, "{},{m},{lo},{hi}", n + first_k).expect("write to string");
    }
    out
}

/// `k,r,i,j,task,target_i,target_j`.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from("k,r,i,j,task,target_i,target_j\n");
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.k, row.robot, row.position.i, row.position.j, row.task, row.target.i, row.target.j
        )
        .expect("write to string");
    }
    out
}

/// Parsed `k,mean,ci_lo,ci_hi` file.
pub fn parse_aggregate_csv(text: &str) -> Result<Vec<(f64, f64, f64, f64)>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "k,mean,ci_lo,ci_hi" => {}
        Some(h) => return Err(format!("unexpected header `{h}`")),
        None => return Err("empty file".into()),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", n + 2))?;
        let [k, m, lo, hi] = fields[..] else {
            return Err(format!("line {}: expected 4 fields", n + 2));
        };
        rows.push((k, m, lo, hi));
    }
    if rows.is_empty() {
        return Err("no data rows".into());
    }
    Ok(rows)
}
