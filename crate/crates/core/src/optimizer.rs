//! Differential evolution (best/1/bin) over a bounded box.
//!
//! Each generation builds one trial per member: `best + w · (x_r1 − x_r2)` with `w`
//! drawn uniformly from `weight_range`, mixed into the member by binomial crossover
//! (one gene always taken from the mutant) and clipped to the bounds. A trial
//! replaces its member when its cost is no worse. The run stops when the standard
//! deviation of the population's costs drops below `termination_ratio · |mean|`, or
//! after `max_iterations` generations.
//!
//! All random draws happen on one seeded stream before the generation's costs are
//! evaluated, so results do not depend on how the evaluations are scheduled.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DeConfig {
    pub population_size: usize,
    pub max_iterations: usize,
    pub crossover_prob: f64,
    /// Mutation weight interval `(lo, hi)`.
    pub weight_range: (f64, f64),
    /// Relative standard deviation of population costs that ends the run.
    pub termination_ratio: f64,
    /// Inclusive `(lo, hi)` per dimension.
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
    /// Replaces the first random member when it lies inside the bounds.
    pub initial_member: Option<Vec<f64>>,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            population_size: 24,
            max_iterations: 200,
            crossover_prob: 0.7,
            weight_range: (0.5, 1.0),
            termination_ratio: 0.002,
            bounds: Vec::new(),
            seed: 0,
            initial_member: None,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.population_size < 4 {
            return bad(format!(
                "population size must be at least 4, got {}",
                self.population_size
            ));
        }
        if !(self.crossover_prob > 0.0 && self.crossover_prob <= 1.0) {
            return bad(format!(
                "crossover probability must be in (0, 1], got {}",
                self.crossover_prob
            ));
        }
        let (lo, hi) = self.weight_range;
        if !(lo > 0.0 && lo <= hi && hi < 2.0) {
            return bad(format!(
                "weight range must satisfy 0 < lo <= hi < 2, got ({lo}, {hi})"
            ));
        }
        if !(self.termination_ratio >= 0.0 && self.termination_ratio.is_finite()) {
            return bad(format!(
                "termination ratio must be finite and >= 0, got {}",
                self.termination_ratio
            ));
        }
        if self.bounds.is_empty() {
            return bad("bounds must have at least one dimension".into());
        }
        for (d, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!(
                    "bounds for dimension {d} are invalid: ({lo}, {hi})"
                ));
            }
        }
        if let Some(m) = &self.initial_member {
            if m.len() != self.bounds.len() {
                return bad(format!(
                    "initial member has {} entries, bounds have {}",
                    m.len(),
                    self.bounds.len()
                ));
            }
        }
        Ok(())
    }

    fn in_bounds(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(v, &(lo, hi))| *v >= lo && *v <= hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminationReason {
    Converged,
    MaxIterations,
}

impl TerminationReason {
    pub fn name(&self) -> &'static str {
        match self {
            TerminationReason::Converged => "converged",
            TerminationReason::MaxIterations => "max_iterations",
        }
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationRecord {
    /// 0 for the initial population, then the generation number.
    pub iteration: usize,
    pub member: usize,
    pub params: Vec<f64>,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationTrace {
    pub records: Vec<EvaluationRecord>,
    pub best: Vec<f64>,
    pub best_cost: f64,
    /// Best population cost after initialisation and after each generation.
    pub best_history: Vec<f64>,
    pub iterations: usize,
    pub reason: TerminationReason,
}

/// Population statistics used by the stopping rule.
fn mean_std(costs: &[f64]) -> (f64, f64) {
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// True when the population costs have collapsed relative to their mean.
pub fn population_converged(costs: &[f64], ratio: f64) -> bool {
    if costs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let (mean, std) = mean_std(costs);
    std == 0.0 || std < ratio * mean.abs()
}

fn evaluate_all<F>(cost: &F, xs: &[Vec<f64>]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    xs.par_iter()
        .map(|x| {
            let c = cost(x);
            if c.is_finite() {
                c
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

fn argmin(costs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    best
}

/// Minimises `cost` over the box in `cfg`. Non-finite costs are treated as `+∞`.
pub fn minimize<F>(cost: F, cfg: &DeConfig) -> Result<OptimizationTrace>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let dim = cfg.bounds.len();
    let np = cfg.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            cfg.bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect()
        })
        .collect();
    if let Some(m) = &cfg.initial_member {
        if cfg.in_bounds(m) {
            pop[0] = m.clone();
        }
    }
    let mut costs = evaluate_all(&cost, &pop);
    let mut records: Vec<EvaluationRecord> = pop
        .iter()
        .zip(&costs)
        .enumerate()
        .map(|(member, (x, &c))| EvaluationRecord {
            iteration: 0,
            member,
            params: x.clone(),
            cost: c,
        })
        .collect();
    if costs.iter().all(|c| c.is_infinite()) {
        return Err(Error::Optimization(
            "every member of the initial population has infinite cost".into(),
        ));
    }
    let mut best_history = vec![costs[argmin(&costs)]];

    let mut reason = TerminationReason::MaxIterations;
    let mut iterations = 0;
    for generation in 1..=cfg.max_iterations {
        let best = pop[argmin(&costs)].clone();
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let (r1, r2) = loop {
                    let picks = sample(&mut rng, np, 2);
                    let (a, b) = (picks.index(0), picks.index(1));
                    if a != i && b != i {
                        break (a, b);
                    }
                };
                let w = rng.random_range(cfg.weight_range.0..=cfg.weight_range.1);
                let jrand = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let take = j == jrand || rng.random::<f64>() < cfg.crossover_prob;
                        let v = if take {
                            best[j] + w * (pop[r1][j] - pop[r2][j])
                        } else {
                            pop[i][j]
                        };
                        let (lo, hi) = cfg.bounds[j];
                        v.clamp(lo, hi)
                    })
                    .collect()
            })
            .collect();
        let trial_costs = evaluate_all(&cost, &trials);
        for (i, (x, c)) in trials.into_iter().zip(trial_costs).enumerate() {
            records.push(EvaluationRecord {
                iteration: generation,
                member: i,
                params: x.clone(),
                cost: c,
            });
            if c <= costs[i] {
                pop[i] = x;
                costs[i] = c;
            }
        }
        iterations = generation;
        best_history.push(costs[argmin(&costs)]);
        if population_converged(&costs, cfg.termination_ratio) {
            reason = TerminationReason::Converged;
            break;
        }
    }

    let b = argmin(&costs);
    Ok(OptimizationTrace {
        records,
        best: pop[b].clone(),
        best_cost: costs[b],
        best_history,
        iterations,
        reason,
    })
}

impl OptimizationTrace {
    pub fn num_evaluations(&self) -> usize {
        self.records.len()
    }

    /// CSV with columns `iteration, member, <param names>, cost`. Parameters default
    /// to `p0, p1, …` when `names` is `None`.
    pub fn to_csv(&self, names: Option<&[&str]>) -> String {
        let dim = self.best.len();
        let mut out = String::from("iteration,member");
        for d in 0..dim {
            match names.and_then(|n| n.get(d)) {
                Some(n) => {
                    let _ = write!(out, ",{n}");
                }
                None => {
                    let _ = write!(out, ",p{d}");
                }
            }
        }
        out.push_str(",cost\n");
        for r in &self.records {
            let _ = write!(out, "{},{}", r.iteration, r.member);
            for v in &r.params {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", r.cost);
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, names: Option<&[&str]>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv(names)).map_err(|e| Error::io(path, e))
    }
}

/// Reads the evaluation records of a trace CSV written by [`OptimizationTrace::to_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<EvaluationRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty trace file".into()))?;
    let cols = header.split(',').count();
    if cols < 4 || !header.starts_with("iteration,member,") || !header.ends_with(",cost") {
        return Err(Error::Format(format!("unexpected trace header {header:?}")));
    }
    let field = |s: &str| -> Result<f64> {
        f64::from_str(s.trim()).map_err(|_| Error::Format(format!("bad number {s:?} in trace")))
    };
    let count = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad index {s:?} in trace")))
    };
    lines
        .map(|line| {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != cols {
                return Err(Error::Format(format!(
                    "trace row has {} columns, header has {cols}",
                    parts.len()
                )));
            }
            Ok(EvaluationRecord {
                iteration: count(parts[0])?,
                member: count(parts[1])?,
                params: parts[2..cols - 1]
                    .iter()
                    .map(|s| field(s))
                    .collect::<Result<_>>()?,
                cost: field(parts[cols - 1])?,
            })
        })
        .collect()
}

pub fn load_trace_csv(path: impl AsRef<Path>) -> Result<Vec<EvaluationRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace_csv(&text)
}
