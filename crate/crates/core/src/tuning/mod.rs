//! Bayesian optimization of controller weights in log-space.
//!
//! The first `n_init` suggestions are seeded uniform draws. Afterwards a
//! Matérn-5/2 Gaussian process is fitted to the history and expected
//! improvement is maximized by local search from the best of 256 seeded
//! candidates. Everything is driven by one `ChaCha8Rng`, so a seed and a
//! deterministic objective reproduce the history bit for bit.

mod gp;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

pub use gp::{GaussianProcess, Hyperparameters, NOISE_FLOOR};

pub const DEFAULT_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const EI_CANDIDATES: usize = 256;
const LOCAL_STARTS: usize = 8;

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("invalid tuner configuration: {0}")]
    Config(String),
    #[error("all {} trials were infeasible", .0.len())]
    AllInfeasible(Vec<TrialRecord>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    /// `(low, high)` per parameter, searched in log-space.
    pub bounds: Vec<(f64, f64)>,
    pub n_trials: usize,
    pub n_init: usize,
    pub seed: u64,
    /// Step limit per evaluation; the task default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_budget: Option<usize>,
}

impl TunerConfig {
    pub fn new(n_params: usize, n_trials: usize, n_init: usize, seed: u64) -> Self {
        Self { bounds: vec![DEFAULT_BOUNDS; n_params], n_trials, n_init, seed, episode_budget: None }
    }

    pub fn validate(&self) -> Result<(), TuningError> {
        let bad = |m: String| Err(TuningError::Config(m));
        if self.bounds.is_empty() {
            return bad("no parameters to tune".into());
        }
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(*lo > 0.0 && lo < hi && hi.is_finite()) {
                return bad(format!("bounds of parameter {i} must satisfy 0 < low < high"));
            }
        }
        if self.n_init < 2 {
            return bad("n_init must be at least 2".into());
        }
        if self.n_trials < self.n_init {
            return bad("n_trials must be at least n_init".into());
        }
        if self.episode_budget == Some(0) {
            return bad("episode budget must be positive".into());
        }
        Ok(())
    }

    fn to_unit(&self, params: &[f64]) -> Vec<f64> {
        params
            .iter()
            .zip(&self.bounds)
            .map(|(p, (lo, hi))| (p.ln() - lo.ln()) / (hi.ln() - lo.ln()))
            .collect()
    }

    fn from_unit(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.bounds)
            .map(|(t, (lo, hi))| (lo.ln() + t.clamp(0.0, 1.0) * (hi.ln() - lo.ln())).exp().clamp(*lo, *hi))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub params: Vec<f64>,
    /// Lower is better.
    pub objective: f64,
    pub feasible: bool,
}

impl TrialRecord {
    pub fn infeasible(params: Vec<f64>) -> Self {
        Self { params, objective: f64::INFINITY, feasible: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningOutcome {
    pub best: TrialRecord,
    pub history: Vec<TrialRecord>,
}

fn random_point(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.gen::<f64>()).collect()
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` for a minimization problem.
pub fn expected_improvement(mu: f64, sd: f64, best: f64) -> f64 {
    let gain = best - mu;
    if sd <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    (gain * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

/// Objectives handed to the surrogate: infeasible trials get the worst
/// feasible objective plus one.
fn surrogate_targets(history: &[TrialRecord]) -> Option<Vec<f64>> {
    let worst = history
        .iter()
        .filter(|t| t.feasible && t.objective.is_finite())
        .map(|t| t.objective)
        .fold(f64::NEG_INFINITY, f64::max);
    if !worst.is_finite() {
        return None;
    }
    Some(
        history
            .iter()
            .map(|t| if t.feasible && t.objective.is_finite() { t.objective } else { worst + 1.0 })
            .collect(),
    )
}

/// Compass search on the unit cube from `start`, maximizing `f`.
fn local_search(start: Vec<f64>, f: &dyn Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let mut x = start;
    let mut value = f(&x);
    let mut step = 0.05;
    while step > 1e-4 {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[i] = (trial[i] + dir * step).clamp(0.0, 1.0);
                if trial[i] == x[i] {
                    continue;
                }
                let v = f(&trial);
                if v > value {
                    x = trial;
                    value = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, value)
}

/// Next parameter vector to evaluate.
pub fn suggest_next(history: &[TrialRecord], config: &TunerConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = config.bounds.len();
    // always draw, so the stream position depends only on the trial count
    let fallback = random_point(d, rng);
    if history.len() < config.n_init {
        return config.from_unit(&fallback);
    }
    let candidates: Vec<Vec<f64>> = (0..EI_CANDIDATES).map(|_| random_point(d, rng)).collect();
    let Some(targets) = surrogate_targets(history) else {
        return config.from_unit(&fallback);
    };
    let points: Vec<Vec<f64>> = history.iter().map(|t| config.to_unit(&t.params)).collect();
    let Some(gp) = GaussianProcess::fit(&points, &targets) else {
        log::debug!("degenerate surrogate, suggesting a random point");
        return config.from_unit(&fallback);
    };
    let best = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let acquisition = |z: &[f64]| {
        let (mu, sd) = gp.predict(z);
        expected_improvement(mu, sd, best)
    };
    let mut scored: Vec<(f64, usize)> = candidates.iter().enumerate().map(|(i, z)| (acquisition(z), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    if !(scored[0].0 > 0.0) {
        return config.from_unit(&fallback);
    }
    let mut winner: Option<(Vec<f64>, f64)> = None;
    for &(_, i) in scored.iter().take(LOCAL_STARTS) {
        let (z, v) = local_search(candidates[i].clone(), &acquisition);
        if winner.as_ref().map_or(true, |(_, w)| v > *w) {
            winner = Some((z, v));
        }
    }
    let z = winner.expect("at least one start").0;
    let duplicate = points.iter().any(|p| p.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-9));
    config.from_unit(if duplicate { &fallback } else { &z })
}

/// Best feasible objective after each trial; infinite until the first
/// feasible one.
pub fn incumbent_trace(history: &[TrialRecord]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    history
        .iter()
        .map(|t| {
            if t.feasible && t.objective < best {
                best = t.objective;
            }
            best
        })
        .collect()
}

/// Runs `config.n_trials` evaluations of `objective`.
pub fn tune<F>(mut objective: F, config: &TunerConfig) -> Result<TuningOutcome, TuningError>
where
    F: FnMut(&[f64]) -> TrialRecord,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history: Vec<TrialRecord> = Vec::with_capacity(config.n_trials);
    let mut best: Option<usize> = None;
    for trial in 0..config.n_trials {
        let params = suggest_next(&history, config, &mut rng);
        let mut record = objective(&params);
        record.params = params;
        if record.feasible && !record.objective.is_finite() {
            record.feasible = false;
        }
        if record.feasible && best.map_or(true, |b| record.objective < history[b].objective) {
            best = Some(history.len());
        }
        log::info!(
            "trial {trial}: objective {} feasible {} best {}",
            record.objective,
            record.feasible,
            best.map_or(f64::INFINITY, |b| if b == history.len() { record.objective } else { history[b].objective })
        );
        history.push(record);
    }
    match best {
        Some(b) => Ok(TuningOutcome { best: history[b].clone(), history }),
        None => Err(TuningError::AllInfeasible(history)),
    }
}

/// `trial,param_0,...,objective,feasible,best_so_far`.
pub fn history_csv(history: &[TrialRecord]) -> String {
    let d = history.first().map_or(0, |t| t.params.len());
    let mut out = String::from("trial");
    for i in 0..d {
        let _ = write!(out, ",param_{i}");
    }
    out.push_str(",objective,feasible,best_so_far\n");
    for (i, (t, b)) in history.iter().zip(incumbent_trace(history)).enumerate() {
        let _ = write!(out, "{i}");
        for p in &t.params {
            let _ = write!(out, ",{p}");
        }
        let _ = writeln!(out, ",{},{},{}", t.objective, t.feasible, b);
    }
    out
}
