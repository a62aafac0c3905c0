//! End-to-end training runs and the convergence expressions they are checked
//! against.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mixing::{exact_moments, mc_moments, DEFAULT_MC_SAMPLES, MAX_EXACT_N};
use crate::objectives::{make_quadratic_with_curvature, Objective, QuadraticTask, DEFAULT_L, DEFAULT_MU};
use crate::protocol::{
    gradient_averaging_round, make_partition, perfect_average, rps_round, sample_comm_outcome, DropModel,
    ModelMatrix, OwnerMode,
};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Exchange models after the local step.
    Rps,
    /// Exchange gradients, then step.
    GradientAveraging,
    /// Lossless exact averaging.
    PerfectNetwork,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rps" => Ok(Self::Rps),
            "gradient-averaging" | "ga" => Ok(Self::GradientAveraging),
            "perfect-network" | "perfect" => Ok(Self::PerfectNetwork),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rps => "rps",
            Self::GradientAveraging => "gradient-averaging",
            Self::PerfectNetwork => "perfect-network",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Explicit(f64),
    /// The rate prescribed by [`corollary1_lr`] for the run's constants.
    Corollary1,
}

impl std::str::FromStr for LearningRate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "corollary1" {
            return Ok(Self::Corollary1);
        }
        let g: f64 = s.parse().map_err(|_| Error::Config(format!("bad learning rate '{s}'")))?;
        Ok(Self::Explicit(g))
    }
}

impl std::fmt::Display for LearningRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Explicit(g) => write!(f, "{g}"),
            Self::Corollary1 => f.write_str("corollary1"),
        }
    }
}

/// Parameters of the generated quadratic task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskParams {
    /// Target zeta.
    pub heterogeneity: f64,
    /// Per-coordinate noise scale.
    pub noise_sigma: f64,
    pub mu: f64,
    pub l: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self { heterogeneity: 1.0, noise_sigma: 0.25, mu: DEFAULT_MU, l: DEFAULT_L }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub d: usize,
    pub iterations: usize,
    pub p: f64,
    pub gamma: LearningRate,
    pub strategy: Strategy,
    pub owner_mode: OwnerMode,
    pub task: TaskParams,
    /// Seed for noise and drops.
    pub seed: u64,
    /// Seed for generating the task; `None` reuses `seed`.
    pub task_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 8,
            d: 16,
            iterations: 2000,
            p: 0.0,
            gamma: LearningRate::Corollary1,
            strategy: Strategy::Rps,
            owner_mode: OwnerMode::RandomPermutation,
            task: TaskParams::default(),
            seed: 0,
            task_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::Config(format!("need n, d >= 1 (n={}, d={})", self.n, self.d)));
        }
        if self.n > self.d {
            return Err(Error::MoreBlocksThanCoords { d: self.d, n: self.n });
        }
        if self.iterations == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("drop rate {} outside [0, 1]", self.p)));
        }
        if let LearningRate::Explicit(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("learning rate must be > 0, got {g}")));
            }
        }
        Ok(())
    }

    pub fn build_task(&self) -> Result<QuadraticTask> {
        let t = &self.task;
        let seed = self.task_seed.unwrap_or(self.seed);
        make_quadratic_with_curvature(self.n, self.d, t.heterogeneity, t.noise_sigma, seed, t.mu, t.l)
    }
}

/// One row of a trace, measured at the start of iteration `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    /// `f(x_bar)`.
    pub loss: f64,
    /// `|grad f(x_bar)|^2`.
    pub grad_norm_sq_mean_model: f64,
    /// `|(1/n) sum_i grad f_i(x_i)|^2`.
    pub grad_norm_sq_avg: f64,
    /// `sum_i |x_i - x_bar|^2`.
    pub consensus: f64,
    /// `(1/n) sum_i f(x_i)`.
    pub local_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Consensus distance after the last update.
    pub final_consensus: f64,
    pub final_loss: f64,
    pub final_local_loss: f64,
    pub diverged: bool,
    pub gamma: f64,
    pub f_star: f64,
}

impl Trace {
    /// `(1/T) sum_t [|grad f(x_bar_t)|^2 + (1 - L gamma) |grad_avg_t|^2]`.
    pub fn theorem1_lhs(&self, lipschitz: f64) -> f64 {
        let w = 1.0 - lipschitz * self.gamma;
        let s: f64 = self.records.iter().map(|r| r.grad_norm_sq_mean_model + w * r.grad_norm_sq_avg).sum();
        s / self.records.len() as f64
    }

    /// Consensus distance summed over the `T` post-update iterates. The
    /// starting iterate is in consensus, so this also covers `t = 1..T`.
    pub fn consensus_sum(&self) -> f64 {
        self.records.iter().skip(1).map(|r| r.consensus).sum::<f64>() + self.final_consensus
    }

    /// Mean of `local_loss` over the last `fraction` of the records.
    pub fn tail_local_loss(&self, fraction: f64) -> f64 {
        let len = self.records.len();
        let k = ((len as f64 * fraction).ceil() as usize).clamp(1, len.max(1));
        let tail: Vec<f64> = self.records[len - k..].iter().map(|r| r.local_loss).collect();
        stats::mean(&tail)
    }
}

pub fn consensus_distance(x: &ModelMatrix) -> f64 {
    let mean = x.mean_column();
    (0..x.workers()).map(|i| (x.column(i) - &mean).norm_squared()).sum()
}

fn c1(gamma: f64, lipschitz: f64, beta: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::BetaOutOfRange(beta));
    }
    let gap = (1.0 - beta.sqrt()).powi(2);
    let ratio = 6.0 * lipschitz * lipschitz * gamma * gamma / gap;
    if ratio >= 1.0 {
        return Err(Error::GammaTooLarge(ratio));
    }
    Ok((1.0 / (1.0 - ratio), gap))
}

/// Bound on the summed consensus distance over `T` iterations.
pub fn lemma1_rhs(gamma: f64, n: usize, sigma: f64, zeta: f64, lipschitz: f64, t: usize, beta: f64) -> Result<f64> {
    let (c1, gap) = c1(gamma, lipschitz, beta)?;
    let (nf, tf) = (n as f64, t as f64);
    Ok(2.0 * gamma * gamma * nf * sigma * sigma * tf * c1 / gap + 6.0 * nf * zeta * zeta * tf * c1 / gap)
}

/// Right-hand side of the averaged-gradient convergence bound.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_rhs(
    gamma: f64,
    n: usize,
    sigma: f64,
    zeta: f64,
    lipschitz: f64,
    f0: f64,
    fstar: f64,
    t: usize,
    alpha2: f64,
    beta: f64,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {gamma}")));
    }
    let (c1, gap) = c1(gamma, lipschitz, beta)?;
    let (nf, tf, l) = (n as f64, t as f64, lipschitz);
    let (s2, z2) = (sigma * sigma, zeta * zeta);
    let k = 2.0 * alpha2 * l * gamma + l * l * gamma * gamma + 12.0 * alpha2 * l.powi(3) * gamma.powi(3);
    Ok(2.0 * (f0 - fstar) / (gamma * tf)
        + gamma * l * s2 / nf
        + 4.0 * alpha2 * l * gamma * (s2 + 3.0 * z2)
        + k * s2 * c1 / gap
        + 3.0 * k * z2 * c1 / gap)
}

/// The prescribed learning rate, with the three side conditions checked.
pub fn corollary1_lr(lipschitz: f64, sigma: f64, zeta: f64, alpha2: f64, beta: f64, n: usize, t: usize) -> Result<f64> {
    if t == 0 || n == 0 {
        return Err(Error::InvalidParameter("need n, T >= 1".into()));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::BetaOutOfRange(beta));
    }
    let tf = t as f64;
    let gamma = (1.0 - beta.sqrt())
        / (6.0 * lipschitz + 3.0 * (sigma + zeta) * (alpha2 * tf).sqrt() + sigma * tf.sqrt() / (n as f64).sqrt());
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::NonFinite("corollary learning rate"));
    }
    let (c1, _) = c1(gamma, lipschitz, beta)?;
    let lg = lipschitz * gamma;
    if 1.0 - lg < 0.0 || c1 > 2.0 || 2.0 + 12.0 * lg * lg > 4.0 {
        return Err(Error::InvalidParameter(format!("learning rate {gamma} violates the step-size conditions")));
    }
    Ok(gamma)
}

/// `(alpha2, beta)` for `n` workers at drop rate `p`: exact up to
/// `MAX_EXACT_N`, sampled beyond. One worker mixes perfectly.
pub fn mixing_constants(n: usize, p: f64) -> Result<(f64, f64)> {
    if n == 1 {
        return Ok((0.0, 0.0));
    }
    let est = if n <= MAX_EXACT_N {
        exact_moments(n, p)?
    } else {
        mc_moments(n, p, OwnerMode::RandomPermutation, DEFAULT_MC_SAMPLES, 0)?
    };
    Ok((est.alpha2, est.beta()))
}

pub fn resolve_gamma(cfg: &TrainConfig, task: &QuadraticTask) -> Result<f64> {
    match cfg.gamma {
        LearningRate::Explicit(g) => Ok(g),
        LearningRate::Corollary1 => {
            let (alpha2, beta) = mixing_constants(cfg.n, cfg.p)?;
            corollary1_lr(task.lipschitz(), task.sigma(), task.zeta(), alpha2, beta, cfg.n, cfg.iterations)
        }
    }
}

/// Runs on the generated quadratic task for `cfg`.
pub fn run_training(cfg: &TrainConfig) -> Result<Trace> {
    cfg.validate()?;
    let task = cfg.build_task()?;
    let gamma = resolve_gamma(cfg, &task)?;
    run_on(&task, cfg, gamma, task.f_star())
}

fn record(task: &dyn Objective, t: usize, x: &ModelMatrix) -> TraceRecord {
    let mean = x.mean_column();
    let n = x.workers();
    let local_loss = (0..n).map(|i| task.loss(&x.column(i))).sum::<f64>() / n as f64;
    TraceRecord {
        t,
        loss: task.loss(&mean),
        grad_norm_sq_mean_model: task.full_gradient(&mean).norm_squared(),
        grad_norm_sq_avg: task.grad_norm_sq_avg(x),
        consensus: consensus_distance(x),
        local_loss,
    }
}

/// Runs `cfg.iterations` rounds on any objective, starting every worker at 0.
/// Stops early and sets `diverged` on a non-finite value.
pub fn run_on(task: &dyn Objective, cfg: &TrainConfig, gamma: f64, f_star: f64) -> Result<Trace> {
    let (n, d) = (task.workers(), task.dim());
    if n != cfg.n || d != cfg.d {
        return Err(Error::Shape { expected: format!("{}x{}", cfg.d, cfg.n), actual: format!("{d}x{n}") });
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {gamma}")));
    }
    let part = make_partition(d, n)?;
    let drop = DropModel::new(cfg.p, cfg.seed)?;
    let mut x = ModelMatrix::zeros(d, n);
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut diverged = false;

    for t in 0..cfg.iterations {
        let rec = record(task, t + 1, &x);
        let finite = [rec.loss, rec.grad_norm_sq_avg, rec.consensus, rec.local_loss].iter().all(|v| v.is_finite());
        if !finite {
            diverged = true;
            break;
        }
        records.push(rec);

        let columns: Vec<DVector<f64>> =
            (0..n).map(|i| task.stochastic_gradient(&x.column(i), i, cfg.seed, t as u64).value).collect();
        let grads = match ModelMatrix::from_columns(&columns) {
            Ok(g) => g,
            Err(Error::NonFinite(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let next = match cfg.strategy {
            Strategy::PerfectNetwork => crate::protocol::local_sgd_step(&x, &grads, gamma).map(|v| perfect_average(&v)),
            Strategy::Rps => {
                let outcome = sample_comm_outcome(n, &drop, t as u64, cfg.owner_mode);
                crate::protocol::local_sgd_step(&x, &grads, gamma).and_then(|v| rps_round(&v, &part, &outcome))
            }
            Strategy::GradientAveraging => {
                let outcome = sample_comm_outcome(n, &drop, t as u64, cfg.owner_mode);
                gradient_averaging_round(&x, &grads, gamma, &part, &outcome)
            }
        };
        x = match next {
            Ok(m) => m,
            Err(Error::NonFinite(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
    }

    let end = record(task, cfg.iterations + 1, &x);
    diverged |= !end.loss.is_finite();
    Ok(Trace {
        records,
        final_consensus: end.consensus,
        final_loss: end.loss,
        final_local_loss: end.local_loss,
        diverged,
        gamma,
        f_star,
    })
}

/// One run per seed, in parallel; output order follows `seeds`.
pub fn run_seeds(base: &TrainConfig, seeds: &[u64]) -> Result<Vec<Trace>> {
    seeds
        .par_iter()
        .map(|&seed| run_training(&TrainConfig { seed, ..base.clone() }))
        .collect()
}

/// Entry-wise mean of equally long traces.
pub fn mean_trace(traces: &[Trace]) -> Result<Vec<TraceRecord>> {
    let first = traces.first().ok_or_else(|| Error::InvalidParameter("no traces".into()))?;
    let len = first.records.len();
    if traces.iter().any(|t| t.records.len() != len) {
        return Err(Error::InvalidParameter("traces differ in length (a run diverged)".into()));
    }
    let k = traces.len() as f64;
    Ok((0..len)
        .map(|i| {
            let avg = |f: fn(&TraceRecord) -> f64| traces.iter().map(|t| f(&t.records[i])).sum::<f64>() / k;
            TraceRecord {
                t: first.records[i].t,
                loss: avg(|r| r.loss),
                grad_norm_sq_mean_model: avg(|r| r.grad_norm_sq_mean_model),
                grad_norm_sq_avg: avg(|r| r.grad_norm_sq_avg),
                consensus: avg(|r| r.consensus),
                local_loss: avg(|r| r.local_loss),
            }
        })
        .collect())
}

/// Fraction of the trace whose mean is reported as the final loss.
pub const FINAL_WINDOW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub p: f64,
    pub strategy: Strategy,
    pub seeds: usize,
    pub gamma: f64,
    /// Mean and sd over seeds of the final-window worker loss.
    pub mean_final_loss: f64,
    pub sd_final_loss: f64,
    /// Same quantity minus `f*`.
    pub mean_excess_loss: f64,
    /// Welch p-value against the other strategy at the same `p`.
    pub p_value: Option<f64>,
    pub diverged: usize,
}

/// Final-window worker losses of `rps` and `gradient-averaging` at each drop
/// rate, run on the same seeds with the same learning rate.
pub fn compare_strategies(base: &TrainConfig, p_list: &[f64], seeds: &[u64]) -> Result<Vec<StrategySummary>> {
    if seeds.len() < 2 {
        return Err(Error::InvalidParameter("need at least two seeds".into()));
    }
    let mut rows = Vec::new();
    for &p in p_list {
        let mut losses = Vec::new();
        let mut partial = Vec::new();
        for strategy in [Strategy::Rps, Strategy::GradientAveraging] {
            let cfg = TrainConfig { p, strategy, ..base.clone() };
            let traces = run_seeds(&cfg, seeds)?;
            let finals: Vec<f64> = traces.iter().map(|t| t.tail_local_loss(FINAL_WINDOW)).collect();
            let excess: Vec<f64> = traces.iter().map(|t| t.tail_local_loss(FINAL_WINDOW) - t.f_star).collect();
            partial.push(StrategySummary {
                p,
                strategy,
                seeds: seeds.len(),
                gamma: traces[0].gamma,
                mean_final_loss: stats::mean(&finals),
                sd_final_loss: stats::sd(&finals),
                mean_excess_loss: stats::mean(&excess),
                p_value: None,
                diverged: traces.iter().filter(|t| t.diverged).count(),
            });
            losses.push(finals);
        }
        let pv = stats::welch_t_test(&losses[0], &losses[1]).map(|w| w.p_value);
        for mut row in partial {
            row.p_value = pv;
            rows.push(row);
        }
    }
    Ok(rows)
}
