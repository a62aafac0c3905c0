use rayon::prelude::*;

use super::{run_colocation_sim, PriorityConfig, Scheduling, SimReport, Topology, TrafficModel};
use crate::error::{Error, Result};

/// One learning-buffer setting at one web rate, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityRow {
    pub lambda: f64,
    pub learning_buffer_bytes: Option<u64>,
    pub drop_rate: f64,
    pub web_mean_ms: f64,
    pub web_p99_ms: f64,
    /// Unbounded-buffer mean completion divided by this row's.
    pub speedup: f64,
}

fn averaged(
    topo: &Topology,
    traffic: &TrafficModel,
    prio: &PriorityConfig,
    duration: f64,
    seeds: &[u64],
) -> Result<(f64, f64, f64)> {
    let reports: Vec<SimReport> = seeds
        .par_iter()
        .map(|&s| run_colocation_sim(topo, traffic, prio, duration, s))
        .collect::<Result<_>>()?;
    let k = reports.len() as f64;
    let mean = reports.iter().map(|r| r.web_mean_completion).sum::<f64>() / k;
    let p99 = reports.iter().map(|r| r.web_p99_completion).sum::<f64>() / k;
    let drop = reports.iter().map(|r| r.learning_drop_rate).sum::<f64>() / k;
    Ok((mean, p99, drop))
}

/// Web completion against learning drop rate, one row per buffer setting,
/// in the order given. Every setting reuses the same seeds.
pub fn sweep_priority(
    topo: &Topology,
    traffic: &TrafficModel,
    scheduling: Scheduling,
    buffers: &[Option<u64>],
    duration: f64,
    seeds: &[u64],
) -> Result<Vec<PriorityRow>> {
    if buffers.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParameter("empty buffer or seed list".into()));
    }
    let (base, _, _) = averaged(topo, traffic, &PriorityConfig::with_buffer(scheduling, None), duration, seeds)?;
    if !base.is_finite() {
        return Err(Error::InvalidParameter("no web messages measured; raise the rate or duration".into()));
    }
    buffers
        .par_iter()
        .map(|&buf| {
            let (mean, p99, drop) = if buf.is_none() {
                averaged(topo, traffic, &PriorityConfig::with_buffer(scheduling, None), duration, seeds)?
            } else {
                averaged(topo, traffic, &PriorityConfig::with_buffer(scheduling, buf), duration, seeds)?
            };
            Ok(PriorityRow {
                lambda: traffic.web_rate,
                learning_buffer_bytes: buf,
                drop_rate: drop,
                web_mean_ms: mean * 1e3,
                web_p99_ms: p99 * 1e3,
                speedup: base / mean,
            })
        })
        .collect()
}

/// Largest web rate (within 0.5%) whose seed-averaged mean completion stays
/// at or below `target` seconds. Returns the rate and the learning drop rate
/// measured there.
pub fn sustainable_lambda(
    topo: &Topology,
    traffic: &TrafficModel,
    prio: &PriorityConfig,
    target: f64,
    duration: f64,
    seeds: &[u64],
    lambda_max: f64,
) -> Result<(f64, f64)> {
    if !(target > 0.0) || !(lambda_max > 0.0) {
        return Err(Error::InvalidParameter("target and lambda_max must be > 0".into()));
    }
    let eval = |lambda: f64| averaged(topo, &TrafficModel { web_rate: lambda, ..*traffic }, prio, duration, seeds);
    let (mut lo, mut hi) = (0.0, lambda_max);
    let (top, _, top_drop) = eval(hi)?;
    if top <= target {
        return Ok((hi, top_drop));
    }
    let mut drop_at_lo = eval(lambda_max * 1e-3)?.2;
    while hi - lo > 0.005 * hi {
        let mid = 0.5 * (lo + hi);
        let (mean, _, drop) = eval(mid)?;
        if mean.is_finite() && mean <= target {
            lo = mid;
            drop_at_lo = drop;
        } else {
            hi = mid;
        }
    }
    Ok((lo, drop_at_lo))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SustainRow {
    pub learning_buffer_bytes: Option<u64>,
    pub target_ms: f64,
    pub drop_rate: f64,
    pub sustainable_lambda: f64,
}

/// [`sustainable_lambda`] for each buffer setting.
#[allow(clippy::too_many_arguments)]
pub fn sweep_sustainable(
    topo: &Topology,
    traffic: &TrafficModel,
    scheduling: Scheduling,
    buffers: &[Option<u64>],
    target: f64,
    duration: f64,
    seeds: &[u64],
    lambda_max: f64,
) -> Result<Vec<SustainRow>> {
    if buffers.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParameter("empty buffer or seed list".into()));
    }
    buffers
        .par_iter()
        .map(|&buf| {
            let prio = PriorityConfig::with_buffer(scheduling, buf);
            let (lambda, drop) = sustainable_lambda(topo, traffic, &prio, target, duration, seeds, lambda_max)?;
            Ok(SustainRow { learning_buffer_bytes: buf, target_ms: target * 1e3, drop_rate: drop, sustainable_lambda: lambda })
        })
        .collect()
}
