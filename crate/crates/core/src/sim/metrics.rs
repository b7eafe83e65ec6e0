use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::engine::{TerminationRecord, Trace};
use crate::model::{ANGLE, POSITION};
use crate::net::ModeId;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distribution {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub stddev: f64,
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
    /// Largest absolute value.
    pub max_abs: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Distribution::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pct = |p: f64| {
            let pos = p * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        Distribution {
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            mean,
            stddev: var.sqrt(),
            p05: pct(0.05),
            p50: pct(0.5),
            p95: pct(0.95),
            max_abs: sorted[0].abs().max(sorted[sorted.len() - 1].abs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantMetrics {
    pub position: Distribution,
    /// Present for plants with at least three states (cart-pole ordering).
    pub angle: Option<Distribution>,
    pub input: Distribution,
    /// `Σ |s(k+1) − s(k)|`, meters.
    pub traveled_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncErrorStats {
    pub i: usize,
    pub j: usize,
    pub mean: f64,
    pub max: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub steps: u64,
    pub duration: f64,
    pub plants: Vec<PlantMetrics>,
    /// Duty-cycle proxy of every mode that was active at some step.
    pub duty_cycle: BTreeMap<ModeId, f64>,
    pub sync_errors: Vec<SyncErrorStats>,
    /// Mean of the pairwise mean position errors.
    pub mean_sync_error: Option<f64>,
    pub termination: Option<TerminationRecord>,
    /// No termination and every pole angle within the angle limit.
    pub success: bool,
}

pub fn traveled_distance(positions: &[f64]) -> f64 {
    positions.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

pub fn compute_metrics(tr: &Trace) -> Metrics {
    let n_plants = tr.steps.first().map_or(0, |s| s.plants.len());
    let column = |p: usize, f: &dyn Fn(&super::engine::PlantRecord) -> f64| -> Vec<f64> {
        tr.steps.iter().map(|s| f(&s.plants[p])).collect()
    };
    let mut plants = Vec::with_capacity(n_plants);
    let mut success = tr.termination.is_none();
    for p in 0..n_plants {
        let dim = tr.steps[0].plants[p].x.len();
        let pos = column(p, &|r| r.x[POSITION]);
        let angle = (dim > ANGLE).then(|| Distribution::of(&column(p, &|r| r.x[ANGLE])));
        if let Some(a) = &angle {
            success &= a.max_abs <= tr.angle_limit;
        }
        plants.push(PlantMetrics {
            position: Distribution::of(&pos),
            angle,
            input: Distribution::of(&column(p, &|r| r.u[0])),
            traveled_distance: traveled_distance(&pos),
        });
    }

    let mut sync_errors = Vec::new();
    for i in 0..n_plants {
        for j in i + 1..n_plants {
            let e: Vec<f64> = tr
                .steps
                .iter()
                .map(|s| (s.plants[i].x[POSITION] - s.plants[j].x[POSITION]).abs())
                .collect();
            let n = e.len().max(1) as f64;
            sync_errors.push(SyncErrorStats {
                i,
                j,
                mean: e.iter().sum::<f64>() / n,
                max: e.iter().copied().fold(0.0, f64::max),
                rms: (e.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
            });
        }
    }
    let mean_sync_error =
        (!sync_errors.is_empty()).then(|| sync_errors.iter().map(|s| s.mean).sum::<f64>() / sync_errors.len() as f64);

    let mut duty_cycle = BTreeMap::new();
    for s in &tr.steps {
        if let Some(d) = tr.duty_cycles.get(&s.mode) {
            duty_cycle.insert(s.mode, *d);
        }
    }
    Metrics {
        schema_version: SCHEMA_VERSION,
        steps: tr.steps.len() as u64,
        duration: tr.duration,
        plants,
        duty_cycle,
        sync_errors,
        mean_sync_error,
        termination: tr.termination,
        success,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        assert_eq!(traveled_distance(&[0.2; 10]), 0.0);
        assert!((traveled_distance(&[0.0, 0.1, -0.1]) - 0.3).abs() < 1e-15);
        assert_eq!(traveled_distance(&[]), 0.0);
    }

    #[test]
    fn distribution_of_ramp() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let d = Distribution::of(&v);
        assert_eq!((d.min, d.max, d.mean, d.p50), (0.0, 100.0, 50.0, 50.0));
        assert!((d.p05 - 5.0).abs() < 1e-12 && (d.p95 - 95.0).abs() < 1e-12);
        assert_eq!(d.max_abs, 100.0);
    }
}
