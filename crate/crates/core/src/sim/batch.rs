use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::run_scenario;
use super::metrics::{compute_metrics, Metrics};
use super::scenario::Scenario;
use crate::control::FeedbackGain;
use crate::error::{Error, Result};
use crate::model::SimRng;
use crate::stability::{build_augmented, second_moment_operator};

/// Seed of trial `index` under `master`; independent of how trials are scheduled.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = SimRng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Runs `trials` copies of the scenario with derived seeds, in parallel.
/// Metrics come back in trial order.
pub fn run_batch(sc: &Scenario, trials: u64) -> Result<Vec<Metrics>> {
    sc.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut s = sc.clone();
            s.run.seed = derive_seed(sc.run.seed, t);
            run_scenario(&s).map(|tr| compute_metrics(&tr))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossAxis {
    /// Vary `µ_θ`, keep `µ_φ = 1`.
    Theta,
    /// Vary `µ_φ`, keep `µ_θ = 1`.
    Phi,
    /// Vary both together.
    Both,
}

/// Smallest delivery probability probed by [`find_critical_loss`].
pub const MIN_PROBE: f64 = 1e-3;

fn noise_free_rho(a: &DMatrix<f64>, b: &DMatrix<f64>, gain: &FeedbackGain, axis: LossAxis, mu: f64) -> Result<f64> {
    let (mt, mp) = match axis {
        LossAxis::Theta => (mu, 1.0),
        LossAxis::Phi => (1.0, mu),
        LossAxis::Both => (mu, mu),
    };
    let n = a.nrows();
    let z = DMatrix::zeros(n, n);
    second_moment_operator(&build_augmented(a, b, gain, mt, mp, &z, &z)?).spectral_radius()
}

/// Bisects the delivery probability at which `ρ(G)` crosses 1.
///
/// Returns the critical `µ*`: the loop is mean-square stable for delivery
/// probabilities above it. Returns 0 if the loop stays stable down to
/// [`MIN_PROBE`].
pub fn find_critical_loss(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    gain: &FeedbackGain,
    axis: LossAxis,
    tol: f64,
) -> Result<f64> {
    if !(tol > 0.0 && tol < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must lie in (0, 0.5), got {tol}"
        )));
    }
    let rho1 = noise_free_rho(a, b, gain, axis, 1.0)?;
    if rho1 >= 1.0 {
        return Err(Error::Analysis(format!(
            "loop is not mean-square stable with perfect delivery (spectral radius {rho1})"
        )));
    }
    if noise_free_rho(a, b, gain, axis, MIN_PROBE)? < 1.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (MIN_PROBE, 1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if noise_free_rho(a, b, gain, axis, mid)? < 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
