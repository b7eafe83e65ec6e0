use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs of the worst-case jitter bound. Times in µs, drifts in ppm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterParams {
    /// Time-synchronization error between communication processors.
    pub e_ref_hat: f64,
    /// Detection delay of the synchronization line (one application-processor clock cycle).
    pub e_sync_hat: f64,
    /// Application-processor clock drift.
    pub rho_ap_hat: f64,
    /// Communication-processor clock drift.
    pub rho_cp_hat: f64,
    /// Execution-time variation of the last task in the chain.
    pub e_task_hat: f64,
    /// Nominal interval between the two task ends.
    pub t_end_tilde: f64,
}

impl Default for JitterParams {
    /// Measured/assumed platform values with a 100 ms interval.
    fn default() -> Self {
        JitterParams {
            e_ref_hat: 10.0,
            e_sync_hat: 1.0 / 48.0,
            rho_ap_hat: 50.0,
            rho_cp_hat: 50.0,
            e_task_hat: 10.0,
            t_end_tilde: 100_000.0,
        }
    }
}

impl JitterParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("e_ref_hat", self.e_ref_hat),
            ("e_sync_hat", self.e_sync_hat),
            ("rho_ap_hat", self.rho_ap_hat),
            ("rho_cp_hat", self.rho_cp_hat),
            ("e_task_hat", self.e_task_hat),
            ("t_end_tilde", self.t_end_tilde),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `|J| ≤ 2 (ê_ref + ê_SYNC + T̃_end (ρ̂_AP + ρ̂_CP)) + ê_task`, in µs.
pub fn jitter_bound(p: &JitterParams) -> Result<f64> {
    p.validate()?;
    let drift = p.t_end_tilde * (p.rho_ap_hat + p.rho_cp_hat) * 1e-6;
    Ok(2.0 * (p.e_ref_hat + p.e_sync_hat + drift) + p.e_task_hat)
}
