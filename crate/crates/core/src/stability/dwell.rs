use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{lyapunov_certificate, second_moment_operator, AugmentedClosedLoop, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};
use crate::linalg;

/// Finite family of closed loops between which the system switches.
#[derive(Debug, Clone)]
pub struct SwitchedSystem {
    modes: Vec<AugmentedClosedLoop>,
}

impl SwitchedSystem {
    pub fn new(modes: Vec<AugmentedClosedLoop>) -> Result<Self> {
        if modes.len() < 2 {
            return Err(Error::Validation("a switched system needs at least two modes".into()));
        }
        let d = modes[0].dim();
        if let Some(i) = modes.iter().position(|m| m.dim() != d) {
            return Err(Error::Dimension(format!(
                "mode {i} has dimension {} but mode 0 has {d}",
                modes[i].dim()
            )));
        }
        Ok(SwitchedSystem { modes })
    }

    pub fn modes(&self) -> &[AugmentedClosedLoop] {
        &self.modes
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DwellTimeCertificate {
    /// Per-step decrease rate of every mode's Lyapunov function.
    pub alpha: f64,
    /// Bound on the Lyapunov-function jump at a switch.
    pub mu: f64,
    pub tau_a_star: u64,
    pub spectral_radii: Vec<f64>,
    /// Per-mode Lyapunov matrices (`d × d`).
    #[serde(skip)]
    pub per_mode_p: Vec<DMatrix<f64>>,
}

/// `ceil(−ln µ / ln(1 − α))`, at least 1.
pub fn tau_a_star(alpha: f64, mu: f64) -> u64 {
    if mu <= 1.0 || alpha >= 1.0 {
        return 1;
    }
    let t = (-mu.ln() / (1.0 - alpha).ln()).ceil();
    if t.is_finite() {
        (t as u64).max(1)
    } else {
        u64::MAX
    }
}

/// Certified minimum average dwell time for switching among MSS modes.
///
/// Mode `i` gets the Lyapunov function `V_i(M) = tr(P_i M) = E[zᵀP_i z]` on
/// correlation matrices, where `P_i` solves `Γ_i*(P_i) − P_i = −I`. For
/// `M ⪰ 0` this gives `V_i(Γ_i M) = V_i(M) − tr M ≤ (1 − 1/λ_max(P_i)) V_i(M)`
/// and `V_i(M) ≤ λ_max(P_i)/λ_min(P_j) · V_j(M)`, hence
/// `α = min_i 1/λ_max(P_i)` and `µ = max_{i≠j} λ_max(P_i)/λ_min(P_j)`.
pub fn min_avg_dwell_time(sw: &SwitchedSystem) -> Result<DwellTimeCertificate> {
    let mut radii = Vec::with_capacity(sw.modes.len());
    let mut ps = Vec::with_capacity(sw.modes.len());
    for (i, mode) in sw.modes.iter().enumerate() {
        let smo = second_moment_operator(mode);
        let rho = smo.spectral_radius()?;
        let unavailable = Error::CertificateUnavailable {
            mode: i,
            spectral_radius: rho,
        };
        if rho >= 1.0 - DEFAULT_TOLERANCE {
            return Err(unavailable);
        }
        let cert = lyapunov_certificate(mode, &smo).ok_or(unavailable)?;
        radii.push(rho);
        ps.push(cert.p);
    }
    let ranges: Vec<(f64, f64)> = ps.iter().map(linalg::sym_eig_range).collect();
    let alpha = ranges.iter().map(|(_, max)| 1.0 / max).fold(f64::INFINITY, f64::min);
    let mut mu: f64 = 1.0;
    for (i, (_, max_i)) in ranges.iter().enumerate() {
        for (j, (min_j, _)) in ranges.iter().enumerate() {
            if i != j {
                mu = mu.max(max_i / min_j);
            }
        }
    }
    Ok(DwellTimeCertificate {
        alpha,
        mu,
        tau_a_star: tau_a_star(alpha, mu),
        spectral_radii: radii,
        per_mode_p: ps,
    })
}

/// Piecewise-constant switching signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingSignal {
    pub initial_mode: usize,
    /// `(step, new mode)` for every switch, strictly increasing in step.
    pub switches: Vec<(u64, usize)>,
    /// Chatter bound `N₀`.
    pub n0: f64,
    pub horizon: u64,
}

impl SwitchingSignal {
    pub fn validate(&self, mode_count: usize) -> Result<()> {
        if self.initial_mode >= mode_count {
            return Err(Error::Validation(format!("unknown initial mode {}", self.initial_mode)));
        }
        for w in self.switches.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Validation(format!(
                    "switch steps must increase strictly ({} after {})",
                    w[1].0, w[0].0
                )));
            }
        }
        if let Some((k, m)) = self.switches.iter().find(|(_, m)| *m >= mode_count) {
            return Err(Error::Validation(format!("switch at step {k} names unknown mode {m}")));
        }
        Ok(())
    }

    /// Mode active at step `k`.
    pub fn mode_at(&self, k: u64) -> usize {
        self.switches
            .iter()
            .take_while(|(s, _)| *s <= k)
            .last()
            .map_or(self.initial_mode, |(_, m)| *m)
    }
}

/// Interval that breaks the average-dwell-time inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellViolation {
    pub start: u64,
    pub end: u64,
    pub switches: u64,
    pub allowed: f64,
}

/// Finds an interval `[k_s, k_e]` with more than `N₀ + (k_e − k_s)/τ_a` switches.
///
/// Only intervals starting and ending on switches need checking. With switch
/// `i` at step `s_i`, the condition for `i ≤ j` reads
/// `(j − s_j/τ) − (i − s_i/τ) + 1 ≤ N₀`, so a running minimum suffices.
pub fn find_dwell_violation(sig: &SwitchingSignal, tau_a: f64, n0: f64) -> Option<DwellViolation> {
    let mut best: Option<(f64, usize)> = None;
    for (j, (sj, _)) in sig.switches.iter().enumerate() {
        let cj = j as f64 - *sj as f64 / tau_a;
        best = match best {
            Some((c, i)) if c <= cj => Some((c, i)),
            _ => Some((cj, j)),
        };
        let (ci, i) = best.unwrap();
        if cj - ci + 1.0 > n0 + 1e-12 {
            let si = sig.switches[i].0;
            return Some(DwellViolation {
                start: si,
                end: *sj,
                switches: (j - i + 1) as u64,
                allowed: n0 + (*sj - si) as f64 / tau_a,
            });
        }
    }
    None
}

pub fn verify_switching_signal(sig: &SwitchingSignal, cert: &DwellTimeCertificate) -> bool {
    find_dwell_violation(sig, cert.tau_a_star as f64, sig.n0).is_none()
}
