use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AugmentedClosedLoop;
use crate::error::{Error, Result};
use crate::linalg;

/// Default width of the band around 1 inside which verdicts are borderline.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Vectorized second-moment map `vec(M) ↦ G vec(M)` together with the constant
/// noise term, so that `M(k+1) = Γ(M(k)) + Ŵ`.
#[derive(Debug, Clone)]
pub struct SecondMomentOperator {
    pub g: DMatrix<f64>,
    pub w_hat: DMatrix<f64>,
    dim: usize,
}

impl SecondMomentOperator {
    /// Operator with a given map `G` (`d² × d²`) and noise term `Ŵ` (`d × d`).
    pub fn from_parts(g: DMatrix<f64>, w_hat: DMatrix<f64>) -> Result<Self> {
        let dim = w_hat.nrows();
        if !w_hat.is_square() || g.shape() != (dim * dim, dim * dim) {
            return Err(Error::Dimension(format!(
                "G is {}x{} but W is {}x{}",
                g.nrows(),
                g.ncols(),
                w_hat.nrows(),
                w_hat.ncols()
            )));
        }
        Ok(SecondMomentOperator { g, w_hat, dim })
    }

    /// Side length `d` of the correlation matrices the operator acts on.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::unvectorize(&(&self.g * linalg::vectorize(m)), self.dim)
    }

    /// One step of `M(k+1) = Γ(M(k)) + Ŵ`.
    pub fn step(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply(m) + &self.w_hat
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        linalg::spectral_radius(&self.g)
    }
}

pub fn second_moment_operator(acl: &AugmentedClosedLoop) -> SecondMomentOperator {
    let mut g = acl.a0.kronecker(&acl.a0);
    let mut w_hat = &acl.e0 * &acl.w * acl.e0.transpose();
    for i in 0..2 {
        let s2 = acl.sigma2[i];
        if s2 != 0.0 {
            g += acl.a_parts[i].kronecker(&acl.a_parts[i]) * s2;
            w_hat += &acl.e_parts[i] * &acl.w * acl.e_parts[i].transpose() * s2;
        }
    }
    SecondMomentOperator {
        g,
        w_hat: linalg::symmetrize(&w_hat),
        dim: acl.dim(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
}

/// Outcome of the mean-square stability test.
#[derive(Debug, Clone)]
pub struct MssCertificate {
    pub verdict: Verdict,
    pub spectral_radius: f64,
    /// `ρ` fell in `[1 − tol, 1 + tol)`; always reported as unstable.
    pub borderline: bool,
    /// `P > 0` with `Ã₀ᵀPÃ₀ − P + Σ σᵢ² ÃᵢᵀPÃᵢ < 0`, present when stable.
    pub p: Option<DMatrix<f64>>,
    /// Largest eigenvalue of the LMI left-hand side (negative when certified).
    pub lmi_margin: Option<f64>,
}

/// A verified Lyapunov certificate for the noise-free loop.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub p: DMatrix<f64>,
    /// `λ_max` of `Γ*(P) − P`.
    pub lmi_max_eig: f64,
    /// `λ_min` of `P`.
    pub p_min_eig: f64,
}

/// Attempts to certify mean-square stability through the LMI alone.
///
/// Solves `P − Γ*(P) = I` where `Γ*(P) = Ã₀ᵀPÃ₀ + Σ σᵢ² ÃᵢᵀPÃᵢ` is the adjoint
/// map (matrix `Gᵀ` on vectorized `P`), then checks that `P` is positive
/// definite and that the LMI left-hand side is negative definite. Returns
/// `None` when the linear system is singular or either check fails.
pub fn lyapunov_certificate(acl: &AugmentedClosedLoop, smo: &SecondMomentOperator) -> Option<LyapunovCertificate> {
    let d = smo.dim();
    let dd = d * d;
    let lhs = DMatrix::<f64>::identity(dd, dd) - smo.g.transpose();
    let rhs = linalg::vectorize(&DMatrix::identity(d, d));
    let sol = lhs.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let p = linalg::symmetrize(&linalg::unvectorize(&sol, d));

    let mut lmi = acl.a0.transpose() * &p * &acl.a0 - &p;
    for (ai, s2) in acl.a_parts.iter().zip(acl.sigma2) {
        if s2 != 0.0 {
            lmi += ai.transpose() * &p * ai * s2;
        }
    }
    let (p_min, p_max) = linalg::sym_eig_range(&p);
    let (_, lmi_max) = linalg::sym_eig_range(&lmi);
    let scale = p_max.abs().max(1.0);
    if p_min > 1e-12 * scale && lmi_max < -1e-12 * scale {
        Some(LyapunovCertificate {
            p,
            lmi_max_eig: lmi_max,
            p_min_eig: p_min,
        })
    } else {
        None
    }
}

/// Mean-square stability verdict from the spectral radius of `G`, backed by an
/// LMI certificate when stable.
pub fn check_mss(acl: &AugmentedClosedLoop, tol: f64) -> Result<MssCertificate> {
    if !(tol > 0.0 && tol < 0.1) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must lie in (0, 0.1), got {tol}"
        )));
    }
    let smo = second_moment_operator(acl);
    let rho = smo.spectral_radius()?;
    if rho < 1.0 - tol {
        let cert = lyapunov_certificate(acl, &smo).ok_or_else(|| {
            Error::Analysis(format!(
                "spectral radius {rho} < 1 but no Lyapunov certificate could be constructed"
            ))
        })?;
        Ok(MssCertificate {
            verdict: Verdict::Stable,
            spectral_radius: rho,
            borderline: false,
            lmi_margin: Some(cert.lmi_max_eig),
            p: Some(cert.p),
        })
    } else {
        Ok(MssCertificate {
            verdict: Verdict::Unstable,
            spectral_radius: rho,
            borderline: rho < 1.0 + tol,
            p: None,
            lmi_margin: None,
        })
    }
}

/// Limit of the state correlation, `W̄ = (I − Γ)⁻¹(Ŵ)`.
pub fn steady_state_correlation(smo: &SecondMomentOperator) -> Result<DMatrix<f64>> {
    let rho = smo.spectral_radius()?;
    if rho >= 1.0 {
        return Err(Error::NoSteadyState { spectral_radius: rho });
    }
    let dd = smo.g.nrows();
    let lhs = DMatrix::<f64>::identity(dd, dd) - &smo.g;
    let sol: DVector<f64> = lhs
        .lu()
        .solve(&linalg::vectorize(&smo.w_hat))
        .ok_or_else(|| Error::Analysis("I − G is singular".into()))?;
    Ok(linalg::symmetrize(&linalg::unvectorize(&sol, smo.dim())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::FeedbackGain;
    use crate::stability::build_augmented;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_operator(a0: f64, a1: f64, s2: f64, w_hat: f64) -> SecondMomentOperator {
        let g = s(a0 * a0 + s2 * a1 * a1);
        SecondMomentOperator {
            g,
            w_hat: s(w_hat),
            dim: 1,
        }
    }

    #[test]
    fn scalar_operator_values() {
        assert_eq!(scalar_operator(0.5, 0.0, 0.0, 0.0).g[(0, 0)], 0.25);
        assert_eq!(scalar_operator(0.5, 0.5, 1.0, 0.0).g[(0, 0)], 0.5);
    }

    #[test]
    fn scalar_steady_state_geometric_series() {
        let smo = scalar_operator(0.5, 0.0, 0.0, 1.0);
        let w = steady_state_correlation(&smo).unwrap();
        assert!((w[(0, 0)] - 4.0 / 3.0).abs() < 1e-10);
        let zero = scalar_operator(0.5, 0.0, 0.0, 0.0);
        assert_eq!(steady_state_correlation(&zero).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn unstable_operator_has_no_steady_state() {
        let smo = scalar_operator(1.2, 0.0, 0.0, 1.0);
        assert!(matches!(
            steady_state_correlation(&smo),
            Err(Error::NoSteadyState { .. })
        ));
    }

    #[test]
    fn nominal_loop_spectral_radius() {
        // With perfect links the loop reduces to x(k+1) = (a + b f) x(k).
        let acl = build_augmented(&s(1.1), &s(1.0), &FeedbackGain(s(-0.6)), 1.0, 1.0, &s(0.0), &s(0.0)).unwrap();
        let cert = check_mss(&acl, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(cert.verdict, Verdict::Stable);
        assert!((cert.spectral_radius - 0.25).abs() < 1e-9);
        assert!(cert.lmi_margin.unwrap() < 0.0);
    }

    #[test]
    fn frozen_actuator_is_unstable() {
        let acl = build_augmented(&s(1.1), &s(1.0), &FeedbackGain(s(-0.6)), 1.0, 1e-3, &s(0.0), &s(0.0)).unwrap();
        let cert = check_mss(&acl, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(cert.verdict, Verdict::Unstable);
        assert!(cert.p.is_none());
    }

    #[test]
    fn tolerance_is_validated() {
        let acl = build_augmented(&s(0.5), &s(1.0), &FeedbackGain(s(0.0)), 1.0, 1.0, &s(0.0), &s(0.0)).unwrap();
        assert!(check_mss(&acl, 0.0).is_err());
        assert!(check_mss(&acl, 0.2).is_err());
    }

    #[test]
    fn borderline_band_reported() {
        // Open-loop a = 1 with no feedback: ρ(G) = 1 exactly.
        let acl = build_augmented(&s(1.0), &s(1.0), &FeedbackGain(s(0.0)), 1.0, 1.0, &s(0.0), &s(0.0)).unwrap();
        let cert = check_mss(&acl, 1e-6).unwrap();
        assert_eq!(cert.verdict, Verdict::Unstable);
        assert!(cert.borderline);
    }
}
