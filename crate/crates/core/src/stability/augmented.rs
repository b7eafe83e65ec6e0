use nalgebra::DMatrix;

use crate::control::FeedbackGain;
use crate::error::{Error, Result};
use crate::linalg;

/// Plant with a predictive controller and a ZOH actuator, closed over two lossy
/// links and written as `z(k+1) = (Ã₀ + Σ δᵢ Ãᵢ) z(k) + (Ê₀ + Σ δᵢ Êᵢ) ε(k)` with
/// `z = (x, x̂, u, û)`, `ε = (v, w)` and zero-mean loss variables `δ_θ, δ_φ`.
#[derive(Debug, Clone)]
pub struct AugmentedClosedLoop {
    pub state_dim: usize,
    pub input_dim: usize,
    pub a0: DMatrix<f64>,
    /// `[Ã₁, Ã₂]`, driven by the sensor and actuator loss variables.
    pub a_parts: [DMatrix<f64>; 2],
    /// `[σ²₁, σ²₂] = [1/µ_θ − 1, 1/µ_φ − 1]`.
    pub sigma2: [f64; 2],
    pub e0: DMatrix<f64>,
    pub e_parts: [DMatrix<f64>; 2],
    /// `blockdiag(Σ_proc, Σ_meas)`.
    pub w: DMatrix<f64>,
    pub mu_theta: f64,
    pub mu_phi: f64,
}

impl AugmentedClosedLoop {
    /// `d = 2n + 2m`.
    pub fn dim(&self) -> usize {
        self.a0.nrows()
    }

    /// `Γ(X) = Ã₀ X Ã₀ᵀ + Σ σᵢ² Ãᵢ X Ãᵢᵀ`, evaluated directly.
    pub fn gamma(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.a0 * x * self.a0.transpose();
        for (ai, s2) in self.a_parts.iter().zip(self.sigma2) {
            if s2 != 0.0 {
                out += ai * x * ai.transpose() * s2;
            }
        }
        out
    }

    /// The realization of `Ã(k)` for delivery indicators `θ, φ ∈ {0, 1}`.
    pub fn realization(&self, theta: bool, phi: bool) -> DMatrix<f64> {
        let mut out = self.a0.clone();
        let delta = |delivered: bool, mu: f64| if delivered { 1.0 - 1.0 / mu } else { 1.0 };
        out += &self.a_parts[0] * delta(theta, self.mu_theta);
        out += &self.a_parts[1] * delta(phi, self.mu_phi);
        out
    }
}

fn check_probability(name: &str, mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {mu}")));
    }
    Ok(())
}

/// Builds the augmented closed loop for plant `(A, B)`, gain `F` and delivery
/// probabilities `µ_θ` (sensor → controller) and `µ_φ` (controller → actuator).
pub fn build_augmented(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    f: &FeedbackGain,
    mu_theta: f64,
    mu_phi: f64,
    sigma_proc: &DMatrix<f64>,
    sigma_meas: &DMatrix<f64>,
) -> Result<AugmentedClosedLoop> {
    check_probability("mu_theta", mu_theta)?;
    check_probability("mu_phi", mu_phi)?;
    let n = a.nrows();
    let m = b.ncols();
    let f = f.matrix();
    if !a.is_square() || b.nrows() != n || f.shape() != (m, n) {
        return Err(Error::Dimension("A, B, F shapes are inconsistent".into()));
    }
    if sigma_proc.shape() != (n, n) || sigma_meas.shape() != (n, n) {
        return Err(Error::Dimension("noise covariances must be n x n".into()));
    }
    let d = 2 * n + 2 * m;
    let (x, xh, u, uh) = (0, n, 2 * n, 2 * n + m);
    let fa = f * a;
    let fb = f * b;
    let eye_m = DMatrix::<f64>::identity(m, m);

    let mut a0 = DMatrix::zeros(d, d);
    a0.view_mut((x, x), (n, n)).copy_from(a);
    a0.view_mut((x, u), (n, m)).copy_from(b);
    a0.view_mut((xh, x), (n, n)).copy_from(&(a * mu_theta));
    a0.view_mut((xh, xh), (n, n)).copy_from(&(a * (1.0 - mu_theta)));
    a0.view_mut((xh, uh), (n, m)).copy_from(b);
    a0.view_mut((u, xh), (m, n)).copy_from(&(&fa * mu_phi));
    a0.view_mut((u, u), (m, m)).copy_from(&(&eye_m * (1.0 - mu_phi)));
    a0.view_mut((u, uh), (m, m)).copy_from(&(&fb * mu_phi));
    a0.view_mut((uh, xh), (m, n)).copy_from(&fa);
    a0.view_mut((uh, uh), (m, m)).copy_from(&fb);

    let mut a1 = DMatrix::zeros(d, d);
    a1.view_mut((xh, x), (n, n)).copy_from(&(a * -mu_theta));
    a1.view_mut((xh, xh), (n, n)).copy_from(&(a * mu_theta));

    let mut a2 = DMatrix::zeros(d, d);
    a2.view_mut((u, xh), (m, n)).copy_from(&(&fa * -mu_phi));
    a2.view_mut((u, u), (m, m)).copy_from(&(&eye_m * mu_phi));
    a2.view_mut((u, uh), (m, m)).copy_from(&(&fb * -mu_phi));

    // Noise enters x through v(k) and x̂ through θ·A·w(k); with
    // θ = µ_θ(1 − δ_θ) this splits into a mean part and a δ_θ part.
    let mut e0 = DMatrix::zeros(d, 2 * n);
    e0.view_mut((x, 0), (n, n)).fill_with_identity();
    e0.view_mut((xh, n), (n, n)).copy_from(&(a * mu_theta));
    let mut e1 = DMatrix::zeros(d, 2 * n);
    e1.view_mut((xh, n), (n, n)).copy_from(&(a * -mu_theta));
    let e2 = DMatrix::zeros(d, 2 * n);

    Ok(AugmentedClosedLoop {
        state_dim: n,
        input_dim: m,
        a0,
        a_parts: [a1, a2],
        sigma2: [1.0 / mu_theta - 1.0, 1.0 / mu_phi - 1.0],
        e0,
        e_parts: [e1, e2],
        w: linalg::block_diag(&[sigma_proc, sigma_meas]),
        mu_theta,
        mu_phi,
    })
}
