//! Controller synthesis and the runtime controller/actuator state machines.
//!
//! Gains follow the `u = F x` convention: `F` already contains the minus sign,
//! so the nominal closed loop is `A + B F`.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain(pub DMatrix<f64>);

impl FeedbackGain {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn to_json(&self) -> GainFile {
        GainFile {
            schema_version: crate::SCHEMA_VERSION,
            rows: linalg::to_rows(&self.0),
        }
    }

    pub fn from_json(file: &GainFile) -> Result<Self> {
        let m = linalg::from_rows(&file.rows)?;
        if !linalg::all_finite(&m) {
            return Err(Error::InvalidParameter("gain has non-finite entries".into()));
        }
        Ok(FeedbackGain(m))
    }
}

/// On-disk form of a gain matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainFile {
    pub schema_version: u32,
    pub rows: Vec<Vec<f64>>,
}

fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        c.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    c
}

/// Numerical rank test on the controllability matrix.
pub fn is_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let c = controllability_matrix(a, b);
    let sv = c.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return false;
    }
    sv.iter().filter(|s| **s > max * 1e-12).count() == a.nrows()
}

/// Real coefficients `[c_0, …, c_{n-1}]` of the monic polynomial with the given
/// roots, i.e. `zⁿ + c_{n-1} z^{n-1} + … + c_0`.
fn monic_coefficients(poles: &[Complex<f64>]) -> Result<Vec<f64>> {
    let mut used = vec![false; poles.len()];
    for (i, p) in poles.iter().enumerate() {
        if used[i] || p.im.abs() <= 1e-12 {
            continue;
        }
        let mate =
            (0..poles.len()).find(|&j| j != i && !used[j] && (poles[j] - p.conj()).norm() <= 1e-9 * (1.0 + p.norm()));
        match mate {
            Some(j) => {
                used[i] = true;
                used[j] = true;
            }
            None => return Err(Error::Validation(format!("pole {p} has no conjugate partner"))),
        }
    }
    // Highest-degree coefficient first.
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for p in poles {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (k, c) in coeffs.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * p;
        }
        coeffs = next;
    }
    Ok(coeffs.iter().rev().take(poles.len()).map(|c| c.re).collect())
}

/// Single-input pole placement by Ackermann's formula.
pub fn place_poles(a: &DMatrix<f64>, b: &DMatrix<f64>, poles: &[Complex<f64>]) -> Result<FeedbackGain> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::Dimension("A must be n x n and B n x 1".into()));
    }
    if b.ncols() != 1 {
        return Err(Error::Validation(format!(
            "pole placement needs a single input, got {}",
            b.ncols()
        )));
    }
    if poles.len() != n {
        return Err(Error::Validation(format!("expected {n} poles, got {}", poles.len())));
    }
    let coeffs = monic_coefficients(poles)?;
    if !is_controllable(a, b) {
        return Err(Error::Synthesis("(A, B) is not controllable".into()));
    }

    // φ(A) = Aⁿ + Σ c_i Aⁱ via Horner.
    let mut phi = DMatrix::identity(n, n);
    for c in coeffs.iter().rev() {
        phi = a * phi + DMatrix::identity(n, n) * *c;
    }
    let ctrb = controllability_matrix(a, b);
    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    let q = ctrb
        .transpose()
        .lu()
        .solve(&e_n)
        .ok_or_else(|| Error::Synthesis("controllability matrix is singular".into()))?;
    let k = q.transpose() * phi;
    Ok(FeedbackGain(DMatrix::from_row_slice(1, n, (-k).as_slice())))
}

#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub gain: FeedbackGain,
    /// Fixed point of the discrete Riccati recursion.
    pub p: DMatrix<f64>,
    pub iterations: usize,
}

pub const LQR_MAX_ITERATIONS: usize = 100_000;
const LQR_TOL: f64 = 1e-12;

/// Infinite-horizon discrete LQR by iterating the Riccati recursion from `P₀ = Q`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<LqrSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension("LQR matrices have inconsistent shapes".into()));
    }
    if !linalg::is_psd(q, 1e-9) {
        return Err(Error::Validation("Q must be symmetric PSD".into()));
    }
    if !linalg::is_symmetric(r, 1e-9) || r.clone().cholesky().is_none() {
        return Err(Error::Validation("R must be symmetric positive definite".into()));
    }

    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for it in 1..=LQR_MAX_ITERATIONS {
        let pb = &p * b;
        let s = r + &bt * &pb;
        let sol = s
            .lu()
            .solve(&(pb.transpose() * a))
            .ok_or_else(|| Error::Synthesis("R + BᵀPB became singular".into()))?;
        let next = linalg::symmetrize(&(q + &at * &p * a - &at * &pb * sol));
        if !linalg::all_finite(&next) {
            return Err(Error::Synthesis("Riccati iteration diverged".into()));
        }
        let change = (&next - &p).norm();
        p = next;
        if change < LQR_TOL * p.norm().max(1.0) {
            let s = r + &bt * &p * b;
            let k = s
                .lu()
                .solve(&(&bt * &p * a))
                .ok_or_else(|| Error::Synthesis("R + BᵀPB is singular".into()))?;
            let gain = FeedbackGain(-k);
            let rho = linalg::spectral_radius(&(a + b * gain.matrix()))?;
            if rho >= 1.0 {
                return Err(Error::Synthesis(format!(
                    "LQR closed loop not stable (spectral radius {rho}); check stabilizability/detectability"
                )));
            }
            return Ok(LqrSolution {
                gain,
                p,
                iterations: it,
            });
        }
    }
    Err(Error::Synthesis(format!(
        "Riccati iteration did not converge in {LQR_MAX_ITERATIONS} iterations"
    )))
}

/// Residual `‖P − (Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA)‖_F`.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let inv = s.try_inverse().expect("R + BᵀPB invertible");
    let rhs = q + a.transpose() * p * a - a.transpose() * &pb * inv * pb.transpose() * a;
    (p - rhs).norm()
}

#[derive(Debug, Clone)]
pub struct SyncAgent {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Multi-agent synchronization LQR problem.
#[derive(Debug, Clone)]
pub struct SyncLqrSpec {
    pub agents: Vec<SyncAgent>,
    pub q_sync: DMatrix<f64>,
}

/// Gains of the synchronizing controller: `u_i = Σ_j blocks[i][j] · x_j`.
#[derive(Debug, Clone)]
pub struct SyncGains {
    pub blocks: Vec<Vec<DMatrix<f64>>>,
}

impl SyncGains {
    pub fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i][j]
    }

    pub fn agents(&self) -> usize {
        self.blocks.len()
    }
}

/// Solves the centralized LQR with the pairwise penalty
/// `Σ_{i<j} (x_i − x_j)ᵀ Q_sync (x_i − x_j)` and splits the gain per agent.
pub fn sync_lqr(spec: &SyncLqrSpec) -> Result<SyncGains> {
    let n_agents = spec.agents.len();
    if n_agents < 2 {
        return Err(Error::Validation("synchronization needs at least two agents".into()));
    }
    let n = spec.agents[0].a.nrows();
    if spec.q_sync.shape() != (n, n) {
        return Err(Error::Dimension("Q_sync must be n x n".into()));
    }
    if !linalg::is_psd(&spec.q_sync, 1e-9) {
        return Err(Error::Validation("Q_sync must be symmetric PSD".into()));
    }
    for (i, ag) in spec.agents.iter().enumerate() {
        if ag.a.shape() != (n, n)
            || ag.b.nrows() != n
            || ag.q.shape() != (n, n)
            || ag.r.shape() != (ag.b.ncols(), ag.b.ncols())
        {
            return Err(Error::Dimension(format!("agent {i} has inconsistent dimensions")));
        }
    }

    let a_blocks: Vec<&DMatrix<f64>> = spec.agents.iter().map(|ag| &ag.a).collect();
    let b_blocks: Vec<&DMatrix<f64>> = spec.agents.iter().map(|ag| &ag.b).collect();
    let r_blocks: Vec<&DMatrix<f64>> = spec.agents.iter().map(|ag| &ag.r).collect();
    let a = linalg::block_diag(&a_blocks);
    let b = linalg::block_diag(&b_blocks);
    let r = linalg::block_diag(&r_blocks);

    let mut q = DMatrix::zeros(n * n_agents, n * n_agents);
    let coupling = (n_agents - 1) as f64;
    for i in 0..n_agents {
        for j in 0..n_agents {
            let blk = if i == j {
                &spec.agents[i].q + &spec.q_sync * coupling
            } else {
                -&spec.q_sync
            };
            q.view_mut((i * n, j * n), (n, n)).copy_from(&blk);
        }
    }

    let sol = lqr_gain(&a, &b, &q, &r)?;
    let f = sol.gain.matrix();
    let mut row = 0;
    let blocks = spec
        .agents
        .iter()
        .map(|ag| {
            let m = ag.b.ncols();
            let out = (0..n_agents)
                .map(|j| f.view((row, j * n), (m, n)).into_owned())
                .collect();
            row += m;
            out
        })
        .collect();
    Ok(SyncGains { blocks })
}

/// Controller-side predictor.
///
/// Holds `x̂(k)` plus the last two computed inputs, since the state prediction
/// uses `û(k−1)` while the input prediction uses `û(k)`.
#[derive(Debug, Clone)]
pub struct PredictiveController {
    gain: FeedbackGain,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    x_hat: DVector<f64>,
    /// `û(k)`: the input computed one step ago, in flight to the actuator.
    u_hat: DVector<f64>,
    /// `û(k−1)`: the input the controller assumes was applied last step.
    u_hat_prev: DVector<f64>,
}

impl PredictiveController {
    pub fn new(gain: FeedbackGain, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if gain.0.shape() != (m, n) || b.nrows() != n || !a.is_square() {
            return Err(Error::Dimension(format!(
                "gain is {}x{}, expected {m}x{n}",
                gain.0.nrows(),
                gain.0.ncols()
            )));
        }
        Ok(PredictiveController {
            gain,
            a,
            b,
            x_hat: DVector::zeros(n),
            u_hat: DVector::zeros(m),
            u_hat_prev: DVector::zeros(m),
        })
    }

    pub fn x_hat(&self) -> &DVector<f64> {
        &self.x_hat
    }

    /// Most recently computed input.
    pub fn u_hat(&self) -> &DVector<f64> {
        &self.u_hat
    }

    pub fn gain(&self) -> &FeedbackGain {
        &self.gain
    }

    /// Sets `x̂ = initial` and zeroes the input history (rejoin after a gap).
    pub fn reset(&mut self, initial: Option<&DVector<f64>>) {
        match initial {
            Some(x) => self.x_hat.copy_from(x),
            None => self.x_hat.fill(0.0),
        }
        self.u_hat.fill(0.0);
        self.u_hat_prev.fill(0.0);
    }

    /// Swaps in the model and gain of a new mode, keeping the internal state.
    pub fn set_model(&mut self, gain: FeedbackGain, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<()> {
        if a.shape() != self.a.shape() || b.shape() != self.b.shape() || gain.0.shape() != self.gain.0.shape() {
            return Err(Error::Dimension("new controller model changes dimensions".into()));
        }
        self.gain = gain;
        self.a = a;
        self.b = b;
        Ok(())
    }

    /// `x̂(k) = A y(k−1) + B û(k−1)` if the measurement arrived, otherwise
    /// `x̂(k) = A x̂(k−1) + B û(k−1)`.
    pub fn predictor_update(&mut self, delayed_measurement: Option<&DVector<f64>>) -> &DVector<f64> {
        let base = delayed_measurement.unwrap_or(&self.x_hat);
        self.x_hat = &self.a * base + &self.b * &self.u_hat_prev;
        &self.x_hat
    }

    /// `û(k+1) = F (A x̂(k) + B û(k))`; shifts the input history.
    pub fn compute_input(&mut self) -> DVector<f64> {
        let next = self.gain.matrix() * (&self.a * &self.x_hat + &self.b * &self.u_hat);
        self.u_hat_prev = std::mem::replace(&mut self.u_hat, next.clone());
        next
    }
}

/// Actuator with zero-order hold.
#[derive(Debug, Clone)]
pub struct ZohActuator {
    u_prev: DVector<f64>,
}

impl ZohActuator {
    pub fn new(input_dim: usize) -> Self {
        ZohActuator {
            u_prev: DVector::zeros(input_dim),
        }
    }

    pub fn with_input(u: DVector<f64>) -> Self {
        ZohActuator { u_prev: u }
    }

    pub fn last(&self) -> &DVector<f64> {
        &self.u_prev
    }

    /// `u(k) = û(k)` if the control message arrived, else `u(k−1)`.
    pub fn actuator_apply(&mut self, delivered: Option<&DVector<f64>>) -> &DVector<f64> {
        if let Some(u) = delivered {
            self.u_prev.copy_from(u);
        }
        &self.u_prev
    }
}
