//! Cart-pole physics and the stochastic discrete-time plant
//! `x(k+1) = A x(k) + B u(k) + v(k)`, `y(k) = x(k) + w(k)`. Discretization is an
//! exact zero-order hold.
//!
//! State ordering for the cart-pole is fixed as `(s, ṡ, θ, θ̇)`: cart position
//! in meters, cart velocity, pole angle from upright in radians, angular rate.
//! The single input is the motor voltage.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Deterministic generator used for every stochastic process in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Index of the cart position in the cart-pole state.
pub const POSITION: usize = 0;
/// Index of the pole angle in the cart-pole state.
pub const ANGLE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleParams {
    /// kg
    pub cart_mass: f64,
    /// kg
    pub pole_mass: f64,
    /// Distance from the pivot to the pole's center of mass, m.
    pub pole_half_length: f64,
    /// m/s²
    pub gravity: f64,
    /// Viscous cart friction, N·s/m.
    pub cart_friction: f64,
    /// Force produced per volt of control input, N/V.
    pub input_gain: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            cart_mass: 0.57,
            pole_mass: 0.23,
            pole_half_length: 0.1778,
            gravity: 9.81,
            cart_friction: 4.9,
            input_gain: 1.6,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("gravity", self.gravity),
            ("input_gain", self.input_gain),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.cart_friction.is_finite() && self.cart_friction >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cart_friction must be >= 0, got {}",
                self.cart_friction
            )));
        }
        Ok(())
    }
}

/// Continuous-time LTI model `ẋ = A_c x + B_c u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLti {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ContinuousLti {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !linalg::all_finite(&a) || !linalg::all_finite(&b) {
            return Err(Error::InvalidParameter("non-finite system matrix".into()));
        }
        Ok(ContinuousLti { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Linearizes the cart-pole about the upright equilibrium.
///
/// The pole is a uniform rod (inertia `m l² / 3` about its center). With
/// `p = I (M + m) + M m l²` the linear equations are
/// `(M + m) s̈ + b ṡ − m l θ̈ = F` and `(I + m l²) θ̈ − m g l θ = m l s̈`.
pub fn linearize_cartpole(params: &CartPoleParams) -> Result<ContinuousLti> {
    params.validate()?;
    let CartPoleParams {
        cart_mass: big_m,
        pole_mass: m,
        pole_half_length: l,
        gravity: g,
        cart_friction: b,
        input_gain: k,
    } = *params;
    let inertia = m * l * l / 3.0;
    let p = inertia * (big_m + m) + big_m * m * l * l;
    let j = inertia + m * l * l;

    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0,            0.0,                       0.0,
        0.0, -j * b / p,     m * m * g * l * l / p,     0.0,
        0.0, 0.0,            0.0,                       1.0,
        0.0, -m * l * b / p, m * g * l * (big_m + m) / p, 0.0,
    ]);
    let bm = DMatrix::from_column_slice(4, 1, &[0.0, k * j / p, 0.0, k * m * l / p]);
    ContinuousLti::new(a, bm)
}

/// Exact zero-order-hold discretization over one update interval.
///
/// Exponentiates the augmented matrix `[[A_c, B_c], [0, 0]]·T`; the top blocks
/// of the result are `exp(A_c T)` and `∫₀ᵀ exp(A_c τ) dτ · B_c`.
pub fn discretize(sys: &ContinuousLti, update_interval: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(update_interval.is_finite() && update_interval > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "update interval must be > 0, got {update_interval}"
        )));
    }
    let n = sys.state_dim();
    let m = sys.input_dim();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a * update_interval));
    aug.view_mut((0, n), (n, m)).copy_from(&(&sys.b * update_interval));
    let e = aug.exp();
    if !linalg::all_finite(&e) {
        return Err(Error::Discretization(format!(
            "matrix exponential is not finite at T = {update_interval}"
        )));
    }
    let a = e.view((0, 0), (n, n)).into_owned();
    let b = e.view((0, n), (n, m)).into_owned();
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConstraints {
    /// Input saturation magnitude, volts.
    pub input_cap: f64,
    /// Absolute bound on the cart position, meters.
    pub track_limit: f64,
}

impl Default for PlantConstraints {
    fn default() -> Self {
        PlantConstraints {
            input_cap: 10.0,
            track_limit: 0.25,
        }
    }
}

impl PlantConstraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.input_cap > 0.0 && self.track_limit > 0.0) {
            return Err(Error::InvalidParameter("input_cap and track_limit must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TrackLimit,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantStep {
    /// Input after saturation.
    pub applied: DVector<f64>,
    pub terminated: Option<Termination>,
}

/// Discrete-time stochastic plant.
#[derive(Debug, Clone)]
pub struct LtiPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma_proc: DMatrix<f64>,
    pub sigma_meas: DMatrix<f64>,
    pub x: DVector<f64>,
    pub update_interval: f64,
    pub constraints: Option<PlantConstraints>,
    proc_factor: DMatrix<f64>,
    meas_factor: DMatrix<f64>,
}

impl LtiPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma_proc: DMatrix<f64>,
        sigma_meas: DMatrix<f64>,
        update_interval: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n {
            return Err(Error::Dimension("plant A/B shapes disagree".into()));
        }
        if sigma_proc.shape() != (n, n) || sigma_meas.shape() != (n, n) {
            return Err(Error::Dimension("noise covariances must be n x n".into()));
        }
        if !linalg::all_finite(&a) || !linalg::all_finite(&b) {
            return Err(Error::InvalidParameter("non-finite plant matrix".into()));
        }
        for (name, s) in [("process", &sigma_proc), ("measurement", &sigma_meas)] {
            if !linalg::is_psd(s, 1e-9) {
                return Err(Error::InvalidParameter(format!(
                    "{name} noise covariance must be symmetric PSD"
                )));
            }
        }
        if !(update_interval > 0.0) {
            return Err(Error::InvalidParameter("update interval must be > 0".into()));
        }
        let proc_factor = linalg::psd_factor(&sigma_proc);
        let meas_factor = linalg::psd_factor(&sigma_meas);
        Ok(LtiPlant {
            a,
            b,
            sigma_proc,
            sigma_meas,
            x: DVector::zeros(n),
            update_interval,
            constraints: None,
            proc_factor,
            meas_factor,
        })
    }

    pub fn with_constraints(mut self, constraints: PlantConstraints) -> Result<Self> {
        constraints.validate()?;
        self.constraints = Some(constraints);
        Ok(self)
    }

    pub fn with_state(mut self, x: DVector<f64>) -> Self {
        assert_eq!(x.len(), self.state_dim());
        self.x = x;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Replaces the dynamics (e.g. after a mode change to a different update
    /// interval) while keeping the physical state.
    pub fn set_dynamics(
        &mut self,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma_proc: DMatrix<f64>,
        update_interval: f64,
    ) -> Result<()> {
        if a.shape() != self.a.shape() || b.shape() != self.b.shape() {
            return Err(Error::Dimension("new dynamics change plant dimensions".into()));
        }
        self.proc_factor = linalg::psd_factor(&sigma_proc);
        self.a = a;
        self.b = b;
        self.sigma_proc = sigma_proc;
        self.update_interval = update_interval;
        Ok(())
    }

    pub fn saturate(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.constraints {
            Some(c) => u.map(|v| v.clamp(-c.input_cap, c.input_cap)),
            None => u.clone(),
        }
    }

    /// Advances `x(k+1) = A x(k) + B sat(u) + v(k)`.
    pub fn step(&mut self, u: &DVector<f64>, rng: &mut SimRng) -> PlantStep {
        let applied = self.saturate(u);
        let v = gaussian(&self.proc_factor, rng);
        self.x = &self.a * &self.x + &self.b * &applied + v;
        let terminated = if self.x.iter().any(|v| !v.is_finite()) {
            Some(Termination::Diverged)
        } else {
            match self.constraints {
                Some(c) if self.x[POSITION].abs() > c.track_limit => Some(Termination::TrackLimit),
                _ => None,
            }
        };
        PlantStep { applied, terminated }
    }

    /// `y(k) = x(k) + w(k)`.
    pub fn measure(&self, rng: &mut SimRng) -> DVector<f64> {
        &self.x + gaussian(&self.meas_factor, rng)
    }
}

/// Draws `L z` with `z ~ N(0, I)`. Always consumes `L.ncols()` normals so the
/// stream position does not depend on the covariance values.
fn gaussian(factor: &DMatrix<f64>, rng: &mut SimRng) -> DVector<f64> {
    let z = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * z
}
