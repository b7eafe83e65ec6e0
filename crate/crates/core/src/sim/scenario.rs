use std::collections::BTreeSet;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::control::{lqr_gain, place_poles, sync_lqr, FeedbackGain, SyncAgent, SyncGains, SyncLqrSpec};
use crate::error::{Error, Result};
use crate::model::{discretize, linearize_cartpole, CartPoleParams, ContinuousLti, PlantConstraints};
use crate::net::{LossConfig, ModeId, NodeId, Slot, SlotKind};
use crate::stability::{build_augmented, AugmentedClosedLoop};
use crate::SCHEMA_VERSION;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// Complete description of one experiment. Units: seconds, meters, volts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub plants: Vec<PlantConfig>,
    pub controller: ControllerConfig,
    pub network: NetworkConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "snake_case")]
pub enum PlantModel {
    /// Linearized cart-pole; every field defaults to the reference hardware.
    Cartpole {
        #[serde(default)]
        params: CartPoleParams,
    },
    /// `ẋ = A x + B u`, discretized per update interval.
    Continuous { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    /// Already discrete; only valid when every mode uses `interval`.
    Discrete {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        interval: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Diagonal of `Σ_proc`; empty means no process noise.
    #[serde(default)]
    pub process_variance: Vec<f64>,
    /// Diagonal of `Σ_meas`; empty means exact measurements.
    #[serde(default)]
    pub measurement_variance: Vec<f64>,
    /// Interpret `process_variance` per second, so each step gets `var · T_U`.
    #[serde(default)]
    pub process_per_second: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub model: PlantModel,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Input cap (V) and track limit (m); omitted means unconstrained.
    #[serde(default)]
    pub constraints: Option<PlantConstraints>,
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Random stream used for this plant's noise; defaults to its index.
    #[serde(default)]
    pub noise_stream: Option<u64>,
}

/// A pole given either as a real number or as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoleSpec {
    Real(f64),
    Complex([f64; 2]),
}

impl PoleSpec {
    fn value(self) -> Complex<f64> {
        match self {
            PoleSpec::Real(r) => Complex::new(r, 0.0),
            PoleSpec::Complex([re, im]) => Complex::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "method", rename_all = "snake_case")]
pub enum GainDesign {
    /// Discrete poles valid at `design_interval`; at another interval `T` each
    /// pole `λ` becomes `λ^(T / design_interval)`, keeping the continuous-time
    /// closed-loop behavior.
    Poles { poles: Vec<PoleSpec>, design_interval: f64 },
    /// Discrete LQR with diagonal state weight and scalar input weight.
    Lqr { q: Vec<f64>, r: f64 },
    /// Fixed gain row; only valid when every mode shares one interval.
    Explicit { gain: Vec<f64> },
}

impl GainDesign {
    pub fn synthesize(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, interval: f64) -> Result<FeedbackGain> {
        match self {
            GainDesign::Poles { poles, design_interval } => {
                if !(*design_interval > 0.0) {
                    return Err(Error::Validation("design_interval must be > 0".into()));
                }
                let ratio = interval / design_interval;
                let mapped: Vec<Complex<f64>> = poles
                    .iter()
                    .map(|p| {
                        let v = p.value();
                        if (ratio - 1.0).abs() < 1e-12 || v.norm() == 0.0 {
                            v
                        } else {
                            (v.ln() * ratio).exp()
                        }
                    })
                    .collect();
                place_poles(a, b, &mapped)
            }
            GainDesign::Lqr { q, r } => {
                if q.len() != a.nrows() {
                    return Err(Error::Dimension(format!(
                        "q has {} entries, state has {}",
                        q.len(),
                        a.nrows()
                    )));
                }
                let qm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(q));
                let rm = DMatrix::identity(b.ncols(), b.ncols()) * *r;
                Ok(lqr_gain(a, b, &qm, &rm)?.gain)
            }
            GainDesign::Explicit { gain } => {
                if gain.len() != a.nrows() * b.ncols() {
                    return Err(Error::Dimension(format!(
                        "gain has {} entries, expected {}",
                        gain.len(),
                        a.nrows() * b.ncols()
                    )));
                }
                Ok(FeedbackGain(DMatrix::from_row_slice(b.ncols(), a.nrows(), gain)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub plant: usize,
    pub design: GainDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldScript {
    pub agent: usize,
    /// First held step (inclusive).
    pub start: u64,
    /// First released step.
    pub end: u64,
    /// Cart position while held, meters.
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "snake_case")]
pub enum ControllerConfig {
    /// Each loop is closed over the network: sensor and actuator at the plant
    /// node, predictive controller on a separate node.
    Remote { loops: Vec<LoopConfig> },
    /// Every plant is an agent with a local loop; agents exchange states over
    /// the network every `network_every` local steps.
    Sync {
        q: Vec<f64>,
        r: f64,
        /// Diagonal of the pairwise synchronization weight.
        q_sync: Vec<f64>,
        local_interval: f64,
        #[serde(default = "default_network_every")]
        network_every: u32,
        #[serde(default)]
        hold: Option<HoldScript>,
    },
}

fn default_network_every() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub id: ModeId,
    /// `T_U` in seconds; one communication round per update interval.
    pub update_interval: f64,
    /// Explicit schedule; by default every loop gets a sensor slot `y<i>` and
    /// a control slot `u<i>`.
    #[serde(default)]
    pub slots: Option<Vec<Slot>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub loss: LossConfig,
    #[serde(default)]
    pub modes: Vec<ModeConfig>,
    #[serde(default)]
    pub initial_mode: Option<ModeId>,
    /// Length of one flood slot, seconds, for the duty-cycle proxy.
    #[serde(default = "default_slot_duration")]
    pub slot_duration: f64,
}

fn default_slot_duration() -> f64 {
    0.002
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeChangeScript {
    /// Step at which the host requests the change.
    pub step: u64,
    pub mode: ModeId,
    /// Announcing rounds before the switch.
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode_changes: Vec<ModeChangeScript>,
    /// Largest pole angle (rad) still counted as stabilized.
    #[serde(default = "default_angle_limit")]
    pub angle_limit: f64,
}

fn default_angle_limit() -> f64 {
    0.5
}

pub(crate) fn plant_node(i: usize) -> NodeId {
    2 * i as NodeId + 1
}

pub(crate) fn controller_node(i: usize) -> NodeId {
    2 * i as NodeId + 2
}

pub(crate) fn sensor_message(i: usize) -> String {
    format!("y{i}")
}

pub(crate) fn control_message(i: usize) -> String {
    format!("u{i}")
}

pub(crate) fn state_message(i: usize) -> String {
    format!("s{i}")
}

/// Discrete model of one plant at one update interval.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma_proc: DMatrix<f64>,
    pub sigma_meas: DMatrix<f64>,
}

fn diag_or_zero(v: &[f64], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if v.is_empty() {
        return Ok(DMatrix::zeros(n, n));
    }
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "{what} has {} entries, state has {n}",
            v.len()
        )));
    }
    if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(Error::Validation(format!("{what} entries must be finite and >= 0")));
    }
    Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)))
}

impl PlantConfig {
    pub fn state_dim(&self) -> Result<usize> {
        Ok(match &self.model {
            PlantModel::Cartpole { .. } => 4,
            PlantModel::Continuous { a, .. } | PlantModel::Discrete { a, .. } => a.len(),
        })
    }

    pub fn discrete(&self, interval: f64) -> Result<DiscreteModel> {
        let (a, b) = match &self.model {
            PlantModel::Cartpole { params } => discretize(&linearize_cartpole(params)?, interval)?,
            PlantModel::Continuous { a, b } => {
                let sys = ContinuousLti::new(crate::linalg::from_rows(a)?, crate::linalg::from_rows(b)?)?;
                discretize(&sys, interval)?
            }
            PlantModel::Discrete { a, b, interval: own } => {
                if (own - interval).abs() > 1e-12 * own.abs().max(1.0) {
                    return Err(Error::Validation(format!(
                        "discrete plant is defined for interval {own} s but a mode uses {interval} s"
                    )));
                }
                (crate::linalg::from_rows(a)?, crate::linalg::from_rows(b)?)
            }
        };
        let n = a.nrows();
        let mut sigma_proc = diag_or_zero(&self.noise.process_variance, n, "process_variance")?;
        if self.noise.process_per_second {
            sigma_proc *= interval;
        }
        let sigma_meas = diag_or_zero(&self.noise.measurement_variance, n, "measurement_variance")?;
        Ok(DiscreteModel {
            a,
            b,
            sigma_proc,
            sigma_meas,
        })
    }
}

/// Reference cart-pole with default constraints.
pub fn cartpole_plant(noise: NoiseConfig) -> PlantConfig {
    PlantConfig {
        model: PlantModel::Cartpole {
            params: CartPoleParams::default(),
        },
        noise,
        constraints: Some(PlantConstraints::default()),
        initial_state: None,
        noise_stream: None,
    }
}

impl Scenario {
    pub fn is_sync(&self) -> bool {
        matches!(self.controller, ControllerConfig::Sync { .. })
    }

    /// Checks cross-references and shapes. Returns the first problem found.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.plants.is_empty() {
            return Err(Error::Validation("at least one plant is required".into()));
        }
        if self.run.horizon == 0 {
            return Err(Error::Validation("run.horizon must be > 0".into()));
        }
        self.network.loss.validate()?;
        if !(self.network.slot_duration > 0.0) {
            return Err(Error::Validation("network.slot_duration must be > 0".into()));
        }
        for (i, p) in self.plants.iter().enumerate() {
            let n = p.state_dim()?;
            if let Some(x0) = &p.initial_state {
                if x0.len() != n {
                    return Err(Error::Dimension(format!(
                        "plants[{i}].initial_state has {} entries, state has {n}",
                        x0.len()
                    )));
                }
            }
            if let Some(c) = p.constraints {
                c.validate()?;
            }
        }
        match &self.controller {
            ControllerConfig::Remote { loops } => self.validate_remote(loops),
            ControllerConfig::Sync {
                q,
                q_sync,
                local_interval,
                network_every,
                hold,
                ..
            } => {
                if self.plants.len() < 2 {
                    return Err(Error::Validation("synchronization needs at least two agents".into()));
                }
                if !self.network.modes.is_empty() || !self.run.mode_changes.is_empty() {
                    return Err(Error::Validation(
                        "sync scenarios derive their own schedule; network.modes and run.mode_changes must be empty"
                            .into(),
                    ));
                }
                if !(*local_interval > 0.0) || *network_every == 0 {
                    return Err(Error::Validation("local_interval and network_every must be > 0".into()));
                }
                let n = self.plants[0].state_dim()?;
                for (i, p) in self.plants.iter().enumerate() {
                    if p.state_dim()? != n {
                        return Err(Error::Dimension(format!("agent {i} has a different state dimension")));
                    }
                }
                if q.len() != n || q_sync.len() != n {
                    return Err(Error::Dimension("q and q_sync need one entry per state".into()));
                }
                if let Some(h) = hold {
                    if h.agent >= self.plants.len() || h.end < h.start {
                        return Err(Error::Validation(
                            "hold script names an unknown agent or an empty window".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    fn validate_remote(&self, loops: &[LoopConfig]) -> Result<()> {
        if loops.is_empty() {
            return Err(Error::Validation("remote controller needs at least one loop".into()));
        }
        let mut seen = BTreeSet::new();
        for (i, l) in loops.iter().enumerate() {
            if l.plant >= self.plants.len() {
                return Err(Error::Validation(format!(
                    "loops[{i}] references unknown plant {}",
                    l.plant
                )));
            }
            if !seen.insert(l.plant) {
                return Err(Error::Validation(format!("plant {} is controlled twice", l.plant)));
            }
        }
        if self.network.modes.is_empty() {
            return Err(Error::Validation("remote scenarios need at least one mode".into()));
        }
        let ids: BTreeSet<ModeId> = self.network.modes.iter().map(|m| m.id).collect();
        if ids.len() != self.network.modes.len() {
            return Err(Error::Validation("duplicate mode id".into()));
        }
        if let Some(m) = self.network.initial_mode {
            if !ids.contains(&m) {
                return Err(Error::Validation(format!("initial_mode {m} is not defined")));
            }
        }
        for m in &self.network.modes {
            if !(m.update_interval > 0.0) {
                return Err(Error::Validation(format!("mode {} needs update_interval > 0", m.id)));
            }
            let slots = self.mode_slots(m);
            for i in 0..loops.len() {
                for msg in [sensor_message(i), control_message(i)] {
                    if !slots.iter().any(|s| s.message == msg) {
                        return Err(Error::Validation(format!(
                            "mode {} does not schedule message `{msg}`",
                            m.id
                        )));
                    }
                }
            }
        }
        for c in &self.run.mode_changes {
            if !ids.contains(&c.mode) {
                return Err(Error::Validation(format!(
                    "mode change at step {} names unknown mode {}",
                    c.step, c.mode
                )));
            }
            if c.rounds == 0 {
                return Err(Error::Validation("mode change needs rounds >= 1".into()));
            }
        }
        Ok(())
    }

    /// Remote loops; empty for sync scenarios.
    pub fn loops(&self) -> &[LoopConfig] {
        match &self.controller {
            ControllerConfig::Remote { loops } => loops,
            ControllerConfig::Sync { .. } => &[],
        }
    }

    pub fn mode(&self, id: ModeId) -> Option<&ModeConfig> {
        self.network.modes.iter().find(|m| m.id == id)
    }

    /// Augmented closed loop of remote loop `index` under mode `m`, with the
    /// scenario's i.i.d. loss rates and noise at that mode's update interval.
    pub fn augmented_loop(&self, index: usize, m: &ModeConfig) -> Result<AugmentedClosedLoop> {
        let l = self
            .loops()
            .get(index)
            .ok_or_else(|| Error::Validation(format!("no remote loop {index}")))?;
        let d = self.plants[l.plant].discrete(m.update_interval)?;
        let f = l.design.synthesize(&d.a, &d.b, m.update_interval)?;
        let loss = &self.network.loss;
        build_augmented(&d.a, &d.b, &f, loss.mu_theta, loss.mu_phi, &d.sigma_proc, &d.sigma_meas)
    }

    /// Slots of a mode, generated if not given explicitly.
    pub fn mode_slots(&self, m: &ModeConfig) -> Vec<Slot> {
        if let Some(s) = &m.slots {
            return s.clone();
        }
        let mut slots = Vec::new();
        for i in 0..self.loops().len() {
            slots.push(Slot {
                message: sensor_message(i),
                source: plant_node(i),
                destinations: vec![controller_node(i)],
                kind: SlotKind::Sensor,
            });
            slots.push(Slot {
                message: control_message(i),
                source: controller_node(i),
                destinations: vec![plant_node(i)],
                kind: SlotKind::Control,
            });
        }
        slots
    }

    /// Gains for a sync scenario at its local interval.
    pub fn sync_gains(&self) -> Result<SyncGains> {
        let ControllerConfig::Sync {
            q,
            r,
            q_sync,
            local_interval,
            ..
        } = &self.controller
        else {
            return Err(Error::Validation("not a sync scenario".into()));
        };
        let diag = |v: &[f64]| DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v));
        let agents = self
            .plants
            .iter()
            .map(|p| {
                let d = p.discrete(*local_interval)?;
                let m = d.b.ncols();
                Ok(SyncAgent {
                    a: d.a,
                    b: d.b,
                    q: diag(q),
                    r: DMatrix::identity(m, m) * *r,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sync_lqr(&SyncLqrSpec {
            agents,
            q_sync: diag(q_sync),
        })
    }
}
