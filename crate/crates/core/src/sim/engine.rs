use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::scenario::{
    control_message, controller_node, plant_node, sensor_message, state_message, ControllerConfig, Scenario,
};
use crate::control::{FeedbackGain, PredictiveController, SyncGains, ZohActuator};
use crate::error::{Error, Result};
use crate::model::{LtiPlant, SimRng, Termination, POSITION};
use crate::net::{Delivery, Mode, ModeEvent, ModeId, Network, NodeId, RoundOutcome, Slot, SlotKind};

/// Stream ids inside one seed. Plant `i` uses `PLANT_STREAM_BASE + 2 s` for
/// process noise and `+ 1` for measurement noise, where `s` is its noise stream.
const NETWORK_STREAM: u64 = 1;
const PLANT_STREAM_BASE: u64 = 16;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantRecord {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Input after saturation.
    pub u: Vec<f64>,
    /// Input computed by the controller this step (remote loops only).
    pub u_hat: Option<Vec<f64>>,
    pub x_hat: Option<Vec<f64>>,
    /// The measurement used by the controller this step arrived.
    pub theta: bool,
    /// The input applied this step arrived fresh.
    pub phi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: u64,
    /// Start time of the step, seconds.
    pub time: f64,
    pub mode: ModeId,
    pub plants: Vec<PlantRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminationRecord {
    pub step: u64,
    pub plant: usize,
    pub cause: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub step: u64,
    pub mode: ModeId,
    pub dead: bool,
    pub burst: bool,
    pub deliveries: Vec<Delivery>,
    pub local_modes: BTreeMap<NodeId, ModeId>,
}

impl RoundRecord {
    fn from_outcome(o: RoundOutcome, step: u64) -> Self {
        RoundRecord {
            round: o.round,
            step,
            mode: o.mode,
            dead: o.dead,
            burst: o.burst,
            deliveries: o.deliveries,
            local_modes: o.local_modes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<StepRecord>,
    pub rounds: Vec<RoundRecord>,
    pub termination: Option<TerminationRecord>,
    /// Duty-cycle proxy of every mode's schedule.
    pub duty_cycles: BTreeMap<ModeId, f64>,
    pub angle_limit: f64,
    /// Simulated time covered by the steps, seconds.
    pub duration: f64,
}

struct ModeModels {
    interval: f64,
    /// Per plant: `(A, B, Σ_proc)`.
    plants: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>,
    /// Per loop.
    gains: Vec<FeedbackGain>,
}

struct LoopState {
    plant: usize,
    controller: PredictiveController,
    actuator: ZohActuator,
    controller_mode: ModeId,
    /// Measurement sent in the previous round and whether it arrived.
    last_y: Option<DVector<f64>>,
    /// Input computed in the previous step and whether it arrived.
    in_flight: Option<DVector<f64>>,
    sensor_msg: String,
    control_msg: String,
}

struct PlantState {
    plant: LtiPlant,
    proc_rng: SimRng,
    meas_rng: SimRng,
}

fn build_plants(sc: &Scenario, interval: f64, seed: u64) -> Result<Vec<PlantState>> {
    sc.plants
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let d = cfg.discrete(interval)?;
            let mut plant = LtiPlant::new(d.a, d.b, d.sigma_proc, d.sigma_meas, interval)?;
            if let Some(c) = cfg.constraints {
                plant = plant.with_constraints(c)?;
            }
            if let Some(x0) = &cfg.initial_state {
                plant = plant.with_state(DVector::from_column_slice(x0));
            }
            let s = cfg.noise_stream.unwrap_or(i as u64);
            Ok(PlantState {
                plant,
                proc_rng: stream_rng(seed, PLANT_STREAM_BASE + 2 * s),
                meas_rng: stream_rng(seed, PLANT_STREAM_BASE + 2 * s + 1),
            })
        })
        .collect()
}

fn record_termination(term: &mut Option<TerminationRecord>, step: u64, i: usize, cause: Option<Termination>) {
    if term.is_none() {
        if let Some(cause) = cause {
            *term = Some(TerminationRecord { step, plant: i, cause });
        }
    }
}

/// Step-by-step remote-stabilization simulation.
///
/// Per step `k`: the round of step `k` resolves its delivery flags and mode;
/// the controller updates `x̂(k)` from `y(k−1)` if that arrived and computes
/// `û(k+1)`; the actuator applies `û(k)` if it arrived in the previous round,
/// else holds; the plant is measured and advanced; finally `y(k)` and
/// `û(k+1)` are handed to the round.
pub struct RemoteSim {
    plants: Vec<PlantState>,
    loops: Vec<LoopState>,
    models: BTreeMap<ModeId, ModeModels>,
    net: Network,
    mode_changes: Vec<(u64, ModeId, u32)>,
    k: u64,
    time: f64,
    current_mode: ModeId,
    termination: Option<TerminationRecord>,
    duty_cycles: BTreeMap<ModeId, f64>,
}

impl RemoteSim {
    pub fn new(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let ControllerConfig::Remote { loops } = &sc.controller else {
            return Err(Error::Validation("not a remote-stabilization scenario".into()));
        };
        let seed = sc.run.seed;
        let initial_mode = sc.network.initial_mode.unwrap_or(sc.network.modes[0].id);

        let mut models = BTreeMap::new();
        let mut modes = Vec::new();
        let mut duty_cycles = BTreeMap::new();
        for m in &sc.network.modes {
            let plants = sc
                .plants
                .iter()
                .map(|p| {
                    let d = p.discrete(m.update_interval)?;
                    Ok((d.a, d.b, d.sigma_proc))
                })
                .collect::<Result<Vec<_>>>()?;
            let gains = loops
                .iter()
                .map(|l| {
                    let (a, b, _) = &plants[l.plant];
                    l.design.synthesize(a, b, m.update_interval)
                })
                .collect::<Result<Vec<_>>>()?;
            let mode = Mode::pipelined(m.id, m.update_interval, sc.mode_slots(m));
            duty_cycles.insert(m.id, mode.schedule.duty_cycle(sc.network.slot_duration));
            modes.push(mode);
            models.insert(
                m.id,
                ModeModels {
                    interval: m.update_interval,
                    plants,
                    gains,
                },
            );
        }

        let init = &models[&initial_mode];
        let plants = build_plants(sc, init.interval, seed)?;
        let loop_states = loops
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (a, b, _) = &init.plants[l.plant];
                Ok(LoopState {
                    plant: l.plant,
                    controller: PredictiveController::new(init.gains[i].clone(), a.clone(), b.clone())?,
                    actuator: ZohActuator::new(b.ncols()),
                    controller_mode: initial_mode,
                    last_y: None,
                    in_flight: None,
                    sensor_msg: sensor_message(i),
                    control_msg: control_message(i),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let extra: Vec<NodeId> = (0..loops.len())
            .flat_map(|i| [plant_node(i), controller_node(i)])
            .collect();
        let net = Network::new(
            modes,
            initial_mode,
            &extra,
            sc.network.loss,
            stream_rng(seed, NETWORK_STREAM),
        )?;
        let mut mode_changes: Vec<_> = sc.run.mode_changes.iter().map(|c| (c.step, c.mode, c.rounds)).collect();
        mode_changes.sort_by_key(|c| c.0);
        mode_changes.reverse();
        Ok(RemoteSim {
            plants,
            loops: loop_states,
            models,
            net,
            mode_changes,
            k: 0,
            time: 0.0,
            current_mode: initial_mode,
            termination: None,
            duty_cycles,
        })
    }

    pub fn termination(&self) -> Option<TerminationRecord> {
        self.termination
    }

    pub fn duty_cycles(&self) -> &BTreeMap<ModeId, f64> {
        &self.duty_cycles
    }

    pub fn plant_state(&self, i: usize) -> &DVector<f64> {
        &self.plants[i].plant.x
    }

    /// Advances one step. Returns the step record and the network round.
    pub fn step(&mut self) -> Result<(StepRecord, RoundRecord)> {
        let k = self.k;
        while let Some(&(at, mode, rounds)) = self.mode_changes.last() {
            if at > k {
                break;
            }
            self.mode_changes.pop();
            // A rejected overlapping request is dropped, as a host would.
            self.net.host_request_mode_change(mode, rounds)?;
        }

        let outcome = self.net.run_round();
        if outcome.mode != self.current_mode {
            self.current_mode = outcome.mode;
            let mm = &self.models[&outcome.mode];
            for (i, ps) in self.plants.iter_mut().enumerate() {
                let (a, b, sp) = &mm.plants[i];
                ps.plant.set_dynamics(a.clone(), b.clone(), sp.clone(), mm.interval)?;
            }
        }
        let mode = self.current_mode;
        let interval = self.models[&mode].interval;

        let mut records = vec![None; self.plants.len()];
        for (li, ls) in self.loops.iter_mut().enumerate() {
            let local = outcome.local_modes[&controller_node(li)];
            if local != ls.controller_mode {
                let mm = &self.models[&local];
                let (a, b, _) = &mm.plants[ls.plant];
                ls.controller.set_model(mm.gains[li].clone(), a.clone(), b.clone())?;
                ls.controller_mode = local;
                // After missing a switch the old estimate is stale; start over.
                let resynced = outcome
                    .events
                    .iter()
                    .any(|e| matches!(e, ModeEvent::Resync { node, .. } if *node == controller_node(li)));
                if resynced {
                    ls.controller.reset(None);
                }
            }
            let theta = ls.last_y.is_some();
            let phi = ls.in_flight.is_some();
            ls.controller.predictor_update(ls.last_y.as_ref());
            let u_hat = ls.controller.compute_input();
            let u = ls.actuator.actuator_apply(ls.in_flight.as_ref()).clone();

            let ps = &mut self.plants[ls.plant];
            let y = ps.plant.measure(&mut ps.meas_rng);
            let x = ps.plant.x.clone();
            let st = ps.plant.step(&u, &mut ps.proc_rng);
            record_termination(&mut self.termination, k, ls.plant, st.terminated);

            ls.last_y = outcome
                .delivered(&ls.sensor_msg, controller_node(li))
                .then(|| y.clone());
            ls.in_flight = outcome
                .delivered(&ls.control_msg, plant_node(li))
                .then(|| u_hat.clone());

            records[ls.plant] = Some(PlantRecord {
                x: x.as_slice().to_vec(),
                y: y.as_slice().to_vec(),
                u: st.applied.as_slice().to_vec(),
                u_hat: Some(u_hat.as_slice().to_vec()),
                x_hat: Some(ls.controller.x_hat().as_slice().to_vec()),
                theta,
                phi,
            });
        }
        // Plants without a loop evolve open loop.
        for (i, r) in records.iter_mut().enumerate() {
            if r.is_none() {
                let ps = &mut self.plants[i];
                let y = ps.plant.measure(&mut ps.meas_rng);
                let x = ps.plant.x.clone();
                let u = DVector::zeros(ps.plant.input_dim());
                let st = ps.plant.step(&u, &mut ps.proc_rng);
                record_termination(&mut self.termination, k, i, st.terminated);
                *r = Some(PlantRecord {
                    x: x.as_slice().to_vec(),
                    y: y.as_slice().to_vec(),
                    u: st.applied.as_slice().to_vec(),
                    u_hat: None,
                    x_hat: None,
                    theta: false,
                    phi: false,
                });
            }
        }

        let rec = StepRecord {
            k,
            time: self.time,
            mode,
            plants: records.into_iter().map(Option::unwrap).collect(),
        };
        self.time += interval;
        self.k += 1;
        Ok((rec, RoundRecord::from_outcome(outcome, k)))
    }
}

/// Runs a scenario to its horizon or first termination.
pub fn run_scenario(sc: &Scenario) -> Result<Trace> {
    if sc.is_sync() {
        return run_sync_scenario(sc);
    }
    let mut sim = RemoteSim::new(sc)?;
    let mut steps = Vec::with_capacity(sc.run.horizon as usize);
    let mut rounds = Vec::with_capacity(sc.run.horizon as usize);
    for _ in 0..sc.run.horizon {
        let (s, r) = sim.step()?;
        steps.push(s);
        rounds.push(r);
        if sim.termination.is_some() {
            break;
        }
    }
    Ok(Trace {
        steps,
        rounds,
        termination: sim.termination,
        duty_cycles: sim.duty_cycles,
        angle_limit: sc.run.angle_limit,
        duration: sim.time,
    })
}

/// Step-by-step multi-agent synchronization.
///
/// Every agent runs `u_i = F_ii y_i + Σ_{j≠i} F_ij ŷ_j` each local step, where
/// `ŷ_j` is the last state of agent `j` received over the network, held
/// between rounds. A round runs every `network_every` local steps; what it
/// carries becomes usable from the next round's step onwards.
pub struct SyncSim {
    plants: Vec<PlantState>,
    gains: SyncGains,
    net: Network,
    network_every: u64,
    interval: f64,
    hold: Option<super::scenario::HoldScript>,
    /// `remote[i][j]`: agent `i`'s copy of agent `j`'s state.
    remote: Vec<Vec<DVector<f64>>>,
    /// Received in the last round, applied at the next round step.
    pending: Vec<(usize, usize, DVector<f64>)>,
    k: u64,
    termination: Option<TerminationRecord>,
    duty_cycles: BTreeMap<ModeId, f64>,
}

pub const SYNC_MODE: ModeId = 1;

impl SyncSim {
    pub fn new(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let ControllerConfig::Sync {
            local_interval,
            network_every,
            hold,
            ..
        } = &sc.controller
        else {
            return Err(Error::Validation("not a sync scenario".into()));
        };
        let gains = sc.sync_gains()?;
        let plants = build_plants(sc, *local_interval, sc.run.seed)?;
        let n_agents = plants.len();
        let slots: Vec<Slot> = (0..n_agents)
            .map(|i| Slot {
                message: state_message(i),
                source: plant_node(i),
                destinations: (0..n_agents).filter(|j| *j != i).map(plant_node).collect(),
                kind: SlotKind::State,
            })
            .collect();
        let period = local_interval * *network_every as f64;
        let mode = Mode::pipelined(SYNC_MODE, period, slots);
        let duty_cycles = BTreeMap::from([(SYNC_MODE, mode.schedule.duty_cycle(sc.network.slot_duration))]);
        let net = Network::new(
            vec![mode],
            SYNC_MODE,
            &[],
            sc.network.loss,
            stream_rng(sc.run.seed, NETWORK_STREAM),
        )?;
        let remote = (0..n_agents)
            .map(|_| plants.iter().map(|p| DVector::zeros(p.plant.state_dim())).collect())
            .collect();
        Ok(SyncSim {
            plants,
            gains,
            net,
            network_every: *network_every as u64,
            interval: *local_interval,
            hold: hold.clone(),
            remote,
            pending: Vec::new(),
            k: 0,
            termination: None,
            duty_cycles,
        })
    }

    pub fn termination(&self) -> Option<TerminationRecord> {
        self.termination
    }

    pub fn step(&mut self) -> Result<(StepRecord, Option<RoundRecord>)> {
        let k = self.k;
        let n_agents = self.plants.len();
        let network_step = k.is_multiple_of(self.network_every);
        if network_step {
            for (i, j, y) in self.pending.drain(..) {
                self.remote[i][j] = y;
            }
        }
        let held = self
            .hold
            .as_ref()
            .filter(|h| k >= h.start && k < h.end)
            .map(|h| (h.agent, h.position));

        let mut ys = Vec::with_capacity(n_agents);
        for (i, ps) in self.plants.iter_mut().enumerate() {
            if let Some((agent, pos)) = held {
                if agent == i {
                    // Held at rest: cart pinned, pole upright.
                    ps.plant.x.fill(0.0);
                    ps.plant.x[POSITION] = pos;
                }
            }
            ys.push(ps.plant.measure(&mut ps.meas_rng));
        }

        let mut records = Vec::with_capacity(n_agents);
        for (i, y) in ys.iter().enumerate() {
            let mut u = self.gains.block(i, i) * y;
            for j in (0..n_agents).filter(|j| *j != i) {
                u += self.gains.block(i, j) * &self.remote[i][j];
            }
            let ps = &mut self.plants[i];
            let x = ps.plant.x.clone();
            let st = ps.plant.step(&u, &mut ps.proc_rng);
            if held.is_none_or(|(agent, _)| agent != i) {
                record_termination(&mut self.termination, k, i, st.terminated);
            }
            records.push(PlantRecord {
                x: x.as_slice().to_vec(),
                y: ys[i].as_slice().to_vec(),
                u: st.applied.as_slice().to_vec(),
                u_hat: None,
                x_hat: None,
                theta: network_step,
                phi: true,
            });
        }

        let round = if network_step {
            let outcome = self.net.run_round();
            for i in 0..n_agents {
                for j in (0..n_agents).filter(|j| *j != i) {
                    if outcome.delivered(&state_message(j), plant_node(i)) {
                        self.pending.push((i, j, ys[j].clone()));
                    }
                }
            }
            Some(RoundRecord::from_outcome(outcome, k))
        } else {
            None
        };
        let rec = StepRecord {
            k,
            time: k as f64 * self.interval,
            mode: SYNC_MODE,
            plants: records,
        };
        self.k += 1;
        Ok((rec, round))
    }
}

pub fn run_sync_scenario(sc: &Scenario) -> Result<Trace> {
    let mut sim = SyncSim::new(sc)?;
    let mut steps = Vec::with_capacity(sc.run.horizon as usize);
    let mut rounds = Vec::new();
    for _ in 0..sc.run.horizon {
        let (s, r) = sim.step()?;
        steps.push(s);
        rounds.extend(r);
        if sim.termination.is_some() {
            break;
        }
    }
    Ok(Trace {
        steps,
        rounds,
        termination: sim.termination,
        duty_cycles: sim.duty_cycles,
        angle_limit: sc.run.angle_limit,
        duration: sim.k as f64 * sim.interval,
    })
}
