use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SimRng;

pub type NodeId = u32;
pub type ModeId = u32;

/// Which loss process governs a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    /// Sensor → controller, delivered with probability `µ_θ`.
    Sensor,
    /// Controller → actuator, delivered with probability `µ_φ`.
    Control,
    /// Agent state broadcast for synchronization, delivered with `µ_θ`.
    State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slot {
    pub message: String,
    pub source: NodeId,
    pub destinations: Vec<NodeId>,
    pub kind: SlotKind,
}

/// Static communication schedule of one mode: a beacon followed by data slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub period: f64,
    pub slots: Vec<Slot>,
}

impl RoundSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::Validation(format!(
                "round period must be > 0, got {}",
                self.period
            )));
        }
        let mut seen = BTreeSet::new();
        for s in &self.slots {
            if !seen.insert(s.message.as_str()) {
                return Err(Error::Validation(format!("message `{}` scheduled twice", s.message)));
            }
            if s.destinations.is_empty() {
                return Err(Error::Validation(format!("message `{}` has no destination", s.message)));
            }
        }
        Ok(())
    }

    /// Radio-on fraction: beacon plus data slots over the round period.
    pub fn duty_cycle(&self, slot_duration: f64) -> f64 {
        ((self.slots.len() + 1) as f64 * slot_duration / self.period).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub id: ModeId,
    pub schedule: RoundSchedule,
    pub update_interval: f64,
    pub end_to_end_delay: f64,
}

impl Mode {
    /// Pipelined remote-control mode: one round per update interval, `T_D = 2 T_U`.
    pub fn pipelined(id: ModeId, update_interval: f64, slots: Vec<Slot>) -> Self {
        Mode {
            id,
            schedule: RoundSchedule {
                period: update_interval,
                slots,
            },
            update_interval,
            end_to_end_delay: 2.0 * update_interval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstConfig {
    /// Consecutive rounds lost per burst.
    pub length: u32,
    /// Seconds between burst starts; the first burst starts after one interval.
    pub interval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub mu_theta: f64,
    pub mu_phi: f64,
    /// Per-node, per-round probability of missing the beacon.
    #[serde(default = "default_beacon_loss")]
    pub beacon_loss: f64,
    #[serde(default)]
    pub burst: Option<BurstConfig>,
}

fn default_beacon_loss() -> f64 {
    0.001
}

impl LossConfig {
    pub fn perfect() -> Self {
        LossConfig {
            mu_theta: 1.0,
            mu_phi: 1.0,
            beacon_loss: 0.0,
            burst: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("mu_theta", self.mu_theta),
            ("mu_phi", self.mu_phi),
            ("beacon_loss", self.beacon_loss),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if let Some(b) = self.burst {
            if !(b.interval > 0.0) {
                return Err(Error::Validation("burst interval must be > 0".into()));
            }
        }
        Ok(())
    }

    fn probability(&self, kind: SlotKind) -> f64 {
        match kind {
            SlotKind::Sensor | SlotKind::State => self.mu_theta,
            SlotKind::Control => self.mu_phi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingChange {
    pub next_mode: ModeId,
    /// Counter carried by the next beacon; the switch fires when it is 0.
    pub rounds_remaining: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeState {
    pub mode: ModeId,
    /// Upcoming switch this node has heard about.
    pub informed: Option<ModeId>,
    /// Resynchronized this round; participates from the next one.
    pub rejoining: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeChangeState {
    pub current_mode: ModeId,
    pub pending: Option<PendingChange>,
    pub nodes: BTreeMap<NodeId, NodeState>,
}

impl ModeChangeState {
    pub fn all_agree(&self) -> bool {
        self.nodes.values().all(|n| n.mode == self.current_mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum ModeEvent {
    /// Informed nodes adopted `to`; nodes in `lagging` missed every request.
    SwitchNow {
        from: ModeId,
        to: ModeId,
        switched: Vec<NodeId>,
        lagging: Vec<NodeId>,
    },
    /// Queued messages of the old mode discarded.
    Flush,
    /// This round carries no data slots.
    DeadRound,
    /// A node that had fallen out of step adopted the current mode.
    Resync { node: NodeId, mode: ModeId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub slot: usize,
    pub message: String,
    pub source: NodeId,
    pub destination: NodeId,
    pub kind: SlotKind,
    /// Round in which the message was generated; its sequence number.
    pub generation: u64,
    pub delivered: bool,
    pub burst: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: u64,
    pub mode: ModeId,
    pub dead: bool,
    pub burst: bool,
    pub beacon_received: BTreeMap<NodeId, bool>,
    pub participating: BTreeSet<NodeId>,
    pub deliveries: Vec<Delivery>,
    pub events: Vec<ModeEvent>,
    /// Local mode of every node after the round.
    pub local_modes: BTreeMap<NodeId, ModeId>,
}

impl RoundOutcome {
    pub fn delivered(&self, message: &str, destination: NodeId) -> bool {
        self.deliveries
            .iter()
            .any(|d| d.delivered && d.destination == destination && d.message == message)
    }
}

/// Round-based flooding network with beacons, static per-mode schedules, i.i.d.
/// slot losses and the countdown mode-change protocol.
#[derive(Debug, Clone)]
pub struct Network {
    modes: BTreeMap<ModeId, Mode>,
    loss: LossConfig,
    state: ModeChangeState,
    round: u64,
    time: f64,
    next_burst_at: Option<f64>,
    burst_remaining: u32,
    rng: SimRng,
}

impl Network {
    /// `extra_nodes` are nodes that take part in beacon reception without
    /// appearing in any schedule.
    pub fn new(
        modes: Vec<Mode>,
        initial_mode: ModeId,
        extra_nodes: &[NodeId],
        loss: LossConfig,
        rng: SimRng,
    ) -> Result<Self> {
        loss.validate()?;
        let mut by_id = BTreeMap::new();
        let mut nodes: BTreeSet<NodeId> = extra_nodes.iter().copied().collect();
        for m in modes {
            m.schedule.validate()?;
            for s in &m.schedule.slots {
                nodes.insert(s.source);
                nodes.extend(s.destinations.iter().copied());
            }
            if by_id.insert(m.id, m).is_some() {
                return Err(Error::Validation("duplicate mode id".into()));
            }
        }
        if !by_id.contains_key(&initial_mode) {
            return Err(Error::Validation(format!("unknown initial mode {initial_mode}")));
        }
        let state = ModeChangeState {
            current_mode: initial_mode,
            pending: None,
            nodes: nodes
                .into_iter()
                .map(|n| {
                    (
                        n,
                        NodeState {
                            mode: initial_mode,
                            informed: None,
                            rejoining: false,
                        },
                    )
                })
                .collect(),
        };
        Ok(Network {
            next_burst_at: loss.burst.map(|b| b.interval),
            modes: by_id,
            loss,
            state,
            round: 0,
            time: 0.0,
            burst_remaining: 0,
            rng,
        })
    }

    pub fn state(&self) -> &ModeChangeState {
        &self.state
    }

    pub fn current_mode(&self) -> &Mode {
        &self.modes[&self.state.current_mode]
    }

    pub fn mode(&self, id: ModeId) -> Option<&Mode> {
        self.modes.get(&id)
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn loss(&self) -> &LossConfig {
        &self.loss
    }

    /// Starts the countdown towards `next_mode`; the switch fires `rounds`
    /// rounds after the first beacon carrying the request. Returns `false` when
    /// a change is already pending or `next_mode` is already active.
    pub fn host_request_mode_change(&mut self, next_mode: ModeId, rounds: u32) -> Result<bool> {
        if !self.modes.contains_key(&next_mode) {
            return Err(Error::Validation(format!("unknown mode {next_mode}")));
        }
        if rounds == 0 {
            return Err(Error::Validation(
                "mode change needs at least one announcing round".into(),
            ));
        }
        if self.state.pending.is_some() || next_mode == self.state.current_mode {
            return Ok(false);
        }
        self.state.pending = Some(PendingChange {
            next_mode,
            rounds_remaining: rounds,
        });
        Ok(true)
    }

    /// Fires a pending change whose counter reached zero. Called at the start
    /// of every round by [`Network::run_round`].
    pub fn advance_mode_change(&mut self) -> Vec<ModeEvent> {
        let Some(p) = self.state.pending else {
            return Vec::new();
        };
        if p.rounds_remaining > 0 {
            return Vec::new();
        }
        let from = self.state.current_mode;
        self.state.current_mode = p.next_mode;
        self.state.pending = None;
        let mut switched = Vec::new();
        let mut lagging = Vec::new();
        for (id, node) in self.state.nodes.iter_mut() {
            if node.informed == Some(p.next_mode) {
                node.mode = p.next_mode;
                switched.push(*id);
            } else {
                lagging.push(*id);
            }
            node.informed = None;
        }
        vec![
            ModeEvent::SwitchNow {
                from,
                to: p.next_mode,
                switched,
                lagging,
            },
            ModeEvent::Flush,
            ModeEvent::DeadRound,
        ]
    }

    fn burst_active(&mut self) -> bool {
        let Some(b) = self.loss.burst else {
            return false;
        };
        if let Some(at) = self.next_burst_at {
            // Half a round of slack absorbs accumulated floating-point error.
            if self.time + 0.5 * self.current_mode().schedule.period >= at {
                self.burst_remaining = b.length;
                self.next_burst_at = Some(at + b.interval);
            }
        }
        if self.burst_remaining > 0 {
            self.burst_remaining -= 1;
            true
        } else {
            false
        }
    }

    /// Executes one communication round.
    pub fn run_round(&mut self) -> RoundOutcome {
        let mut events = self.advance_mode_change();
        let dead = events.iter().any(|e| matches!(e, ModeEvent::DeadRound));
        let current = self.state.current_mode;
        let pending = self.state.pending;
        let p_miss = self.loss.beacon_loss;

        let mut beacon_received = BTreeMap::new();
        let mut participating = BTreeSet::new();
        for (id, node) in self.state.nodes.iter_mut() {
            let got = self.rng.random::<f64>() >= p_miss;
            beacon_received.insert(*id, got);
            node.rejoining = false;
            if !got {
                continue;
            }
            if node.mode != current {
                node.mode = current;
                node.rejoining = true;
                events.push(ModeEvent::Resync {
                    node: *id,
                    mode: current,
                });
            }
            if let Some(pc) = pending {
                node.informed = Some(pc.next_mode);
            }
            if !node.rejoining {
                participating.insert(*id);
            }
        }

        let burst = self.burst_active();
        let mut deliveries = Vec::new();
        if !dead {
            let slots = self.modes[&current].schedule.slots.clone();
            for (si, slot) in slots.iter().enumerate() {
                let p = self.loss.probability(slot.kind);
                for &dest in &slot.destinations {
                    let draw = self.rng.random::<f64>();
                    let ok =
                        !burst && participating.contains(&slot.source) && participating.contains(&dest) && draw < p;
                    deliveries.push(Delivery {
                        slot: si,
                        message: slot.message.clone(),
                        source: slot.source,
                        destination: dest,
                        kind: slot.kind,
                        generation: self.round,
                        delivered: ok,
                        burst,
                    });
                }
            }
        }

        let outcome = RoundOutcome {
            round: self.round,
            mode: current,
            dead,
            burst,
            beacon_received,
            participating,
            deliveries,
            events,
            local_modes: self.state.nodes.iter().map(|(id, n)| (*id, n.mode)).collect(),
        };

        if let Some(pc) = self.state.pending.as_mut() {
            pc.rounds_remaining -= 1;
        }
        self.time += self.modes[&current].schedule.period;
        self.round += 1;
        outcome
    }
}

/// Checks that no `(message, destination)` pair is delivered twice for the
/// same generation or out of generation order. Returns the first offender.
pub fn check_in_order_delivery<'a>(
    deliveries: impl IntoIterator<Item = &'a Delivery>,
) -> std::result::Result<(), String> {
    let mut last: BTreeMap<(&str, NodeId), u64> = BTreeMap::new();
    for d in deliveries.into_iter().filter(|d| d.delivered) {
        let key = (d.message.as_str(), d.destination);
        if let Some(prev) = last.get(&key) {
            if d.generation <= *prev {
                return Err(format!(
                    "message `{}` to node {} delivered with generation {} after {}",
                    d.message, d.destination, d.generation, prev
                ));
            }
        }
        last.insert(key, d.generation);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn loop_slots() -> Vec<Slot> {
        vec![
            Slot {
                message: "y".into(),
                source: 1,
                destinations: vec![2],
                kind: SlotKind::Sensor,
            },
            Slot {
                message: "u".into(),
                source: 2,
                destinations: vec![1],
                kind: SlotKind::Control,
            },
        ]
    }

    fn two_mode_net(loss: LossConfig, seed: u64) -> Network {
        Network::new(
            vec![
                Mode::pipelined(1, 0.02, loop_slots()),
                Mode::pipelined(2, 0.04, loop_slots()),
            ],
            1,
            &[3, 4, 5],
            loss,
            SimRng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn perfect_links_always_deliver() {
        let mut net = two_mode_net(LossConfig::perfect(), 0);
        for _ in 0..1000 {
            let r = net.run_round();
            assert!(r.deliveries.iter().all(|d| d.delivered));
            assert_eq!(r.deliveries.len(), 2);
        }
    }

    #[test]
    fn sensor_delivery_rate() {
        let loss = LossConfig {
            mu_theta: 0.5,
            ..LossConfig::perfect()
        };
        let mut net = two_mode_net(loss, 42);
        let rounds = 100_000;
        let ok = (0..rounds).filter(|_| net.run_round().delivered("y", 2)).count();
        let rate = ok as f64 / rounds as f64;
        assert!((rate - 0.5).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn bursts_drop_exact_windows() {
        let loss = LossConfig {
            burst: Some(BurstConfig {
                length: 40,
                interval: 10.0,
            }),
            ..LossConfig::perfect()
        };
        let mut net = two_mode_net(loss, 1);
        let trace: Vec<bool> = (0..2000).map(|_| net.run_round().delivered("u", 1)).collect();
        let mut runs = Vec::new();
        let mut i = 0;
        while i < trace.len() {
            if !trace[i] {
                let start = i;
                while i < trace.len() && !trace[i] {
                    i += 1;
                }
                runs.push((start, i - start));
            } else {
                i += 1;
            }
        }
        assert_eq!(runs, vec![(500, 40), (1000, 40), (1500, 40)]);
    }

    #[test]
    fn mode_change_fires_after_r_rounds() {
        let mut net = two_mode_net(LossConfig::perfect(), 3);
        net.run_round();
        assert!(net.host_request_mode_change(2, 5).unwrap());
        assert!(
            !net.host_request_mode_change(1, 2).unwrap(),
            "overlapping request accepted"
        );
        for _ in 0..5 {
            let r = net.run_round();
            assert_eq!(r.mode, 1);
            assert!(!r.dead);
        }
        let r = net.run_round();
        assert_eq!(r.mode, 2);
        assert!(r.dead);
        assert!(r.deliveries.is_empty());
        assert!(r.local_modes.values().all(|m| *m == 2));
        let r = net.run_round();
        assert!(!r.dead && r.deliveries.iter().all(|d| d.delivered));
    }

    #[test]
    fn unknown_mode_rejected() {
        let mut net = two_mode_net(LossConfig::perfect(), 3);
        assert!(net.host_request_mode_change(9, 3).is_err());
        assert!(net.host_request_mode_change(2, 0).is_err());
        assert!(net.advance_mode_change().is_empty());
    }

    #[test]
    fn pending_with_counter_one_switches_next_round() {
        let mut net = two_mode_net(LossConfig::perfect(), 3);
        net.host_request_mode_change(2, 1).unwrap();
        net.run_round();
        let r = net.run_round();
        assert_eq!(r.mode, 2);
        assert!(r.dead && r.deliveries.is_empty());
    }

    #[test]
    fn uninformed_node_falls_back_and_rejoins() {
        let mut net = two_mode_net(LossConfig::perfect(), 3);
        net.host_request_mode_change(2, 2).unwrap();
        // Node 1 misses both announcing beacons.
        for _ in 0..2 {
            net.run_round();
            net.state.nodes.get_mut(&1).unwrap().informed = None;
        }
        net.loss.beacon_loss = 1.0;
        let r = net.run_round();
        assert!(matches!(&r.events[0], ModeEvent::SwitchNow { lagging, .. } if lagging == &vec![1]));
        assert_eq!(r.local_modes[&1], 1);
        assert!(!net.state.all_agree());

        // Still out of step: it neither sends nor receives.
        let r = net.run_round();
        assert!(r.deliveries.iter().all(|d| !d.delivered));

        net.loss.beacon_loss = 0.0;
        let r = net.run_round();
        assert!(r.events.contains(&ModeEvent::Resync { node: 1, mode: 2 }));
        assert!(!r.participating.contains(&1));
        assert!(!r.delivered("y", 2) && !r.delivered("u", 1));
        let r = net.run_round();
        assert!(r.participating.contains(&1));
        assert!(r.delivered("y", 2) && r.delivered("u", 1));
    }

    #[test]
    fn deliveries_are_in_order() {
        let loss = LossConfig {
            mu_theta: 0.7,
            mu_phi: 0.6,
            beacon_loss: 0.05,
            burst: None,
        };
        let mut net = two_mode_net(loss, 9);
        let mut all = Vec::new();
        for k in 0..5000 {
            if k % 100 == 0 {
                let next = if net.state().current_mode == 1 { 2 } else { 1 };
                let _ = net.host_request_mode_change(next, 3);
            }
            all.extend(net.run_round().deliveries);
        }
        assert!(check_in_order_delivery(&all).is_ok());
        let mut dup = all.iter().find(|d| d.delivered).unwrap().clone();
        dup.generation = 0;
        all.push(dup);
        assert!(check_in_order_delivery(&all).is_err());
    }

    #[test]
    fn duplicate_message_ids_rejected() {
        let mut slots = loop_slots();
        slots.push(slots[0].clone());
        let sched = RoundSchedule { period: 0.02, slots };
        assert!(sched.validate().is_err());
    }

    #[test]
    fn duty_cycle_proxy() {
        let m = Mode::pipelined(1, 0.02, loop_slots());
        assert!((m.schedule.duty_cycle(0.002) - 0.3).abs() < 1e-12);
    }
}
