//! Round-based communication over static per-mode schedules with i.i.d. slot
//! losses and optional injected bursts. The countdown mode-change protocol and
//! the worst-case jitter bound live here too.
//!
//! A slot is simulated as an atomic per-destination Bernoulli trial; flood
//! timing and hop counts are not modeled.

mod jitter;
mod protocol;

pub use jitter::{jitter_bound, JitterParams};
pub use protocol::{
    check_in_order_delivery, BurstConfig, Delivery, LossConfig, Mode, ModeChangeState, ModeEvent, ModeId, Network,
    NodeId, NodeState, PendingChange, RoundOutcome, RoundSchedule, Slot, SlotKind,
};
