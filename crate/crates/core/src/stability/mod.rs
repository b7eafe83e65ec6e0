//! Mean-square stability of the lossy closed loop and its noise steady state.
//! Average-dwell-time certificates cover switching between modes.

mod augmented;
mod dwell;
mod operator;

pub use augmented::{build_augmented, AugmentedClosedLoop};
pub use dwell::{
    find_dwell_violation, min_avg_dwell_time, tau_a_star, verify_switching_signal, DwellTimeCertificate,
    DwellViolation, SwitchedSystem, SwitchingSignal,
};
pub use operator::{
    check_mss, lyapunov_certificate, second_moment_operator, steady_state_correlation, LyapunovCertificate,
    MssCertificate, SecondMomentOperator, Verdict, DEFAULT_TOLERANCE,
};
