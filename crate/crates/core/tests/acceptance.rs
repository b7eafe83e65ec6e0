//! Acceptance criteria 1–9, one PASS/FAIL line each.
//!
//! Exits 0 after reporting so that the rest of the test suite still runs; set
//! `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use clap::Parser;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rayon::prelude::*;
use wcps::cli::{self, Cli, SwitchScript};
use wcps::model::{SimRng, ANGLE};
use wcps::net::{
    check_in_order_delivery, jitter_bound, JitterParams, LossConfig, Mode, ModeEvent, Network, Slot, SlotKind,
};
use wcps::sim::{
    compute_metrics, derive_seed, run_batch, run_scenario, ControllerConfig, ModeChangeScript, NoiseConfig, RemoteSim,
    Scenario, Trace,
};
use wcps::stability::{
    lyapunov_certificate, second_moment_operator, steady_state_correlation, tau_a_star, SecondMomentOperator,
};

type Criterion = (u32, &'static str, fn() -> Outcome);
type Part = (&'static str, fn() -> (bool, String));

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "jitter bound", jitter),
        (2, "spectral radius vs Monte Carlo second moment", monte_carlo_agreement),
        (3, "LMI certificate vs spectral radius", lmi_equivalence),
        (4, "steady-state correlation", steady_state),
        (5, "minimum average dwell time", dwell_formula),
        (6, "mode-change protocol", mode_change),
        (7, "perfect-communication reduction", perfect_links),
        (8, "qualitative cart-pole experiments", experiments),
        (9, "in-order delivery across shipped scenarios", in_order_delivery),
    ];
    let mut failed = 0;
    for (n, title, f) in criteria {
        let start = Instant::now();
        let o = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| outcome(false, "panicked"));
        failed += usize::from(!o.pass);
        println!(
            "{} criterion {n}: {title}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/9 criteria pass", 9 - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn jitter() -> Outcome {
    let j = jitter_bound(&JitterParams::default()).unwrap();
    let cli = Cli::try_parse_from(["wcps", "jitter"]).unwrap();
    let mut out = Vec::new();
    cli::run(&cli, &mut out).unwrap();
    let printed = String::from_utf8(out).unwrap();
    let ok = (j - 50.04).abs() <= 0.1 && printed.trim() == "jitter bound: 50.04 us";
    outcome(ok, format!("{j:.4} us, cli prints `{}`", printed.trim()))
}

fn monte_carlo_agreement() -> Outcome {
    let results: Vec<(f64, f64)> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SimRng::seed_from_u64(derive_seed(2, i));
            let acl = common::random_loop(&mut rng, 1 + (i as usize % 2));
            let rho = second_moment_operator(&acl).spectral_radius().unwrap();
            let mc = common::monte_carlo_moment_rate(&acl, 200, 10_000, 1_000, &mut rng);
            (rho, mc)
        })
        .collect();
    let decided: Vec<_> = results.iter().filter(|(rho, _)| (rho - 1.0).abs() > 0.05).collect();
    let agree = decided.iter().filter(|(rho, mc)| (*rho < 1.0) == (*mc < 1.0)).count();
    let stable = decided.iter().filter(|(rho, _)| *rho < 1.0).count();
    outcome(
        agree == decided.len() && !decided.is_empty(),
        format!(
            "{agree}/{} non-borderline instances agree ({stable} stable, {} unstable)",
            decided.len(),
            decided.len() - stable
        ),
    )
}

fn lmi_equivalence() -> Outcome {
    let mut rng = SimRng::seed_from_u64(3);
    let (mut agree, mut total) = (0, 0);
    for i in 0..200 {
        let acl = common::random_loop(&mut rng, 1 + i % 2);
        let smo = second_moment_operator(&acl);
        let rho = smo.spectral_radius().unwrap();
        if (rho - 1.0).abs() <= 0.01 {
            continue;
        }
        total += 1;
        agree += usize::from(lyapunov_certificate(&acl, &smo).is_some() == (rho < 1.0));
    }
    outcome(
        agree == total,
        format!("{agree}/{total} non-borderline instances agree"),
    )
}

fn steady_state() -> Outcome {
    let smo =
        SecondMomentOperator::from_parts(DMatrix::from_element(1, 1, 0.25), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let scalar = steady_state_correlation(&smo).unwrap()[(0, 0)];
    let scalar_ok = (scalar - 4.0 / 3.0).abs() <= 1e-10;

    let mut sc = common::scenario("update_interval_40ms.json");
    sc.plants[0].constraints = None;
    sc.network.loss = LossConfig {
        mu_theta: 0.9,
        mu_phi: 0.9,
        beacon_loss: 0.0,
        burst: None,
    };
    let steps = 1_000_000;
    sc.run.horizon = steps;
    let acl = sc.augmented_loop(0, &sc.network.modes[0]).unwrap();
    let w = steady_state_correlation(&second_moment_operator(&acl)).unwrap();
    let w_plant = w.view((0, 0), (4, 4)).into_owned();

    let mut sim = RemoteSim::new(&sc).unwrap();
    let burn_in = 1_000;
    let mut acc = DMatrix::<f64>::zeros(4, 4);
    for k in 0..steps {
        let (rec, _) = sim.step().unwrap();
        if k >= burn_in {
            let x = DVector::from_column_slice(&rec.plants[0].x);
            acc += &x * x.transpose();
        }
    }
    let emp = acc / (steps - burn_in) as f64;
    let rel = (&emp - &w_plant).norm() / w_plant.norm();
    outcome(
        scalar_ok && rel <= 0.1,
        format!("scalar {scalar:.12}; cart-pole relative Frobenius error {rel:.4} over {steps} steps"),
    )
}

fn dwell_formula() -> Outcome {
    let (a, b) = (tau_a_star(0.05, 2.0), tau_a_star(0.05, 1.0));
    outcome(a == 14 && b == 1, format!("tau(0.05, 2) = {a}, tau(0.05, 1) = {b}"))
}

fn two_mode_network(beacon_loss: f64, seed: u64) -> Network {
    let slots = vec![
        Slot {
            message: "y".into(),
            source: 1,
            destinations: vec![2, 3],
            kind: SlotKind::Sensor,
        },
        Slot {
            message: "u".into(),
            source: 2,
            destinations: vec![1, 4],
            kind: SlotKind::Control,
        },
    ];
    let loss = LossConfig {
        mu_theta: 0.9,
        mu_phi: 0.9,
        beacon_loss,
        burst: None,
    };
    Network::new(
        vec![Mode::pipelined(1, 0.02, slots.clone()), Mode::pipelined(2, 0.04, slots)],
        1,
        &[],
        loss,
        SimRng::seed_from_u64(seed),
    )
    .unwrap()
}

fn mode_change() -> Outcome {
    let changes = 100_000;
    let mut net = two_mode_network(0.1, 6);
    let (mut switched, mut total) = (0u64, 0u64);
    for c in 0..changes {
        assert!(net.host_request_mode_change(if c % 2 == 0 { 2 } else { 1 }, 3).unwrap());
        loop {
            let o = net.run_round();
            if let Some(ModeEvent::SwitchNow {
                switched: s, lagging, ..
            }) = o.events.iter().find(|e| matches!(e, ModeEvent::SwitchNow { .. }))
            {
                switched += s.len() as u64;
                total += (s.len() + lagging.len()) as u64;
                break;
            }
        }
    }
    let p_hat = switched as f64 / total as f64;
    let in_ci = common::within_binomial_ci99(switched, total, 0.999);

    let mut net = two_mode_network(0.0, 7);
    let mut agree = true;
    for round in 0..20_000u64 {
        if round % 7 == 0 {
            let target = if net.state().current_mode == 1 { 2 } else { 1 };
            net.host_request_mode_change(target, 3).unwrap();
        }
        net.run_round();
        agree &= net.state().all_agree();
    }
    outcome(
        in_ci && agree,
        format!(
            "switch probability {p_hat:.5} over {total} node-changes (expected 0.999); agreement with p = 0: {agree}"
        ),
    )
}

fn perfect_links() -> Outcome {
    let mut sc = common::scenario("update_interval_40ms.json");
    sc.plants[0].noise = NoiseConfig::default();
    sc.plants[0].constraints = None;
    sc.plants[0].initial_state = Some(vec![0.05, 0.0, 0.02, 0.0]);
    sc.network.loss = LossConfig::perfect();
    sc.run.horizon = 1000;
    let t = sc.network.modes[0].update_interval;
    let d = sc.plants[0].discrete(t).unwrap();
    let f = sc.loops()[0].design.synthesize(&d.a, &d.b, t).unwrap();
    let tr = run_scenario(&sc).unwrap();
    let worst = tr.steps[2..]
        .iter()
        .map(|s| {
            let fx = (f.matrix() * DVector::from_column_slice(&s.plants[0].x))[0];
            (s.plants[0].u[0] - fx).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        tr.steps.len() == 1000 && worst <= 1e-10,
        format!("max |u - Fx| = {worst:.2e} over steps 2..1000"),
    )
}

fn traces(sc: &Scenario, trials: u64) -> Vec<Trace> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut s = sc.clone();
            s.run.seed = derive_seed(sc.run.seed, t);
            run_scenario(&s).unwrap()
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn experiments() -> Outcome {
    let parts: [Part; 6] = [
        ("a", stabilization_45ms),
        ("b", traveled_distance_trend),
        ("c", high_loss),
        ("d", burst_recovery),
        ("e", synchronization),
        ("f", mode_switching),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, f) in parts {
        let (ok, d) = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| (false, "panicked".into()));
        pass &= ok;
        details.push(format!("({name}) {} {d}", if ok { "ok" } else { "FAILED" }));
    }
    outcome(pass, details.join("; "))
}

fn stabilization_45ms() -> (bool, String) {
    let sc = common::scenario("stabilization_45ms.json");
    let tr = run_scenario(&sc).unwrap();
    let m = compute_metrics(&tr);
    let max_s = m.plants.iter().map(|p| p.position.max_abs).fold(0.0, f64::max);
    let max_demand = tr
        .steps
        .iter()
        .flat_map(|s| s.plants.iter().filter_map(|p| p.u_hat.as_ref().map(|u| u[0].abs())))
        .fold(0.0, f64::max);
    let ok = m.success && m.duration >= 30.0 && max_s <= 0.25 && max_demand <= 10.0;
    (
        ok,
        format!(
            "{:.1} s, max |s| {:.3} m, max |u| demanded {max_demand:.2} V over {} loops",
            m.duration,
            max_s,
            m.plants.len()
        ),
    )
}

fn traveled_distance_trend() -> (bool, String) {
    let medians: Vec<f64> = [20, 30, 40, 50]
        .iter()
        .map(|t| {
            let sc = common::scenario(&format!("update_interval_{t}ms.json"));
            median(
                run_batch(&sc, 50)
                    .unwrap()
                    .iter()
                    .map(|m| m.plants[0].traveled_distance)
                    .collect(),
            )
        })
        .collect();
    let ok = medians.windows(2).all(|w| w[1] >= w[0]);
    (ok, format!("medians {:.3?} m at 20/30/40/50 ms", medians))
}

fn high_loss() -> (bool, String) {
    let successes = |name: &str| {
        run_batch(&common::scenario(name), 50)
            .unwrap()
            .iter()
            .filter(|m| m.success)
            .count()
    };
    let fast = successes("loss75_20ms.json");
    let slow = successes("loss75_50ms.json");
    (
        fast >= 45 && 50 - slow >= 45,
        format!(
            "75% loss: {fast}/50 succeed at 20 ms (need >= 45), {}/50 fail at 50 ms (need >= 45)",
            50 - slow
        ),
    )
}

/// Burst windows as `[first, end)` step ranges.
fn burst_windows(tr: &Trace) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for r in &tr.rounds {
        match (r.burst, start) {
            (true, None) => start = Some(r.step as usize),
            (false, Some(s)) => {
                out.push((s, r.step as usize));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, tr.steps.len()));
    }
    out
}

/// Recovered: the run never left the track and, from 2 s after each burst
/// until the next one, the pole stays within 0.035 rad (2°).
fn recovered(tr: &Trace, interval: f64) -> bool {
    if tr.termination.is_some() {
        return false;
    }
    let windows = burst_windows(tr);
    let settle = (2.0 / interval).round() as usize;
    windows.iter().enumerate().all(|(i, (_, end))| {
        let from = end + settle;
        let to = windows.get(i + 1).map_or(tr.steps.len(), |w| w.0);
        from < to && tr.steps[from..to].iter().all(|s| s.plants[0].x[ANGLE].abs() <= 0.035)
    })
}

fn burst_recovery() -> (bool, String) {
    let sc = common::scenario("burst40_20ms.json");
    let t = sc.network.modes[0].update_interval;
    let runs = traces(&sc, 50);
    let lengths_ok = runs.iter().all(|tr| {
        let w = burst_windows(tr);
        w.iter().rev().skip(1).all(|(s, e)| e - s == 40)
    });
    let ok = runs.iter().filter(|tr| recovered(tr, t)).count();
    let terminated = runs.iter().filter(|tr| tr.termination.is_some()).count();
    (
        ok >= 40 && lengths_ok,
        format!("{ok}/50 recover within 2 s of every 40-round burst (need >= 40); {terminated} hit the track limit"),
    )
}

fn synchronization() -> (bool, String) {
    let sc = common::scenario("sync_hold.json");
    let mut uncoupled = sc.clone();
    if let ControllerConfig::Sync { q_sync, .. } = &mut uncoupled.controller {
        q_sync.iter_mut().for_each(|q| *q = 0.0);
    }
    let mean_error = |s: &Scenario| {
        let ms = run_batch(s, 10).unwrap();
        assert!(ms.iter().all(|m| m.sync_errors.len() == 10));
        ms.iter().map(|m| m.mean_sync_error.unwrap()).sum::<f64>() / ms.len() as f64
    };
    let (on, off) = (mean_error(&sc), mean_error(&uncoupled));
    (
        off >= 2.0 * on,
        format!(
            "mean pairwise error {off:.4} m uncoupled vs {on:.4} m coupled ({:.2}x)",
            off / on
        ),
    )
}

fn with_switches(base: &Scenario, switches: &[(u64, u32)], rounds: u32, horizon: u64) -> Scenario {
    let mut sc = base.clone();
    sc.run.horizon = horizon;
    sc.run.mode_changes = switches
        .iter()
        .map(|&(at, mode)| ModeChangeScript {
            step: at - rounds as u64,
            mode,
            rounds,
        })
        .collect();
    sc
}

fn mode_switching() -> (bool, String) {
    let base = common::scenario("mode_switch_30_40ms.json");
    let check = |switches: &[(u64, u32)], n0: f64| {
        let script = SwitchScript {
            initial_mode: Some(1),
            switches: switches.iter().map(|&(k, m)| (k, m)).collect(),
            n0: Some(n0),
        };
        let report = cli::dwell(&base, Some(&script), n0)
            .map_err(|e| format!("{e:?}"))
            .unwrap();
        (report.tau_a_star, report.signal.unwrap().accepted)
    };
    let all_safe = |sc: &Scenario| {
        run_batch(sc, 50)
            .unwrap()
            .iter()
            .filter(|m| m.success && m.plants[0].position.max_abs <= 0.25)
            .count()
    };

    let mut ok = true;
    let mut notes = Vec::new();
    let accepted_scripts: [(&[(u64, u32)], f64); 2] = [(&[(300, 2)], 1.0), (&[(200, 2), (700, 1), (1200, 2)], 3.0)];
    let mut tau = 0;
    for (switches, n0) in accepted_scripts {
        let (t, accepted) = check(switches, n0);
        tau = t;
        let safe = all_safe(&with_switches(&base, switches, 5, 1700));
        ok &= accepted && safe == 50;
        notes.push(format!(
            "accepted script with {} switches: {safe}/50 safe",
            switches.len()
        ));
    }

    let every = tau.div_ceil(10);
    let fast: Vec<(u64, u32)> = (1..=4).map(|i| (i * every, if i % 2 == 1 { 2 } else { 1 })).collect();
    let (_, fast_accepted) = check(&fast, 1.0);
    let safe = all_safe(&with_switches(&base, &fast, 5, 5 * every));
    ok &= !fast_accepted && safe == 50;
    notes.push(format!(
        "switching every {every} steps (tau* / 10, rejected: {}): {safe}/50 safe",
        !fast_accepted
    ));

    let safe = all_safe(&base);
    ok &= safe == 50;
    notes.push(format!(
        "shipped script ({} changes, one per 26 rounds): {safe}/50 safe",
        base.run.mode_changes.len()
    ));
    (ok, format!("tau* = {tau}; {}", notes.join(", ")))
}

fn in_order_delivery() -> Outcome {
    let mut rounds = 0usize;
    let mut deliveries = 0usize;
    for (name, sc) in common::shipped_scenarios() {
        for tr in traces(&sc, 5) {
            let all: Vec<_> = tr.rounds.iter().flat_map(|r| r.deliveries.iter()).collect();
            if let Err(e) = check_in_order_delivery(all.iter().copied()) {
                return outcome(false, format!("{name}: {e}"));
            }
            rounds += tr.rounds.len();
            deliveries += all.iter().filter(|d| d.delivered).count();
        }
    }
    outcome(
        true,
        format!("{rounds} rounds, {deliveries} deliveries, no duplicates or reordering"),
    )
}
