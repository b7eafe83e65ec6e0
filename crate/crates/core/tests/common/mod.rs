#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use wcps::control::place_poles;
use wcps::model::SimRng;
use wcps::sim::{NoiseConfig, Scenario};
use wcps::stability::{build_augmented, AugmentedClosedLoop};

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn scenario(name: &str) -> Scenario {
    wcps::cli::load_scenario(&scenario_dir().join(name)).unwrap()
}

pub fn shipped_scenarios() -> Vec<(String, Scenario)> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), scenario(&n))).collect()
}

/// Process noise per second on the velocities, sensor noise on all states.
pub fn nominal_noise() -> NoiseConfig {
    NoiseConfig {
        process_variance: vec![0.0, 1e-4, 0.0, 1e-3],
        measurement_variance: vec![1e-8, 1e-6, 1e-6, 1e-4],
        process_per_second: true,
    }
}

fn uniform_matrix(rng: &mut SimRng, r: usize, c: usize, lim: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-lim..lim))
}

/// Random noise-free loop with `n` states, one input, a pole-placed gain and
/// delivery rates in `[0.2, 1]`.
pub fn random_loop(rng: &mut SimRng, n: usize) -> AugmentedClosedLoop {
    loop {
        let a = uniform_matrix(rng, n, n, 1.5);
        let b = uniform_matrix(rng, n, 1, 1.0);
        let poles: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.random_range(-0.9..0.9), 0.0)).collect();
        let Ok(f) = place_poles(&a, &b, &poles) else { continue };
        if f.matrix().amax() > 50.0 {
            continue;
        }
        let mu_theta = rng.random_range(0.2..=1.0);
        let mu_phi = rng.random_range(0.2..=1.0);
        let zero = DMatrix::zeros(n, n);
        return build_augmented(&a, &b, &f, mu_theta, mu_phi, &zero, &zero).unwrap();
    }
}

/// Per-step growth factor of `E[|z|²]` for the noise-free loop, estimated by
/// propagating `particles` sample paths for `steps` steps.
///
/// Paths are kept at unit norm and resampled in proportion to their squared
/// growth each step, so the product of the mean growth factors is an unbiased
/// estimate of the second moment even when it is carried by rare paths.
/// The rate after `burn_in` steps converges to the spectral radius of the
/// second-moment operator.
pub fn monte_carlo_moment_rate(
    acl: &AugmentedClosedLoop,
    particles: usize,
    steps: usize,
    burn_in: usize,
    rng: &mut SimRng,
) -> f64 {
    let d = acl.dim();
    let real = [
        [acl.realization(false, false), acl.realization(false, true)],
        [acl.realization(true, false), acl.realization(true, true)],
    ];
    let mut z: Vec<DVector<f64>> = (0..particles)
        .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)).normalize())
        .collect();
    let mut next = vec![DVector::zeros(d); particles];
    let mut growth = vec![0.0; particles];
    let mut log_sum = 0.0;
    for k in 0..steps {
        for i in 0..particles {
            let th = rng.random_bool(acl.mu_theta) as usize;
            let ph = rng.random_bool(acl.mu_phi) as usize;
            next[i].gemv(1.0, &real[th][ph], &z[i], 0.0);
            growth[i] = next[i].norm_squared();
        }
        let total: f64 = growth.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        if k >= burn_in {
            log_sum += (total / particles as f64).ln();
        }
        // Systematic resampling by weight.
        let step = total / particles as f64;
        let mut u = rng.random_range(0.0..step);
        let mut acc = growth[0];
        let mut j = 0;
        for zi in z.iter_mut() {
            while acc < u && j + 1 < particles {
                j += 1;
                acc += growth[j];
            }
            zi.copy_from(&next[j]);
            let norm = zi.norm();
            *zi /= norm;
            u += step;
        }
    }
    (log_sum / (steps - burn_in) as f64).exp()
}

/// Symmetric 99% interval test: is `p` consistent with `successes / n`?
pub fn within_binomial_ci99(successes: u64, n: u64, p: f64) -> bool {
    let z = 2.575_829_3;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    ((successes as f64 / n as f64) - p).abs() <= z * sd
}
