//! Command-line front end.
//!
//! Exit codes: 0 success or stable, 1 any error (including usage errors),
//! 2 an analyzed loop or mode is not mean-square stable.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{jitter_bound, JitterParams, ModeId};
use crate::sim::{
    compute_metrics, run_batch, run_scenario, write_metrics_json, write_network_csv, write_trace_csv, Metrics, Scenario,
};
use crate::stability::{
    check_mss, find_dwell_violation, min_avg_dwell_time, second_moment_operator, steady_state_correlation,
    DwellViolation, SwitchedSystem, SwitchingSignal, Verdict, DEFAULT_TOLERANCE,
};
use crate::SCHEMA_VERSION;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_UNSTABLE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "wcps",
    version,
    about = "Analyze and simulate control loops over lossy wireless rounds"
)]
pub struct Cli {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for reports and run outputs.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Number of seeded trials for `simulate`.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean-square stability of every remote loop in every mode.
    Analyze,
    /// Average dwell time between the scenario's modes.
    Dwell {
        /// Switching script to verify (JSON); defaults to the scenario's mode changes.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Chatter bound used when the script does not set one.
        #[arg(long, default_value_t = 1.0)]
        n0: f64,
    },
    /// Run the scenario and write its outputs.
    Simulate,
    /// Worst-case actuation jitter, µs.
    #[command(allow_negative_numbers = true)]
    Jitter {
        /// Synchronization error between communication processors, µs.
        #[arg(long, default_value_t = 10.0)]
        e_ref: f64,
        /// Synchronization-line detection delay, µs.
        #[arg(long, default_value_t = 1.0 / 48.0)]
        e_sync: f64,
        /// Application-processor drift, ppm.
        #[arg(long, default_value_t = 50.0)]
        rho_ap: f64,
        /// Communication-processor drift, ppm.
        #[arg(long, default_value_t = 50.0)]
        rho_cp: f64,
        /// Execution-time variation of the last task, µs.
        #[arg(long, default_value_t = 10.0)]
        e_task: f64,
        /// Interval between the two task ends, µs.
        #[arg(long, default_value_t = 100_000.0)]
        t_end: f64,
    },
}

/// Parses `args` and runs the command, printing errors to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

pub fn run<W: Write>(cli: &Cli, out: &mut W) -> Result<u8> {
    match &cli.command {
        Command::Jitter {
            e_ref,
            e_sync,
            rho_ap,
            rho_cp,
            e_task,
            t_end,
        } => {
            let j = jitter_bound(&JitterParams {
                e_ref_hat: *e_ref,
                e_sync_hat: *e_sync,
                rho_ap_hat: *rho_ap,
                rho_cp_hat: *rho_cp,
                e_task_hat: *e_task,
                t_end_tilde: *t_end,
            })?;
            writeln!(out, "jitter bound: {j:.2} us")?;
            Ok(EXIT_OK)
        }
        Command::Analyze => {
            let sc = load_scenario(config_path(cli)?)?;
            let report = analyze(&sc)?;
            print_analysis(&report, out)?;
            if let Some(dir) = &cli.out_dir {
                write_json(dir, "analysis.json", &report)?;
            }
            Ok(if report.stable { EXIT_OK } else { EXIT_UNSTABLE })
        }
        Command::Dwell { script, n0 } => {
            let sc = load_scenario(config_path(cli)?)?;
            let signal = match script {
                Some(p) => Some(load_json::<SwitchScript>(p)?),
                None => SwitchScript::from_scenario(&sc, *n0),
            };
            match dwell(&sc, signal.as_ref(), *n0) {
                Ok(report) => {
                    print_dwell(&report, out)?;
                    if let Some(dir) = &cli.out_dir {
                        write_json(dir, "dwell.json", &report)?;
                    }
                    Ok(EXIT_OK)
                }
                Err(DwellError::Unstable { mode, spectral_radius }) => {
                    writeln!(
                        out,
                        "mode {mode} is not mean-square stable (spectral radius {spectral_radius:.6}); no dwell time exists"
                    )?;
                    Ok(EXIT_UNSTABLE)
                }
                Err(DwellError::Other(e)) => Err(e),
            }
        }
        Command::Simulate => {
            let mut sc = load_scenario(config_path(cli)?)?;
            if let Some(s) = cli.seed {
                sc.run.seed = s;
            }
            let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
            fs::create_dir_all(&dir)?;
            simulate(&sc, cli.trials.unwrap_or(1), &dir, out)?;
            Ok(EXIT_OK)
        }
    }
}

fn config_path(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::config("", "--config is required for this command"))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::config("", format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut path = e.path().to_string();
        let message = e.inner().to_string();
        // Missing fields are reported at their parent; name the field itself.
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|r| r.split('`').next())
        {
            path = if path == "." {
                field.to_string()
            } else {
                format!("{path}.{field}")
            };
        }
        Error::config(path, message)
    })
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let sc: Scenario = load_json(path)?;
    sc.validate()?;
    Ok(sc)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopAnalysis {
    pub plant: usize,
    pub mode: ModeId,
    pub update_interval: f64,
    pub verdict: Verdict,
    pub spectral_radius: f64,
    pub borderline: bool,
    /// `σ²` of the sensor and actuator delivery indicators.
    pub sigma2: [f64; 2],
    /// Diagonal of the plant block of the steady-state correlation; present
    /// when stable.
    pub steady_state_variance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub scenario: String,
    pub stable: bool,
    pub loops: Vec<LoopAnalysis>,
}

/// Mean-square stability of every remote loop in every mode, under the
/// scenario's i.i.d. loss rates. Bursts are not part of the analysis.
pub fn analyze(sc: &Scenario) -> Result<AnalysisReport> {
    if sc.is_sync() {
        return Err(Error::Validation("analyze needs a scenario with remote loops".into()));
    }
    let mut loops = Vec::new();
    for (i, l) in sc.loops().iter().enumerate() {
        for m in &sc.network.modes {
            let acl = sc.augmented_loop(i, m)?;
            let cert = check_mss(&acl, DEFAULT_TOLERANCE)?;
            let steady_state_variance = if cert.verdict == Verdict::Stable {
                let w = steady_state_correlation(&second_moment_operator(&acl))?;
                Some((0..acl.state_dim).map(|k| w[(k, k)]).collect())
            } else {
                None
            };
            loops.push(LoopAnalysis {
                plant: l.plant,
                mode: m.id,
                update_interval: m.update_interval,
                verdict: cert.verdict,
                spectral_radius: cert.spectral_radius,
                borderline: cert.borderline,
                sigma2: acl.sigma2,
                steady_state_variance,
            });
        }
    }
    Ok(AnalysisReport {
        schema_version: SCHEMA_VERSION,
        scenario: sc.name.clone(),
        stable: loops.iter().all(|l| l.verdict == Verdict::Stable),
        loops,
    })
}

fn print_analysis<W: Write>(r: &AnalysisReport, out: &mut W) -> Result<()> {
    for l in &r.loops {
        let verdict = match (l.verdict, l.borderline) {
            (Verdict::Stable, _) => "stable",
            (Verdict::Unstable, true) => "unstable (borderline)",
            (Verdict::Unstable, false) => "unstable",
        };
        writeln!(
            out,
            "plant {} mode {} (T_U = {} s): {verdict}, spectral radius {:.6}, sigma2 = [{:.4}, {:.4}]",
            l.plant, l.mode, l.update_interval, l.spectral_radius, l.sigma2[0], l.sigma2[1]
        )?;
        if let Some(v) = &l.steady_state_variance {
            let s: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
            writeln!(out, "  steady-state plant variance: [{}]", s.join(", "))?;
        }
    }
    writeln!(out, "verdict: {}", if r.stable { "stable" } else { "unstable" })?;
    Ok(())
}

/// Switching script with mode ids. Switch steps are the steps at which the
/// new mode takes effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchScript {
    #[serde(default)]
    pub initial_mode: Option<ModeId>,
    pub switches: Vec<(u64, ModeId)>,
    #[serde(default)]
    pub n0: Option<f64>,
}

impl SwitchScript {
    /// The script implied by `run.mode_changes`; a change requested at step
    /// `k` with `r` announcing rounds takes effect at `k + r`.
    pub fn from_scenario(sc: &Scenario, n0: f64) -> Option<Self> {
        if sc.run.mode_changes.is_empty() {
            return None;
        }
        Some(SwitchScript {
            initial_mode: sc.network.initial_mode,
            switches: sc
                .run
                .mode_changes
                .iter()
                .map(|c| (c.step + c.rounds as u64, c.mode))
                .collect(),
            n0: Some(n0),
        })
    }

    fn to_signal(&self, sc: &Scenario, n0: f64) -> Result<SwitchingSignal> {
        let index = |id: ModeId| {
            sc.network
                .modes
                .iter()
                .position(|m| m.id == id)
                .ok_or_else(|| Error::Validation(format!("switching script names unknown mode {id}")))
        };
        let initial = match self.initial_mode {
            Some(id) => index(id)?,
            None => 0,
        };
        let switches = self
            .switches
            .iter()
            .map(|(k, id)| Ok((*k, index(*id)?)))
            .collect::<Result<Vec<_>>>()?;
        let sig = SwitchingSignal {
            initial_mode: initial,
            horizon: switches.last().map_or(0, |s| s.0) + 1,
            switches,
            n0: self.n0.unwrap_or(n0),
        };
        sig.validate(sc.network.modes.len())?;
        Ok(sig)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalCheck {
    pub accepted: bool,
    pub n0: f64,
    pub switches: usize,
    pub violation: Option<DwellViolation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopDwell {
    pub plant: usize,
    pub modes: Vec<ModeId>,
    pub spectral_radii: Vec<f64>,
    pub alpha: f64,
    pub mu: f64,
    pub tau_a_star: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DwellReport {
    pub schema_version: u32,
    pub scenario: String,
    pub loops: Vec<LoopDwell>,
    /// Largest `τ*_a` over all loops; the one a script must respect.
    pub tau_a_star: u64,
    pub signal: Option<SignalCheck>,
}

#[derive(Debug)]
pub enum DwellError {
    Unstable { mode: ModeId, spectral_radius: f64 },
    Other(Error),
}

impl From<Error> for DwellError {
    fn from(e: Error) -> Self {
        DwellError::Other(e)
    }
}

pub fn dwell(sc: &Scenario, script: Option<&SwitchScript>, n0: f64) -> std::result::Result<DwellReport, DwellError> {
    if sc.is_sync() || sc.network.modes.len() < 2 {
        return Err(Error::Validation("dwell needs a remote scenario with at least two modes".into()).into());
    }
    let ids: Vec<ModeId> = sc.network.modes.iter().map(|m| m.id).collect();
    let mut loops = Vec::new();
    for (i, l) in sc.loops().iter().enumerate() {
        let modes = sc
            .network
            .modes
            .iter()
            .map(|m| sc.augmented_loop(i, m))
            .collect::<Result<Vec<_>>>()?;
        let cert = match min_avg_dwell_time(&SwitchedSystem::new(modes)?) {
            Ok(c) => c,
            Err(Error::CertificateUnavailable { mode, spectral_radius }) => {
                return Err(DwellError::Unstable {
                    mode: ids[mode],
                    spectral_radius,
                })
            }
            Err(e) => return Err(e.into()),
        };
        loops.push(LoopDwell {
            plant: l.plant,
            modes: ids.clone(),
            spectral_radii: cert.spectral_radii,
            alpha: cert.alpha,
            mu: cert.mu,
            tau_a_star: cert.tau_a_star,
        });
    }
    let tau = loops.iter().map(|l| l.tau_a_star).max().unwrap_or(1);
    let signal = match script {
        Some(s) => {
            let sig = s.to_signal(sc, n0)?;
            let violation = find_dwell_violation(&sig, tau as f64, sig.n0);
            Some(SignalCheck {
                accepted: violation.is_none(),
                n0: sig.n0,
                switches: sig.switches.len(),
                violation,
            })
        }
        None => None,
    };
    Ok(DwellReport {
        schema_version: SCHEMA_VERSION,
        scenario: sc.name.clone(),
        loops,
        tau_a_star: tau,
        signal,
    })
}

fn print_dwell<W: Write>(r: &DwellReport, out: &mut W) -> Result<()> {
    for l in &r.loops {
        writeln!(out, "plant {}:", l.plant)?;
        for (id, rho) in l.modes.iter().zip(&l.spectral_radii) {
            writeln!(out, "  mode {id}: spectral radius {rho:.6}")?;
        }
        writeln!(
            out,
            "  alpha = {:.6e}, mu = {:.6e}, tau_a* = {} steps",
            l.alpha, l.mu, l.tau_a_star
        )?;
    }
    if let Some(s) = &r.signal {
        match &s.violation {
            None => writeln!(out, "signal accepted ({} switches, N0 = {})", s.switches, s.n0)?,
            Some(v) => writeln!(
                out,
                "signal rejected: steps {}..={} contain {} switches, at most {:.3} allowed",
                v.start, v.end, v.switches, v.allowed
            )?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub master_seed: u64,
    pub trials: u64,
    pub successes: u64,
    pub runs: Vec<Metrics>,
}

/// One trial writes `trace.csv`, `network.csv` and `metrics.json`; more
/// trials write `batch.json` with per-trial metrics.
pub fn simulate<W: Write>(sc: &Scenario, trials: u64, dir: &Path, out: &mut W) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidParameter("--trials must be >= 1".into()));
    }
    if trials == 1 {
        let tr = run_scenario(sc)?;
        let m = compute_metrics(&tr);
        write_trace_csv(&tr, BufWriter::new(File::create(dir.join("trace.csv"))?))?;
        write_network_csv(&tr, BufWriter::new(File::create(dir.join("network.csv"))?))?;
        write_metrics_json(&m, BufWriter::new(File::create(dir.join("metrics.json"))?))?;
        writeln!(out, "{} steps, {:.2} s simulated", m.steps, m.duration)?;
        match &m.termination {
            Some(t) => writeln!(out, "plant {} terminated at step {}: {:?}", t.plant, t.step, t.cause)?,
            None => writeln!(out, "success: {}", m.success)?,
        }
        if let (true, Some(e)) = (sc.is_sync(), m.mean_sync_error) {
            writeln!(out, "mean pairwise position error: {e:.5} m")?;
        }
        writeln!(out, "wrote {}", dir.display())?;
        return Ok(());
    }
    let runs = run_batch(sc, trials)?;
    let successes = runs.iter().filter(|m| m.success).count() as u64;
    write_json(
        dir,
        "batch.json",
        &BatchSummary {
            schema_version: SCHEMA_VERSION,
            scenario: sc.name.clone(),
            master_seed: sc.run.seed,
            trials,
            successes,
            runs,
        },
    )?;
    writeln!(out, "{successes}/{trials} trials succeeded")?;
    writeln!(out, "wrote {}", dir.join("batch.json").display())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("wcps").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn jitter_defaults() {
        let mut out = Vec::new();
        assert_eq!(run(&parse(&["jitter"]), &mut out).unwrap(), EXIT_OK);
        assert_eq!(String::from_utf8(out).unwrap().trim(), "jitter bound: 50.04 us");
    }

    #[test]
    fn negative_jitter_input_is_an_error() {
        let cli = parse(&["jitter", "--e-ref", "-1"]);
        assert!(run(&cli, &mut Vec::new()).is_err());
    }

    #[test]
    fn missing_config_is_an_error() {
        assert!(run(&parse(&["analyze"]), &mut Vec::new()).is_err());
    }

    #[test]
    fn missing_field_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        fs::write(
            &p,
            r#"{"plants": [{"model": {"type": "cartpole"}}], "controller": {"type": "remote", "loops": []},
                "network": {"loss": {"mu_theta": 1.0, "mu_phi": 1.0}}, "run": {"seed": 1}}"#,
        )
        .unwrap();
        match load_scenario(&p) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "run.horizon"),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(
            &p,
            r#"{"plants": [{"model": {"type": "cartpole", "params": {"mass": 1}}}]}"#,
        )
        .unwrap();
        match load_scenario(&p) {
            Err(Error::Config { path, message }) => {
                // Tagged enums are buffered, so the path stops at the enum.
                assert_eq!(path, "plants[0].model");
                assert!(message.contains("unknown field `mass`"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
