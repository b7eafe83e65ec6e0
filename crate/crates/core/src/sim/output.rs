use std::io::Write;

use super::engine::Trace;
use super::metrics::Metrics;
use crate::error::Result;
use crate::SCHEMA_VERSION;

fn fmt_vec(v: Option<&[f64]>, len: usize) -> Vec<String> {
    match v {
        Some(v) => v.iter().map(|x| x.to_string()).collect(),
        None => vec![String::new(); len],
    }
}

/// One row per `(step, plant)`; columns `x0..`, `y0..`, `u0..`, `u_hat0..`,
/// `x_hat0..`, then the delivery flags.
pub fn write_trace_csv<W: Write>(tr: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = tr.steps.first() else {
        w.write_record(["schema_version", "step"])?;
        w.flush()?;
        return Ok(());
    };
    let n = first.plants[0].x.len();
    let m = first.plants[0].u.len();
    let mut header: Vec<String> = ["schema_version", "step", "time", "mode", "plant"]
        .map(String::from)
        .to_vec();
    for (prefix, len) in [("x", n), ("y", n), ("u", m), ("u_hat", m), ("x_hat", n)] {
        header.extend((0..len).map(|i| format!("{prefix}{i}")));
    }
    header.extend(["theta", "phi", "terminated"].map(String::from));
    w.write_record(&header)?;
    let last = tr.steps.len() - 1;
    for (si, s) in tr.steps.iter().enumerate() {
        for (p, r) in s.plants.iter().enumerate() {
            let mut row = vec![
                SCHEMA_VERSION.to_string(),
                s.k.to_string(),
                s.time.to_string(),
                s.mode.to_string(),
                p.to_string(),
            ];
            row.extend(fmt_vec(Some(&r.x), n));
            row.extend(fmt_vec(Some(&r.y), n));
            row.extend(fmt_vec(Some(&r.u), m));
            row.extend(fmt_vec(r.u_hat.as_deref(), m));
            row.extend(fmt_vec(r.x_hat.as_deref(), n));
            row.push((r.theta as u8).to_string());
            row.push((r.phi as u8).to_string());
            let term = match tr.termination {
                Some(t) if si == last && t.plant == p => {
                    serde_json::to_value(t.cause)?.as_str().unwrap_or("").to_string()
                }
                _ => String::new(),
            };
            row.push(term);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per `(round, slot, destination)`; local modes as `node:mode` pairs.
pub fn write_network_csv<W: Write>(tr: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "schema_version",
        "round",
        "step",
        "mode",
        "dead",
        "burst",
        "slot",
        "message",
        "source",
        "destination",
        "generation",
        "delivered",
        "local_modes",
    ])?;
    for r in &tr.rounds {
        let modes = r
            .local_modes
            .iter()
            .map(|(n, m)| format!("{n}:{m}"))
            .collect::<Vec<_>>()
            .join(";");
        let base = [
            SCHEMA_VERSION.to_string(),
            r.round.to_string(),
            r.step.to_string(),
            r.mode.to_string(),
            (r.dead as u8).to_string(),
            (r.burst as u8).to_string(),
        ];
        if r.deliveries.is_empty() {
            let mut row = base.to_vec();
            row.extend(["", "", "", "", "", ""].map(String::from));
            row.push(modes.clone());
            w.write_record(&row)?;
        }
        for d in &r.deliveries {
            let mut row = base.to_vec();
            row.extend([
                d.slot.to_string(),
                d.message.clone(),
                d.source.to_string(),
                d.destination.to_string(),
                d.generation.to_string(),
                (d.delivered as u8).to_string(),
                modes.clone(),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_json<W: Write>(m: &Metrics, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, m)?;
    Ok(())
}
