//! Files written for a single run and the scalars pooled across a sweep.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use ifnet::engine::RunReport;
use ifnet::metrics::{effective_link_throughput, packet_loss_rate};
use ifnet::ScenarioConfig;
use serde::Serialize;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const REPORT: &str = "report.json";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Writes every artifact of one run into `dir`, creating it if needed.
pub fn write_run(dir: &Path, config: &ScenarioConfig, report: &RunReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), config.to_json() + "\n")?;
    fs::write(dir.join(REPORT), report.to_json() + "\n")?;
    write_metrics_jsonl(dir, report)?;
    write_metrics_csv(dir, report).map_err(csv_err)?;
    write_summary_csv(dir, report).map_err(csv_err)?;
    write_adaptation_jsonl(dir, report)?;
    write_backlog_csv(dir, report).map_err(csv_err)?;
    let topology = report
        .final_topology
        .clone()
        .unwrap_or_else(|| config.initial_topology());
    fs::write(
        dir.join("topology.json"),
        serde_json::to_string_pretty(&topology).map_err(io::Error::from)? + "\n",
    )
}

fn write_metrics_jsonl(dir: &Path, report: &RunReport) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(dir.join("metrics.jsonl"))?);
    for w in &report.windows {
        serde_json::to_writer(&mut out, w)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn write_metrics_csv(dir: &Path, report: &RunReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record([
        "window",
        "start_slot",
        "end_slot",
        "link",
        "coding_rate",
        "slots_active",
        "slots_in_window",
        "successes",
        "outages",
        "losses",
        "arrivals",
        "effective_throughput",
        "packet_loss_rate",
        "spatial_throughput",
    ])?;
    for win in &report.windows {
        for r in &win.records {
            w.write_record([
                win.index.to_string(),
                win.start_slot.to_string(),
                win.end_slot.to_string(),
                r.link.to_string(),
                r.coding_rate.to_string(),
                r.slots_active.to_string(),
                r.slots_in_window.to_string(),
                r.successes.to_string(),
                r.outages.to_string(),
                r.losses.to_string(),
                r.arrivals.to_string(),
                opt(effective_link_throughput(r)),
                opt(packet_loss_rate(r)),
                win.spatial_throughput.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_summary_csv(dir: &Path, report: &RunReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record([
        "link",
        "slots_active",
        "successes",
        "outages",
        "arrivals",
        "delivered",
        "lost",
        "final_backlog",
        "effective_throughput",
        "packet_loss_rate",
        "stable",
        "drift",
    ])?;
    for l in &report.links {
        w.write_record([
            l.link.to_string(),
            l.totals.slots_active.to_string(),
            l.totals.successes.to_string(),
            l.totals.outages.to_string(),
            l.totals.arrivals.to_string(),
            l.delivered.to_string(),
            l.lost.to_string(),
            l.final_backlog.to_string(),
            opt(l.effective_throughput),
            opt(l.packet_loss_rate),
            l.stability.map(|s| s.stable.to_string()).unwrap_or_default(),
            opt(l.stability.map(|s| s.drift)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_adaptation_jsonl(dir: &Path, report: &RunReport) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(dir.join("adaptation.jsonl"))?);
    for a in &report.adaptation {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn write_backlog_csv(dir: &Path, report: &RunReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(dir.join("backlog.csv"))?;
    w.write_record(["slot", "link", "backlog"])?;
    let samples = report.backlog_traces.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..samples {
        let slot = (i as u64 * report.trace_stride).to_string();
        for (k, trace) in report.backlog_traces.iter().enumerate() {
            if let Some(b) = trace.get(i) {
                w.write_record([slot.as_str(), &k.to_string(), &b.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Run-level scalars pooled across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunScalars {
    pub mean_spatial_throughput: f64,
    pub pooled_outage: Option<f64>,
    pub mean_effective_throughput: Option<f64>,
    pub mean_packet_loss_rate: Option<f64>,
    pub stable_fraction: Option<f64>,
    pub delivered: u64,
    pub lost: u64,
}

pub const SCALAR_NAMES: [&str; 7] = [
    "mean_spatial_throughput",
    "pooled_outage",
    "mean_effective_throughput",
    "mean_packet_loss_rate",
    "stable_fraction",
    "delivered",
    "lost",
];

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl RunScalars {
    pub fn of(report: &RunReport) -> Self {
        RunScalars {
            mean_spatial_throughput: mean(report.windows.iter().map(|w| w.spatial_throughput))
                .unwrap_or(0.0),
            pooled_outage: report.pooled_outage,
            mean_effective_throughput: mean(
                report.links.iter().filter_map(|l| l.effective_throughput),
            ),
            mean_packet_loss_rate: mean(report.links.iter().filter_map(|l| l.packet_loss_rate)),
            stable_fraction: mean(
                report
                    .links
                    .iter()
                    .filter_map(|l| l.stability)
                    .map(|s| if s.stable { 1.0 } else { 0.0 }),
            ),
            delivered: report.links.iter().map(|l| l.delivered).sum(),
            lost: report.links.iter().map(|l| l.lost).sum(),
        }
    }

    /// Values in [`SCALAR_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            Some(self.mean_spatial_throughput),
            self.pooled_outage,
            self.mean_effective_throughput,
            self.mean_packet_loss_rate,
            self.stable_fraction,
            Some(self.delivered as f64),
            Some(self.lost as f64),
        ]
    }
}

/// Writes `runs.csv` (one row per replication) and `aggregate.csv` (mean and
/// sample standard deviation of each scalar over the runs that define it).
pub fn write_sweep(dir: &Path, runs: &[(u64, RunScalars)]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(dir.join("runs.csv")).map_err(csv_err)?;
    let mut header = vec!["replication", "seed"];
    header.extend(SCALAR_NAMES);
    w.write_record(&header).map_err(csv_err)?;
    for (i, (seed, s)) in runs.iter().enumerate() {
        let mut row = vec![i.to_string(), seed.to_string()];
        row.extend(s.values().into_iter().map(opt));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("aggregate.csv")).map_err(csv_err)?;
    w.write_record(["metric", "n", "mean", "stddev"]).map_err(csv_err)?;
    for (j, name) in SCALAR_NAMES.iter().enumerate() {
        let xs: Vec<f64> = runs.iter().filter_map(|(_, s)| s.values()[j]).collect();
        let n = xs.len();
        let m = mean(xs.iter().copied());
        let sd = m.map(|m| {
            if n < 2 {
                0.0
            } else {
                (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            }
        });
        w.write_record([name.to_string(), n.to_string(), opt(m), opt(sd)])
            .map_err(csv_err)?;
    }
    w.flush()
}

/// Plot-ready tables derived from a saved `report.json`.
pub fn write_plots(dir: &Path, report: &RunReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("throughput_by_window.csv")).map_err(csv_err)?;
    w.write_record([
        "window",
        "mid_slot",
        "spatial_throughput",
        "mean_effective_throughput",
        "outage_fraction",
    ])
    .map_err(csv_err)?;
    for win in &report.windows {
        let (tx, out) = win
            .records
            .iter()
            .fold((0u64, 0u64), |(t, o), r| (t + r.slots_active, o + r.outages));
        let outage = (tx > 0).then(|| out as f64 / tx as f64);
        w.write_record([
            win.index.to_string(),
            ((win.start_slot + win.end_slot) as f64 / 2.0).to_string(),
            win.spatial_throughput.to_string(),
            opt(mean(win.records.iter().filter_map(effective_link_throughput))),
            opt(outage),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("settings_by_epoch.csv")).map_err(csv_err)?;
    w.write_record([
        "epoch",
        "slot",
        "node",
        "coding_rate",
        "access_fraction",
        "rule",
        "feasible",
    ])
    .map_err(csv_err)?;
    for a in &report.adaptation {
        w.write_record([
            a.epoch.to_string(),
            a.slot.to_string(),
            a.node.to_string(),
            a.setting.coding_rate.to_string(),
            opt(a.setting.mac.access_fraction()),
            serde_json::to_value(a.rule)?.as_str().unwrap_or_default().to_string(),
            a.feasible.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}
