//! CSV output: `flows.csv`, `busyness.csv`, `summary.csv`.
//!
//! Integers are written bare; ratios and rates with six decimals.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::SimError;

use super::metrics::RunMetrics;

fn ratio(v: f64) -> String {
    format!("{v:.6}")
}

fn opt_int(v: Option<f64>) -> String {
    v.map(|x| format!("{}", x.round() as u64)).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, SimError> {
    csv::Writer::from_path(path).map_err(|source| SimError::Csv {
        path: path.to_owned(),
        source,
    })
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), SimError> {
    let csv_err = |source| SimError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| SimError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Writes the three CSV files into `out_dir`, creating it if needed.
pub fn export_csv(bundle: &RunMetrics, out_dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(out_dir).map_err(|source| SimError::Io {
        path: out_dir.to_owned(),
        source,
    })?;

    let flows_path = out_dir.join("flows.csv");
    let flow_rows = bundle
        .flows
        .iter()
        .map(|f| {
            vec![
                bundle.scenario.clone(),
                f.transport.clone(),
                f.flow_id.to_string(),
                f.src.to_string(),
                f.dst.to_string(),
                f.hops.to_string(),
                f.delivered_bytes.to_string(),
                ratio(f.throughput),
                opt_int(f.mean_rtt()),
                opt_int(f.rtt_percentile(0.95).map(|t| t.as_micros() as f64)),
                f.retransmissions.to_string(),
            ]
        })
        .collect();
    write_rows(
        &flows_path,
        &[
            "scenario",
            "transport",
            "flow_id",
            "src",
            "dst",
            "hops",
            "delivered_bytes",
            "throughput_Bps",
            "mean_rtt_us",
            "p95_rtt_us",
            "retransmissions",
        ],
        flow_rows,
    )?;

    let busy_path = out_dir.join("busyness.csv");
    let busy_rows = bundle
        .busyness
        .iter()
        .map(|s| vec![s.time.as_micros().to_string(), s.node.to_string(), ratio(s.rb)])
        .collect();
    write_rows(&busy_path, &["time_us", "node", "rb"], busy_rows)?;

    let summary_path = out_dir.join("summary.csv");
    write_rows(
        &summary_path,
        &[
            "scenario",
            "transport",
            "aggregate_throughput_Bps",
            "jain_index",
            "seed",
        ],
        vec![vec![
            bundle.scenario.clone(),
            bundle.transport.clone(),
            ratio(bundle.aggregate_throughput),
            ratio(bundle.jain_index),
            bundle.seed.to_string(),
        ]],
    )?;

    Ok(vec![flows_path, busy_path, summary_path])
}
