//! Evaluation rows as CSV, and the mean ± std summary printed by `report`.

use std::fmt::Write as _;
use std::path::Path;

use multisense_core::evaluation::mean_std;
use multisense_core::{DeviceId, Strategy};

use crate::error::{FormatError, Result, SimError};
use crate::fsutil;

/// One grid cell: a strategy run on one seeded scenario at one availability.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: Strategy,
    pub p: f64,
    pub seed: u64,
    pub micro_f1: f64,
    pub devices: Vec<DeviceId>,
    pub selection_ratio: Vec<f64>,
    pub assessment_count: usize,
    pub execution_count: usize,
    /// Mean of per-minute F1, where a minute with nothing covered scores 0.
    pub minute_f1: f64,
}

const FIXED: [&str; 4] = ["strategy", "p", "seed", "micro_f1"];
const TAIL: [&str; 3] = ["assessment_count", "execution_count", "minute_f1"];

pub fn encode(rows: &[ReportRow]) -> Result<Vec<u8>, FormatError> {
    let devices = rows.first().map(|r| r.devices.clone()).unwrap_or_default();
    if let Some(r) = rows.iter().find(|r| r.devices != devices) {
        return Err(FormatError::Parse { what: "report", message: format!("row for seed {} has a different device set", r.seed) });
    }
    let csv_err = |e: csv::Error| FormatError::Parse { what: "report", message: e.to_string() };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(devices.iter().map(|d| format!("ratio_{d}")));
    header.extend(TAIL.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.strategy.to_string(), r.p.to_string(), r.seed.to_string(), r.micro_f1.to_string()];
        rec.extend(r.selection_ratio.iter().map(|x| x.to_string()));
        rec.extend([r.assessment_count.to_string(), r.execution_count.to_string(), r.minute_f1.to_string()]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| FormatError::Parse { what: "report", message: e.to_string() })
}

pub fn decode(bytes: &[u8]) -> Result<Vec<ReportRow>, FormatError> {
    let err = |message: String| FormatError::Parse { what: "report", message };
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers().map_err(|e| err(e.to_string()))?.iter().map(String::from).collect();
    let n = header.len();
    if n < FIXED.len() + TAIL.len() || header[..FIXED.len()] != FIXED || header[n - TAIL.len()..] != TAIL {
        return Err(err(format!("unexpected header {header:?}")));
    }
    let devices = header[FIXED.len()..n - TAIL.len()]
        .iter()
        .map(|h| {
            h.strip_prefix("ratio_D").and_then(|x| x.parse().ok()).map(DeviceId).ok_or_else(|| err(format!("unexpected column `{h}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let line = i + 2;
        let field = |k: usize| -> Result<&str, FormatError> { rec.get(k).ok_or_else(|| err(format!("line {line}: missing column {k}"))) };
        fn parse<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<T, FormatError> {
            s.parse().map_err(|_| FormatError::Parse { what: "report", message: format!("line {line}: bad `{col}` value {s:?}") })
        }
        let strategy: Strategy = field(0)?.parse().map_err(|e| err(format!("line {line}: {e}")))?;
        let ratios = (0..devices.len())
            .map(|k| parse::<f64>(field(FIXED.len() + k)?, &header[FIXED.len() + k], line))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(ReportRow {
            strategy,
            p: parse(field(1)?, "p", line)?,
            seed: parse(field(2)?, "seed", line)?,
            micro_f1: parse(field(3)?, "micro_f1", line)?,
            devices: devices.clone(),
            selection_ratio: ratios,
            assessment_count: parse(field(n - 3)?, TAIL[0], line)?,
            execution_count: parse(field(n - 2)?, TAIL[1], line)?,
            minute_f1: parse(field(n - 1)?, TAIL[2], line)?,
        });
    }
    Ok(rows)
}

pub fn save(rows: &[ReportRow], path: &Path) -> Result<()> {
    let bytes = encode(rows).map_err(|e| SimError::format(path, e))?;
    fsutil::write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<Vec<ReportRow>> {
    decode(&fsutil::read(path)?).map_err(|e| SimError::format(path, e))
}

/// Seed-aggregated statistics of one (strategy, p) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub p: f64,
    pub runs: usize,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub minute_f1_mean: f64,
    pub selection_ratio: Vec<f64>,
    pub assessments_mean: f64,
}

/// Groups rows by (strategy, p), keeping first-appearance order of
/// strategies and ascending p.
pub fn summarize(rows: &[ReportRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(Strategy, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(s, p)| s == r.strategy && p == r.p) {
            keys.push((r.strategy, r.p));
        }
    }
    let first: Vec<Strategy> = keys.iter().map(|k| k.0).collect();
    let order = |s: Strategy| first.iter().position(|&k| k == s).unwrap_or(usize::MAX);
    keys.sort_by(|a, b| order(a.0).cmp(&order(b.0)).then(a.1.total_cmp(&b.1)));
    keys.into_iter()
        .map(|(strategy, p)| {
            let cell: Vec<&ReportRow> = rows.iter().filter(|r| r.strategy == strategy && r.p == p).collect();
            let f1: Vec<f64> = cell.iter().map(|r| r.micro_f1).collect();
            let (f1_mean, f1_std) = mean_std(&f1);
            let n = cell.len() as f64;
            let width = cell[0].selection_ratio.len();
            let selection_ratio = (0..width).map(|k| cell.iter().map(|r| r.selection_ratio[k]).sum::<f64>() / n).collect();
            CellSummary {
                strategy,
                p,
                runs: cell.len(),
                f1_mean,
                f1_std,
                minute_f1_mean: cell.iter().map(|r| r.minute_f1).sum::<f64>() / n,
                selection_ratio,
                assessments_mean: cell.iter().map(|r| r.assessment_count as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn format_table(rows: &[ReportRow]) -> String {
    let cells = summarize(rows);
    let devices = rows.first().map(|r| r.devices.clone()).unwrap_or_default();
    let mut out = String::new();
    let _ = write!(out, "{:<16} {:>5} {:>4}  {:<15} {:>9}", "strategy", "p", "runs", "micro_f1", "minute_f1");
    for d in &devices {
        let _ = write!(out, " {:>6}", d.to_string());
    }
    let _ = writeln!(out, " {:>11}", "assessments");
    for c in &cells {
        let f1 = format!("{:.3} ± {:.3}", c.f1_mean, c.f1_std);
        let _ = write!(out, "{:<16} {:>5.2} {:>4}  {:<15} {:>9.3}", c.strategy.to_string(), c.p, c.runs, f1, c.minute_f1_mean);
        for x in &c.selection_ratio {
            let _ = write!(out, " {x:>6.3}");
        }
        let _ = writeln!(out, " {:>11.1}", c.assessments_mean);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(strategy: Strategy, p: f64, seed: u64, f1: f64) -> ReportRow {
        ReportRow {
            strategy,
            p,
            seed,
            micro_f1: f1,
            devices: vec![DeviceId(0), DeviceId(1)],
            selection_ratio: vec![0.25, 0.75],
            assessment_count: 180,
            execution_count: 2000,
            minute_f1: f1 - 0.01,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(Strategy::Full, 0.7, 0, 0.1 + 0.2), row(Strategy::FixedSingle(DeviceId(1)), 1.0, 3, 1.0 / 3.0)];
        let bytes = encode(&rows).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("strategy,p,seed,micro_f1,ratio_D0,ratio_D1,assessment_count,execution_count,minute_f1\n"));
        assert_eq!(decode(&bytes).unwrap(), rows);
    }

    #[test]
    fn summary_groups_cells() {
        let rows = vec![
            row(Strategy::Qs, 1.0, 0, 0.5),
            row(Strategy::Full, 1.0, 0, 0.8),
            row(Strategy::Qs, 1.0, 1, 0.7),
            row(Strategy::Full, 1.0, 1, 0.9),
            row(Strategy::Qs, 0.7, 0, 0.4),
        ];
        let s = summarize(&rows);
        let keys: Vec<_> = s.iter().map(|c| (c.strategy, c.p, c.runs)).collect();
        assert_eq!(keys, vec![(Strategy::Qs, 0.7, 1), (Strategy::Qs, 1.0, 2), (Strategy::Full, 1.0, 2)]);
        assert!((s[1].f1_mean - 0.6).abs() < 1e-12);
        assert!(format_table(&rows).contains("0.850 ± 0.071"));
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(decode(b"a,b,c\n1,2,3\n").is_err());
    }
}
