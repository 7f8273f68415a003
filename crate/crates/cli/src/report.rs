//! Benchmark, ablation and stress report rendering.

use std::fmt::Write as _;

use quadbench::eval::Metrics;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub controller: String,
    /// One aggregate per scenario, in the report's scenario order.
    pub cells: Vec<Metrics>,
    /// Runs per scenario that left the error bound early.
    pub failed_runs: Vec<usize>,
}

/// Controllers x scenarios grid of tracking errors in centimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenarios: Vec<String>,
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: &str = "controller,scenario,px,py,pz,pc,rank,failed_runs";

impl Report {
    /// Rank of every row within each scenario by `pc`, 1 = best; ties share the lower rank.
    pub fn ranks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![0; self.scenarios.len()]; self.rows.len()];
        for s in 0..self.scenarios.len() {
            for (i, row) in self.rows.iter().enumerate() {
                let better = self.rows.iter().filter(|r| r.cells[s].pc < row.cells[s].pc).count();
                out[i][s] = better + 1;
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let ranks = self.ranks();
        let mut s = String::new();
        writeln!(s, "{CSV_HEADER}").unwrap();
        for (i, row) in self.rows.iter().enumerate() {
            for (j, scen) in self.scenarios.iter().enumerate() {
                let m = &row.cells[j];
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    row.controller, scen, m.px, m.py, m.pz, m.pc, ranks[i][j], row.failed_runs[j]
                )
                .unwrap();
            }
        }
        s
    }

    /// Parses [`Report::to_csv`] output back into a report.
    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Missing(format!("malformed report: {m}"));
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let mut scenarios: Vec<String> = Vec::new();
        let mut rows: Vec<ReportRow> = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 8 {
                return Err(bad(format!("expected 8 fields, got {}", rec.len())));
            }
            let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(e.to_string()));
            let m = Metrics { px: num(2)?, py: num(3)?, pz: num(4)?, pc: num(5)? };
            let failed: usize = rec[7].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            if !scenarios.iter().any(|s| s == &rec[1]) {
                scenarios.push(rec[1].to_string());
            }
            match rows.last_mut() {
                Some(r) if r.controller == rec[0] => {
                    r.cells.push(m);
                    r.failed_runs.push(failed);
                }
                _ => rows.push(ReportRow { controller: rec[0].to_string(), cells: vec![m], failed_runs: vec![failed] }),
            }
        }
        Ok(Self { scenarios, rows })
    }

    /// Markdown grid with `P_x / P_y / P_z / P_c` per scenario and the rank of `P_c`.
    pub fn to_markdown(&self, title: &str, notes: &[&str]) -> String {
        let ranks = self.ranks();
        let mut s = String::new();
        writeln!(s, "# {title}\n").unwrap();
        for n in notes {
            writeln!(s, "{n}  ").unwrap();
        }
        if !notes.is_empty() {
            writeln!(s).unwrap();
        }
        write!(s, "| Controller |").unwrap();
        for scen in &self.scenarios {
            write!(s, " {scen} P_x | P_y | P_z | P_c (rank) |").unwrap();
        }
        writeln!(s).unwrap();
        write!(s, "|---|").unwrap();
        for _ in &self.scenarios {
            write!(s, "---:|---:|---:|---:|").unwrap();
        }
        writeln!(s).unwrap();
        for (i, row) in self.rows.iter().enumerate() {
            write!(s, "| {} |", row.controller).unwrap();
            for (j, m) in row.cells.iter().enumerate() {
                let flag =
                    if row.failed_runs[j] > 0 { format!(" [{} failed]", row.failed_runs[j]) } else { String::new() };
                write!(s, " {:.2} | {:.2} | {:.2} | {:.2} ({}){} |", m.px, m.py, m.pz, m.pc, ranks[i][j], flag)
                    .unwrap();
            }
            writeln!(s).unwrap();
        }
        s
    }
}

/// One stress-protocol result line.
#[derive(Debug, Clone, PartialEq)]
pub struct StressRow {
    pub name: String,
    pub velocity_mps: f64,
}

pub const STRESS_HEADER: &str = "name,velocity_mps";

pub fn stress_csv_line(row: &StressRow) -> String {
    format!("{},{}", row.name, row.velocity_mps)
}

pub fn parse_stress_csv(text: &str) -> Result<Vec<StressRow>, HarnessError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| HarnessError::Missing(format!("malformed stress report: {e}")))?;
        let velocity_mps = rec
            .get(1)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| HarnessError::Missing("malformed stress report row".into()))?;
        rows.push(StressRow { name: rec[0].to_string(), velocity_mps });
    }
    Ok(rows)
}

pub fn stress_markdown(rows: &[StressRow], cap: f64) -> String {
    let mut s = String::from("# Velocity stress test\n\n| Controller | Max velocity (m/s) |\n|---|---:|\n");
    for r in rows {
        if r.velocity_mps.is_infinite() {
            writeln!(s, "| {} | >= {cap:.2} (cap) |", r.name).unwrap();
        } else {
            writeln!(s, "| {} | {:.2} |", r.name, r.velocity_mps).unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> Report {
        let m = |x: f64| Metrics::from_axes(x, 2.0 * x, 0.5);
        Report {
            scenarios: vec!["hover".into(), "ellipse".into()],
            rows: vec![
                ReportRow { controller: "PID".into(), cells: vec![m(1.0), m(3.0)], failed_runs: vec![0, 0] },
                ReportRow { controller: "eW-R-u".into(), cells: vec![m(0.5), m(3.0)], failed_runs: vec![0, 1] },
            ],
        }
    }

    #[test]
    fn ranks_share_ties() {
        assert_eq!(report().ranks(), vec![vec![2, 1], vec![1, 1]]);
    }

    #[test]
    fn csv_round_trip() {
        let r = report();
        assert_eq!(Report::from_csv(&r.to_csv()).unwrap(), r);
    }

    #[test]
    fn markdown_has_one_line_per_row() {
        let md = report().to_markdown("Tracking error (cm)", &["note"]);
        assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 3);
        assert!(md.contains("[1 failed]"));
    }

    #[test]
    fn stress_rendering() {
        let rows = vec![
            StressRow { name: "teleport".into(), velocity_mps: f64::INFINITY },
            StressRow { name: "PID".into(), velocity_mps: 1.234 },
        ];
        let csv: String = std::iter::once(STRESS_HEADER.to_string())
            .chain(rows.iter().map(stress_csv_line))
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(parse_stress_csv(&csv).unwrap(), rows);
        let md = stress_markdown(&rows, 3.0);
        assert!(md.contains("| PID | 1.23 |"));
        assert!(md.contains(">= 3.00 (cap)"));
    }
}
