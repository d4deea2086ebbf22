use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CSV_HEADER: &str = "id,T,dice,hausdorff_mm,box_iou_final,rounds";

/// One sample evaluated at one round count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    #[serde(rename = "T")]
    pub rounds_requested: usize,
    pub dice: f64,
    pub hausdorff_mm: f64,
    pub box_iou_final: f64,
    pub rounds: usize,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MetricSummary { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    #[serde(rename = "T")]
    pub rounds: usize,
    pub samples: usize,
    pub dice: MetricSummary,
    pub hausdorff_mm: MetricSummary,
    pub box_iou_final: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl EvalReport {
    /// Build the report, deriving aggregates per round count in first-seen order.
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let mut order: Vec<usize> = Vec::new();
        for r in &rows {
            if !order.contains(&r.rounds_requested) {
                order.push(r.rounds_requested);
            }
        }
        let aggregates = order
            .into_iter()
            .map(|t| {
                let group: Vec<&EvalRow> = rows.iter().filter(|r| r.rounds_requested == t).collect();
                let col = |f: fn(&EvalRow) -> f64| group.iter().map(|r| f(r)).collect::<Vec<_>>();
                AggregateRow {
                    rounds: t,
                    samples: group.len(),
                    dice: MetricSummary::of(&col(|r| r.dice)),
                    hausdorff_mm: MetricSummary::of(&col(|r| r.hausdorff_mm)),
                    box_iou_final: MetricSummary::of(&col(|r| r.box_iou_final)),
                }
            })
            .collect();
        EvalReport { rows, aggregates }
    }

    pub fn aggregate(&self, rounds: usize) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.rounds == rounds)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.id, r.rounds_requested, r.dice, r.hausdorff_mm, r.box_iou_final, r.rounds
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Write `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}
