use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelVariant;
use crate::eval::{overall_score, MatchCounts, Section};

/// Test-set counts and mean training loss of one trained tagger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub counts: MatchCounts,
    pub loss_per_epoch: f64,
}

/// Results for one (encoder, variant) cell; a missing subtask marks the row absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub encoder: String,
    pub variant: ModelVariant,
    pub trigger: Option<SubtaskResult>,
    pub role: Option<SubtaskResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub encoder: String,
    pub model: String,
    pub absent: bool,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub loss_per_epoch: Option<f64>,
    pub counts: Option<MatchCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub note: String,
    pub rows: Vec<ReportRow>,
}

pub const COLUMNS: [&str; 5] = ["Models", "Precision", "Recall", "F1", "Loss/epoch"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |v| format!("{v:.4}"))
}

impl ReportTable {
    /// Tab-separated; rows grouped under an `# encoder` line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {}\n# {}\n{}\n", self.title, self.note, COLUMNS.join("\t"));
        let mut current: Option<&str> = None;
        for r in &self.rows {
            if current != Some(r.encoder.as_str()) {
                out.push_str(&format!("# encoder: {}\n", r.encoder));
                current = Some(&r.encoder);
            }
            let cells = [
                r.model.clone(),
                fmt_opt(r.precision),
                fmt_opt(r.recall),
                fmt_opt(r.f1),
                fmt_opt(r.loss_per_epoch),
            ];
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }

    /// One JSON object per row, each tagged with the table title.
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).expect("row serializes");
                v["table"] = serde_json::Value::String(self.title.clone());
                v.to_string() + "\n"
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub overall: ReportTable,
    pub trigger: ReportTable,
    pub role: ReportTable,
}

impl AblationReport {
    pub fn tables(&self) -> [&ReportTable; 3] {
        [&self.overall, &self.trigger, &self.role]
    }

    pub fn to_tsv(&self) -> String {
        self.tables().map(ReportTable::to_tsv).join("\n")
    }

    pub fn to_jsonl(&self) -> String {
        self.tables().map(ReportTable::to_jsonl).concat()
    }
}

fn row(encoder: &str, variant: ModelVariant, section: Option<(Section, f64)>) -> ReportRow {
    match section {
        Some((s, loss)) => ReportRow {
            encoder: encoder.to_string(),
            model: variant.display_name().to_string(),
            absent: false,
            precision: Some(s.precision),
            recall: Some(s.recall),
            f1: Some(s.f1),
            loss_per_epoch: Some(loss),
            counts: Some(s.counts),
        },
        None => ReportRow {
            encoder: encoder.to_string(),
            model: variant.display_name().to_string(),
            absent: true,
            precision: None,
            recall: None,
            f1: None,
            loss_per_epoch: None,
            counts: None,
        },
    }
}

/// Builds the three tables for a grid of (encoder, variant) cells. Rows are
/// ordered by encoder name, then variant; cells without results are absent.
pub fn run_ablation(grid: &[(String, ModelVariant)], entries: &[AblationEntry]) -> AblationReport {
    let mut cells: Vec<(String, ModelVariant)> = grid.to_vec();
    cells.sort();
    cells.dedup();
    let by_cell: BTreeMap<(&str, ModelVariant), &AblationEntry> = entries
        .iter()
        .map(|e| ((e.encoder.as_str(), e.variant), e))
        .collect();
    let mut overall = Vec::new();
    let mut trigger = Vec::new();
    let mut role = Vec::new();
    for (enc, v) in &cells {
        let entry = by_cell.get(&(enc.as_str(), *v));
        let t = entry.and_then(|e| e.trigger);
        let r = entry.and_then(|e| e.role);
        let section = |s: Option<SubtaskResult>| s.map(|s| (Section::from_counts(s.counts), s.loss_per_epoch));
        trigger.push(row(enc, *v, section(t)));
        role.push(row(enc, *v, section(r)));
        let both = t.zip(r).map(|(t, r)| {
            let o = overall_score(&Section::from_counts(t.counts), &Section::from_counts(r.counts));
            (o, (t.loss_per_epoch + r.loss_per_epoch) / 2.0)
        });
        overall.push(row(enc, *v, both));
    }
    let table = |title: &str, note: &str, rows| ReportTable {
        title: title.to_string(),
        note: note.to_string(),
        rows,
    };
    AblationReport {
        overall: table(
            "overall",
            "micro-aggregated: tp/fp/fn summed over trigger and role before P/R/F1; Loss/epoch is the mean of both subtasks",
            overall,
        ),
        trigger: table("trigger", "token-level P/R/F1 over trigger mentions keyed by event type", trigger),
        role: table("role", "token-level P/R/F1 over argument mentions keyed by event type and role", role),
    }
}
