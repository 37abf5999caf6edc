use serde::{Deserialize, Serialize};
use visk_core::ModalityMask;

use crate::EvalError;

/// One evaluation episode as listed in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub target_index: usize,
    pub slot_xy: [f64; 2],
    pub episode_seed: u64,
    pub success: bool,
    pub duration: f64,
    /// Recording directory, when rollouts were saved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording: Option<String>,
}

/// Success count of one checkpoint over the held-out targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub successes: usize,
    pub n_trials: usize,
    pub episodes: Vec<EpisodeLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub result: CellResult,
}

/// One modality combination; `cells[i]` belongs to column `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub modalities: ModalityMask,
    pub cells: Vec<Vec<SeedResult>>,
}

/// Success-rate grid: rows are modality combinations, columns are
/// evaluation conditions, cells aggregate over training seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub n_trials: usize,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Free-text lines appended under the table.
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Mean and sample standard deviation (`n - 1` denominator) of the counts;
/// a single count has deviation 0.
pub fn mean_std(counts: &[usize]) -> (f64, f64) {
    if counts.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    if counts.len() == 1 {
        return (mean, 0.0);
    }
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `"m.m ± s.s"`.
pub fn cell_text(counts: &[usize]) -> String {
    let (m, s) = mean_std(counts);
    format!("{m:.1} ± {s:.1}")
}

impl EvalReport {
    pub fn new(task: impl Into<String>, n_trials: usize, columns: Vec<String>) -> Self {
        Self { task: task.into(), n_trials, columns, rows: Vec::new(), notes: Vec::new() }
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Success counts of `row` in `column`, in seed order.
    pub fn counts(&self, label: &str, column: &str) -> Option<Vec<usize>> {
        let c = self.columns.iter().position(|x| x == column)?;
        Some(self.row(label)?.cells.get(c)?.iter().map(|s| s.result.successes).collect())
    }

    /// Mean success count of a cell.
    pub fn mean(&self, label: &str, column: &str) -> Option<f64> {
        self.counts(label, column).filter(|c| !c.is_empty()).map(|c| mean_std(&c).0)
    }

    fn check_complete(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::IncompleteReport(m));
        if self.rows.is_empty() || self.columns.is_empty() {
            return bad("no rows or columns".into());
        }
        for row in &self.rows {
            if row.cells.len() != self.columns.len() {
                return bad(format!("row `{}` has {} of {} columns", row.label, row.cells.len(), self.columns.len()));
            }
            for (col, cell) in self.columns.iter().zip(&row.cells) {
                if cell.is_empty() {
                    return bad(format!("row `{}` has no seeds in column `{col}`", row.label));
                }
                for s in cell {
                    let r = &s.result;
                    if r.n_trials != self.n_trials || r.successes > r.n_trials || r.episodes.len() != r.n_trials {
                        return bad(format!("row `{}`, column `{col}`, seed {} is not a full trial set", row.label, s.seed));
                    }
                }
            }
        }
        Ok(())
    }

    fn single_seed(&self) -> bool {
        self.rows.iter().flat_map(|r| &r.cells).any(|c| c.len() == 1)
    }

    pub fn render(&self, format: ReportFormat) -> Result<String, EvalError> {
        self.check_complete()?;
        Ok(match format {
            ReportFormat::Markdown => self.markdown(),
            ReportFormat::Csv => self.csv(),
        })
    }

    fn markdown(&self) -> String {
        let single = self.single_seed();
        let mark = if single { "¹" } else { "" };
        let mut out = format!("# {}\n\nSuccesses out of {} held-out targets, mean ± std over training seeds.\n\n", self.task, self.n_trials);
        out.push_str("| Modalities |");
        for c in &self.columns {
            out.push_str(&format!(" {c} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.columns.len()));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("| {} |", row.label));
            for cell in &row.cells {
                let counts: Vec<usize> = cell.iter().map(|s| s.result.successes).collect();
                let m = if counts.len() == 1 { mark } else { "" };
                out.push_str(&format!(" {}{m} |", cell_text(&counts)));
            }
            out.push('\n');
        }
        out.push_str("\nPer-seed counts:\n\n");
        for row in &self.rows {
            for (col, cell) in self.columns.iter().zip(&row.cells) {
                let parts: Vec<String> = cell.iter().map(|s| format!("seed {}: {}", s.seed, s.result.successes)).collect();
                out.push_str(&format!("- {} / {col}: {}\n", row.label, parts.join(", ")));
            }
        }
        if single {
            out.push_str("\n¹ Single seed: the ± 0.0 is not a spread estimate.\n");
        }
        if !self.notes.is_empty() {
            out.push('\n');
            for n in &self.notes {
                out.push_str(&format!("{n}\n"));
            }
        }
        out
    }

    fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["modalities", "condition", "mean", "std", "seeds", "counts"]).expect("in-memory write");
        for row in &self.rows {
            for (col, cell) in self.columns.iter().zip(&row.cells) {
                let counts: Vec<usize> = cell.iter().map(|s| s.result.successes).collect();
                let (m, s) = mean_std(&counts);
                let per_seed: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
                w.write_record([
                    row.label.clone(),
                    col.clone(),
                    format!("{m:.1}"),
                    format!("{s:.1}"),
                    counts.len().to_string(),
                    per_seed.join(";"),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_of_three() {
        assert_eq!(mean_std(&[6, 8, 7]), (7.0, 1.0));
        assert_eq!(cell_text(&[6, 8, 7]), "7.0 ± 1.0");
        assert_eq!(cell_text(&[4]), "4.0 ± 0.0");
    }
}
