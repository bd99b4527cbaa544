//! Comparison reports over run logs: one accuracy row per log, split by
//! dataset metadata, plus a rounds-distribution table. Rendered as CSV for
//! plotting and as aligned text for terminals.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use crate::datasets::DatasetName;

use super::{summarize_log, HarnessError, RunSummary};

/// Summaries of several runs over the same dataset.
#[derive(Debug, Clone)]
pub struct Report {
    pub dataset: DatasetName,
    pub rows: Vec<RunSummary>,
}

/// Summarize each log and combine them. All logs must name the same
/// dataset and contain at least one record.
pub fn report<P: AsRef<Path>>(paths: &[P]) -> Result<Report, HarnessError> {
    if paths.is_empty() {
        return Err(HarnessError::Report("no run logs given".into()));
    }
    let mut dataset: Option<DatasetName> = None;
    let mut rows = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let (header, summary) = summarize_log(path)?;
        if summary.total_records == 0 {
            return Err(HarnessError::Report(format!("{} contains no records", path.display())));
        }
        let name = header.config.dataset.name;
        match dataset {
            None => dataset = Some(name),
            Some(existing) if existing != name => {
                return Err(HarnessError::Report(format!(
                    "logs mix datasets: {existing} and {name} ({})",
                    path.display()
                )));
            }
            Some(_) => {}
        }
        rows.push(summary);
    }
    Ok(Report { dataset: dataset.expect("at least one log"), rows })
}

impl Report {
    /// Category columns: subjects first, then grades, each sorted.
    fn categories(&self) -> Vec<String> {
        let subjects: BTreeSet<&String> =
            self.rows.iter().flat_map(|r| r.by_subject.keys()).collect();
        let grades: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.by_grade.keys()).collect();
        subjects.into_iter().chain(grades).cloned().collect()
    }

    /// Union of observed round counts, ascending.
    fn rounds_domain(&self) -> Vec<u32> {
        self.rows.iter().flat_map(|r| r.rounds.keys().copied()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    fn accuracy_cells(&self, row: &RunSummary) -> Vec<String> {
        let mut cells = Vec::new();
        for category in self.categories() {
            let entry = row.by_subject.get(&category).or_else(|| row.by_grade.get(&category));
            cells.push(match entry {
                Some(c) => format_percent(c.accuracy()),
                None => String::new(),
            });
        }
        cells.push(format_percent(row.accuracy));
        cells.push(row.macro_accuracy.map(format_percent).unwrap_or_default());
        cells.push(row.graded.to_string());
        cells
    }

    /// Per-config accuracy table. Columns: each metadata category, the
    /// micro average, the per-subject macro average, and the denominator.
    pub fn accuracy_csv(&self) -> String {
        let mut header: Vec<String> = vec!["config".into()];
        header.extend(self.categories());
        header.extend(["average".into(), "macro".into(), "n".into()]);
        let mut out = csv_row(&header);
        for row in &self.rows {
            let mut cells = vec![row.label.clone()];
            cells.extend(self.accuracy_cells(row));
            out.push_str(&csv_row(&cells));
        }
        out
    }

    /// Per-config distribution of consensus rounds.
    pub fn rounds_csv(&self) -> String {
        let domain = self.rounds_domain();
        let mut header: Vec<String> = vec!["config".into()];
        header.extend(domain.iter().map(|d| format!("rounds_{d}")));
        let mut out = csv_row(&header);
        for row in &self.rows {
            let mut cells = vec![row.label.clone()];
            cells.extend(domain.iter().map(|d| row.rounds.get(d).copied().unwrap_or(0).to_string()));
            out.push_str(&csv_row(&cells));
        }
        out
    }
}

fn format_percent(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

fn csv_field(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn csv_row(cells: &[String]) -> String {
    let escaped: Vec<String> = cells.iter().map(|c| csv_field(c)).collect();
    format!("{}\n", escaped.join(","))
}

/// Pad-aligned text table.
fn render_table(f: &mut fmt::Formatter<'_>, rows: &[Vec<String>]) -> fmt::Result {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns)
        .map(|i| rows.iter().map(|r| r.get(i).map_or(0, String::len)).max().unwrap_or(0))
        .collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                write!(f, "  ")?;
            }
            if i + 1 == row.len() {
                write!(f, "{cell}")?;
            } else {
                write!(f, "{cell:<width$}", width = widths[i])?;
            }
        }
        writeln!(f)?;
    }
    Ok(())
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dataset: {}", self.dataset)?;
        writeln!(f)?;
        writeln!(f, "accuracy (%)")?;
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["config".to_string()];
        header.extend(self.categories());
        header.extend(["average".into(), "macro".into(), "n".into()]);
        rows.push(header);
        for row in &self.rows {
            let mut cells = vec![row.label.clone()];
            cells.extend(self.accuracy_cells(row));
            rows.push(cells);
        }
        render_table(f, &rows)?;

        writeln!(f)?;
        writeln!(f, "questions per round count")?;
        let domain = self.rounds_domain();
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["config".to_string()];
        header.extend(domain.iter().map(|d| d.to_string()));
        rows.push(header);
        for row in &self.rows {
            let mut cells = vec![row.label.clone()];
            cells.extend(domain.iter().map(|d| row.rounds.get(d).copied().unwrap_or(0).to_string()));
            rows.push(cells);
        }
        render_table(f, &rows)
    }
}
