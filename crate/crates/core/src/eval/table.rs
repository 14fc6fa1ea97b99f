//! Comparison tables of (name, micro-F1, macro-F1) rows at four decimals,
//! with the best value per column flagged.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricsReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Md,
    Txt,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Md),
            "txt" | "text" => Ok(TableFormat::Txt),
            other => Err(format!("unknown table format \"{other}\" (expected csv, md or txt)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    /// `None` marks a run that produced no metrics.
    pub scores: Option<(f64, f64)>,
    pub best_micro: bool,
    pub best_macro: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub row_header: String,
    pub rows: Vec<TableRow>,
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

impl ComparisonTable {
    /// Rows in the given order; ties at four decimals are all flagged.
    pub fn new(row_header: impl Into<String>, rows: Vec<(String, Option<(f64, f64)>)>) -> Self {
        let best = |pick: fn(&(f64, f64)) -> f64| {
            rows.iter().filter_map(|(_, s)| s.as_ref().map(|s| round4(pick(s)))).fold(f64::NEG_INFINITY, f64::max)
        };
        let best_micro = best(|s| s.0);
        let best_macro = best(|s| s.1);
        let rows = rows
            .into_iter()
            .map(|(name, scores)| TableRow {
                best_micro: scores.is_some_and(|s| round4(s.0) == best_micro),
                best_macro: scores.is_some_and(|s| round4(s.1) == best_macro),
                name,
                scores,
            })
            .collect();
        Self { row_header: row_header.into(), rows }
    }

    pub fn render(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Csv => self.render_csv(),
            TableFormat::Md => self.render_md(),
            TableFormat::Txt => self.render_txt(),
        }
    }

    fn cells(&self, row: &TableRow, mark: impl Fn(String, bool) -> String) -> [String; 3] {
        match row.scores {
            Some((micro, macro_)) => [
                row.name.clone(),
                mark(format!("{micro:.4}"), row.best_micro),
                mark(format!("{macro_:.4}"), row.best_macro),
            ],
            None => [row.name.clone(), "failed".to_string(), "failed".to_string()],
        }
    }

    fn render_csv(&self) -> String {
        let mut out = format!("{},micro_f1,macro_f1,best_micro,best_macro\n", self.row_header.to_lowercase());
        for row in &self.rows {
            let (micro, macro_) = match row.scores {
                Some((a, b)) => (format!("{a:.4}"), format!("{b:.4}")),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(out, "{},{micro},{macro_},{},{}", csv_field(&row.name), row.best_micro, row.best_macro);
        }
        out
    }

    fn render_md(&self) -> String {
        let mut out = format!("| {} | Micro-F1 | Macro-F1 |\n|---|---|---|\n", self.row_header);
        for row in &self.rows {
            let [name, micro, macro_] = self.cells(row, |v, best| if best { format!("**{v}**") } else { v });
            let _ = writeln!(out, "| {name} | {micro} | {macro_} |");
        }
        out
    }

    fn render_txt(&self) -> String {
        let header = [self.row_header.clone(), "Micro-F1".to_string(), "Macro-F1".to_string()];
        let body: Vec<[String; 3]> =
            self.rows.iter().map(|r| self.cells(r, |v, best| if best { format!("{v}*") } else { v })).collect();
        let widths: Vec<usize> =
            (0..3).map(|i| body.iter().chain([&header]).map(|r| r[i].len()).max().unwrap_or(0)).collect();
        let line = |cells: &[String; 3]| {
            format!(
                "{:<w0$}  {:>w1$}  {:>w2$}\n",
                cells[0],
                cells[1],
                cells[2],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2]
            )
        };
        let mut out = line(&header);
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 4));
        out.push('\n');
        for cells in &body {
            out.push_str(&line(cells));
        }
        out.push_str("(* best in column)\n");
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_table(runs: &[(String, MetricsReport)]) -> Result<ComparisonTable, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    Ok(ComparisonTable::new(
        "Model",
        runs.iter().map(|(name, r)| (name.clone(), Some((r.micro_f1, r.macro_f1)))).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, Option<(f64, f64)>)]) -> ComparisonTable {
        ComparisonTable::new("Component", rows.iter().map(|(n, s)| (n.to_string(), *s)).collect())
    }

    #[test]
    fn single_row_is_best_in_both_columns() {
        let t = table(&[("TrNP", Some((0.7721, 0.5507)))]);
        assert!(t.rows[0].best_micro && t.rows[0].best_macro);
    }

    #[test]
    fn ties_are_all_flagged() {
        let t = table(&[("a", Some((0.8, 0.3))), ("b", Some((0.8, 0.4))), ("c", Some((0.7, 0.1)))]);
        let flags: Vec<(bool, bool)> = t.rows.iter().map(|r| (r.best_micro, r.best_macro)).collect();
        assert_eq!(flags, [(true, false), (true, true), (false, false)]);
    }

    #[test]
    fn renders_four_decimals() {
        let t = table(&[("T", Some((0.65071, 0.32309))), ("TrNP", Some((0.77214, 0.55066)))]);
        let md = t.render(TableFormat::Md);
        assert!(md.contains("| T | 0.6507 | 0.3231 |"), "{md}");
        assert!(md.contains("| TrNP | **0.7721** | **0.5507** |"), "{md}");
        let csv = t.render(TableFormat::Csv);
        assert_eq!(csv.lines().next().unwrap(), "component,micro_f1,macro_f1,best_micro,best_macro");
        assert!(csv.contains("TrNP,0.7721,0.5507,true,true"));
        let txt = t.render(TableFormat::Txt);
        assert!(txt.contains("0.7721*"));
    }

    #[test]
    fn failed_rows_show_a_gap() {
        let t = table(&[("T", Some((0.5, 0.4))), ("TNP", None)]);
        assert!(!t.rows[1].best_micro);
        assert!(t.render(TableFormat::Txt).contains("failed"));
        assert!(t.render(TableFormat::Csv).contains("TNP,,,false,false"));
    }

    #[test]
    fn empty_runs_are_rejected() {
        assert_eq!(report_table(&[]).unwrap_err(), EvalError::EmptyTable);
    }
}
