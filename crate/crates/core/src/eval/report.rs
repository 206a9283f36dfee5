//! Pass@1 tables: one row per model, one column per benchmark and
//! instruction setting.

use std::collections::BTreeMap;

use super::{pass_at_1, EvalResult, PassAt1};

const MISSING: &str = "—";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunKey {
    pub model: String,
    pub benchmark: String,
    pub with_instruction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub models: Vec<String>,
    /// `(benchmark, with_instruction)`
    pub columns: Vec<(String, bool)>,
    pub cells: Vec<Vec<Option<PassAt1>>>,
}

pub fn report_table(runs: &BTreeMap<RunKey, Vec<EvalResult>>) -> ReportTable {
    let mut models: Vec<String> = runs.keys().map(|k| k.model.clone()).collect();
    models.dedup();
    let mut columns: Vec<(String, bool)> = runs
        .keys()
        .map(|k| (k.benchmark.clone(), k.with_instruction))
        .collect();
    // w/ ins. before w/o ins. within a benchmark
    columns.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    columns.dedup();
    let cells = models
        .iter()
        .map(|model| {
            columns
                .iter()
                .map(|(bench, with)| {
                    let key = RunKey {
                        model: model.clone(),
                        benchmark: bench.clone(),
                        with_instruction: *with,
                    };
                    runs.get(&key).and_then(|r| pass_at_1(r).ok())
                })
                .collect()
        })
        .collect();
    ReportTable {
        models,
        columns,
        cells,
    }
}

impl ReportTable {
    fn header(&self) -> Vec<String> {
        std::iter::once("Model".to_string())
            .chain(self.columns.iter().map(|(bench, with)| {
                format!("{bench} {}", if *with { "w/ ins." } else { "w/o ins." })
            }))
            .collect()
    }

    fn rows(&self, missing: &str) -> Vec<Vec<String>> {
        self.models
            .iter()
            .zip(&self.cells)
            .map(|(model, cells)| {
                std::iter::once(model.clone())
                    .chain(cells.iter().map(|c| match c {
                        Some(p) => format!("{:.1}", p.percent()),
                        None => missing.to_string(),
                    }))
                    .collect()
            })
            .collect()
    }

    /// Column-aligned plain text.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let rows = self.rows(MISSING);
        let width = |i: usize| {
            std::iter::once(&header[i])
                .chain(rows.iter().map(|r| &r[i]))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        };
        let widths: Vec<usize> = (0..header.len()).map(width).collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&header);
        out.push('\n');
        out.push_str(
            &widths
                .iter()
                .map(|&w| "-".repeat(w))
                .collect::<Vec<_>>()
                .join("-+-"),
        );
        out.push('\n');
        for row in &rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    /// CSV with the same layout; missing cells are empty.
    pub fn to_csv(&self) -> String {
        let escape = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::new();
        for row in std::iter::once(self.header()).chain(self.rows("")) {
            out.push_str(&row.iter().map(|c| escape(c)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}
