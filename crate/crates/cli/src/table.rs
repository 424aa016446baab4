//! Tab-separated result tables.
//!
//! A table is a run of `#` comment lines, a header row and data rows. The
//! leading columns are free-text labels; the remaining ones hold numbers,
//! optionally followed by a relative change against a reference row, as in
//! `26.7 (+6.4%)`. Everything [`Table::render`] writes, [`Table::parse`]
//! reads back.

use std::fmt::Write as _;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    /// Percent change per value column; `None` inside marks an undefined
    /// change (zero reference).
    pub deltas: Option<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub label_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub decimals: usize,
    pub rows: Vec<Row>,
}

/// Rounds half away from zero to `decimals` places.
pub fn round_to(x: f64, decimals: usize) -> f64 {
    let s = 10f64.powi(decimals as i32);
    let r = (x * s).round() / s;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// `100·(x−b)/b` rounded to one decimal; `None` when `b` is zero.
pub fn relative_delta(x: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| round_to(100.0 * (x - b) / b, 1))
}

fn format_value(x: f64, decimals: usize) -> String {
    format!("{:.*}", decimals, round_to(x, decimals))
}

fn format_cell(x: f64, delta: Option<Option<f64>>, decimals: usize) -> String {
    match delta {
        None => format_value(x, decimals),
        Some(Some(d)) => format!("{} ({:+.1}%)", format_value(x, decimals), d),
        Some(None) => format!("{} (n/a)", format_value(x, decimals)),
    }
}

fn parse_number(s: &str, what: &str) -> Result<f64, CliError> {
    s.trim().parse::<f64>().map_err(|_| CliError::Validation(format!("bad number {s:?} in {what}")))
}

fn parse_cell(cell: &str, line: usize) -> Result<(f64, Option<Option<f64>>, usize), CliError> {
    let what = format!("line {line}");
    let (num, delta) = match cell.split_once(" (") {
        None => (cell, None),
        Some((num, rest)) => {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| CliError::Validation(format!("unterminated delta {cell:?} at {what}")))?;
            let d = if inner == "n/a" {
                None
            } else {
                let pct = inner
                    .strip_suffix('%')
                    .ok_or_else(|| CliError::Validation(format!("delta without % in {cell:?} at {what}")))?;
                Some(parse_number(pct, &what)?)
            };
            (num, Some(d))
        }
    };
    let decimals = num.split_once('.').map_or(0, |(_, f)| f.len());
    Ok((parse_number(num, &what)?, delta, decimals))
}

impl Table {
    pub fn new(label_columns: &[&str], value_columns: &[&str], decimals: usize) -> Self {
        Table {
            comments: vec![],
            label_columns: label_columns.iter().map(|s| s.to_string()).collect(),
            value_columns: value_columns.iter().map(|s| s.to_string()).collect(),
            decimals,
            rows: vec![],
        }
    }

    /// Adds a row without deltas. Values are stored as displayed.
    pub fn push(&mut self, labels: &[&str], values: &[f64]) {
        assert_eq!(labels.len(), self.label_columns.len());
        assert_eq!(values.len(), self.value_columns.len());
        self.rows.push(Row {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            values: values.iter().map(|&v| round_to(v, self.decimals)).collect(),
            deltas: None,
        });
    }

    /// Sets every row's deltas against `reference`. Deltas are taken between
    /// displayed values so that a reader can recompute them from the table.
    pub fn set_deltas(&mut self, reference: &[f64]) {
        let reference: Vec<f64> = reference.iter().map(|&b| round_to(b, self.decimals)).collect();
        for row in &mut self.rows {
            row.deltas = Some(row.values.iter().zip(&reference).map(|(&x, &b)| relative_delta(x, b)).collect());
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.comments {
            let _ = writeln!(s, "# {c}");
        }
        let header: Vec<&str> = self.label_columns.iter().chain(&self.value_columns).map(String::as_str).collect();
        let _ = writeln!(s, "{}", header.join("\t"));
        for r in &self.rows {
            let mut cells: Vec<String> = r.labels.clone();
            for (i, &v) in r.values.iter().enumerate() {
                cells.push(format_cell(v, r.deltas.as_ref().map(|d| d[i]), self.decimals));
            }
            let _ = writeln!(s, "{}", cells.join("\t"));
        }
        s
    }

    /// Parses a rendered table. `label_count` says how many leading columns
    /// are labels.
    pub fn parse(text: &str, label_count: usize) -> Result<Table, CliError> {
        let mut comments = vec![];
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.starts_with('#') => {
                    comments.push(l.trim_start_matches('#').strip_prefix(' ').unwrap_or(&l[1..]).to_string())
                }
                Some((_, l)) => break l,
                None => return Err(CliError::Validation("table has no header".into())),
            }
        };
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.len() < label_count {
            return Err(CliError::Validation(format!(
                "header has {} columns, expected at least {label_count}",
                cols.len()
            )));
        }
        let mut t = Table {
            comments,
            label_columns: cols[..label_count].iter().map(|s| s.to_string()).collect(),
            value_columns: cols[label_count..].iter().map(|s| s.to_string()).collect(),
            decimals: 0,
            rows: vec![],
        };
        let mut decimals = None;
        for (n, line) in lines {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != cols.len() {
                return Err(CliError::Validation(format!(
                    "line {}: {} cells, header has {}",
                    n + 1,
                    cells.len(),
                    cols.len()
                )));
            }
            let mut values = vec![];
            let mut deltas = vec![];
            for c in &cells[label_count..] {
                let (v, d, dec) = parse_cell(c, n + 1)?;
                if *decimals.get_or_insert(dec) != dec {
                    return Err(CliError::Validation(format!("line {}: inconsistent decimals", n + 1)));
                }
                values.push(v);
                deltas.push(d);
            }
            let has = deltas.iter().filter(|d| d.is_some()).count();
            if has != 0 && has != deltas.len() {
                return Err(CliError::Validation(format!("line {}: deltas on some columns only", n + 1)));
            }
            t.rows.push(Row {
                labels: cells[..label_count].iter().map(|s| s.to_string()).collect(),
                values,
                deltas: (has != 0).then(|| deltas.into_iter().map(Option::unwrap).collect()),
            });
        }
        t.decimals = decimals.unwrap_or(0);
        Ok(t)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.value_columns.iter().position(|c| c == name)
    }
}
