//! Long-format panel files and per-column data transforms.
//!
//! A panel file is a CSV with header `t,row_id,col_id,value`. Periods are
//! 1-based in files and 0-based everywhere else; the conversion lives here.
//! A cell is missing when its record is absent or its value is `NA`.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::MaskedSeries;

pub const PANEL_HEADER: [&str; 4] = ["t", "row_id", "col_id", "value"];
pub const MISSING_TOKEN: &str = "NA";

/// A masked series together with the labels of its rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub series: MaskedSeries,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

impl Panel {
    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.row_ids.iter().position(|r| r == id)
    }

    pub fn col_index(&self, id: &str) -> Option<usize> {
        self.col_ids.iter().position(|c| c == id)
    }
}

/// Explicit dimension orders; ids missing from an ordering are an error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Orderings {
    pub rows: Option<Vec<String>>,
    pub cols: Option<Vec<String>>,
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_error(line, format!("{other:?}")),
    }
}

/// One id per line; blank lines are skipped.
pub fn read_ordering(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut ids = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}

struct Vocabulary {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    fixed: bool,
}

impl Vocabulary {
    fn new(order: Option<&[String]>, what: &str) -> Result<Self> {
        let mut v = Self {
            ids: Vec::new(),
            index: HashMap::new(),
            fixed: order.is_some(),
        };
        for id in order.unwrap_or_default() {
            if v.index.insert(id.clone(), v.ids.len()).is_some() {
                return Err(Error::InconsistentVocabulary(format!("{what} ordering lists {id:?} twice")));
            }
            v.ids.push(id.clone());
        }
        Ok(v)
    }

    fn lookup(&mut self, id: &str, what: &str) -> Result<usize> {
        if let Some(&i) = self.index.get(id) {
            return Ok(i);
        }
        if self.fixed {
            return Err(Error::InconsistentVocabulary(format!("{what} {id:?} is not in the given ordering")));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        Ok(self.ids.len() - 1)
    }
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<Panel> {
    load_panel_with(path, &Orderings::default())
}

pub fn load_panel_with(path: impl AsRef<Path>, orderings: &Orderings) -> Result<Panel> {
    read_panel(File::open(path)?, orderings)
}

/// Parses a panel from any reader; ids are ordered by first appearance
/// unless `orderings` fixes them.
pub fn read_panel<R: std::io::Read>(input: R, orderings: &Orderings) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.iter().collect::<Vec<_>>() != PANEL_HEADER {
        return Err(parse_error(1, format!("expected header {}", PANEL_HEADER.join(","))));
    }
    let mut rows = Vocabulary::new(orderings.rows.as_deref(), "row")?;
    let mut cols = Vocabulary::new(orderings.cols.as_deref(), "column")?;
    let mut cells: HashMap<(usize, usize, usize), Option<f64>> = HashMap::new();
    let mut periods = 0usize;

    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(parse_error(line, format!("expected 4 fields, found {}", record.len())));
        }
        let t: usize = record[0]
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| parse_error(line, format!("period {:?} is not a positive integer", &record[0])))?;
        let i = rows.lookup(&record[1], "row")?;
        let j = cols.lookup(&record[2], "column")?;
        let value = match &record[3] {
            MISSING_TOKEN | "" => None,
            text => {
                let v: f64 = text
                    .parse()
                    .map_err(|_| parse_error(line, format!("value {text:?} is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_error(line, format!("value {text:?} is not finite")));
                }
                Some(v)
            }
        };
        if cells.insert((t - 1, i, j), value).is_some() {
            return Err(Error::DuplicateCell {
                t,
                row: record[1].to_string(),
                col: record[2].to_string(),
            });
        }
        periods = periods.max(t);
    }

    let (a, b) = (rows.ids.len(), cols.ids.len());
    if periods == 0 || a == 0 || b == 0 {
        return Err(Error::InvalidShape("panel file has no records".into()));
    }
    let mut values = vec![DMatrix::zeros(a, b); periods];
    let mut mask = vec![DMatrix::from_element(a, b, false); periods];
    for ((t, i, j), v) in cells {
        if let Some(v) = v {
            values[t][(i, j)] = v;
            mask[t][(i, j)] = true;
        }
    }
    Ok(Panel {
        series: MaskedSeries::new(values, mask)?,
        row_ids: rows.ids,
        col_ids: cols.ids,
    })
}

/// Writes every cell of every period, `NA` where unobserved, so the number
/// of periods and both orderings survive a round trip.
pub fn save_panel(path: impl AsRef<Path>, panel: &Panel) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    write_panel(&mut out, panel)?;
    out.flush()?;
    Ok(())
}

pub fn write_panel<W: Write>(out: &mut W, panel: &Panel) -> Result<()> {
    let s = &panel.series;
    if panel.row_ids.len() != s.rows() || panel.col_ids.len() != s.cols() {
        return Err(Error::DimensionMismatch("id lists do not match the series".into()));
    }
    writeln!(out, "{}", PANEL_HEADER.join(","))?;
    for t in 0..s.len() {
        for (i, row) in panel.row_ids.iter().enumerate() {
            for (j, col) in panel.col_ids.iter().enumerate() {
                match s.get(t, i, j) {
                    Some(v) => writeln!(out, "{},{},{},{}", t + 1, quote(row), quote(col), fmt_num(v))?,
                    None => writeln!(out, "{},{},{},{}", t + 1, quote(row), quote(col), MISSING_TOKEN)?,
                }
            }
        }
    }
    Ok(())
}

/// Shortest decimal that parses back to the same `f64`, in exponent form for
/// very large or small magnitudes.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) || field.trim() != field {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Per-column transform along time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    /// `y_t − y_{t−1}`.
    Diff,
    /// `ln y_t − ln y_{t−1}`.
    DiffLn,
    /// Second difference of `ln y_t`.
    Diff2Ln,
}

impl Transform {
    /// Periods consumed at the start of the series.
    pub fn order(self) -> usize {
        match self {
            Transform::None => 0,
            Transform::Diff | Transform::DiffLn => 1,
            Transform::Diff2Ln => 2,
        }
    }

    pub fn uses_log(self) -> bool {
        matches!(self, Transform::DiffLn | Transform::Diff2Ln)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Diff => "diff",
            Transform::DiffLn => "diff_ln",
            Transform::Diff2Ln => "diff2_ln",
        }
    }

    fn apply(self, window: &[f64]) -> f64 {
        match self {
            Transform::None => window[0],
            Transform::Diff => window[1] - window[0],
            Transform::DiffLn => window[1].ln() - window[0].ln(),
            Transform::Diff2Ln => window[2].ln() - 2.0 * window[1].ln() + window[0].ln(),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transform {
    type Err = Error;

    /// Accepts the snake-case names and the symbolic forms `Δ`, `Δln`, `Δ²ln`.
    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        match compact.to_lowercase().as_str() {
            "none" | "" | "level" => Ok(Transform::None),
            "diff" | "δ" | "d" => Ok(Transform::Diff),
            "diff_ln" | "δln" | "dln" => Ok(Transform::DiffLn),
            "diff2_ln" | "δ²ln" | "δ2ln" | "d2ln" => Ok(Transform::Diff2Ln),
            _ => Err(Error::InvalidConfig(format!("unknown transform {s:?}"))),
        }
    }
}

/// Applies `spec[j]` to column `j` of every row. The output drops the first
/// `max_j order(spec[j])` periods; a transformed cell is observed only when
/// its whole input window is. Log transforms reject any observed value that
/// is not strictly positive.
pub fn transform_series(series: &MaskedSeries, spec: &[Transform]) -> Result<MaskedSeries> {
    let (a, b, len) = (series.rows(), series.cols(), series.len());
    if spec.len() != b {
        return Err(Error::DimensionMismatch(format!("{} transforms for {b} columns", spec.len())));
    }
    for (j, tr) in spec.iter().enumerate() {
        if !tr.uses_log() {
            continue;
        }
        for t in 0..len {
            for i in 0..a {
                if let Some(v) = series.get(t, i, j) {
                    if !(v > 0.0) {
                        return Err(Error::NonPositiveForLog { t, row: i, col: j, value: v });
                    }
                }
            }
        }
    }
    let lag = spec.iter().map(|t| t.order()).max().unwrap_or(0);
    if lag >= len {
        return Err(Error::InvalidShape(format!("{len} periods cannot absorb a lag of {lag}")));
    }
    let out_len = len - lag;
    let mut values = vec![DMatrix::zeros(a, b); out_len];
    let mut mask = vec![DMatrix::from_element(a, b, false); out_len];
    let mut window = [0.0; 3];
    for s in 0..out_len {
        let end = s + lag;
        for (j, tr) in spec.iter().enumerate() {
            let start = end - tr.order();
            for i in 0..a {
                let complete = (start..=end).all(|t| series.is_observed(t, i, j));
                if complete {
                    for (w, t) in window.iter_mut().zip(start..=end) {
                        *w = series.values()[t][(i, j)];
                    }
                    values[s][(i, j)] = tr.apply(&window[..=tr.order()]);
                    mask[s][(i, j)] = true;
                }
            }
        }
    }
    MaskedSeries::new(values, mask)
}

/// Reads a `col_id,transform` CSV into one transform per panel column.
/// Columns that are not listed keep their levels.
pub fn read_transforms(path: impl AsRef<Path>, col_ids: &[String]) -> Result<Vec<Transform>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.len() < 2 || &header[0] != "col_id" || &header[1] != "transform" {
        return Err(parse_error(1, "expected header col_id,transform"));
    }
    let mut spec = vec![Transform::None; col_ids.len()];
    let mut seen = vec![false; col_ids.len()];
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(0).unwrap_or_default();
        let j = col_ids
            .iter()
            .position(|c| c == id)
            .ok_or_else(|| Error::InconsistentVocabulary(format!("transform for unknown column {id:?}")))?;
        if std::mem::replace(&mut seen[j], true) {
            return Err(parse_error(line, format!("column {id:?} listed twice")));
        }
        spec[j] = record
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e: Error| parse_error(line, e.to_string()))?;
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Panel> {
        read_panel(text.as_bytes(), &Orderings::default())
    }

    #[test]
    fn one_na_in_a_small_panel() {
        let p = parse("t,row_id,col_id,value\n1,x,u,1\n1,x,v,2\n1,y,u,3\n1,y,v,NA\n2,x,u,5\n2,x,v,6\n2,y,u,7\n2,y,v,8\n").unwrap();
        assert_eq!(crate::panel::observed_fraction(&p.series), 7.0 / 8.0);
        assert_eq!(p.row_ids, ["x", "y"]);
        assert_eq!(p.series.get(1, 1, 0), Some(7.0));
        assert_eq!(p.series.get(0, 1, 1), None);
    }

    #[test]
    fn absent_records_are_missing() {
        let p = parse("t,row_id,col_id,value\n3,b,q,1.5\n1,a,p,2\n").unwrap();
        assert_eq!((p.series.rows(), p.series.cols(), p.series.len()), (2, 2, 3));
        assert_eq!(p.row_ids, ["b", "a"]);
        assert_eq!(p.series.observed_count(), 2);
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(parse("t,row,col,value\n1,a,b,1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("t,row_id,col_id,value\n1,a,b,1\n0,a,b,2\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse("t,row_id,col_id,value\n1,a,b,x\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("t,row_id,col_id,value\n1,a,b,inf\n"), Err(Error::Parse { .. })));
        assert!(matches!(
            parse("t,row_id,col_id,value\n1,a,b,1\n1,a,b,NA\n"),
            Err(Error::DuplicateCell { t: 1, .. })
        ));
        let fixed = Orderings {
            rows: Some(vec!["a".into()]),
            cols: None,
        };
        assert!(matches!(
            read_panel("t,row_id,col_id,value\n1,z,b,1\n".as_bytes(), &fixed),
            Err(Error::InconsistentVocabulary(_))
        ));
    }

    #[test]
    fn explicit_ordering_wins() {
        let order = Orderings {
            rows: Some(vec!["y".into(), "x".into()]),
            cols: Some(vec!["v".into(), "u".into()]),
        };
        let p = read_panel("t,row_id,col_id,value\n1,x,u,1\n1,y,v,4\n".as_bytes(), &order).unwrap();
        assert_eq!(p.series.get(0, 1, 1), Some(1.0));
        assert_eq!(p.series.get(0, 0, 0), Some(4.0));
    }

    #[test]
    fn save_then_load_is_identity() {
        let text = "t,row_id,col_id,value\n1,\"r,1\",u,0.1\n1,\"r,1\",v,NA\n2,\"r,1\",u,-3e-300\n2,\"r,1\",v,NA\n";
        let p = parse(text).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &p).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), text);
        assert_eq!(read_panel(buf.as_slice(), &Orderings::default()).unwrap(), p);
    }

    fn series_from(cols: &[Vec<Option<f64>>]) -> MaskedSeries {
        // one row, columns given as time paths
        let len = cols[0].len();
        let values = (0..len)
            .map(|t| DMatrix::from_fn(1, cols.len(), |_, j| cols[j][t].unwrap_or(0.0)))
            .collect();
        let mask = (0..len)
            .map(|t| DMatrix::from_fn(1, cols.len(), |_, j| cols[j][t].is_some()))
            .collect();
        MaskedSeries::new(values, mask).unwrap()
    }

    #[test]
    fn transform_examples() {
        let s = series_from(&[vec![Some(2.0); 5]]);
        assert_eq!(transform_series(&s, &[Transform::None]).unwrap(), s);
        let d = transform_series(&s, &[Transform::Diff]).unwrap();
        assert_eq!(d.len(), 4);
        assert!(d.values().iter().all(|m| m[(0, 0)] == 0.0));

        let exp_sq = series_from(&[(1..=4).map(|t| Some(((t * t) as f64).exp())).collect()]);
        let d2 = transform_series(&exp_sq, &[Transform::Diff2Ln]).unwrap();
        assert_eq!(d2.len(), 2);
        for m in d2.values() {
            assert!((m[(0, 0)] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transforms_align_on_the_longest_lag() {
        let s = series_from(&[
            vec![Some(1.0), Some(2.0), Some(4.0), Some(7.0)],
            vec![Some(1.0), Some(2.0), Some(4.0), Some(8.0)],
            vec![Some(5.0), Some(6.0), Some(7.0), Some(8.0)],
        ]);
        let out = transform_series(&s, &[Transform::Diff, Transform::Diff2Ln, Transform::None]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.get(0, 0, 0), Some(2.0));
        assert_eq!(out.get(1, 0, 0), Some(3.0));
        assert!(out.get(0, 0, 1).unwrap().abs() < 1e-15);
        assert_eq!(out.get(1, 0, 2), Some(8.0));
    }

    #[test]
    fn windows_propagate_missingness() {
        let s = series_from(&[vec![Some(1.0), None, Some(3.0), Some(4.0), Some(6.0)]]);
        let out = transform_series(&s, &[Transform::Diff]).unwrap();
        let seen: Vec<bool> = (0..4).map(|t| out.is_observed(t, 0, 0)).collect();
        assert_eq!(seen, [false, false, true, true]);
        assert_eq!(out.get(3, 0, 0), Some(2.0));
    }

    #[test]
    fn logs_need_positive_values() {
        let s = series_from(&[vec![Some(1.0), Some(-1.0), Some(3.0)]]);
        assert!(matches!(
            transform_series(&s, &[Transform::DiffLn]),
            Err(Error::NonPositiveForLog { t: 1, row: 0, col: 0, .. })
        ));
        assert!(transform_series(&s, &[Transform::Diff]).is_ok());
    }

    #[test]
    fn transform_names() {
        for t in [Transform::None, Transform::Diff, Transform::DiffLn, Transform::Diff2Ln] {
            assert_eq!(t.as_str().parse::<Transform>().unwrap(), t);
        }
        assert_eq!("Δ²ln".parse::<Transform>().unwrap(), Transform::Diff2Ln);
        assert_eq!("Δ ln".parse::<Transform>().unwrap(), Transform::DiffLn);
        assert!("log".parse::<Transform>().is_err());
    }
}
