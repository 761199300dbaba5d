//! Data containers and CSV ingestion.
//!
//! A [`DataMatrix`] is a dense numeric table with an aligned observation
//! mask; unobserved cells hold NaN so that any code bypassing the mask
//! poisons its output loudly instead of silently reading stale values.

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Binary observation mask: `true` = observed, `false` = missing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationMask {
    rows: usize,
    cols: usize,
    observed: Vec<bool>,
}

impl ObservationMask {
    pub fn all_observed(rows: usize, cols: usize) -> Self {
        ObservationMask { rows, cols, observed: vec![true; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != rows * cols {
            return Err(Error::invalid(format!(
                "mask length {} does not match {}x{}",
                observed.len(),
                rows,
                cols
            )));
        }
        Ok(ObservationMask { rows, cols, observed })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, observed: bool) {
        self.observed[i * self.cols + j] = observed;
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|&&o| !o).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.missing_count() as f64 / self.observed.len() as f64
    }

    /// Cell-wise conjunction: observed only where both masks observe.
    pub fn and(&self, other: &ObservationMask) -> Result<ObservationMask> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "mask_and",
                lhs: vec![self.rows, self.cols],
                rhs: vec![other.rows, other.cols],
            });
        }
        let observed = self
            .observed
            .iter()
            .zip(&other.observed)
            .map(|(&a, &b)| a && b)
            .collect();
        Ok(ObservationMask { rows: self.rows, cols: self.cols, observed })
    }

    pub fn subset_rows(&self, idx: &[usize]) -> ObservationMask {
        let mut observed = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            observed.extend_from_slice(&self.observed[i * self.cols..(i + 1) * self.cols]);
        }
        ObservationMask { rows: idx.len(), cols: self.cols, observed }
    }

    /// Serialize as CSV of 0/1 integers matching the data file's shape.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        for i in 0..self.rows {
            let line: Vec<&str> = (0..self.cols)
                .map(|j| if self.is_observed(i, j) { "1" } else { "0" })
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<ObservationMask> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path.as_ref())?;
        let mut observed = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            match cols {
                None => cols = Some(record.len()),
                Some(c) if c != record.len() => {
                    return Err(Error::invalid(format!(
                        "mask row {} has {} fields, expected {}",
                        i,
                        record.len(),
                        c
                    )));
                }
                _ => {}
            }
            for (j, field) in record.iter().enumerate() {
                match field.trim() {
                    "1" => observed.push(true),
                    "0" => observed.push(false),
                    other => {
                        return Err(Error::CsvCell {
                            row: i,
                            col: j,
                            msg: format!("mask cell must be 0 or 1, got '{}'", other),
                        });
                    }
                }
            }
            rows += 1;
        }
        ObservationMask::from_vec(rows, cols.unwrap_or(0), observed)
    }
}

/// Dense numeric table with an aligned observation mask.
#[derive(Clone, Debug)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    mask: ObservationMask,
    column_names: Option<Vec<String>>,
}

impl DataMatrix {
    /// A fully-observed matrix.
    pub fn full(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "value length {} does not match {}x{}",
                values.len(),
                rows,
                cols
            )));
        }
        Ok(DataMatrix {
            rows,
            cols,
            values,
            mask: ObservationMask::all_observed(rows, cols),
            column_names: None,
        })
    }

    pub fn with_mask(rows: usize, cols: usize, values: Vec<f64>, mask: ObservationMask) -> Result<Self> {
        if mask.rows() != rows || mask.cols() != cols {
            return Err(Error::ShapeMismatch {
                op: "with_mask",
                lhs: vec![rows, cols],
                rhs: vec![mask.rows(), mask.cols()],
            });
        }
        let mut m = DataMatrix::full(rows, cols, values)?;
        m.mask = mask;
        for i in 0..rows {
            for j in 0..cols {
                if !m.mask.is_observed(i, j) {
                    m.values[i * cols + j] = f64::NAN;
                }
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn set_column_names(&mut self, names: Vec<String>) {
        self.column_names = Some(names);
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.is_observed(i, j)
    }

    /// The observed value at `(i, j)`, or `None` when the cell is missing.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask.is_observed(i, j).then(|| self.values[i * self.cols + j])
    }

    /// Raw cell value; NaN where unobserved.
    pub fn raw(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.values[i * self.cols + j] = value;
        self.mask.set(i, j, true);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed_in_column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).filter_map(move |i| self.get(i, j))
    }

    /// Hide cells according to `extra`: the result observes a cell only
    /// where both this matrix and `extra` do, and hidden values are erased.
    pub fn masked(&self, extra: &ObservationMask) -> Result<DataMatrix> {
        let combined = self.mask.and(extra)?;
        let mut out = self.clone();
        out.mask = combined;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if !out.mask.is_observed(i, j) {
                    out.values[i * self.cols + j] = f64::NAN;
                }
            }
        }
        Ok(out)
    }

    pub fn subset_rows(&self, idx: &[usize]) -> DataMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(&self.values[i * self.cols..(i + 1) * self.cols]);
        }
        DataMatrix {
            rows: idx.len(),
            cols: self.cols,
            values,
            mask: self.mask.subset_rows(idx),
            column_names: self.column_names.clone(),
        }
    }

    /// Write as CSV; missing cells become "NA". Column names, when present,
    /// are written as a header row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        if let Some(names) = &self.column_names {
            writeln!(w, "{}", names.join(","))?;
        }
        for i in 0..self.rows {
            let fields: Vec<String> = (0..self.cols)
                .map(|j| match self.get(i, j) {
                    Some(v) => format!("{}", v),
                    None => "NA".to_string(),
                })
                .collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Options for [`load_csv`].
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Column (by header name or zero-based index) dropped before building
    /// the matrix, e.g. a class-label column.
    pub drop_column: Option<String>,
}

fn is_na_token(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

fn parse_cell(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Load a numeric CSV into a [`DataMatrix`].
///
/// The header row is auto-detected: when the first row contains a field
/// that is neither numeric nor an NA token, it is treated as column names.
/// Empty strings, "NA" and "NaN" parse as missing cells.
pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path.as_ref())?;

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for record in reader.records() {
        records.push(record?);
    }
    if records.is_empty() {
        return Err(Error::invalid(format!(
            "{}: file has no rows",
            path.as_ref().display()
        )));
    }

    let has_header = records[0]
        .iter()
        .any(|f| parse_cell(f).is_none() && !is_na_token(f));
    let mut names: Option<Vec<String>> = None;
    let data_start = if has_header {
        names = Some(records[0].iter().map(|s| s.trim().to_string()).collect());
        1
    } else {
        0
    };
    if records.len() == data_start {
        return Err(Error::invalid(format!(
            "{}: file has a header but no data rows",
            path.as_ref().display()
        )));
    }

    let width = records[data_start].len();
    let drop_idx: Option<usize> = match &options.drop_column {
        None => None,
        Some(spec) => {
            let by_name = names
                .as_ref()
                .and_then(|ns| ns.iter().position(|n| n == spec));
            let idx = by_name.or_else(|| spec.parse::<usize>().ok());
            match idx {
                Some(i) if i < width => Some(i),
                _ => {
                    return Err(Error::invalid(format!(
                        "drop column '{}' not found (width {})",
                        spec, width
                    )));
                }
            }
        }
    };

    let kept: Vec<usize> = (0..width).filter(|j| Some(*j) != drop_idx).collect();
    let cols = kept.len();
    let rows = records.len() - data_start;
    let mut values = Vec::with_capacity(rows * cols);
    let mut observed = Vec::with_capacity(rows * cols);

    for (r, record) in records[data_start..].iter().enumerate() {
        if record.len() != width {
            return Err(Error::invalid(format!(
                "ragged row {}: {} fields, expected {}",
                r + data_start,
                record.len(),
                width
            )));
        }
        for &j in &kept {
            let field = record.get(j).unwrap_or("");
            if is_na_token(field) {
                values.push(f64::NAN);
                observed.push(false);
            } else if let Some(v) = parse_cell(field) {
                values.push(v);
                observed.push(true);
            } else {
                return Err(Error::CsvCell {
                    row: r + data_start,
                    col: j,
                    msg: format!("'{}' is not numeric or an NA token", field),
                });
            }
        }
    }

    let mask = ObservationMask::from_vec(rows, cols, observed)?;
    let mut m = DataMatrix::with_mask(rows, cols, values, mask)?;
    if let Some(ns) = names {
        m.column_names = Some(
            kept.iter()
                .map(|&j| ns.get(j).cloned().unwrap_or_default())
                .collect(),
        );
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_plain_numeric_csv() {
        let f = write_temp("1,2\n3,4\n5,6\n");
        let m = load_csv(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 2));
        assert_eq!(m.values(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.mask().missing_count(), 0);
        assert!(m.column_names().is_none());
    }

    #[test]
    fn na_tokens_become_missing_cells() {
        let f = write_temp("1,NA\n,4\nnan,6\n");
        let m = load_csv(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(m.mask().missing_count(), 3);
        assert!(!m.is_observed(0, 1));
        assert!(!m.is_observed(1, 0));
        assert!(!m.is_observed(2, 0));
        assert_eq!(m.get(1, 1), Some(4.0));
    }

    #[test]
    fn header_is_auto_detected() {
        let f = write_temp("age,height\n1,2\n3,4\n");
        let m = load_csv(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(m.column_names().unwrap(), &["age".to_string(), "height".to_string()]);
        assert_eq!(m.rows(), 2);
    }

    #[test]
    fn drop_column_by_name_and_index() {
        let f = write_temp("a,b,label\n1,2,0\n3,4,1\n");
        let opts = LoadOptions { drop_column: Some("label".into()) };
        let m = load_csv(f.path(), &opts).unwrap();
        assert_eq!(m.cols(), 2);
        assert_eq!(m.column_names().unwrap(), &["a".to_string(), "b".to_string()]);

        let f2 = write_temp("1,2,9\n3,4,9\n");
        let opts2 = LoadOptions { drop_column: Some("2".into()) };
        let m2 = load_csv(f2.path(), &opts2).unwrap();
        assert_eq!(m2.cols(), 2);
        assert_eq!(m2.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let f = write_temp("1,2\n3,oops\n");
        let err = load_csv(f.path(), &LoadOptions::default()).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("column 1"), "{}", err);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let f = write_temp("1,2\n3\n");
        assert!(load_csv(f.path(), &LoadOptions::default()).is_err());
    }

    #[test]
    fn mask_csv_round_trips() {
        let mut mask = ObservationMask::all_observed(2, 3);
        mask.set(0, 1, false);
        mask.set(1, 2, false);
        let mut buf = Vec::new();
        mask.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1,0,1\n1,1,0\n");
        let f = write_temp(std::str::from_utf8(&buf).unwrap());
        let back = ObservationMask::read_csv(f.path()).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn masked_erases_hidden_values() {
        let m = DataMatrix::full(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut extra = ObservationMask::all_observed(2, 2);
        extra.set(0, 0, false);
        let hidden = m.masked(&extra).unwrap();
        assert!(hidden.get(0, 0).is_none());
        assert!(hidden.raw(0, 0).is_nan());
        assert_eq!(hidden.get(1, 1), Some(4.0));
    }
}
