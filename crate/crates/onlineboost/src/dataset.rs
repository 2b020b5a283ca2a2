//! Tabular datasets: raw real-valued rows and their binned form.
//!
//! Supported input formats are headerless CSV with the label in the first
//! column (a `--header` style flag skips one line) and LIBSVM sparse text,
//! densified on load. Labels must be integers in `[0, K)`; missing numeric
//! cells are a hard error.

use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Libsvm,
}

/// Which CSV column carries the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelColumn {
    #[default]
    First,
    Last,
}

/// Real-valued rows with class labels, stored row-major.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub labels: Vec<u32>,
    pub features: Vec<f64>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl RawDataset {
    pub fn new(labels: Vec<u32>, features: Vec<f64>, n_features: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Invalid("no rows".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * n_features,
                got: features.len(),
            });
        }
        let n_classes = labels.iter().map(|&y| y as usize + 1).max().unwrap_or(2).max(2);
        Ok(RawDataset {
            labels,
            features,
            n_features,
            n_classes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Widen the label space, e.g. when a subset misses the top classes.
    pub fn with_classes(mut self, n_classes: usize) -> Result<Self> {
        if let Some(&y) = self.labels.iter().find(|&&y| y as usize >= n_classes) {
            return Err(Error::UnknownLabel {
                label: y.to_string(),
                classes: n_classes,
            });
        }
        self.n_classes = n_classes;
        Ok(self)
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> RawDataset {
        let mut labels = Vec::with_capacity(idx.len());
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            labels.push(self.labels[i]);
            features.extend_from_slice(self.row(i));
        }
        RawDataset {
            labels,
            features,
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }
}

/// Rows mapped to integer bin ids, same cardinality as the source.
#[derive(Debug, Clone)]
pub struct BinnedDataset {
    pub labels: Vec<u32>,
    pub bins: Vec<u16>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl BinnedDataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[u16] {
        &self.bins[i * self.n_features..(i + 1) * self.n_features]
    }
}

pub fn load_tabular(path: &Path, format: Format, skip_header: bool) -> Result<RawDataset> {
    load_tabular_with(path, format, skip_header, LabelColumn::First)
}

pub fn load_tabular_with(
    path: &Path,
    format: Format,
    skip_header: bool,
    label: LabelColumn,
) -> Result<RawDataset> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    match format {
        Format::Csv => parse_csv_with(&text, &name, skip_header, label),
        Format::Libsvm => parse_libsvm(&text, &name),
    }
}

pub fn parse_csv(text: &str, path: &str, skip_header: bool) -> Result<RawDataset> {
    parse_csv_with(text, path, skip_header, LabelColumn::First)
}

pub fn parse_csv_with(
    text: &str,
    path: &str,
    skip_header: bool,
    label: LabelColumn,
) -> Result<RawDataset> {
    let mut labels = Vec::new();
    let mut features = Vec::new();
    let mut n_features = None;
    for (lineno, line) in text.lines().enumerate() {
        if skip_header && lineno == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let mut fields: Vec<&str> = line.split(',').collect();
        let label_field = match label {
            LabelColumn::First if !fields.is_empty() => fields.remove(0),
            LabelColumn::Last => fields.pop().unwrap_or(""),
            _ => "",
        };
        labels.push(parse_label(label_field, path, lineno)?);
        let start = features.len();
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("bad numeric value {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("missing or non-finite value {field:?}"),
                });
            }
            features.push(v);
        }
        let got = features.len() - start;
        match n_features {
            None => n_features = Some(got),
            Some(expected) if expected != got => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("row has {got} features, expected {expected}"),
                })
            }
            _ => {}
        }
    }
    if labels.is_empty() {
        return Err(Error::Invalid(format!("{path}: no rows")));
    }
    RawDataset::new(labels, features, n_features.unwrap())
}

pub fn parse_libsvm(text: &str, path: &str) -> Result<RawDataset> {
    struct Row {
        label: u32,
        pairs: Vec<(usize, f64)>,
    }
    let mut rows = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let mut fields = line.split_whitespace();
        let label = parse_label(fields.next().unwrap_or(""), path, lineno)?;
        let mut pairs = Vec::new();
        for field in fields {
            let (idx, val) = field.split_once(':').ok_or_else(|| Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("expected index:value, got {field:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("bad feature index {idx:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: "libsvm feature indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("bad feature value {val:?}"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("non-finite value {val:?}"),
                });
            }
            max_index = max_index.max(idx);
            pairs.push((idx - 1, val));
        }
        rows.push(Row { label, pairs });
    }
    if rows.is_empty() {
        return Err(Error::Invalid(format!("{path}: no rows")));
    }
    let n_features = max_index;
    let mut labels = Vec::with_capacity(rows.len());
    let mut features = vec![0.0; rows.len() * n_features];
    for (i, row) in rows.iter().enumerate() {
        labels.push(row.label);
        for &(j, v) in &row.pairs {
            features[i * n_features + j] = v;
        }
    }
    RawDataset::new(labels, features, n_features)
}

fn parse_label(field: &str, path: &str, lineno: usize) -> Result<u32> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        path: path.into(),
        line: lineno,
        msg: format!("bad label {field:?}"),
    })?;
    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(Error::Parse {
            path: path.into(),
            line: lineno,
            msg: format!("label {field:?} is not a class index"),
        });
    }
    Ok(v as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_basic() {
        let d = parse_csv("1,0.5,2.0\n0,0.1,3.0", "t", false).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.n_features, 2);
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.row(1), &[0.1, 3.0]);
        assert_eq!(d.n_classes, 2);
    }

    #[test]
    fn csv_empty_is_error() {
        let err = parse_csv("", "t", false).unwrap_err();
        assert!(err.to_string().contains("no rows"));
    }

    #[test]
    fn csv_dimension_mismatch() {
        let err = parse_csv("0,1.0,2.0\n1,1.0,2.0,3.0", "t", false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") || msg.contains(":2:"), "{msg}");
        assert!(msg.contains("expected 2"), "{msg}");
    }

    #[test]
    fn csv_rejects_missing_values() {
        assert!(parse_csv("0,1.0,\n", "t", false).is_err());
        assert!(parse_csv("0,1.0,nan\n", "t", false).is_err());
    }

    #[test]
    fn csv_header_skipped() {
        let d = parse_csv("y,a,b\n0,1.0,2.0", "t", true).unwrap();
        assert_eq!(d.n_rows(), 1);
    }

    #[test]
    fn bad_label_rejected() {
        assert!(parse_csv("1.5,1.0\n", "t", false).is_err());
        assert!(parse_csv("-1,1.0\n", "t", false).is_err());
    }

    #[test]
    fn csv_label_last_column() {
        let d = parse_csv_with("0.5,2.0,1\n0.1,3.0,0", "t", false, LabelColumn::Last).unwrap();
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.row(0), &[0.5, 2.0]);
    }

    #[test]
    fn libsvm_densified() {
        let d = parse_libsvm("1 1:0.5 3:2.0\n0 2:1.0\n", "t").unwrap();
        assert_eq!(d.n_features, 3);
        assert_eq!(d.row(0), &[0.5, 0.0, 2.0]);
        assert_eq!(d.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn libsvm_rejects_zero_index() {
        assert!(parse_libsvm("1 0:0.5\n", "t").is_err());
    }
}
