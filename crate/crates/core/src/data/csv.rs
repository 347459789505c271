//! Feature files: header `label,f0,f1,…`, one sample per row, label `-1`
//! for unlabeled rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Domain, LabeledDataset};
use crate::error::{Error, Result};

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads a feature CSV. A file whose rows are all `-1` yields an unlabeled
/// dataset. `num_classes` defaults to the largest label plus one.
pub fn load_feature_csv(path: &Path, domain: Domain, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_error(path, 1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "label" {
        return Err(parse_error(path, 1, "header must be `label,f0,f1,...`"));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(parse_error(path, 1, format!("expected column f{j}, found `{c}`")));
        }
    }
    let d = cols.len() - 1;
    let mut values = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != d + 1 {
            return Err(parse_error(path, lineno, format!("expected {} columns, found {}", d + 1, cells.len())));
        }
        let y: i64 = cells[0]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("label `{}` is not an integer", cells[0])))?;
        if y < -1 {
            return Err(parse_error(path, lineno, format!("label {y} is negative")));
        }
        labels.push(y);
        for c in &cells[1..] {
            let v: f64 = c
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("`{c}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(path, lineno, format!("`{c}` is not finite")));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(parse_error(path, 2, "no data rows"));
    }
    let unlabeled = labels.iter().filter(|&&y| y == -1).count();
    let labels = match unlabeled {
        0 => Some(labels.iter().map(|&y| y as usize).collect::<Vec<_>>()),
        u if u == labels.len() => None,
        _ => return Err(parse_error(path, 1, "file mixes labeled and unlabeled (-1) rows")),
    };
    let inferred = labels.as_ref().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1));
    let k = num_classes.unwrap_or(inferred);
    let features = Array2::from_shape_vec((values.len() / d, d), values).expect("row lengths were checked");
    LabeledDataset::new(features, labels, k, domain)
}

/// Writes features with labels, or with `-1` everywhere when `with_labels`
/// is false or the dataset is unlabeled.
pub fn write_feature_csv(path: &Path, ds: &LabeledDataset, with_labels: bool) -> Result<()> {
    let mut out = String::from("label");
    for j in 0..ds.dim() {
        write!(out, ",f{j}").expect("writing to a String");
    }
    out.push('\n');
    let labels = if with_labels { ds.oracle_labels() } else { None };
    for (i, row) in ds.features().rows().into_iter().enumerate() {
        match labels {
            Some(l) => write!(out, "{}", l[i]),
            None => write!(out, "-1"),
        }
        .expect("writing to a String");
        for v in row {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One `label` column per row.
pub fn write_label_csv(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::from("label\n");
    for y in labels {
        writeln!(out, "{y}").expect("writing to a String");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_label_csv(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "label" => {}
        _ => return Err(parse_error(path, 1, "header must be `label`")),
    }
    lines
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| parse_error(path, i + 1, format!("`{}` is not a class index", l.trim())))
        })
        .collect()
}
