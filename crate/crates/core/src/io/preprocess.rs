use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::matrix::LabeledMatrix;
use crate::error::{DncbError, Result};
use crate::model::BoundedMatrix;

/// Methylated (`d`) and unmethylated (`u`) read counts with smoothing `s0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadCountPair {
    pub d: u64,
    pub u: u64,
    pub s0: f64,
}

/// `(s0 + d) / (2 s0 + d + u)`.
pub fn biseq_to_beta(r: ReadCountPair) -> Result<f64> {
    if !(r.s0 > 0.0) || !r.s0.is_finite() {
        return Err(DncbError::domain(format!("smoothing s0={} must be positive", r.s0)));
    }
    Ok((r.s0 + r.d as f64) / (2.0 * r.s0 + r.d as f64 + r.u as f64))
}

/// Read long-format bisulfite counts with header
/// `sample,feature,methylated,unmethylated` and build a samples x features
/// beta-value matrix (labels in first-seen order). Pairs that never appear
/// are unobserved.
pub fn load_biseq(path: &Path, s0: f64) -> Result<LabeledMatrix> {
    read_biseq(BufReader::new(File::open(path)?), path, s0)
}

pub(crate) fn read_biseq<R: Read>(reader: R, path: &Path, s0: f64) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse_err = |row: usize, col: usize, msg: String| DncbError::Parse {
        path: path.to_path_buf(),
        row,
        col,
        msg,
    };
    let headers = rdr.headers()?.clone();
    let want = ["sample", "feature", "methylated", "unmethylated"];
    let idx: Vec<usize> = want
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(w))
                .ok_or_else(|| parse_err(1, 1, format!("missing column {w:?}")))
        })
        .collect::<Result<_>>()?;

    let mut rows: HashMap<String, usize> = HashMap::new();
    let mut cols: HashMap<String, usize> = HashMap::new();
    let mut row_names = Vec::new();
    let mut col_names = Vec::new();
    let mut cells = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let field = |k: usize| rec.get(idx[k]).ok_or_else(|| parse_err(line, idx[k] + 1, "missing field".into()));
        let count = |k: usize| -> Result<u64> {
            let f = field(k)?;
            f.parse().map_err(|_| parse_err(line, idx[k] + 1, format!("not a read count: {f:?}")))
        };
        let sample = field(0)?.to_string();
        let feature = field(1)?.to_string();
        let (d, u) = (count(2)?, count(3)?);
        let i = *rows.entry(sample.clone()).or_insert_with(|| {
            row_names.push(sample);
            row_names.len() - 1
        });
        let j = *cols.entry(feature.clone()).or_insert_with(|| {
            col_names.push(feature);
            col_names.len() - 1
        });
        cells.push((i, j, biseq_to_beta(ReadCountPair { d, u, s0 })?));
    }
    if cells.is_empty() {
        return Err(parse_err(2, 1, "no count rows".into()));
    }
    let mut values = Array2::from_elem((row_names.len(), col_names.len()), f64::NAN);
    let mut observed = Array2::from_elem(values.dim(), false);
    for (i, j, b) in cells {
        values[[i, j]] = b;
        observed[[i, j]] = true;
    }
    let (matrix, _) = BoundedMatrix::new(values, observed)?;
    Ok(LabeledMatrix {
        row_names,
        col_names,
        matrix,
    })
}

/// Sample variance of each column over its observed entries (0 with fewer
/// than two).
pub fn column_variances(m: &BoundedMatrix) -> Vec<f64> {
    m.values()
        .axis_iter(Axis(1))
        .zip(m.observed().axis_iter(Axis(1)))
        .map(|(v, o)| {
            let xs: Vec<f64> = v.iter().zip(o.iter()).filter(|(_, &ob)| ob).map(|(x, _)| *x).collect();
            if xs.len() < 2 {
                return 0.0;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        })
        .collect()
}

/// Keep the `top_n` highest-variance columns, in their original order.
/// Ties go to the lower column index.
pub fn variance_filter(m: &LabeledMatrix, top_n: usize) -> Result<LabeledMatrix> {
    let nj = m.matrix.ncols();
    if top_n == 0 || top_n > nj {
        return Err(DncbError::domain(format!("top_n={top_n} must be in 1..={nj}")));
    }
    let var = column_variances(&m.matrix);
    let mut order: Vec<usize> = (0..nj).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    let mut keep = order[..top_n].to_vec();
    keep.sort_unstable();

    let values = m.matrix.values().select(Axis(1), &keep);
    let observed = m.matrix.observed().select(Axis(1), &keep);
    let (matrix, _) = BoundedMatrix::new(values, observed)?;
    Ok(LabeledMatrix {
        row_names: m.row_names.clone(),
        col_names: keep.iter().map(|&j| m.col_names[j].clone()).collect(),
        matrix,
    })
}
