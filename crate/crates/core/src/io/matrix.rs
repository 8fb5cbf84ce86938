use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DncbError, Result};
use crate::model::BoundedMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Csv,
    Tsv,
}

impl Delimiter {
    fn byte(self) -> u8 {
        match self {
            Delimiter::Csv => b',',
            Delimiter::Tsv => b'\t',
        }
    }

    /// `.tsv` / `.tab` files are tab-separated; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => Delimiter::Tsv,
            _ => Delimiter::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixFormat {
    pub delimiter: Delimiter,
    /// First line holds column names.
    pub header: bool,
    /// First field of each line is a row name.
    pub row_names: bool,
}

impl Default for MatrixFormat {
    fn default() -> Self {
        MatrixFormat {
            delimiter: Delimiter::Csv,
            header: true,
            row_names: true,
        }
    }
}

/// A [`BoundedMatrix`] with row (sample) and column (feature) names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    pub matrix: BoundedMatrix,
}

impl LabeledMatrix {
    /// Default labels `r0..`, `c0..`.
    pub fn unlabeled(matrix: BoundedMatrix) -> Self {
        let (ni, nj) = matrix.dim();
        LabeledMatrix {
            row_names: (0..ni).map(|i| format!("r{i}")).collect(),
            col_names: (0..nj).map(|j| format!("c{j}")).collect(),
            matrix,
        }
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan" | "null")
}

/// Read a numeric table. Missing cells (`NA`, empty, `NaN`) become
/// unobserved. Returns the matrix and the number of clamped values.
pub fn load_matrix(path: &Path, format: &MatrixFormat) -> Result<(LabeledMatrix, usize)> {
    let file = File::open(path)?;
    read_matrix(BufReader::new(file), path, format)
}

pub(crate) fn read_matrix<R: Read>(reader: R, path: &Path, format: &MatrixFormat) -> Result<(LabeledMatrix, usize)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter.byte())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |row: usize, col: usize, msg: String| DncbError::Parse {
        path: path.to_path_buf(),
        row,
        col,
        msg,
    };
    let offset = usize::from(format.row_names);
    let mut col_names: Option<Vec<String>> = None;
    let mut row_names = Vec::new();
    let mut values = Vec::new();
    let mut observed = Vec::new();
    let mut width: Option<usize> = None;

    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 1;
        if line == 0 && format.header {
            col_names = Some(rec.iter().skip(offset).map(str::to_string).collect());
            continue;
        }
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let n = rec.len().saturating_sub(offset);
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(parse_err(row, rec.len(), format!("expected {} fields, found {}", w + offset, rec.len())))
            }
            _ => {}
        }
        if format.row_names {
            row_names.push(rec.get(0).unwrap_or_default().to_string());
        } else {
            row_names.push(format!("r{}", row_names.len()));
        }
        for (c, field) in rec.iter().enumerate().skip(offset) {
            if is_missing(field) {
                values.push(f64::NAN);
                observed.push(false);
                continue;
            }
            let x: f64 = field
                .parse()
                .map_err(|_| parse_err(row, c + 1, format!("not a number: {field:?}")))?;
            if !x.is_finite() {
                return Err(parse_err(row, c + 1, format!("non-finite value {field:?}")));
            }
            values.push(x);
            observed.push(true);
        }
    }
    let nj = width.ok_or_else(|| parse_err(1, 1, "no data rows".into()))?;
    let ni = row_names.len();
    let col_names = match col_names {
        Some(names) if names.len() == nj => names,
        Some(names) => {
            return Err(parse_err(1, 1, format!("header has {} names for {nj} columns", names.len())));
        }
        None => (0..nj).map(|j| format!("c{j}")).collect(),
    };
    let values = Array2::from_shape_vec((ni, nj), values).map_err(|e| DncbError::Dimension(e.to_string()))?;
    let observed = Array2::from_shape_vec((ni, nj), observed).map_err(|e| DncbError::Dimension(e.to_string()))?;
    let (matrix, clamped) = BoundedMatrix::new(values, observed)?;
    Ok((
        LabeledMatrix {
            row_names,
            col_names,
            matrix,
        },
        clamped,
    ))
}

/// Write with a header row and row names. Values use the shortest
/// representation that round-trips exactly; unobserved cells are `NA`.
pub fn save_matrix(path: &Path, m: &LabeledMatrix, delimiter: Delimiter) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter.byte())
        .from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec![String::new()];
    header.extend(m.col_names.iter().cloned());
    w.write_record(&header)?;
    let (ni, nj) = m.matrix.dim();
    for i in 0..ni {
        let mut rec = Vec::with_capacity(nj + 1);
        rec.push(m.row_names[i].clone());
        for j in 0..nj {
            rec.push(if m.matrix.is_observed(i, j) {
                m.matrix.value(i, j).to_string()
            } else {
                "NA".to_string()
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a plain real matrix with labels (factor outputs).
pub fn write_labeled_csv<W: Write>(w: W, a: &Array2<f64>, row_names: &[String], col_names: &[String]) -> Result<()> {
    if a.nrows() != row_names.len() || a.ncols() != col_names.len() {
        return Err(DncbError::Dimension(format!(
            "{:?} matrix with {} row and {} column names",
            a.dim(),
            row_names.len(),
            col_names.len()
        )));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![String::new()];
    header.extend(col_names.iter().cloned());
    out.write_record(&header)?;
    for (i, row) in a.outer_iter().enumerate() {
        let mut rec = vec![row_names[i].clone()];
        rec.extend(row.iter().map(|x| x.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str, f: MatrixFormat) -> Result<(LabeledMatrix, usize)> {
        read_matrix(s.as_bytes(), Path::new("mem.csv"), &f)
    }

    #[test]
    fn simple_table() {
        let (m, clamped) = read(",a,b\nx,0.25,0.25\ny,0.25,0.25\n", MatrixFormat::default()).unwrap();
        assert_eq!(clamped, 0);
        assert_eq!(m.matrix.dim(), (2, 2));
        assert_eq!(m.row_names, ["x", "y"]);
        assert_eq!(m.col_names, ["a", "b"]);
        assert!(m.matrix.values().iter().all(|v| *v == 0.25));
    }

    #[test]
    fn clamps_and_missing() {
        let f = MatrixFormat {
            delimiter: Delimiter::Tsv,
            header: false,
            row_names: false,
        };
        let (m, clamped) = read("1.0\t0.5\nNA\t0.3\n", f).unwrap();
        assert_eq!(clamped, 1);
        assert_eq!(m.matrix.value(0, 0), 1.0 - 1e-6);
        assert!(!m.matrix.is_observed(1, 0));
    }

    #[test]
    fn parse_errors_carry_location() {
        match read(",a,b\nx,0.1,zz\n", MatrixFormat::default()) {
            Err(DncbError::Parse { row, col, .. }) => assert_eq!((row, col), (2, 3)),
            other => panic!("{other:?}"),
        }
        match read(",a,b\nx,0.1,0.2\ny,0.3\n", MatrixFormat::default()) {
            Err(DncbError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let vals = Array2::from_shape_fn((3, 4), |(i, j)| 1.0 / (3.0 + (i * 4 + j) as f64) + 1e-17 * j as f64);
        let mut obs = Array2::from_elem((3, 4), true);
        obs[[1, 2]] = false;
        let (bm, _) = BoundedMatrix::new(vals, obs).unwrap();
        let lm = LabeledMatrix::unlabeled(bm);
        save_matrix(&path, &lm, Delimiter::Csv).unwrap();
        let (back, _) = load_matrix(&path, &MatrixFormat::default()).unwrap();
        assert_eq!(back, lm);
    }
}
