use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training inputs `z_i = [x_i; u_i]` and residual targets `y_i` (one row
/// per sample, one column per output dimension).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<DVector<f64>>,
    targets: DMatrix<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<DVector<f64>>, targets: DMatrix<f64>) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::input("dataset must contain at least one sample"));
        }
        if targets.nrows() != n {
            return Err(Error::input(format!(
                "{} inputs but {} target rows",
                n,
                targets.nrows()
            )));
        }
        if targets.ncols() == 0 {
            return Err(Error::input("targets need at least one output column"));
        }
        let d = inputs[0].len();
        if d == 0 {
            return Err(Error::input("inputs must have dimension ≥ 1"));
        }
        if inputs.iter().any(|z| z.len() != d) {
            return Err(Error::input("inputs have inconsistent dimensions"));
        }
        let finite = inputs.iter().all(|z| z.iter().all(|v| v.is_finite()))
            && targets.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::input("dataset contains non-finite values"));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn from_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        let z = inputs.iter().map(|r| DVector::from_vec(r.clone())).collect();
        let y = crate::linalg::matrix_from_nested(targets)?;
        Dataset::new(z, y)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn target_column(&self, d: usize) -> DVector<f64> {
        self.targets.column(d).clone_owned()
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        let z = idx.iter().map(|&i| self.inputs[i].clone()).collect();
        let y = self.targets.select_rows(idx);
        Dataset::new(z, y)
    }

    pub fn push(&self, z: DVector<f64>, y: &DVector<f64>) -> Result<Dataset> {
        let mut inputs = self.inputs.clone();
        inputs.push(z);
        let mut targets = self.targets.clone().insert_row(self.len(), 0.0);
        targets.row_mut(self.len()).copy_from(&y.transpose());
        Dataset::new(inputs, targets)
    }

    /// Parses `z_1,…,z_nz,y_1,…,y_nd` rows; a non-numeric first line is
    /// taken as a header.
    pub fn from_csv_str(text: &str, input_dim: usize) -> Result<Dataset> {
        let mut inputs = Vec::new();
        let mut targets: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let fields = match fields {
                Ok(f) => f,
                Err(_) if inputs.is_empty() && lineno == 0 => continue,
                Err(e) => return Err(Error::input(format!("line {}: {e}", lineno + 1))),
            };
            if fields.len() <= input_dim {
                return Err(Error::input(format!(
                    "line {}: expected more than {input_dim} columns",
                    lineno + 1
                )));
            }
            inputs.push(fields[..input_dim].to_vec());
            targets.push(fields[input_dim..].to_vec());
        }
        Dataset::from_rows(&inputs, &targets)
    }

    pub fn to_rows(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            self.inputs.iter().map(|z| z.iter().copied().collect()).collect(),
            crate::linalg::matrix_to_nested(&self.targets),
        )
    }
}

/// Serialized form used inside model documents.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDoc {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl From<&Dataset> for DatasetDoc {
    fn from(d: &Dataset) -> Self {
        let (inputs, targets) = d.to_rows();
        DatasetDoc { inputs, targets }
    }
}

impl TryFrom<&DatasetDoc> for Dataset {
    type Error = Error;
    fn try_from(doc: &DatasetDoc) -> Result<Self> {
        Dataset::from_rows(&doc.inputs, &doc.targets)
    }
}
