//! JSON model files.
//!
//! ```json
//! {
//!   "name": "two_state",
//!   "A": [[0.99, 0.0], [0.0, 0.8]],
//!   "B": [[1.0], [1.0]],
//!   "C": [[1.0, 0.2]],
//!   "D": [[0.0]],
//!   "sigma": 1.0,
//!   "x0": [1.0, 1.0],
//!   "Sigma0": [[1.0, 0.0], [0.0, 1.0]]
//! }
//! ```
//!
//! Matrices are row-major nested arrays. `D` defaults to zeros, `Sigma0` to
//! the identity, `x0` to zeros and `sigma` to one.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::LinearGaussianModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<f64>>>,
    #[serde(default = "unit_sigma")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "Sigma0", default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<Vec<Vec<f64>>>,
}

fn unit_sigma() -> f64 {
    1.0
}

fn to_matrix(key: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|row| row.len() != c) {
        return Err(Error::Parse(format!(
            "{key}: row {bad} has {} entries, expected {c}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ModelFile {
    pub fn into_model(self) -> Result<LinearGaussianModel> {
        let a = to_matrix("A", &self.a)?;
        let b = to_matrix("B", &self.b)?;
        let c = to_matrix("C", &self.c)?;
        let m = a.nrows();
        let d = match &self.d {
            Some(d) => to_matrix("D", d)?,
            None => DMatrix::zeros(c.nrows(), b.ncols()),
        };
        let x0 = self
            .x0
            .map(DVector::from_vec)
            .unwrap_or_else(|| DVector::zeros(m));
        let sigma0 = match &self.sigma0 {
            Some(s) => to_matrix("Sigma0", s)?,
            None => DMatrix::identity(m, m),
        };
        Ok(LinearGaussianModel::new(a, b, c, d, self.sigma, x0, sigma0)?.with_name(self.name))
    }

    pub fn from_model(model: &LinearGaussianModel) -> Self {
        Self {
            name: model.name().to_string(),
            a: from_matrix(model.a()),
            b: from_matrix(model.b()),
            c: from_matrix(model.c()),
            d: Some(from_matrix(model.d())),
            sigma: model.sigma(),
            x0: Some(model.x0().iter().copied().collect()),
            sigma0: Some(from_matrix(model.sigma0())),
        }
    }
}

pub fn parse_model(text: &str) -> Result<LinearGaussianModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_model()
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearGaussianModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_model(&text)
}

pub fn model_to_json(model: &LinearGaussianModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model)).expect("model serializes")
}
