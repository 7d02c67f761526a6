//! Discrete-time linear Gaussian state-space models.
//!
//! ```text
//! x_{t+1} = A x_t + B d_t
//! y_t     = C x_t + D d_t,      d_t ~ N(0, sigma^2 I)
//! x_0     ~ N(x0, Sigma0)
//! ```
//!
//! Besides validation, this module provides the two structural moves the
//! rest of the crate is built on: partitioning the state into a chosen
//! subset and its complement, and *freezing* a subset (replacing its rows of
//! `A` by identity rows so those coordinates hold their initial value).

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    name: String,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    sigma: f64,
    x0: DVector<f64>,
    sigma0: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        sigma: f64,
        x0: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let m = a.nrows();
        if m == 0 || a.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != m || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {m}xp with p > 0, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        let p = b.ncols();
        if c.ncols() != m || c.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "C must be qx{m} with q > 0, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        let q = c.nrows();
        if d.shape() != (q, p) {
            return Err(Error::DimensionMismatch(format!(
                "D must be {q}x{p}, got {}x{}",
                d.nrows(),
                d.ncols()
            )));
        }
        if x0.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "x0 must have length {m}, got {}",
                x0.len()
            )));
        }
        if sigma0.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "Sigma0 must be {m}x{m}, got {}x{}",
                sigma0.nrows(),
                sigma0.ncols()
            )));
        }
        let finite = a
            .iter()
            .chain(b.iter())
            .chain(c.iter())
            .chain(d.iter())
            .chain(x0.iter())
            .chain(sigma0.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidModel("entries must be finite".into()));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidModel(format!(
                "noise scale sigma must be positive, got {sigma}"
            )));
        }
        let asym = linalg::max_abs_diff(&sigma0, &sigma0.transpose());
        if asym > 1e-12 * linalg::max_abs(&sigma0).max(1.0) {
            return Err(Error::InvalidModel(format!(
                "Sigma0 is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let sigma0 = linalg::psd_repair(&sigma0)
            .map_err(|_| Error::InvalidModel("Sigma0 is not positive semidefinite".into()))?;
        Ok(Self {
            name: String::new(),
            a,
            b,
            c,
            d,
            sigma,
            x0,
            sigma0,
        })
    }

    /// `D = 0`, `sigma = 1`, `x0 = 0`, `Sigma0 = I`.
    pub fn from_abc(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let m = a.nrows();
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d, 1.0, DVector::zeros(m), DMatrix::identity(m, m))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_sigma(self, sigma: f64) -> Result<Self> {
        let name = self.name.clone();
        Ok(Self::new(self.a, self.b, self.c, self.d, sigma, self.x0, self.sigma0)?.with_name(name))
    }

    pub fn with_feedthrough(self, d: DMatrix<f64>) -> Result<Self> {
        let name = self.name.clone();
        Ok(Self::new(self.a, self.b, self.c, d, self.sigma, self.x0, self.sigma0)?.with_name(name))
    }

    pub fn with_initial(self, x0: DVector<f64>, sigma0: DMatrix<f64>) -> Result<Self> {
        let name = self.name.clone();
        Ok(Self::new(self.a, self.b, self.c, self.d, self.sigma, x0, sigma0)?.with_name(name))
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }
    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    /// Number of states `m`.
    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    /// Number of noise inputs `p`.
    pub fn noise_inputs(&self) -> usize {
        self.b.ncols()
    }
    /// Number of outputs `q`.
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `sigma^2 B B^T`
    pub fn process_noise(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose() * (self.sigma * self.sigma)
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }

    /// Errors unless every eigenvalue of `A` lies strictly inside the unit circle.
    pub fn require_stable(&self) -> Result<()> {
        let rho = self.spectral_radius();
        if rho < 1.0 {
            Ok(())
        } else {
            Err(Error::Unstable { spectral_radius: rho })
        }
    }

    /// Noise-free state trajectory `x_0 .. x_n` starting at the initial mean.
    pub fn mean_trajectory(&self, n: usize) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(n + 1);
        let mut x = self.x0.clone();
        for _ in 0..=n {
            let next = &self.a * &x;
            out.push(std::mem::replace(&mut x, next));
        }
        out
    }

    fn replace_dynamics(&self, a: DMatrix<f64>, x0: DVector<f64>) -> Self {
        Self {
            name: self.name.clone(),
            a,
            x0,
            ..self.clone()
        }
    }
}

/// Sorted, duplicate-free list of state indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct StateSubset(Vec<usize>);

impl StateSubset {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::UnsortedSubset(indices));
        }
        Ok(Self(indices))
    }

    /// Sorts and deduplicates.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn all(m: usize) -> Self {
        Self((0..m).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn check(&self, m: usize) -> Result<()> {
        match self.0.iter().find(|&&i| i >= m) {
            Some(&index) => Err(Error::IndexOutOfRange { index, states: m }),
            None => Ok(()),
        }
    }

    pub fn complement(&self, m: usize) -> Self {
        Self((0..m).filter(|i| !self.contains(*i)).collect())
    }

    pub fn is_disjoint(&self, other: &StateSubset) -> bool {
        self.0.iter().all(|i| !other.contains(*i))
    }

    /// Comma-separated 1-based label, e.g. `3 4` for `{2, 3}`.
    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|i| (i + 1).to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for StateSubset {
    /// Printed 1-based, e.g. `(3,4)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

fn select_cols(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub(crate) fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Block views of a model split into a subset (block 1) and its complement
/// (block 2).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    pub first: StateSubset,
    pub second: StateSubset,
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    pub a22: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
}

impl BlockPartition {
    /// Undo the permutation and rebuild `(A, B, C)`.
    pub fn reassemble(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let m = self.first.len() + self.second.len();
        let p = self.b1.ncols().max(self.b2.ncols());
        let q = self.c1.nrows().max(self.c2.nrows());
        let mut a = DMatrix::zeros(m, m);
        let mut b = DMatrix::zeros(m, p);
        let mut c = DMatrix::zeros(q, m);
        let blocks = [
            (&self.first, &self.first, &self.a11),
            (&self.first, &self.second, &self.a12),
            (&self.second, &self.first, &self.a21),
            (&self.second, &self.second, &self.a22),
        ];
        for (rows, cols, blk) in blocks {
            for (i, &r) in rows.indices().iter().enumerate() {
                for (j, &cc) in cols.indices().iter().enumerate() {
                    a[(r, cc)] = blk[(i, j)];
                }
            }
        }
        for (rows, blk) in [(&self.first, &self.b1), (&self.second, &self.b2)] {
            for (i, &r) in rows.indices().iter().enumerate() {
                for j in 0..p {
                    b[(r, j)] = blk[(i, j)];
                }
            }
        }
        for (cols, blk) in [(&self.first, &self.c1), (&self.second, &self.c2)] {
            for (j, &cc) in cols.indices().iter().enumerate() {
                for i in 0..q {
                    c[(i, cc)] = blk[(i, j)];
                }
            }
        }
        (a, b, c)
    }
}

pub fn partition(model: &LinearGaussianModel, subset: &StateSubset) -> Result<BlockPartition> {
    let m = model.states();
    subset.check(m)?;
    let first = subset.clone();
    let second = subset.complement(m);
    let (i1, i2) = (first.indices(), second.indices());
    Ok(BlockPartition {
        a11: select(model.a(), i1, i1),
        a12: select(model.a(), i1, i2),
        a21: select(model.a(), i2, i1),
        a22: select(model.a(), i2, i2),
        b1: select_rows(model.b(), i1),
        b2: select_rows(model.b(), i2),
        c1: select_cols(model.c(), i1),
        c2: select_cols(model.c(), i2),
        first,
        second,
    })
}

/// A model whose `frozen` coordinates are held constant at `frozen_value`.
///
/// Unfrozen rows of `A` are untouched, so the frozen coordinates still drive
/// the rest of the state. `B`, `C`, `D` and `sigma` are those of the base model.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    base: LinearGaussianModel,
    frozen: StateSubset,
    frozen_value: DVector<f64>,
    effective: LinearGaussianModel,
}

impl FrozenModel {
    pub fn base(&self) -> &LinearGaussianModel {
        &self.base
    }
    pub fn frozen(&self) -> &StateSubset {
        &self.frozen
    }
    pub fn frozen_value(&self) -> &DVector<f64> {
        &self.frozen_value
    }
    /// The frozen system as an ordinary model: identity rows at the frozen
    /// indices and the frozen value substituted into the initial mean.
    pub fn effective(&self) -> &LinearGaussianModel {
        &self.effective
    }
}

/// Freeze `subset` at `frozen_value` (defaults to the matching entries of `x0`).
pub fn freeze(
    model: &LinearGaussianModel,
    subset: &StateSubset,
    frozen_value: Option<&DVector<f64>>,
) -> Result<FrozenModel> {
    let m = model.states();
    subset.check(m)?;
    let value = match frozen_value {
        Some(v) => {
            if v.len() != subset.len() {
                return Err(Error::LengthMismatch {
                    expected: subset.len(),
                    got: v.len(),
                });
            }
            v.clone()
        }
        None => DVector::from_iterator(subset.len(), subset.indices().iter().map(|&i| model.x0()[i])),
    };
    let mut a = model.a().clone();
    let mut x0 = model.x0().clone();
    for (k, &i) in subset.indices().iter().enumerate() {
        a.row_mut(i).fill(0.0);
        a[(i, i)] = 1.0;
        x0[i] = value[k];
    }
    Ok(FrozenModel {
        base: model.clone(),
        frozen: subset.clone(),
        frozen_value: value,
        effective: model.replace_dynamics(a, x0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub spectral_radius: f64,
    pub is_schur_stable: bool,
    pub observable: bool,
    pub controllable: bool,
    pub messages: Vec<String>,
}

/// `[C; CA; ...; CA^{m-1}]`
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    let q = c.nrows();
    let mut out = DMatrix::zeros(q * m, m);
    let mut blk = c.clone();
    for k in 0..m {
        out.view_mut((k * q, 0), (q, m)).copy_from(&blk);
        blk = &blk * a;
    }
    out
}

/// `[B, AB, ..., A^{m-1}B]`
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    observability_matrix(&a.transpose(), &b.transpose()).transpose()
}

pub fn validate(model: &LinearGaussianModel) -> ValidationReport {
    let m = model.states();
    let spectral_radius = model.spectral_radius();
    let is_schur_stable = spectral_radius < 1.0;
    let observable = linalg::numerical_rank(&observability_matrix(model.a(), model.c())) == m;
    let controllable = linalg::numerical_rank(&controllability_matrix(model.a(), model.b())) == m;
    let mut messages = Vec::new();
    if !is_schur_stable {
        messages.push(format!(
            "A has an eigenvalue on or outside the unit circle (spectral radius {spectral_radius})"
        ));
    }
    if !observable {
        messages.push("(A, C) is not observable".to_string());
    }
    if !controllable {
        messages.push("(A, B) is not controllable".to_string());
    }
    ValidationReport {
        spectral_radius,
        is_schur_stable,
        observable,
        controllable,
        messages,
    }
}
