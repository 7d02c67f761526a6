//! Gramians, Hankel singular values, balancing and truncation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg;
use crate::linmodel::{select, LinearGaussianModel, StateSubset};

const GRAMIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GramianKind {
    /// `A P A^T + B B^T = P`, `A^T Q A + C^T C = Q`.
    #[default]
    Discrete,
    /// `A P + P A^T + B B^T = 0`, `A^T Q + Q A + C^T C = 0`.
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianPair {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub kind: GramianKind,
}

impl GramianPair {
    /// Largest absolute entry of each defining equation's residual.
    pub fn residuals(&self, model: &LinearGaussianModel) -> (f64, f64) {
        let (a, b, c) = (model.a(), model.b(), model.c());
        let bb = b * b.transpose();
        let cc = c.transpose() * c;
        match self.kind {
            GramianKind::Discrete => (
                linalg::max_abs(&(a * &self.p * a.transpose() + bb - &self.p)),
                linalg::max_abs(&(a.transpose() * &self.q * a + cc - &self.q)),
            ),
            GramianKind::Continuous => (
                linalg::max_abs(&(a * &self.p + &self.p * a.transpose() + bb)),
                linalg::max_abs(&(a.transpose() * &self.q + &self.q * a + cc)),
            ),
        }
    }
}

/// Solves `A X + X A^T + Q = 0` through the Kronecker-sum system.
fn continuous_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let x = k.lu().solve(&rhs).ok_or(Error::SingularGramian)?;
    Ok(linalg::symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

pub fn gramians(model: &LinearGaussianModel) -> Result<GramianPair> {
    gramians_with(model, GramianKind::Discrete)
}

pub fn gramians_with(model: &LinearGaussianModel, kind: GramianKind) -> Result<GramianPair> {
    let (a, b, c) = (model.a(), model.b(), model.c());
    let bb = b * b.transpose();
    let cc = c.transpose() * c;
    let (p, q) = match kind {
        GramianKind::Discrete => {
            model.require_stable()?;
            (
                linalg::discrete_lyapunov(a, &bb, GRAMIAN_TOL)?,
                linalg::discrete_lyapunov(&a.transpose(), &cc, GRAMIAN_TOL)?,
            )
        }
        GramianKind::Continuous => {
            let abscissa = a
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            if a.nrows() > 0 && abscissa >= 0.0 {
                return Err(Error::Unstable {
                    spectral_radius: abscissa,
                });
            }
            (continuous_lyapunov(a, &bb)?, continuous_lyapunov(&a.transpose(), &cc)?)
        }
    };
    let pair = GramianPair {
        p: linalg::psd_repair(&p)?,
        q: linalg::psd_repair(&q)?,
        kind,
    };
    let (rp, rq) = pair.residuals(model);
    let scale = linalg::max_abs(&pair.p).max(linalg::max_abs(&pair.q)).max(1.0);
    if rp.max(rq) > 1e-10 * scale {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: rp.max(rq),
        });
    }
    Ok(pair)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HankelSpectrum {
    pub values: Vec<f64>,
}

/// `sqrt(eig(P Q))`, computed from the symmetric `P^1/2 Q P^1/2`.
pub fn hankel_singular_values(g: &GramianPair) -> HankelSpectrum {
    let root = linalg::sym_sqrt(&g.p);
    let m = linalg::symmetrize(&(&root * &g.q * &root));
    let mut values: Vec<f64> = if m.nrows() == 0 {
        Vec::new()
    } else {
        SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    };
    values.sort_by(|a, b| b.total_cmp(a));
    HankelSpectrum { values }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedModel {
    pub model: LinearGaussianModel,
    /// `x_balanced = T x`
    pub transform: DMatrix<f64>,
    pub transform_inv: DMatrix<f64>,
    pub hsv: HankelSpectrum,
}

/// Square-root balancing: `P = Lc Lc^T`, `Q = Lo Lo^T`,
/// `Lo^T Lc = U S V^T`, `T = S^-1/2 U^T Lo^T`.
///
/// Each row of `T` is signed so that its largest entry is positive.
pub fn balance(model: &LinearGaussianModel) -> Result<BalancedModel> {
    let g = gramians(model)?;
    let lc = linalg::cholesky(&g.p).ok_or(Error::SingularGramian)?.l();
    let lo = linalg::cholesky(&g.q).ok_or(Error::SingularGramian)?.l();
    let svd = (lo.transpose() * &lc).svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let n = model.states();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let top = svd.singular_values.max();
    if n > 0 && !(svd.singular_values.min() > linalg::RANK_TOL * top) {
        return Err(Error::SingularGramian);
    }

    let mut t = DMatrix::zeros(n, n);
    let mut t_inv = DMatrix::zeros(n, n);
    let v = vt.transpose();
    let lo_t = lo.transpose();
    for (k, &i) in order.iter().enumerate() {
        let s = svd.singular_values[i].sqrt();
        let mut row = (u.column(i).transpose() * &lo_t) / s;
        let mut col = (&lc * v.column(i)) / s;
        let peak = row.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if peak < 0.0 {
            row = -row;
            col = -col;
        }
        t.row_mut(k).copy_from(&row);
        t_inv.column_mut(k).copy_from(&col);
    }

    let sym = |m: DMatrix<f64>| linalg::symmetrize(&m);
    let balanced = LinearGaussianModel::new(
        &t * model.a() * &t_inv,
        &t * model.b(),
        model.c() * &t_inv,
        model.d().clone(),
        model.sigma(),
        &t * model.x0(),
        sym(&t * model.sigma0() * t.transpose()),
    )?
    .with_name(model.name());
    let hsv = HankelSpectrum {
        values: order.iter().map(|&i| svd.singular_values[i]).collect(),
    };
    Ok(BalancedModel {
        model: balanced,
        transform: t,
        transform_inv: t_inv,
        hsv,
    })
}

/// Keep only the states in `keep`, slicing `A`, `B`, `C`, `x0` and `Sigma0`.
pub fn truncate(model: &LinearGaussianModel, keep: &StateSubset) -> Result<LinearGaussianModel> {
    keep.check(model.states())?;
    if keep.is_empty() {
        return Err(Error::InvalidSubset("cannot truncate to zero states".into()));
    }
    let k = keep.indices();
    let inputs: Vec<usize> = (0..model.noise_inputs()).collect();
    let outputs: Vec<usize> = (0..model.outputs()).collect();
    Ok(LinearGaussianModel::new(
        select(model.a(), k, k),
        select(model.b(), k, &inputs),
        select(model.c(), &outputs, k),
        model.d().clone(),
        model.sigma(),
        DVector::from_iterator(k.len(), k.iter().map(|&i| model.x0()[i])),
        select(model.sigma0(), k, k),
    )?
    .with_name(model.name()))
}
