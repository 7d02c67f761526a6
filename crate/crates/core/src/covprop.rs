//! Covariance propagation: open-loop Lyapunov recursion, Kalman a-priori
//! (predictor) recursion, their steady states, and the joint moments of two
//! Kalman predictors driven by the same realized outputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::linmodel::LinearGaussianModel;

/// Measurement-noise term `R` in the innovation covariance `C P C^T + R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnovationNoise {
    /// `R = sigma^2 D D^T`, the covariance of the `D d_t` term in the output.
    #[default]
    OutputFeedthrough,
    /// `R = sigma^2 B^T B`, the form printed in the original filter
    /// recursion. Only defined when the noise and output dimensions agree.
    InputGram,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub innovation: InnovationNoise,
    /// Account for the same `d_t` entering both the state update and the
    /// output (`E[B d (D d)^T] = sigma^2 B D^T`). Off by default.
    pub correlated_noise: bool,
    /// Max-abs fixed-point defect accepted by the Riccati iteration.
    pub riccati_tol: f64,
    pub max_iter: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            innovation: InnovationNoise::OutputFeedthrough,
            correlated_noise: false,
            riccati_tol: 1e-12,
            max_iter: 1_000_000,
        }
    }
}

/// Symmetric PSD covariances `Sigma_0 .. Sigma_n`, repaired on insertion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovTrajectory {
    matrices: Vec<DMatrix<f64>>,
}

impl CovTrajectory {
    pub fn push(&mut self, m: &DMatrix<f64>) -> Result<()> {
        self.matrices.push(linalg::psd_repair(m)?);
        Ok(())
    }
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }
    pub fn len(&self) -> usize {
        self.matrices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
    pub fn last(&self) -> Option<&DMatrix<f64>> {
        self.matrices.last()
    }
}

impl std::ops::Index<usize> for CovTrajectory {
    type Output = DMatrix<f64>;
    fn index(&self, i: usize) -> &DMatrix<f64> {
        &self.matrices[i]
    }
}

/// A-priori state of a Kalman predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    /// Predictor gain `L` in `x_{t+1} = A x_t + L (y_t - C x_t)`; equals
    /// `A K_t` for the filter-form gain `K_t = P C^T S^{-1}`.
    pub gain: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `A Sigma A^T + sigma^2 B B^T`
pub fn lyapunov_step(
    cov: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: f64,
) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    check_square("A", a, m)?;
    check_square("Sigma", cov, m)?;
    if b.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "B must have {m} rows, got {}",
            b.nrows()
        )));
    }
    let next = a * cov * a.transpose() + b * b.transpose() * (sigma * sigma);
    linalg::psd_repair(&next)
}

/// `Sigma_0 .. Sigma_n` of the open-loop state covariance.
pub fn lyapunov_trajectory(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: f64,
    initial: &DMatrix<f64>,
    n: usize,
) -> Result<CovTrajectory> {
    let mut traj = CovTrajectory::default();
    let mut cov = initial.clone();
    traj.push(&cov)?;
    for _ in 0..n {
        cov = lyapunov_step(&cov, a, b, sigma)?;
        traj.push(&cov)?;
    }
    Ok(traj)
}

/// Stationary state covariance `Sigma = A Sigma A^T + sigma^2 B B^T`.
pub fn lyapunov_steady(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    check_square("A", a, m)?;
    if b.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "B must have {m} rows, got {}",
            b.nrows()
        )));
    }
    let rho = linalg::spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::Unstable { spectral_radius: rho });
    }
    let q = b * b.transpose() * (sigma * sigma);
    let x = linalg::discrete_lyapunov(a, &q, 1e-12)?;
    linalg::psd_repair(&x)
}

/// Innovation noise term `R` for `model` under `opts`.
pub fn innovation_noise(model: &LinearGaussianModel, opts: &FilterOptions) -> Result<DMatrix<f64>> {
    let s2 = model.sigma() * model.sigma();
    match opts.innovation {
        InnovationNoise::OutputFeedthrough => Ok(model.d() * model.d().transpose() * s2),
        InnovationNoise::InputGram => {
            if model.noise_inputs() != model.outputs() {
                return Err(Error::DimensionMismatch(format!(
                    "input-gram innovation needs as many noise inputs as outputs ({} vs {})",
                    model.noise_inputs(),
                    model.outputs()
                )));
            }
            Ok(model.b().transpose() * model.b() * s2)
        }
    }
}

fn cross_noise(model: &LinearGaussianModel, opts: &FilterOptions) -> DMatrix<f64> {
    if opts.correlated_noise {
        model.b() * model.d().transpose() * (model.sigma() * model.sigma())
    } else {
        DMatrix::zeros(model.states(), model.outputs())
    }
}

/// Covariance/gain update shared by the public entry points. `r` and `cross`
/// are precomputed so the steady-state loop does not rebuild them.
fn predictor_step(
    p: &DMatrix<f64>,
    model: &LinearGaussianModel,
    q_proc: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    step: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (a, c) = (model.a(), model.c());
    let s = c * p * c.transpose() + r;
    let apct = a * p * c.transpose() + cross;
    let apat = a * p * a.transpose();
    if s.iter().all(|v| *v == 0.0) {
        // Output carries no information: open-loop propagation.
        let gain = DMatrix::zeros(model.states(), model.outputs());
        return Ok((linalg::symmetrize(&(apat + q_proc)), gain));
    }
    let (s_inv, _) =
        linalg::spd_inverse_logdet(&s).ok_or(Error::SingularInnovation { step })?;
    let gain = &apct * s_inv;
    let next = apat + q_proc - &gain * apct.transpose();
    Ok((linalg::symmetrize(&next), gain))
}

/// One a-priori covariance step: returns `(P_next, L)` with predictor gain `L`.
pub fn kalman_cov_step(
    p: &DMatrix<f64>,
    model: &LinearGaussianModel,
    opts: &FilterOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_square("P", p, model.states())?;
    let r = innovation_noise(model, opts)?;
    let cross = cross_noise(model, opts);
    let (next, gain) = predictor_step(p, model, &model.process_noise(), &r, &cross, 0)?;
    Ok((linalg::psd_repair(&next)?, gain))
}

const STALL_WINDOW: usize = 10_000;

/// Steady-state a-priori covariance by fixed-point iteration of
/// [`kalman_cov_step`], starting from the model's `Sigma0`.
pub fn riccati_steady(model: &LinearGaussianModel, opts: &FilterOptions) -> Result<RiccatiSolution> {
    let r = innovation_noise(model, opts)?;
    let cross = cross_noise(model, opts);
    let q_proc = model.process_noise();
    let mut p = model.sigma0().clone();
    let mut defect = f64::INFINITY;
    let mut checkpoint = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let (next, _) = predictor_step(&p, model, &q_proc, &r, &cross, it - 1)?;
        defect = linalg::max_abs_diff(&next, &p);
        p = next;
        // A solvable recursion contracts geometrically; a flat defect means
        // linear growth along a direction the output cannot see.
        let stalled = it % STALL_WINDOW == 0 && {
            let flat = defect >= 0.999 * checkpoint;
            checkpoint = defect;
            flat
        };
        if stalled || !defect.is_finite() || linalg::max_abs(&p) > 1e300 {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: defect,
            });
        }
        if defect < opts.riccati_tol {
            let p = linalg::psd_repair(&p)?;
            let (check, _) = predictor_step(&p, model, &q_proc, &r, &cross, it)?;
            return Ok(RiccatiSolution {
                residual: linalg::max_abs_diff(&check, &p),
                p,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: defect,
    })
}

/// A Kalman one-step predictor that consumes outputs one at a time.
#[derive(Debug, Clone)]
pub struct KalmanPredictor {
    model: LinearGaussianModel,
    r: DMatrix<f64>,
    cross: DMatrix<f64>,
    q_proc: DMatrix<f64>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    step: usize,
}

impl KalmanPredictor {
    pub fn new(model: &LinearGaussianModel, opts: &FilterOptions) -> Result<Self> {
        Ok(Self {
            r: innovation_noise(model, opts)?,
            cross: cross_noise(model, opts),
            q_proc: model.process_noise(),
            mean: model.x0().clone(),
            cov: model.sigma0().clone(),
            model: model.clone(),
            step: 0,
        })
    }

    /// Predictive mean and covariance of the next output.
    pub fn predicted_output(&self) -> (DVector<f64>, DMatrix<f64>) {
        let c = self.model.c();
        (c * &self.mean, c * &self.cov * c.transpose() + &self.r)
    }

    pub fn state(&self) -> Result<FilterState> {
        let (_, gain) = predictor_step(
            &self.cov,
            &self.model,
            &self.q_proc,
            &self.r,
            &self.cross,
            self.step,
        )?;
        Ok(FilterState {
            prior_mean: self.mean.clone(),
            prior_cov: self.cov.clone(),
            gain,
        })
    }

    /// Incorporate `y_t` and advance to the prior for `t + 1`.
    pub fn observe(&mut self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.model.outputs() {
            return Err(Error::LengthMismatch {
                expected: self.model.outputs(),
                got: y.len(),
            });
        }
        let (next, gain) = predictor_step(
            &self.cov,
            &self.model,
            &self.q_proc,
            &self.r,
            &self.cross,
            self.step,
        )?;
        let innovation = y - self.model.c() * &self.mean;
        self.mean = self.model.a() * &self.mean + gain * innovation;
        self.cov = linalg::psd_repair(&next)?;
        self.step += 1;
        Ok(())
    }
}

/// Moments of two predictors at one step: one built on the truth model, one
/// on an approximate model, both fed the truth model's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledStep {
    /// Innovation covariance of the truth predictor, `C P C^T + R`.
    pub truth_innovation: DMatrix<f64>,
    /// Innovation covariance of the approximate predictor.
    pub approx_innovation: DMatrix<f64>,
    /// `E[y_hat - z_hat]` over output histories.
    pub discrepancy_mean: DVector<f64>,
    /// `Cov[y_hat - z_hat]` over output histories.
    pub discrepancy_cov: DMatrix<f64>,
}

impl CoupledStep {
    /// `E[(y_hat - z_hat)(y_hat - z_hat)^T]`
    pub fn discrepancy_second_moment(&self) -> DMatrix<f64> {
        &self.discrepancy_cov + &self.discrepancy_mean * self.discrepancy_mean.transpose()
    }
}

fn check_comparable(truth: &LinearGaussianModel, approx: &LinearGaussianModel) -> Result<()> {
    if truth.outputs() != approx.outputs() {
        return Err(Error::DimensionMismatch(format!(
            "output dimensions differ: {} vs {}",
            truth.outputs(),
            approx.outputs()
        )));
    }
    if truth.noise_inputs() != approx.noise_inputs() {
        return Err(Error::DimensionMismatch(format!(
            "noise dimensions differ: {} vs {}",
            truth.noise_inputs(),
            approx.noise_inputs()
        )));
    }
    Ok(())
}

/// Closed-loop transition and noise gain of the stacked vector
/// `(x, x_hat, w_hat)` under predictor gains `lp`, `lq`.
fn stacked_dynamics(
    truth: &LinearGaussianModel,
    approx: &LinearGaussianModel,
    lp: &DMatrix<f64>,
    lq: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, ma, p) = (truth.states(), approx.states(), truth.noise_inputs());
    let n = 2 * m + ma;
    let c = truth.c();
    let ca = approx.c();
    let mut f = DMatrix::zeros(n, n);
    f.view_mut((0, 0), (m, m)).copy_from(truth.a());
    f.view_mut((m, 0), (m, m)).copy_from(&(lp * c));
    f.view_mut((m, m), (m, m)).copy_from(&(truth.a() - lp * c));
    f.view_mut((2 * m, 0), (ma, m)).copy_from(&(lq * c));
    f.view_mut((2 * m, 2 * m), (ma, ma)).copy_from(&(approx.a() - lq * ca));
    let mut g = DMatrix::zeros(n, p);
    g.view_mut((0, 0), (m, p)).copy_from(truth.b());
    g.view_mut((m, 0), (m, p)).copy_from(&(lp * truth.d()));
    g.view_mut((2 * m, 0), (ma, p)).copy_from(&(lq * truth.d()));
    (f, g)
}

fn discrepancy_map(truth: &LinearGaussianModel, approx: &LinearGaussianModel) -> DMatrix<f64> {
    let (m, ma, q) = (truth.states(), approx.states(), truth.outputs());
    let mut h = DMatrix::zeros(q, 2 * m + ma);
    h.view_mut((0, m), (q, m)).copy_from(truth.c());
    h.view_mut((0, 2 * m), (q, ma)).copy_from(&(-approx.c()));
    h
}

/// Steps a truth predictor and an approximate predictor forward together,
/// both driven by outputs realized from the truth model.
///
/// The stacked vector `(x_t, x_hat_t, w_hat_t)` evolves linearly in the
/// shared noise `d_t`, so its mean and covariance propagate exactly; the
/// output discrepancy is a linear map of it.
#[derive(Debug, Clone)]
pub struct CoupledPropagator {
    truth: LinearGaussianModel,
    approx: LinearGaussianModel,
    rt: DMatrix<f64>,
    ra: DMatrix<f64>,
    xt: DMatrix<f64>,
    xa: DMatrix<f64>,
    qt: DMatrix<f64>,
    qa: DMatrix<f64>,
    h: DMatrix<f64>,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    joint: DMatrix<f64>,
    mean: DVector<f64>,
    step: usize,
}

impl CoupledPropagator {
    pub fn new(
        truth: &LinearGaussianModel,
        approx: &LinearGaussianModel,
        opts: &FilterOptions,
    ) -> Result<Self> {
        check_comparable(truth, approx)?;
        let (m, ma) = (truth.states(), approx.states());
        let joint = linalg::block_diag(&[
            truth.sigma0(),
            &DMatrix::zeros(m, m),
            &DMatrix::zeros(ma, ma),
        ]);
        let mut mean = DVector::zeros(2 * m + ma);
        mean.rows_mut(0, m).copy_from(truth.x0());
        mean.rows_mut(m, m).copy_from(truth.x0());
        mean.rows_mut(2 * m, ma).copy_from(approx.x0());
        Ok(Self {
            rt: innovation_noise(truth, opts)?,
            ra: innovation_noise(approx, opts)?,
            xt: cross_noise(truth, opts),
            xa: cross_noise(approx, opts),
            qt: truth.process_noise(),
            qa: approx.process_noise(),
            h: discrepancy_map(truth, approx),
            p: truth.sigma0().clone(),
            q: approx.sigma0().clone(),
            joint,
            mean,
            truth: truth.clone(),
            approx: approx.clone(),
            step: 0,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Moments at the current step.
    pub fn current(&self) -> Result<CoupledStep> {
        let (c, ca) = (self.truth.c(), self.approx.c());
        Ok(CoupledStep {
            truth_innovation: linalg::psd_repair(&(c * &self.p * c.transpose() + &self.rt))?,
            approx_innovation: linalg::psd_repair(&(ca * &self.q * ca.transpose() + &self.ra))?,
            discrepancy_mean: &self.h * &self.mean,
            discrepancy_cov: linalg::psd_repair(&(&self.h * &self.joint * self.h.transpose()))?,
        })
    }

    pub fn advance(&mut self) -> Result<()> {
        let t = self.step;
        let (p_next, lp) = predictor_step(&self.p, &self.truth, &self.qt, &self.rt, &self.xt, t)?;
        let (q_next, lq) = predictor_step(&self.q, &self.approx, &self.qa, &self.ra, &self.xa, t)?;
        let (f, g) = stacked_dynamics(&self.truth, &self.approx, &lp, &lq);
        let s2 = self.truth.sigma() * self.truth.sigma();
        self.joint = linalg::psd_repair(&(&f * &self.joint * f.transpose() + &g * g.transpose() * s2))?;
        self.mean = &f * &self.mean;
        self.p = linalg::psd_repair(&p_next)?;
        self.q = linalg::psd_repair(&q_next)?;
        self.step += 1;
        Ok(())
    }
}

/// Moments at steps `0..=n`; see [`CoupledPropagator`].
pub fn coupled_predictions(
    truth: &LinearGaussianModel,
    approx: &LinearGaussianModel,
    n: usize,
    opts: &FilterOptions,
) -> Result<Vec<CoupledStep>> {
    let mut prop = CoupledPropagator::new(truth, approx, opts)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(prop.current()?);
    for _ in 0..n {
        prop.advance()?;
        out.push(prop.current()?);
    }
    Ok(out)
}

/// `Cov[y_hat_t - z_hat_t]` for `t = 0..=n`.
pub fn joint_discrepancy_cov(
    truth: &LinearGaussianModel,
    approx: &LinearGaussianModel,
    n: usize,
    opts: &FilterOptions,
) -> Result<Vec<DMatrix<f64>>> {
    Ok(coupled_predictions(truth, approx, n, opts)?
        .into_iter()
        .map(|s| s.discrepancy_cov)
        .collect())
}

/// Limit of [`coupled_predictions`]: both predictors at their Riccati steady
/// state and the stacked covariance at its Lyapunov fixed point.
pub fn coupled_steady(
    truth: &LinearGaussianModel,
    approx: &LinearGaussianModel,
    opts: &FilterOptions,
) -> Result<CoupledStep> {
    check_comparable(truth, approx)?;
    truth.require_stable()?;
    let p = riccati_steady(truth, opts)?.p;
    let q = riccati_steady(approx, opts)?.p;
    let rt = innovation_noise(truth, opts)?;
    let ra = innovation_noise(approx, opts)?;
    let (_, lp) = predictor_step(&p, truth, &truth.process_noise(), &rt, &cross_noise(truth, opts), 0)?;
    let (_, lq) =
        predictor_step(&q, approx, &approx.process_noise(), &ra, &cross_noise(approx, opts), 0)?;
    let (f, g) = stacked_dynamics(truth, approx, &lp, &lq);
    let rho = linalg::spectral_radius(&f);
    if rho >= 1.0 {
        return Err(Error::Unstable { spectral_radius: rho });
    }
    let s2 = truth.sigma() * truth.sigma();
    let joint = linalg::discrete_lyapunov(&f, &(&g * g.transpose() * s2), 1e-12)?;
    let h = discrepancy_map(truth, approx);
    Ok(CoupledStep {
        truth_innovation: linalg::psd_repair(&(truth.c() * &p * truth.c().transpose() + &rt))?,
        approx_innovation: linalg::psd_repair(&(approx.c() * &q * approx.c().transpose() + &ra))?,
        discrepancy_mean: DVector::zeros(truth.outputs()),
        discrepancy_cov: linalg::psd_repair(&(&h * &joint * h.transpose()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmodel::{freeze, StateSubset};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn two_state() -> LinearGaussianModel {
        LinearGaussianModel::new(
            DMatrix::from_row_slice(2, 2, &[0.99, 0.0, 0.0, 0.8]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.2]),
            DMatrix::zeros(1, 1),
            1.0,
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn lyapunov_step_scalar() {
        let next = lyapunov_step(&scalar(1.0), &scalar(0.99), &scalar(1.0), 1.0).unwrap();
        assert!((next[(0, 0)] - 1.9801).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_step_zero_dynamics() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let next = lyapunov_step(&DMatrix::identity(2, 2), &DMatrix::zeros(2, 2), &b, 3.0).unwrap();
        assert_eq!(next, &b * b.transpose() * 9.0);
    }

    #[test]
    fn lyapunov_step_diagonal_hand_expanded() {
        let a = DMatrix::from_row_slice(2, 2, &[0.99, 0.0, 0.0, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let next = lyapunov_step(&DMatrix::identity(2, 2), &a, &b, 1.0).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.9801, 1.0, 1.0, 1.64]);
        assert!(linalg::max_abs_diff(&next, &expect) < 1e-15);
    }

    #[test]
    fn lyapunov_step_dimension_mismatch() {
        let err = lyapunov_step(&DMatrix::identity(3, 3), &scalar(0.5), &scalar(1.0), 1.0);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn lyapunov_steady_scalars() {
        let s = lyapunov_steady(&scalar(0.99), &scalar(1.0), 1.0).unwrap();
        assert!((s[(0, 0)] - 1.0 / (1.0 - 0.9801)).abs() < 1e-9);
        assert!((s[(0, 0)] - 50.2513).abs() < 1e-4);
        // Oracle: run the recursion itself until it stalls.
        let mut x = 0.0_f64;
        for _ in 0..2000 {
            x = 0.64 * x + 1.0;
        }
        let s = lyapunov_steady(&scalar(0.8), &scalar(1.0), 1.0).unwrap();
        assert!((s[(0, 0)] - x).abs() < 1e-12);
        assert!((x - 2.7778).abs() < 1e-4);
    }

    #[test]
    fn lyapunov_steady_memoryless_and_unstable() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let s = lyapunov_steady(&DMatrix::zeros(2, 2), &b, 2.0).unwrap();
        assert!(linalg::max_abs_diff(&s, &(&b * b.transpose() * 4.0)) < 1e-15);
        assert!(matches!(
            lyapunov_steady(&scalar(1.0), &scalar(1.0), 1.0),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn kalman_step_without_measurement_is_lyapunov() {
        let m = LinearGaussianModel::from_abc(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.5]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (next, gain) = kalman_cov_step(&p, &m, &FilterOptions::default()).unwrap();
        let lyap = lyapunov_step(&p, m.a(), m.b(), 1.0).unwrap();
        assert!(linalg::max_abs_diff(&next, &lyap) < 1e-15);
        assert_eq!(gain, DMatrix::zeros(2, 1));
    }

    #[test]
    fn kalman_step_scalar_hand_evaluated() {
        // A=0.99, C=1, B=1, sigma=1, P=1, R=1.
        let m = LinearGaussianModel::from_abc(scalar(0.99), scalar(1.0), scalar(1.0))
            .unwrap()
            .with_feedthrough(scalar(1.0))
            .unwrap();
        let (next, gain) = kalman_cov_step(&scalar(1.0), &m, &FilterOptions::default()).unwrap();
        assert!((next[(0, 0)] - 1.49005).abs() < 1e-14);
        assert!((gain[(0, 0)] - 0.495).abs() < 1e-15);
    }

    #[test]
    fn input_gram_innovation() {
        let m = two_state();
        let opts = FilterOptions {
            innovation: InnovationNoise::InputGram,
            ..Default::default()
        };
        assert_eq!(innovation_noise(&m, &opts).unwrap()[(0, 0)], 2.0);
        let wide = LinearGaussianModel::from_abc(
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(
            innovation_noise(&wide, &opts),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn singular_innovation_is_reported() {
        // C P C^T = 0 with nonzero C: P is zero along C.
        let m = LinearGaussianModel::from_abc(
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
        )
        .unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            kalman_cov_step(&p, &m, &FilterOptions::default()),
            Err(Error::SingularInnovation { .. })
        ));
    }

    #[test]
    fn riccati_two_state_converges() {
        let m = two_state();
        let sol = riccati_steady(&m, &FilterOptions::default()).unwrap();
        assert!(sol.residual < 1e-10, "residual {}", sol.residual);
        let (next, _) = kalman_cov_step(&sol.p, &m, &FilterOptions::default()).unwrap();
        assert!(linalg::max_abs_diff(&next, &sol.p) < 1e-10);
    }

    #[test]
    fn riccati_without_measurement_is_lyapunov_steady() {
        let m = LinearGaussianModel::from_abc(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.5]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        let sol = riccati_steady(&m, &FilterOptions::default()).unwrap();
        let lyap = lyapunov_steady(m.a(), m.b(), 1.0).unwrap();
        assert!(linalg::max_abs_diff(&sol.p, &lyap) < 1e-10);
    }

    #[test]
    fn riccati_reports_divergence() {
        // Unit root that the output never sees: covariance grows without bound.
        let m = LinearGaussianModel::from_abc(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        let opts = FilterOptions {
            max_iter: 10_000,
            ..Default::default()
        };
        assert!(matches!(
            riccati_steady(&m, &opts),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn identical_models_have_no_discrepancy() {
        let m = two_state();
        let f = freeze(&m, &StateSubset::empty(), None).unwrap();
        let covs = joint_discrepancy_cov(&m, f.effective(), 20, &FilterOptions::default()).unwrap();
        assert_eq!(covs.len(), 21);
        for c in covs {
            assert!(linalg::max_abs(&c) < 1e-12);
        }
    }

    #[test]
    fn discrepancy_starts_at_zero_and_grows_for_m1() {
        let m = two_state();
        let f = freeze(&m, &StateSubset::new(vec![0]).unwrap(), None).unwrap();
        let steps = coupled_predictions(&m, f.effective(), 10, &FilterOptions::default()).unwrap();
        assert!(steps[0].discrepancy_cov[(0, 0)].abs() < 1e-15);
        assert!(steps[0].discrepancy_mean[0].abs() < 1e-15);
        for w in steps.windows(2) {
            assert!(w[1].discrepancy_cov[(0, 0)] > w[0].discrepancy_cov[(0, 0)]);
        }
    }

    #[test]
    fn coupled_steady_matches_long_run() {
        let m = two_state();
        let f = freeze(&m, &StateSubset::new(vec![1]).unwrap(), None).unwrap();
        let opts = FilterOptions::default();
        let steady = coupled_steady(&m, f.effective(), &opts).unwrap();
        // The frozen-b predictor has a closed-loop pole near 0.998.
        let run = coupled_predictions(&m, f.effective(), 20_000, &opts).unwrap();
        let last = run.last().unwrap();
        eprintln!("{} {} {} {}", last.discrepancy_cov, steady.discrepancy_cov, last.approx_innovation, steady.approx_innovation);
        assert!(linalg::max_abs_diff(&last.discrepancy_cov, &steady.discrepancy_cov) < 1e-9);
        assert!(linalg::max_abs_diff(&last.approx_innovation, &steady.approx_innovation) < 1e-9);
    }

    #[test]
    fn predictor_tracks_filter_covariance() {
        let m = two_state();
        let opts = FilterOptions::default();
        let mut kp = KalmanPredictor::new(&m, &opts).unwrap();
        let st = kp.state().unwrap();
        assert_eq!(st.prior_mean, *m.x0());
        kp.observe(&DVector::from_element(1, 0.3)).unwrap();
        let (expected, _) = kalman_cov_step(m.sigma0(), &m, &opts).unwrap();
        assert!(linalg::max_abs_diff(&kp.state().unwrap().prior_cov, &expected) < 1e-15);
        assert!(kp.observe(&DVector::zeros(2)).is_err());
    }
}
