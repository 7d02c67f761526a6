//! KL-rate metrics between a truth model and an approximation.
//!
//! The n-step KL rate compares the one-step predictive output densities of
//! two models, both conditioned on the truth model's output history:
//!
//! ```text
//! dH_n = E_{y_0..y_n} [ ln p(y_n | y_0..y_{n-1}) / q(y_n | y_0..y_{n-1}) ]
//! ```
//!
//! For linear Gaussian models both predictive densities are Gaussian and the
//! expectation is evaluated analytically from the moments produced by
//! [`crate::covprop`]. For the decoupled two-state system the metric also has
//! a scalar closed form, and two such trajectories (freezing either state)
//! cross at a step that can be bracketed analytically.

use nalgebra::{DMatrix, DVector};

use crate::covprop::{self, CoupledPropagator, CoupledStep, FilterOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::linmodel::{FrozenModel, LinearGaussianModel};

/// Gaussian belief over the output.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOutputBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianOutputBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{} for a mean of length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        if linalg::cholesky(&cov).is_none() {
            return Err(Error::SingularCovariance);
        }
        Ok(Self {
            mean,
            cov: linalg::symmetrize(&cov),
        })
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, variance),
        )
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// `KL(p || q)` for Gaussians.
pub fn gaussian_kl(p: &GaussianOutputBelief, q: &GaussianOutputBelief) -> Result<f64> {
    if p.mean.len() != q.mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "beliefs of dimension {} and {}",
            p.mean.len(),
            q.mean.len()
        )));
    }
    let diff = &q.mean - &p.mean;
    let second = &diff * diff.transpose();
    kl_from_moments(&p.cov, &q.cov, &second).ok_or(Error::SingularCovariance)
}

/// `E[KL(N(m_p, Sp) || N(m_q, Sq))]` where only `E[(m_p - m_q)(m_p - m_q)^T]`
/// is known.
fn kl_from_moments(sp: &DMatrix<f64>, sq: &DMatrix<f64>, second: &DMatrix<f64>) -> Option<f64> {
    let (sq_inv, logdet_q) = linalg::spd_inverse_logdet(sq)?;
    let spread = if sp == sq {
        0.0
    } else {
        let (_, logdet_p) = linalg::spd_inverse_logdet(sp)?;
        (&sq_inv * sp).trace() - sp.nrows() as f64 + logdet_q - logdet_p
    };
    let v = 0.5 * (spread + (&sq_inv * second).trace());
    // Round-off only; the exact value is nonnegative.
    Some(v.max(0.0))
}

fn expected_kl(step: &CoupledStep, t: usize) -> Result<f64> {
    kl_from_moments(
        &step.truth_innovation,
        &step.approx_innovation,
        &step.discrepancy_second_moment(),
    )
    .ok_or(Error::SingularInnovation { step: t })
}

/// KL-rate values at steps `0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlTrajectory {
    values: Vec<f64>,
}

impl KlTrajectory {
    /// Negative round-off is clamped to zero; anything else is rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::LengthMismatch {
                expected: 1,
                got: 0,
            });
        }
        if let Some(v) = values.iter().find(|v| !(**v >= -1e-15)) {
            return Err(Error::InvalidModel(format!(
                "KL trajectory value {v} is negative or not a number"
            )));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v.max(0.0)).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }
    pub fn at(&self, n: usize) -> f64 {
        self.values[n]
    }
    pub fn last(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }
}

/// Which state of the decoupled pair is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoupledState {
    /// Freeze `a` (the first state): the `alpha_n` trajectory.
    First,
    /// Freeze `b` (the second state): the `beta_n` trajectory.
    Second,
}

/// How step `n` maps onto the state covariance recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexConvention {
    /// `dH_n` uses `Sigma_n`, so `dH_0` uses the initial covariance.
    #[default]
    StateAtStep,
    /// `dH_n` uses `Sigma_{n+1}`: the covariance is propagated once before
    /// the first output is compared.
    Propagated,
}

impl IndexConvention {
    fn offset(self) -> usize {
        match self {
            IndexConvention::StateAtStep => 0,
            IndexConvention::Propagated => 1,
        }
    }
}

/// Parameters of the decoupled two-state system
///
/// ```text
/// [a; b]_{t+1} = diag(A11, A22) [a; b]_t + [1; 1] d_t,   y_t = C1 a_t + C2 b_t
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoupledParams {
    pub a11: f64,
    pub a22: f64,
    pub c1: f64,
    pub c2: f64,
    pub sigma: f64,
    pub sigma0_11: f64,
    pub sigma0_22: f64,
}

impl DecoupledParams {
    pub fn new(
        a11: f64,
        a22: f64,
        c1: f64,
        c2: f64,
        sigma: f64,
        sigma0_11: f64,
        sigma0_22: f64,
    ) -> Result<Self> {
        let p = Self {
            a11,
            a22,
            c1,
            c2,
            sigma,
            sigma0_11,
            sigma0_22,
        };
        p.check()?;
        Ok(p)
    }

    /// `A11=0.99, A22=0.8, C=[1, 0.2], sigma=1, Sigma0=I`.
    pub fn two_state() -> Self {
        Self {
            a11: 0.99,
            a22: 0.8,
            c1: 1.0,
            c2: 0.2,
            sigma: 1.0,
            sigma0_11: 1.0,
            sigma0_22: 1.0,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.a11.abs() < 1.0) || !(self.a22.abs() < 1.0) {
            return Err(Error::Unstable {
                spectral_radius: self.a11.abs().max(self.a22.abs()),
            });
        }
        if !(self.sigma > 0.0) || !(self.sigma0_11 >= 0.0) || !(self.sigma0_22 >= 0.0) {
            return Err(Error::InvalidModel(
                "sigma must be positive and initial variances nonnegative".into(),
            ));
        }
        if !self.c1.is_finite() || !self.c2.is_finite() {
            return Err(Error::InvalidModel("output gains must be finite".into()));
        }
        if self.c1 + self.c2 == 0.0 {
            return Err(Error::DegenerateOutput);
        }
        Ok(())
    }

    /// Extract from a model of the decoupled form (diagonal 2x2 `A`,
    /// `B = [1; 1]`, single output, `D = 0`).
    pub fn from_model(model: &LinearGaussianModel) -> Result<Self> {
        let a = model.a();
        let shape_ok = model.states() == 2
            && model.outputs() == 1
            && model.noise_inputs() == 1
            && a[(0, 1)] == 0.0
            && a[(1, 0)] == 0.0
            && model.b()[(0, 0)] == 1.0
            && model.b()[(1, 0)] == 1.0
            && model.d().iter().all(|v| *v == 0.0);
        if !shape_ok {
            return Err(Error::InvalidModel(
                "expected a decoupled two-state model: diagonal A, B = [1; 1], one output, D = 0"
                    .into(),
            ));
        }
        Self::new(
            a[(0, 0)],
            a[(1, 1)],
            model.c()[(0, 0)],
            model.c()[(0, 1)],
            model.sigma(),
            model.sigma0()[(0, 0)],
            model.sigma0()[(1, 1)],
        )
    }

    fn pole(&self, which: DecoupledState) -> f64 {
        match which {
            DecoupledState::First => self.a11,
            DecoupledState::Second => self.a22,
        }
    }

    fn initial_variance(&self, which: DecoupledState) -> f64 {
        match which {
            DecoupledState::First => self.sigma0_11,
            DecoupledState::Second => self.sigma0_22,
        }
    }

    /// Factor `C_i^2 (1 - A_ii)^2 / (2 (C1 + C2)^2 sigma^2)` multiplying `Sigma^ii`.
    pub fn gain(&self, which: DecoupledState) -> f64 {
        let (a, c) = match which {
            DecoupledState::First => (self.a11, self.c1),
            DecoupledState::Second => (self.a22, self.c2),
        };
        let cs = self.c1 + self.c2;
        c * c * (1.0 - a) * (1.0 - a) / (2.0 * cs * cs * self.sigma * self.sigma)
    }

    /// Stationary variance `sigma^2 / (1 - A_ii^2)`.
    pub fn steady_variance(&self, which: DecoupledState) -> f64 {
        let a = self.pole(which);
        self.sigma * self.sigma / (1.0 - a * a)
    }

    /// `dH_0` under `convention`.
    pub fn initial_value(&self, which: DecoupledState, convention: IndexConvention) -> f64 {
        let a = self.pole(which);
        let mut v = self.initial_variance(which);
        for _ in 0..convention.offset() {
            v = a * a * v + self.sigma * self.sigma;
        }
        self.gain(which) * v
    }

    /// `dH_inf`.
    pub fn asymptote(&self, which: DecoupledState) -> f64 {
        self.gain(which) * self.steady_variance(which)
    }

    /// Closed form evaluated at a real step `t`.
    pub fn value_at(&self, which: DecoupledState, t: f64, convention: IndexConvention) -> f64 {
        let a = self.pole(which);
        let decay = (a * a).powf(t);
        decay * self.initial_value(which, convention) + (1.0 - decay) * self.asymptote(which)
    }
}

/// `dH_0 .. dH_n` for the decoupled system by running the scalar Lyapunov
/// recursion `Sigma_{t+1} = A^2 Sigma_t + sigma^2`.
pub fn nstep_kl_decoupled(
    params: &DecoupledParams,
    which: DecoupledState,
    n: usize,
    convention: IndexConvention,
) -> Result<KlTrajectory> {
    params.check()?;
    let a = params.pole(which);
    let s2 = params.sigma * params.sigma;
    let gain = params.gain(which);
    let mut var = params.initial_variance(which);
    for _ in 0..convention.offset() {
        var = a * a * var + s2;
    }
    let mut values = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        values.push(gain * var);
        var = a * a * var + s2;
    }
    KlTrajectory::new(values)
}

/// `dH_n = A^{2n} dH_0 + (1 - A^{2n}) dH_inf`.
pub fn nstep_kl_closed_form(
    params: &DecoupledParams,
    which: DecoupledState,
    n: usize,
    convention: IndexConvention,
) -> Result<f64> {
    params.check()?;
    let a = params.pole(which);
    let decay = match i32::try_from(n) {
        Ok(k) => (a * a).powi(k),
        Err(_) => (a * a).powf(n as f64),
    };
    Ok(decay * params.initial_value(which, convention) + (1.0 - decay) * params.asymptote(which))
}

/// How the expectation over output histories is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlPath {
    /// Both models run Kalman predictors on the truth outputs.
    #[default]
    Filter,
    /// The previous state is taken as exactly known from past outputs (valid
    /// for `D = 0` systems that can be inverted from their output), so both
    /// predictive densities share the variance `sigma^2 C B B^T C^T` and
    /// differ only in mean, `C (A - A_approx) x`.
    ExactObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KlOptions {
    pub filter: FilterOptions,
    pub path: KlPath,
    /// Only affects the exact-observation path.
    pub convention: IndexConvention,
}

fn exact_observation_parts(
    truth: &LinearGaussianModel,
    approx: &LinearGaussianModel,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if approx.states() != truth.states() || approx.c() != truth.c() {
        return Err(Error::DimensionMismatch(
            "exact-observation path needs models with the same state space and C".into(),
        ));
    }
    if truth.d().iter().any(|v| *v != 0.0) {
        return Err(Error::InvalidModel(
            "exact-observation path needs D = 0".into(),
        ));
    }
    let cb = truth.c() * truth.b();
    let s = &cb * cb.transpose() * (truth.sigma() * truth.sigma());
    let (s_inv, _) = linalg::spd_inverse_logdet(&s).ok_or(Error::SingularInnovation { step: 0 })?;
    let delta = truth.c() * (truth.a() - approx.a());
    Ok((s_inv, delta))
}

fn exact_observation_value(s_inv: &DMatrix<f64>, delta: &DMatrix<f64>, second: &DMatrix<f64>) -> f64 {
    (0.5 * (s_inv * delta * second * delta.transpose()).trace()).max(0.0)
}

fn exact_observation_trajectory(
    truth: &LinearGaussianModel,
    approx: &LinearGaussianModel,
    n: usize,
    convention: IndexConvention,
) -> Result<Vec<f64>> {
    let (s_inv, delta) = exact_observation_parts(truth, approx)?;
    let mut cov = truth.sigma0().clone();
    let mut mean = truth.x0().clone();
    let mut values = Vec::with_capacity(n + 1);
    for k in 0..(n + 1 + convention.offset()) {
        if k >= convention.offset() {
            let second = &cov + &mean * mean.transpose();
            values.push(exact_observation_value(&s_inv, &delta, &second));
        }
        cov = covprop::lyapunov_step(&cov, truth.a(), truth.b(), truth.sigma())?;
        mean = truth.a() * mean;
    }
    Ok(values)
}

/// n-step KL rate between `truth` and any approximate model with the same
/// output and noise dimensions.
pub fn nstep_kl_between(
    truth: &LinearGaussianModel,
    approx: &LinearGaussianModel,
    n: usize,
    opts: &KlOptions,
) -> Result<KlTrajectory> {
    truth.require_stable()?;
    if truth == approx {
        return KlTrajectory::new(vec![0.0; n + 1]);
    }
    let values = match opts.path {
        KlPath::Filter => {
            let mut prop = CoupledPropagator::new(truth, approx, &opts.filter)?;
            let mut values = Vec::with_capacity(n + 1);
            for t in 0..=n {
                if t > 0 {
                    prop.advance()?;
                }
                values.push(expected_kl(&prop.current()?, t)?);
            }
            values
        }
        KlPath::ExactObservation => exact_observation_trajectory(truth, approx, n, opts.convention)?,
    };
    KlTrajectory::new(values)
}

/// n-step KL rate between `truth` and a frozen variant of it.
pub fn nstep_kl_general(
    truth: &LinearGaussianModel,
    approx: &FrozenModel,
    n: usize,
    opts: &KlOptions,
) -> Result<KlTrajectory> {
    nstep_kl_between(truth, approx.effective(), n, opts)
}

/// Limit of the n-step KL rate, from steady-state Riccati solutions and the
/// stationary joint covariance of the two predictors.
pub fn asymptotic_kl_between(
    truth: &LinearGaussianModel,
    approx: &LinearGaussianModel,
    opts: &KlOptions,
) -> Result<f64> {
    truth.require_stable()?;
    if truth == approx {
        return Ok(0.0);
    }
    match opts.path {
        KlPath::Filter => match covprop::coupled_steady(truth, approx, &opts.filter) {
            Ok(steady) => expected_kl(&steady, usize::MAX),
            // A frozen block the output cannot see leaves the approximate
            // Riccati covariance growing without bound along that block even
            // though the output moments converge; use the tail instead.
            Err(Error::NoConvergence { .. } | Error::Unstable { .. }) => {
                kl_tail_limit(truth, approx, opts, TAIL_TOL, opts.filter.max_iter).map(|(v, _)| v)
            }
            Err(e) => Err(e),
        },
        KlPath::ExactObservation => {
            let (s_inv, delta) = exact_observation_parts(truth, approx)?;
            let cov = covprop::lyapunov_steady(truth.a(), truth.b(), truth.sigma())?;
            Ok(exact_observation_value(&s_inv, &delta, &cov))
        }
    }
}

pub fn asymptotic_kl_rate(
    truth: &LinearGaussianModel,
    approx: &FrozenModel,
    opts: &KlOptions,
) -> Result<f64> {
    asymptotic_kl_between(truth, approx.effective(), opts)
}

pub const TAIL_TOL: f64 = 1e-12;

/// Iterate the filter-path trajectory until three successive changes are
/// below `tol`, or `max_steps` is reached. Returns `(value, steps)`.
pub fn kl_tail_limit(
    truth: &LinearGaussianModel,
    approx: &LinearGaussianModel,
    opts: &KlOptions,
    tol: f64,
    max_steps: usize,
) -> Result<(f64, usize)> {
    truth.require_stable()?;
    let mut prop = CoupledPropagator::new(truth, approx, &opts.filter)?;
    let mut prev = expected_kl(&prop.current()?, 0)?;
    let mut quiet = 0;
    for t in 1..=max_steps {
        prop.advance()?;
        let v = expected_kl(&prop.current()?, t)?;
        quiet = if (v - prev).abs() < tol { quiet + 1 } else { 0 };
        prev = v;
        if quiet >= 3 && t > truth.states() {
            return Ok((v, t));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_steps,
        residual: tol,
    })
}

/// Where two KL trajectories cross, plus the analytic bracket on the
/// crossing time.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingResult {
    /// Last step at which the initial ordering of `alpha` and `beta` still
    /// holds (the step itself if the two are exactly equal there).
    pub crossing_step: Option<usize>,
    /// Real-valued crossing time of the continuous closed forms.
    pub crossing_time: Option<f64>,
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    /// `alpha_0 < beta_0 < beta_inf < alpha_inf`
    pub ordering_holds: bool,
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha_inf: f64,
    pub beta_inf: f64,
    /// Distances of the crossing from the lower and upper bound, evaluated
    /// in log space so that a crossing level within rounding of `beta_inf`
    /// still yields a correctly signed upper slack.
    pub bound_slack: Option<(f64, f64)>,
}

impl CrossingResult {
    pub fn bounds(&self) -> Result<(f64, f64)> {
        match (self.lower_bound, self.upper_bound) {
            (Some(l), Some(u)) => Ok((l, u)),
            _ => Err(Error::BoundsUndefined(format!(
                "alpha_inf={}, beta0={}, beta_inf={}",
                self.alpha_inf, self.beta0, self.beta_inf
            ))),
        }
    }
}

fn first_sign_change(alpha: &[f64], beta: &[f64]) -> Option<usize> {
    let diffs: Vec<f64> = alpha.iter().zip(beta).map(|(a, b)| a - b).collect();
    let start = diffs.iter().position(|d| *d != 0.0)?;
    let initial = diffs[start].signum();
    let flip = diffs[start..].iter().position(|d| d.signum() != initial)? + start;
    if diffs[flip] == 0.0 {
        Some(flip)
    } else {
        Some(flip - 1)
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Crossing of `alpha` (first state frozen) and `beta` (second state frozen),
/// with the analytic bracket
///
/// ```text
/// [ln(a_inf - b_0) - ln a_inf] / (2 ln A11) < n + 1 < [ln(a_inf - b_inf) - ln a_inf] / (2 ln A11)
/// ```
///
/// The bracket is derived for the continuous crossing time with
/// `Sigma0_11 = sigma^2`; `crossing_time` and `bound_slack` refer to it.
/// The integer `crossing_step` is its floor on the sampled grid.
pub fn crossing_analysis(
    alpha: &KlTrajectory,
    beta: &KlTrajectory,
    params: &DecoupledParams,
    convention: IndexConvention,
) -> Result<CrossingResult> {
    params.check()?;
    if alpha.horizon() != beta.horizon() {
        return Err(Error::LengthMismatch {
            expected: alpha.horizon() + 1,
            got: beta.horizon() + 1,
        });
    }
    if !(params.a11 > 0.0 && params.a11 < 1.0) {
        return Err(Error::BoundsUndefined(format!(
            "A11 = {} must lie in (0, 1)",
            params.a11
        )));
    }
    let (alpha0, beta0) = (alpha.at(0), beta.at(0));
    let alpha_inf = params.asymptote(DecoupledState::First);
    let beta_inf = params.asymptote(DecoupledState::Second);
    let ordering_holds = alpha0 < beta0 && beta0 < beta_inf && beta_inf < alpha_inf;

    let two_ln_a = 2.0 * params.a11.ln();
    let bound = |level: f64| -> Option<f64> {
        let gap = alpha_inf - level;
        (gap > 0.0 && alpha_inf > 0.0).then(|| (gap.ln() - alpha_inf.ln()) / two_ln_a)
    };
    let lower_bound = bound(beta0);
    let upper_bound = bound(beta_inf);

    let crossing_step = first_sign_change(alpha.values(), beta.values());
    let f = |t: f64| {
        params.value_at(DecoupledState::First, t, convention)
            - params.value_at(DecoupledState::Second, t, convention)
    };
    let crossing_time = crossing_step.and_then(|k| {
        if k + 1 > alpha.horizon() {
            Some(k as f64)
        } else {
            bisect(f, k as f64, (k + 1) as f64).or(Some(k as f64))
        }
    });

    let bound_slack = match (crossing_time, lower_bound, upper_bound) {
        (Some(t), Some(_), Some(_)) => {
            let r22 = params.a22 * params.a22;
            let beta0_conv = params.initial_value(DecoupledState::Second, convention);
            // c = beta(t); beta_inf - c = (beta_inf - beta_0) A22^{2t}
            let below_inf = (beta_inf - beta0_conv) * r22.powf(t);
            let level = beta_inf - below_inf;
            let lower = ((alpha_inf - level).ln() - (alpha_inf - beta0).ln()) / two_ln_a;
            let upper = (below_inf / (alpha_inf - beta_inf)).ln_1p() / -two_ln_a;
            Some((lower, upper))
        }
        _ => None,
    };

    Ok(CrossingResult {
        crossing_step,
        crossing_time,
        lower_bound,
        upper_bound,
        ordering_holds,
        alpha0,
        beta0,
        alpha_inf,
        beta_inf,
        bound_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmodel::{freeze, StateSubset};

    fn two_state_model(x0: [f64; 2]) -> LinearGaussianModel {
        LinearGaussianModel::new(
            DMatrix::from_row_slice(2, 2, &[0.99, 0.0, 0.0, 0.8]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.2]),
            DMatrix::zeros(1, 1),
            1.0,
            DVector::from_row_slice(&x0),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn kl_identical_is_zero() {
        let p = GaussianOutputBelief::scalar(0.3, 2.0).unwrap();
        assert_eq!(gaussian_kl(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_mean_shift() {
        let p = GaussianOutputBelief::scalar(0.0, 1.0).unwrap();
        let q = GaussianOutputBelief::scalar(1.0, 1.0).unwrap();
        assert!((gaussian_kl(&p, &q).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_variance_ratio() {
        let p = GaussianOutputBelief::scalar(0.0, 1.0).unwrap();
        let q = GaussianOutputBelief::scalar(0.0, 2.0).unwrap();
        let expect = 0.5 * (2.0_f64.ln() + 0.5 - 1.0);
        assert!((gaussian_kl(&p, &q).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.09657).abs() < 1e-5);
    }

    #[test]
    fn singular_beliefs_rejected() {
        assert!(matches!(
            GaussianOutputBelief::scalar(0.0, 0.0),
            Err(Error::SingularCovariance)
        ));
        let p = GaussianOutputBelief::scalar(0.0, 1.0).unwrap();
        let q = GaussianOutputBelief::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            gaussian_kl(&p, &q),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn decoupled_two_state_first_value() {
        let t = nstep_kl_decoupled(
            &DecoupledParams::two_state(),
            DecoupledState::First,
            0,
            IndexConvention::StateAtStep,
        )
        .unwrap();
        // 1 * 0.01^2 * 1 / (2 * 1.44)
        assert!((t.at(0) - 1e-4 / 2.88).abs() < 1e-18);
        assert!((t.at(0) - 3.4722e-5).abs() < 1e-9);
    }

    #[test]
    fn decoupled_invisible_state_is_zero() {
        let p = DecoupledParams {
            c1: 0.0,
            ..DecoupledParams::two_state()
        };
        let t = nstep_kl_decoupled(&p, DecoupledState::First, 50, IndexConvention::StateAtStep)
            .unwrap();
        assert!(t.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decoupled_converges_to_asymptote() {
        let p = DecoupledParams::two_state();
        let t = nstep_kl_decoupled(&p, DecoupledState::First, 5000, IndexConvention::StateAtStep)
            .unwrap();
        let direct = 1e-4 * (1.0 / (1.0 - 0.9801)) / 2.88;
        assert!((t.last() - direct).abs() < 1e-15);
        assert!((p.asymptote(DecoupledState::First) - 1.7448e-3).abs() < 1e-6);
        assert!((p.asymptote(DecoupledState::Second) - 1.5432e-3).abs() < 1e-6);
    }

    #[test]
    fn degenerate_output_rejected() {
        let p = DecoupledParams {
            c2: -1.0,
            ..DecoupledParams::two_state()
        };
        assert!(matches!(
            nstep_kl_decoupled(&p, DecoupledState::First, 3, IndexConvention::StateAtStep),
            Err(Error::DegenerateOutput)
        ));
    }

    #[test]
    fn closed_form_endpoints() {
        let p = DecoupledParams::two_state();
        let c = IndexConvention::StateAtStep;
        let zero = nstep_kl_closed_form(&p, DecoupledState::First, 0, c).unwrap();
        assert_eq!(zero, p.initial_value(DecoupledState::First, c));
        let far = nstep_kl_closed_form(&p, DecoupledState::Second, 100_000, c).unwrap();
        assert_eq!(far, p.asymptote(DecoupledState::Second));
        let rec = nstep_kl_decoupled(&p, DecoupledState::First, 50, c).unwrap();
        let cf = nstep_kl_closed_form(&p, DecoupledState::First, 50, c).unwrap();
        assert!((rec.at(50) - cf).abs() < 1e-12);
    }

    #[test]
    fn propagated_convention_shifts_by_one() {
        let p = DecoupledParams::two_state();
        let a = nstep_kl_decoupled(&p, DecoupledState::First, 10, IndexConvention::StateAtStep)
            .unwrap();
        let b = nstep_kl_decoupled(&p, DecoupledState::First, 9, IndexConvention::Propagated)
            .unwrap();
        assert_eq!(&a.values()[1..], b.values());
    }

    #[test]
    fn general_identical_models_zero() {
        let m = two_state_model([1.0, 1.0]);
        let f = freeze(&m, &StateSubset::empty(), None).unwrap();
        for path in [KlPath::Filter, KlPath::ExactObservation] {
            let opts = KlOptions {
                path,
                ..Default::default()
            };
            let t = nstep_kl_general(&m, &f, 30, &opts).unwrap();
            assert!(t.values().iter().all(|v| *v < 1e-13), "{path:?}");
        }
    }

    #[test]
    fn exact_observation_matches_decoupled_formula() {
        let m = two_state_model([0.0, 0.0]);
        let params = DecoupledParams::from_model(&m).unwrap();
        for (idx, which) in [(0, DecoupledState::First), (1, DecoupledState::Second)] {
            let f = freeze(&m, &StateSubset::new(vec![idx]).unwrap(), None).unwrap();
            for convention in [IndexConvention::StateAtStep, IndexConvention::Propagated] {
                let opts = KlOptions {
                    path: KlPath::ExactObservation,
                    convention,
                    ..Default::default()
                };
                let g = nstep_kl_general(&m, &f, 200, &opts).unwrap();
                let d = nstep_kl_decoupled(&params, which, 200, convention).unwrap();
                for (x, y) in g.values().iter().zip(d.values()) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn exact_observation_requires_zero_feedthrough() {
        let m = two_state_model([0.0, 0.0])
            .with_feedthrough(DMatrix::from_element(1, 1, 0.5))
            .unwrap();
        let f = freeze(&m, &StateSubset::new(vec![0]).unwrap(), None).unwrap();
        let opts = KlOptions {
            path: KlPath::ExactObservation,
            ..Default::default()
        };
        assert!(nstep_kl_general(&m, &f, 3, &opts).is_err());
    }

    #[test]
    fn asymptotic_exact_observation_two_state() {
        let m = two_state_model([0.0, 0.0]);
        let opts = KlOptions {
            path: KlPath::ExactObservation,
            ..Default::default()
        };
        let fa = freeze(&m, &StateSubset::new(vec![0]).unwrap(), None).unwrap();
        let fb = freeze(&m, &StateSubset::new(vec![1]).unwrap(), None).unwrap();
        let p = DecoupledParams::two_state();
        let a = asymptotic_kl_rate(&m, &fa, &opts).unwrap();
        let b = asymptotic_kl_rate(&m, &fb, &opts).unwrap();
        assert!((a - p.asymptote(DecoupledState::First)).abs() < 1e-12);
        assert!((b - p.asymptote(DecoupledState::Second)).abs() < 1e-12);
    }

    #[test]
    fn asymptotic_filter_matches_tail() {
        let m = two_state_model([1.0, 1.0]);
        let f = freeze(&m, &StateSubset::new(vec![0]).unwrap(), None).unwrap();
        let opts = KlOptions::default();
        let asym = asymptotic_kl_rate(&m, &f, &opts).unwrap();
        let (tail, _) = kl_tail_limit(&m, f.effective(), &opts, 1e-14, 200_000).unwrap();
        assert!((asym - tail).abs() < 1e-10, "{asym} vs {tail}");
        assert!(asymptotic_kl_rate(&m, &freeze(&m, &StateSubset::empty(), None).unwrap(), &opts)
            .unwrap()
            .abs()
            < 1e-14);
    }

    #[test]
    fn truth_must_be_stable() {
        let m = LinearGaussianModel::from_abc(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let f = freeze(&m, &StateSubset::empty(), None).unwrap();
        assert!(matches!(
            nstep_kl_general(&m, &f, 2, &KlOptions::default()),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn crossing_two_state() {
        let p = DecoupledParams::two_state();
        let c = IndexConvention::StateAtStep;
        let a = nstep_kl_decoupled(&p, DecoupledState::First, 400, c).unwrap();
        let b = nstep_kl_decoupled(&p, DecoupledState::Second, 400, c).unwrap();
        let r = crossing_analysis(&a, &b, &p, c).unwrap();
        assert!(r.ordering_holds);
        assert_eq!(r.crossing_step, Some(106));
        let (lo, hi) = r.bounds().unwrap();
        assert!((lo - 19.0696).abs() < 1e-3, "{lo}");
        assert!((hi - 107.3598).abs() < 1e-3, "{hi}");
        let t = r.crossing_time.unwrap();
        assert!(t > 106.0 && t < 107.0);
        let (sl, su) = r.bound_slack.unwrap();
        assert!(sl > 0.0 && su > 0.0);

        let a = nstep_kl_decoupled(&p, DecoupledState::First, 400, IndexConvention::Propagated)
            .unwrap();
        let b = nstep_kl_decoupled(&p, DecoupledState::Second, 400, IndexConvention::Propagated)
            .unwrap();
        let r = crossing_analysis(&a, &b, &p, IndexConvention::Propagated).unwrap();
        assert_eq!(r.crossing_step, Some(105));
    }

    #[test]
    fn crossing_identical_trajectories() {
        let p = DecoupledParams::two_state();
        let a = nstep_kl_decoupled(&p, DecoupledState::First, 50, IndexConvention::StateAtStep)
            .unwrap();
        let r = crossing_analysis(&a, &a, &p, IndexConvention::StateAtStep).unwrap();
        assert_eq!(r.crossing_step, None);
        assert_eq!(r.crossing_time, None);
        assert!(!r.ordering_holds);
    }

    #[test]
    fn crossing_exact_tie_resolves_to_that_step() {
        let a = KlTrajectory::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = KlTrajectory::new(vec![2.0, 2.5, 3.0, 3.5]).unwrap();
        assert_eq!(first_sign_change(a.values(), b.values()), Some(2));
        let b = KlTrajectory::new(vec![2.0, 2.5, 3.5, 3.5]).unwrap();
        assert_eq!(first_sign_change(a.values(), b.values()), Some(2));
    }

    #[test]
    fn crossing_errors() {
        let p = DecoupledParams::two_state();
        let a = KlTrajectory::new(vec![0.0; 3]).unwrap();
        let b = KlTrajectory::new(vec![0.0; 4]).unwrap();
        assert!(matches!(
            crossing_analysis(&a, &b, &p, IndexConvention::StateAtStep),
            Err(Error::LengthMismatch { .. })
        ));
        let neg = DecoupledParams {
            a11: -0.5,
            ..p
        };
        assert!(matches!(
            crossing_analysis(&a, &a, &neg, IndexConvention::StateAtStep),
            Err(Error::BoundsUndefined(_))
        ));
    }

    #[test]
    fn trajectory_rejects_negative_values() {
        assert!(KlTrajectory::new(vec![0.0, -1e-3]).is_err());
        assert!(KlTrajectory::new(vec![]).is_err());
        assert_eq!(KlTrajectory::new(vec![-1e-17]).unwrap().at(0), 0.0);
    }
}
