//! Information transfer (IT) from state subsets.
//!
//! IT from a subset to the output is the n-step KL rate between a model and
//! the variant with that subset frozen. IT from one subset to another compares
//! the one-step density of the target block given the full state history,
//! under the true and the source-frozen dynamics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covprop;
use crate::error::{Error, Result};
use crate::klmetrics::{self, KlOptions, KlTrajectory};
use crate::linalg;
use crate::linmodel::{freeze, select, LinearGaussianModel, StateSubset};

#[derive(Debug, Clone, PartialEq)]
pub enum ItTarget {
    Output,
    States(StateSubset),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItTrajectory {
    pub source: StateSubset,
    pub target: ItTarget,
    pub values: KlTrajectory,
}

fn require_proper(model: &LinearGaussianModel, subset: &StateSubset) -> Result<()> {
    subset.check(model.states())?;
    if subset.len() >= model.states() {
        return Err(Error::InvalidSubset(format!(
            "cannot freeze all {} states",
            model.states()
        )));
    }
    Ok(())
}

/// IT from `subset` to the output over steps `0..=n`, freezing at the
/// matching entries of `x0`.
pub fn it_state_to_output(
    model: &LinearGaussianModel,
    subset: &StateSubset,
    n: usize,
    opts: &KlOptions,
) -> Result<ItTrajectory> {
    require_proper(model, subset)?;
    let frozen = freeze(model, subset, None)?;
    Ok(ItTrajectory {
        source: subset.clone(),
        target: ItTarget::Output,
        values: klmetrics::nstep_kl_general(model, &frozen, n, opts)?,
    })
}

/// Limit of [`it_state_to_output`].
pub fn asymptotic_it_to_output(
    model: &LinearGaussianModel,
    subset: &StateSubset,
    opts: &KlOptions,
) -> Result<f64> {
    require_proper(model, subset)?;
    let frozen = freeze(model, subset, None)?;
    klmetrics::asymptotic_kl_rate(model, &frozen, opts)
}

/// What the frozen source is held at in state-to-state IT.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum FrozenReference {
    /// The realized initial value of the source states.
    #[default]
    InitialState,
    /// A fixed vector, one entry per source index.
    Fixed(DVector<f64>),
}

struct StateTransfer {
    coupling: DMatrix<f64>,
    noise_inv: DMatrix<f64>,
    src: Vec<usize>,
}

impl StateTransfer {
    fn new(
        model: &LinearGaussianModel,
        source: &StateSubset,
        target: &StateSubset,
        reference: &FrozenReference,
    ) -> Result<Self> {
        let m = model.states();
        source.check(m)?;
        target.check(m)?;
        if source.is_empty() || target.is_empty() || !source.is_disjoint(target) {
            return Err(Error::InvalidSubset(format!(
                "source {source} and target {target} must be nonempty and disjoint"
            )));
        }
        if let FrozenReference::Fixed(v) = reference {
            if v.len() != source.len() {
                return Err(Error::LengthMismatch {
                    expected: source.len(),
                    got: v.len(),
                });
            }
        }
        let bt = select(model.b(), target.indices(), &(0..model.noise_inputs()).collect::<Vec<_>>());
        let noise = &bt * bt.transpose() * (model.sigma() * model.sigma());
        let (noise_inv, _) = linalg::spd_inverse_logdet(&noise).ok_or(Error::SingularTargetNoise)?;
        Ok(Self {
            coupling: select(model.a(), target.indices(), source.indices()),
            noise_inv,
            src: source.indices().to_vec(),
        })
    }

    /// `1/2 tr(N^-1 A_ts E[e e^T] A_ts^T)` for a deviation second moment over the full state.
    fn value(&self, second: &DMatrix<f64>) -> f64 {
        let s = select(second, &self.src, &self.src);
        (0.5 * (&self.noise_inv * &self.coupling * s * self.coupling.transpose()).trace()).max(0.0)
    }

    fn select_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.src.len(), self.src.iter().map(|&i| v[i]))
    }
}

/// IT from `source` to `target` over steps `0..=n`.
///
/// Given `x_k`, the target block is `N(A_t x_k, sigma^2 B_t B_t^T)` under the
/// model and differs in mean by `A_ts (x_s,k - ref)` under the frozen model,
/// so the expected KL is a quadratic form in the second moment of the source
/// deviation.
pub fn it_state_to_state(
    model: &LinearGaussianModel,
    source: &StateSubset,
    target: &StateSubset,
    n: usize,
    reference: &FrozenReference,
) -> Result<ItTrajectory> {
    let st = StateTransfer::new(model, source, target, reference)?;
    let a = model.a();
    let mut cov = model.sigma0().clone();
    // Cov[x_k, x_0]
    let mut cross = model.sigma0().clone();
    let mut mean = model.x0().clone();
    let mut values = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (dev_cov, dev_mean) = match reference {
            FrozenReference::InitialState => (
                &cov - &cross - cross.transpose() + model.sigma0(),
                st.select_vec(&(&mean - model.x0())),
            ),
            FrozenReference::Fixed(v) => (cov.clone(), st.select_vec(&mean) - v),
        };
        let mut second = dev_cov;
        let sel = st.src.clone();
        let outer = &dev_mean * dev_mean.transpose();
        for (i, &r) in sel.iter().enumerate() {
            for (j, &c) in sel.iter().enumerate() {
                second[(r, c)] += outer[(i, j)];
            }
        }
        values.push(st.value(&second));
        if k < n {
            cov = covprop::lyapunov_step(&cov, a, model.b(), model.sigma())?;
            cross = a * cross;
            mean = a * mean;
        }
    }
    Ok(ItTrajectory {
        source: source.clone(),
        target: ItTarget::States(target.clone()),
        values: KlTrajectory::new(values)?,
    })
}

/// Limit of [`it_state_to_state`]; needs a stable model.
pub fn asymptotic_it_state_to_state(
    model: &LinearGaussianModel,
    source: &StateSubset,
    target: &StateSubset,
    reference: &FrozenReference,
) -> Result<f64> {
    let st = StateTransfer::new(model, source, target, reference)?;
    let steady = covprop::lyapunov_steady(model.a(), model.b(), model.sigma())?;
    let mut second = select(&steady, &st.src, &st.src);
    let offset = match reference {
        FrozenReference::InitialState => {
            second += select(model.sigma0(), &st.src, &st.src);
            st.select_vec(model.x0())
        }
        FrozenReference::Fixed(v) => v.clone(),
    };
    second += &offset * offset.transpose();
    Ok((0.5 * (&st.noise_inv * &st.coupling * second * st.coupling.transpose()).trace()).max(0.0))
}

/// All `k`-subsets of `0..m` in lexicographic order.
pub fn enumerate_subsets(m: usize, k: usize) -> Result<Vec<StateSubset>> {
    if k == 0 || k >= m {
        return Err(Error::InvalidSize { m, k });
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(StateSubset::from_unsorted(idx.clone()));
        let Some(i) = (0..k).rev().find(|&i| idx[i] < m - k + i) else {
            break;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub subset: StateSubset,
    pub trajectory: ItTrajectory,
    pub asymptotic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRanking {
    pub candidates: Vec<Candidate>,
    pub horizon: usize,
    pub best_at_horizon: StateSubset,
    pub best_asymptotic: StateSubset,
}

/// First minimizer; candidates are in lexicographic order so ties go to the
/// lexicographically smallest subset.
fn argmin(cands: &[Candidate], key: impl Fn(&Candidate) -> f64) -> &StateSubset {
    let mut best = &cands[0];
    for c in &cands[1..] {
        if key(c) < key(best) {
            best = c;
        }
    }
    &best.subset
}

impl ReductionRanking {
    /// Best subset at step `h <= horizon`.
    pub fn best_at(&self, h: usize) -> Option<&StateSubset> {
        (h <= self.horizon).then(|| argmin(&self.candidates, |c| c.trajectory.values.at(h)))
    }

    /// Indices into `candidates`, sorted by value at step `h` (ties by order).
    pub fn order_at(&self, h: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.candidates.len()).collect();
        idx.sort_by(|&i, &j| {
            let (a, b) = (
                self.candidates[i].trajectory.values.at(h),
                self.candidates[j].trajectory.values.at(h),
            );
            a.total_cmp(&b).then(i.cmp(&j))
        });
        idx
    }

    /// Indices into `candidates`, sorted by asymptotic value.
    pub fn order_asymptotic(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.candidates.len()).collect();
        idx.sort_by(|&i, &j| {
            self.candidates[i]
                .asymptotic
                .total_cmp(&self.candidates[j].asymptotic)
                .then(i.cmp(&j))
        });
        idx
    }
}

/// Evaluate IT to the output for every `k`-subset up to `horizon`.
pub fn rank_reductions(
    model: &LinearGaussianModel,
    k: usize,
    horizon: usize,
    opts: &KlOptions,
) -> Result<ReductionRanking> {
    model.require_stable()?;
    let subsets = enumerate_subsets(model.states(), k)?;
    let candidates = subsets
        .into_par_iter()
        .map(|subset| {
            let trajectory = it_state_to_output(model, &subset, horizon, opts)?;
            let asymptotic = asymptotic_it_to_output(model, &subset, opts)?;
            Ok(Candidate {
                subset,
                trajectory,
                asymptotic,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReductionRanking {
        best_at_horizon: argmin(&candidates, |c| c.trajectory.values.at(horizon)).clone(),
        best_asymptotic: argmin(&candidates, |c| c.asymptotic).clone(),
        candidates,
        horizon,
    })
}

/// [`rank_reductions`] to the largest horizon of a grid, with the winner at
/// each grid point.
pub fn rank_reductions_grid(
    model: &LinearGaussianModel,
    k: usize,
    horizons: &[usize],
    opts: &KlOptions,
) -> Result<(ReductionRanking, Vec<(usize, StateSubset)>)> {
    let top = horizons.iter().copied().max().unwrap_or(0);
    let ranking = rank_reductions(model, k, top, opts)?;
    let winners = horizons
        .iter()
        .map(|&h| (h, ranking.best_at(h).expect("within horizon").clone()))
        .collect();
    Ok((ranking, winners))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(a21: f64, a12: f64) -> LinearGaussianModel {
        LinearGaussianModel::new(
            DMatrix::from_row_slice(2, 2, &[0.7, a12, a21, 0.5]),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::zeros(1, 2),
            1.0,
            DVector::from_row_slice(&[1.0, -0.5]),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    fn s(v: &[usize]) -> StateSubset {
        StateSubset::new(v.to_vec()).unwrap()
    }

    #[test]
    fn enumerate_pairs_of_four() {
        let got: Vec<String> = enumerate_subsets(4, 2)
            .unwrap()
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(got, ["(1,2)", "(1,3)", "(1,4)", "(2,3)", "(2,4)", "(3,4)"]);
        assert_eq!(enumerate_subsets(6, 3).unwrap().len(), 20);
        assert_eq!(enumerate_subsets(2, 1).unwrap(), vec![s(&[0]), s(&[1])]);
        assert!(matches!(enumerate_subsets(3, 0), Err(Error::InvalidSize { .. })));
        assert!(matches!(enumerate_subsets(3, 3), Err(Error::InvalidSize { .. })));
    }

    #[test]
    fn one_way_coupling_is_asymmetric() {
        let m = chain(0.4, 0.0);
        let ab = it_state_to_state(&m, &s(&[0]), &s(&[1]), 20, &FrozenReference::default()).unwrap();
        let ba = it_state_to_state(&m, &s(&[1]), &s(&[0]), 20, &FrozenReference::default()).unwrap();
        assert_eq!(ab.values.at(0), 0.0);
        assert!(ab.values.values()[1..].iter().all(|v| *v > 0.0));
        assert!(ba.values.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn state_to_state_scalar_chain_by_hand() {
        // a_1 - a_0 = (0.7 - 1) a_0 + d, Var = 0.09 + 1, mean -0.3
        let m = chain(0.4, 0.0);
        let t = it_state_to_state(&m, &s(&[0]), &s(&[1]), 1, &FrozenReference::default()).unwrap();
        let expect = 0.5 * 0.16 * (1.09 + 0.09);
        assert!((t.values.at(1) - expect).abs() < 1e-14);
    }

    #[test]
    fn state_to_state_tends_to_asymptote() {
        let m = chain(0.4, 0.2);
        for r in [FrozenReference::InitialState, FrozenReference::Fixed(DVector::from_element(1, 0.3))] {
            let t = it_state_to_state(&m, &s(&[0]), &s(&[1]), 400, &r).unwrap();
            let a = asymptotic_it_state_to_state(&m, &s(&[0]), &s(&[1]), &r).unwrap();
            assert!((t.values.last() - a).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_target_noise() {
        let m = LinearGaussianModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.3, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::zeros(1, 1),
            1.0,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(matches!(
            it_state_to_state(&m, &s(&[0]), &s(&[1]), 3, &FrozenReference::default()),
            Err(Error::SingularTargetNoise)
        ));
    }

    #[test]
    fn overlapping_or_empty_subsets_rejected() {
        let m = chain(0.4, 0.0);
        let r = FrozenReference::default();
        assert!(it_state_to_state(&m, &s(&[0]), &s(&[0]), 3, &r).is_err());
        assert!(it_state_to_state(&m, &StateSubset::empty(), &s(&[0]), 3, &r).is_err());
        assert!(matches!(
            it_state_to_output(&m, &StateSubset::all(2), 3, &KlOptions::default()),
            Err(Error::InvalidSubset(_))
        ));
    }

    #[test]
    fn invisible_uncoupled_state_has_zero_it() {
        // state 1 neither drives state 2 nor appears in C
        let m = chain(0.0, 0.3);
        let t = it_state_to_output(&m, &s(&[0]), 50, &KlOptions::default()).unwrap();
        assert!(t.values.values().iter().all(|v| *v < 1e-13));
    }

    #[test]
    fn ranking_two_state_switches_winner() {
        let m = LinearGaussianModel::new(
            DMatrix::from_row_slice(2, 2, &[0.99, 0.0, 0.0, 0.8]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.2]),
            DMatrix::zeros(1, 1),
            1.0,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let opts = KlOptions {
            path: klmetrics::KlPath::ExactObservation,
            ..Default::default()
        };
        let (r, winners) = rank_reductions_grid(&m, 1, &[10, 50, 300], &opts).unwrap();
        assert_eq!(r.candidates.len(), 2);
        assert_eq!(winners[0].1, s(&[0]));
        assert_eq!(winners[1].1, s(&[0]));
        assert_eq!(winners[2].1, s(&[1]));
        assert_eq!(r.best_asymptotic, s(&[1]));
        assert_eq!(r.order_at(10), vec![0, 1]);
        assert_eq!(r.order_asymptotic(), vec![1, 0]);
    }
}
