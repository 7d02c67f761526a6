use std::path::Path;

use itreduce_core::baltrunc::{self, GramianKind};
use itreduce_core::itransfer::{self, ReductionRanking};
use itreduce_core::klmetrics::{
    self, DecoupledParams, DecoupledState, IndexConvention, KlOptions,
};
use itreduce_core::linmodel::{freeze, LinearGaussianModel, StateSubset};
use itreduce_core::modelfile;

use crate::report::{Cell, Report, Table};
use crate::CliError;

pub fn load(path: &Path) -> Result<LinearGaussianModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let model = modelfile::parse_model(&text)?;
    if model.name().is_empty() {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(model.with_name(stem));
    }
    Ok(model)
}

/// "3,4" or "3 4" (1-based) to a 0-based subset.
pub fn parse_subset(text: &str) -> Result<StateSubset, CliError> {
    let mut idx = Vec::new();
    for tok in text.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let v: usize = tok
            .parse()
            .map_err(|_| CliError::Usage(format!("subset entry {tok:?} is not a state number")))?;
        if v == 0 {
            return Err(CliError::Usage("subset entries are 1-based".into()));
        }
        idx.push(v - 1);
    }
    Ok(StateSubset::new(idx)?)
}

pub fn with_jobs<T>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError>
where
    T: Send,
{
    match jobs {
        None => f(),
        Some(0) => Err(CliError::Usage("--jobs must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(f),
    }
}

fn column_name(s: &StateSubset) -> String {
    format!("it_{}", s.label().replace(' ', "_"))
}

pub fn analyze(
    model: &LinearGaussianModel,
    subset: &StateSubset,
    horizon: usize,
    opts: &KlOptions,
) -> Result<Report, CliError> {
    let frozen = freeze(model, subset, None)?;
    let traj = klmetrics::nstep_kl_general(model, &frozen, horizon, opts)?;
    let asymptotic = klmetrics::asymptotic_kl_rate(model, &frozen, opts)?;
    let mut r = Report::new("analyze", model.name());
    r.meta("subset", subset.label());
    r.meta("horizon", horizon);
    let mut t = Table::new("trajectory", &["step", "value"]);
    for (n, v) in traj.values().iter().enumerate() {
        t.push(vec![n.into(), (*v).into()]);
    }
    r.tables.push(t);
    let mut a = Table::new("asymptotic", &["value"]);
    a.push(vec![asymptotic.into()]);
    r.tables.push(a);
    Ok(r)
}

pub fn hankel(model: &LinearGaussianModel, continuous: bool) -> Result<Report, CliError> {
    let kind = if continuous {
        GramianKind::Continuous
    } else {
        GramianKind::Discrete
    };
    let g = baltrunc::gramians_with(model, kind)?;
    let hsv = baltrunc::hankel_singular_values(&g);
    let (rp, rq) = g.residuals(model);
    let mut r = Report::new("hankel", model.name());
    r.meta("gramians", if continuous { "continuous" } else { "discrete" });
    let mut t = Table::new("hankel_singular_values", &["index", "value"]);
    for (i, v) in hsv.values.iter().enumerate() {
        t.push(vec![(i + 1).into(), (*v).into()]);
    }
    r.tables.push(t);
    let mut res = Table::new("gramian_residuals", &["controllability", "observability"]);
    res.push(vec![rp.into(), rq.into()]);
    r.tables.push(res);
    Ok(r)
}

fn asymptotic_table(ranking: &ReductionRanking) -> Table {
    let mut t = Table::new("asymptotic", &["subset", "value"]);
    for c in &ranking.candidates {
        t.push(vec![c.subset.label().into(), c.asymptotic.into()]);
    }
    t
}

pub fn reduce(
    model: &LinearGaussianModel,
    order: usize,
    horizon: usize,
    horizons: &[usize],
    opts: &KlOptions,
) -> Result<Report, CliError> {
    let mut grid = horizons.to_vec();
    grid.push(horizon);
    let (ranking, winners) = itransfer::rank_reductions_grid(model, order, &grid, opts)?;
    let mut r = Report::new("reduce", model.name());
    r.meta("order", order);
    r.meta("horizon", horizon);
    if !horizons.is_empty() {
        let list: Vec<String> = horizons.iter().map(|h| h.to_string()).collect();
        r.meta("horizons", list.join(","));
    }

    r.tables.push(asymptotic_table(&ranking));

    let mut cols = vec!["step".to_string()];
    cols.extend(ranking.candidates.iter().map(|c| column_name(&c.subset)));
    let mut traj = Table::with_columns("it_trajectories", cols);
    for n in 0..=horizon {
        let mut row: Vec<Cell> = vec![n.into()];
        row.extend(ranking.candidates.iter().map(|c| c.trajectory.values.at(n).into()));
        traj.push(row);
    }
    r.tables.push(traj);

    let mut rank = Table::new("ranking", &["rank", "subset", "value_at_horizon", "asymptotic"]);
    for (pos, &i) in ranking.order_at(horizon).iter().enumerate() {
        let c = &ranking.candidates[i];
        rank.push(vec![
            (pos + 1).into(),
            c.subset.label().into(),
            c.trajectory.values.at(horizon).into(),
            c.asymptotic.into(),
        ]);
    }
    r.tables.push(rank);

    if !horizons.is_empty() {
        let mut w = Table::new("best_by_horizon", &["horizon", "subset", "value"]);
        for (h, s) in winners.iter().take(horizons.len()) {
            let c = ranking
                .candidates
                .iter()
                .find(|c| &c.subset == s)
                .expect("winner is a candidate");
            w.push(vec![(*h).into(), s.label().into(), c.trajectory.values.at(*h).into()]);
        }
        r.tables.push(w);
    }
    Ok(r)
}

pub fn crossing(
    model: &LinearGaussianModel,
    horizon: usize,
    convention: IndexConvention,
) -> Result<Report, CliError> {
    let p = DecoupledParams::from_model(model)?;
    let alpha = klmetrics::nstep_kl_decoupled(&p, DecoupledState::First, horizon, convention)?;
    let beta = klmetrics::nstep_kl_decoupled(&p, DecoupledState::Second, horizon, convention)?;
    let res = klmetrics::crossing_analysis(&alpha, &beta, &p, convention)?;

    let mut r = Report::new("crossing", model.name());
    r.meta("horizon", horizon);
    let mut t = Table::new("trajectories", &["step", "alpha", "beta", "alpha_minus_beta"]);
    for n in 0..=horizon {
        let (a, b) = (alpha.at(n), beta.at(n));
        t.push(vec![n.into(), a.into(), b.into(), (a - b).into()]);
    }
    r.tables.push(t);

    let mut s = Table::new("crossing", &["quantity", "value"]);
    let rows: [(&str, Cell); 11] = [
        ("crossing_step", res.crossing_step.into()),
        ("crossing_time", res.crossing_time.into()),
        ("lower_bound", res.lower_bound.into()),
        ("upper_bound", res.upper_bound.into()),
        ("lower_slack", res.bound_slack.map(|s| s.0).into()),
        ("upper_slack", res.bound_slack.map(|s| s.1).into()),
        ("alpha0", res.alpha0.into()),
        ("beta0", res.beta0.into()),
        ("alpha_inf", res.alpha_inf.into()),
        ("beta_inf", res.beta_inf.into()),
        ("ordering_holds", usize::from(res.ordering_holds).into()),
    ];
    for (k, v) in rows {
        s.push(vec![k.into(), v]);
    }
    r.tables.push(s);
    Ok(r)
}

pub fn compare(
    model: &LinearGaussianModel,
    order: usize,
    horizon: usize,
    opts: &KlOptions,
) -> Result<Report, CliError> {
    let ranking = itransfer::rank_reductions(model, order, horizon, opts)?;
    let mut r = Report::new("compare", model.name());
    r.meta("order", order);
    r.meta("horizon", horizon);
    let mut t = Table::new(
        "rankings",
        &["rank", "subset_at_horizon", "value_at_horizon", "subset_asymptotic", "asymptotic"],
    );
    let at = ranking.order_at(horizon);
    let asym = ranking.order_asymptotic();
    for (pos, (&i, &j)) in at.iter().zip(&asym).enumerate() {
        let (ci, cj) = (&ranking.candidates[i], &ranking.candidates[j]);
        t.push(vec![
            (pos + 1).into(),
            ci.subset.label().into(),
            ci.trajectory.values.at(horizon).into(),
            cj.subset.label().into(),
            cj.asymptotic.into(),
        ]);
    }
    r.tables.push(t);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_parsing() {
        assert_eq!(parse_subset("3,4").unwrap().indices(), &[2, 3]);
        assert_eq!(parse_subset(" 1 2 ").unwrap().indices(), &[0, 1]);
        assert!(parse_subset("").unwrap().is_empty());
        assert!(matches!(parse_subset("0"), Err(CliError::Usage(_))));
        assert!(matches!(parse_subset("x"), Err(CliError::Usage(_))));
        assert!(matches!(parse_subset("4,3"), Err(CliError::Core(_))));
    }
}
