//! Censoring-aware evaluation metrics.
//!
//! All inverse-probability-of-censoring weights are capped at [`IPCW_CAP`].
//! The censoring survival `Ĝ` is a Kaplan-Meier estimate on the training split
//! with the event indicator flipped.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::HazardModel;
use crate::quadrature::QuadratureRule;
use crate::simulation::quantile;

pub const IPCW_CAP: f64 = 10.0;
pub const HORIZON_SUPPORT: f64 = 0.001;
pub const INTEGRATION_POINTS: usize = 100;
pub const DCAL_BINS: usize = 10;
const BLL_CLAMP: f64 = 1e-7;

/// Right-continuous step function starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    /// Value at `t`, including a jump located exactly at `t`.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&s| s <= t);
        if n == 0 {
            1.0
        } else {
            self.values[n - 1]
        }
    }

    /// Left limit at `t`.
    pub fn before(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&s| s < t);
        if n == 0 {
            1.0
        } else {
            self.values[n - 1]
        }
    }
}

/// Product-limit estimator. Ties are resolved with events and censorings at
/// the same time both counted at risk.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    if times.is_empty() || times.len() != events.len() {
        return Err(Error::Contract("Kaplan-Meier needs matching nonempty inputs".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::Contract("Kaplan-Meier times must be finite and >= 0".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len();
    let mut s = 1.0;
    let mut out = StepFunction {
        times: Vec::new(),
        values: Vec::new(),
    };
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d = 0;
        let mut j = i;
        while j < order.len() && times[order[j]] == t {
            d += usize::from(events[order[j]]);
            j += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            out.times.push(t);
            out.values.push(s);
        }
        at_risk -= j - i;
        i = j;
    }
    Ok(out)
}

/// Censoring survival `Ĝ` of a dataset.
pub fn censoring_survival(data: &Dataset) -> Result<StepFunction> {
    let flipped: Vec<bool> = data.records.iter().map(|r| !r.event).collect();
    kaplan_meier(&data.times(), &flipped)
}

/// Predicted survival curves on a shared ascending grid, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalPredictions {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl SurvivalPredictions {
    /// `values` is row-major `subjects × grid`.
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || !values.len().is_multiple_of(grid.len()) {
            return Err(Error::shape("survival predictions", &[values.len()], &[grid.len()]));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < 0.0 {
            return Err(Error::Contract("prediction grid must be strictly ascending and >= 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("survival predictions", f64::NAN));
        }
        Ok(Self { grid, values })
    }

    pub fn subjects(&self) -> usize {
        self.values.len() / self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Interpolation position of `t`: segment index and weight of its right end.
    /// Before the first grid point the curve runs linearly from `S(0) = 1`.
    fn locate(&self, t: f64) -> Locator {
        let g = &self.grid;
        if t <= g[0] {
            let w = if g[0] > 0.0 { (t / g[0]).clamp(0.0, 1.0) } else { 1.0 };
            return Locator::Start(w);
        }
        if t >= g[g.len() - 1] {
            return Locator::At(g.len() - 1);
        }
        let j = g.partition_point(|&s| s <= t);
        let w = (t - g[j - 1]) / (g[j] - g[j - 1]);
        Locator::Between(j - 1, w)
    }

    fn value(&self, i: usize, loc: Locator) -> f64 {
        let row = &self.values[i * self.grid.len()..(i + 1) * self.grid.len()];
        match loc {
            Locator::Start(w) => (1.0 - w) + w * row[0],
            Locator::At(j) => row[j],
            Locator::Between(j, w) => (1.0 - w) * row[j] + w * row[j + 1],
        }
    }

    pub fn at(&self, i: usize, t: f64) -> f64 {
        self.value(i, self.locate(t))
    }
}

#[derive(Debug, Clone, Copy)]
enum Locator {
    Start(f64),
    At(usize),
    Between(usize, f64),
}

fn check_inputs(pred: &SurvivalPredictions, times: &[f64], events: &[bool]) -> Result<()> {
    if times.len() != events.len() || times.len() != pred.subjects() {
        return Err(Error::shape(
            "metric inputs",
            &[pred.subjects()],
            &[times.len(), events.len()],
        ));
    }
    if times.is_empty() {
        return Err(Error::Contract("metrics need at least one subject".into()));
    }
    Ok(())
}

/// Capped inverse weight, counting caps into `clipped`.
fn inverse_weight(g: f64, power: i32, clipped: &mut usize) -> f64 {
    let w = 1.0 / g.powi(power);
    if w > IPCW_CAP || !w.is_finite() {
        *clipped += 1;
        IPCW_CAP
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub value: f64,
    pub comparable_pairs: usize,
    /// Comparable pairs with exactly equal predictions (counted as discordant).
    pub tied_pairs: usize,
    pub clipped: usize,
}

/// IPCW time-dependent concordance with event weights `min(1/Ĝ(o_i⁻)², 10)`.
pub fn c_index_td(
    pred: &SurvivalPredictions,
    times: &[f64],
    events: &[bool],
    g: &StepFunction,
    horizon: f64,
) -> Result<Concordance> {
    check_inputs(pred, times, events)?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let (mut num, mut den) = (0.0, 0.0);
    let (mut pairs, mut ties, mut clipped) = (0usize, 0usize, 0usize);
    for (rank, &i) in order.iter().enumerate() {
        let oi = times[i];
        if !events[i] || oi >= horizon {
            continue;
        }
        let w = inverse_weight(g.before(oi), 2, &mut clipped);
        let loc = pred.locate(oi);
        let si = pred.value(i, loc);
        let first_later = rank + order[rank..].partition_point(|&j| times[j] <= oi);
        for &j in &order[first_later..] {
            let sj = pred.value(j, loc);
            pairs += 1;
            den += w;
            if si < sj {
                num += w;
            } else if si == sj {
                ties += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric("no comparable pairs before the horizon".into()));
    }
    Ok(Concordance {
        value: num / den,
        comparable_pairs: pairs,
        tied_pairs: ties,
        clipped,
    })
}

/// A metric value with the number of weight caps it triggered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub value: f64,
    pub clipped: usize,
}

fn check_time(g: &StepFunction, t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Horizon(format!("evaluation time {t} is invalid")));
    }
    if g.at(t) <= 0.0 {
        return Err(Error::Horizon(format!(
            "censoring survival is zero at t = {t}; outside the support of the training split"
        )));
    }
    Ok(())
}

fn ipcw_score(
    pred: &SurvivalPredictions,
    times: &[f64],
    events: &[bool],
    g: &StepFunction,
    t: f64,
    event_term: impl Fn(f64) -> f64,
    alive_term: impl Fn(f64) -> f64,
) -> Result<Scored> {
    check_inputs(pred, times, events)?;
    check_time(g, t)?;
    let mut clipped = 0;
    let w_alive = inverse_weight(g.at(t), 1, &mut clipped);
    let loc = pred.locate(t);
    let mut total = 0.0;
    for i in 0..times.len() {
        let s = pred.value(i, loc);
        if times[i] < t && events[i] {
            total += event_term(s) * inverse_weight(g.before(times[i]), 1, &mut clipped);
        } else if times[i] > t {
            total += alive_term(s) * w_alive;
        }
    }
    Ok(Scored {
        value: total / times.len() as f64,
        clipped,
    })
}

/// IPCW Brier score at time `t`.
pub fn brier(pred: &SurvivalPredictions, times: &[f64], events: &[bool], g: &StepFunction, t: f64) -> Result<Scored> {
    ipcw_score(pred, times, events, g, t, |s| s * s, |s| (1.0 - s) * (1.0 - s))
}

/// IPCW binomial log-likelihood at time `t`.
pub fn bll(pred: &SurvivalPredictions, times: &[f64], events: &[bool], g: &StepFunction, t: f64) -> Result<Scored> {
    let clamp = |s: f64| s.clamp(BLL_CLAMP, 1.0 - BLL_CLAMP);
    ipcw_score(
        pred,
        times,
        events,
        g,
        t,
        |s| (1.0 - clamp(s)).ln(),
        |s| clamp(s).ln(),
    )
}

/// `INTEGRATION_POINTS` equally spaced times from the smallest positive observed time to `horizon`.
pub fn integration_grid(times: &[f64], horizon: f64) -> Result<Vec<f64>> {
    let start = times
        .iter()
        .copied()
        .filter(|&t| t > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !(start < horizon) {
        return Err(Error::Horizon(format!(
            "horizon {horizon} does not exceed the smallest positive observed time {start}"
        )));
    }
    let step = (horizon - start) / (INTEGRATION_POINTS - 1) as f64;
    Ok((0..INTEGRATION_POINTS).map(|k| start + step * k as f64).collect())
}

fn integrate(
    pred: &SurvivalPredictions,
    times: &[f64],
    events: &[bool],
    g: &StepFunction,
    horizon: f64,
    score: fn(&SurvivalPredictions, &[f64], &[bool], &StepFunction, f64) -> Result<Scored>,
) -> Result<Scored> {
    let grid = integration_grid(times, horizon)?;
    let mut values = Vec::with_capacity(grid.len());
    let mut clipped = 0;
    for &t in &grid {
        let s = score(pred, times, events, g, t)?;
        clipped += s.clipped;
        values.push(s.value);
    }
    let area: f64 = (1..grid.len())
        .map(|k| 0.5 * (grid[k] - grid[k - 1]) * (values[k] + values[k - 1]))
        .sum();
    Ok(Scored {
        value: area / (grid[grid.len() - 1] - grid[0]),
        clipped,
    })
}

pub fn ibs(pred: &SurvivalPredictions, times: &[f64], events: &[bool], g: &StepFunction, horizon: f64) -> Result<Scored> {
    integrate(pred, times, events, g, horizon, brier)
}

pub fn ibll(pred: &SurvivalPredictions, times: &[f64], events: &[bool], g: &StepFunction, horizon: f64) -> Result<Scored> {
    integrate(pred, times, events, g, horizon, bll)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCalibration {
    pub statistic: f64,
    pub p_value: f64,
    pub counts: Vec<f64>,
}

/// Chi-square uniformity test of `Ŝ_i(o_i)`. Censored subjects spread unit mass
/// uniformly over `[0, Ŝ_i(o_i)]`.
pub fn d_calibration(survival_at_observed: &[f64], events: &[bool], bins: usize) -> Result<DCalibration> {
    if survival_at_observed.is_empty() || survival_at_observed.len() != events.len() {
        return Err(Error::Contract("D-calibration needs matching nonempty inputs".into()));
    }
    if bins < 2 {
        return Err(Error::Contract("D-calibration needs at least two bins".into()));
    }
    let width = 1.0 / bins as f64;
    let mut counts = vec![0.0; bins];
    for (&s, &event) in survival_at_observed.iter().zip(events) {
        if !s.is_finite() {
            return Err(Error::numeric("survival at observed time", s));
        }
        let s = s.clamp(0.0, 1.0);
        let bin_of = |v: f64| ((v / width) as usize).min(bins - 1);
        if event || s == 0.0 {
            counts[bin_of(s)] += 1.0;
            continue;
        }
        for (b, c) in counts.iter_mut().enumerate() {
            let lo = b as f64 * width;
            let overlap = (s.min(lo + width) - lo).max(0.0);
            *c += overlap / s;
        }
    }
    let expected = survival_at_observed.len() as f64 / bins as f64;
    let statistic: f64 = counts.iter().map(|o| (o - expected).powi(2) / expected).sum();
    let dof = (bins - 1) as f64;
    let p_value = if statistic > 0.0 {
        gamma_ur(dof / 2.0, statistic / 2.0).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(DCalibration {
        statistic,
        p_value,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationHorizons {
    pub full: f64,
    pub q1: f64,
    pub q2: f64,
}

impl EvaluationHorizons {
    pub fn named(&self) -> [(&'static str, f64); 3] {
        [("full", self.full), ("q1", self.q1), ("q2", self.q2)]
    }
}

/// Full horizon: largest training time with `Ĝ ≥ 0.001`. Q1 and Q2: the
/// 25% and 50% quantiles of test observed times. Ties are kept as they are.
pub fn select_horizons(train: &Dataset, test: &Dataset) -> Result<EvaluationHorizons> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Horizon("empty split".into()));
    }
    let g = censoring_survival(train)?;
    let full = train
        .times()
        .into_iter()
        .filter(|&t| g.at(t) >= HORIZON_SUPPORT)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(full > 0.0) {
        return Err(Error::Horizon("censoring survival has no support above zero".into()));
    }
    let test_times = test.times();
    Ok(EvaluationHorizons {
        full,
        q1: quantile(&test_times, 0.25)?,
        q2: quantile(&test_times, 0.5)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub tau: f64,
    pub ctd: f64,
    pub ibs: f64,
    pub ibll: f64,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub full: HorizonMetrics,
    pub q1: HorizonMetrics,
    pub q2: HorizonMetrics,
    pub dcal_p: f64,
    pub dcal_stat: f64,
    /// Comparable pairs at the full horizon.
    pub n_comparable_pairs: usize,
    /// Number of IPCW weights that hit the cap, over all metrics.
    pub clip_events: usize,
    /// Horizons that coincide, such as `q2=full`.
    pub horizon_ties: Vec<String>,
}

/// All metrics at the three horizons. `survival_at_observed` holds `Ŝ_i(o_i)` for the test set.
pub fn evaluate(
    pred: &SurvivalPredictions,
    survival_at_observed: &[f64],
    train: &Dataset,
    test: &Dataset,
) -> Result<EvaluationReport> {
    let g = censoring_survival(train)?;
    let horizons = select_horizons(train, test)?;
    let (times, events) = (test.times(), test.events());
    let mut clip_events = 0;
    let mut pairs = 0;
    let mut at = |tau: f64, is_full: bool| -> Result<HorizonMetrics> {
        let c = c_index_td(pred, &times, &events, &g, tau)?;
        let b = ibs(pred, &times, &events, &g, tau)?;
        let l = ibll(pred, &times, &events, &g, tau)?;
        clip_events += c.clipped + b.clipped + l.clipped;
        if is_full {
            pairs = c.comparable_pairs;
        }
        Ok(HorizonMetrics {
            tau,
            ctd: c.value,
            ibs: b.value,
            ibll: l.value,
        })
    };
    let full = at(horizons.full, true)?;
    let q1 = at(horizons.q1, false)?;
    let q2 = at(horizons.q2, false)?;
    let dcal = d_calibration(survival_at_observed, &events, DCAL_BINS)?;
    let named = horizons.named();
    let mut horizon_ties = Vec::new();
    for a in 0..3 {
        for b in a + 1..3 {
            if named[a].1 == named[b].1 {
                horizon_ties.push(format!("{}={}", named[b].0, named[a].0));
            }
        }
    }
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        full,
        q1,
        q2,
        dcal_p: dcal.p_value,
        dcal_stat: dcal.statistic,
        n_comparable_pairs: pairs,
        clip_events,
        horizon_ties,
    })
}

/// Points of the survival grid used by [`evaluate_model`].
pub const PREDICTION_GRID_POINTS: usize = 200;

/// Scores `model` on `test` with `Ĝ` from `train`. Survival is predicted on an
/// even grid up to the largest test time; `Ŝ_i(o_i)` for D-calibration is exact.
pub fn evaluate_model(model: &HazardModel, rule: &QuadratureRule, train: &Dataset, test: &Dataset) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::Contract("empty test set".into()));
    }
    if test.dim() != model.architecture().input_dim {
        return Err(Error::shape("test covariates", &[test.dim()], &[model.architecture().input_dim]));
    }
    let times = test.times();
    let t_max = times.iter().copied().fold(0.0, f64::max);
    if !(t_max > 0.0) {
        return Err(Error::DegenerateData("every test time is zero".into()));
    }
    let n = PREDICTION_GRID_POINTS as f64;
    let grid: Vec<f64> = (1..=PREDICTION_GRID_POINTS).map(|i| t_max * i as f64 / n).collect();
    let xs = test.covariates();
    let curves = model.grid_curves(&xs, &grid, rule)?;
    let pred = SurvivalPredictions::new(grid, curves.survival())?;
    let at_observed: Vec<f64> = model
        .cumulative_hazard_each(&xs, &times, rule)?
        .into_iter()
        .map(|c| (-c).exp())
        .collect();
    evaluate(&pred, &at_observed, train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: &[(f64, bool)]) -> Dataset {
        let records = rows
            .iter()
            .map(|&(time, event)| SurvivalRecord { x: vec![0.0], time, event })
            .collect();
        Dataset::new(vec!["x".into()], records).unwrap()
    }

    #[test]
    fn km_examples() {
        let single = kaplan_meier(&[5.0], &[true]).unwrap();
        assert_eq!(single.at(4.999), 1.0);
        assert_eq!(single.at(5.0), 0.0);
        assert_eq!(single.before(5.0), 1.0);
        // Censoring KM of an all-censored set: every flip is an event.
        let g = censoring_survival(&dataset(&[(1.0, false), (2.0, false), (3.0, false)])).unwrap();
        assert!((g.at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.at(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.at(3.0), 0.0);
        assert!(kaplan_meier(&[], &[]).is_err());
    }

    #[test]
    fn km_without_censoring_is_empirical() {
        let times = [3.0, 1.0, 2.0, 2.0, 5.0];
        let km = kaplan_meier(&times, &[true; 5]).unwrap();
        for t in [0.5, 1.0, 1.5, 2.0, 4.0, 5.0] {
            let empirical = times.iter().filter(|&&s| s > t).count() as f64 / 5.0;
            assert!((km.at(t) - empirical).abs() < 1e-15);
        }
    }

    #[test]
    fn km_matches_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let times: Vec<f64> = (0..100_000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let km = kaplan_meier(&times, &vec![true; times.len()]).unwrap();
        let sup = km
            .times
            .iter()
            .zip(&km.values)
            .map(|(&t, &s)| (s - (-t).exp()).abs().max((km.before(t) - (-t).exp()).abs()))
            .fold(0.0, f64::max);
        assert!(sup < 0.01, "{sup}");
    }

    fn constant_predictions(values: &[f64], grid: &[f64]) -> SurvivalPredictions {
        let v = values.iter().flat_map(|&s| std::iter::repeat_n(s, grid.len())).collect();
        SurvivalPredictions::new(grid.to_vec(), v).unwrap()
    }

    #[test]
    fn c_index_perfect_and_tied() {
        let grid: Vec<f64> = (1..=10).map(f64::from).collect();
        let times: Vec<f64> = (1..=10).map(f64::from).collect();
        let events = vec![true; 10];
        let g = kaplan_meier(&times, &[false; 10]).unwrap();
        // Earlier failure gets lower survival at every time.
        let perfect = constant_predictions(&times.iter().map(|t| t / 20.0).collect::<Vec<_>>(), &grid);
        let c = c_index_td(&perfect, &times, &events, &g, 11.0).unwrap();
        assert_eq!(c.value, 1.0);
        assert_eq!(c.comparable_pairs, 45);
        let flat = constant_predictions(&[0.5; 10], &grid);
        let c = c_index_td(&flat, &times, &events, &g, 11.0).unwrap();
        assert_eq!(c.value, 0.0);
        assert_eq!(c.tied_pairs, 45);
        let none = c_index_td(&flat, &times, &[false; 10], &g, 11.0);
        assert!(matches!(none, Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn c_index_random_predictions_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2000;
        let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let g = kaplan_meier(&times, &vec![false; n]).unwrap();
        let grid = vec![10.0];
        let random: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let pred = constant_predictions(&random, &grid);
        let c = c_index_td(&pred, &times, &vec![true; n], &g, 11.0).unwrap();
        assert!((c.value - 0.5).abs() < 0.05, "{}", c.value);
    }

    proptest! {
        #[test]
        fn c_index_invariant_under_increasing_maps(
            seed in 0u64..1000,
            power in 0.2f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 30;
            let grid: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let times = grid.clone();
            let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
            let values: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let g = kaplan_meier(&times, &events.iter().map(|e| !e).collect::<Vec<_>>()).unwrap();
            let a = SurvivalPredictions::new(grid.clone(), values.clone()).unwrap();
            let b = SurvivalPredictions::new(grid, values.iter().map(|v| v.powf(power)).collect()).unwrap();
            if let (Ok(ca), Ok(cb)) = (
                c_index_td(&a, &times, &events, &g, 1e9),
                c_index_td(&b, &times, &events, &g, 1e9),
            ) {
                prop_assert!((ca.value - cb.value).abs() < 1e-12);
            }
        }

        #[test]
        fn brier_bounded_without_censoring(
            seed in 0u64..1000,
            t in 0.5f64..9.5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 25;
            let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
            let grid = vec![1.0, 5.0, 10.0];
            let values: Vec<f64> = (0..n * 3).map(|_| rng.random::<f64>()).collect();
            let pred = SurvivalPredictions::new(grid, values).unwrap();
            let g = kaplan_meier(&times, &vec![false; n]).unwrap();
            let bs = brier(&pred, &times, &vec![true; n], &g, t).unwrap();
            prop_assert!(bs.value >= 0.0 && bs.value <= 1.0);
            prop_assert_eq!(bs.clipped, 0);
        }
    }

    /// Three subjects: event at 1, censored at 2, event at 3; Ĝ from the same data.
    #[test]
    fn three_subject_brier_and_bll() {
        let times = [1.0, 2.0, 3.0];
        let events = [true, false, true];
        let g = kaplan_meier(&times, &[false, true, false]).unwrap();
        // Ĝ: 1 before 2, then 1 - 1/2 = 0.5.
        assert_eq!(g.before(2.0), 1.0);
        assert_eq!(g.at(2.5), 0.5);
        let grid = vec![2.5];
        let pred = SurvivalPredictions::new(grid, vec![0.2, 0.6, 0.7]).unwrap();
        let t = 2.5;
        // Subject 1: event before t, weight 1/Ĝ(1⁻) = 1. Subject 2: censored before t, 0.
        // Subject 3: alive at t, weight 1/Ĝ(2.5) = 2.
        let bs_hand = (0.2f64.powi(2) * 1.0 + (1.0 - 0.7f64).powi(2) * 2.0) / 3.0;
        let bll_hand = ((1.0 - 0.2f64).ln() * 1.0 + 0.7f64.ln() * 2.0) / 3.0;
        let bs = brier(&pred, &times, &events, &g, t).unwrap();
        let ll = bll(&pred, &times, &events, &g, t).unwrap();
        assert!((bs.value - bs_hand).abs() < 1e-12);
        assert!((ll.value - bll_hand).abs() < 1e-12);
    }

    #[test]
    fn brier_and_bll_trivial_cases() {
        let g = StepFunction { times: vec![], values: vec![] };
        let one = SurvivalPredictions::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(brier(&one, &[5.0], &[true], &g, 1.0).unwrap().value, 0.0);
        let zero = SurvivalPredictions::new(vec![1.0], vec![0.0]).unwrap();
        assert_eq!(brier(&zero, &[0.5], &[true], &g, 1.0).unwrap().value, 0.0);
        let half = SurvivalPredictions::new(vec![1.0, 2.0], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let ll = bll(&half, &[0.5, 3.0], &[true, true], &g, 1.5).unwrap();
        assert!((ll.value - 0.5f64.ln()).abs() < 1e-15);
        let hard = bll(&zero, &[0.5], &[true], &g, 1.0).unwrap();
        assert!((hard.value - (1.0 - 1e-7f64).ln()).abs() < 1e-20);
    }

    #[test]
    fn weights_are_capped() {
        let g = StepFunction { times: vec![1.0], values: vec![0.01] };
        let pred = SurvivalPredictions::new(vec![2.0], vec![0.5]).unwrap();
        let bs = brier(&pred, &[3.0], &[true], &g, 2.0).unwrap();
        assert_eq!(bs.clipped, 1);
        assert!((bs.value - 0.25 * IPCW_CAP).abs() < 1e-15);
        let dead = StepFunction { times: vec![1.0], values: vec![0.0] };
        assert!(matches!(brier(&pred, &[3.0], &[true], &dead, 2.0), Err(Error::Horizon(_))));
    }

    #[test]
    fn d_calibration_examples() {
        let one = d_calibration(&[1.0], &[false], 10).unwrap();
        for c in &one.counts {
            assert!((c - 0.1).abs() < 1e-15);
        }
        let lumped = d_calibration(&vec![0.55; 100], &[true; 100], 10).unwrap();
        assert!((lumped.statistic - 900.0).abs() < 1e-9);
        assert!(lumped.p_value < 1e-100);
        let uniform: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let flat = d_calibration(&uniform, &[true; 100], 10).unwrap();
        assert_eq!(flat.statistic, 0.0);
        assert_eq!(flat.p_value, 1.0);
    }

    #[test]
    fn d_calibration_rejection_rate_under_pit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rejections = 0;
        for _ in 0..200 {
            let s: Vec<f64> = (0..500).map(|_| rng.random()).collect();
            if d_calibration(&s, &vec![true; 500], 10).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 200.0;
        assert!((0.02..=0.10).contains(&rate), "{rate}");
    }

    #[test]
    fn horizons_from_sorted_times() {
        let train = dataset(&[(1.0, true), (2.0, true), (4.0, true), (8.0, true)]);
        let test = dataset(&[
            (1.0, true),
            (2.0, false),
            (3.0, true),
            (4.0, true),
            (5.0, false),
            (6.0, true),
            (7.0, true),
            (8.0, true),
        ]);
        let h = select_horizons(&train, &test).unwrap();
        assert_eq!(h.full, 8.0);
        // Positions 1.75 and 3.5 in the sorted list.
        assert_eq!(h.q1, 2.75);
        assert_eq!(h.q2, 4.5);
    }

    #[test]
    fn horizon_needs_censoring_support() {
        // Ĝ falls to 0 at 1 and the only later time is unsupported.
        let train = dataset(&[(1.0, false), (2.0, true)]);
        let g = censoring_survival(&train).unwrap();
        assert_eq!(g.at(1.0), 0.5);
        let h = select_horizons(&train, &train).unwrap();
        assert_eq!(h.full, 2.0);
        let dead = dataset(&[(1.0, false)]);
        assert!(matches!(select_horizons(&dead, &train), Err(Error::Horizon(_))));
    }

    #[test]
    fn interpolation_starts_at_one() {
        let p = SurvivalPredictions::new(vec![2.0, 4.0], vec![0.8, 0.4]).unwrap();
        assert_eq!(p.at(0, 0.0), 1.0);
        assert!((p.at(0, 1.0) - 0.9).abs() < 1e-15);
        assert!((p.at(0, 3.0) - 0.6).abs() < 1e-15);
        assert_eq!(p.at(0, 9.0), 0.4);
    }
}
