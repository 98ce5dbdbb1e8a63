//! Synthetic survival data with closed-form ground truth.
//!
//! Six parametric families whose parameters are cubic polynomials of a single
//! covariate `x ~ U(-1, 1)` (mapped through `exp` where positivity is needed),
//! plus two node-count scenarios with a binary covariate.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::data::{Dataset, SurvivalRecord};
use crate::error::{Error, Result};
use crate::model::{GridCurves, HazardModel};
use crate::quadrature::QuadratureRule;

/// Draws used by [`calibrate_censoring`].
pub const CALIBRATION_DRAWS: usize = 100_000;
/// Points in the default curve-comparison grid.
pub const EVAL_GRID_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Weibull,
    Gamma,
    Gompertz,
    LogNormal,
    LogLogistic,
    /// Crossing hazards, `λ(t|x) = (1+x) t^x` with `x ∈ {0, 1}`.
    Scenario1,
    /// Anti-phase sinusoidal hazards, `λ(t|x) = 1 + 0.8(1-2x) sin 4t`.
    Scenario2,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Exponential,
        Family::Weibull,
        Family::Gamma,
        Family::Gompertz,
        Family::LogNormal,
        Family::LogLogistic,
        Family::Scenario1,
        Family::Scenario2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::Gamma => "gamma",
            Family::Gompertz => "gompertz",
            Family::LogNormal => "lognormal",
            Family::LogLogistic => "loglogistic",
            Family::Scenario1 => "scenario1",
            Family::Scenario2 => "scenario2",
        }
    }

    /// Default coefficient vectors, one per distribution parameter.
    pub fn default_coefficients(self) -> Vec<Vec<f64>> {
        match self {
            Family::Exponential => vec![vec![-1.0, 0.5, -0.3, 0.15]],
            Family::Weibull => vec![vec![0.3, 0.2, -0.1, 0.05], vec![2.0, 0.3, -0.2, 0.1]],
            Family::Gamma => vec![vec![1.8, 0.3, -0.1, 0.05], vec![0.3, -0.4, 0.15, -0.05]],
            Family::Gompertz => vec![vec![-2.0, 0.4, -0.2, 0.1], vec![0.05]],
            Family::LogNormal => vec![vec![1.5, 0.8, -0.4, 0.2], vec![-0.1, 0.25, -0.10, 0.03]],
            Family::LogLogistic => vec![vec![1.2, 0.4, -0.15, 0.08], vec![1.0, 0.3, -0.1, 0.05]],
            Family::Scenario1 | Family::Scenario2 => Vec::new(),
        }
    }

    fn coefficient_shape(self) -> &'static [usize] {
        match self {
            Family::Exponential => &[4],
            Family::Gompertz => &[4, 1],
            Family::Weibull | Family::Gamma | Family::LogNormal | Family::LogLogistic => &[4, 4],
            Family::Scenario1 | Family::Scenario2 => &[],
        }
    }

    pub fn is_scenario(self) -> bool {
        matches!(self, Family::Scenario1 | Family::Scenario2)
    }

    pub fn default_censoring(self) -> CensoringPlan {
        match self {
            Family::Scenario1 => CensoringPlan::Fixed(CensoringScheme::Uniform { upper: 2.0 }),
            Family::Scenario2 => CensoringPlan::Fixed(CensoringScheme::Exponential { rate: 1.0 / 3.0 }),
            _ => CensoringPlan::TargetRate(0.2),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Family::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown family `{s}`")))
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Censoring-time distribution, independent of covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CensoringScheme {
    None,
    Uniform { upper: f64 },
    Exponential { rate: f64 },
}

impl CensoringScheme {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CensoringScheme::None => f64::INFINITY,
            CensoringScheme::Uniform { upper } if upper.is_infinite() => f64::INFINITY,
            CensoringScheme::Uniform { upper } => rng.random::<f64>() * upper,
            CensoringScheme::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringPlan {
    /// Uniform censoring whose upper bound is calibrated to this rate.
    TargetRate(f64),
    Fixed(CensoringScheme),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub coefficients: Vec<Vec<f64>>,
    pub censoring: CensoringPlan,
    pub n_train: usize,
    pub n_test: usize,
}

impl GeneratorSpec {
    /// Default coefficients and censoring, 2000 training and 2000 test subjects.
    pub fn new(family: Family) -> Self {
        Self {
            family,
            coefficients: family.default_coefficients(),
            censoring: family.default_censoring(),
            n_train: 2000,
            n_test: 2000,
        }
    }

    pub fn truth(&self) -> Result<GroundTruth> {
        GroundTruth::new(self.family, self.coefficients.clone())
    }
}

fn poly(w: &[f64], x: f64) -> f64 {
    w[0] + x * (w[1] + x * (w[2] + x * w[3]))
}

/// Closed-form hazard, cumulative hazard and survival of one generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    family: Family,
    coefficients: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn new(family: Family, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        let shape: Vec<usize> = coefficients.iter().map(Vec::len).collect();
        if shape != family.coefficient_shape() {
            return Err(Error::Config(format!(
                "{family} expects coefficient lengths {:?}, got {shape:?}",
                family.coefficient_shape()
            )));
        }
        if coefficients.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        if family == Family::Gompertz && coefficients[1][0] <= 0.0 {
            return Err(Error::Config("Gompertz c must be positive".into()));
        }
        Ok(Self {
            family,
            coefficients,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Draws one covariate value.
    pub fn sample_covariate<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.family.is_scenario() {
            if rng.random::<bool>() {
                1.0
            } else {
                0.0
            }
        } else {
            rng.random_range(-1.0..1.0)
        }
    }

    fn p(&self, i: usize, x: f64) -> f64 {
        poly(&self.coefficients[i], x)
    }

    pub fn hazard(&self, x: f64, t: f64) -> f64 {
        match self.family {
            Family::Exponential => self.p(0, x).exp(),
            Family::Weibull => {
                let (k, lam) = (self.p(0, x).exp(), self.p(1, x).exp());
                (k / lam) * (t / lam).powf(k - 1.0)
            }
            Family::Gamma => {
                let (k, beta) = (self.p(0, x).exp(), self.p(1, x).exp());
                if t == 0.0 {
                    return if k > 1.0 { 0.0 } else if k == 1.0 { beta } else { f64::INFINITY };
                }
                let s = gamma_ur(k, beta * t);
                if s < 1e-280 {
                    return beta * (1.0 + (k - 1.0) / (beta * t));
                }
                let ln_pdf = k * beta.ln() + (k - 1.0) * t.ln() - beta * t - ln_gamma(k);
                (ln_pdf - s.ln()).exp()
            }
            Family::Gompertz => {
                let (b, c) = (self.p(0, x).exp(), self.coefficients[1][0]);
                b * (c * t).exp()
            }
            Family::LogNormal => {
                if t == 0.0 {
                    return 0.0;
                }
                let (mu, sigma) = (self.p(0, x), self.p(1, x).exp());
                let z = (t.ln() - mu) / sigma;
                let s = 0.5 * erfc(z / SQRT_2);
                (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * sigma * t * s)
            }
            Family::LogLogistic => {
                let (alpha, beta) = (self.p(0, x).exp(), self.p(1, x).exp());
                let r = (t / alpha).powf(beta);
                (beta / alpha) * (t / alpha).powf(beta - 1.0) / (1.0 + r)
            }
            Family::Scenario1 => (1.0 + x) * t.powf(x),
            Family::Scenario2 => 1.0 + 0.8 * (1.0 - 2.0 * x) * (4.0 * t).sin(),
        }
    }

    pub fn cumulative_hazard(&self, x: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.family {
            Family::Exponential => self.p(0, x).exp() * t,
            Family::Weibull => (t / self.p(1, x).exp()).powf(self.p(0, x).exp()),
            Family::Gamma => {
                let (k, beta) = (self.p(0, x).exp(), self.p(1, x).exp());
                -gamma_ur(k, beta * t).ln()
            }
            Family::Gompertz => {
                let (b, c) = (self.p(0, x).exp(), self.coefficients[1][0]);
                b / c * (c * t).exp_m1()
            }
            Family::LogNormal => {
                let (mu, sigma) = (self.p(0, x), self.p(1, x).exp());
                let z = (t.ln() - mu) / sigma;
                -(0.5 * erfc(z / SQRT_2)).ln()
            }
            Family::LogLogistic => {
                let (alpha, beta) = (self.p(0, x).exp(), self.p(1, x).exp());
                (t / alpha).powf(beta).ln_1p()
            }
            Family::Scenario1 => t.powf(1.0 + x),
            Family::Scenario2 => t + 0.2 * (1.0 - 2.0 * x) * (1.0 - (4.0 * t).cos()),
        }
    }

    pub fn survival(&self, x: f64, t: f64) -> f64 {
        (-self.cumulative_hazard(x, t)).exp()
    }

    /// Draws an event time for covariate `x`.
    pub fn sample_event_time<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        match self.family {
            Family::Exponential => e / self.p(0, x).exp(),
            Family::Weibull => self.p(1, x).exp() * e.powf(1.0 / self.p(0, x).exp()),
            Family::Gamma => {
                let (k, beta) = (self.p(0, x).exp(), self.p(1, x).exp());
                let g = rand_distr::Gamma::new(k, 1.0 / beta).expect("positive gamma parameters");
                g.sample(rng)
            }
            Family::Gompertz => {
                let (b, c) = (self.p(0, x).exp(), self.coefficients[1][0]);
                (c * e / b).ln_1p() / c
            }
            Family::LogNormal => {
                let z: f64 = StandardNormal.sample(rng);
                (self.p(0, x) + self.p(1, x).exp() * z).exp()
            }
            Family::LogLogistic => {
                // S(T) = exp(-e) gives (T/α)^β = e^e - 1.
                let (alpha, beta) = (self.p(0, x).exp(), self.p(1, x).exp());
                alpha * e.exp_m1().powf(1.0 / beta)
            }
            Family::Scenario1 => e.powf(1.0 / (1.0 + x)),
            Family::Scenario2 => self.invert_cumulative_hazard(x, e),
        }
    }

    /// Solves `Λ(t|x) = target` by bisection. Valid for scenario 2 where `|Λ - t| ≤ 0.4`.
    fn invert_cumulative_hazard(&self, x: f64, target: f64) -> f64 {
        let (mut lo, mut hi) = ((target - 0.4).max(0.0), target + 0.4);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.cumulative_hazard(x, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Uniform upper bound `b` with `P(C < T) = target` for `C ~ U(0, b)`.
///
/// `P(C < T) = E[min(T, b)] / b` is solved exactly for the Monte-Carlo sample by
/// bisection in `ln b`. A target of zero returns `+∞` (no censoring).
pub fn calibrate_censoring<R: Rng + ?Sized>(truth: &GroundTruth, target: f64, rng: &mut R) -> Result<f64> {
    if target == 0.0 {
        return Ok(f64::INFINITY);
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Calibration(format!("target rate {target} outside [0, 1)")));
    }
    let mut times: Vec<f64> = (0..CALIBRATION_DRAWS)
        .map(|_| {
            let x = truth.sample_covariate(rng);
            truth.sample_event_time(x, rng)
        })
        .collect();
    times.sort_by(f64::total_cmp);
    if times[0] <= 0.0 && times[times.len() - 1] <= 0.0 {
        return Err(Error::Calibration("all event times are zero".into()));
    }
    let n = times.len() as f64;
    let mean: f64 = times.iter().sum::<f64>() / n;
    let rate = |b: f64| times.iter().map(|&t| t.min(b)).sum::<f64>() / (n * b);
    let min_pos = times.iter().copied().find(|&t| t > 0.0).unwrap_or(1e-300);
    let (mut lo, mut hi) = ((0.5 * min_pos).ln(), (mean / target).max(times[times.len() - 1]).ln());
    if rate(lo.exp()) < target {
        return Err(Error::Calibration(format!("rate {target} is not reachable")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Training and test draws from one generator.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub train: Dataset,
    pub test: Dataset,
    pub censoring: CensoringScheme,
    pub truth: GroundTruth,
}

fn draw(truth: &GroundTruth, censoring: &CensoringScheme, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let records = (0..n)
        .map(|_| {
            let x = truth.sample_covariate(rng);
            let t = truth.sample_event_time(x, rng);
            let c = censoring.sample(rng);
            SurvivalRecord {
                x: vec![x],
                time: t.min(c),
                event: t <= c,
            }
        })
        .collect();
    Dataset::new(vec!["x".into()], records)
}

/// Generates training and test sets. Calibration, training and test use
/// independent ChaCha streams of `seed`.
pub fn simulate(spec: &GeneratorSpec, seed: u64) -> Result<Simulated> {
    let truth = spec.truth()?;
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s);
        rng
    };
    let censoring = match spec.censoring {
        CensoringPlan::Fixed(c) => c,
        CensoringPlan::TargetRate(rate) => {
            let b = calibrate_censoring(&truth, rate, &mut stream(1))?;
            if b.is_infinite() {
                CensoringScheme::None
            } else {
                CensoringScheme::Uniform { upper: b }
            }
        }
    };
    let train = draw(&truth, &censoring, spec.n_train, &mut stream(2))?;
    let test = draw(&truth, &censoring, spec.n_test, &mut stream(3))?;
    Ok(Simulated {
        train,
        test,
        censoring,
        truth,
    })
}

/// Anything that can produce hazard and cumulative-hazard curves on a grid.
pub trait CurveSource {
    fn dim(&self) -> usize;
    fn curves(&self, xs: &[f64], grid: &[f64]) -> Result<GridCurves>;
}

impl CurveSource for GroundTruth {
    fn dim(&self) -> usize {
        1
    }

    fn curves(&self, xs: &[f64], grid: &[f64]) -> Result<GridCurves> {
        let mut hazard = Vec::with_capacity(xs.len() * grid.len());
        let mut cumhaz = Vec::with_capacity(xs.len() * grid.len());
        for &x in xs {
            for &t in grid {
                hazard.push(self.hazard(x, t));
                cumhaz.push(self.cumulative_hazard(x, t));
            }
        }
        Ok(GridCurves {
            grid: grid.to_vec(),
            hazard,
            cumhaz,
        })
    }
}

/// A model paired with the rule used for its per-interval cumulative hazard.
pub struct ModelCurves<'a> {
    pub model: &'a HazardModel,
    pub rule: &'a QuadratureRule,
}

impl CurveSource for ModelCurves<'_> {
    fn dim(&self) -> usize {
        self.model.architecture().input_dim
    }

    fn curves(&self, xs: &[f64], grid: &[f64]) -> Result<GridCurves> {
        self.model.grid_curves(xs, grid, self.rule)
    }
}

/// Population-averaged curves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalCurves {
    pub grid: Vec<f64>,
    pub survival: Vec<f64>,
    pub cumhaz: Vec<f64>,
    pub hazard: Vec<f64>,
}

/// Pointwise means `(1/n) Σ_i f(t | x_i)` of `S`, `Λ` and `λ`.
pub fn marginalized_curves<S: CurveSource + ?Sized>(source: &S, xs: &[f64], grid: &[f64]) -> Result<MarginalCurves> {
    let d = source.dim();
    if xs.is_empty() || !xs.len().is_multiple_of(d) {
        return Err(Error::Contract("marginalization needs a nonempty covariate sample".into()));
    }
    let n = xs.len() / d;
    let c = source.curves(xs, grid)?;
    let g = grid.len();
    let mut out = MarginalCurves {
        grid: grid.to_vec(),
        survival: vec![0.0; g],
        cumhaz: vec![0.0; g],
        hazard: vec![0.0; g],
    };
    for i in 0..n {
        for j in 0..g {
            let k = i * g + j;
            out.survival[j] += (-c.cumhaz[k]).exp() / n as f64;
            out.cumhaz[j] += c.cumhaz[k] / n as f64;
            out.hazard[j] += c.hazard[k] / n as f64;
        }
    }
    Ok(out)
}

/// Errors between two sets of curves for survival, cumulative hazard and hazard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveErrors {
    pub survival: f64,
    pub cumhaz: f64,
    pub hazard: f64,
}

fn trapezoid(grid: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    (1..grid.len())
        .map(|j| 0.5 * (grid[j] - grid[j - 1]) * (f(j) + f(j - 1)))
        .sum()
}

/// Distinct covariate rows with multiplicities, in a fixed order.
fn unique_rows(xs: &[f64], d: usize) -> (Vec<f64>, Vec<usize>) {
    let mut map: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for row in xs.chunks_exact(d) {
        *map.entry(row.iter().map(|v| v.to_bits()).collect()).or_insert(0) += 1;
    }
    let mut rows = Vec::with_capacity(map.len() * d);
    let mut counts = Vec::with_capacity(map.len());
    for (k, c) in map {
        rows.extend(k.into_iter().map(f64::from_bits));
        counts.push(c);
    }
    (rows, counts)
}

/// Mean over subjects of the trapezoid-integrated absolute difference.
pub fn integrated_abs_error<P, T>(pred: &P, truth: &T, xs: &[f64], grid: &[f64]) -> Result<CurveErrors>
where
    P: CurveSource + ?Sized,
    T: CurveSource + ?Sized,
{
    let d = pred.dim();
    if d != truth.dim() {
        return Err(Error::shape("curve sources", &[d], &[truth.dim()]));
    }
    if xs.is_empty() || !xs.len().is_multiple_of(d) || grid.len() < 2 {
        return Err(Error::Contract("curve error needs subjects and at least two grid points".into()));
    }
    let (rows, counts) = unique_rows(xs, d);
    let n: usize = counts.iter().sum();
    let a = pred.curves(&rows, grid)?;
    let b = truth.curves(&rows, grid)?;
    let g = grid.len();
    let mut out = CurveErrors {
        survival: 0.0,
        cumhaz: 0.0,
        hazard: 0.0,
    };
    for (i, &count) in counts.iter().enumerate() {
        let w = count as f64 / n as f64;
        let k = |j: usize| i * g + j;
        out.survival += w * trapezoid(grid, |j| ((-a.cumhaz[k(j)]).exp() - (-b.cumhaz[k(j)]).exp()).abs());
        out.cumhaz += w * trapezoid(grid, |j| (a.cumhaz[k(j)] - b.cumhaz[k(j)]).abs());
        out.hazard += w * trapezoid(grid, |j| (a.hazard[k(j)] - b.hazard[k(j)]).abs());
    }
    Ok(out)
}

/// [`integrated_abs_error`] divided by the grid span.
pub fn l1_error<P, T>(pred: &P, truth: &T, xs: &[f64], grid: &[f64]) -> Result<CurveErrors>
where
    P: CurveSource + ?Sized,
    T: CurveSource + ?Sized,
{
    let e = integrated_abs_error(pred, truth, xs, grid)?;
    let span = grid[grid.len() - 1] - grid[0];
    if span <= 0.0 {
        return Err(Error::Contract("grid has zero span".into()));
    }
    Ok(CurveErrors {
        survival: e.survival / span,
        cumhaz: e.cumhaz / span,
        hazard: e.hazard / span,
    })
}

/// `EVAL_GRID_POINTS` equally spaced points on `(0, p99]` of the observed times.
///
/// Zero is left out because some Weibull hazards are infinite there.
pub fn evaluation_grid(times: &[f64]) -> Result<Vec<f64>> {
    let p99 = quantile(times, 0.99)?;
    if !(p99 > 0.0) {
        return Err(Error::DegenerateData("99th percentile of observed times is zero".into()));
    }
    let n = EVAL_GRID_POINTS as f64;
    Ok((1..=EVAL_GRID_POINTS).map(|i| p99 * i as f64 / n).collect())
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("quantile of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Writes `t, lambda, cumhaz, survival, group` rows for representative covariates
/// and for the marginal over `xs`.
pub fn write_truth_csv<W: Write>(writer: W, truth: &GroundTruth, xs: &[f64], grid: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "lambda", "cumhaz", "survival", "group"])?;
    let groups: &[f64] = if truth.family().is_scenario() {
        &[0.0, 1.0]
    } else {
        &[-0.5, 0.0, 0.5]
    };
    for &x in groups {
        for &t in grid {
            let c = truth.cumulative_hazard(x, t);
            w.write_record([
                format!("{t:?}"),
                format!("{:?}", truth.hazard(x, t)),
                format!("{c:?}"),
                format!("{:?}", (-c).exp()),
                format!("x={x}"),
            ])?;
        }
    }
    let m = marginalized_curves(truth, xs, grid)?;
    for j in 0..grid.len() {
        w.write_record([
            format!("{:?}", grid[j]),
            format!("{:?}", m.hazard[j]),
            format!("{:?}", m.cumhaz[j]),
            format!("{:?}", m.survival[j]),
            "marginal".to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
