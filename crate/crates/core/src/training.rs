//! The quadrature negative log-likelihood and the training loop.
//!
//! Per minibatch `B` the loss is
//! `-(1/|B|) Σ_i [δ_i f(x_i, o_i) - (o_i/2) Σ_k w_k exp f(x_i, o_i τ_k)]`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{c_index_td, censoring_survival, ibs, StepFunction, SurvivalPredictions};
use crate::model::{Architecture, Bound, Conditioning, Forward, HazardModel, Mode};
use crate::quadrature::{self, QuadratureRule};
use crate::simulation::{evaluation_grid, integrated_abs_error, simulate, CurveErrors, GeneratorSpec, ModelCurves};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
/// Quadrature order for the per-interval cumulative hazard on metric grids.
pub const GRID_RULE_ORDER: usize = 2;
const VALIDATION_GRID_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub schema_version: u32,
    pub k_nodes: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub conditioning: Conditioning,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
    pub lora_rank: usize,
    pub embed_dim: usize,
    pub modulation_hidden: usize,
    pub validation_fraction: f64,
    pub clip_norm: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            k_nodes: 15,
            learning_rate: 3e-3,
            weight_decay: 1e-5,
            dropout: 0.0,
            batch_size: 128,
            max_epochs: 200,
            seed: 0,
            conditioning: Conditioning::Lora,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            batch_norm: false,
            lora_rank: 8,
            embed_dim: 16,
            modulation_hidden: 32,
            validation_fraction: 0.2,
            clip_norm: 10.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.k_nodes == 0 || self.k_nodes > quadrature::MAX_ORDER {
            return Err(Error::InvalidOrder(self.k_nodes));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction {} outside (0, 1)", self.validation_fraction));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden sizes {:?} must be nonempty and positive", self.hidden));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive".into());
        }
        Ok(())
    }

    /// Architecture for `data`, with standardization and time scale from `data`.
    pub fn architecture(&self, data: &Dataset) -> Architecture {
        let mut a = Architecture::new(data.dim(), self.hidden.clone(), self.conditioning);
        a.feature_names = data.feature_names.clone();
        a.activation = self.activation;
        a.dropout = self.dropout;
        a.batch_norm = self.batch_norm;
        a.lora_rank = self.lora_rank;
        a.embed_dim = self.embed_dim;
        a.modulation_hidden = self.modulation_hidden;
        a.k_nodes = self.k_nodes;
        let (mean, std) = data.standardization();
        a.feature_mean = mean;
        a.feature_std = std;
        let t_max = data.times().into_iter().fold(0.0, f64::max);
        a.time_scale = if t_max > 0.0 { t_max } else { 1.0 };
        a
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainingConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Standardized covariates, observed times and events of a set of subjects.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_std: Vec<f64>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
}

impl Batch {
    pub fn new(model: &HazardModel, data: &Dataset, idx: &[usize]) -> Result<Self> {
        let mut raw = Vec::with_capacity(idx.len() * data.dim());
        let mut times = Vec::with_capacity(idx.len());
        let mut events = Vec::with_capacity(idx.len());
        for &i in idx {
            let r = &data.records[i];
            raw.extend_from_slice(&r.x);
            times.push(r.time);
            events.push(r.event);
        }
        Ok(Self {
            x_std: model.standardize(&raw)?,
            times,
            events,
        })
    }

    pub fn all(model: &HazardModel, data: &Dataset) -> Result<Self> {
        let idx: Vec<usize> = (0..data.len()).collect();
        Self::new(model, data, &idx)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Records the batch loss in `g`. Returns the scalar loss and the forward output.
pub fn nll_loss(
    g: &mut Graph,
    model: &HazardModel,
    bound: &Bound,
    rule: &QuadratureRule,
    batch: &Batch,
    mode: &mut Mode<'_>,
) -> Result<(crate::autodiff::Var, Forward)> {
    if batch.is_empty() {
        return Err(Error::Contract("loss needs a nonempty batch".into()));
    }
    let k = rule.order();
    let per = k + 1;
    let b = batch.len() as f64;
    let mut times = Vec::with_capacity(batch.len() * per);
    let mut event_coef = vec![0.0; batch.len() * per];
    let mut node_coef = vec![0.0; batch.len() * per];
    for (i, (&o, &d)) in batch.times.iter().zip(&batch.events).enumerate() {
        times.push(o);
        times.extend(rule.node_times(o));
        if d {
            event_coef[i * per] = -1.0 / b;
        }
        for (j, &w) in rule.weights().iter().enumerate() {
            node_coef[i * per + 1 + j] = 0.5 * o * w / b;
        }
    }
    let fwd = model.forward(g, bound, &batch.x_std, &times, mode)?;
    // exp(f) overflows beyond ~709; name the subject before the graph op fails.
    if let Some(row) = g.value(fwd.log_hazard).iter().position(|f| !(*f < 700.0)) {
        return Err(Error::numeric(format!("log-hazard of subject {}", row / per), times[row]));
    }
    let event_term = g.mul_const(fwd.log_hazard, event_coef)?;
    let event_term = g.sum(event_term)?;
    let hazard = g.activation(Activation::Exp, fwd.log_hazard)?;
    let cum_term = g.mul_const(hazard, node_coef)?;
    let cum_term = g.sum(cum_term)?;
    let loss = g.add(event_term, cum_term)?;
    Ok((loss, fwd))
}

/// Evaluation-mode mean loss over `data`, computed in chunks.
pub fn nll_value(model: &HazardModel, rule: &QuadratureRule, data: &Dataset) -> Result<f64> {
    let batch = Batch::all(model, data)?;
    let d = model.architecture().input_dim;
    let chunk = 1024;
    let mut total = 0.0;
    for start in (0..batch.len()).step_by(chunk) {
        let end = (start + chunk).min(batch.len());
        let part = Batch {
            x_std: batch.x_std[start * d..end * d].to_vec(),
            times: batch.times[start..end].to_vec(),
            events: batch.events[start..end].to_vec(),
        };
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let (loss, _) = nll_loss(&mut g, model, &bound, rule, &part, &mut Mode::Eval)?;
        total += g.value(loss)[0] * (end - start) as f64;
    }
    let v = total / batch.len() as f64;
    if !v.is_finite() {
        return Err(Error::numeric("mean loss", v));
    }
    Ok(v)
}

/// First and second moments for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One AdamW update with decoupled weight decay. `grads[i] = None` skips tensor `i`.
pub fn adamw_step(params: &mut [&mut [f64]], grads: &[Option<&[f64]>], state: &mut AdamState, lr: f64, weight_decay: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = grads[i] else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            p[j] -= lr * weight_decay * p[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Cosine annealing from `base` to 0 over `t_max` epochs.
pub fn cosine_lr(base: f64, epoch: usize, t_max: usize) -> f64 {
    0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / t_max as f64).cos())
}

/// Stratified split by event indicator. Returns `(train, validation)` indices.
pub fn stratified_split(data: &Dataset, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for flag in [true, false] {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.records[i].event == flag).collect();
        idx.shuffle(rng);
        let n_val = ((idx.len() as f64) * fraction).round() as usize;
        let n_val = n_val.min(idx.len().saturating_sub(usize::from(flag)));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ctd: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// Optimizer steps whose gradient norm was clipped.
    pub clip_events: usize,
}

impl TrainingLog {
    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// The selected snapshot and its validation scores.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: HazardModel,
    pub best_epoch: usize,
    pub val_ctd: f64,
    pub val_ibs: f64,
}

/// Validation concordance over all events and IBS up to the last supported time.
pub fn validation_scores(model: &HazardModel, val: &Dataset, g: &StepFunction) -> (f64, f64) {
    let inner = || -> Result<(f64, f64)> {
        let times = val.times();
        let events = val.events();
        let t_max = times.iter().copied().fold(0.0, f64::max);
        let grid: Vec<f64> = (1..=VALIDATION_GRID_POINTS)
            .map(|i| t_max * i as f64 / VALIDATION_GRID_POINTS as f64)
            .collect();
        let rule = quadrature::rule(GRID_RULE_ORDER)?;
        let curves = model.grid_curves(&val.covariates(), &grid, &rule)?;
        let pred = SurvivalPredictions::new(grid, curves.survival())?;
        let ctd = c_index_td(&pred, &times, &events, g, f64::INFINITY).map_or(f64::NAN, |c| c.value);
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let horizon = sorted
            .iter()
            .rev()
            .copied()
            .find(|&t| g.at(t) > 0.0 && t > sorted[0])
            .unwrap_or(f64::NAN);
        let ibs = ibs(&pred, &times, &events, g, horizon).map_or(f64::NAN, |s| s.value);
        Ok((ctd, ibs))
    };
    inner().unwrap_or((f64::NAN, f64::NAN))
}

/// True when `(ctd, ibs)` beats `(best_ctd, best_ibs)`: higher C_td, then lower IBS.
fn improves(ctd: f64, ibs: f64, best_ctd: f64, best_ibs: f64) -> bool {
    let ctd = if ctd.is_nan() { f64::NEG_INFINITY } else { ctd };
    let best_ctd = if best_ctd.is_nan() { f64::NEG_INFINITY } else { best_ctd };
    if ctd != best_ctd {
        return ctd > best_ctd;
    }
    let ibs = if ibs.is_nan() { f64::INFINITY } else { ibs };
    let best_ibs = if best_ibs.is_nan() { f64::INFINITY } else { best_ibs };
    ibs < best_ibs
}

/// Fits a model with minibatch AdamW and keeps the snapshot with the best validation score.
pub fn train(config: &TrainingConfig, data: &Dataset) -> Result<(TrainedModel, TrainingLog)> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::DegenerateData("training needs at least two subjects".into()));
    }
    if data.event_count() == 0 {
        return Err(Error::DegenerateData("every subject is censored".into()));
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    split_rng.set_stream(1);
    let (train_idx, val_idx) = stratified_split(data, config.validation_fraction, &mut split_rng);
    let train_set = data.subset(&train_idx);
    let val_set = data.subset(&val_idx);
    if val_set.is_empty() {
        return Err(Error::DegenerateData("validation split is empty".into()));
    }
    let arch = config.architecture(&train_set);
    arch.validate()?;
    let mut model = HazardModel::new(arch, config.seed)?;
    let total_time: f64 = train_set.times().iter().sum();
    if total_time > 0.0 {
        let rate = train_set.event_count() as f64 / total_time;
        let idx = model.output_bias_index();
        model.parameters_mut().get_mut(idx).values_mut()[0] = rate.ln();
    }
    let rule = quadrature::rule(config.k_nodes)?;
    let g_train = censoring_survival(&train_set)?;
    let train_batch = Batch::all(&model, &train_set)?;

    let mut state = AdamState::new(model.parameters().iter().map(|e| e.tensor.len()));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(2);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(3);

    let mut log = TrainingLog::default();
    let mut best: Option<TrainedModel> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let d = model.architecture().input_dim;
    for epoch in 0..config.max_epochs {
        let lr = cosine_lr(config.learning_rate, epoch, config.max_epochs);
        order.shuffle(&mut shuffle_rng);
        let snapshot = model.clone();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let step_result = (|| -> Result<()> {
            for chunk in order.chunks(config.batch_size) {
                if config.batch_norm && chunk.len() < 2 {
                    continue;
                }
                let batch = Batch {
                    x_std: chunk.iter().flat_map(|&i| train_batch.x_std[i * d..(i + 1) * d].iter().copied()).collect(),
                    times: chunk.iter().map(|&i| train_batch.times[i]).collect(),
                    events: chunk.iter().map(|&i| train_batch.events[i]).collect(),
                };
                let mut g = Graph::new();
                let bound = model.bind(&mut g, true);
                let mut mode = Mode::Train { rng: &mut dropout_rng };
                let (loss, fwd) = nll_loss(&mut g, &model, &bound, &rule, &batch, &mut mode)?;
                let value = g.value(loss)[0];
                if !value.is_finite() {
                    return Err(Error::numeric("training loss", value));
                }
                g.backward(loss)?;
                let grads: Vec<Option<Vec<f64>>> = bound
                    .vars()
                    .iter()
                    .zip(model.parameters().iter())
                    .map(|(&v, e)| {
                        if e.tensor.requires_grad() {
                            g.grad(v).map(<[f64]>::to_vec)
                        } else {
                            None
                        }
                    })
                    .collect();
                let mut grads = grads;
                let norm = grads.iter().flatten().flatten().map(|x| x * x).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(Error::numeric("gradient norm", norm));
                }
                if norm > config.clip_norm {
                    let s = config.clip_norm / norm;
                    grads.iter_mut().flatten().flatten().for_each(|x| *x *= s);
                    log.clip_events += 1;
                }
                let stats = fwd.batch_stats;
                {
                    let grad_refs: Vec<Option<&[f64]>> = grads.iter().map(|g| g.as_deref()).collect();
                    let mut params: Vec<&mut [f64]> = model
                        .parameters_mut()
                        .iter_mut()
                        .map(|e| e.tensor.values_mut())
                        .collect();
                    adamw_step(&mut params, &grad_refs, &mut state, lr, config.weight_decay);
                }
                model.update_running_stats(&stats, batch.len());
                loss_sum += value * batch.len() as f64;
                seen += batch.len();
            }
            Ok(())
        })();
        let val_loss = match step_result.and_then(|()| nll_value(&model, &rule, &val_set)) {
            Ok(v) => v,
            Err(Error::NumericDomain { .. }) => {
                let last_finite = TrainedModel {
                    model: snapshot,
                    best_epoch: epoch,
                    val_ctd: f64::NAN,
                    val_ibs: f64::NAN,
                };
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    last_finite: Box::new(last_finite),
                });
            }
            Err(e) => return Err(e),
        };
        let (val_ctd, val_ibs) = validation_scores(&model, &val_set, &g_train);
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            val_ctd,
            lr,
        });
        let better = match &best {
            None => true,
            Some(b) => improves(val_ctd, val_ibs, b.val_ctd, b.val_ibs),
        };
        if better {
            best = Some(TrainedModel {
                model: model.clone(),
                best_epoch: epoch + 1,
                val_ctd,
                val_ibs,
            });
        }
    }
    Ok((best.expect("at least one epoch"), log))
}

/// Table-5 style search ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub schema_version: u32,
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub dropout: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub batch_norm: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            layers: vec![2, 3, 4],
            hidden: vec![32, 64, 128, 256],
            learning_rate: (1e-4, 1e-2),
            weight_decay: (1e-8, 1e-3),
            dropout: vec![0.0, 0.1, 0.3, 0.5],
            batch_size: vec![64, 128, 256],
            batch_norm: vec![true, false],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("search space: {m}")));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad("unsupported schema_version");
        }
        if self.layers.is_empty()
            || self.hidden.is_empty()
            || self.dropout.is_empty()
            || self.batch_size.is_empty()
            || self.batch_norm.is_empty()
        {
            return bad("every choice list must be nonempty");
        }
        if self.layers.contains(&0) || self.hidden.contains(&0) || self.batch_size.contains(&0) {
            return bad("layers, hidden sizes and batch sizes must be positive");
        }
        for (lo, hi) in [self.learning_rate, self.weight_decay] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad("log-uniform ranges need 0 < lo <= hi");
            }
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("dropout choices must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: SearchSpace = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Draws one configuration, keeping every field not in the space from `base`.
    pub fn sample(&self, base: &TrainingConfig, rng: &mut ChaCha8Rng) -> TrainingConfig {
        let pick = |rng: &mut ChaCha8Rng, n: usize| rng.random_range(0..n);
        let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..hi.ln()).exp()
            }
        };
        let layers = self.layers[pick(rng, self.layers.len())];
        let width = self.hidden[pick(rng, self.hidden.len())];
        let learning_rate = log_uniform(rng, self.learning_rate);
        let weight_decay = log_uniform(rng, self.weight_decay);
        let dropout = self.dropout[pick(rng, self.dropout.len())];
        let batch_size = self.batch_size[pick(rng, self.batch_size.len())];
        let batch_norm = self.batch_norm[pick(rng, self.batch_norm.len())];
        TrainingConfig {
            hidden: vec![width; layers],
            learning_rate,
            weight_decay,
            dropout,
            batch_size,
            batch_norm,
            seed: rng.random(),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: TrainingConfig,
    pub val_ctd: f64,
    pub val_ibs: f64,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub best_config: TrainingConfig,
    pub best: TrainedModel,
    pub log: TrainingLog,
    pub trials: Vec<TrialRecord>,
}

/// Random search over `space`. Failed trials are recorded and skipped.
pub fn random_search(
    space: &SearchSpace,
    trials: usize,
    base: &TrainingConfig,
    data: &Dataset,
    seed: u64,
) -> Result<SearchOutcome> {
    space.validate()?;
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(trials);
    let mut best: Option<(TrainingConfig, TrainedModel, TrainingLog)> = None;
    let mut last_err = None;
    for trial in 0..trials {
        let config = space.sample(base, &mut rng);
        match train(&config, data) {
            Ok((fit, log)) => {
                records.push(TrialRecord {
                    trial,
                    config: config.clone(),
                    val_ctd: fit.val_ctd,
                    val_ibs: fit.val_ibs,
                    error: None,
                });
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b, _)| improves(fit.val_ctd, fit.val_ibs, b.val_ctd, b.val_ibs));
                if better {
                    best = Some((config, fit, log));
                }
            }
            Err(e) => {
                records.push(TrialRecord {
                    trial,
                    config,
                    val_ctd: f64::NAN,
                    val_ibs: f64::NAN,
                    error: Some(e.to_string()),
                });
                last_err = Some(e);
            }
        }
    }
    match best {
        Some((best_config, best, log)) => Ok(SearchOutcome {
            best_config,
            best,
            log,
            trials: records,
        }),
        None => Err(last_err.expect("every trial failed")),
    }
}

/// One `(K, seed)` cell of a node-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k_nodes: usize,
    pub seed: u64,
    /// Integrated absolute error against the generator, `None` if the cell failed.
    pub iae: Option<CurveErrors>,
    pub train_seconds: f64,
    pub error: Option<String>,
}

/// Trains one model per `(K, seed)` on data simulated from `spec` with that seed
/// and scores it on the test covariates over [`evaluation_grid`].
/// A failing cell is recorded and the sweep continues.
pub fn sweep_nodes(spec: &GeneratorSpec, ks: &[usize], seeds: &[u64], base: &TrainingConfig) -> Result<Vec<SweepCell>> {
    if ks.is_empty() || seeds.is_empty() {
        return Err(Error::Config("node sweep needs at least one K and one seed".into()));
    }
    let sims = seeds
        .iter()
        .map(|&seed| simulate(spec, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(ks.len() * seeds.len());
    for &k in ks {
        for (sim, &seed) in sims.iter().zip(seeds) {
            let config = TrainingConfig {
                k_nodes: k,
                seed,
                ..base.clone()
            };
            let start = Instant::now();
            let fitted = train(&config, &sim.train);
            let train_seconds = start.elapsed().as_secs_f64();
            let scored = fitted.and_then(|(fit, _)| {
                let rule = quadrature::rule(k)?;
                let grid = evaluation_grid(&sim.train.times())?;
                let curves = ModelCurves {
                    model: &fit.model,
                    rule: &rule,
                };
                integrated_abs_error(&curves, &sim.truth, &sim.test.covariates(), &grid)
            });
            let (iae, error) = match scored {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            };
            cells.push(SweepCell {
                k_nodes: k,
                seed,
                iae,
                train_seconds,
                error,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests;
