//! The log-hazard network `f(x, t)` and the curves derived from it.
//!
//! `λ(t | x) = exp f(x, t)`. The network is an MLP backbone followed by a
//! penultimate layer where time is injected by one of three heads (see
//! [`Conditioning`]) and a final linear map to a scalar. For the FiLM and
//! Time-LoRA heads the backbone only sees `x`, so a subject's backbone
//! embedding, base projection `W h + b` and low-rank projection `V h` are
//! computed once and reused for every requested time.

mod architecture;

pub use architecture::{Architecture, Conditioning, ARCHITECTURE_SCHEMA_VERSION};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BatchStats, Graph, ParameterSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
/// Upper bound on rows per evaluation graph.
const EVAL_CHUNK_ROWS: usize = 16_384;

#[derive(Debug, Clone)]
struct BatchNormIdx {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

#[derive(Debug, Clone)]
struct LayerIdx {
    weight: usize,
    bias: usize,
    bn: Option<BatchNormIdx>,
}

#[derive(Debug, Clone)]
struct EmbedIdx {
    freq: usize,
    phase: usize,
    hidden_w: usize,
    hidden_b: usize,
}

#[derive(Debug, Clone)]
enum HeadIdx {
    Concat,
    Film {
        embed: EmbedIdx,
        gamma_w: usize,
        gamma_b: usize,
        beta_w: usize,
        beta_b: usize,
    },
    Lora {
        embed: EmbedIdx,
        mod_w: usize,
        mod_b: usize,
        u: usize,
        v: usize,
    },
}

#[derive(Debug, Clone)]
struct Layout {
    backbone: Vec<LayerIdx>,
    pen_w: usize,
    pen_b: usize,
    head: HeadIdx,
    out_w: usize,
    out_b: usize,
}

/// Forward-pass mode. Training enables dropout and batch statistics.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

/// Graph handles for every tensor of a model, in [`ParameterSet`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Output of [`HazardModel::forward`].
pub struct Forward {
    /// Log-hazards, `[subjects · times_per_subject × 1]`, subject-major.
    pub log_hazard: Var,
    /// One entry per batch-normalized backbone layer (training mode only).
    pub batch_stats: Vec<BatchStats>,
}

/// Hazard, cumulative hazard and survival at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub hazard: f64,
    pub cumhaz: f64,
    pub survival: f64,
}

/// Per-subject curves on a shared grid, row-major `subjects × grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCurves {
    pub grid: Vec<f64>,
    pub hazard: Vec<f64>,
    pub cumhaz: Vec<f64>,
}

impl GridCurves {
    pub fn subjects(&self) -> usize {
        self.hazard.len() / self.grid.len().max(1)
    }

    pub fn survival(&self) -> Vec<f64> {
        self.cumhaz.iter().map(|&c| (-c).exp()).collect()
    }

    pub fn row<'a>(&self, values: &'a [f64], i: usize) -> &'a [f64] {
        let g = self.grid.len();
        &values[i * g..(i + 1) * g]
    }
}

/// A log-hazard network together with its parameters.
#[derive(Debug, Clone)]
pub struct HazardModel {
    arch: Architecture,
    params: ParameterSet,
    layout: Layout,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.values_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t.with_grad()
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let mut t = Tensor::zeros(shape);
    for v in t.values_mut() {
        *v = dist.sample(rng);
    }
    t.with_grad()
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    params: ParameterSet,
}

impl Builder<'_> {
    fn add(&mut self, name: String, t: Tensor) -> Result<usize> {
        self.params.push(name, t)
    }

    /// Weight and bias with the usual `U(-1/√fan_in, 1/√fan_in)` initialization.
    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) -> Result<(usize, usize)> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = uniform_tensor(self.rng, vec![d_out, d_in], bound);
        let b = uniform_tensor(self.rng, vec![d_out], bound);
        Ok((
            self.add(format!("{prefix}.weight"), w)?,
            self.add(format!("{prefix}.bias"), b)?,
        ))
    }

    fn embed(&mut self, arch: &Architecture, prefix: &str) -> Result<EmbedIdx> {
        let m = arch.embed_dim;
        let freq = normal_tensor(self.rng, vec![m, 1], 1.0);
        let mut phase = Tensor::zeros(vec![m]);
        for v in phase.values_mut() {
            *v = self.rng.random_range(0.0..std::f64::consts::TAU);
        }
        let freq = self.add(format!("{prefix}.embed.freq"), freq)?;
        let phase = self.add(format!("{prefix}.embed.phase"), phase.with_grad())?;
        let (hidden_w, hidden_b) =
            self.linear(&format!("{prefix}.hidden"), m, arch.modulation_hidden)?;
        Ok(EmbedIdx {
            freq,
            phase,
            hidden_w,
            hidden_b,
        })
    }
}

fn lookup(params: &ParameterSet, name: &str, shape: &[usize]) -> Result<usize> {
    let idx = params
        .index_of(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
    if params.get(idx).shape() != shape {
        return Err(Error::Checkpoint(format!(
            "parameter `{name}` has shape {:?}, architecture expects {shape:?}",
            params.get(idx).shape()
        )));
    }
    Ok(idx)
}

impl HazardModel {
    /// Freshly initialized model.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            rng: &mut rng,
            params: ParameterSet::new(),
        };
        let mut width = arch.backbone_input();
        let n_hidden = arch.hidden.len();
        for (i, &h) in arch.hidden[..n_hidden - 1].iter().enumerate() {
            b.linear(&format!("backbone.{i}"), width, h)?;
            if arch.batch_norm {
                b.add(format!("backbone.{i}.bn.gamma"), Tensor::filled(vec![h], 1.0).with_grad())?;
                b.add(format!("backbone.{i}.bn.beta"), Tensor::zeros(vec![h]).with_grad())?;
                b.add(format!("backbone.{i}.bn.running_mean"), Tensor::zeros(vec![h]))?;
                b.add(format!("backbone.{i}.bn.running_var"), Tensor::filled(vec![h], 1.0))?;
            }
            width = h;
        }
        let (d_in, d_out) = (arch.penultimate_in(), arch.penultimate_out());
        b.linear("penultimate", d_in, d_out)?;
        match arch.conditioning {
            Conditioning::Concat => {}
            Conditioning::Film => {
                b.embed(&arch, "film")?;
                let mh = arch.modulation_hidden;
                b.add("film.gamma.weight".into(), Tensor::zeros(vec![d_out, mh]).with_grad())?;
                b.add("film.gamma.bias".into(), Tensor::filled(vec![d_out], 1.0).with_grad())?;
                b.add("film.beta.weight".into(), Tensor::zeros(vec![d_out, mh]).with_grad())?;
                b.add("film.beta.bias".into(), Tensor::zeros(vec![d_out]).with_grad())?;
            }
            Conditioning::Lora => {
                b.embed(&arch, "lora")?;
                b.linear("lora.modulation", arch.modulation_hidden, arch.lora_rank)?;
                let r = arch.lora_rank;
                b.add("lora.u".into(), Tensor::zeros(vec![d_out, r]).with_grad())?;
                let v = normal_tensor(b.rng, vec![r, d_in], 1.0 / (d_in as f64).sqrt());
                b.add("lora.v".into(), v)?;
            }
        }
        b.linear("output", d_out, 1)?;
        let params = b.params;
        Self::from_parameters(arch, params)
    }

    /// Wraps existing parameters, checking every name and shape against `arch`.
    pub fn from_parameters(arch: Architecture, params: ParameterSet) -> Result<Self> {
        arch.validate()?;
        let mut backbone = Vec::new();
        let mut width = arch.backbone_input();
        for (i, &h) in arch.hidden[..arch.hidden.len() - 1].iter().enumerate() {
            let p = format!("backbone.{i}");
            let weight = lookup(&params, &format!("{p}.weight"), &[h, width])?;
            let bias = lookup(&params, &format!("{p}.bias"), &[h])?;
            let bn = if arch.batch_norm {
                Some(BatchNormIdx {
                    gamma: lookup(&params, &format!("{p}.bn.gamma"), &[h])?,
                    beta: lookup(&params, &format!("{p}.bn.beta"), &[h])?,
                    running_mean: lookup(&params, &format!("{p}.bn.running_mean"), &[h])?,
                    running_var: lookup(&params, &format!("{p}.bn.running_var"), &[h])?,
                })
            } else {
                None
            };
            backbone.push(LayerIdx { weight, bias, bn });
            width = h;
        }
        let (d_in, d_out) = (arch.penultimate_in(), arch.penultimate_out());
        let pen_w = lookup(&params, "penultimate.weight", &[d_out, d_in])?;
        let pen_b = lookup(&params, "penultimate.bias", &[d_out])?;
        let embed = |prefix: &str| -> Result<EmbedIdx> {
            let (m, mh) = (arch.embed_dim, arch.modulation_hidden);
            Ok(EmbedIdx {
                freq: lookup(&params, &format!("{prefix}.embed.freq"), &[m, 1])?,
                phase: lookup(&params, &format!("{prefix}.embed.phase"), &[m])?,
                hidden_w: lookup(&params, &format!("{prefix}.hidden.weight"), &[mh, m])?,
                hidden_b: lookup(&params, &format!("{prefix}.hidden.bias"), &[mh])?,
            })
        };
        let head = match arch.conditioning {
            Conditioning::Concat => HeadIdx::Concat,
            Conditioning::Film => {
                let mh = arch.modulation_hidden;
                HeadIdx::Film {
                    embed: embed("film")?,
                    gamma_w: lookup(&params, "film.gamma.weight", &[d_out, mh])?,
                    gamma_b: lookup(&params, "film.gamma.bias", &[d_out])?,
                    beta_w: lookup(&params, "film.beta.weight", &[d_out, mh])?,
                    beta_b: lookup(&params, "film.beta.bias", &[d_out])?,
                }
            }
            Conditioning::Lora => {
                let (mh, r) = (arch.modulation_hidden, arch.lora_rank);
                HeadIdx::Lora {
                    embed: embed("lora")?,
                    mod_w: lookup(&params, "lora.modulation.weight", &[r, mh])?,
                    mod_b: lookup(&params, "lora.modulation.bias", &[r])?,
                    u: lookup(&params, "lora.u", &[d_out, r])?,
                    v: lookup(&params, "lora.v", &[r, d_in])?,
                }
            }
        };
        let out_w = lookup(&params, "output.weight", &[1, d_out])?;
        let out_b = lookup(&params, "output.bias", &[1])?;
        let layout = Layout {
            backbone,
            pen_w,
            pen_b,
            head,
            out_w,
            out_b,
        };
        Ok(Self {
            arch,
            params,
            layout,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn parameters(&self) -> &ParameterSet {
        &self.params
    }

    /// Mutable access to parameter values. Shapes must not be changed.
    pub fn parameters_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn into_parts(self) -> (Architecture, ParameterSet) {
        (self.arch, self.params)
    }

    /// Index of the scalar output bias, used to seed a constant-hazard start.
    pub fn output_bias_index(&self) -> usize {
        self.layout.out_b
    }

    /// Records every tensor in `g`; trainable ones as parameters.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|e| {
                if trainable && e.tensor.requires_grad() {
                    g.parameter(&e.tensor)
                } else {
                    g.constant(e.tensor.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Standardizes raw covariates with the stored statistics.
    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.arch.input_dim;
        if x.is_empty() || !x.len().is_multiple_of(d) {
            return Err(Error::shape("covariates", &[x.len()], &[d]));
        }
        Ok(x.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.arch.feature_mean[i % d]) / self.arch.feature_std[i % d])
            .collect())
    }

    /// Records the network on `subjects` standardized covariate rows, each paired with
    /// `times.len() / subjects` times.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x_std: &[f64],
        times: &[f64],
        mode: &mut Mode<'_>,
    ) -> Result<Forward> {
        let d = self.arch.input_dim;
        if x_std.is_empty() || !x_std.len().is_multiple_of(d) {
            return Err(Error::shape("forward covariates", &[x_std.len()], &[d]));
        }
        let subjects = x_std.len() / d;
        if times.is_empty() || !times.len().is_multiple_of(subjects) {
            return Err(Error::shape("forward times", &[times.len()], &[subjects]));
        }
        let per = times.len() / subjects;
        let scaled: Vec<f64> = times.iter().map(|&t| t / self.arch.time_scale).collect();
        let (unique, index) = dedup_times(&scaled);
        let tcol = g.constant(Tensor::matrix(times.len(), 1, scaled)?);
        let x = g.constant(Tensor::matrix(subjects, d, x_std.to_vec())?);
        let p = |i: usize| bound.var(i);
        let act = self.arch.activation;
        let mut stats = Vec::new();

        let z = match &self.layout.head {
            HeadIdx::Concat => {
                let xr = g.repeat_rows(x, per)?;
                let input = g.concat_cols(xr, tcol)?;
                let h = self.backbone(g, bound, input, mode, &mut stats)?;
                g.affine(p(self.layout.pen_w), Some(p(self.layout.pen_b)), h)?
            }
            HeadIdx::Film {
                embed,
                gamma_w,
                gamma_b,
                beta_w,
                beta_b,
            } => {
                let h = self.backbone(g, bound, x, mode, &mut stats)?;
                let base = g.affine(p(self.layout.pen_w), Some(p(self.layout.pen_b)), h)?;
                let base = g.repeat_rows(base, per)?;
                let e = self.embed(g, bound, embed, tcol, unique, index)?;
                let gamma = g.affine(p(*gamma_w), Some(p(*gamma_b)), e)?;
                let beta = g.affine(p(*beta_w), Some(p(*beta_b)), e)?;
                let scaled = g.mul(gamma, base)?;
                g.add(scaled, beta)?
            }
            HeadIdx::Lora {
                embed,
                mod_w,
                mod_b,
                u,
                v,
            } => {
                let h = self.backbone(g, bound, x, mode, &mut stats)?;
                let base = g.affine(p(self.layout.pen_w), Some(p(self.layout.pen_b)), h)?;
                let proj = g.affine(p(*v), None, h)?;
                let base = g.repeat_rows(base, per)?;
                let proj = g.repeat_rows(proj, per)?;
                let e = self.embed(g, bound, embed, tcol, unique, index)?;
                let s = g.affine(p(*mod_w), Some(p(*mod_b)), e)?;
                let gated = g.mul(s, proj)?;
                let delta = g.affine(p(*u), None, gated)?;
                g.add(base, delta)?
            }
        };
        let a = g.activation(act, z)?;
        let out = g.affine(p(self.layout.out_w), Some(p(self.layout.out_b)), a)?;
        Ok(Forward {
            log_hazard: out,
            batch_stats: stats,
        })
    }

    fn backbone(
        &self,
        g: &mut Graph,
        bound: &Bound,
        mut h: Var,
        mode: &mut Mode<'_>,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        for layer in &self.layout.backbone {
            h = g.affine(bound.var(layer.weight), Some(bound.var(layer.bias)), h)?;
            if let Some(bn) = &layer.bn {
                let (gamma, beta) = (bound.var(bn.gamma), bound.var(bn.beta));
                h = match mode {
                    Mode::Train { .. } => {
                        let (out, s) = g.batch_norm_train(h, gamma, beta, BN_EPS)?;
                        stats.push(s);
                        out
                    }
                    Mode::Eval => g.batch_norm_eval(
                        h,
                        gamma,
                        beta,
                        self.params.get(bn.running_mean).values(),
                        self.params.get(bn.running_var).values(),
                        BN_EPS,
                    )?,
                };
            }
            h = g.activation(self.arch.activation, h)?;
            if let Mode::Train { rng } = mode {
                let p = self.arch.dropout;
                if p > 0.0 {
                    let keep = 1.0 / (1.0 - p);
                    let mask = (0..g.value(h).len())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect();
                    h = g.mul_const(h, mask)?;
                }
            }
        }
        Ok(h)
    }

    /// Periodic embedding followed by the hidden layer of the modulation network.
    ///
    /// When `index` is set the embedding is computed once per distinct time in
    /// `unique` and gathered back to one row per entry of `tcol`.
    fn embed(
        &self,
        g: &mut Graph,
        bound: &Bound,
        idx: &EmbedIdx,
        tcol: Var,
        unique: Vec<f64>,
        index: Option<Vec<usize>>,
    ) -> Result<Var> {
        let input = match index {
            Some(_) => g.constant(Tensor::matrix(unique.len(), 1, unique)?),
            None => tcol,
        };
        let lin = g.affine(bound.var(idx.freq), Some(bound.var(idx.phase)), input)?;
        let phi = g.periodic(lin)?;
        let hid = g.affine(bound.var(idx.hidden_w), Some(bound.var(idx.hidden_b)), phi)?;
        let e = g.activation(self.arch.activation, hid)?;
        match index {
            Some(index) => g.gather_rows(e, index),
            None => Ok(e),
        }
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats], rows: usize) {
        let layers: Vec<BatchNormIdx> = self
            .layout
            .backbone
            .iter()
            .filter_map(|l| l.bn.clone())
            .collect();
        let unbias = if rows > 1 {
            rows as f64 / (rows as f64 - 1.0)
        } else {
            1.0
        };
        for (bn, s) in layers.iter().zip(stats) {
            let rm = self.params.get_mut(bn.running_mean).values_mut();
            for (r, &m) in rm.iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let rv = self.params.get_mut(bn.running_var).values_mut();
            for (r, &v) in rv.iter_mut().zip(&s.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
            }
        }
    }

    /// Evaluation-mode log-hazards for standardized rows, `times_per_subject` times each.
    pub fn eval_standardized(&self, x_std: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        let d = self.arch.input_dim;
        if x_std.is_empty() || !x_std.len().is_multiple_of(d) {
            return Err(Error::shape("covariates", &[x_std.len()], &[d]));
        }
        let subjects = x_std.len() / d;
        if !times.len().is_multiple_of(subjects) {
            return Err(Error::shape("times", &[times.len()], &[subjects]));
        }
        let per = times.len() / subjects;
        if per == 0 {
            return Ok(Vec::new());
        }
        for &t in times {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Contract(format!("times must be finite and >= 0, got {t}")));
            }
        }
        let chunk = (EVAL_CHUNK_ROWS / per).max(1);
        let mut out = Vec::with_capacity(times.len());
        for start in (0..subjects).step_by(chunk) {
            let end = (start + chunk).min(subjects);
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let f = self.forward(
                &mut g,
                &bound,
                &x_std[start * d..end * d],
                &times[start * per..end * per],
                &mut Mode::Eval,
            )?;
            out.extend_from_slice(g.value(f.log_hazard));
        }
        Ok(out)
    }

    /// `f(x, t)` for raw covariates `x`.
    pub fn log_hazard(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_dim(x)?;
        let xs = self.standardize(x)?;
        Ok(self.eval_standardized(&xs, &[t])?[0])
    }

    pub fn hazard(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.log_hazard(x, t)?.exp())
    }

    /// `f(x, t · τ_k)` for every node of `rule`, sharing the time-independent work.
    pub fn log_hazard_at_nodes(&self, x: &[f64], t: f64, rule: &QuadratureRule) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let xs = self.standardize(x)?;
        let times: Vec<f64> = rule.node_times(t).collect();
        self.eval_standardized(&xs, &times)
    }

    pub fn cumulative_hazard(&self, x: &[f64], t: f64, rule: &QuadratureRule) -> Result<f64> {
        if t == 0.0 {
            self.check_dim(x)?;
            return Ok(0.0);
        }
        let lh = self.log_hazard_at_nodes(x, t, rule)?;
        let mut it = lh.into_iter();
        crate::quadrature::cumulative_hazard(rule, |_| it.next().map_or(f64::NAN, f64::exp), t)
    }

    /// `exp(-Λ̂(t | x))`.
    pub fn survival(&self, x: &[f64], t: f64, rule: &QuadratureRule) -> Result<f64> {
        Ok((-self.cumulative_hazard(x, t, rule)?).exp())
    }

    /// `Λ̂(t_i | x_i)` for one time per subject.
    pub fn cumulative_hazard_each(&self, xs_raw: &[f64], times: &[f64], rule: &QuadratureRule) -> Result<Vec<f64>> {
        let xs = self.standardize(xs_raw)?;
        if xs.len() / self.arch.input_dim != times.len() {
            return Err(Error::shape("subjects vs times", &[xs.len() / self.arch.input_dim], &[times.len()]));
        }
        let nodes: Vec<f64> = times.iter().flat_map(|&t| rule.node_times(t)).collect();
        let lh = self.eval_standardized(&xs, &nodes)?;
        times
            .iter()
            .zip(lh.chunks_exact(rule.order()))
            .map(|(&t, block)| {
                let mut it = block.iter();
                crate::quadrature::cumulative_hazard(rule, |_| it.next().map_or(f64::NAN, |v| v.exp()), t)
            })
            .collect()
    }

    /// `(λ, Λ̂, Ŝ)` at every grid time, with `Λ̂` from `rule` on `[0, t]`.
    pub fn hazard_curve(&self, x: &[f64], grid: &[f64], rule: &QuadratureRule) -> Result<Vec<CurvePoint>> {
        self.check_dim(x)?;
        check_grid(grid)?;
        let k = rule.order();
        let mut times = Vec::with_capacity(grid.len() * (k + 1));
        for &t in grid {
            times.push(t);
            times.extend(rule.node_times(t));
        }
        let xs = self.standardize(x)?;
        let lh = self.eval_standardized(&xs, &times)?;
        grid.iter()
            .zip(lh.chunks_exact(k + 1))
            .map(|(&t, block)| {
                let mut nodes = block[1..].iter();
                let cumhaz = crate::quadrature::cumulative_hazard(
                    rule,
                    |_| nodes.next().map_or(f64::NAN, |v| v.exp()),
                    t,
                )?;
                Ok(CurvePoint {
                    t,
                    hazard: block[0].exp(),
                    cumhaz,
                    survival: (-cumhaz).exp(),
                })
            })
            .collect()
    }

    /// Hazard and cumulative hazard on an ascending grid for many subjects.
    ///
    /// `Λ̂` is accumulated interval by interval, applying `rule` to `[0, g_0]`
    /// and to each `[g_{j-1}, g_j]`. This is far cheaper than integrating
    /// from zero at every grid point and is what the metrics consume.
    pub fn grid_curves(&self, xs_raw: &[f64], grid: &[f64], rule: &QuadratureRule) -> Result<GridCurves> {
        check_grid(grid)?;
        let xs = self.standardize(xs_raw)?;
        let d = self.arch.input_dim;
        let n = xs.len() / d;
        let k = rule.order();
        let per = grid.len() * (k + 1);
        let mut times = Vec::with_capacity(per);
        let mut prev = 0.0;
        for &t in grid {
            times.push(t);
            let (half, mid) = (0.5 * (t - prev), 0.5 * (t + prev));
            times.extend(rule.canonical_nodes().iter().map(|&xi| half * xi + mid));
            prev = t;
        }
        let mut hazard = Vec::with_capacity(n * grid.len());
        let mut cumhaz = Vec::with_capacity(n * grid.len());
        let chunk = (EVAL_CHUNK_ROWS / per).max(1);
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let all_times: Vec<f64> = (start..end).flat_map(|_| times.iter().copied()).collect();
            let lh = self.eval_standardized(&xs[start * d..end * d], &all_times)?;
            for subject in lh.chunks_exact(per) {
                let mut acc = 0.0;
                let mut prev = 0.0;
                for (j, block) in subject.chunks_exact(k + 1).enumerate() {
                    let t = grid[j];
                    let s: f64 = block[1..]
                        .iter()
                        .zip(rule.weights())
                        .map(|(&f, &w)| w * f.exp())
                        .sum();
                    acc += 0.5 * (t - prev) * s;
                    prev = t;
                    let h = block[0].exp();
                    if !h.is_finite() || !acc.is_finite() {
                        return Err(Error::numeric("hazard on evaluation grid", t));
                    }
                    hazard.push(h);
                    cumhaz.push(acc);
                }
            }
        }
        Ok(GridCurves {
            grid: grid.to_vec(),
            hazard,
            cumhaz,
        })
    }

    /// The time-free path `output(act(W h + b))`, i.e. the head with its time branch removed.
    pub fn static_log_hazard(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if self.arch.conditioning == Conditioning::Concat {
            return Err(Error::Config("the concat head has no time-free path".into()));
        }
        let xs = self.standardize(x)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(Tensor::matrix(1, self.arch.input_dim, xs)?);
        let mut stats = Vec::new();
        let h = self.backbone(&mut g, &bound, xv, &mut Mode::Eval, &mut stats)?;
        let z = g.affine(
            bound.var(self.layout.pen_w),
            Some(bound.var(self.layout.pen_b)),
            h,
        )?;
        let a = g.activation(self.arch.activation, z)?;
        let out = g.affine(
            bound.var(self.layout.out_w),
            Some(bound.var(self.layout.out_b)),
            a,
        )?;
        Ok(g.value(out)[0])
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::shape("covariates", &[x.len()], &[self.arch.input_dim]));
        }
        Ok(())
    }
}

/// Distinct times in first-seen order and the row index of each input time.
/// Returns no index when fewer than half the times repeat.
fn dedup_times(times: &[f64]) -> (Vec<f64>, Option<Vec<usize>>) {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut unique = Vec::new();
    let index: Vec<usize> = times
        .iter()
        .map(|&t| {
            *seen.entry(t.to_bits()).or_insert_with(|| {
                unique.push(t);
                unique.len() - 1
            })
        })
        .collect();
    if unique.len() * 2 > times.len() {
        return (Vec::new(), None);
    }
    (unique, Some(index))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Contract("time grid is empty".into()));
    }
    if grid.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
        return Err(Error::Contract("time grid must be finite and non-negative".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Contract("time grid must be ascending".into()));
    }
    Ok(())
}
