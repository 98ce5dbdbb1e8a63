use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::error::{Error, Result};

pub const ARCHITECTURE_SCHEMA_VERSION: u32 = 1;

/// How time enters the log-hazard network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// Time is appended to the covariates at the input of the backbone.
    Concat,
    /// Feature-wise affine modulation `γ(t) ⊙ z + β(t)` of the penultimate layer.
    Film,
    /// Low-rank time-gated update `W + U diag(s(t)) V` of the penultimate weight.
    Lora,
}

impl std::str::FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concat" => Ok(Conditioning::Concat),
            "film" => Ok(Conditioning::Film),
            "lora" | "time-lora" => Ok(Conditioning::Lora),
            other => Err(Error::Config(format!("unknown conditioning `{other}`"))),
        }
    }
}

impl std::fmt::Display for Conditioning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Conditioning::Concat => "concat",
            Conditioning::Film => "film",
            Conditioning::Lora => "lora",
        })
    }
}

/// Everything needed to rebuild a [`HazardModel`](super::HazardModel) around a checkpoint.
///
/// `hidden` lists the widths of all hidden layers. The last one is the
/// penultimate layer where the time-conditioning head acts; the ones before
/// it form the backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub schema_version: u32,
    pub input_dim: usize,
    #[serde(default)]
    pub feature_names: Vec<String>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub conditioning: Conditioning,
    pub dropout: f64,
    pub batch_norm: bool,
    pub lora_rank: usize,
    pub embed_dim: usize,
    pub modulation_hidden: usize,
    /// Quadrature order used during training.
    pub k_nodes: usize,
    /// Network inputs see `t / time_scale`; integration stays on the natural scale.
    pub time_scale: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

impl Architecture {
    /// A default architecture for `input_dim` covariates with identity standardization.
    pub fn new(input_dim: usize, hidden: Vec<usize>, conditioning: Conditioning) -> Self {
        Self {
            schema_version: ARCHITECTURE_SCHEMA_VERSION,
            input_dim,
            feature_names: (1..=input_dim).map(|i| format!("x{i}")).collect(),
            hidden,
            activation: Activation::Gelu,
            conditioning,
            dropout: 0.0,
            batch_norm: false,
            lora_rank: 8,
            embed_dim: 16,
            modulation_hidden: 32,
            k_nodes: 15,
            time_scale: 1.0,
            feature_mean: vec![0.0; input_dim],
            feature_std: vec![1.0; input_dim],
        }
    }

    /// Input width of the penultimate layer.
    pub fn penultimate_in(&self) -> usize {
        match self.hidden.len() {
            0 | 1 => self.backbone_input(),
            n => self.hidden[n - 2],
        }
    }

    pub fn penultimate_out(&self) -> usize {
        *self.hidden.last().unwrap_or(&0)
    }

    /// Width of the first network layer's input.
    pub fn backbone_input(&self) -> usize {
        match self.conditioning {
            Conditioning::Concat => self.input_dim + 1,
            _ => self.input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != ARCHITECTURE_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be non-empty and positive: {:?}", self.hidden));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return bad(format!("time_scale {} must be positive", self.time_scale));
        }
        if self.k_nodes == 0 || self.k_nodes > crate::quadrature::MAX_ORDER {
            return Err(Error::InvalidOrder(self.k_nodes));
        }
        if self.feature_mean.len() != self.input_dim || self.feature_std.len() != self.input_dim {
            return bad("standardization statistics do not match input_dim".into());
        }
        if self
            .feature_std
            .iter()
            .chain(&self.feature_mean)
            .any(|v| !v.is_finite())
            || self.feature_std.iter().any(|&s| s <= 0.0)
        {
            return bad("standardization statistics must be finite with positive scale".into());
        }
        if !self.feature_names.is_empty() && self.feature_names.len() != self.input_dim {
            return bad("feature_names length does not match input_dim".into());
        }
        match self.conditioning {
            Conditioning::Lora => {
                let limit = self.penultimate_in().min(self.penultimate_out());
                if self.lora_rank == 0 || self.lora_rank >= limit {
                    return bad(format!(
                        "lora_rank {} must satisfy 0 < r < min(d_in, d_out) = {limit}",
                        self.lora_rank
                    ));
                }
                if self.embed_dim == 0 || self.modulation_hidden == 0 {
                    return bad("time embedding and modulation widths must be positive".into());
                }
            }
            Conditioning::Film => {
                if self.embed_dim == 0 || self.modulation_hidden == 0 {
                    return bad("time embedding and modulation widths must be positive".into());
                }
            }
            Conditioning::Concat => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Architecture = serde_json::from_str(text)?;
        a.validate()?;
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
