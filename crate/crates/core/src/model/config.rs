use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::param(format!("unknown activation '{other}'"))),
        }
    }
}

/// What fills the dynamic slot of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DynamicBranch {
    /// Gated mixture of `experts` sparse maps.
    Experts,
    /// One sparse map `2d -> width`, sized to match the expert layer.
    PureMlp { width: usize },
    Off,
}

impl fmt::Display for DynamicBranch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicBranch::Experts => f.write_str("experts"),
            DynamicBranch::PureMlp { width } => write!(f, "pure-mlp:{width}"),
            DynamicBranch::Off => f.write_str("off"),
        }
    }
}

impl FromStr for DynamicBranch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "experts" => Ok(DynamicBranch::Experts),
            None if s == "off" => Ok(DynamicBranch::Off),
            Some(("pure-mlp", w)) => Ok(DynamicBranch::PureMlp { width: parse_num(w, "pure-mlp width")? }),
            _ => Err(Error::param(format!("unknown dynamic branch '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    /// `depth` blocks of `f(BN(W x) + x)`.
    Residual,
    /// `depth` blocks of `f(BN(W x))`, no skip.
    Plain,
    /// One hidden layer of `width` units replacing the stack.
    WideLinear { width: usize },
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecoderKind::Residual => f.write_str("residual"),
            DecoderKind::Plain => f.write_str("plain"),
            DecoderKind::WideLinear { width } => write!(f, "wide-linear:{width}"),
        }
    }
}

impl FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "residual" => Ok(DecoderKind::Residual),
            None if s == "plain" => Ok(DecoderKind::Plain),
            Some(("wide-linear", w)) => Ok(DecoderKind::WideLinear {
                width: parse_num(w, "wide-linear width")?,
            }),
            _ => Err(Error::param(format!("unknown decoder '{s}'"))),
        }
    }
}

/// Where dropout sits inside a residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutPlacement {
    /// On the batch-norm output, before the skip addition.
    BeforeSkip,
    /// On the block output, after the activation.
    AfterActivation,
}

impl fmt::Display for DropoutPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropoutPlacement::BeforeSkip => "before-skip",
            DropoutPlacement::AfterActivation => "after-activation",
        })
    }
}

impl FromStr for DropoutPlacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before-skip" => Ok(DropoutPlacement::BeforeSkip),
            "after-activation" => Ok(DropoutPlacement::AfterActivation),
            other => Err(Error::param(format!("unknown dropout placement '{other}'"))),
        }
    }
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::param(format!("bad {what} '{s}'")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_entities: usize,
    /// Relation count including inverses.
    pub n_relations: usize,
    /// Embedding and decoder width `d`.
    pub dim: usize,
    /// Encoder hidden width `d_h` (experts and relation-aware outputs).
    pub hidden: usize,
    /// Number of experts `k`.
    pub experts: usize,
    /// Gate temperature `t`; divides the gate input.
    pub temperature: Real,
    /// Probability `α` that a sparse weight entry is fixed to zero.
    pub sparsity: Real,
    /// Decoder depth `D`.
    pub depth: usize,
    pub dropout: Real,
    pub activation: Activation,
    pub dynamic: DynamicBranch,
    pub relation_aware: bool,
    pub decoder: DecoderKind,
    pub dropout_placement: DropoutPlacement,
    /// Seeds masks and initial weights.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_entities: 0,
            n_relations: 0,
            dim: 32,
            hidden: 32,
            experts: 3,
            temperature: 1.0,
            sparsity: 0.5,
            depth: 3,
            dropout: 0.0,
            activation: Activation::Relu,
            dynamic: DynamicBranch::Experts,
            relation_aware: true,
            decoder: DecoderKind::Residual,
            dropout_placement: DropoutPlacement::BeforeSkip,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Parameter(msg));
        if self.n_entities == 0 || self.n_relations == 0 {
            return fail(format!(
                "model needs entities and relations (got {} / {})",
                self.n_entities, self.n_relations
            ));
        }
        if self.dim == 0 || self.hidden == 0 {
            return fail("dim and hidden must be at least 1".into());
        }
        if self.dynamic == DynamicBranch::Experts && self.experts == 0 {
            return fail("expert layer needs at least one expert".into());
        }
        if let DynamicBranch::PureMlp { width: 0 } = self.dynamic {
            return fail("pure-mlp width must be at least 1".into());
        }
        if let DecoderKind::WideLinear { width: 0 } = self.decoder {
            return fail("wide-linear width must be at least 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return fail(format!("sparsity must lie in [0, 1), got {}", self.sparsity));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Width of the concatenated encoder output fed to the projection.
    pub fn encoder_width(&self) -> usize {
        let dynamic = match self.dynamic {
            DynamicBranch::Experts => self.hidden,
            DynamicBranch::PureMlp { width } => width,
            DynamicBranch::Off => 0,
        };
        let relation = if self.relation_aware { self.hidden } else { 0 };
        match dynamic + relation {
            0 => 2 * self.dim,
            w => w,
        }
    }

    /// Scalars in the expert layer: `k` sparse `2d -> d_h` maps plus the gate.
    pub fn expert_layer_params(&self) -> usize {
        let (d, h, k) = (self.dim, self.hidden, self.experts);
        k * (2 * d * h + h) + 2 * d * k + k
    }

    /// Scalars in a `depth`-block residual stack.
    pub fn residual_stack_params(&self) -> usize {
        let d = self.dim;
        self.depth * (d * d + d + 2 * d)
    }

    /// Pure-MLP width whose `2d -> w` map matches the expert layer's size.
    pub fn matched_pure_mlp_width(&self) -> usize {
        let per_unit = 2 * self.dim + 1;
        ((self.expert_layer_params() as f64 / per_unit as f64).round() as usize).max(1)
    }

    /// Wide-layer width matching a `depth`-block residual stack's size.
    pub fn matched_wide_width(&self) -> usize {
        let d = self.dim;
        let target = self.residual_stack_params().saturating_sub(d);
        ((target as f64 / (2 * d + 3) as f64).round() as usize).max(1)
    }

    /// Closed-form count of every allocated trainable scalar, masked
    /// positions included.
    pub fn param_count(&self) -> usize {
        let (d, h) = (self.dim, self.hidden);
        let embeddings = (self.n_entities + self.n_relations) * d;
        let dynamic = match self.dynamic {
            DynamicBranch::Experts => self.expert_layer_params(),
            DynamicBranch::PureMlp { width } => 2 * d * width + width,
            DynamicBranch::Off => 0,
        };
        let relation = if self.relation_aware {
            self.n_relations * (2 * d * h + h)
        } else {
            0
        };
        let projection = self.encoder_width() * d + d;
        let decoder = match self.decoder {
            DecoderKind::Residual | DecoderKind::Plain => self.residual_stack_params(),
            DecoderKind::WideLinear { width } => width * (2 * d + 3) + d,
        };
        embeddings + dynamic + relation + projection + decoder
    }

    /// `key = value` pairs covering every field.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_entities", self.n_entities.to_string()),
            ("n_relations", self.n_relations.to_string()),
            ("dim", self.dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("experts", self.experts.to_string()),
            ("temperature", fmt_real(self.temperature)),
            ("sparsity", fmt_real(self.sparsity)),
            ("depth", self.depth.to_string()),
            ("dropout", fmt_real(self.dropout)),
            ("activation", self.activation.to_string()),
            ("dynamic", self.dynamic.to_string()),
            ("relation_aware", self.relation_aware.to_string()),
            ("decoder", self.decoder.to_string()),
            ("dropout_placement", self.dropout_placement.to_string()),
            ("model_seed", self.seed.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            pairs
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::param(format!("missing model key '{k}'")))
        };
        let cfg = ModelConfig {
            n_entities: parse_num(get("n_entities")?, "n_entities")?,
            n_relations: parse_num(get("n_relations")?, "n_relations")?,
            dim: parse_num(get("dim")?, "dim")?,
            hidden: parse_num(get("hidden")?, "hidden")?,
            experts: parse_num(get("experts")?, "experts")?,
            temperature: parse_num(get("temperature")?, "temperature")?,
            sparsity: parse_num(get("sparsity")?, "sparsity")?,
            depth: parse_num(get("depth")?, "depth")?,
            dropout: parse_num(get("dropout")?, "dropout")?,
            activation: get("activation")?.parse()?,
            dynamic: get("dynamic")?.parse()?,
            relation_aware: parse_num(get("relation_aware")?, "relation_aware")?,
            decoder: get("decoder")?.parse()?,
            dropout_placement: get("dropout_placement")?.parse()?,
            seed: parse_num(get("model_seed")?, "model_seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Shortest representation that parses back to the same value.
pub fn fmt_real(x: Real) -> String {
    format!("{x:?}")
}
