use std::collections::BTreeMap;

use rand::RngCore;

use super::config::{Activation, DropoutPlacement};
use super::sparse::SparseLinear;
use crate::autodiff::{BatchStats, DiffArray, ParamId, ParamStore, Tape, Var};
use crate::{Error, Real, Result};

pub const BN_EPS: Real = 1e-5;
/// Weight of the new batch in the running-statistics average.
pub const BN_MOMENTUM: Real = 0.1;

/// Train mode carries the dropout generator; eval mode is deterministic.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub(crate) fn rng(&mut self) -> Option<&mut dyn RngCore> {
        match self {
            Mode::Train(rng) => Some(&mut **rng),
            Mode::Eval => None,
        }
    }
}

pub(crate) fn activate(tape: &mut Tape, f: Activation, x: Var) -> Var {
    match f {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
    }
}

pub(crate) fn dropout(tape: &mut Tape, x: Var, p: Real, mode: &mut Mode<'_>) -> Result<Var> {
    tape.dropout(x, p, mode.rng())
}

/// Gated mixture of sparse experts.
#[derive(Clone, Debug)]
pub struct DynamicLayer {
    pub experts: Vec<SparseLinear>,
    /// Dense `2d -> k` map.
    pub gate: SparseLinear,
    pub temperature: Real,
    pub activation: Activation,
}

impl DynamicLayer {
    /// `softmax(gate(pair / t))`; the temperature scales the gate input, so
    /// the gate bias is not tempered.
    pub fn gate_forward(&self, store: &ParamStore, tape: &mut Tape, pair: Var) -> Result<Var> {
        if !(self.temperature > 0.0) {
            return Err(Error::param(format!("temperature must be positive, got {}", self.temperature)));
        }
        let scaled = tape.scale(pair, 1.0 / self.temperature);
        let logits = self.gate.forward(store, tape, scaled)?;
        tape.softmax_rows(logits)
    }

    /// `Σ_i g_i · f(expert_i(pair))` over all experts. Returns the output
    /// and the gate weights.
    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, pair: Var) -> Result<(Var, Var)> {
        let gates = self.gate_forward(store, tape, pair)?;
        let mut total: Option<Var> = None;
        for (i, expert) in self.experts.iter().enumerate() {
            let h = expert.forward(store, tape, pair)?;
            let h = activate(tape, self.activation, h);
            let weighted = tape.scale_rows_by_column(h, gates, i)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
        let out = total.ok_or_else(|| Error::param("dynamic layer has no experts"))?;
        Ok((out, gates))
    }
}

/// One sparse map per relation id.
#[derive(Clone, Debug)]
pub struct RelationAwareLayer {
    pub maps: Vec<SparseLinear>,
    pub activation: Activation,
}

impl RelationAwareLayer {
    /// Row `b` goes through the map owned by `relations[b]`. Rows are
    /// grouped by relation so each map runs once per batch.
    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        pair: Var,
        relations: &[usize],
    ) -> Result<Var> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (row, &r) in relations.iter().enumerate() {
            if r >= self.maps.len() {
                return Err(Error::Index {
                    what: "relation",
                    index: r,
                    len: self.maps.len(),
                });
            }
            groups.entry(r).or_default().push(row);
        }
        if groups.len() == 1 {
            let map = &self.maps[relations[0]];
            let y = map.forward(store, tape, pair)?;
            return Ok(activate(tape, self.activation, y));
        }
        let mut parts = Vec::with_capacity(groups.len());
        for (r, rows) in groups {
            let x = tape.gather_rows(pair, &rows)?;
            let y = self.maps[r].forward(store, tape, x)?;
            parts.push((activate(tape, self.activation, y), rows));
        }
        tape.assemble_rows(parts, relations.len())
    }
}

/// Learned scale/shift plus running statistics of one batch-norm layer.
#[derive(Clone, Debug)]
pub struct BnState {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<Real>,
    pub running_var: Vec<Real>,
}

impl BnState {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            DiffArray::new(vec![width], vec![1.0; width]).expect("gamma shape"),
        );
        let beta = store.add(format!("{name}.beta"), DiffArray::zeros(vec![width]));
        BnState {
            gamma,
            beta,
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: Var,
        train: bool,
    ) -> Result<(Var, Option<BatchStats>)> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        if train {
            let (y, stats) = tape.batchnorm_train(x, gamma, beta, BN_EPS)?;
            Ok((y, Some(stats)))
        } else {
            let y = tape.batchnorm_eval(x, gamma, beta, &self.running_mean, &self.running_var, BN_EPS)?;
            Ok((y, None))
        }
    }

    /// Exponential moving average toward the batch statistics.
    pub fn update(&mut self, stats: &BatchStats) {
        let m = BN_MOMENTUM;
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// `f(BN(W x) + x)`, or `f(BN(W x))` without the skip.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub linear: SparseLinear,
    pub bn: BnState,
    pub skip: bool,
    pub dropout: Real,
    pub placement: DropoutPlacement,
    pub activation: Activation,
}

impl ResidualBlock {
    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let h = self.linear.forward(store, tape, x)?;
        let (mut h, stats) = self.bn.forward(store, tape, h, mode.is_train())?;
        if self.placement == DropoutPlacement::BeforeSkip {
            h = dropout(tape, h, self.dropout, mode)?;
        }
        if self.skip {
            h = tape.add(h, x)?;
        }
        let mut out = activate(tape, self.activation, h);
        if self.placement == DropoutPlacement::AfterActivation {
            out = dropout(tape, out, self.dropout, mode)?;
        }
        Ok((out, stats))
    }
}

/// One wide hidden layer standing in for a deep stack.
#[derive(Clone, Debug)]
pub struct WideDecoder {
    pub hidden: SparseLinear,
    pub bn: BnState,
    pub output: SparseLinear,
    pub dropout: Real,
    pub activation: Activation,
}

impl WideDecoder {
    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let h = self.hidden.forward(store, tape, x)?;
        let (h, stats) = self.bn.forward(store, tape, h, mode.is_train())?;
        let h = activate(tape, self.activation, h);
        let h = dropout(tape, h, self.dropout, mode)?;
        let y = self.output.forward(store, tape, h)?;
        Ok((activate(tape, self.activation, y), stats))
    }
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Blocks(Vec<ResidualBlock>),
    Wide(WideDecoder),
}

impl Decoder {
    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Vec<BatchStats>)> {
        let mut stats = Vec::new();
        let out = match self {
            Decoder::Blocks(blocks) => {
                let mut h = x;
                for block in blocks {
                    let (y, s) = block.forward(store, tape, h, mode)?;
                    stats.extend(s);
                    h = y;
                }
                h
            }
            Decoder::Wide(wide) => {
                let (y, s) = wide.forward(store, tape, x, mode)?;
                stats.extend(s);
                y
            }
        };
        Ok((out, stats))
    }

    /// Batch-norm layers in forward order.
    pub fn bn_states(&self) -> Vec<&BnState> {
        match self {
            Decoder::Blocks(blocks) => blocks.iter().map(|b| &b.bn).collect(),
            Decoder::Wide(w) => vec![&w.bn],
        }
    }

    pub fn bn_states_mut(&mut self) -> Vec<&mut BnState> {
        match self {
            Decoder::Blocks(blocks) => blocks.iter_mut().map(|b| &mut b.bn).collect(),
            Decoder::Wide(w) => vec![&mut w.bn],
        }
    }
}
