use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{DecoderKind, DynamicBranch, ModelConfig};
use super::layers::{
    activate, dropout, BnState, Decoder, DynamicLayer, Mode, RelationAwareLayer, ResidualBlock, WideDecoder,
};
use super::sparse::SparseLinear;
use crate::autodiff::{BatchStats, DiffArray, ParamId, ParamStore, Tape, Var};
use crate::{kernels, Real, Result};

/// Queries per tape when scoring in eval mode.
const PREDICT_CHUNK: usize = 256;

#[derive(Clone, Debug)]
pub enum DynamicSlot {
    Experts(DynamicLayer),
    PureMlp(SparseLinear),
    Off,
}

/// Outputs of one forward pass.
pub struct Forward {
    /// `σ(decoded · Eᵀ)`, `B × |E|`.
    pub scores: Var,
    /// Decoder output, `B × d`.
    pub decoded: Var,
    /// Gate weights, `B × k`, when the expert layer is active.
    pub gates: Option<Var>,
    /// Batch statistics of each batch-norm layer (train mode only).
    pub bn_stats: Vec<BatchStats>,
}

/// `ψ = σ(decoded · Eᵀ)`.
pub fn score_all(tape: &mut Tape, decoded: Var, entities: Var) -> Result<Var> {
    let logits = tape.matmul_nt(decoded, entities)?;
    Ok(tape.sigmoid(logits))
}

/// The full encoder/decoder link predictor and its parameters.
#[derive(Clone, Debug)]
pub struct DSparsE {
    config: ModelConfig,
    store: ParamStore,
    entity: ParamId,
    relation: ParamId,
    dynamic: DynamicSlot,
    relation_aware: Option<RelationAwareLayer>,
    projection: SparseLinear,
    decoder: Decoder,
}

fn xavier_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Real> {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..rows * cols).map(|_| normal.sample(rng) as Real).collect()
}

impl DSparsE {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let mut next = || ChaCha8Rng::seed_from_u64(master.next_u64());
        let mut store = ParamStore::new();
        let (d, h, alpha, f) = (config.dim, config.hidden, config.sparsity, config.activation);

        let entity = store.add(
            "entity_embedding",
            DiffArray::new(vec![config.n_entities, d], xavier_normal(config.n_entities, d, &mut next()))?,
        );
        let relation = store.add(
            "relation_embedding",
            DiffArray::new(vec![config.n_relations, d], xavier_normal(config.n_relations, d, &mut next()))?,
        );

        let dynamic = match config.dynamic {
            DynamicBranch::Experts => {
                let experts = (0..config.experts)
                    .map(|i| SparseLinear::new(&mut store, &format!("dynamic.expert{i}"), h, 2 * d, alpha, &mut next()))
                    .collect::<Result<Vec<_>>>()?;
                let gate = SparseLinear::dense(&mut store, "dynamic.gate", config.experts, 2 * d, &mut next())?;
                DynamicSlot::Experts(DynamicLayer {
                    experts,
                    gate,
                    temperature: config.temperature,
                    activation: f,
                })
            }
            DynamicBranch::PureMlp { width } => {
                DynamicSlot::PureMlp(SparseLinear::new(&mut store, "dynamic.mlp", width, 2 * d, alpha, &mut next())?)
            }
            DynamicBranch::Off => DynamicSlot::Off,
        };

        let relation_aware = if config.relation_aware {
            let maps = (0..config.n_relations)
                .map(|r| SparseLinear::new(&mut store, &format!("relation.{r}"), h, 2 * d, alpha, &mut next()))
                .collect::<Result<Vec<_>>>()?;
            Some(RelationAwareLayer { maps, activation: f })
        } else {
            None
        };

        let projection = SparseLinear::new(&mut store, "projection", d, config.encoder_width(), alpha, &mut next())?;

        let decoder = match config.decoder {
            DecoderKind::Residual | DecoderKind::Plain => {
                let skip = config.decoder == DecoderKind::Residual;
                let blocks = (0..config.depth)
                    .map(|i| {
                        let name = format!("decoder.{i}");
                        Ok(ResidualBlock {
                            linear: SparseLinear::new(&mut store, &name, d, d, alpha, &mut next())?,
                            bn: BnState::new(&mut store, &format!("{name}.bn"), d),
                            skip,
                            dropout: config.dropout,
                            placement: config.dropout_placement,
                            activation: f,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Decoder::Blocks(blocks)
            }
            DecoderKind::WideLinear { width } => Decoder::Wide(WideDecoder {
                hidden: SparseLinear::new(&mut store, "decoder.wide", width, d, alpha, &mut next())?,
                bn: BnState::new(&mut store, "decoder.wide.bn", width),
                output: SparseLinear::new(&mut store, "decoder.out", d, width, alpha, &mut next())?,
                dropout: config.dropout,
                activation: f,
            }),
        };

        Ok(DSparsE {
            config,
            store,
            entity,
            relation,
            dynamic,
            relation_aware,
            projection,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn entity_embedding(&self) -> ParamId {
        self.entity
    }

    pub fn relation_embedding(&self) -> ParamId {
        self.relation
    }

    pub fn dynamic(&self) -> &DynamicSlot {
        &self.dynamic
    }

    pub fn dynamic_mut(&mut self) -> &mut DynamicSlot {
        &mut self.dynamic
    }

    pub fn relation_aware(&self) -> Option<&RelationAwareLayer> {
        self.relation_aware.as_ref()
    }

    pub fn projection(&self) -> &SparseLinear {
        &self.projection
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Decoder {
        &mut self.decoder
    }

    /// Number of gate outputs, if the expert layer is active.
    pub fn gate_width(&self) -> Option<usize> {
        match &self.dynamic {
            DynamicSlot::Experts(layer) => Some(layer.experts.len()),
            _ => None,
        }
    }

    /// `[e_s ; e_r]` for a batch of ids.
    pub fn embed_pairs(&self, tape: &mut Tape, subjects: &[usize], relations: &[usize]) -> Result<(Var, Var)> {
        let entities = tape.param(&self.store, self.entity);
        let rel_table = tape.param(&self.store, self.relation);
        let e_s = tape.gather_rows(entities, subjects)?;
        let e_r = tape.gather_rows(rel_table, relations)?;
        Ok((tape.concat_cols(e_s, e_r)?, entities))
    }

    /// Encoder: branches, concatenation, projection, activation, dropout.
    pub fn encode(
        &self,
        tape: &mut Tape,
        pair: Var,
        relations: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Option<Var>)> {
        let store = &self.store;
        let f = self.config.activation;
        let mut gates = None;
        let dynamic = match &self.dynamic {
            DynamicSlot::Experts(layer) => {
                let (out, g) = layer.forward(store, tape, pair)?;
                gates = Some(g);
                Some(out)
            }
            DynamicSlot::PureMlp(mlp) => {
                let y = mlp.forward(store, tape, pair)?;
                Some(activate(tape, f, y))
            }
            DynamicSlot::Off => None,
        };
        let relational = match &self.relation_aware {
            Some(layer) => Some(layer.forward(store, tape, pair, relations)?),
            None => None,
        };
        let joined = match (dynamic, relational) {
            (Some(a), Some(b)) => tape.concat_cols(a, b)?,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => pair,
        };
        let projected = self.projection.forward(store, tape, joined)?;
        let projected = activate(tape, f, projected);
        let out = dropout(tape, projected, self.config.dropout, mode)?;
        Ok((out, gates))
    }

    /// Embedding → encoder → decoder → all-entity scores.
    pub fn forward(
        &self,
        tape: &mut Tape,
        subjects: &[usize],
        relations: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Forward> {
        let (pair, entities) = self.embed_pairs(tape, subjects, relations)?;
        let (encoded, gates) = self.encode(tape, pair, relations, mode)?;
        let (decoded, bn_stats) = self.decoder.forward(&self.store, tape, encoded, mode)?;
        let scores = score_all(tape, decoded, entities)?;
        Ok(Forward {
            scores,
            decoded,
            gates,
            bn_stats,
        })
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn apply_bn_stats(&mut self, stats: &[BatchStats]) {
        for (bn, s) in self.decoder.bn_states_mut().into_iter().zip(stats) {
            bn.update(s);
        }
    }

    /// Eval-mode scores, row-major `B × |E|`. Chunks run in parallel; each
    /// row depends only on its own query, so chunking never changes a bit.
    pub fn predict(&self, subjects: &[usize], relations: &[usize]) -> Result<Vec<Real>> {
        let queries: Vec<(usize, usize)> = subjects.iter().copied().zip(relations.iter().copied()).collect();
        let chunks: Vec<&[(usize, usize)]> = queries.chunks(PREDICT_CHUNK).collect();
        let parts = kernels::map_ordered(&chunks, |chunk| -> Result<Vec<Real>> {
            let (s, r): (Vec<usize>, Vec<usize>) = chunk.iter().copied().unzip();
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, &s, &r, &mut Mode::Eval)?;
            Ok(tape.value(out.scores).to_vec())
        });
        let mut scores = Vec::with_capacity(subjects.len() * self.config.n_entities);
        for part in parts {
            scores.extend(part?);
        }
        Ok(scores)
    }

    /// Eval-mode gate weights, row-major `B × k`; `None` without experts.
    pub fn gates(&self, subjects: &[usize], relations: &[usize]) -> Result<Option<Vec<Real>>> {
        let DynamicSlot::Experts(layer) = &self.dynamic else {
            return Ok(None);
        };
        let mut tape = Tape::new();
        let (pair, _) = self.embed_pairs(&mut tape, subjects, relations)?;
        let g = layer.gate_forward(&self.store, &mut tape, pair)?;
        Ok(Some(tape.value(g).to_vec()))
    }
}
