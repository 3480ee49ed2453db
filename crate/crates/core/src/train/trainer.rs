use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{smooth_labels, Adam, AdamConfig, TrainConfig};
use crate::autodiff::Tape;
use crate::eval::{evaluate, AggregateReport, EvalReport, Metrics};
use crate::kg::{Batch1N, KnowledgeGraph, PairIndex, Split};
use crate::model::{DSparsE, Mode, ModelConfig};
use crate::{kernels, Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: Real,
    pub valid: Option<Metrics>,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: DSparsE,
    pub adam: Adam,
    /// Drives batch order and dropout.
    pub rng: ChaCha8Rng,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let model = DSparsE::new(model)?;
        let adam = Adam::new(model.store(), AdamConfig::with_lr(train.lr));
        Ok(TrainState {
            rng: ChaCha8Rng::seed_from_u64(train.seed),
            model,
            adam,
            train,
            epoch: 0,
        })
    }

    /// Forward, loss, backward and one optimizer step. Returns the loss.
    pub fn step(&mut self, batch: &Batch1N) -> Result<Real> {
        let labels = smooth_labels(&batch.labels_real(), batch.n_entities, self.train.label_smoothing)?;
        let mut tape = Tape::new();
        let fwd = self.model.forward(
            &mut tape,
            &batch.subjects(),
            &batch.relations(),
            &mut Mode::Train(&mut self.rng),
        )?;
        let loss = tape.bce(fwd.scores, &labels)?;
        let value = tape.value(loss)[0];
        if !value.is_finite() {
            return Ok(value);
        }
        tape.backward(loss)?;
        let store = self.model.store_mut();
        store.zero_grad();
        tape.accumulate_into(store);
        self.model.apply_bn_stats(&fwd.bn_stats);
        self.adam.step(self.model.store_mut())?;
        Ok(value)
    }

    /// Trains until `self.train.epochs` epochs are complete.
    pub fn fit(&mut self, kg: &KnowledgeGraph, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
        check_vocab(self.model.config(), kg)?;
        let plan = PairIndex::new(kg.train_augmented());
        if plan.len() < 2 {
            return Err(Error::param("training split needs at least two query pairs"));
        }
        let n = kg.n_entities();
        let mut history = Vec::new();
        while self.epoch < self.train.epochs {
            let epoch = self.epoch + 1;
            let order = plan.epoch_order(self.train.batch_size, &mut self.rng);
            let mut total = 0.0;
            for (b, positions) in order.iter().enumerate() {
                let loss = self.step(&plan.batch(positions, n))?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch: b + 1 });
                }
                total += loss;
            }
            self.epoch = epoch;
            let valid = if self.train.eval_every > 0
                && epoch.is_multiple_of(self.train.eval_every)
                && !kg.split(Split::Valid).is_empty()
            {
                Some(evaluate(&self.model, kg, Split::Valid)?.metrics)
            } else {
                None
            };
            let record = EpochRecord {
                epoch,
                loss: total / order.len() as Real,
                valid,
            };
            on_epoch(&record);
            history.push(record);
        }
        Ok(history)
    }
}

fn check_vocab(config: &ModelConfig, kg: &KnowledgeGraph) -> Result<()> {
    if config.n_entities != kg.n_entities() || config.n_relations != kg.n_relations() {
        return Err(Error::param(format!(
            "model vocabulary {}x{} does not match graph {}x{} (entities x relations)",
            config.n_entities,
            config.n_relations,
            kg.n_entities(),
            kg.n_relations()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn model(&self) -> &DSparsE {
        &self.state.model
    }
}

/// A fresh training run on `kg`.
pub fn train_run(kg: &KnowledgeGraph, model: &ModelConfig, train: &TrainConfig) -> Result<TrainOutcome> {
    let mut state = TrainState::new(model.clone(), train.clone())?;
    let history = state.fit(kg, |_| {})?;
    Ok(TrainOutcome { state, history })
}

#[derive(Clone, Debug)]
pub struct RepeatedRuns {
    pub outcomes: Vec<TrainOutcome>,
    pub reports: Vec<EvalReport>,
    pub aggregate: AggregateReport,
}

/// `runs` independent runs; run `i` offsets both the model and the
/// training seed by `i`. Runs execute in parallel and are each
/// deterministic, so the result does not depend on scheduling.
pub fn repeated_runs(
    kg: &KnowledgeGraph,
    model: &ModelConfig,
    train: &TrainConfig,
    runs: usize,
    split: Split,
) -> Result<RepeatedRuns> {
    if runs == 0 {
        return Err(Error::param("need at least one run"));
    }
    train.validate()?;
    model.validate()?;
    let plan: Vec<usize> = (0..runs).collect();
    let results = kernels::map_ordered(&plan, |&i| -> Result<(TrainOutcome, EvalReport)> {
        let mut m = model.clone();
        let mut t = train.clone();
        m.seed = m.seed.wrapping_add(i as u64);
        t.seed = t.seed.wrapping_add(i as u64);
        let outcome = train_run(kg, &m, &t)?;
        let report = evaluate(outcome.model(), kg, split)?;
        Ok((outcome, report))
    });
    let mut outcomes = Vec::with_capacity(runs);
    let mut reports = Vec::with_capacity(runs);
    for r in results {
        let (o, e) = r?;
        outcomes.push(o);
        reports.push(e);
    }
    let seeded: Vec<(u64, EvalReport)> = outcomes
        .iter()
        .zip(&reports)
        .map(|(o, e)| (o.state.train.seed, e.clone()))
        .collect();
    let aggregate = AggregateReport::from_runs(&seeded)?;
    Ok(RepeatedRuns {
        outcomes,
        reports,
        aggregate,
    })
}
