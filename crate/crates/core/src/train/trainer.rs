use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, softplus, GradCheck, Gradients, Tape, Var};
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::model::Model;
use crate::oracle::{EntitySet, QueryInstance};
use crate::query::QueryType;

use super::optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub negatives: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub variance_weight: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub workers: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 24.0,
            negatives: 128,
            learning_rate: 1e-4,
            batch_size: 128,
            variance_weight: 0.1,
            max_steps: 1000,
            seed: 0,
            workers: 1,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.variance_weight >= 0.0 && self.variance_weight.is_finite()) {
            return bad("variance weight must be nonnegative");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub qe_loss: f64,
    pub var_loss: f64,
    pub lr: f64,
}

/// A training example: one instance, one positive answer, its negatives.
#[derive(Debug, Clone)]
pub struct TrainingSample<'a> {
    pub instance: &'a QueryInstance,
    pub positive: EntityId,
    pub negatives: Vec<EntityId>,
}

/// Loss terms of one sample; `total` lives on the tape.
#[derive(Debug, Clone, Copy)]
pub struct SampleLoss {
    pub total: Var,
    pub qe: f64,
    pub variance: f64,
}

/// `k` entities drawn uniformly from those not in `answers`; without
/// replacement whenever at least `k` candidates exist.
pub fn sample_negatives<R: Rng + ?Sized>(
    num_entities: usize,
    answers: &EntitySet,
    k: usize,
    rng: &mut R,
) -> Result<Vec<EntityId>> {
    let pool: Vec<EntityId> = (0..num_entities)
        .map(EntityId)
        .filter(|e| !answers.contains(e))
        .collect();
    if pool.is_empty() {
        return Err(Error::NoNegativesAvailable);
    }
    Ok(if pool.len() >= k {
        index::sample(rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    })
}

/// Margin loss `-log σ(γ - d⁺) - mean_j log σ(d⁻_j - γ)`.
pub fn qe_loss_value(positive: f64, negatives: &[f64], gamma: f64) -> f64 {
    let neg: f64 =
        negatives.iter().map(|&d| softplus(gamma - d)).sum::<f64>() / negatives.len() as f64;
    softplus(positive - gamma) + neg
}

/// Tape version of [`qe_loss_value`].
pub fn qe_loss(tape: &mut Tape, positive: Var, negatives: &[Var], gamma: f64) -> Result<Var> {
    let p = tape.shift(positive, -gamma);
    let p = tape.softplus(p);
    let mut terms = Vec::with_capacity(negatives.len());
    for &n in negatives {
        let m = tape.scale(n, -1.0);
        let m = tape.shift(m, gamma);
        terms.push(tape.softplus(m));
    }
    let n = tape.mean(&terms)?;
    tape.add(p, n)
}

/// `qe + λ var`; the variance term only exists for the Beta backend.
pub fn total_loss(qe: f64, variance: f64, weight: f64, backend: Backend) -> Result<f64> {
    match backend {
        Backend::Beta => Ok(qe + weight * variance),
        Backend::Box if variance != 0.0 => Err(Error::VarianceOnBoxBackend),
        Backend::Box => Ok(qe),
    }
}

/// Builds the full loss of one sample on `tape`. Negative distances use
/// the integrated answer embedding, as does the positive one.
pub fn sample_loss(
    model: &Model,
    tape: &mut Tape,
    kg: &KnowledgeGraph,
    sample: &TrainingSample,
    gamma: f64,
    variance_weight: f64,
) -> Result<SampleLoss> {
    let graph = sample.instance.graph()?;
    let qs = model.embed(tape, kg, &graph, true)?;
    let pos = model.query_distance(tape, sample.positive, &qs)?;
    let negs = sample
        .negatives
        .iter()
        .map(|&e| model.query_distance(tape, e, &qs))
        .collect::<Result<Vec<_>>>()?;
    let qe = qe_loss(tape, pos, &negs, gamma)?;
    let qe_value = tape.scalar_value(qe);
    let wants_variance =
        model.backend() == Backend::Beta && model.context_net().is_some() && variance_weight > 0.0;
    if !wants_variance {
        return Ok(SampleLoss {
            total: qe,
            qe: qe_value,
            variance: 0.0,
        });
    }
    let plain = model.embed(tape, kg, &graph, false)?;
    let var = model.variance_loss(tape, &plain, &qs)?;
    let var_value = tape.scalar_value(var);
    let weighted = tape.scale(var, variance_weight);
    let total = tape.add(qe, weighted)?;
    Ok(SampleLoss {
        total,
        qe: qe_value,
        variance: var_value,
    })
}

/// Central-difference check of the full loss of one instance over every
/// parameter. The first answer is the positive; the first `negatives`
/// non-answers are the negatives.
pub fn loss_grad_check(
    model: &Model,
    kg: &KnowledgeGraph,
    instance: &QueryInstance,
    gamma: f64,
    variance_weight: f64,
    negatives: usize,
) -> Result<GradCheck> {
    let answers = instance.all_answers();
    let positive = *answers.iter().next().ok_or(Error::EmptyDataset)?;
    let negatives: Vec<EntityId> = (0..model.num_entities())
        .map(EntityId)
        .filter(|e| !answers.contains(e))
        .take(negatives)
        .collect();
    if negatives.is_empty() {
        return Err(Error::NoNegativesAvailable);
    }
    let sample = TrainingSample {
        instance,
        positive,
        negatives,
    };
    let mut store = model.store().clone();
    grad_check(
        &mut store,
        |tape| Ok(sample_loss(model, tape, kg, &sample, gamma, variance_weight)?.total),
        1e-6,
    )
}

/// Synchronous mini-batch trainer over a mixed-type dataset.
pub struct Trainer<'a> {
    model: Model,
    kg: &'a KnowledgeGraph,
    dataset: Vec<QueryInstance>,
    answers: Vec<Vec<EntityId>>,
    by_type: Vec<(QueryType, Vec<usize>)>,
    config: TrainConfig,
    optimizer: Adam,
    rng: ChaCha8Rng,
    pool: rayon::ThreadPool,
    step: usize,
}

impl<'a> Trainer<'a> {
    /// Validates the configuration against the model and data. Instances
    /// without any answer are dropped.
    pub fn new(
        mut model: Model,
        kg: &'a KnowledgeGraph,
        dataset: Vec<QueryInstance>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if kg.num_entities() != model.num_entities() || kg.num_relations() != model.num_relations()
        {
            return Err(Error::InvalidConfig(format!(
                "model sized for {} entities and {} relations, graph has {} and {}",
                model.num_entities(),
                model.num_relations(),
                kg.num_entities(),
                kg.num_relations()
            )));
        }
        let dataset: Vec<QueryInstance> =
            dataset.into_iter().filter(|i| !i.is_degenerate()).collect();
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !model.backend().supports_negation() {
            if let Some(inst) = dataset.iter().find(|i| i.query_type.has_negation()) {
                return Err(Error::NegationUnsupported(inst.query_type.to_string()));
            }
        }
        let mut groups: BTreeMap<QueryType, Vec<usize>> = BTreeMap::new();
        for (i, inst) in dataset.iter().enumerate() {
            groups.entry(inst.query_type).or_default().push(i);
        }
        let answers = dataset
            .iter()
            .map(|i| i.all_answers().into_iter().collect())
            .collect();
        if config.precision == Precision::F32 {
            model.store_mut().round_to_f32();
        }
        let optimizer = Adam::new(model.store(), config.learning_rate);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        Ok(Trainer {
            model,
            kg,
            dataset,
            answers,
            by_type: groups.into_iter().collect(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            optimizer,
            pool,
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Query types present in the training data.
    pub fn query_types(&self) -> Vec<QueryType> {
        self.by_type.iter().map(|(t, _)| *t).collect()
    }

    fn draw_batch(&mut self) -> Result<Vec<(usize, EntityId, Vec<EntityId>)>> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let (_, members) = &self.by_type[self.rng.gen_range(0..self.by_type.len())];
            let idx = members[self.rng.gen_range(0..members.len())];
            let answers = &self.answers[idx];
            let positive = answers[self.rng.gen_range(0..answers.len())];
            let all = self.dataset[idx].all_answers();
            let negatives = sample_negatives(
                self.model.num_entities(),
                &all,
                self.config.negatives,
                &mut self.rng,
            )?;
            batch.push((idx, positive, negatives));
        }
        Ok(batch)
    }

    /// One optimiser update. Samples are split into `workers` contiguous
    /// chunks whose gradients are summed in chunk order.
    pub fn step(&mut self) -> Result<StepRecord> {
        let batch = self.draw_batch()?;
        let chunk = batch.len().div_ceil(self.config.workers);
        let (model, kg, dataset, cfg) = (&self.model, self.kg, &self.dataset, &self.config);
        let partials: Vec<Result<(Gradients, f64, f64, f64)>> = self.pool.install(|| {
            batch
                .par_chunks(chunk)
                .map(|part| {
                    let mut grads = Gradients::zeros_like(model.store());
                    let (mut loss, mut qe, mut var) = (0.0, 0.0, 0.0);
                    for (idx, positive, negatives) in part {
                        let sample = TrainingSample {
                            instance: &dataset[*idx],
                            positive: *positive,
                            negatives: negatives.clone(),
                        };
                        let mut tape = Tape::new(model.store());
                        let terms = sample_loss(
                            model,
                            &mut tape,
                            kg,
                            &sample,
                            cfg.gamma,
                            cfg.variance_weight,
                        )?;
                        loss += tape.scalar_value(terms.total);
                        qe += terms.qe;
                        var += terms.variance;
                        tape.backward_into(terms.total, &mut grads)?;
                    }
                    Ok((grads, loss, qe, var))
                })
                .collect()
        });
        let mut total = Gradients::zeros_like(self.model.store());
        let (mut loss, mut qe, mut var) = (0.0, 0.0, 0.0);
        for part in partials {
            let (g, l, q, v) = part?;
            total.accumulate(&g);
            loss += l;
            qe += q;
            var += v;
        }
        let n = batch.len() as f64;
        let record = StepRecord {
            step: self.step,
            loss: loss / n,
            qe_loss: qe / n,
            var_loss: var / n,
            lr: self.config.learning_rate,
        };
        if !record.loss.is_finite() {
            return Err(Error::DivergedLoss { step: self.step });
        }
        total.scale(1.0 / n);
        self.optimizer.update(self.model.store_mut(), &total)?;
        if self.config.precision == Precision::F32 {
            self.model.store_mut().round_to_f32();
        }
        if !self.model.store().iter().all(|(_, _, t)| t.all_finite()) {
            return Err(Error::DivergedLoss { step: self.step });
        }
        self.step += 1;
        Ok(record)
    }

    /// Runs until `max_steps` updates have been applied, calling `observe`
    /// after each one.
    pub fn run(
        &mut self,
        mut observe: impl FnMut(&StepRecord, &Model) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        let mut records = Vec::new();
        while self.step < self.config.max_steps {
            let r = self.step()?;
            observe(&r, &self.model)?;
            records.push(r);
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qe_loss_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((qe_loss_value(3.0, &[3.0], 3.0) - 2.0 * ln2).abs() < 1e-15);
        let far = qe_loss_value(0.0, &[1e6], 1.0);
        assert!((far - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        assert!(qe_loss_value(0.5, &[2.0], 1.0) < qe_loss_value(0.7, &[2.0], 1.0));
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.0, 0.5, 0.0, Backend::Beta).unwrap(), 1.0);
        assert!((total_loss(1.0, 0.5, 0.1, Backend::Beta).unwrap() - 1.05).abs() < 1e-15);
        assert_eq!(total_loss(1.0, 0.0, 0.1, Backend::Box).unwrap(), 1.0);
        assert!(matches!(
            total_loss(1.0, 0.5, 0.1, Backend::Box),
            Err(Error::VarianceOnBoxBackend)
        ));
    }

    #[test]
    fn negatives_contract() {
        let answers: EntitySet = [EntityId(1), EntityId(4), EntityId(7)].into();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = sample_negatives(100, &answers, 5, &mut rng).unwrap();
        assert_eq!(negs.len(), 5);
        assert!(negs.iter().all(|e| !answers.contains(e)));
        let unique: EntitySet = negs.iter().copied().collect();
        assert_eq!(unique.len(), 5);
        let again = sample_negatives(100, &answers, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(negs, again);
        let everything: EntitySet = (0..3).map(EntityId).collect();
        assert!(matches!(
            sample_negatives(3, &everything, 2, &mut rng),
            Err(Error::NoNegativesAvailable)
        ));
        // Small complement: duplicates allowed, size still k.
        let most: EntitySet = (0..9).map(EntityId).collect();
        assert_eq!(
            sample_negatives(10, &most, 4, &mut rng).unwrap(),
            vec![EntityId(9); 4]
        );
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { gamma: 0.0, ..ok },
            TrainConfig { negatives: 0, ..ok },
            TrainConfig {
                variance_weight: -1.0,
                ..ok
            },
            TrainConfig {
                batch_size: 0,
                ..ok
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}
