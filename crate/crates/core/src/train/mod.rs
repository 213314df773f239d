//! Mini-batch Adam training with warmup and early stopping on dev span F1.

pub mod adam;
pub mod config;
pub mod early_stopping;
pub mod vocab;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bio::{spans_from_tags, CodecError, TagScheme};
use crate::dataset::{DatasetError, DatasetLabels, SentenceRecord};
use crate::metrics::{MetricsError, MetricsReport};
use crate::model::{Dropout, EncoderInput, G2CModel, JointPrediction, ModelError};
use crate::relations::RelationError;
use crate::tensor::Graph;
pub use adam::{warmup_lr, Adam, AdamHyper};
pub use config::{EarlyStoppingConfig, EncoderDims, OptimizerConfig, RunConfig, StopMetric};
pub use early_stopping::{EarlyStopping, StopDecision};
pub use vocab::{EncodedSentence, TokenVocab, Vocabularies, SPECIAL_FORMS, UPOS_TAGS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: u64, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Model plus optimizer, enough to resume exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: G2CModel,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence training loss.
    pub train_loss: f64,
    pub learning_rate: f64,
    pub steps: u64,
    pub dev_span_macro_f1: Option<f64>,
    pub dev_sentence_accuracy: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_span_macro_f1: Option<f64>,
    pub stopped_early: bool,
}

fn input(s: &EncodedSentence) -> EncoderInput<'_> {
    EncoderInput::new(&s.tokens, &s.pos, &s.relations)
}

pub fn predict_all(
    model: &G2CModel,
    data: &[EncodedSentence],
) -> Result<Vec<JointPrediction>, TrainError> {
    data.iter()
        .map(|s| model.predict(&input(s)).map_err(TrainError::from))
        .collect()
}

/// Scores predictions against the gold labels carried by `data`.
pub fn evaluate(
    model: &G2CModel,
    data: &[EncodedSentence],
    scheme: &TagScheme,
) -> Result<MetricsReport, TrainError> {
    let preds = predict_all(model, data)?;
    let gold_labels = data
        .iter()
        .map(|s| {
            s.sentence_label
                .ok_or_else(|| TrainError::Data("sentence without gold label".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pred_labels: Vec<usize> = preds.iter().map(|p| p.sentence_label).collect();
    let gold_spans: Vec<_> = data.iter().map(|s| s.gold_spans.clone()).collect();
    let pred_spans: Vec<_> = preds
        .iter()
        .map(|p| spans_from_tags(&p.tag_sequence, scheme))
        .collect();
    Ok(MetricsReport::evaluate(
        &gold_labels,
        &pred_labels,
        &gold_spans,
        &pred_spans,
    )?)
}

pub struct Trainer {
    config: RunConfig,
    vocab: Vocabularies,
    scheme: TagScheme,
    train: Vec<EncodedSentence>,
    dev: Vec<EncodedSentence>,
    state: TrainState,
    warmup: usize,
}

impl Trainer {
    pub fn new(
        config: RunConfig,
        vocab: Vocabularies,
        train: Vec<EncodedSentence>,
        dev: Vec<EncodedSentence>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let scheme = vocab.scheme()?;
        let model_config = config.model_config(
            vocab.tokens.len(),
            vocab.pos_tag_count(),
            vocab.dep_labels.relation_onehot_dim(),
            vocab.lf_labels.len(),
            scheme.len(),
        );
        let model = G2CModel::with_init_std(model_config, config.seed, config.init_std)?;
        let adam = Adam::new(model.store().tensors(), AdamHyper::default());
        let state = TrainState {
            model,
            adam,
            epoch: 0,
            step: 0,
        };
        Self::resume(config, vocab, train, dev, state)
    }

    pub fn resume(
        config: RunConfig,
        vocab: Vocabularies,
        train: Vec<EncodedSentence>,
        dev: Vec<EncodedSentence>,
        state: TrainState,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        if let Some(s) = train
            .iter()
            .find(|s| s.sentence_label.is_none() || s.tags.len() != s.len())
        {
            return Err(TrainError::Data(format!(
                "training sentence of {} tokens lacks gold labels",
                s.len()
            )));
        }
        let scheme = vocab.scheme()?;
        let steps_per_epoch = train.len().div_ceil(config.optimizer.batch_size);
        let total = steps_per_epoch * config.optimizer.epochs;
        let warmup = config
            .optimizer
            .warmup_steps
            .unwrap_or_else(|| (total as f64 * 0.1).ceil() as usize);
        Ok(Self {
            config,
            vocab,
            scheme,
            train,
            dev,
            state,
            warmup,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabularies {
        &self.vocab
    }

    pub fn scheme(&self) -> &TagScheme {
        &self.scheme
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.config.optimizer.batch_size)
    }

    /// Training order of one epoch, fixed by `(seed, epoch)`.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 * epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    fn batch_for(&self, step: u64) -> Vec<usize> {
        let per_epoch = self.steps_per_epoch() as u64;
        let epoch = (step / per_epoch) as usize;
        let pos = (step % per_epoch) as usize;
        let bs = self.config.optimizer.batch_size;
        let order = self.epoch_order(epoch);
        order[pos * bs..((pos + 1) * bs).min(order.len())].to_vec()
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        warmup_lr(self.config.optimizer.learning_rate, step, self.warmup)
    }

    /// One optimizer update on the next batch; returns the batch's mean loss.
    pub fn train_step(&mut self) -> Result<f64, TrainError> {
        let step = self.state.step;
        let batch = self.batch_for(step);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 * step);
        let rate = self.config.encoder.dropout;
        let reduction = self.config.optimizer.token_reduction;

        let model = &self.state.model;
        let mut g = Graph::new();
        let bound = model.store().bind(&mut g, true);
        let mut losses = Vec::with_capacity(batch.len());
        for &i in &batch {
            let s = &self.train[i];
            let mut dropout = Dropout {
                rate,
                rng: &mut rng,
            };
            let label = s.sentence_label.expect("checked at construction");
            losses.push(model.loss(
                &mut g,
                &bound,
                &input(s),
                label,
                &s.tags,
                reduction,
                Some(&mut dropout),
            )?);
        }
        let total = g.add_all(&losses).map_err(ModelError::from)?;
        let mean = g.scale(total, 1.0 / batch.len() as f64);
        let loss = g.value(mean).data()[0];
        if !loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch: self.state.epoch + 1,
                step,
                loss,
            });
        }
        g.backward(mean).map_err(ModelError::from)?;
        let grads = bound.grads(&g);
        let lr = self.learning_rate(step);
        let TrainState { model, adam, .. } = &mut self.state;
        adam.update(model.store_mut().tensors_mut(), &grads, lr);
        self.state.step += 1;
        Ok(loss)
    }

    /// Runs the steps of the current epoch; returns the mean sentence loss.
    pub fn run_epoch(&mut self) -> Result<f64, TrainError> {
        let per_epoch = self.steps_per_epoch() as u64;
        let end = (self.state.epoch as u64 + 1) * per_epoch;
        let mut weighted = 0.0;
        while self.state.step < end {
            let n = self.batch_for(self.state.step).len();
            weighted += self.train_step()? * n as f64;
        }
        self.state.epoch += 1;
        Ok(weighted / self.train.len() as f64)
    }

    /// Dev metrics of the current parameters after rounding to `f32`, which
    /// is what a saved checkpoint reproduces.
    pub fn evaluate_dev(&self) -> Result<Option<MetricsReport>, TrainError> {
        if self.dev.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(
            &self.state.model.round_f32(),
            &self.dev,
            &self.scheme,
        )?))
    }

    /// Trains until the epoch budget runs out or patience is exhausted.
    /// Returns the best state (parameters rounded to `f32`) and the history.
    pub fn fit(mut self) -> Result<TrainOutcome, TrainError> {
        let mut stopper = EarlyStopping::new(self.config.early_stopping.patience);
        let mut history = History::default();
        let mut best: Option<TrainState> = None;
        while self.state.epoch < self.config.optimizer.epochs {
            let train_loss = self.run_epoch()?;
            let epoch = self.state.epoch;
            let dev = self.evaluate_dev()?;
            let decision = match &dev {
                Some(r) => stopper.observe(epoch, r.spans.macro_f1_by_role),
                None => StopDecision::Improved,
            };
            let improved = decision == StopDecision::Improved;
            if improved {
                let mut snapshot = self.state.clone();
                snapshot.model = snapshot.model.round_f32();
                best = Some(snapshot);
                history.best_epoch = epoch;
                history.best_dev_span_macro_f1 = dev.as_ref().map(|r| r.spans.macro_f1_by_role);
            }
            log::info!(
                "epoch {epoch}: loss {train_loss:.6}, dev span macro-F1 {}",
                dev.as_ref().map_or("n/a".to_string(), |r| format!(
                    "{:.4}",
                    r.spans.macro_f1_by_role
                ))
            );
            history.epochs.push(EpochRecord {
                epoch,
                train_loss,
                learning_rate: self.learning_rate(self.state.step.saturating_sub(1)),
                steps: self.state.step,
                dev_span_macro_f1: dev.as_ref().map(|r| r.spans.macro_f1_by_role),
                dev_sentence_accuracy: dev.as_ref().map(|r| r.sentence_accuracy),
                improved,
            });
            if decision == StopDecision::Stop {
                history.stopped_early = true;
                break;
            }
        }
        let best = best.expect("at least one epoch runs");
        Ok(TrainOutcome {
            best,
            history,
            config: self.config,
            vocab: self.vocab,
        })
    }
}

pub struct TrainOutcome {
    pub best: TrainState,
    pub history: History,
    pub config: RunConfig,
    pub vocab: Vocabularies,
}

/// Builds vocabularies from the training split, encodes both splits and fits.
pub fn run_training(
    config: &RunConfig,
    train: &[SentenceRecord],
    dev: &[SentenceRecord],
    labels: &DatasetLabels,
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let vocab = Vocabularies::from_training(train, labels)?;
    let train = vocab.encode_all(train)?;
    let dev = vocab.encode_all(dev)?;
    Trainer::new(config.clone(), vocab, train, dev)?.fit()
}
