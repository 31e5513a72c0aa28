use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    classification_loss, Architecture, BoundParams, LabelSet, Pooling, ReferenceClassifier, TextSample, Vocabulary,
};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub pooling: Pooling,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pooling: Pooling::Attention,
            learning_rate: 0.5,
            epochs: 30,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which objective produced a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regime {
    Vanilla,
    Adversarial,
    Far { preset: Option<String> },
}

impl Regime {
    pub fn short_name(&self) -> &'static str {
        match self {
            Regime::Vanilla => "vanilla",
            Regime::Adversarial => "adversarial",
            Regime::Far { .. } => "far",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Far { preset: Some(p) } => write!(f, "far ({p})"),
            other => f.write_str(other.short_name()),
        }
    }
}

/// One optimizer step of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub classification_loss: f64,
    pub attribution_loss: f64,
    pub total: f64,
    pub attacked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub classifier: ReferenceClassifier,
    pub vocabulary: Vocabulary,
    pub label_names: Vec<String>,
    pub regime: Regime,
    pub final_train_loss: f64,
    pub final_validation_loss: Option<f64>,
    pub log: Vec<StepRecord>,
}

/// Gradient arrays aligned with [`ReferenceClassifier::parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(model: &ReferenceClassifier) -> Self {
        Gradients(
            model
                .parameters()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        )
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += factor * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }

    /// Sum of `items` scaled by `factor`, accumulated in order.
    pub fn sum_scaled(model: &ReferenceClassifier, items: &[Gradients], factor: f64) -> Gradients {
        let mut out = Gradients::zeros_like(model);
        for g in items {
            out.add_scaled(g, factor);
        }
        out
    }
}

/// A graph with every model parameter (including embedding rows used by the
/// objective) as a leaf, for computing parameter gradients of an arbitrary
/// scalar objective.
pub struct ParamGraph<'m> {
    pub graph: Graph,
    pub model: &'m ReferenceClassifier,
    pub params: BoundParams,
    embedded: Vec<(Var, Vec<usize>)>,
}

impl<'m> ParamGraph<'m> {
    pub fn new(model: &'m ReferenceClassifier) -> Self {
        let mut graph = Graph::new();
        let params = model.bind(&mut graph, true);
        Self {
            graph,
            model,
            params,
            embedded: Vec::new(),
        }
    }

    /// Embedding matrix of `sample` as a leaf whose gradient flows back to
    /// the table rows.
    pub fn embed(&mut self, sample: &TextSample) -> Result<Var> {
        let x = self.model.embed(sample)?;
        let v = self.graph.leaf(x);
        self.embedded.push((v, sample.ids.clone()));
        Ok(v)
    }

    /// Parameter gradients of `objective`.
    pub fn gradients(mut self, objective: Var) -> Gradients {
        let mut wrt: Vec<Var> = self.params.dense.clone();
        wrt.extend(self.embedded.iter().map(|(v, _)| *v));
        let grads = self.graph.grad(objective, &wrt);
        let mut out = Gradients::zeros_like(self.model);
        let n_dense = self.params.dense.len();
        for (i, g) in grads[..n_dense].iter().enumerate() {
            out.0[i + 1] = self.graph.value(*g).clone();
        }
        let table = &mut out.0[0];
        for (g, (_, ids)) in grads[n_dense..].iter().zip(&self.embedded) {
            let rows = self.graph.value(*g);
            for (r, &id) in ids.iter().enumerate() {
                for (t, v) in table.row_slice_mut(id).iter_mut().zip(rows.row_slice(r)) {
                    *t += v;
                }
            }
        }
        out
    }
}

/// Classification loss of `sample` against `labels` and its parameter
/// gradients.
pub fn loss_and_gradients(model: &ReferenceClassifier, sample: &TextSample, labels: &LabelSet) -> Result<(f64, Gradients)> {
    let mut pg = ParamGraph::new(model);
    let x = pg.embed(sample)?;
    let fwd = model.forward_on_graph(&mut pg.graph, &pg.params, x);
    let loss = classification_loss(&mut pg.graph, fwd.logits, labels, model.task_mode());
    let value = pg.graph.item(loss);
    Ok((value, pg.gradients(loss)))
}

pub fn classification_loss_value(model: &ReferenceClassifier, sample: &TextSample, labels: &LabelSet) -> Result<f64> {
    let x = model.embed(sample)?;
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let xv = g.constant(x);
    let fwd = model.forward_on_graph(&mut g, &p, xv);
    let loss = classification_loss(&mut g, fwd.logits, labels, model.task_mode());
    Ok(g.item(loss))
}

/// Mean classification loss over `samples` against their own labels.
pub fn mean_loss(model: &ReferenceClassifier, samples: &[TextSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| classification_loss_value(model, s, &s.labels))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

pub fn accuracy(model: &ReferenceClassifier, samples: &[TextSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = samples
        .iter()
        .map(|s| model.predict(s).map(|p| p == s.labels))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&h| h)
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Outcome of one optimizer step's objective evaluation. `gradients` are
/// already averaged over the batch.
pub struct BatchOutcome {
    pub gradients: Gradients,
    pub classification_loss: f64,
    pub attribution_loss: f64,
    pub total: f64,
    pub attacked: usize,
}

/// Plain mini-batch gradient descent shared by all training regimes. The
/// batch order is drawn from a sub-seed of `config.seed`, the initial
/// parameters from another, so two regimes with the same seed see the same
/// initialization and batches.
pub(crate) fn run_descent<F>(
    data: &Dataset,
    validation: &[TextSample],
    config: &TrainConfig,
    regime: Regime,
    mut step: F,
) -> Result<TrainedModel>
where
    F: FnMut(&ReferenceClassifier, &[&TextSample], usize, usize) -> Result<BatchOutcome>,
{
    config.validate()?;
    if data.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let arch = Architecture::reference(data.vocabulary.len(), data.label_names.len(), config.pooling, data.task_mode);
    let mut model = ReferenceClassifier::init(arch, derive_seed(config.seed, "init"));
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "batch-order"));
    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    let mut log = Vec::new();
    let mut global_step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TextSample> = chunk.iter().map(|&i| &data.samples[i]).collect();
            let outcome = step(&model, &batch, epoch, global_step)?;
            if !outcome.total.is_finite() || !outcome.gradients.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            for (p, g) in model.parameters_mut().iter_mut().zip(&outcome.gradients.0) {
                for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *x -= config.learning_rate * d;
                }
            }
            log.push(StepRecord {
                epoch,
                step: global_step,
                classification_loss: outcome.classification_loss,
                attribution_loss: outcome.attribution_loss,
                total: outcome.total,
                attacked: outcome.attacked,
            });
            global_step += 1;
        }
    }
    let final_train_loss = mean_loss(&model, &data.samples)?;
    if !final_train_loss.is_finite() {
        return Err(Error::Divergence { epoch: config.epochs });
    }
    let final_validation_loss = if validation.is_empty() {
        None
    } else {
        Some(mean_loss(&model, validation)?)
    };
    Ok(TrainedModel {
        classifier: model,
        vocabulary: data.vocabulary.clone(),
        label_names: data.label_names.clone(),
        regime,
        final_train_loss,
        final_validation_loss,
        log,
    })
}

/// Mean loss and averaged gradients of plain classification loss over a
/// batch; per-sample work runs in parallel and is reduced in batch order.
pub(crate) fn batch_classification_step(model: &ReferenceClassifier, batch: &[&TextSample]) -> Result<BatchOutcome> {
    let per_sample: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|s| loss_and_gradients(model, s, &s.labels))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let grads: Vec<Gradients> = per_sample.iter().map(|(_, g)| g.clone()).collect();
    let loss = per_sample.iter().map(|(l, _)| l).sum::<f64>() * scale;
    Ok(BatchOutcome {
        gradients: Gradients::sum_scaled(model, &grads, scale),
        classification_loss: loss,
        attribution_loss: 0.0,
        total: loss,
        attacked: 0,
    })
}

/// Standard training on classification loss (cross-entropy, or binary
/// cross-entropy for multilabel data).
pub fn train_vanilla(data: &Dataset, validation: &[TextSample], config: &TrainConfig) -> Result<TrainedModel> {
    run_descent(data, validation, config, Regime::Vanilla, |model, batch, _, _| {
        batch_classification_step(model, batch)
    })
}
