//! Robust training: adversarial training on loss-maximizing substitutions,
//! and FAR training, whose inner step maximizes a mix of classification loss
//! and attribution distance and whose outer step minimizes a mix of the
//! adversarial classification loss and the attribution distance.
//!
//! Both regimes replace the first `floor(ratio * |batch|)` samples of every
//! shuffled batch by adversaries computed against the current parameters;
//! everything else (initialization, batch order, update rule) is shared with
//! [`train_vanilla`](crate::model::train_vanilla), so a zero ratio
//! reproduces the vanilla trajectory exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribution_on_graph, AttributionConfig, Method};
use crate::autodiff::Tensor;
use crate::candidates::CandidateExtractor;
use crate::dare::{
    attribution_distance_gradient, greedy_search, loss_gradient, rank_rows, ranking_epsilon, AttackConfig,
    Ranking, RankingSource, SearchSpace, Substitution,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{attribution_distance, cosine_distance_on_graph};
use crate::model::{
    batch_classification_step, check_finite_rows, classification_loss, classification_loss_value,
    loss_and_gradients, run_descent, BatchOutcome, Gradients, LabelSet, ParamGraph, ReferenceClassifier, Regime,
    TextSample, TrainConfig, TrainedModel, Vocabulary,
};

/// `floor(ratio * batch)`, with a small tolerance so that products such as
/// `0.3 * 10` are not rounded down by floating-point error.
pub fn attacked_count(ratio: f64, batch: usize) -> usize {
    ((ratio * batch as f64) + 1e-9).floor().min(batch as f64) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvTrainConfig {
    pub train: TrainConfig,
    /// Fraction of each batch replaced by adversaries.
    pub attack_ratio: f64,
    /// Candidate count, word budget and stop words of the training attack.
    /// The prediction constraint is not used.
    pub attack: AttackConfig,
}

impl Default for AdvTrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            attack_ratio: 0.3,
            attack: AttackConfig::default(),
        }
    }
}

impl AdvTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.attack.validate()?;
        check_ratio(self.attack_ratio)
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(format!("attack ratio {ratio} outside [0, 1]")));
    }
    Ok(())
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Named parameter sets for FAR training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FarPreset {
    /// gamma 0.0, delta 0.7, attack ratio 0.6.
    Aat,
    /// gamma 0.85, delta 0.85, attack ratio 0.6.
    AdvAat,
}

impl FarPreset {
    pub fn name(self) -> &'static str {
        match self {
            FarPreset::Aat => "aat",
            FarPreset::AdvAat => "adv-aat",
        }
    }

    /// (gamma, delta, attack ratio)
    pub fn values(self) -> (f64, f64, f64) {
        match self {
            FarPreset::Aat => (0.0, 0.7, 0.6),
            FarPreset::AdvAat => (0.85, 0.85, 0.6),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarConfig {
    pub train: TrainConfig,
    /// Inner mix: `(1 - gamma) * loss + gamma * distance`.
    pub gamma: f64,
    /// Outer mix: `(1 - delta) * loss + delta * distance`.
    pub delta: f64,
    pub preset: Option<FarPreset>,
    pub attack_ratio: f64,
    /// Attribution differentiated in the outer loss; IG steps here are the
    /// training-time step count.
    pub attribution: AttributionConfig,
    /// Candidate count, word budget, stop words and ranking perturbation of
    /// the inner maximization. The prediction constraint is not used.
    pub attack: AttackConfig,
    /// Treat the original sample's map as a constant in the outer loss.
    pub detach_original: bool,
}

impl Default for FarConfig {
    fn default() -> Self {
        Self::from_preset(FarPreset::AdvAat)
    }
}

impl FarConfig {
    pub fn from_preset(preset: FarPreset) -> Self {
        let (gamma, delta, attack_ratio) = preset.values();
        Self {
            train: TrainConfig::default(),
            gamma,
            delta,
            preset: Some(preset),
            attack_ratio,
            attribution: AttributionConfig::new(Method::IntegratedGradients).with_ig_steps(8),
            attack: AttackConfig::default(),
            detach_original: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.attack.validate()?;
        self.attribution.validate()?;
        check_unit("gamma", self.gamma)?;
        check_unit("delta", self.delta)?;
        check_ratio(self.attack_ratio)
    }
}

/// A training-time adversary and the objective it reached.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialSample {
    pub sample: TextSample,
    pub substitutions: Vec<Substitution>,
    pub initial_objective: f64,
    pub objective: f64,
    pub ranking: Ranking,
}

fn search_space<'a>(
    config: &AttackConfig,
    extractor: &'a dyn CandidateExtractor,
    vocabulary: &'a Vocabulary,
    stop_words: &'a std::collections::BTreeSet<String>,
) -> SearchSpace<'a> {
    SearchSpace {
        extractor,
        k: config.k,
        rho_max: config.rho_max,
        stop_words,
        vocabulary,
        strict_vocab: config.strict_vocab,
    }
}

/// Greedy substitution maximizing the classification loss against the
/// sample's own labels, ranked by the loss gradient, without prediction
/// constraint. A candidate is kept only if it raises the loss above the best
/// value so far, starting from the original loss.
pub fn training_attack(
    sample: &TextSample,
    model: &ReferenceClassifier,
    vocabulary: &Vocabulary,
    extractor: &dyn CandidateExtractor,
    config: &AttackConfig,
) -> Result<AdversarialSample> {
    config.validate()?;
    let labels = &sample.labels;
    let grad = loss_gradient(model, &model.embed(sample)?, labels)?;
    let (order, importance) = rank_rows(&grad);
    let ranking = Ranking {
        order,
        importance,
        source: RankingSource::LossGradient,
    };
    let initial = classification_loss_value(model, sample, labels)?;
    let stop_words = config.stop_word_set();
    let space = search_space(config, extractor, vocabulary, &stop_words);
    let out = greedy_search(sample, &ranking.order, &space, initial, |trial| {
        classification_loss_value(model, trial, labels).map(Some)
    })?;
    Ok(AdversarialSample {
        sample: out.adversarial,
        substitutions: out.substitutions,
        initial_objective: initial,
        objective: out.best,
        ranking,
    })
}

/// Inner objective `(1 - gamma) * l_c(t) + gamma * d[A(t), A(s)]`; the
/// unused term is skipped at the endpoints.
pub fn far_objective(
    model: &ReferenceClassifier,
    attribution: &AttributionConfig,
    labels: &LabelSet,
    original_map: Option<&crate::attribution::AttributionMap>,
    gamma: f64,
    trial: &TextSample,
) -> Result<f64> {
    let loss = if gamma < 1.0 {
        classification_loss_value(model, trial, labels)?
    } else {
        0.0
    };
    let dist = match original_map {
        Some(orig) if gamma > 0.0 => {
            let map = crate::attribution::attribute(model, trial, labels, attribution)?;
            attribution_distance(&map, orig)?
        }
        _ => 0.0,
    };
    Ok(if gamma == 0.0 {
        loss
    } else if gamma == 1.0 {
        dist
    } else {
        (1.0 - gamma) * loss + gamma * dist
    })
}

/// Ranking for the inner maximization: loss gradient at `gamma = 0`, the
/// perturbed attribution-distance gradient at `gamma = 1`, their mix in
/// between.
fn far_ranking(
    model: &ReferenceClassifier,
    attribution: &AttributionConfig,
    sample: &TextSample,
    labels: &LabelSet,
    gamma: f64,
    config: &AttackConfig,
) -> Result<Ranking> {
    let x = model.embed(sample)?;
    let loss_grad = if gamma < 1.0 { Some(loss_gradient(model, &x, labels)?) } else { None };
    let dist_grad = if gamma > 0.0 {
        let eps = ranking_epsilon(&x, &sample.id, config);
        Some(attribution_distance_gradient(model, attribution, &x, &eps, &labels.to_vec())?)
    } else {
        None
    };
    let combined = match (&loss_grad, &dist_grad) {
        (Some(l), None) => l.clone(),
        (None, Some(d)) => d.clone(),
        (Some(l), Some(d)) => {
            let data = l.data().iter().zip(d.data()).map(|(a, b)| (1.0 - gamma) * a + gamma * b).collect();
            Tensor::new(l.rows(), l.cols(), data)
        }
        (None, None) => unreachable!("gamma is in [0, 1]"),
    };
    let usable = check_finite_rows(&combined).is_ok() && combined.data().iter().any(|&v| v != 0.0);
    let (grad, source) = match (usable, gamma) {
        (true, g) if g == 0.0 => (combined, RankingSource::LossGradient),
        (true, _) => (combined, RankingSource::AttributionDistance),
        (false, _) => (
            loss_grad.map_or_else(|| loss_gradient(model, &x, labels), Ok)?,
            RankingSource::LossGradient,
        ),
    };
    let (order, importance) = rank_rows(&grad);
    Ok(Ranking {
        order,
        importance,
        source,
    })
}

/// Greedy inner maximization of the FAR objective against the sample's own
/// labels, without prediction constraint.
pub fn far_inner_max(
    sample: &TextSample,
    model: &ReferenceClassifier,
    vocabulary: &Vocabulary,
    attribution: &AttributionConfig,
    extractor: &dyn CandidateExtractor,
    gamma: f64,
    config: &AttackConfig,
) -> Result<AdversarialSample> {
    config.validate()?;
    attribution.validate()?;
    check_unit("gamma", gamma)?;
    let labels = &sample.labels;
    let original_map = if gamma > 0.0 {
        Some(crate::attribution::attribute(model, sample, labels, attribution)?)
    } else {
        None
    };
    let ranking = far_ranking(model, attribution, sample, labels, gamma, config)?;
    let initial = far_objective(model, attribution, labels, original_map.as_ref(), gamma, sample)?;
    let stop_words = config.stop_word_set();
    let space = search_space(config, extractor, vocabulary, &stop_words);
    let out = greedy_search(sample, &ranking.order, &space, initial, |trial| {
        far_objective(model, attribution, labels, original_map.as_ref(), gamma, trial).map(Some)
    })?;
    Ok(AdversarialSample {
        sample: out.adversarial,
        substitutions: out.substitutions,
        initial_objective: initial,
        objective: out.best,
        ranking,
    })
}

/// Replaces the first `attacked_count` samples of `batch` by `attack`'s
/// output, in parallel.
fn mix_batch<F>(batch: &[&TextSample], ratio: f64, attack: F) -> Result<(Vec<TextSample>, usize)>
where
    F: Fn(&TextSample) -> Result<TextSample> + Sync,
{
    let a = attacked_count(ratio, batch.len());
    let adversaries: Vec<TextSample> = batch[..a].par_iter().map(|s| attack(s)).collect::<Result<_>>()?;
    let mut mixed = adversaries;
    mixed.extend(batch[a..].iter().map(|s| (*s).clone()));
    Ok((mixed, a))
}

/// Adversarial training: each batch mixes training-attack adversaries into
/// the clean samples and minimizes the classification loss on the mix.
pub fn adversarial_train(
    data: &Dataset,
    validation: &[TextSample],
    config: &AdvTrainConfig,
    extractor: &dyn CandidateExtractor,
) -> Result<TrainedModel> {
    config.validate()?;
    run_descent(data, validation, &config.train, Regime::Adversarial, |model, batch, _, _| {
        let (mixed, attacked) = mix_batch(batch, config.attack_ratio, |s| {
            training_attack(s, model, &data.vocabulary, extractor, &config.attack).map(|a| a.sample)
        })?;
        let refs: Vec<&TextSample> = mixed.iter().collect();
        let mut outcome = batch_classification_step(model, &refs)?;
        outcome.attacked = attacked;
        Ok(outcome)
    })
}

/// Outer FAR loss of one pair `(s_adv, s)` and its parameter gradients:
/// `(classification loss, attribution distance, gradients of the mix)`.
pub fn far_outer_loss(
    model: &ReferenceClassifier,
    adversarial: &TextSample,
    original: &TextSample,
    delta: f64,
    attribution: &AttributionConfig,
    detach_original: bool,
) -> Result<(f64, f64, Gradients)> {
    let labels = &original.labels;
    if delta == 0.0 {
        let (loss, grads) = loss_and_gradients(model, adversarial, labels)?;
        return Ok((loss, 0.0, grads));
    }
    let mut pg = ParamGraph::new(model);
    let x_adv = pg.embed(adversarial)?;
    let fwd = model.forward_on_graph(&mut pg.graph, &pg.params, x_adv);
    let loss = classification_loss(&mut pg.graph, fwd.logits, labels, model.task_mode());
    let loss_value = pg.graph.item(loss);

    // identical inputs: the distance is identically zero in the parameters
    let distance = if adversarial.ids == original.ids {
        None
    } else {
        let x = pg.embed(original)?;
        let label_vec = labels.to_vec();
        let g = &mut pg.graph;
        let a_adv = attribution_on_graph(g, model, &pg.params, x_adv, &label_vec, attribution)?;
        let a_orig = attribution_on_graph(g, model, &pg.params, x, &label_vec, attribution)?;
        let a_orig = if detach_original { g.detach(a_orig) } else { a_orig };
        let w_adv = g.row_sums(a_adv);
        let w_orig = g.row_sums(a_orig);
        match cosine_distance_on_graph(g, w_adv, w_orig) {
            Some(d) => Some(d),
            None => {
                // zero map: the distance is a constant of the conventions
                let v = crate::metrics::cosine_distance(g.value(w_adv).data(), g.value(w_orig).data())?;
                Some(g.scalar(v))
            }
        }
    };
    let (dist_value, objective) = match distance {
        Some(d) => {
            let dv = pg.graph.item(d);
            let l = pg.graph.scale(loss, 1.0 - delta);
            let r = pg.graph.scale(d, delta);
            (dv, pg.graph.add(l, r))
        }
        None => (0.0, pg.graph.scale(loss, 1.0 - delta)),
    };
    Ok((loss_value, dist_value, pg.gradients(objective)))
}

/// FAR training. Per batch, the first `floor(ratio * |batch|)` samples are
/// replaced by inner-maximization adversaries; the step minimizes the batch
/// mean of `(1 - delta) * l_c(s_adv) + delta * d[A(s_adv), A(s)]`, with
/// `s_adv = s` for the other samples.
pub fn far_train(
    data: &Dataset,
    validation: &[TextSample],
    config: &FarConfig,
    extractor: &dyn CandidateExtractor,
) -> Result<TrainedModel> {
    config.validate()?;
    let regime = Regime::Far {
        preset: config.preset.map(|p| p.name().to_string()),
    };
    run_descent(data, validation, &config.train, regime, |model, batch, epoch, step| {
        let (mixed, attacked) = mix_batch(batch, config.attack_ratio, |s| {
            far_inner_max(s, model, &data.vocabulary, &config.attribution, extractor, config.gamma, &config.attack)
                .map(|a| a.sample)
        })?;
        let per_sample: Vec<(f64, f64, Gradients)> = mixed
            .par_iter()
            .zip(batch.par_iter())
            .map(|(adv, orig)| {
                far_outer_loss(model, adv, orig, config.delta, &config.attribution, config.detach_original)
            })
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        for ((_, _, g), s) in per_sample.iter().zip(batch) {
            if !g.is_finite() {
                log::error!("epoch {epoch} step {step}: non-finite FAR gradient for sample {}", s.id);
            }
        }
        let cls = per_sample.iter().map(|p| p.0).sum::<f64>() * scale;
        let attr = per_sample.iter().map(|p| p.1).sum::<f64>() * scale;
        let grads: Vec<Gradients> = per_sample.into_iter().map(|p| p.2).collect();
        Ok(BatchOutcome {
            gradients: Gradients::sum_scaled(model, &grads, scale),
            classification_loss: cls,
            attribution_loss: attr,
            total: (1.0 - config.delta) * cls + config.delta * attr,
            attacked,
        })
    })
}

/// Accuracy on the training attack's adversaries of `samples`.
pub fn adversarial_accuracy(
    model: &ReferenceClassifier,
    vocabulary: &Vocabulary,
    samples: &[TextSample],
    extractor: &dyn CandidateExtractor,
    config: &AttackConfig,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits: Vec<bool> = samples
        .par_iter()
        .map(|s| {
            let adv = training_attack(s, model, vocabulary, extractor, config)?;
            Ok(model.predict(&adv.sample)? == s.labels)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Method;
    use crate::candidates::SynonymTable;
    use crate::dare::{dare_attack, ConstraintMode};
    use crate::model::{train_vanilla, Pooling, TaskMode};
    use std::path::Path;

    const TEXTS: [(&str, usize); 8] = [
        ("good fine movie", 0),
        ("great good film", 0),
        ("fine great plot", 0),
        ("good movie plot", 0),
        ("bad poor movie", 1),
        ("awful bad film", 1),
        ("poor awful plot", 1),
        ("bad film plot", 1),
    ];

    fn dataset() -> Dataset {
        let vocab = Vocabulary::build(TEXTS.iter().flat_map(|(t, _)| t.split(' ')), 1);
        let samples = TEXTS
            .iter()
            .enumerate()
            .map(|(i, (t, l))| TextSample::from_text(&format!("s{i}"), t, LabelSet::single(*l), &vocab, 8).unwrap())
            .collect();
        Dataset {
            samples,
            vocabulary: vocab,
            label_names: vec!["pos".into(), "neg".into()],
            task_mode: TaskMode::SingleLabel,
        }
    }

    fn table() -> SynonymTable {
        SynonymTable::parse(
            "good\tfine,great\nbad\tpoor,awful\nmovie\tfilm\nfilm\tmovie\nfine\tgood\npoor\tbad\ngreat\tgood\nawful\tbad\n",
            Path::new("t"),
        )
        .unwrap()
    }

    fn train(epochs: usize) -> TrainConfig {
        TrainConfig {
            pooling: Pooling::Attention,
            epochs,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    fn attack() -> AttackConfig {
        AttackConfig {
            rho_max: 0.67,
            k: 2,
            constraint_mode: ConstraintMode::None,
            ..AttackConfig::default()
        }
    }

    fn max_param_diff(a: &ReferenceClassifier, b: &ReferenceClassifier) -> f64 {
        a.parameters()
            .iter()
            .zip(b.parameters())
            .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn attacked_count_floors() {
        assert_eq!(attacked_count(0.3, 10), 3);
        assert_eq!(attacked_count(0.6, 16), 9);
        assert_eq!(attacked_count(0.0, 16), 0);
        assert_eq!(attacked_count(1.0, 5), 5);
    }

    #[test]
    fn training_attack_picks_the_loss_maximizing_candidate() {
        let data = dataset();
        let model = train_vanilla(&data, &[], &train(3)).unwrap().classifier;
        let s = TextSample::from_text("x", "good", LabelSet::single(0), &data.vocabulary, 8).unwrap();
        let config = AttackConfig { rho_max: 1.0, ..attack() };
        let out = training_attack(&s, &model, &data.vocabulary, &table(), &config).unwrap();
        let loss = |w: &str| {
            let t = TextSample::from_text("x", w, LabelSet::single(0), &data.vocabulary, 8).unwrap();
            classification_loss_value(&model, &t, &s.labels).unwrap()
        };
        let (best_word, best) = ["fine", "great"]
            .iter()
            .map(|w| (*w, loss(w)))
            .fold(("good", loss("good")), |acc, c| if c.1 > acc.1 { c } else { acc });
        assert_eq!(out.sample.tokens, vec![best_word.to_string()]);
        assert_eq!(out.objective, best);
    }

    #[test]
    fn zero_ratio_reproduces_vanilla() {
        let data = dataset();
        let vanilla = train_vanilla(&data, &[], &train(4)).unwrap();
        let config = AdvTrainConfig {
            train: train(4),
            attack_ratio: 0.0,
            attack: attack(),
        };
        let adv = adversarial_train(&data, &[], &config, &table()).unwrap();
        assert_eq!(vanilla.classifier.parameters(), adv.classifier.parameters());
        assert!(adv.log.iter().all(|r| r.attacked == 0));
    }

    #[test]
    fn far_endpoints_reduce_to_adversarial_training() {
        let data = dataset();
        let adv = adversarial_train(
            &data,
            &[],
            &AdvTrainConfig {
                train: train(3),
                attack_ratio: 0.5,
                attack: attack(),
            },
            &table(),
        )
        .unwrap();
        let far = far_train(
            &data,
            &[],
            &FarConfig {
                train: train(3),
                gamma: 0.0,
                delta: 0.0,
                preset: None,
                attack_ratio: 0.5,
                attack: attack(),
                ..FarConfig::default()
            },
            &table(),
        )
        .unwrap();
        assert!(max_param_diff(&adv.classifier, &far.classifier) < 1e-9);
        assert!(far.log.iter().all(|r| r.attacked == 2));
    }

    #[test]
    fn inner_max_endpoints() {
        let data = dataset();
        let model = train_vanilla(&data, &[], &train(3)).unwrap().classifier;
        let ig = AttributionConfig::new(Method::IntegratedGradients).with_ig_steps(8);
        for s in &data.samples {
            let plain = training_attack(s, &model, &data.vocabulary, &table(), &attack()).unwrap();
            let far0 = far_inner_max(s, &model, &data.vocabulary, &ig, &table(), 0.0, &attack()).unwrap();
            assert_eq!(plain.sample, far0.sample);
            assert_eq!(plain.objective, far0.objective);

            let predicted = s.with_labels(model.predict(s).unwrap());
            let dare = dare_attack(&predicted, &model, &data.vocabulary, &ig, &table(), &attack()).unwrap();
            let far1 = far_inner_max(&predicted, &model, &data.vocabulary, &ig, &table(), 1.0, &attack()).unwrap();
            assert_eq!(dare.adversarial.tokens, far1.sample.tokens);
            assert!((dare.d_max - far1.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn outer_loss_gradient_matches_finite_differences() {
        let data = dataset();
        let model = train_vanilla(&data, &[], &train(2)).unwrap().classifier;
        let ig = AttributionConfig::new(Method::IntegratedGradients).with_ig_steps(4);
        let orig = &data.samples[0];
        let adv = orig.with_substitution(0, "great", &data.vocabulary, false).unwrap();
        let delta = 0.6;
        let (l, d, grads) = far_outer_loss(&model, &adv, orig, delta, &ig, false).unwrap();
        let value = |m: &ReferenceClassifier| {
            let lc = classification_loss_value(m, &adv, &orig.labels).unwrap();
            let a = crate::attribution::attribute(m, &adv, &orig.labels, &ig).unwrap();
            let b = crate::attribution::attribute(m, orig, &orig.labels, &ig).unwrap();
            (1.0 - delta) * lc + delta * attribution_distance(&a, &b).unwrap()
        };
        assert!((value(&model) - ((1.0 - delta) * l + delta * d)).abs() < 1e-12);
        let h = 1e-5;
        // spot-check entries of every parameter array
        for (pi, g) in grads.0.iter().enumerate() {
            for idx in [0, g.data().len() / 2, g.data().len() - 1] {
                let mut plus = model.clone();
                plus.parameters_mut()[pi].data_mut()[idx] += h;
                let mut minus = model.clone();
                minus.parameters_mut()[pi].data_mut()[idx] -= h;
                let fd = (value(&plus) - value(&minus)) / (2.0 * h);
                assert!((fd - g.data()[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "param {pi}[{idx}]: {fd} vs {}", g.data()[idx]);
            }
        }
    }

    #[test]
    fn far_log_decomposes_and_detach_changes_gradients() {
        let data = dataset();
        let config = FarConfig {
            train: train(2),
            attack: attack(),
            ..FarConfig::default()
        };
        let far = far_train(&data, &[], &config, &table()).unwrap();
        for r in &far.log {
            let recomputed = (1.0 - config.delta) * r.classification_loss + config.delta * r.attribution_loss;
            assert!((recomputed - r.total).abs() < 1e-9);
        }
        assert!(far.log.iter().any(|r| r.attribution_loss > 0.0));

        let model = far.classifier;
        let orig = &data.samples[4];
        let adv = orig.with_substitution(0, "poor", &data.vocabulary, false).unwrap();
        let (_, _, full) = far_outer_loss(&model, &adv, orig, 0.85, &config.attribution, false).unwrap();
        let (_, _, detached) = far_outer_loss(&model, &adv, orig, 0.85, &config.attribution, true).unwrap();
        assert_ne!(full, detached);
    }

    #[test]
    fn presets() {
        assert_eq!(FarPreset::AdvAat.values(), (0.85, 0.85, 0.6));
        assert_eq!(FarPreset::Aat.values(), (0.0, 0.7, 0.6));
        assert!(FarConfig { gamma: 1.5, ..FarConfig::default() }.validate().is_err());
    }
}
