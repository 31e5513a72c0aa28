//! The greedy attribution attack and an exhaustive oracle for small
//! instances.
//!
//! The attack ranks words by the gradient of the attribution distance
//! `d[A(x + eps), A(x)]` with respect to the embeddings, then walks the
//! ranking, skipping stop words, and at each word tries up to `k`
//! candidates. A candidate is kept when the prediction constraint holds and
//! it raises the distance to the original map above the best so far.
//! Substitutions accumulate; the walk ends when one more substitution would
//! exceed the word budget `rho_max`.
//!
//! Budget: with `n` substituted words, the attack stops as soon as
//! `(n + 1) / |s| > rho_max` (checked before the first word as well), so
//! `n / |s| <= rho_max` holds for every result.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{attribute, attribution_on_graph, AttributionConfig, AttributionMap, Method};
use crate::autodiff::{Graph, Tensor};
use crate::candidates::{extract_candidates, CandidateExtractor};
use crate::error::{Error, Result};
use crate::metrics::{attribution_distance, cosine_distance_on_graph, AttributionDistance};
use crate::model::{
    check_finite_rows, classification_loss, predict_from_logits, LabelSet, ReferenceClassifier, TaskMode, TextSample,
    Vocabulary,
};
use crate::seeds::derive_seed;
use crate::stopwords::default_stopwords;

/// Largest sample length and candidate count accepted by
/// [`brute_force_attack`].
pub const BRUTE_FORCE_MAX_WORDS: usize = 10;
pub const BRUTE_FORCE_MAX_K: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// The top class must not change.
    ArgmaxEquality,
    /// The thresholded label set must not change.
    LabelSetEquality,
    None,
}

impl ConstraintMode {
    pub fn for_task(mode: TaskMode) -> Self {
        match mode {
            TaskMode::SingleLabel => ConstraintMode::ArgmaxEquality,
            TaskMode::Multilabel => ConstraintMode::LabelSetEquality,
        }
    }
}

/// Whether `candidate_logits` keep the prediction `original`.
pub fn prediction_constraint(original: &LabelSet, candidate_logits: &[f64], mode: ConstraintMode) -> bool {
    match mode {
        ConstraintMode::ArgmaxEquality => {
            original.to_vec() == predict_from_logits(candidate_logits, TaskMode::SingleLabel).to_vec()
        }
        ConstraintMode::LabelSetEquality => {
            original.to_vec() == predict_from_logits(candidate_logits, TaskMode::Multilabel).to_vec()
        }
        ConstraintMode::None => true,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Largest fraction of substituted words.
    pub rho_max: f64,
    /// Candidates tried per word.
    pub k: usize,
    pub distance: AttributionDistance,
    pub constraint_mode: ConstraintMode,
    /// Replaces the shipped stop-word list when set.
    pub stop_words: Option<Vec<String>>,
    pub epsilon_seed: u64,
    /// Standard deviation of the ranking perturbation, relative to the
    /// sample's mean embedding row norm.
    pub epsilon_sigma: f64,
    /// Reject candidates outside the classifier vocabulary instead of
    /// mapping them to the unknown-word embedding.
    pub strict_vocab: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            rho_max: 0.05,
            k: 5,
            distance: AttributionDistance::Cosine,
            constraint_mode: ConstraintMode::ArgmaxEquality,
            stop_words: None,
            epsilon_seed: 0,
            epsilon_sigma: 0.01,
            strict_vocab: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_max > 0.0 && self.rho_max <= 1.0) {
            return Err(Error::InvalidConfig(format!("rho_max {} outside (0, 1]", self.rho_max)));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.epsilon_sigma >= 0.0 && self.epsilon_sigma.is_finite()) {
            return Err(Error::InvalidConfig("epsilon_sigma must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn stop_word_set(&self) -> BTreeSet<String> {
        match &self.stop_words {
            Some(words) => words.iter().cloned().collect(),
            None => default_stopwords(),
        }
    }

    /// Short hex digest identifying the configuration in transcripts.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("attack config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// `n / len <= rho_max`.
pub fn within_budget(n: usize, len: usize, rho_max: f64) -> bool {
    n as f64 / len as f64 <= rho_max
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingSource {
    AttributionDistance,
    /// Fallback when the distance gradient is not finite or vanishes.
    LossGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Positions by non-increasing importance, ties to the lower position.
    pub order: Vec<usize>,
    /// L2 norm of each position's gradient row.
    pub importance: Vec<f64>,
    pub source: RankingSource,
}

/// Positions sorted by the L2 norms of `gradient`'s rows, largest first,
/// ties to the lower position.
pub fn rank_rows(gradient: &Tensor) -> (Vec<usize>, Vec<f64>) {
    let importance: Vec<f64> = (0..gradient.rows())
        .map(|r| gradient.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    (order, importance)
}

/// The fixed ranking perturbation for `sample`.
pub fn ranking_epsilon(embeddings: &Tensor, sample_id: &str, config: &AttackConfig) -> Tensor {
    let sigma = config.epsilon_sigma * ReferenceClassifier::mean_row_norm(embeddings);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.epsilon_seed, sample_id));
    let mut eps = Tensor::zeros(embeddings.rows(), embeddings.cols());
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        for v in eps.data_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    eps
}

/// Gradient of `d[A(x + eps), A(x)]` with respect to the embeddings `x`.
/// Zero when either map is the zero vector.
pub fn attribution_distance_gradient(
    model: &ReferenceClassifier,
    attribution: &AttributionConfig,
    embeddings: &Tensor,
    epsilon: &Tensor,
    labels: &[usize],
) -> Result<Tensor> {
    model.check_embeddings(embeddings)?;
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let x = g.leaf(embeddings.clone());
    let e = g.constant(epsilon.clone());
    let xe = g.add(x, e);
    let perturbed = attribution_on_graph(&mut g, model, &p, xe, labels, attribution)?;
    let original = attribution_on_graph(&mut g, model, &p, x, labels, attribution)?;
    let a1 = g.row_sums(perturbed);
    let a0 = g.row_sums(original);
    match cosine_distance_on_graph(&mut g, a1, a0) {
        Some(d) => {
            let grad = g.grad(d, &[x])[0];
            Ok(g.value(grad).clone())
        }
        None => Ok(Tensor::zeros(embeddings.rows(), embeddings.cols())),
    }
}

/// Gradient of the classification loss against `labels` with respect to the
/// embeddings.
pub fn loss_gradient(model: &ReferenceClassifier, embeddings: &Tensor, labels: &LabelSet) -> Result<Tensor> {
    model.grad_wrt_embeddings(embeddings, |g, _, _, fwd| {
        Ok(classification_loss(g, fwd.logits, labels, model.task_mode()))
    })
}

pub fn loss_gradient_ranking(model: &ReferenceClassifier, sample: &TextSample, labels: &LabelSet) -> Result<Ranking> {
    let grad = loss_gradient(model, &model.embed(sample)?, labels)?;
    let (order, importance) = rank_rows(&grad);
    Ok(Ranking {
        order,
        importance,
        source: RankingSource::LossGradient,
    })
}

/// Word ranking by the gradient of the attribution distance under the fixed
/// perturbation. Falls back to the loss-gradient ranking when that gradient
/// is not finite or is zero everywhere (for example Saliency on a mean-pool
/// ReLU net, whose map is piecewise constant in the input).
pub fn importance_ranking(
    model: &ReferenceClassifier,
    attribution: &AttributionConfig,
    sample: &TextSample,
    labels: &LabelSet,
    config: &AttackConfig,
) -> Result<Ranking> {
    let x = model.embed(sample)?;
    let eps = ranking_epsilon(&x, &sample.id, config);
    let grad = attribution_distance_gradient(model, attribution, &x, &eps, &labels.to_vec())?;
    if check_finite_rows(&grad).is_ok() && grad.data().iter().any(|&v| v != 0.0) {
        let (order, importance) = rank_rows(&grad);
        return Ok(Ranking {
            order,
            importance,
            source: RankingSource::AttributionDistance,
        });
    }
    log::debug!("sample {}: attribution-distance gradient unusable, ranking by loss gradient", sample.id);
    loss_gradient_ranking(model, sample, labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub position: usize,
    pub old_word: String,
    pub new_word: String,
    /// Objective value once this substitution was made.
    pub distance_after: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialOutcome {
    /// Best so far; kept unless a later candidate at the same word beats it.
    Improved,
    NotBetter,
    ConstraintViolated,
    OutOfVocabulary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub position: usize,
    pub candidate: String,
    pub outcome: TrialOutcome,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPosition {
    pub position: usize,
    pub message: String,
}

/// Settings shared by every greedy substitution search.
pub(crate) struct SearchSpace<'a> {
    pub extractor: &'a dyn CandidateExtractor,
    pub k: usize,
    pub rho_max: f64,
    pub stop_words: &'a BTreeSet<String>,
    pub vocabulary: &'a Vocabulary,
    pub strict_vocab: bool,
}

pub(crate) struct GreedyOutcome {
    pub adversarial: TextSample,
    pub substitutions: Vec<Substitution>,
    pub best: f64,
    pub trace: Vec<TraceStep>,
    pub skipped: Vec<SkippedPosition>,
}

/// The greedy loop. `score` returns `None` for an infeasible trial sample.
/// Candidates come from the original sample's context; trials substitute
/// into the adversarial sample built so far.
pub(crate) fn greedy_search<F>(
    original: &TextSample,
    order: &[usize],
    space: &SearchSpace<'_>,
    initial_best: f64,
    mut score: F,
) -> Result<GreedyOutcome>
where
    F: FnMut(&TextSample) -> Result<Option<f64>>,
{
    let len = original.len();
    let mut out = GreedyOutcome {
        adversarial: original.clone(),
        substitutions: Vec::new(),
        best: initial_best,
        trace: Vec::new(),
        skipped: Vec::new(),
    };
    if !within_budget(1, len, space.rho_max) {
        return Ok(out);
    }
    for &i in order {
        if space.stop_words.contains(&original.tokens[i]) {
            continue;
        }
        let candidates = match extract_candidates(space.extractor, i, original, space.k) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("sample {} position {i}: extractor failed: {e}", original.id);
                out.skipped.push(SkippedPosition {
                    position: i,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let mut kept: Option<TextSample> = None;
        for c in &candidates.candidates {
            let Some(trial) = out.adversarial.with_substitution(i, &c.word, space.vocabulary, space.strict_vocab) else {
                out.trace.push(TraceStep {
                    position: i,
                    candidate: c.word.clone(),
                    outcome: TrialOutcome::OutOfVocabulary,
                    value: None,
                });
                continue;
            };
            let (outcome, value) = match score(&trial)? {
                None => (TrialOutcome::ConstraintViolated, None),
                Some(v) if v > out.best => {
                    out.best = v;
                    kept = Some(trial);
                    (TrialOutcome::Improved, Some(v))
                }
                Some(v) => (TrialOutcome::NotBetter, Some(v)),
            };
            out.trace.push(TraceStep {
                position: i,
                candidate: c.word.clone(),
                outcome,
                value,
            });
        }
        if let Some(adv) = kept {
            out.substitutions.push(Substitution {
                position: i,
                old_word: original.tokens[i].clone(),
                new_word: adv.tokens[i].clone(),
                distance_after: out.best,
            });
            out.adversarial = adv;
        }
        if !within_budget(out.substitutions.len() + 1, len, space.rho_max) {
            break;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub original: TextSample,
    pub adversarial: TextSample,
    /// The model's prediction on the original sample; the constraint and
    /// both maps refer to it.
    pub labels: LabelSet,
    pub substitutions: Vec<Substitution>,
    /// Attribution distance between the adversarial and original maps.
    pub d_max: f64,
    /// Number of substituted words.
    pub n: usize,
    /// Constraint re-checked on the final adversarial sample.
    pub constraint_held: bool,
    pub ranking: Ranking,
    pub trace: Vec<TraceStep>,
    pub skipped: Vec<SkippedPosition>,
    pub strict_vocab: bool,
    pub wall_time: Duration,
}

/// One line of the attack transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackTranscript {
    /// Set by sweeps; empty for a standalone attack.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub regime: String,
    #[serde(default)]
    pub fold: usize,
    pub sample_id: String,
    pub config_hash: String,
    pub method: Method,
    pub constraint_mode: ConstraintMode,
    pub strict_vocab: bool,
    pub labels: Vec<usize>,
    pub substitutions: Vec<Substitution>,
    pub d_max: f64,
    pub n: usize,
    pub constraint_held: bool,
    pub ranking_source: RankingSource,
    pub trials: usize,
    pub constraint_rejections: usize,
    pub skipped_positions: Vec<SkippedPosition>,
    /// Omitted from report bundles, which must not depend on timing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl AttackResult {
    pub fn transcript(&self, config: &AttackConfig, method: Method) -> AttackTranscript {
        AttackTranscript {
            regime: String::new(),
            fold: 0,
            sample_id: self.original.id.clone(),
            config_hash: config.hash(),
            method,
            constraint_mode: config.constraint_mode,
            strict_vocab: self.strict_vocab,
            labels: self.labels.to_vec(),
            substitutions: self.substitutions.clone(),
            d_max: self.d_max,
            n: self.n,
            constraint_held: self.constraint_held,
            ranking_source: self.ranking.source,
            trials: self.trace.len(),
            constraint_rejections: self
                .trace
                .iter()
                .filter(|t| t.outcome == TrialOutcome::ConstraintViolated)
                .count(),
            skipped_positions: self.skipped.clone(),
            wall_time_ms: Some(self.wall_time.as_secs_f64() * 1e3),
        }
    }
}

fn check_constraint_mode(model: &ReferenceClassifier, mode: ConstraintMode) -> Result<()> {
    match (mode, model.task_mode()) {
        (ConstraintMode::ArgmaxEquality, TaskMode::Multilabel) => Err(Error::InvalidConfig(
            "argmax-equality constraint on a multilabel model; use label-set-equality".into(),
        )),
        (ConstraintMode::LabelSetEquality, TaskMode::SingleLabel) => Err(Error::InvalidConfig(
            "label-set-equality constraint on a single-label model; use argmax-equality".into(),
        )),
        _ => Ok(()),
    }
}

/// Shared setup of both attacks: prediction and original map.
fn attack_setup(
    sample: &TextSample,
    model: &ReferenceClassifier,
    attribution: &AttributionConfig,
    config: &AttackConfig,
) -> Result<(LabelSet, AttributionMap)> {
    config.validate()?;
    attribution.validate()?;
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    check_constraint_mode(model, config.constraint_mode)?;
    let labels = model.predict(sample)?;
    if labels.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let map = attribute(model, sample, &labels, attribution)?;
    Ok((labels, map))
}

/// Distance of `candidate`'s map to `original_map`, or `None` when the
/// prediction constraint fails.
fn constrained_distance(
    model: &ReferenceClassifier,
    attribution: &AttributionConfig,
    labels: &LabelSet,
    original_map: &AttributionMap,
    mode: ConstraintMode,
    candidate: &TextSample,
) -> Result<Option<f64>> {
    if !prediction_constraint(labels, &model.logits(candidate)?, mode) {
        return Ok(None);
    }
    let map = attribute(model, candidate, labels, attribution)?;
    Ok(Some(attribution_distance(&map, original_map)?))
}

/// The greedy attack. The labels are the model's prediction on `sample`.
pub fn dare_attack(
    sample: &TextSample,
    model: &ReferenceClassifier,
    vocabulary: &Vocabulary,
    attribution: &AttributionConfig,
    extractor: &dyn CandidateExtractor,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let start = Instant::now();
    let (labels, original_map) = attack_setup(sample, model, attribution, config)?;
    let ranking = importance_ranking(model, attribution, sample, &labels, config)?;
    let stop_words = config.stop_word_set();
    let space = SearchSpace {
        extractor,
        k: config.k,
        rho_max: config.rho_max,
        stop_words: &stop_words,
        vocabulary,
        strict_vocab: config.strict_vocab,
    };
    let outcome = greedy_search(sample, &ranking.order, &space, 0.0, |trial| {
        constrained_distance(model, attribution, &labels, &original_map, config.constraint_mode, trial)
    })?;
    let constraint_held = prediction_constraint(&labels, &model.logits(&outcome.adversarial)?, config.constraint_mode);
    Ok(AttackResult {
        original: sample.clone(),
        n: outcome.substitutions.len(),
        adversarial: outcome.adversarial,
        labels,
        substitutions: outcome.substitutions,
        d_max: outcome.best,
        constraint_held,
        ranking,
        trace: outcome.trace,
        skipped: outcome.skipped,
        strict_vocab: config.strict_vocab,
        wall_time: start.elapsed(),
    })
}

/// Exhaustive search over every combination of substitutions within the
/// budget, using the same candidate sets, stop words and constraint as
/// [`dare_attack`]. Ties go to the lexicographically smallest position set,
/// then to the better-ranked candidates.
pub fn brute_force_attack(
    sample: &TextSample,
    model: &ReferenceClassifier,
    vocabulary: &Vocabulary,
    attribution: &AttributionConfig,
    extractor: &dyn CandidateExtractor,
    config: &AttackConfig,
) -> Result<AttackResult> {
    if sample.len() > BRUTE_FORCE_MAX_WORDS || config.k > BRUTE_FORCE_MAX_K {
        return Err(Error::LatticeTooLarge(format!(
            "{} words with k = {} (limits: {BRUTE_FORCE_MAX_WORDS} words, k <= {BRUTE_FORCE_MAX_K})",
            sample.len(),
            config.k
        )));
    }
    let start = Instant::now();
    let (labels, original_map) = attack_setup(sample, model, attribution, config)?;
    let stop_words = config.stop_word_set();
    let mut options: Vec<(usize, Vec<String>)> = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..sample.len() {
        if stop_words.contains(&sample.tokens[i]) {
            continue;
        }
        match extract_candidates(extractor, i, sample, config.k) {
            Ok(c) => {
                let words: Vec<String> = c
                    .words()
                    .filter(|w| !config.strict_vocab || vocabulary.contains(w))
                    .map(str::to_string)
                    .collect();
                if !words.is_empty() {
                    options.push((i, words));
                }
            }
            Err(e) => skipped.push(SkippedPosition {
                position: i,
                message: e.to_string(),
            }),
        }
    }

    let max_subs = (0..=options.len())
        .take_while(|&n| within_budget(n, sample.len(), config.rho_max))
        .last()
        .unwrap_or(0);
    let mut best: (f64, Vec<(usize, usize)>) = (0.0, Vec::new());
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    let mut visit = |chosen: &[(usize, usize)]| -> Result<()> {
        if chosen.is_empty() {
            return Ok(());
        }
        let mut s = sample.clone();
        for &(opt, cand) in chosen {
            let (pos, words) = &options[opt];
            s = s
                .with_substitution(*pos, &words[cand], vocabulary, config.strict_vocab)
                .expect("strict-vocabulary candidates were filtered");
        }
        if let Some(d) = constrained_distance(model, attribution, &labels, &original_map, config.constraint_mode, &s)? {
            if d > best.0 {
                best = (d, chosen.to_vec());
            }
        }
        Ok(())
    };
    // depth-first in lexicographic order of position sets
    fn walk(
        from: usize,
        options: &[(usize, Vec<String>)],
        max_subs: usize,
        chosen: &mut Vec<(usize, usize)>,
        visit: &mut dyn FnMut(&[(usize, usize)]) -> Result<()>,
    ) -> Result<()> {
        visit(chosen)?;
        if chosen.len() == max_subs {
            return Ok(());
        }
        for opt in from..options.len() {
            for cand in 0..options[opt].1.len() {
                chosen.push((opt, cand));
                walk(opt + 1, options, max_subs, chosen, visit)?;
                chosen.pop();
            }
        }
        Ok(())
    }
    walk(0, &options, max_subs, &mut chosen, &mut visit)?;

    let (d_max, combo) = best;
    let mut adversarial = sample.clone();
    let mut substitutions = Vec::new();
    for &(opt, cand) in &combo {
        let (pos, words) = &options[opt];
        adversarial = adversarial
            .with_substitution(*pos, &words[cand], vocabulary, config.strict_vocab)
            .expect("filtered candidates");
        substitutions.push(Substitution {
            position: *pos,
            old_word: sample.tokens[*pos].clone(),
            new_word: words[cand].clone(),
            distance_after: d_max,
        });
    }
    let constraint_held = prediction_constraint(&labels, &model.logits(&adversarial)?, config.constraint_mode);
    Ok(AttackResult {
        original: sample.clone(),
        adversarial,
        labels,
        n: substitutions.len(),
        substitutions,
        d_max,
        constraint_held,
        ranking: Ranking {
            order: Vec::new(),
            importance: Vec::new(),
            source: RankingSource::AttributionDistance,
        },
        trace: Vec::new(),
        skipped,
        strict_vocab: config.strict_vocab,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Method;
    use crate::candidates::SynonymTable;
    use crate::model::{Architecture, Pooling};
    use std::path::Path;

    #[test]
    fn constraint_modes() {
        let one = LabelSet::single(0);
        assert!(prediction_constraint(&one, &[2.0, -1.0], ConstraintMode::ArgmaxEquality));
        assert!(!prediction_constraint(&one, &[-2.0, 1.0], ConstraintMode::ArgmaxEquality));
        let set = LabelSet::multi([1, 3]);
        assert!(!prediction_constraint(&set, &[-1.0, 2.0, -1.0, -1.0], ConstraintMode::LabelSetEquality));
        assert!(prediction_constraint(&set, &[-1.0, 2.0, -1.0, 0.5], ConstraintMode::LabelSetEquality));
        assert!(prediction_constraint(&set, &[9.0, -9.0, 9.0, -9.0], ConstraintMode::None));
    }

    #[test]
    fn budget_of_forty_words_at_five_percent_is_two() {
        assert!(within_budget(2, 40, 0.05));
        assert!(!within_budget(3, 40, 0.05));
    }

    #[test]
    fn ranking_sorts_rows_by_norm_with_positional_ties() {
        let g = Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, 1.0], vec![5.0, 0.0], vec![0.0, -1.0]]);
        let (order, importance) = rank_rows(&g);
        assert_eq!(order, vec![0, 2, 1, 3]);
        assert_eq!(importance, vec![5.0, 1.0, 5.0, 1.0]);
    }

    fn setup() -> (ReferenceClassifier, Vocabulary, SynonymTable) {
        let vocab = Vocabulary::build("alpha beta gamma delta eps zeta eta theta the".split(' '), 1);
        let arch = Architecture::reference(vocab.len(), 2, Pooling::Attention, TaskMode::SingleLabel);
        let model = ReferenceClassifier::init(arch, 5);
        let table = SynonymTable::parse(
            "alpha\tbeta,gamma\nbeta\tdelta,eps\ngamma\tzeta,eta\ndelta\ttheta,alpha\neps\tzeta,alpha\nthe\talpha\n",
            Path::new("t"),
        )
        .unwrap();
        (model, vocab, table)
    }

    fn sample(vocab: &Vocabulary, text: &str) -> TextSample {
        TextSample::from_text("s", text, LabelSet::single(0), vocab, 16).unwrap()
    }

    #[test]
    fn one_word_sample_ranks_itself() {
        let (model, vocab, _) = setup();
        let s = sample(&vocab, "beta");
        let r = importance_ranking(&model, &AttributionConfig::new(Method::Saliency), &s, &LabelSet::single(0), &AttackConfig::default())
            .unwrap();
        assert_eq!(r.order, vec![0]);
    }

    #[test]
    fn attack_respects_budget_stop_words_and_constraint() {
        let (model, vocab, table) = setup();
        let s = sample(&vocab, "the alpha beta gamma delta eps");
        let config = AttackConfig {
            rho_max: 0.34,
            k: 2,
            ..AttackConfig::default()
        };
        let attribution = AttributionConfig::new(Method::IntegratedGradients).with_ig_steps(8);
        let r = dare_attack(&s, &model, &vocab, &attribution, &table, &config).unwrap();
        assert!(within_budget(r.n, s.len(), config.rho_max));
        assert!(r.n <= 2);
        assert!(r.substitutions.iter().all(|sub| sub.position != 0));
        assert!(r.constraint_held);
        // accepted values strictly increase
        for w in r.substitutions.windows(2) {
            assert!(w[1].distance_after > w[0].distance_after);
        }
        let again = attribute(&model, &r.adversarial, &r.labels, &attribution).unwrap();
        let orig = attribute(&model, &s, &r.labels, &attribution).unwrap();
        assert!((attribution_distance(&again, &orig).unwrap() - r.d_max).abs() < 1e-9);
    }

    #[test]
    fn infeasible_everywhere_leaves_sample_unchanged() {
        let (model, vocab, _) = setup();
        let empty = SynonymTable::default();
        let s = sample(&vocab, "alpha beta gamma");
        let config = AttackConfig {
            rho_max: 1.0,
            ..AttackConfig::default()
        };
        let r = dare_attack(&s, &model, &vocab, &AttributionConfig::new(Method::Saliency), &empty, &config).unwrap();
        assert_eq!((r.n, r.d_max), (0, 0.0));
        assert_eq!(r.adversarial, s);
    }

    #[test]
    fn too_small_budget_allows_no_substitution() {
        let (model, vocab, table) = setup();
        let s = sample(&vocab, "alpha beta gamma");
        let config = AttackConfig {
            rho_max: 0.3,
            ..AttackConfig::default()
        };
        let r = dare_attack(&s, &model, &vocab, &AttributionConfig::new(Method::Saliency), &table, &config).unwrap();
        assert_eq!(r.n, 0);
        assert!(r.trace.is_empty());
    }

    #[test]
    fn brute_force_dominates_greedy() {
        let (model, vocab, table) = setup();
        for text in ["alpha beta gamma delta eps zeta", "beta beta alpha gamma", "delta eps alpha"] {
            let s = sample(&vocab, text);
            for constraint_mode in [ConstraintMode::ArgmaxEquality, ConstraintMode::None] {
                let config = AttackConfig {
                    rho_max: 0.5,
                    k: 2,
                    constraint_mode,
                    ..AttackConfig::default()
                };
                let attribution = AttributionConfig::new(Method::Attention);
                let greedy = dare_attack(&s, &model, &vocab, &attribution, &table, &config).unwrap();
                let oracle = brute_force_attack(&s, &model, &vocab, &attribution, &table, &config).unwrap();
                assert!(greedy.d_max <= oracle.d_max + 1e-12, "{text}: {} > {}", greedy.d_max, oracle.d_max);
                assert!(oracle.constraint_held && within_budget(oracle.n, s.len(), 0.5));
            }
        }
    }

    #[test]
    fn brute_force_guard() {
        let (model, vocab, table) = setup();
        let s = sample(&vocab, "alpha beta gamma delta eps zeta eta theta alpha beta gamma");
        let config = AttackConfig {
            k: 2,
            ..AttackConfig::default()
        };
        let err = brute_force_attack(&s, &model, &vocab, &AttributionConfig::new(Method::Saliency), &table, &config);
        assert!(matches!(err, Err(Error::LatticeTooLarge(_))));
    }

    #[test]
    fn brute_force_with_one_position_picks_the_better_candidate() {
        let (model, vocab, table) = setup();
        let s = sample(&vocab, "the alpha");
        let config = AttackConfig {
            rho_max: 0.5,
            k: 2,
            constraint_mode: ConstraintMode::None,
            ..AttackConfig::default()
        };
        let attribution = AttributionConfig::new(Method::Attention);
        let r = brute_force_attack(&s, &model, &vocab, &attribution, &table, &config).unwrap();
        let orig = attribute(&model, &s, &r.labels, &attribution).unwrap();
        let d = |w: &str| {
            let t = s.with_substitution(1, w, &vocab, false).unwrap();
            attribution_distance(&attribute(&model, &t, &r.labels, &attribution).unwrap(), &orig).unwrap()
        };
        let expected = d("beta").max(d("gamma")).max(0.0);
        assert_eq!(r.d_max, expected);
    }

    #[test]
    fn config_hash_is_stable() {
        let a = AttackConfig::default();
        assert_eq!(a.hash(), AttackConfig::default().hash());
        assert_ne!(a.hash(), AttackConfig { k: 3, ..a.clone() }.hash());
    }
}
