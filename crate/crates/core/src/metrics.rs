//! Distances, the robustness constant `r(s)` and dataset-level reports.
//!
//! - attribution distance `d = 1 - cos(a, b)` on per-word vectors; both
//!   vectors zero gives 0, exactly one zero gives 1;
//! - sentence distance `d_s = max(floor, 1 - cos(enc(s1), enc(s2)))`;
//! - `r(s) = d / d_s` at the adversary found by the attack, and 0 when the
//!   attack changed nothing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionConfig, AttributionMap, Method};
use crate::autodiff::{Graph, Var};
use crate::candidates::CandidateExtractor;
use crate::dare::{dare_attack, AttackConfig, AttackResult, AttackTranscript};
use crate::error::{Error, Result};
use crate::model::{ReferenceClassifier, TextSample, Vocabulary};

/// Squared norms below this count as zero vectors.
const ZERO_NORM: f64 = 1e-300;

/// Cosine similarity with the zero-vector conventions: both zero → 1,
/// exactly one zero → 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("length {}", a.len()), format!("length {}", b.len())));
    }
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    Ok(match (na < ZERO_NORM, nb < ZERO_NORM) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
        }
    })
}

/// `1 - cos` of two vectors, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Choice of attribution distance. Only the cosine distance is provided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributionDistance {
    #[default]
    Cosine,
}

pub fn attribution_distance(a1: &AttributionMap, a2: &AttributionMap) -> Result<f64> {
    cosine_distance(&a1.per_word, &a2.per_word)
}

/// `1 - cos(a, b)` for two `1 x n` or `n x 1` variables on a graph. Returns
/// `None` when either vector is zero, where the distance is a constant of
/// the conventions above and has no gradient.
pub fn cosine_distance_on_graph(g: &mut Graph, a: Var, b: Var) -> Option<Var> {
    let na = g.value(a).data().iter().map(|x| x * x).sum::<f64>();
    let nb = g.value(b).data().iter().map(|x| x * x).sum::<f64>();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return None;
    }
    let dot = g.dot(a, b);
    let aa = g.dot(a, a);
    let bb = g.dot(b, b);
    let prod = g.mul(aa, bb);
    let den = g.sqrt(prod);
    let cos = g.div(dot, den);
    let neg = g.neg(cos);
    Some(g.offset(neg, 1.0))
}

/// Maps raw text to a fixed-length vector.
pub trait SentenceEncoder: Send + Sync {
    fn name(&self) -> &str;

    fn domain(&self) -> &str {
        "general"
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

/// TF-IDF-weighted mean of a classifier's embedding rows.
///
/// `idf(w) = ln((1 + N) / (1 + df(w))) + 1` over the fitting corpus of `N`
/// documents; words never seen in the corpus get `df = 0`. Out-of-vocabulary
/// words use the unknown-word row.
#[derive(Clone, Debug)]
pub struct EmbeddingTfIdfEncoder {
    vocabulary: Vocabulary,
    table: Vec<Vec<f64>>,
    idf: HashMap<String, f64>,
    unseen_idf: f64,
}

impl EmbeddingTfIdfEncoder {
    pub fn fit(model: &ReferenceClassifier, vocabulary: &Vocabulary, corpus: &[TextSample]) -> Self {
        let n = corpus.len() as f64;
        let mut df: HashMap<&str, usize> = HashMap::new();
        for s in corpus {
            let mut words: Vec<&str> = s.tokens.iter().map(String::as_str).collect();
            words.sort_unstable();
            words.dedup();
            for w in words {
                *df.entry(w).or_default() += 1;
            }
        }
        let idf = df
            .into_iter()
            .map(|(w, c)| (w.to_string(), ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0))
            .collect();
        let table = (0..vocabulary.len()).map(|i| model.embedding_row(i).to_vec()).collect();
        Self {
            vocabulary: vocabulary.clone(),
            table,
            idf,
            unseen_idf: (1.0 + n).ln() + 1.0,
        }
    }

    pub fn idf(&self, word: &str) -> f64 {
        self.idf.get(word).copied().unwrap_or(self.unseen_idf)
    }
}

impl SentenceEncoder for EmbeddingTfIdfEncoder {
    fn name(&self) -> &str {
        "embedding-tfidf"
    }

    fn domain(&self) -> &str {
        "classifier"
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let mut tf: Vec<(&str, usize)> = Vec::new();
        for w in text.split_whitespace() {
            match tf.iter_mut().find(|(t, _)| *t == w) {
                Some((_, c)) => *c += 1,
                None => tf.push((w, 1)),
            }
        }
        if tf.is_empty() {
            return Err(Error::EmptySample);
        }
        let h = self.table[0].len();
        let mut out = vec![0.0; h];
        let mut total = 0.0;
        for (w, c) in tf {
            let weight = c as f64 * self.idf(w);
            let row = &self.table[self.vocabulary.id_or_unk(w)];
            for (o, v) in out.iter_mut().zip(row) {
                *o += weight * v;
            }
            total += weight;
        }
        for o in &mut out {
            *o /= total;
        }
        Ok(out)
    }
}

/// Order-aware TF-IDF over word n-grams (orders 1 to `max_order`), hashed
/// into a fixed number of buckets.
///
/// Unlike a bag of embeddings, it tells a sentence apart from a permutation
/// of its words, and it does not depend on the classifier under attack.
/// N-grams absent from the fitting corpus get the largest idf.
#[derive(Clone, Debug)]
pub struct NgramTfIdfEncoder {
    max_order: usize,
    buckets: usize,
    idf: HashMap<String, f64>,
    unseen_idf: f64,
}

impl NgramTfIdfEncoder {
    pub const DEFAULT_BUCKETS: usize = 4096;

    pub fn fit(corpus: &[TextSample], max_order: usize, buckets: usize) -> Result<Self> {
        if max_order == 0 || buckets == 0 {
            return Err(Error::InvalidConfig("n-gram order and bucket count must be positive".into()));
        }
        let n = corpus.len() as f64;
        let mut df: HashMap<String, usize> = HashMap::new();
        for s in corpus {
            let mut grams = ngrams(&s.tokens, max_order);
            grams.sort_unstable();
            grams.dedup();
            for g in grams {
                *df.entry(g).or_default() += 1;
            }
        }
        let idf = df
            .into_iter()
            .map(|(g, c)| (g, ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0))
            .collect();
        Ok(Self {
            max_order,
            buckets,
            idf,
            unseen_idf: (1.0 + n).ln() + 1.0,
        })
    }

    pub fn idf(&self, gram: &str) -> f64 {
        self.idf.get(gram).copied().unwrap_or(self.unseen_idf)
    }
}

/// Space-joined n-grams of orders `1..=max_order`.
fn ngrams<S: AsRef<str>>(tokens: &[S], max_order: usize) -> Vec<String> {
    let mut out = Vec::new();
    for order in 1..=max_order {
        for w in tokens.windows(order) {
            out.push(w.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" "));
        }
    }
    out
}

/// 64-bit FNV-1a; stable across platforms and runs.
fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl SentenceEncoder for NgramTfIdfEncoder {
    fn name(&self) -> &str {
        "ngram-tfidf"
    }

    fn domain(&self) -> &str {
        "dataset"
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut out = vec![0.0; self.buckets];
        for g in ngrams(&tokens, self.max_order) {
            out[(fnv1a(&g) % self.buckets as u64) as usize] += self.idf(&g);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConstantPolicy {
    pub distance: AttributionDistance,
    /// Lower bound on the sentence distance.
    pub sentence_floor: f64,
}

impl Default for RobustnessConstantPolicy {
    fn default() -> Self {
        Self {
            distance: AttributionDistance::Cosine,
            sentence_floor: 1e-3,
        }
    }
}

impl RobustnessConstantPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.sentence_floor > 0.0) {
            return Err(Error::InvalidConfig("sentence_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder cosine similarity of two texts (no floor).
pub fn sentence_similarity(s1: &str, s2: &str, encoder: &dyn SentenceEncoder) -> Result<f64> {
    if s1.trim().is_empty() || s2.trim().is_empty() {
        return Err(Error::EmptySample);
    }
    cosine_similarity(&encoder.encode(s1)?, &encoder.encode(s2)?)
}

pub fn sentence_distance(
    s1: &str,
    s2: &str,
    encoder: &dyn SentenceEncoder,
    policy: &RobustnessConstantPolicy,
) -> Result<f64> {
    policy.validate()?;
    Ok((1.0 - sentence_similarity(s1, s2, encoder)?).max(policy.sentence_floor))
}

/// `r(s) = d_max / d_s(s_adv, s)`, or 0 when no substitution was made.
pub fn robustness_constant(
    result: &AttackResult,
    encoder: &dyn SentenceEncoder,
    policy: &RobustnessConstantPolicy,
) -> Result<f64> {
    if result.n == 0 {
        return Ok(0.0);
    }
    let ds = sentence_distance(&result.adversarial.text(), &result.original.text(), encoder, policy)?;
    Ok(result.d_max / ds)
}

/// One attacked sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub regime: String,
    pub method: Method,
    pub fold: usize,
    pub sample_id: String,
    /// cos(A_adv, A)
    pub cos: f64,
    /// Encoder similarity of the adversarial and original texts.
    pub similarity: f64,
    pub r: f64,
    pub n: usize,
    pub length: usize,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    /// `0.46 ± 0.10`
    pub fn cell(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub regime: String,
    pub method: Method,
    pub count: usize,
    pub cos: MeanStd,
    pub similarity: MeanStd,
    pub r: MeanStd,
    pub n: MeanStd,
}

/// Groups rows by (regime, method) in order of first appearance, pooling
/// folds.
pub fn aggregate_rows(rows: &[RobustnessRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, Method)> = Vec::new();
    for r in rows {
        let key = (r.regime.clone(), r.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(regime, method)| {
            let group: Vec<&RobustnessRow> = rows.iter().filter(|r| r.regime == regime && r.method == method).collect();
            let col = |f: &dyn Fn(&RobustnessRow) -> f64| MeanStd::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                count: group.len(),
                cos: col(&|r| r.cos),
                similarity: col(&|r| r.similarity),
                r: col(&|r| r.r),
                n: col(&|r| r.n as f64),
                regime,
                method,
            }
        })
        .collect()
}

/// Header recorded with every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub attribution_distance: String,
    pub sentence_distance: String,
    pub sentence_floor: f64,
    pub encoder: String,
    pub attribution_target: String,
    pub multilabel_threshold: f64,
}

impl ReportMetadata {
    pub fn new(policy: &RobustnessConstantPolicy, encoder: &dyn SentenceEncoder) -> Self {
        Self {
            attribution_distance: "1 - cosine of per-word attribution vectors".into(),
            sentence_distance: "max(floor, 1 - cosine of encoder vectors)".into(),
            sentence_floor: policy.sentence_floor,
            encoder: format!("{} ({})", encoder.name(), encoder.domain()),
            attribution_target: "sum of selected-label logits".into(),
            multilabel_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub method: Method,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<RobustnessRow>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<SampleFailure>,
}

impl RobustnessReport {
    /// Merges reports (for example one per regime or fold) and recomputes
    /// the aggregates.
    pub fn merge(reports: Vec<RobustnessReport>) -> Result<RobustnessReport> {
        let mut it = reports.into_iter();
        let mut out = it.next().ok_or(Error::EmptyDataset)?;
        for r in it {
            out.rows.extend(r.rows);
            out.failures.extend(r.failures);
        }
        out.aggregates = aggregate_rows(&out.rows);
        Ok(out)
    }

    pub fn rows_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows)
    }

    pub fn aggregates_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "regime", "method", "count", "cos_mean", "cos_std", "similarity_mean", "similarity_std", "r_mean",
            "r_std", "n_mean", "n_std",
        ])?;
        for a in &self.aggregates {
            w.write_record([
                a.regime.clone(),
                a.method.to_string(),
                a.count.to_string(),
                a.cos.mean.to_string(),
                a.cos.std.to_string(),
                a.similarity.mean.to_string(),
                a.similarity.std.to_string(),
                a.r.mean.to_string(),
                a.r.std.to_string(),
                a.n.mean.to_string(),
                a.n.std.to_string(),
            ])?;
        }
        csv_string(w)
    }

    /// Markdown table: one row per regime, column groups cos(A_adv, A),
    /// similarity and r(s), one column per method within each group.
    pub fn markdown(&self) -> String {
        render_table(&self.aggregates)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(format!("csv flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Column order: regime, method, fold, sample_id, cos, similarity, r, n,
/// length.
pub fn rows_to_csv(rows: &[RobustnessRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["regime", "method", "fold", "sample_id", "cos", "similarity", "r", "n", "length"])?;
    for r in rows {
        w.write_record([
            r.regime.clone(),
            r.method.to_string(),
            r.fold.to_string(),
            r.sample_id.clone(),
            r.cos.to_string(),
            r.similarity.to_string(),
            r.r.to_string(),
            r.n.to_string(),
            r.length.to_string(),
        ])?;
    }
    csv_string(w)
}

pub fn rows_from_csv(text: &str) -> Result<Vec<RobustnessRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad number {:?} in rows csv", field(i))))
        };
        let int = |i: usize| -> Result<usize> {
            field(i)
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad integer {:?} in rows csv", field(i))))
        };
        rows.push(RobustnessRow {
            regime: field(0).to_string(),
            method: field(1).parse()?,
            fold: int(2)?,
            sample_id: field(3).to_string(),
            cos: num(4)?,
            similarity: num(5)?,
            r: num(6)?,
            n: int(7)?,
            length: int(8)?,
        });
    }
    Ok(rows)
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<RobustnessRow>> {
    rows_from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Markdown table with one row per regime and mean ± std cells per method.
pub fn render_table(aggregates: &[AggregateRow]) -> String {
    let methods: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| aggregates.iter().any(|a| a.method == *m))
        .collect();
    let mut regimes: Vec<&str> = Vec::new();
    for a in aggregates {
        if !regimes.contains(&a.regime.as_str()) {
            regimes.push(&a.regime);
        }
    }
    let groups: [(&str, fn(&AggregateRow) -> MeanStd); 3] = [
        ("cos(A_adv, A)", |a| a.cos),
        ("similarity", |a| a.similarity),
        ("r(s)", |a| a.r),
    ];
    let mut out = String::from("| Model |");
    for (name, _) in &groups {
        for m in &methods {
            let _ = write!(out, " {name} {m} |");
        }
    }
    out.push_str("\n|---|");
    for _ in 0..groups.len() * methods.len() {
        out.push_str("---|");
    }
    out.push('\n');
    for regime in regimes {
        let _ = write!(out, "| {regime} |");
        for (_, get) in &groups {
            for m in &methods {
                let cell = aggregates
                    .iter()
                    .find(|a| a.regime == regime && a.method == *m)
                    .map_or_else(|| "-".to_string(), |a| get(a).cell());
                let _ = write!(out, " {cell} |");
            }
        }
        out.push('\n');
    }
    out
}

/// What to attack and with which settings.
pub struct RobustnessSweep<'a> {
    pub model: &'a ReferenceClassifier,
    pub vocabulary: &'a Vocabulary,
    pub regime: &'a str,
    pub fold: usize,
    pub methods: &'a [Method],
    pub attribution: &'a AttributionConfig,
    pub attack: &'a AttackConfig,
    pub extractor: &'a dyn CandidateExtractor,
    pub encoder: &'a dyn SentenceEncoder,
    pub policy: &'a RobustnessConstantPolicy,
}

/// Attacks every sample with every method. Samples run in parallel; rows
/// come back in (method, sample) order. Samples whose attack fails (for
/// example an empty predicted label set) are excluded and listed in
/// `failures`.
pub fn dataset_robustness(
    sweep: &RobustnessSweep<'_>,
    samples: &[TextSample],
) -> Result<(RobustnessReport, Vec<AttackTranscript>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    sweep.policy.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut transcripts = Vec::new();
    for &method in sweep.methods {
        let attribution = AttributionConfig {
            method,
            ..sweep.attribution.clone()
        };
        let outcomes: Vec<Result<(RobustnessRow, AttackTranscript)>> = samples
            .par_iter()
            .map(|s| {
                let result = dare_attack(s, sweep.model, sweep.vocabulary, &attribution, sweep.extractor, sweep.attack)?;
                let r = robustness_constant(&result, sweep.encoder, sweep.policy)?;
                let similarity = sentence_similarity(&result.adversarial.text(), &s.text(), sweep.encoder)?;
                let row = RobustnessRow {
                    regime: sweep.regime.to_string(),
                    method,
                    fold: sweep.fold,
                    sample_id: s.id.clone(),
                    cos: 1.0 - result.d_max,
                    similarity,
                    r,
                    n: result.n,
                    length: s.len(),
                };
                let transcript = AttackTranscript {
                    regime: sweep.regime.to_string(),
                    fold: sweep.fold,
                    ..result.transcript(sweep.attack, method)
                };
                Ok((row, transcript))
            })
            .collect();
        for (s, outcome) in samples.iter().zip(outcomes) {
            match outcome {
                Ok((row, t)) => {
                    rows.push(row);
                    transcripts.push(t);
                }
                Err(e) => {
                    log::warn!("sample {} ({method}) excluded: {e}", s.id);
                    failures.push(SampleFailure {
                        sample_id: s.id.clone(),
                        method,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    if !failures.is_empty() {
        log::warn!("{} of {} attacks failed and were excluded", failures.len(), samples.len() * sweep.methods.len());
    }
    let aggregates = aggregate_rows(&rows);
    Ok((
        RobustnessReport {
            metadata: ReportMetadata::new(sweep.policy, sweep.encoder),
            rows,
            aggregates,
            failures,
        },
        transcripts,
    ))
}
