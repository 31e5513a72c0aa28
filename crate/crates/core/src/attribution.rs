//! Word-level attribution maps: Saliency, DeepLIFT (Rescale rule),
//! Integrated Gradients and pooling attention.
//!
//! Every method first produces a per-embedding map (`n x h`) and the
//! per-word score is its row sum. The attribution target is the sum of the
//! logits of the selected labels. For label sets with more than one label,
//! [`multilabel_attribution`] sums the single-label maps.
//!
//! The `*_on_graph` builders record the computation on an autodiff
//! [`Graph`], so a map can itself be differentiated with respect to the
//! input embeddings or the model parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{check_finite_rows, BoundParams, LabelSet, Pooling, ReferenceClassifier, TextSample, Vocabulary};

/// Below this pre-activation difference DeepLIFT falls back to the local
/// gradient of the ReLU.
pub const RESCALE_EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "S")]
    Saliency,
    #[serde(rename = "DL")]
    DeepLift,
    #[serde(rename = "IG")]
    IntegratedGradients,
    #[serde(rename = "A")]
    Attention,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Saliency,
        Method::DeepLift,
        Method::IntegratedGradients,
        Method::Attention,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Saliency => "S",
            Method::DeepLift => "DL",
            Method::IntegratedGradients => "IG",
            Method::Attention => "A",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S" | "SALIENCY" => Ok(Method::Saliency),
            "DL" | "DEEPLIFT" => Ok(Method::DeepLift),
            "IG" | "INTEGRATED-GRADIENTS" => Ok(Method::IntegratedGradients),
            "A" | "ATTENTION" => Ok(Method::Attention),
            other => Err(Error::InvalidConfig(format!("unknown attribution method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// All-zero embedding matrix.
    Zero,
    /// Every row set to the padding token's embedding.
    Pad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub method: Method,
    pub ig_steps: usize,
    pub baseline: Baseline,
    /// Lets DeepLIFT run on attention models by freezing the attention
    /// weights at their values for the input.
    pub attention_as_constant: bool,
}

impl AttributionConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn with_ig_steps(mut self, steps: usize) -> Self {
        self.ig_steps = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::InvalidConfig("ig_steps must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            method: Method::IntegratedGradients,
            ig_steps: 50,
            baseline: Baseline::Zero,
            attention_as_constant: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub method: Method,
    pub labels: Vec<usize>,
    pub per_word: Vec<f64>,
    pub per_embedding: Tensor,
}

impl AttributionMap {
    fn from_embedding_scores(method: Method, labels: &[usize], per_embedding: Tensor) -> Result<Self> {
        check_finite_rows(&per_embedding)?;
        Ok(Self {
            method,
            labels: labels.to_vec(),
            per_word: per_embedding.row_sums(),
            per_embedding,
        })
    }

    pub fn len(&self) -> usize {
        self.per_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_word.is_empty()
    }

    /// Line-oriented record: sample id, method, label set and per-word
    /// scores with 9 significant digits.
    pub fn to_record(&self, sample_id: &str) -> String {
        let record = AttributionRecord {
            sample_id: sample_id.to_string(),
            method: self.method,
            labels: self.labels.clone(),
            per_word: self.per_word.iter().map(|v| format_significant(*v, 9)).collect(),
        };
        serde_json::to_string(&record).expect("attribution record serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub sample_id: String,
    pub method: Method,
    pub labels: Vec<usize>,
    /// Decimal strings, 9 significant digits.
    pub per_word: Vec<String>,
}

/// Scientific-notation decimal with `digits` significant digits.
pub fn format_significant(value: f64, digits: usize) -> String {
    format!("{:.*e}", digits.saturating_sub(1), value)
}

fn target_row(labels: &[usize], num_labels: usize) -> Tensor {
    let mut t = vec![0.0; num_labels];
    for &l in labels {
        t[l] += 1.0;
    }
    Tensor::row(t)
}

fn check_labels(labels: &[usize], num_labels: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_labels) {
        return Err(Error::InvalidLabel { label: l, num_labels });
    }
    Ok(())
}

/// Baseline embedding matrix with the shape of `embeddings`.
pub fn baseline_embeddings(model: &ReferenceClassifier, embeddings: &Tensor, baseline: Baseline) -> Tensor {
    let (n, h) = embeddings.shape();
    match baseline {
        Baseline::Zero => Tensor::zeros(n, h),
        Baseline::Pad => {
            let mut t = Tensor::zeros(n, h);
            for r in 0..n {
                t.row_slice_mut(r).copy_from_slice(model.embedding_row(Vocabulary::PAD_ID));
            }
            t
        }
    }
}

/// Scalar sum of the logits of `labels`.
fn target_on_graph(g: &mut Graph, logits: Var, labels: &[usize], num_labels: usize) -> Var {
    let t = g.constant(target_row(labels, num_labels));
    g.dot(logits, t)
}

/// `|d target / d x|`, elementwise.
pub fn saliency_on_graph(g: &mut Graph, model: &ReferenceClassifier, p: &BoundParams, x: Var, labels: &[usize]) -> Var {
    let fwd = model.forward_on_graph(g, p, x);
    let target = target_on_graph(g, fwd.logits, labels, model.num_labels());
    let grad = g.grad(target, &[x])[0];
    g.abs(grad)
}

/// Riemann (right endpoint) approximation of the path integral from
/// `baseline` to `x`, with `steps` points.
pub fn integrated_gradients_on_graph(
    g: &mut Graph,
    model: &ReferenceClassifier,
    p: &BoundParams,
    x: Var,
    baseline: Var,
    labels: &[usize],
    steps: usize,
) -> Var {
    let diff = g.sub(x, baseline);
    let mut total: Option<Var> = None;
    for k in 1..=steps {
        let scaled = g.scale(diff, k as f64 / steps as f64);
        let point = g.add(baseline, scaled);
        let fwd = model.forward_on_graph(g, p, point);
        let target = target_on_graph(g, fwd.logits, labels, model.num_labels());
        let grad = g.grad(target, &[point])[0];
        total = Some(match total {
            Some(t) => g.add(t, grad),
            None => grad,
        });
    }
    let mean = g.scale(total.expect("steps >= 1"), 1.0 / steps as f64);
    g.mul(diff, mean)
}

/// DeepLIFT with the Linear rule on affine maps and pooling and the Rescale
/// rule on the ReLU. Attention weights, when present, are held at their
/// values for `x` and used for the baseline as well.
pub fn deeplift_on_graph(
    g: &mut Graph,
    model: &ReferenceClassifier,
    p: &BoundParams,
    x: Var,
    baseline: Var,
    labels: &[usize],
) -> Var {
    let weights = model.attention_on_graph(g, p, x).map(|w| g.detach(w));
    let (pooled, _) = model.pool_on_graph(g, p, x, weights);
    let (pooled_ref, _) = model.pool_on_graph(g, p, baseline, weights);
    let a = model.pre_activation_on_graph(g, p, pooled);
    let a_ref = model.pre_activation_on_graph(g, p, pooled_ref);

    let delta = g.sub(a, a_ref);
    let small = g.value(delta).map(|d| if d.abs() < RESCALE_EPSILON { 1.0 } else { 0.0 });
    let large = small.map(|m| 1.0 - m);
    let local = g.value(a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let small_c = g.constant(small.clone());
    let large_c = g.constant(large);

    let out = g.relu(a);
    let out_ref = g.relu(a_ref);
    let num = g.sub(out, out_ref);
    let masked = g.mul(delta, large_c);
    let safe_den = g.add(masked, small_c);
    let ratio = g.div(num, safe_den);
    let ratio = g.mul(ratio, large_c);
    let fallback = g.constant(masked_product(&local, &small));
    let multiplier = g.add(ratio, fallback);

    let target = g.constant(target_row(labels, model.num_labels()));
    let w2t = g.transpose(p.output_weight);
    let m_hidden = g.matmul(target, w2t);
    let m_pre = g.mul(m_hidden, multiplier);
    let w1t = g.transpose(p.hidden_weight);
    let m_pooled = g.matmul(m_pre, w1t);

    let (n, h) = g.shape(x);
    let m_x = match weights {
        Some(w) => g.mul(w, m_pooled),
        None => {
            let scaled = g.scale(m_pooled, 1.0 / n as f64);
            g.broadcast_to(scaled, (n, h))
        }
    };
    let diff = g.sub(x, baseline);
    g.mul(diff, m_x)
}

/// Pooling weights spread evenly over each row, so row sums give the weight.
pub fn attention_map_on_graph(g: &mut Graph, model: &ReferenceClassifier, p: &BoundParams, x: Var) -> Result<Var> {
    let w = model
        .attention_on_graph(g, p, x)
        .ok_or_else(|| Error::Unsupported("attention attribution needs an attention-pooling model".into()))?;
    let (n, h) = g.shape(x);
    let spread = g.scale(w, 1.0 / h as f64);
    Ok(g.broadcast_to(spread, (n, h)))
}

/// Per-embedding map of one method for the label set taken as a whole (the
/// target is the sum of the selected logits).
pub fn method_on_graph(
    g: &mut Graph,
    model: &ReferenceClassifier,
    p: &BoundParams,
    x: Var,
    labels: &[usize],
    config: &AttributionConfig,
) -> Result<Var> {
    config.validate()?;
    check_labels(labels, model.num_labels())?;
    let make_baseline = |g: &mut Graph| {
        let shape = g.shape(x);
        let t = baseline_embeddings(model, &Tensor::zeros(shape.0, shape.1), config.baseline);
        g.constant(t)
    };
    match config.method {
        Method::Saliency => Ok(saliency_on_graph(g, model, p, x, labels)),
        Method::IntegratedGradients => {
            let b = make_baseline(g);
            Ok(integrated_gradients_on_graph(g, model, p, x, b, labels, config.ig_steps))
        }
        Method::DeepLift => {
            if model.pooling() == Pooling::Attention && !config.attention_as_constant {
                return Err(Error::Unsupported(
                    "DeepLIFT through softmax attention needs attention_as_constant".into(),
                ));
            }
            let b = make_baseline(g);
            Ok(deeplift_on_graph(g, model, p, x, b, labels))
        }
        Method::Attention => attention_map_on_graph(g, model, p, x),
    }
}

/// Sum of single-label maps over `labels`; the map used throughout the
/// attack and training code.
pub fn attribution_on_graph(
    g: &mut Graph,
    model: &ReferenceClassifier,
    p: &BoundParams,
    x: Var,
    labels: &[usize],
    config: &AttributionConfig,
) -> Result<Var> {
    check_labels(labels, model.num_labels())?;
    let mut total: Option<Var> = None;
    for &l in labels {
        let m = method_on_graph(g, model, p, x, &[l], config)?;
        total = Some(match total {
            Some(t) => g.add(t, m),
            None => m,
        });
    }
    Ok(total.expect("non-empty labels"))
}

fn evaluate<F>(model: &ReferenceClassifier, embeddings: &Tensor, method: Method, labels: &[usize], build: F) -> Result<AttributionMap>
where
    F: FnOnce(&mut Graph, &BoundParams, Var) -> Result<Var>,
{
    model.check_embeddings(embeddings)?;
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let x = g.leaf(embeddings.clone());
    let map = build(&mut g, &p, x)?;
    AttributionMap::from_embedding_scores(method, labels, g.value(map).clone())
}

/// Map for the label set taken as a whole, from raw embeddings.
pub fn method_for_embeddings(
    model: &ReferenceClassifier,
    embeddings: &Tensor,
    labels: &[usize],
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    evaluate(model, embeddings, config.method, labels, |g, p, x| {
        method_on_graph(g, model, p, x, labels, config)
    })
}

/// Summed single-label maps from raw embeddings.
pub fn attribute_embeddings(
    model: &ReferenceClassifier,
    embeddings: &Tensor,
    labels: &[usize],
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    evaluate(model, embeddings, config.method, labels, |g, p, x| {
        attribution_on_graph(g, model, p, x, labels, config)
    })
}

pub fn saliency(model: &ReferenceClassifier, sample: &TextSample, labels: &LabelSet) -> Result<AttributionMap> {
    let config = AttributionConfig::new(Method::Saliency);
    method_for_embeddings(model, &model.embed(sample)?, &labels.to_vec(), &config)
}

pub fn integrated_gradients(
    model: &ReferenceClassifier,
    sample: &TextSample,
    labels: &LabelSet,
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    let config = AttributionConfig {
        method: Method::IntegratedGradients,
        ..config.clone()
    };
    method_for_embeddings(model, &model.embed(sample)?, &labels.to_vec(), &config)
}

pub fn deeplift_rescale(
    model: &ReferenceClassifier,
    sample: &TextSample,
    labels: &LabelSet,
    baseline: Baseline,
) -> Result<AttributionMap> {
    let config = AttributionConfig {
        method: Method::DeepLift,
        baseline,
        ..AttributionConfig::default()
    };
    method_for_embeddings(model, &model.embed(sample)?, &labels.to_vec(), &config)
}

/// Pooling attention weights as a map. The label set is irrelevant to the
/// weights and recorded as empty.
pub fn attention_attribution(model: &ReferenceClassifier, sample: &TextSample) -> Result<AttributionMap> {
    let embeddings = model.embed(sample)?;
    evaluate(model, &embeddings, Method::Attention, &[], |g, p, x| {
        attention_map_on_graph(g, model, p, x)
    })
}

/// Elementwise sum of the single-label maps over `labels`.
pub fn multilabel_attribution(
    model: &ReferenceClassifier,
    sample: &TextSample,
    labels: &LabelSet,
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    attribute_embeddings(model, &model.embed(sample)?, &labels.to_vec(), config)
}

/// The attribution map `A(s, F, l)` used by the attack and the metrics.
pub fn attribute(
    model: &ReferenceClassifier,
    sample: &TextSample,
    labels: &LabelSet,
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    multilabel_attribution(model, sample, labels, config)
}

fn masked_product(values: &Tensor, mask: &Tensor) -> Tensor {
    let data = values.data().iter().zip(mask.data()).map(|(v, m)| v * m).collect();
    Tensor::new(values.rows(), values.cols(), data)
}
