//! The reference text classifier: word embeddings, a pooling layer (mean or
//! additive attention), then `affine -> ReLU -> affine` to one logit per
//! class.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{LabelSet, TaskMode, TextSample};

pub const DEFAULT_EMBEDDING_DIM: usize = 16;
pub const DEFAULT_HIDDEN_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Mean,
    Attention,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Attention => "attention",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub num_labels: usize,
    pub pooling: Pooling,
    pub task_mode: TaskMode,
}

impl Architecture {
    /// The fixed reference sizes: 16-dimensional embeddings, 32 hidden units.
    pub fn reference(vocab_size: usize, num_labels: usize, pooling: Pooling, task_mode: TaskMode) -> Self {
        Self {
            vocab_size,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            num_labels,
            pooling,
            task_mode,
        }
    }

    /// Parameter names and shapes in checkpoint order.
    pub fn parameter_shapes(&self) -> Vec<(&'static str, (usize, usize))> {
        let h = self.embedding_dim;
        let mut out = vec![("embedding", (self.vocab_size, h))];
        if self.pooling == Pooling::Attention {
            out.push(("attention.projection", (h, h)));
            out.push(("attention.bias", (1, h)));
            out.push(("attention.vector", (h, 1)));
        }
        out.push(("hidden.weight", (h, self.hidden_dim)));
        out.push(("hidden.bias", (1, self.hidden_dim)));
        out.push(("output.weight", (self.hidden_dim, self.num_labels)));
        out.push(("output.bias", (1, self.num_labels)));
        out
    }
}

/// Differentiable classifier over embedding matrices. Parameters are held in
/// checkpoint order (see [`Architecture::parameter_shapes`]); index 0 is the
/// embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceClassifier {
    arch: Architecture,
    params: Vec<Tensor>,
}

impl ReferenceClassifier {
    pub fn from_parameters(arch: Architecture, params: Vec<Tensor>) -> Result<Self> {
        let shapes = arch.parameter_shapes();
        if shapes.len() != params.len() {
            return Err(Error::shape(
                format!("{} parameter arrays", shapes.len()),
                format!("{}", params.len()),
            ));
        }
        for ((name, shape), t) in shapes.iter().zip(&params) {
            if t.shape() != *shape {
                return Err(Error::shape(
                    format!("{name} {shape:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::InvalidConfig(format!("parameter {name} has non-finite entries")));
            }
        }
        if arch.num_labels == 0 || arch.embedding_dim == 0 || arch.hidden_dim == 0 {
            return Err(Error::InvalidConfig("architecture dimensions must be positive".into()));
        }
        Ok(Self { arch, params })
    }

    /// Seeded random initialization (Glorot-style scaling).
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .parameter_shapes()
            .into_iter()
            .map(|(name, (r, c))| {
                let mut t = Tensor::zeros(r, c);
                match name {
                    "embedding" => {
                        let normal = Normal::new(0.0, 1.0).expect("valid normal");
                        for v in t.data_mut() {
                            *v = normal.sample(&mut rng);
                        }
                    }
                    n if n.ends_with("bias") => {}
                    _ => {
                        let limit = (6.0 / (r + c) as f64).sqrt();
                        for v in t.data_mut() {
                            *v = rng.gen_range(-limit..limit);
                        }
                    }
                }
                t
            })
            .collect();
        Self { arch, params }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim
    }

    pub fn num_labels(&self) -> usize {
        self.arch.num_labels
    }

    pub fn pooling(&self) -> Pooling {
        self.arch.pooling
    }

    pub fn task_mode(&self) -> TaskMode {
        self.arch.task_mode
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn embedding_table(&self) -> &Tensor {
        &self.params[0]
    }

    pub fn embedding_row(&self, id: usize) -> &[f64] {
        self.params[0].row_slice(id)
    }

    /// Stacks the embedding rows of `ids` in sequence order.
    pub fn embed_ids(&self, ids: &[usize]) -> Result<Tensor> {
        let table = &self.params[0];
        let h = self.arch.embedding_dim;
        let mut out = Tensor::zeros(ids.len(), h);
        for (i, &id) in ids.iter().enumerate() {
            if id >= table.rows() {
                return Err(Error::InvalidWordId {
                    id,
                    size: table.rows(),
                });
            }
            out.row_slice_mut(i).copy_from_slice(table.row_slice(id));
        }
        Ok(out)
    }

    pub fn embed(&self, sample: &TextSample) -> Result<Tensor> {
        if sample.ids.is_empty() {
            return Err(Error::EmptySample);
        }
        self.embed_ids(&sample.ids)
    }

    pub(crate) fn check_embeddings(&self, embeddings: &Tensor) -> Result<()> {
        if embeddings.rows() == 0 || embeddings.cols() != self.arch.embedding_dim {
            return Err(Error::shape(
                format!("n x {} with n >= 1", self.arch.embedding_dim),
                format!("{} x {}", embeddings.rows(), embeddings.cols()),
            ));
        }
        Ok(())
    }

    /// Places the dense parameters on `g`, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars: Vec<Var> = self.params[1..]
            .iter()
            .map(|t| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let (attention, rest) = match self.arch.pooling {
            Pooling::Attention => (Some([vars[0], vars[1], vars[2]]), &vars[3..]),
            Pooling::Mean => (None, &vars[..]),
        };
        BoundParams {
            attention,
            hidden_weight: rest[0],
            hidden_bias: rest[1],
            output_weight: rest[2],
            output_bias: rest[3],
            dense: vars,
        }
    }

    /// Attention weights (an `n x 1` column) for embeddings `x`.
    pub fn attention_on_graph(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Option<Var> {
        let [proj, bias, vector] = p.attention?;
        let h = g.matmul(x, proj);
        let h = g.add(h, bias);
        let h = g.tanh(h);
        let scores = g.matmul(h, vector);
        Some(g.softmax(scores))
    }

    /// Pools `x` to a `1 x h` row. `weights` overrides the pooling weights
    /// (used to hold attention fixed); otherwise they are computed from `x`.
    pub fn pool_on_graph(&self, g: &mut Graph, p: &BoundParams, x: Var, weights: Option<Var>) -> (Var, Option<Var>) {
        let h = self.arch.embedding_dim;
        let weights = weights.or_else(|| self.attention_on_graph(g, p, x));
        let pooled = match weights {
            Some(w) => {
                let weighted = g.mul(x, w);
                g.sum_to(weighted, (1, h))
            }
            None => {
                let n = g.shape(x).0;
                let total = g.sum_to(x, (1, h));
                g.scale(total, 1.0 / n as f64)
            }
        };
        (pooled, weights)
    }

    /// Hidden pre-activation `pooled * W1 + b1`.
    pub fn pre_activation_on_graph(&self, g: &mut Graph, p: &BoundParams, pooled: Var) -> Var {
        let a = g.matmul(pooled, p.hidden_weight);
        g.add(a, p.hidden_bias)
    }

    pub fn head_on_graph(&self, g: &mut Graph, p: &BoundParams, pre_activation: Var) -> Var {
        let r = g.relu(pre_activation);
        let o = g.matmul(r, p.output_weight);
        g.add(o, p.output_bias)
    }

    pub fn forward_on_graph(&self, g: &mut Graph, p: &BoundParams, x: Var) -> ForwardPass {
        let (pooled, attention) = self.pool_on_graph(g, p, x, None);
        let pre_activation = self.pre_activation_on_graph(g, p, pooled);
        let logits = self.head_on_graph(g, p, pre_activation);
        ForwardPass {
            logits,
            pooled,
            pre_activation,
            attention,
        }
    }

    /// Logits (`1 x |labels|`) for an `n x h` embedding matrix.
    pub fn forward(&self, embeddings: &Tensor) -> Result<Tensor> {
        self.check_embeddings(embeddings)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(embeddings.clone());
        let out = self.forward_on_graph(&mut g, &p, x);
        Ok(g.value(out.logits).clone())
    }

    pub fn logits(&self, sample: &TextSample) -> Result<Vec<f64>> {
        Ok(self.forward(&self.embed(sample)?)?.into_data())
    }

    pub fn predict(&self, sample: &TextSample) -> Result<LabelSet> {
        Ok(predict_from_logits(&self.logits(sample)?, self.arch.task_mode))
    }

    /// Pooling attention weights of `embeddings`; mean-pooling models are
    /// rejected.
    pub fn attention_weights(&self, embeddings: &Tensor) -> Result<Vec<f64>> {
        self.check_embeddings(embeddings)?;
        if self.arch.pooling != Pooling::Attention {
            return Err(Error::Unsupported("mean-pooling model has no attention weights".into()));
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(embeddings.clone());
        let w = self.attention_on_graph(&mut g, &p, x).expect("attention pooling");
        Ok(g.value(w).data().to_vec())
    }

    /// Gradient of a scalar objective with respect to the input embeddings.
    /// The objective receives the graph, the bound parameters, the embedding
    /// variable and its forward pass.
    pub fn grad_wrt_embeddings<F>(&self, embeddings: &Tensor, objective: F) -> Result<Tensor>
    where
        F: FnOnce(&mut Graph, &BoundParams, Var, &ForwardPass) -> Result<Var>,
    {
        self.check_embeddings(embeddings)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.leaf(embeddings.clone());
        let fwd = self.forward_on_graph(&mut g, &p, x);
        let obj = objective(&mut g, &p, x, &fwd)?;
        if g.shape(obj) != (1, 1) {
            return Err(Error::shape("scalar objective", format!("{:?}", g.shape(obj))));
        }
        let grad = g.grad(obj, &[x])[0];
        let grad = g.value(grad).clone();
        check_finite_rows(&grad)?;
        Ok(grad)
    }

    /// Mean L2 norm of the rows of `embeddings`.
    pub fn mean_row_norm(embeddings: &Tensor) -> f64 {
        let n = embeddings.rows().max(1);
        (0..embeddings.rows())
            .map(|r| embeddings.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64
    }
}

pub(crate) fn check_finite_rows(t: &Tensor) -> Result<()> {
    for r in 0..t.rows() {
        if t.row_slice(r).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { position: r });
        }
    }
    Ok(())
}

/// Model parameters placed on a [`Graph`], excluding the embedding table.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub attention: Option<[Var; 3]>,
    pub hidden_weight: Var,
    pub hidden_bias: Var,
    pub output_weight: Var,
    pub output_bias: Var,
    /// All dense parameter variables in checkpoint order (after the table).
    pub dense: Vec<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    pub logits: Var,
    pub pooled: Var,
    pub pre_activation: Var,
    pub attention: Option<Var>,
}

/// Single-label: argmax, ties to the lower index. Multilabel: every class
/// with sigmoid(logit) > 0.5.
pub fn predict_from_logits(logits: &[f64], mode: TaskMode) -> LabelSet {
    match mode {
        TaskMode::SingleLabel => {
            let mut best = 0;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            LabelSet::single(best)
        }
        TaskMode::Multilabel => LabelSet::multi(
            logits
                .iter()
                .enumerate()
                .filter(|(_, &v)| sigmoid(v) > 0.5)
                .map(|(i, _)| i),
        ),
    }
}

/// Cross-entropy on a single label, or mean binary cross-entropy over all
/// classes for multilabel targets.
pub fn classification_loss(g: &mut Graph, logits: Var, labels: &LabelSet, mode: TaskMode) -> Var {
    let num = g.shape(logits).1;
    let mut target = vec![0.0; num];
    for l in labels.iter() {
        target[l] = 1.0;
    }
    let target = g.constant(Tensor::row(target));
    match mode {
        TaskMode::SingleLabel => {
            let lse = g.logsumexp(logits);
            let picked = g.dot(logits, target);
            g.sub(lse, picked)
        }
        TaskMode::Multilabel => {
            let sp = g.softplus(logits);
            let yl = g.mul(logits, target);
            let per_class = g.sub(sp, yl);
            let total = g.sum(per_class);
            g.scale(total, 1.0 / num as f64)
        }
    }
}
