//! Experiment configuration, orchestration and report bundles.
//!
//! A bundle is a directory holding everything one `run_experiment` call
//! produced:
//!
//! ```text
//! manifest.json      stages with timestamps, seeds, completion flag
//! config.toml        configuration snapshot
//! seeds.json         master seed and derived sub-seeds
//! load_report.json   skipped dataset lines
//! vocab.txt
//! models/            one checkpoint per regime and fold
//! training/          one JSON-lines step log per regime and fold
//! accuracy.csv       clean accuracy on the evaluated samples
//! rows.csv           one robustness row per (regime, method, fold, sample)
//! aggregates.csv     mean and std per (regime, method)
//! transcripts.jsonl  one attack transcript per row
//! failures.jsonl     samples excluded from the sweep
//! report.md          rendered table
//! ```
//!
//! Everything except `manifest.json` is a deterministic function of the
//! configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{AttributionConfig, Baseline, Method};
use crate::candidates::{CandidateExtractor, MlmExtractor, ProcessLm, SynonymTable, UnigramLm};
use crate::dare::{AttackConfig, AttackTranscript, ConstraintMode};
use crate::data::{load_dataset, split_dataset_fold, Dataset, DatasetSpec, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_rows, dataset_robustness, read_rows_csv, render_table, EmbeddingTfIdfEncoder, NgramTfIdfEncoder,
    RobustnessConstantPolicy, RobustnessReport, RobustnessSweep, SampleFailure, SentenceEncoder,
};
use crate::model::{
    accuracy, load_checkpoint, save_checkpoint, train_vanilla, Pooling, ReferenceClassifier, TextSample,
    TrainConfig, TrainedModel,
};
use crate::robust::{adversarial_train, far_train, AdvTrainConfig, FarConfig, FarPreset};
use crate::seeds::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeName {
    Vanilla,
    Adversarial,
    Far,
}

impl RegimeName {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeName::Vanilla => "vanilla",
            RegimeName::Adversarial => "adversarial",
            RegimeName::Far => "far",
        }
    }
}

impl std::str::FromStr for RegimeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(RegimeName::Vanilla),
            "adversarial" => Ok(RegimeName::Adversarial),
            "far" => Ok(RegimeName::Far),
            other => Err(Error::InvalidConfig(format!("unknown regime {other:?}"))),
        }
    }
}

/// Which part of each split is attacked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSplit {
    Test,
    Validation,
    Train,
    /// Every sample of the dataset (models still train on the train part).
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CandidateSpec {
    /// Tab-separated synonym table.
    Synonyms { path: PathBuf },
    /// Context-free frequency ranking of the training split.
    Unigram,
    /// External masked language model speaking the JSON-lines protocol.
    Process {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "general")]
        domain: String,
    },
}

fn general() -> String {
    "general".into()
}

/// Sentence encoder behind the similarity and `r(s)` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderSpec {
    /// TF-IDF-weighted embeddings of the model under attack.
    OwnEmbeddings,
    /// TF-IDF-weighted embeddings of the fold's vanilla model, shared by
    /// every regime.
    VanillaEmbeddings,
    /// TF-IDF over word unigrams and bigrams of the training split; shared
    /// by every regime and sensitive to word order.
    NgramTfidf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub pooling: Pooling,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            pooling: t.pooling,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialSection {
    pub attack_ratio: f64,
}

impl Default for AdversarialSection {
    fn default() -> Self {
        Self { attack_ratio: 0.3 }
    }
}

/// FAR settings; explicit values override the preset's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarSection {
    pub preset: FarPreset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_ratio: Option<f64>,
    /// IG steps inside the training objective.
    pub ig_steps: usize,
    pub detach_original: bool,
}

impl Default for FarSection {
    fn default() -> Self {
        Self {
            preset: FarPreset::AdvAat,
            gamma: None,
            delta: None,
            attack_ratio: None,
            ig_steps: 8,
            detach_original: false,
        }
    }
}

/// Settings of the attacks run during training; stop words and the
/// ranking perturbation come from `[attack]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingAttackSection {
    pub k: usize,
    pub rho_max: f64,
    pub strict_vocab: bool,
}

impl Default for TrainingAttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            k: a.k,
            rho_max: a.rho_max,
            strict_vocab: a.strict_vocab,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionSection {
    pub ig_steps: usize,
    pub baseline: Baseline,
    pub attention_as_constant: bool,
}

impl Default for AttributionSection {
    fn default() -> Self {
        let a = AttributionConfig::default();
        Self {
            ig_steps: a.ig_steps,
            baseline: a.baseline,
            attention_as_constant: a.attention_as_constant,
        }
    }
}

impl AttributionSection {
    pub fn config(&self, method: Method) -> AttributionConfig {
        AttributionConfig {
            method,
            ig_steps: self.ig_steps,
            baseline: self.baseline,
            attention_as_constant: self.attention_as_constant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; every stochastic stage uses a named sub-seed of it.
    pub seed: u64,
    /// 1 for a single split, more for rotated splits pooled in one report.
    #[serde(default = "one")]
    pub folds: usize,
    #[serde(default = "test_split")]
    pub eval_split: EvalSplit,
    /// Attack only the first samples of the evaluated split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_eval_samples: Option<usize>,
    pub regimes: Vec<RegimeName>,
    pub methods: Vec<Method>,
    /// Parent of the bundle directory `<output_root>/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub adversarial: AdversarialSection,
    #[serde(default)]
    pub far: FarSection,
    #[serde(default)]
    pub training_attack: TrainingAttackSection,
    /// Evaluation attack. Its `epsilon_seed` is replaced by the derived
    /// `attack-epsilon` seed.
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub attribution: AttributionSection,
    pub candidates: CandidateSpec,
    #[serde(default = "own_embeddings")]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub policy: RobustnessConstantPolicy,
    /// Pre-trained checkpoints by regime name, used instead of training
    /// (single-fold runs only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub checkpoints: BTreeMap<RegimeName, PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn test_split() -> EvalSplit {
    EvalSplit::Test
}

fn own_embeddings() -> EncoderSpec {
    EncoderSpec::OwnEmbeddings
}

/// Named sub-seeds of the master seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub split: u64,
    /// Seed of every training run; initialization and batch order use its
    /// `init` and `batch-order` sub-seeds.
    pub train: u64,
    pub init: u64,
    pub batch_order: u64,
    pub attack_epsilon: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        let train = derive_seed(master, "train");
        Self {
            master,
            split: derive_seed(master, "split"),
            train,
            init: derive_seed(train, "init"),
            batch_order: derive_seed(train, "batch-order"),
            attack_epsilon: derive_seed(master, "attack-epsilon"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    /// Reads a TOML file; relative paths inside resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &dir)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    /// `<output_root>/<name>`; the root defaults to `runs`.
    pub fn output_dir(&self) -> PathBuf {
        let root = self.output_root.clone().unwrap_or_else(|| PathBuf::from("runs"));
        self.resolve(&root).join(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name {:?} must be a non-empty file name", self.name));
        }
        if self.folds == 0 {
            return bad("folds must be at least 1".into());
        }
        if self.regimes.is_empty() || self.methods.is_empty() {
            return bad("at least one regime and one method are required".into());
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if self.regimes[..i].contains(r) {
                return bad(format!("regime {} listed twice", r.as_str()));
            }
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method {m} listed twice"));
            }
        }
        if self.dataset.max_len == 0 {
            return bad("dataset.max_len must be at least 1".into());
        }
        if self.attack.constraint_mode != ConstraintMode::None
            && self.attack.constraint_mode != ConstraintMode::for_task(self.dataset.task_mode)
        {
            return bad(format!(
                "attack.constraint_mode {:?} does not fit a {:?} dataset",
                self.attack.constraint_mode, self.dataset.task_mode
            ));
        }
        if !self.checkpoints.is_empty() && self.folds != 1 {
            return bad("checkpoints can only be reused in single-fold runs".into());
        }
        self.train_config().validate()?;
        self.eval_attack().validate()?;
        self.training_attack_config().validate()?;
        self.far_config().validate()?;
        self.adversarial_config().validate()?;
        self.attribution.config(Method::IntegratedGradients).validate()?;
        self.policy.validate()?;
        let mut files = vec![self.resolve(&self.dataset.path)];
        if let CandidateSpec::Synonyms { path } = &self.candidates {
            files.push(self.resolve(path));
        }
        files.extend(self.checkpoints.values().map(|p| self.resolve(p)));
        for f in files {
            if !f.is_file() {
                return bad(format!("{} does not exist", f.display()));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            pooling: self.training.pooling,
            learning_rate: self.training.learning_rate,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            seed: self.seeds().train,
        }
    }

    pub fn eval_attack(&self) -> AttackConfig {
        AttackConfig {
            epsilon_seed: self.seeds().attack_epsilon,
            ..self.attack.clone()
        }
    }

    pub fn training_attack_config(&self) -> AttackConfig {
        AttackConfig {
            k: self.training_attack.k,
            rho_max: self.training_attack.rho_max,
            strict_vocab: self.training_attack.strict_vocab,
            constraint_mode: ConstraintMode::None,
            ..self.eval_attack()
        }
    }

    pub fn adversarial_config(&self) -> AdvTrainConfig {
        AdvTrainConfig {
            train: self.train_config(),
            attack_ratio: self.adversarial.attack_ratio,
            attack: self.training_attack_config(),
        }
    }

    pub fn far_config(&self) -> FarConfig {
        let base = FarConfig::from_preset(self.far.preset);
        FarConfig {
            train: self.train_config(),
            gamma: self.far.gamma.unwrap_or(base.gamma),
            delta: self.far.delta.unwrap_or(base.delta),
            preset: Some(self.far.preset),
            attack_ratio: self.far.attack_ratio.unwrap_or(base.attack_ratio),
            attribution: AttributionConfig {
                ig_steps: self.far.ig_steps,
                ..self.attribution.config(Method::IntegratedGradients)
            },
            attack: self.training_attack_config(),
            detach_original: self.far.detach_original,
        }
    }

    /// Short hash of the configuration snapshot.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }
}

/// Builds the configured candidate extractor; the unigram ranking is
/// fitted on `train`.
pub fn build_extractor(config: &ExperimentConfig, train: &[TextSample]) -> Result<Box<dyn CandidateExtractor>> {
    Ok(match &config.candidates {
        CandidateSpec::Synonyms { path } => Box::new(SynonymTable::load(&config.resolve(path))?),
        CandidateSpec::Unigram => Box::new(MlmExtractor::new(UnigramLm::from_samples(train), "dataset")),
        CandidateSpec::Process { program, args, domain } => {
            Box::new(MlmExtractor::new(ProcessLm::spawn(config.resolve(program), args)?, domain.clone()))
        }
    })
}

/// Trains one regime on `split.train`, validating on `split.validation`.
pub fn train_regime(
    config: &ExperimentConfig,
    regime: RegimeName,
    split: &Split,
    extractor: &dyn CandidateExtractor,
) -> Result<TrainedModel> {
    let (train, validation) = (&split.train, &split.validation.samples);
    match regime {
        RegimeName::Vanilla => train_vanilla(train, validation, &config.train_config()),
        RegimeName::Adversarial => adversarial_train(train, validation, &config.adversarial_config(), extractor),
        RegimeName::Far => far_train(train, validation, &config.far_config(), extractor),
    }
}

fn eval_samples(config: &ExperimentConfig, data: &Dataset, split: &Split) -> Vec<TextSample> {
    let mut samples = match config.eval_split {
        EvalSplit::Test => split.test.samples.clone(),
        EvalSplit::Validation => split.validation.samples.clone(),
        EvalSplit::Train => split.train.samples.clone(),
        EvalSplit::All => data.samples.clone(),
    };
    if let Some(n) = config.max_eval_samples {
        samples.truncate(n);
    }
    samples
}

/// Robustness sweep of one trained model over `samples`.
pub fn evaluate_model(
    config: &ExperimentConfig,
    regime: &str,
    fold: usize,
    model: &ReferenceClassifier,
    data: &Dataset,
    encoder: &dyn SentenceEncoder,
    extractor: &dyn CandidateExtractor,
    samples: &[TextSample],
) -> Result<(RobustnessReport, Vec<AttackTranscript>)> {
    let attack = config.eval_attack();
    let attribution = config.attribution.config(Method::IntegratedGradients);
    let sweep = RobustnessSweep {
        model,
        vocabulary: &data.vocabulary,
        regime,
        fold,
        methods: &config.methods,
        attribution: &attribution,
        attack: &attack,
        extractor,
        encoder,
        policy: &config.policy,
    };
    dataset_robustness(&sweep, samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub stages: Vec<StageRecord>,
    pub complete: bool,
    /// Summed attack wall time per regime, in milliseconds.
    #[serde(default)]
    pub attack_wall_time_ms: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn load(bundle: &Path) -> Result<Self> {
        let path = bundle.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn completed(&self, stage: &str) -> bool {
        self.stages
            .iter()
            .any(|s| s.name == stage && s.status == StageStatus::Completed)
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Paths of a finished bundle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub config: PathBuf,
    pub rows: PathBuf,
    pub aggregates: PathBuf,
    pub report: PathBuf,
    pub transcripts: PathBuf,
    pub accuracy: PathBuf,
}

impl ReportBundle {
    pub fn at(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            manifest: dir.join(MANIFEST),
            config: dir.join("config.toml"),
            rows: dir.join("rows.csv"),
            aggregates: dir.join("aggregates.csv"),
            report: dir.join("report.md"),
            transcripts: dir.join("transcripts.jsonl"),
            accuracy: dir.join("accuracy.csv"),
        }
    }

    pub fn model_path(&self, regime: RegimeName, fold: usize) -> PathBuf {
        self.dir.join("models").join(format!("{}-fold{fold}.ckpt", regime.as_str()))
    }

    pub fn training_log_path(&self, regime: RegimeName, fold: usize) -> PathBuf {
        self.dir.join("training").join(format!("{}-fold{fold}.jsonl", regime.as_str()))
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn write(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Tracks stages in the manifest, rewriting it after every transition so
/// that an aborted run leaves a truthful record.
struct StageLog {
    path: PathBuf,
    manifest: Manifest,
}

impl StageLog {
    fn save(&self) -> Result<()> {
        write(&self.path, serde_json::to_string_pretty(&self.manifest)? + "\n")
    }

    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            status: StageStatus::Running,
            error: None,
        });
        self.save()?;
        let out = f();
        let rec = self.manifest.stages.last_mut().expect("stage just pushed");
        rec.finished_unix_ms = Some(now_ms());
        match &out {
            Ok(_) => rec.status = StageStatus::Completed,
            Err(e) => {
                rec.status = StageStatus::Failed;
                rec.error = Some(e.to_string());
            }
        }
        self.save()?;
        out
    }
}

/// Trains (or loads) every regime, sweeps the evaluated split with every
/// method, and writes the bundle. With several folds, each fold rotates the
/// split and the report pools all folds.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportBundle> {
    config.validate()?;
    let bundle = ReportBundle::at(&config.output_dir());
    fs::create_dir_all(&bundle.dir).map_err(|e| Error::io(&bundle.dir, e))?;
    let seeds = config.seeds();
    let mut stages = StageLog {
        path: bundle.manifest.clone(),
        manifest: Manifest {
            name: config.name.clone(),
            config_hash: config.hash()?,
            seeds: seeds.clone(),
            stages: Vec::new(),
            complete: false,
            attack_wall_time_ms: BTreeMap::new(),
        },
    };
    stages.save()?;

    let data = stages.run("load", || {
        write(&bundle.config, config.to_toml()?)?;
        write(bundle.dir.join("seeds.json"), serde_json::to_string_pretty(&seeds)? + "\n")?;
        let spec = DatasetSpec {
            path: config.resolve(&config.dataset.path),
            ..config.dataset.clone()
        };
        let (data, report) = load_dataset(&spec)?;
        write(bundle.dir.join("load_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        data.vocabulary.save(&bundle.dir.join("vocab.txt"))?;
        Ok(data)
    })?;

    let mut reports = Vec::new();
    let mut transcripts = Vec::new();
    let mut accuracy_rows = vec!["regime,fold,samples,accuracy".to_string()];
    for fold in 0..config.folds {
        let split = stages.run(&format!("split-fold{fold}"), || {
            split_dataset_fold(&data, seeds.split, fold, config.folds)
        })?;
        let extractor = build_extractor(config, &split.train.samples)?;
        let samples = eval_samples(config, &data, &split);

        let mut models: Vec<(RegimeName, TrainedModel)> = Vec::new();
        for &regime in &config.regimes {
            let model = stages.run(&format!("train-{}-fold{fold}", regime.as_str()), || {
                let model = match config.checkpoints.get(&regime) {
                    Some(path) => load_checkpoint(&config.resolve(path), &data.vocabulary)?,
                    None => train_regime(config, regime, &split, extractor.as_ref())?,
                };
                let path = bundle.model_path(regime, fold);
                let dir = path.parent().expect("model path has a parent");
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                save_checkpoint(&path, &model)?;
                write(&bundle.training_log_path(regime, fold), jsonl(&model.log)?)?;
                // evaluate what was saved (f32 parameters), so attacking the
                // checkpoint later reproduces these rows
                load_checkpoint(&path, &data.vocabulary)
            })?;
            models.push((regime, model));
        }

        let shared: Option<Box<dyn SentenceEncoder>> = stages.run(&format!("encoder-fold{fold}"), || {
            Ok(match config.encoder {
                EncoderSpec::OwnEmbeddings => None,
                EncoderSpec::VanillaEmbeddings => {
                    let vanilla = match models.iter().find(|(r, _)| *r == RegimeName::Vanilla) {
                        Some((_, m)) => m.classifier.clone(),
                        None => train_regime(config, RegimeName::Vanilla, &split, extractor.as_ref())?.classifier,
                    };
                    let e = EmbeddingTfIdfEncoder::fit(&vanilla, &data.vocabulary, &split.train.samples);
                    Some(Box::new(e) as Box<dyn SentenceEncoder>)
                }
                EncoderSpec::NgramTfidf => {
                    let e = NgramTfIdfEncoder::fit(&split.train.samples, 2, NgramTfIdfEncoder::DEFAULT_BUCKETS)?;
                    Some(Box::new(e) as Box<dyn SentenceEncoder>)
                }
            })
        })?;

        for (regime, model) in &models {
            let own;
            let encoder: &dyn SentenceEncoder = match &shared {
                Some(e) => e.as_ref(),
                None => {
                    own = EmbeddingTfIdfEncoder::fit(&model.classifier, &data.vocabulary, &split.train.samples);
                    &own
                }
            };
            let (report, ts) = stages.run(&format!("evaluate-{}-fold{fold}", regime.as_str()), || {
                let acc = accuracy(&model.classifier, &samples)?;
                accuracy_rows.push(format!("{},{fold},{},{acc}", regime.as_str(), samples.len()));
                let start = Instant::now();
                let out = evaluate_model(
                    config,
                    regime.as_str(),
                    fold,
                    &model.classifier,
                    &data,
                    encoder,
                    extractor.as_ref(),
                    &samples,
                );
                log::info!("{} fold {fold}: sweep took {:.1?}", regime.as_str(), start.elapsed());
                out
            })?;
            let ms: f64 = ts.iter().filter_map(|t| t.wall_time_ms).sum();
            *stages.manifest.attack_wall_time_ms.entry(regime.as_str().to_string()).or_default() += ms;
            reports.push(report);
            transcripts.extend(ts);
        }
    }

    stages.run("report", || {
        let report = RobustnessReport::merge(reports)?;
        for t in &mut transcripts {
            t.wall_time_ms = None;
        }
        write(&bundle.rows, report.rows_csv()?)?;
        write(&bundle.aggregates, report.aggregates_csv()?)?;
        write(&bundle.transcripts, jsonl(&transcripts)?)?;
        write(bundle.dir.join("failures.jsonl"), jsonl::<SampleFailure>(&report.failures)?)?;
        write(bundle.dir.join("metadata.json"), serde_json::to_string_pretty(&report.metadata)? + "\n")?;
        write(&bundle.accuracy, accuracy_rows.join("\n") + "\n")?;
        write(&bundle.report, report.markdown())?;
        Ok(())
    })?;
    stages.manifest.complete = true;
    stages.save()?;
    Ok(bundle)
}

/// The markdown table of a complete bundle, recomputed from its rows.
pub fn render_report(bundle: &Path) -> Result<String> {
    let manifest = Manifest::load(bundle)?;
    if !manifest.complete {
        let done: Vec<&str> = manifest
            .stages
            .iter()
            .filter(|s| s.status == StageStatus::Completed)
            .map(|s| s.name.as_str())
            .collect();
        return Err(Error::Bundle(format!(
            "{} is incomplete (completed stages: {})",
            bundle.display(),
            done.join(", ")
        )));
    }
    let rows = read_rows_csv(&ReportBundle::at(bundle).rows)?;
    if rows.is_empty() {
        return Err(Error::Bundle(format!("{} has no rows", bundle.display())));
    }
    Ok(render_table(&aggregate_rows(&rows)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskMode;

    fn config() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
name = "t"
seed = 3
regimes = ["vanilla", "far"]
methods = ["S", "IG"]

[dataset]
path = "d.jsonl"
task_mode = "single-label"
max_len = 20

[far]
preset = "aat"
delta = 0.5

[attack]
rho_max = 0.2

[candidates]
kind = "synonyms"
path = "syn.tsv"
"#,
            Path::new("/tmp"),
        )
        .unwrap()
    }

    #[test]
    fn toml_round_trip() {
        let c = config();
        let text = c.to_toml().unwrap();
        let again = ExperimentConfig::from_toml_str(&text, Path::new("/tmp")).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml().unwrap(), text);
    }

    #[test]
    fn preset_values_with_overrides() {
        let f = config().far_config();
        assert_eq!((f.gamma, f.delta, f.attack_ratio), (0.0, 0.5, 0.6));
        assert_eq!(f.attribution.ig_steps, 8);
        assert_eq!(f.attack.constraint_mode, ConstraintMode::None);
    }

    #[test]
    fn seeds_fan_out() {
        let s = Seeds::from_master(3);
        let all = [s.split, s.train, s.init, s.batch_order, s.attack_epsilon];
        for (i, a) in all.iter().enumerate() {
            assert!(all[..i].iter().all(|b| b != a));
        }
        assert_eq!(config().eval_attack().epsilon_seed, s.attack_epsilon);
    }

    #[test]
    fn validation_rejects_missing_files_and_mismatched_constraint() {
        let c = config();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(m)) if m.contains("does not exist")));
        let mut m = config();
        m.dataset.task_mode = TaskMode::Multilabel;
        assert!(m.validate().is_err());
    }
}
