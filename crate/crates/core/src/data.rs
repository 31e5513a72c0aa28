//! Dataset ingestion, text preprocessing and train/test/validation splits.
//!
//! Dataset files hold one JSON object per line:
//!
//! ```text
//! {"text": "took the tablets for months.", "labels": ["positive"]}
//! ```
//!
//! Single-label datasets use one-element label lists. An optional `"id"`
//! field names the sample; otherwise the id is `line-<n>`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelSet, TaskMode, TextSample, Vocabulary};

/// Retained punctuation in addition to ASCII letters and the space.
pub const DEFAULT_RETAINED_PUNCTUATION: &str = ".,'-";

/// Fraction of malformed lines above which loading aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub keep_digits: bool,
    pub retained_punctuation: String,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            keep_digits: false,
            retained_punctuation: DEFAULT_RETAINED_PUNCTUATION.to_string(),
        }
    }
}

/// Lowercases, turns newlines and tabs into spaces, drops double quotes and
/// every character outside the Latin letters, the space and the retained
/// punctuation, then collapses runs of spaces.
pub fn preprocess_with(text: &str, config: &PreprocessConfig) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for c in text.to_lowercase().chars() {
        let c = if matches!(c, '\n' | '\r' | '\t') { ' ' } else { c };
        let keep = c.is_ascii_lowercase()
            || c == ' '
            || (config.keep_digits && c.is_ascii_digit())
            || (c != '"' && config.retained_punctuation.contains(c));
        if !keep {
            continue;
        }
        if c == ' ' {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.push(c);
            last_space = false;
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

pub fn preprocess(text: &str) -> String {
    preprocess_with(text, &PreprocessConfig::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    pub task_mode: TaskMode,
    /// Label inventory in index order. When empty, the sorted set of labels
    /// found in the file is used.
    #[serde(default)]
    pub labels: Vec<String>,
    pub max_len: usize,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
}

fn default_format() -> String {
    "jsonl".to_string()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TextSample>,
    pub vocabulary: Vocabulary,
    pub label_names: Vec<String>,
    pub task_mode: TaskMode,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Dataset sharing vocabulary and labels, holding `samples`.
    pub fn with_samples(&self, samples: Vec<TextSample>) -> Dataset {
        Dataset {
            samples,
            vocabulary: self.vocabulary.clone(),
            label_names: self.label_names.clone(),
            task_mode: self.task_mode,
        }
    }
}

/// Problems found while loading. Malformed lines are skipped; lines whose
/// text is empty after preprocessing are dropped.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub total_lines: usize,
    pub malformed: Vec<(usize, String)>,
    pub dropped_empty: Vec<usize>,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    labels: Vec<String>,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<(Dataset, LoadReport)> {
    if spec.format != "jsonl" {
        return Err(Error::InvalidConfig(format!("unsupported dataset format {:?}", spec.format)));
    }
    if spec.max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be at least 1".into()));
    }
    let text = fs::read_to_string(&spec.path).map_err(|e| Error::io(&spec.path, e))?;
    parse_dataset(&text, spec)
}

/// Parses dataset text as if read from `spec.path`.
pub fn parse_dataset(text: &str, spec: &DatasetSpec) -> Result<(Dataset, LoadReport)> {
    let mut report = LoadReport::default();
    let mut records: Vec<(usize, RawRecord)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        report.total_lines += 1;
        match serde_json::from_str::<RawRecord>(line) {
            Ok(r) => records.push((line_no, r)),
            Err(e) => report.malformed.push((line_no, e.to_string())),
        }
    }
    if report.total_lines == 0 {
        return Err(Error::EmptyDataset);
    }

    let label_names: Vec<String> = if spec.labels.is_empty() {
        let set: BTreeSet<&str> = records
            .iter()
            .flat_map(|(_, r)| r.labels.iter().map(String::as_str))
            .collect();
        set.into_iter().map(str::to_string).collect()
    } else {
        spec.labels.clone()
    };

    let mut parsed: Vec<(usize, Option<String>, String, LabelSet)> = Vec::new();
    for (line_no, r) in records {
        let indices: std::result::Result<Vec<usize>, String> = r
            .labels
            .iter()
            .map(|l| {
                label_names
                    .iter()
                    .position(|n| n == l)
                    .ok_or_else(|| format!("unknown label {l:?}"))
            })
            .collect();
        let labels = indices.and_then(|ix| {
            LabelSet::new(ix, spec.task_mode, label_names.len().max(1)).map_err(|e| e.to_string())
        });
        match labels {
            Ok(labels) => {
                let clean = preprocess_with(&r.text, &spec.preprocess);
                if clean.is_empty() {
                    report.dropped_empty.push(line_no);
                    warn!("{}:{line_no}: empty after preprocessing, dropped", spec.path.display());
                } else {
                    parsed.push((line_no, r.id, clean, labels));
                }
            }
            Err(msg) => report.malformed.push((line_no, msg)),
        }
    }
    report.malformed.sort_by_key(|(l, _)| *l);

    if !report.malformed.is_empty() {
        let fraction = report.malformed.len() as f64 / report.total_lines as f64;
        if fraction > MAX_MALFORMED_FRACTION {
            return Err(Error::TooManyMalformed {
                path: spec.path.clone(),
                malformed: report.malformed.len(),
                total: report.total_lines,
                first_line: report.malformed[0].0,
            });
        }
        for (line, msg) in &report.malformed {
            warn!("{}:{line}: malformed record skipped: {msg}", spec.path.display());
        }
    }
    if parsed.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let vocabulary = Vocabulary::build(
        parsed
            .iter()
            .flat_map(|(_, _, text, _)| text.split_whitespace().take(spec.max_len)),
        1,
    );
    let samples = parsed
        .into_iter()
        .map(|(line_no, id, text, labels)| {
            let id = id.unwrap_or_else(|| format!("line-{line_no}"));
            TextSample::from_text(id, &text, labels, &vocabulary, spec.max_len)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        Dataset {
            samples,
            vocabulary,
            label_names,
            task_mode: spec.task_mode,
        },
        report,
    ))
}

/// The three parts of a split.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub validation: Dataset,
}

/// Seeded 60/20/20 split by count. Test and validation each get
/// `floor(n / 5)` samples; the rounding residue goes to training.
pub fn split_dataset(dataset: &Dataset, seed: u64) -> Result<Split> {
    split_dataset_fold(dataset, seed, 0, 1)
}

/// Like [`split_dataset`], with the shuffled order rotated by
/// `fold * floor(n / folds)` so that `folds` calls give rotated partitions.
pub fn split_dataset_fold(dataset: &Dataset, seed: u64, fold: usize, folds: usize) -> Result<Split> {
    let n = dataset.len();
    if n < 5 {
        return Err(Error::InvalidConfig(format!("dataset of {n} samples is too small to split (need 5)")));
    }
    if folds == 0 || fold >= folds {
        return Err(Error::InvalidConfig(format!("fold {fold} out of range for {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.rotate_left((fold * (n / folds)) % n);
    let n_test = n / 5;
    let n_val = n / 5;
    let n_train = n - n_test - n_val;
    let take = |ix: &[usize]| dataset.with_samples(ix.iter().map(|&i| dataset.samples[i].clone()).collect());
    Ok(Split {
        train: take(&order[..n_train]),
        test: take(&order[n_train..n_train + n_test]),
        validation: take(&order[n_train + n_test..]),
    })
}

pub fn write_jsonl_dataset(path: &Path, rows: &[(String, Vec<String>)]) -> Result<()> {
    let mut out = String::new();
    for (text, labels) in rows {
        let v = serde_json::json!({ "text": text, "labels": labels });
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
