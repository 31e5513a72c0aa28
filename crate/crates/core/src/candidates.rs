//! Substitution candidates for a word position.
//!
//! An extractor maps `(position, sample, k)` to at most `k` ranked words that
//! could replace the word at `position`. Masked language models fit this
//! contract through [`MlmExtractor`]; the crate ships only small stand-ins
//! (a synonym table, a unigram model and scripted models) plus
//! [`ProcessLm`], which talks to an external predictor process.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TextSample, MASK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub word: String,
    pub score: f64,
}

/// Ranked candidates for one position: scores non-increasing, no duplicates,
/// never the original word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub position: usize,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn empty(position: usize) -> Self {
        Self {
            position,
            candidates: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.word.as_str())
    }
}

pub trait CandidateExtractor: Send + Sync {
    fn name(&self) -> &str;

    fn domain(&self) -> &str {
        "general"
    }

    /// Raw ranked proposals; [`extract_candidates`] removes the original
    /// word and duplicates and truncates to `k`.
    fn propose(&self, position: usize, sample: &TextSample, k: usize) -> Result<Vec<Candidate>>;
}

/// Candidates for `position`, cleaned up to satisfy the [`CandidateSet`]
/// invariants whatever the extractor returned.
pub fn extract_candidates(
    extractor: &dyn CandidateExtractor,
    position: usize,
    sample: &TextSample,
    k: usize,
) -> Result<CandidateSet> {
    if position >= sample.len() {
        return Err(Error::Extractor {
            position,
            message: format!("position out of range for a {}-word sample", sample.len()),
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let original = &sample.tokens[position];
    let proposed = extractor.propose(position, sample, k + 1)?;
    let mut seen = HashSet::new();
    let mut candidates: Vec<Candidate> = Vec::with_capacity(k);
    for c in proposed {
        if &c.word == original || c.word.is_empty() || !c.score.is_finite() || !seen.insert(c.word.clone()) {
            continue;
        }
        if let Some(last) = candidates.last() {
            if c.score > last.score {
                return Err(Error::Extractor {
                    position,
                    message: format!("{} returned increasing scores", extractor.name()),
                });
            }
        }
        candidates.push(c);
        if candidates.len() == k {
            break;
        }
    }
    Ok(CandidateSet { position, candidates })
}

/// Word → ranked synonym list, read from `word<TAB>c1,c2,...` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynonymTable {
    entries: Vec<(String, Vec<String>)>,
    index: HashMap<String, usize>,
}

fn valid_word(w: &str) -> bool {
    !w.is_empty() && w.chars().all(|c| c.is_ascii_lowercase() || matches!(c, '\'' | '-' | '.'))
}

impl SynonymTable {
    pub fn from_entries(entries: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, (w, cands)) in entries.iter().enumerate() {
            if !valid_word(w) || cands.is_empty() || !cands.iter().all(|c| valid_word(c)) {
                return Err(Error::InvalidConfig(format!("invalid synonym entry for {w:?}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate synonym entry {w:?}")));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let (word, rest) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(line_no, "expected word<TAB>candidates".into()))?;
            if !valid_word(word) {
                return Err(parse_err(line_no, format!("invalid word {word:?} (lowercase letters only)")));
            }
            let cands: Vec<String> = rest.split(',').map(str::to_string).collect();
            if let Some(bad) = cands.iter().find(|c| !valid_word(c)) {
                return Err(parse_err(line_no, format!("invalid candidate {bad:?} (lowercase letters only)")));
            }
            if index.insert(word.to_string(), entries.len()).is_some() {
                return Err(parse_err(line_no, format!("duplicate entry {word:?}")));
            }
            entries.push((word.to_string(), cands));
        }
        Ok(Self { entries, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// The table in file format, entries in load order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (w, cands) in &self.entries {
            let _ = writeln!(out, "{w}\t{}", cands.join(","));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.dump()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.index.get(word).map_or(&[], |&i| &self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, Vec<String>)] {
        &self.entries
    }
}

impl CandidateExtractor for SynonymTable {
    fn name(&self) -> &str {
        "synonym-table"
    }

    /// Listed order; the `r`-th synonym scores `1 / (r + 1)`.
    fn propose(&self, position: usize, sample: &TextSample, k: usize) -> Result<Vec<Candidate>> {
        Ok(self
            .synonyms(&sample.tokens[position])
            .iter()
            .take(k)
            .enumerate()
            .map(|(r, w)| Candidate {
                word: w.clone(),
                score: 1.0 / (r as f64 + 1.0),
            })
            .collect())
    }
}

/// A masked language model: given the tokens with `<mask>` at
/// `masked_index`, return up to `k` `(word, score)` pairs, scores
/// non-increasing. The original word may appear.
pub trait MaskedLanguageModel: Send + Sync {
    fn name(&self) -> &str;

    fn predict(&self, tokens: &[String], masked_index: usize, k: usize) -> Result<Vec<(String, f64)>>;
}

fn masked_tokens(sample: &TextSample, position: usize) -> Vec<String> {
    let mut tokens = sample.tokens.clone();
    tokens[position] = MASK.to_string();
    tokens
}

/// Uses a masked language model as a candidate extractor.
pub struct MlmExtractor<M> {
    pub lm: M,
    pub domain: String,
}

impl<M: MaskedLanguageModel> MlmExtractor<M> {
    pub fn new(lm: M, domain: impl Into<String>) -> Self {
        Self {
            lm,
            domain: domain.into(),
        }
    }
}

impl<M: MaskedLanguageModel> CandidateExtractor for MlmExtractor<M> {
    fn name(&self) -> &str {
        self.lm.name()
    }

    fn domain(&self) -> &str {
        &self.domain
    }

    fn propose(&self, position: usize, sample: &TextSample, k: usize) -> Result<Vec<Candidate>> {
        let tokens = masked_tokens(sample, position);
        Ok(self
            .lm
            .predict(&tokens, position, k)?
            .into_iter()
            .map(|(word, score)| Candidate { word, score })
            .collect())
    }
}

/// Context-free model ranking words by corpus frequency, ties
/// alphabetical. Scores are relative frequencies.
#[derive(Clone, Debug)]
pub struct UnigramLm {
    ranked: Vec<(String, f64)>,
}

impl UnigramLm {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut total = 0usize;
        for t in tokens {
            *counts.entry(t).or_default() += 1;
            total += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self {
            ranked: ranked
                .into_iter()
                .map(|(w, c)| (w.to_string(), c as f64 / total.max(1) as f64))
                .collect(),
        }
    }

    pub fn from_samples(samples: &[TextSample]) -> Self {
        Self::from_tokens(samples.iter().flat_map(|s| s.tokens.iter().map(String::as_str)))
    }

    pub fn ranked(&self) -> &[(String, f64)] {
        &self.ranked
    }
}

impl MaskedLanguageModel for UnigramLm {
    fn name(&self) -> &str {
        "unigram"
    }

    fn predict(&self, _tokens: &[String], _masked_index: usize, k: usize) -> Result<Vec<(String, f64)>> {
        Ok(self.ranked.iter().take(k).cloned().collect())
    }
}

/// Replays fixed answers keyed by the masked token sequence; unknown
/// queries get `fallback`.
#[derive(Clone, Debug, Default)]
pub struct ScriptedLm {
    name: String,
    answers: HashMap<(Vec<String>, usize), Vec<(String, f64)>>,
    fallback: Vec<(String, f64)>,
}

impl ScriptedLm {
    pub fn new(name: impl Into<String>, fallback: Vec<(String, f64)>) -> Self {
        Self {
            name: name.into(),
            answers: HashMap::new(),
            fallback,
        }
    }

    pub fn answer(&mut self, tokens: Vec<String>, masked_index: usize, response: Vec<(String, f64)>) {
        self.answers.insert((tokens, masked_index), response);
    }

    /// Answers every masked occurrence in `samples` with its hidden word.
    /// Identical masked contexts hiding different words ("the movie was
    /// [MASK]") share one answer listing all of them, so the model is always
    /// right as long as no context hides more than five distinct words.
    pub fn oracle(samples: &[TextSample]) -> Self {
        let mut lm = Self::new("oracle", Vec::new());
        for s in samples {
            for i in 0..s.len() {
                let answer = lm.answers.entry((masked_tokens(s, i), i)).or_default();
                if !answer.iter().any(|(w, _)| *w == s.tokens[i]) {
                    answer.push((s.tokens[i].clone(), 1.0));
                }
            }
        }
        lm
    }

    /// Returns only words that never occur in `samples`.
    pub fn never(samples: &[TextSample]) -> Self {
        let seen: HashSet<&str> = samples.iter().flat_map(|s| s.tokens.iter().map(String::as_str)).collect();
        let mut word = String::from("zzz");
        while seen.contains(word.as_str()) {
            word.push('z');
        }
        Self::new("never", vec![(word, 1.0)])
    }
}

impl MaskedLanguageModel for ScriptedLm {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, tokens: &[String], masked_index: usize, k: usize) -> Result<Vec<(String, f64)>> {
        let key = (tokens.to_vec(), masked_index);
        let answer = self.answers.get(&key).unwrap_or(&self.fallback);
        Ok(answer.iter().take(k).cloned().collect())
    }
}

#[derive(Serialize)]
struct LmRequest<'a> {
    tokens: &'a [String],
    masked_index: usize,
    k: usize,
}

#[derive(Deserialize)]
struct LmResponse {
    #[serde(default)]
    candidates: Vec<(String, f64)>,
    #[serde(default)]
    error: Option<String>,
}

struct LmProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Adapter for an external masked-LM process speaking JSON lines on
/// stdin/stdout.
///
/// Request: `{"tokens": [...], "masked_index": i, "k": k}`.
/// Response: `{"candidates": [["word", score], ...]}` or `{"error": "..."}`.
///
/// Queries are serialized through a mutex, so concurrent attacks sharing
/// one adapter proceed at the speed of a single process; start several
/// adapters for more throughput.
pub struct ProcessLm {
    name: String,
    program: PathBuf,
    process: Mutex<LmProcess>,
}

impl ProcessLm {
    pub fn spawn(program: impl Into<PathBuf>, args: &[String]) -> Result<Self> {
        let program = program.into();
        let mut child = Command::new(&program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(&program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            name: format!("process:{}", program.display()),
            program,
            process: Mutex::new(LmProcess { child, stdin, stdout }),
        })
    }

    fn failure(&self, position: usize, message: impl Into<String>) -> Error {
        Error::Extractor {
            position,
            message: format!("{}: {}", self.program.display(), message.into()),
        }
    }
}

impl MaskedLanguageModel for ProcessLm {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, tokens: &[String], masked_index: usize, k: usize) -> Result<Vec<(String, f64)>> {
        let request = serde_json::to_string(&LmRequest {
            tokens,
            masked_index,
            k,
        })?;
        let mut p = self.process.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(p.stdin, "{request}")
            .and_then(|_| p.stdin.flush())
            .map_err(|e| self.failure(masked_index, e.to_string()))?;
        let mut line = String::new();
        let read = p
            .stdout
            .read_line(&mut line)
            .map_err(|e| self.failure(masked_index, e.to_string()))?;
        if read == 0 {
            return Err(self.failure(masked_index, "process closed its output"));
        }
        let response: LmResponse =
            serde_json::from_str(&line).map_err(|e| self.failure(masked_index, format!("bad response: {e}")))?;
        if let Some(err) = response.error {
            return Err(self.failure(masked_index, err));
        }
        Ok(response.candidates.into_iter().take(k).collect())
    }
}

impl Drop for ProcessLm {
    fn drop(&mut self) {
        if let Ok(p) = self.process.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

/// Fraction of masked word occurrences whose original word is among the
/// model's top 5 predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Top5Accuracy {
    /// Hits over all word occurrences.
    pub micro: f64,
    /// Mean of per-sample hit rates.
    #[serde(rename = "macro")]
    pub macro_: f64,
    pub hits: usize,
    pub total: usize,
}

pub fn top5_accuracy(lm: &dyn MaskedLanguageModel, samples: &[TextSample]) -> Result<Top5Accuracy> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0;
    let mut total = 0;
    let mut per_sample = 0.0;
    for s in samples {
        let mut sample_hits = 0;
        for i in 0..s.len() {
            let predicted = lm.predict(&masked_tokens(s, i), i, 5)?;
            if predicted.iter().take(5).any(|(w, _)| *w == s.tokens[i]) {
                sample_hits += 1;
            }
        }
        hits += sample_hits;
        total += s.len();
        per_sample += sample_hits as f64 / s.len() as f64;
    }
    Ok(Top5Accuracy {
        micro: hits as f64 / total as f64,
        macro_: per_sample / samples.len() as f64,
        hits,
        total,
    })
}
