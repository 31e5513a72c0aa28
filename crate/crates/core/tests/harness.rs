use std::path::{Path, PathBuf};

use attribution_robustness::attribution::Method;
use attribution_robustness::candidates::{top5_accuracy, UnigramLm};
use attribution_robustness::data::{load_dataset, DatasetSpec};
use attribution_robustness::experiment::{
    render_report, run_experiment, EvalSplit, ExperimentConfig, Manifest, RegimeName, MANIFEST,
};
use attribution_robustness::metrics::read_rows_csv;
use attribution_robustness::model::{load_checkpoint, TaskMode, Vocabulary};
use attribution_robustness::Error;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn fixture_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(&data_dir().join("fixture20_experiment.toml")).unwrap();
    c.output_root = Some(out.to_path_buf());
    c
}

#[test]
fn vanilla_saliency_on_twenty_rows_gives_twenty_rows_and_one_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = fixture_config(dir.path());
    c.regimes = vec![RegimeName::Vanilla];
    c.methods = vec![Method::Saliency];
    c.eval_split = EvalSplit::All;
    let bundle = run_experiment(&c).unwrap();
    let rows = read_rows_csv(&bundle.rows).unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.regime == "vanilla" && r.method == Method::Saliency));
    let aggregates = std::fs::read_to_string(&bundle.aggregates).unwrap();
    assert_eq!(aggregates.lines().count(), 2, "header plus one aggregate:\n{aggregates}");

    // a single regime renders a one-row table
    let report = render_report(&bundle.dir).unwrap();
    assert_eq!(report.lines().count(), 3, "{report}");
    assert!(report.lines().nth(2).unwrap().starts_with("| vanilla |"));

    let manifest = Manifest::load(&bundle.dir).unwrap();
    assert!(manifest.complete);
    assert!(manifest.completed("train-vanilla-fold0"));
}

#[test]
fn bundle_contents_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = fixture_config(dir.path());
    c.regimes = vec![RegimeName::Vanilla, RegimeName::Far];
    let bundle = run_experiment(&c).unwrap();
    for name in ["config.toml", "seeds.json", "vocab.txt", "report.md", "transcripts.jsonl", "accuracy.csv"] {
        assert!(bundle.dir.join(name).is_file(), "missing {name}");
    }
    // the saved config reloads to the same experiment
    let saved = ExperimentConfig::load(&bundle.config).unwrap();
    assert_eq!(saved.seed, c.seed);
    assert_eq!(saved.regimes, c.regimes);

    // checkpoints reload against the saved vocabulary
    let vocab = Vocabulary::load(&bundle.dir.join("vocab.txt")).unwrap();
    let model = load_checkpoint(&bundle.model_path(RegimeName::Far, 0), &vocab).unwrap();
    assert_eq!(model.regime.short_name(), "far");

    // one transcript per row, carrying regime and no timing
    let rows = read_rows_csv(&bundle.rows).unwrap();
    let transcripts = std::fs::read_to_string(&bundle.transcripts).unwrap();
    assert_eq!(transcripts.lines().count(), rows.len());
    for (line, row) in transcripts.lines().zip(&rows) {
        let t: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(t["regime"], row.regime.as_str());
        assert_eq!(t["sample_id"], row.sample_id.as_str());
        assert!(t.get("wall_time_ms").is_none());
    }
}

#[test]
fn incomplete_bundle_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&fixture_config(dir.path())).unwrap();
    let path = bundle.dir.join(MANIFEST);
    let mut manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    manifest["complete"] = serde_json::Value::Bool(false);
    std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
    assert!(matches!(render_report(&bundle.dir), Err(Error::Bundle(_))));

    // and a directory that never was a bundle
    assert!(render_report(dir.path()).is_err());
}

#[test]
fn report_renders_from_rows_alone() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&fixture_config(dir.path())).unwrap();
    let rendered = render_report(&bundle.dir).unwrap();
    std::fs::remove_file(&bundle.aggregates).unwrap();
    assert_eq!(render_report(&bundle.dir).unwrap(), rendered);
    assert_eq!(std::fs::read_to_string(&bundle.report).unwrap(), rendered);
}

#[test]
fn unigram_top5_on_the_twenty_row_fixture() {
    let spec = DatasetSpec {
        path: data_dir().join("fixture20.jsonl"),
        format: "jsonl".into(),
        task_mode: TaskMode::SingleLabel,
        labels: vec![],
        max_len: 32,
        preprocess: Default::default(),
    };
    let (data, report) = load_dataset(&spec).unwrap();
    assert_eq!((report.total_lines, data.samples.len()), (20, 20));
    let acc = top5_accuracy(&UnigramLm::from_samples(&data.samples), &data.samples).unwrap();
    assert_eq!((acc.hits, acc.total), (47, 78));
    assert!((acc.macro_ - 0.59).abs() < 1e-12);
}

#[test]
fn multilabel_fixture_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
name = "multilabel"
seed = 3
eval_split = "all"
regimes = ["vanilla"]
methods = ["IG"]
encoder = "ngram-tfidf"

[dataset]
path = "fixture_multilabel.jsonl"
task_mode = "multilabel"
max_len = 16

[training]
epochs = 40
batch_size = 4

[attack]
rho_max = 0.5
k = 2
constraint_mode = "label-set-equality"

[attribution]
ig_steps = 10

[candidates]
kind = "synonyms"
path = "toy_synonyms.tsv"
"#;
    let mut c = ExperimentConfig::from_toml_str(text, &data_dir()).unwrap();
    c.output_root = Some(dir.path().to_path_buf());
    let bundle = run_experiment(&c).unwrap();
    let rows = read_rows_csv(&bundle.rows).unwrap();
    // a sample whose predicted label set is empty has no attribution target
    // and is recorded as a failure instead of a row
    let failures = std::fs::read_to_string(bundle.dir.join("failures.jsonl")).unwrap();
    assert!(failures.lines().all(|l| l.contains("label set is empty")), "{failures}");
    assert_eq!(rows.len() + failures.lines().count(), 12);
    assert!(rows.len() >= 9);
    for line in std::fs::read_to_string(&bundle.transcripts).unwrap().lines() {
        let t: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(t["constraint_mode"], "label-set-equality");
        assert_eq!(t["constraint_held"], true);
    }

    // the argmax constraint is rejected for a multilabel task
    c.attack.constraint_mode = attribution_robustness::dare::ConstraintMode::ArgmaxEquality;
    assert!(run_experiment(&c).is_err());
}
