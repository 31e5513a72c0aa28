//! Command-line front end: train, attack, evaluate, report, selftest.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attribution_robustness::attribution::Method;
use attribution_robustness::data::{load_dataset, split_dataset_fold, DatasetSpec};
use attribution_robustness::experiment::{
    build_extractor, evaluate_model, render_report, run_experiment, train_regime, EvalSplit, ExperimentConfig,
    RegimeName, ReportBundle,
};
use attribution_robustness::metrics::{NgramTfIdfEncoder, EmbeddingTfIdfEncoder, SentenceEncoder};
use attribution_robustness::model::{load_checkpoint, save_checkpoint, Vocabulary};
use attribution_robustness::selftest::run_selftest;
use attribution_robustness::{Error, Result};

#[derive(Parser)]
#[command(name = "attrob", version, about = "Attribution robustness of text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one regime on fold 0 and save its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_regime)]
        regime: RegimeName,
    },
    /// Attack a saved model on the evaluated split.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vocabulary file; defaults to the one built from the dataset.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Attribution method (S, DL, IG, A); repeatable.
        #[arg(long = "method", id = "method", value_parser = parse_method, required = true)]
        methods: Vec<Method>,
    },
    /// Full robustness sweep: train every regime, attack, write a bundle.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Render the table of a finished bundle.
    Report {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Run the quick oracle checks.
    Selftest,
}

/// Configuration file plus overrides of its fields.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "ATTROB_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_parser = parse_split)]
    eval_split: Option<EvalSplit>,
    #[arg(long)]
    max_eval_samples: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_regime)]
    regimes: Option<Vec<RegimeName>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    rho_max: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
}

fn parse_regime(s: &str) -> std::result::Result<RegimeName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<EvalSplit, String> {
    match s {
        "test" => Ok(EvalSplit::Test),
        "validation" => Ok(EvalSplit::Validation),
        "train" => Ok(EvalSplit::Train),
        "all" => Ok(EvalSplit::All),
        other => Err(format!("unknown split {other:?}")),
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(root) = &self.output_root {
            // relative to the working directory, not the config file
            c.output_root = Some(std::env::current_dir().map_err(|e| Error::io(".", e))?.join(root));
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.folds {
            c.folds = v;
        }
        if let Some(v) = self.eval_split {
            c.eval_split = v;
        }
        if let Some(v) = self.max_eval_samples {
            c.max_eval_samples = Some(v);
        }
        if let Some(v) = &self.regimes {
            c.regimes = v.clone();
        }
        if let Some(v) = &self.methods {
            c.methods = v.clone();
        }
        if let Some(v) = self.epochs {
            c.training.epochs = v;
        }
        if let Some(v) = self.rho_max {
            c.attack.rho_max = v;
        }
        if let Some(v) = self.k {
            c.attack.k = v;
        }
        Ok(c)
    }
}

fn load_data(config: &ExperimentConfig) -> Result<attribution_robustness::data::Dataset> {
    let spec = DatasetSpec {
        path: config.resolve(&config.dataset.path),
        ..config.dataset.clone()
    };
    Ok(load_dataset(&spec)?.0)
}

fn train(config: ExperimentConfig, regime: RegimeName) -> Result<()> {
    config.validate()?;
    let data = load_data(&config)?;
    let split = split_dataset_fold(&data, config.seeds().split, 0, config.folds)?;
    let extractor = build_extractor(&config, &split.train.samples)?;
    let model = train_regime(&config, regime, &split, extractor.as_ref())?;
    let bundle = ReportBundle::at(&config.output_dir());
    let path = bundle.model_path(regime, 0);
    fs::create_dir_all(path.parent().expect("model dir")).map_err(|e| Error::io(&bundle.dir, e))?;
    save_checkpoint(&path, &model)?;
    data.vocabulary.save(&bundle.dir.join("vocab.txt"))?;
    let log: String = model
        .log
        .iter()
        .map(|r| serde_json::to_string(r).map(|l| l + "\n"))
        .collect::<std::result::Result<_, _>>()?;
    let log_path = bundle.training_log_path(regime, 0);
    fs::create_dir_all(log_path.parent().expect("log dir")).map_err(|e| Error::io(&bundle.dir, e))?;
    fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    println!(
        "{} model: train loss {:.4}, validation loss {}",
        regime.as_str(),
        model.final_train_loss,
        model.final_validation_loss.map_or("-".into(), |v| format!("{v:.4}"))
    );
    println!("checkpoint: {}", path.display());
    Ok(())
}

fn attack(mut config: ExperimentConfig, checkpoint: &Path, vocab: Option<&Path>, methods: Vec<Method>) -> Result<()> {
    config.methods = methods;
    config.validate()?;
    let data = load_data(&config)?;
    let vocabulary = match vocab {
        Some(p) => Vocabulary::load(p)?,
        None => data.vocabulary.clone(),
    };
    if vocabulary != data.vocabulary {
        return Err(Error::InvalidConfig("vocabulary does not match the dataset's".into()));
    }
    let model = load_checkpoint(checkpoint, &vocabulary)?;
    let split = split_dataset_fold(&data, config.seeds().split, 0, config.folds)?;
    let extractor = build_extractor(&config, &split.train.samples)?;
    let samples = match config.eval_split {
        EvalSplit::Test => split.test.samples.clone(),
        EvalSplit::Validation => split.validation.samples.clone(),
        EvalSplit::Train => split.train.samples.clone(),
        EvalSplit::All => data.samples.clone(),
    };
    let samples = &samples[..config.max_eval_samples.unwrap_or(samples.len()).min(samples.len())];
    let encoder: Box<dyn SentenceEncoder> = match config.encoder {
        attribution_robustness::experiment::EncoderSpec::NgramTfidf => Box::new(NgramTfIdfEncoder::fit(
            &split.train.samples,
            2,
            NgramTfIdfEncoder::DEFAULT_BUCKETS,
        )?),
        _ => Box::new(EmbeddingTfIdfEncoder::fit(&model.classifier, &vocabulary, &split.train.samples)),
    };
    let regime = model.regime.short_name();
    let (report, transcripts) = evaluate_model(
        &config,
        regime,
        0,
        &model.classifier,
        &data,
        encoder.as_ref(),
        extractor.as_ref(),
        samples,
    )?;
    let dir = config.output_dir().join("attack");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rows = dir.join("rows.csv");
    fs::write(&rows, report.rows_csv()?).map_err(|e| Error::io(&rows, e))?;
    let mut lines = String::new();
    for t in &transcripts {
        lines.push_str(&serde_json::to_string(t)?);
        lines.push('\n');
    }
    let tpath = dir.join("transcripts.jsonl");
    fs::write(&tpath, lines).map_err(|e| Error::io(&tpath, e))?;
    print!("{}", report.markdown());
    println!("rows: {}", rows.display());
    if !report.failures.is_empty() {
        return Err(Error::Bundle(format!("{} attacks failed", report.failures.len())));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { common, regime } => train(common.load()?, regime)?,
        Command::Attack {
            common,
            checkpoint,
            vocab,
            methods,
        } => attack(common.load()?, &checkpoint, vocab.as_deref(), methods)?,
        Command::Evaluate { common } => {
            let bundle = run_experiment(&common.load()?)?;
            print!("{}", render_report(&bundle.dir)?);
            println!("bundle: {}", bundle.dir.display());
        }
        Command::Report { bundle } => print!("{}", render_report(&bundle)?),
        Command::Selftest => {
            let checks = run_selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
