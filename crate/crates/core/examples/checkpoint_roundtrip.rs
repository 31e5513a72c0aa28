//! Saves a trained model, reloads it against the vocabulary file and checks
//! what survives: parameters are stored as 32-bit floats, so the reload
//! equals the f32-rounded model and a second save/load cycle is lossless.
//!
//!     cargo run --release --example checkpoint_roundtrip -- /tmp/toy.ckpt

use std::path::PathBuf;

use attribution_robustness::data::{load_dataset, split_dataset};
use attribution_robustness::experiment::ExperimentConfig;
use attribution_robustness::model::{load_checkpoint, save_checkpoint, train_vanilla, TrainConfig, Vocabulary};
use attribution_robustness::Result;

fn main() -> Result<()> {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy.ckpt".into()));
    let config = ExperimentConfig::load("crates/core/data/toy_experiment.toml".as_ref())?;
    let mut spec = config.dataset.clone();
    spec.path = config.resolve(&spec.path);
    let (data, _) = load_dataset(&spec)?;
    let split = split_dataset(&data, config.seeds().split)?;
    let train = TrainConfig {
        epochs: 5,
        ..config.train_config()
    };
    let model = train_vanilla(&split.train, &[], &train)?;
    save_checkpoint(&path, &model)?;
    let vocab_path = path.with_extension("vocab.txt");
    data.vocabulary.save(&vocab_path)?;

    let vocabulary = Vocabulary::load(&vocab_path)?;
    let restored = load_checkpoint(&path, &vocabulary)?;
    let mut worst: f64 = 0.0;
    for s in &split.test.samples {
        let (a, b) = (model.classifier.logits(s)?, restored.classifier.logits(s)?);
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    println!(
        "{} ({} bytes): regime {}, {} labels {:?}, vocabulary hash {}",
        path.display(),
        std::fs::metadata(&path).map_err(|e| attribution_robustness::Error::io(&path, e))?.len(),
        restored.regime,
        restored.label_names.len(),
        restored.label_names,
        vocabulary.content_hash()
    );
    println!("max logit difference after reload: {worst:e}");
    let rounded: Vec<Vec<f64>> = model
        .classifier
        .parameters()
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f32 as f64).collect())
        .collect();
    let reloaded: Vec<Vec<f64>> = restored.classifier.parameters().iter().map(|t| t.data().to_vec()).collect();
    assert_eq!(rounded, reloaded);
    save_checkpoint(&path, &restored)?;
    assert_eq!(load_checkpoint(&path, &vocabulary)?, restored);
    println!("reload equals the f32-rounded parameters; second round trip is exact");

    // a checkpoint refuses a vocabulary it was not trained with
    let other = Vocabulary::build(["just", "three", "words"], 1);
    match load_checkpoint(&path, &other) {
        Err(e) => println!("wrong vocabulary rejected: {e}"),
        Ok(_) => println!("wrong vocabulary accepted?"),
    }
    Ok(())
}
