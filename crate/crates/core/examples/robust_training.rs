//! Trains the vanilla, adversarial and FAR models of the toy configuration
//! and compares their clean accuracy, accuracy under the training attack,
//! and the loss decomposition of the last FAR epoch.
//!
//!     cargo run --release --example robust_training

use attribution_robustness::data::{load_dataset, split_dataset};
use attribution_robustness::experiment::{build_extractor, train_regime, ExperimentConfig, RegimeName};
use attribution_robustness::model::accuracy;
use attribution_robustness::robust::adversarial_accuracy;
use attribution_robustness::Result;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let config = ExperimentConfig::load("crates/core/data/toy_experiment.toml".as_ref())?;
    let mut spec = config.dataset.clone();
    spec.path = config.resolve(&spec.path);
    let (data, _) = load_dataset(&spec)?;
    let split = split_dataset(&data, config.seeds().split)?;
    let extractor = build_extractor(&config, &split.train.samples)?;
    let far = config.far_config();
    println!(
        "FAR: gamma {} delta {} attack ratio {} (preset {:?})",
        far.gamma, far.delta, far.attack_ratio, far.preset
    );

    println!("\n{:<12} {:>10} {:>12} {:>12}", "regime", "accuracy", "under attack", "train loss");
    let mut last = None;
    for regime in [RegimeName::Vanilla, RegimeName::Adversarial, RegimeName::Far] {
        let model = train_regime(&config, regime, &split, extractor.as_ref())?;
        let test = &split.test.samples;
        let clean = accuracy(&model.classifier, test)?;
        let attacked = adversarial_accuracy(
            &model.classifier,
            &data.vocabulary,
            test,
            extractor.as_ref(),
            &config.training_attack_config(),
        )?;
        println!(
            "{:<14} {clean:>10.3} {attacked:>12.3} {:>12.4}",
            model.regime.to_string(),
            model.final_train_loss
        );
        last = Some(model);
    }

    let far_model = last.expect("three regimes");
    let epoch = far_model.log.last().map_or(0, |r| r.epoch);
    println!("\nlast FAR epoch, per step: total = (1 - delta) * classification + delta * attribution");
    for r in far_model.log.iter().filter(|r| r.epoch == epoch) {
        println!(
            "  step {:>3}: {:.4} = {:.2} * {:.4} + {:.2} * {:.4}  ({} attacked)",
            r.step,
            r.total,
            1.0 - far.delta,
            r.classification_loss,
            far.delta,
            r.attribution_loss,
            r.attacked
        );
    }
    Ok(())
}
