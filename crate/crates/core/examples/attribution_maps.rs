//! Trains a small model on the toy corpus and prints the four attribution
//! maps of one sentence, plus how far the IG sum is from the logit change.
//!
//!     cargo run --release --example attribution_maps -- "the movie was really good"

use attribution_robustness::attribution::{attribute, baseline_embeddings, AttributionConfig, Method};
use attribution_robustness::data::{load_dataset, split_dataset};
use attribution_robustness::experiment::ExperimentConfig;
use attribution_robustness::model::{train_vanilla, LabelSet, TextSample, TrainConfig};
use attribution_robustness::Result;

fn main() -> Result<()> {
    let text = std::env::args().nth(1).unwrap_or_else(|| "the movie was really good and the plot was superb".into());
    let config = ExperimentConfig::load("crates/core/data/toy_experiment.toml".as_ref())?;
    let mut spec = config.dataset.clone();
    spec.path = config.resolve(&spec.path);
    let (data, _) = load_dataset(&spec)?;
    let split = split_dataset(&data, config.seeds().split)?;
    let train = TrainConfig {
        epochs: 10,
        ..config.train_config()
    };
    let model = train_vanilla(&split.train, &split.validation.samples, &train)?.classifier;

    let sample = TextSample::from_text("input", &text, LabelSet::single(0), &data.vocabulary, spec.max_len)?;
    let labels = model.predict(&sample)?;
    let names: Vec<&str> = labels.iter().map(|l| data.label_names[l].as_str()).collect();
    println!("prediction: {}\n", names.join(", "));

    print!("{:>12}", "");
    for m in Method::ALL {
        print!("{:>10}", m.tag());
    }
    println!();
    let maps: Vec<_> = Method::ALL
        .iter()
        .map(|&m| attribute(&model, &sample, &labels, &AttributionConfig::new(m).with_ig_steps(50)))
        .collect::<Result<_>>()?;
    for (i, word) in sample.tokens.iter().enumerate() {
        print!("{word:>12}");
        for map in &maps {
            print!("{:>10.4}", map.per_word[i]);
        }
        println!();
    }

    // completeness: the IG scores add up to F(x) - F(baseline), up to the
    // Riemann-sum error that shrinks with the step count
    let x = model.embed(&sample)?;
    let base = baseline_embeddings(&model, &x, AttributionConfig::default().baseline);
    let target = |t| -> Result<f64> {
        let out = model.forward(t)?;
        Ok(labels.iter().map(|l| out.data()[l]).sum())
    };
    let delta = target(&x)? - target(&base)?;
    println!("\nF(x) - F(baseline) = {delta:.6}");
    for steps in [8, 50, 256] {
        let ig = attribute(&model, &sample, &labels, &AttributionConfig::new(Method::IntegratedGradients).with_ig_steps(steps))?;
        let sum: f64 = ig.per_word.iter().sum();
        println!("IG with {steps:>3} steps sums to {sum:.6} (error {:.2e})", (sum - delta).abs());
    }
    println!("\n{}", maps[2].to_record("input"));
    Ok(())
}
