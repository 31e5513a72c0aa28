//! Attacks one sentence with the greedy attribution attack and compares the
//! result with exhaustive search over the same candidates.
//!
//!     cargo run --release --example dare_attack -- "the film was quite dull and the ending was weak"

use attribution_robustness::attribution::{AttributionConfig, Method};
use attribution_robustness::candidates::SynonymTable;
use attribution_robustness::dare::{brute_force_attack, dare_attack, AttackConfig, BRUTE_FORCE_MAX_K};
use attribution_robustness::data::{load_dataset, split_dataset};
use attribution_robustness::experiment::ExperimentConfig;
use attribution_robustness::model::{train_vanilla, LabelSet, TextSample};
use attribution_robustness::Result;

fn main() -> Result<()> {
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "the film was quite dull and the ending was weak".into());
    let config = ExperimentConfig::load("crates/core/data/toy_experiment.toml".as_ref())?;
    let mut spec = config.dataset.clone();
    spec.path = config.resolve(&spec.path);
    let (data, _) = load_dataset(&spec)?;
    let split = split_dataset(&data, config.seeds().split)?;
    let model = train_vanilla(&split.train, &[], &config.train_config())?.classifier;
    let table = SynonymTable::load(&config.resolve("toy_synonyms.tsv".as_ref()))?;

    let sample = TextSample::from_text("input", &text, LabelSet::single(0), &data.vocabulary, spec.max_len)?;
    let attribution = AttributionConfig::new(Method::IntegratedGradients).with_ig_steps(50);
    let attack = AttackConfig {
        rho_max: 0.3,
        k: BRUTE_FORCE_MAX_K,
        ..config.eval_attack()
    };
    let greedy = dare_attack(&sample, &model, &data.vocabulary, &attribution, &table, &attack)?;
    println!("original:    {}", sample.text());
    println!("adversarial: {}", greedy.adversarial.text());
    println!(
        "prediction {:?} kept: {}; {} of {} words changed; cos(A_adv, A) = {:.4}",
        greedy.labels.to_vec(),
        greedy.constraint_held,
        greedy.n,
        sample.len(),
        1.0 - greedy.d_max
    );
    println!("\nranking ({:?}): {:?}", greedy.ranking.source, greedy.ranking.order);
    for step in &greedy.trace {
        let value = step.value.map_or("-".into(), |v| format!("{v:.4}"));
        println!("  position {:>2} -> {:<12} {:?} {value}", step.position, step.candidate, step.outcome);
    }

    let oracle = brute_force_attack(&sample, &model, &data.vocabulary, &attribution, &table, &attack)?;
    println!(
        "\nexhaustive search: {} (d = {:.4}); greedy reaches {:.1}% of it in {:?} vs {:?}",
        oracle.adversarial.text(),
        oracle.d_max,
        100.0 * greedy.d_max / oracle.d_max.max(f64::MIN_POSITIVE),
        greedy.wall_time,
        oracle.wall_time
    );
    println!("\n{}", serde_json::to_string_pretty(&greedy.transcript(&attack, Method::IntegratedGradients))?);
    Ok(())
}
