//! Candidate extractors side by side, and the masked top-5 accuracy used to
//! choose a language model for a domain.
//!
//!     cargo run --release --example candidates
//!     cargo run --release --example candidates -- python3 my_mlm_server.py
//!
//! With arguments, they are run as an external masked-LM process speaking
//! JSON lines (see `ProcessLm`) and scored alongside the built-in ones.

use attribution_robustness::candidates::{
    extract_candidates, top5_accuracy, CandidateExtractor, MaskedLanguageModel, MlmExtractor, ProcessLm, ScriptedLm,
    SynonymTable, UnigramLm,
};
use attribution_robustness::data::{load_dataset, split_dataset};
use attribution_robustness::experiment::ExperimentConfig;
use attribution_robustness::Result;

fn main() -> Result<()> {
    let config = ExperimentConfig::load("crates/core/data/toy_experiment.toml".as_ref())?;
    let mut spec = config.dataset.clone();
    spec.path = config.resolve(&spec.path);
    let (data, _) = load_dataset(&spec)?;
    let split = split_dataset(&data, config.seeds().split)?;

    let table = SynonymTable::load(&config.resolve("toy_synonyms.tsv".as_ref()))?;
    let unigram = MlmExtractor::new(UnigramLm::from_samples(&split.train.samples), "toy");
    let sample = &split.test.samples[0];
    println!("{}\n", sample.text());
    let extractors: [&dyn CandidateExtractor; 2] = [&table, &unigram];
    for (i, word) in sample.tokens.iter().enumerate() {
        print!("{word:>12}:");
        for ex in extractors {
            let c = extract_candidates(ex, i, sample, 3)?;
            print!("  {:<10} {:<32}", ex.name(), c.words().collect::<Vec<_>>().join(","));
        }
        println!();
    }

    let test = &split.test.samples;
    let mut models: Vec<Box<dyn MaskedLanguageModel>> = vec![
        Box::new(UnigramLm::from_samples(&split.train.samples)),
        Box::new(ScriptedLm::oracle(test)),
        Box::new(ScriptedLm::never(test)),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Some((program, rest)) = args.split_first() {
        models.push(Box::new(ProcessLm::spawn(program, rest)?));
    }
    println!("\ntop-5 accuracy on {} test sentences:", test.len());
    for lm in &models {
        let acc = top5_accuracy(lm.as_ref(), test)?;
        println!(
            "  {:<10} micro {:.3} ({}/{})  macro {:.3}",
            lm.name(),
            acc.micro,
            acc.hits,
            acc.total,
            acc.macro_
        );
    }
    Ok(())
}
