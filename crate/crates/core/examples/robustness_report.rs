//! Runs an experiment configuration end to end and prints its report.
//!
//!     cargo run --release --example robustness_report -- crates/core/data/toy_experiment.toml [output-root]

use std::path::Path;

use attribution_robustness::experiment::{render_report, run_experiment, ExperimentConfig};

fn main() -> attribution_robustness::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "crates/core/data/toy_experiment.toml".into());
    let mut config = ExperimentConfig::load(Path::new(&path))?;
    if let Some(root) = args.next() {
        config.output_root = Some(std::env::current_dir().expect("working directory").join(root));
    }
    let bundle = run_experiment(&config)?;
    println!("{}", render_report(&bundle.dir)?);
    println!("{}", std::fs::read_to_string(&bundle.accuracy).unwrap_or_default());
    println!("bundle: {}", bundle.dir.display());
    Ok(())
}
