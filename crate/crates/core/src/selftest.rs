//! Quick oracle checks behind `attrob selftest`: finite differences,
//! attribution axioms, exhaustive search, stub language models and the
//! degenerate training settings. Each check takes well under a second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attribution::{attribute, attribute_embeddings, AttributionConfig, Baseline, Method};
use crate::autodiff::Tensor;
use crate::candidates::{top5_accuracy, ScriptedLm, SynonymTable};
use crate::dare::{brute_force_attack, dare_attack, AttackConfig};
use crate::data::Dataset;
use crate::error::Result;
use crate::model::{
    train_vanilla, Architecture, LabelSet, Pooling, ReferenceClassifier, TaskMode, TextSample, TrainConfig, Vocabulary,
};
use crate::robust::{adversarial_train, AdvTrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const WORDS: &str = "good fine great bad poor awful movie film plot story the was";
const SYNONYMS: &str = "awful\tbad,poor\nbad\tpoor,awful\nfilm\tmovie\nfine\tgood,great\ngood\tfine,great\n\
great\tgood,fine\nmovie\tfilm\nplot\tstory\npoor\tbad,awful\nstory\tplot\n";

fn vocab() -> Vocabulary {
    Vocabulary::build(WORDS.split(' '), 1)
}

fn random_sample(rng: &mut ChaCha8Rng, vocab: &Vocabulary, len: usize, label: usize) -> TextSample {
    let words: Vec<&str> = WORDS.split(' ').collect();
    let text: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect();
    TextSample::from_text("selftest", &text.join(" "), LabelSet::single(label), vocab, 16).expect("non-empty")
}

fn model(pooling: Pooling, labels: usize, seed: u64) -> ReferenceClassifier {
    let arch = Architecture::reference(vocab().len(), labels, pooling, TaskMode::SingleLabel);
    ReferenceClassifier::init(arch, seed)
}

fn logit_sum(model: &ReferenceClassifier, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let out = model.forward(x)?;
    Ok(labels.iter().map(|&l| out.data()[l]).sum())
}

/// Input gradient of the label-0 logit against central differences.
fn gradient_check() -> Result<Check> {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let m = model(Pooling::Attention, 3, seed);
        let x = m.embed(&random_sample(&mut rng, &v, 5, 0))?;
        let grad = m.grad_wrt_embeddings(&x, |g, _, _, fwd| {
            let mask = g.constant(Tensor::row(vec![1.0, 0.0, 0.0]));
            let picked = g.mul(fwd.logits, mask);
            Ok(g.sum(picked))
        })?;
        let h = 1e-6;
        for i in 0..x.data().len() {
            let (mut plus, mut minus) = (x.clone(), x.clone());
            plus.data_mut()[i] += h;
            minus.data_mut()[i] -= h;
            let fd = (logit_sum(&m, &plus, &[0])? - logit_sum(&m, &minus, &[0])?) / (2.0 * h);
            let err = (fd - grad.data()[i]).abs() / fd.abs().max(1e-6).max(grad.data()[i].abs());
            if fd.abs() > 1e-8 {
                worst = worst.max(err);
            }
        }
    }
    Ok(Check {
        name: "gradient vs finite differences",
        passed: worst < 1e-3,
        detail: format!("max relative error {worst:.2e}"),
    })
}

fn completeness_checks() -> Result<Vec<Check>> {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut ig_err, mut dl_err): (f64, f64) = (0.0, 0.0);
    for seed in 0..5 {
        let m = model(Pooling::Mean, 3, 100 + seed);
        let x = m.embed(&random_sample(&mut rng, &v, 6, 0))?;
        let delta = logit_sum(&m, &x, &[1])? - logit_sum(&m, &Tensor::zeros(x.rows(), x.cols()), &[1])?;
        let ig = AttributionConfig::new(Method::IntegratedGradients).with_ig_steps(256);
        let dl = AttributionConfig {
            method: Method::DeepLift,
            baseline: Baseline::Zero,
            ..AttributionConfig::default()
        };
        let sum = |c: &AttributionConfig| -> Result<f64> { Ok(attribute_embeddings(&m, &x, &[1], c)?.per_word.iter().sum()) };
        ig_err = ig_err.max((sum(&ig)? - delta).abs());
        dl_err = dl_err.max((sum(&dl)? - delta).abs());
    }
    Ok(vec![
        Check {
            name: "integrated gradients completeness",
            passed: ig_err < 1e-3,
            detail: format!("max |sum - delta| {ig_err:.2e} at 256 steps"),
        },
        Check {
            name: "DeepLIFT summation to delta",
            passed: dl_err < 1e-9,
            detail: format!("max |sum - delta| {dl_err:.2e}"),
        },
    ])
}

fn multilabel_check() -> Result<Check> {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = model(Pooling::Attention, 4, 7);
    let s = random_sample(&mut rng, &v, 6, 0);
    let mut worst: f64 = 0.0;
    for method in [Method::Saliency, Method::IntegratedGradients, Method::DeepLift] {
        let c = AttributionConfig::new(method).with_ig_steps(16);
        let set = LabelSet::multi([0, 2, 3]);
        let joint = attribute(&m, &s, &set, &c)?;
        let mut sum = vec![0.0; s.len()];
        for l in [0, 2, 3] {
            for (a, b) in sum.iter_mut().zip(attribute(&m, &s, &LabelSet::single(l), &c)?.per_word) {
                *a += b;
            }
        }
        for (a, b) in joint.per_word.iter().zip(&sum) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Check {
        name: "label-set map is the sum of single-label maps",
        passed: worst < 1e-9,
        detail: format!("max deviation {worst:.2e}"),
    })
}

fn oracle_check() -> Result<Check> {
    let v = vocab();
    let table = SynonymTable::parse(SYNONYMS, std::path::Path::new("selftest"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    let mut ratios = Vec::new();
    for seed in 0..6 {
        let m = model(Pooling::Attention, 2, 200 + seed);
        let s = random_sample(&mut rng, &v, 5, 0);
        let s = s.with_labels(m.predict(&s)?);
        let config = AttackConfig {
            rho_max: 0.4,
            k: 2,
            ..AttackConfig::default()
        };
        let attribution = AttributionConfig::new(Method::Saliency);
        let greedy = dare_attack(&s, &m, &v, &attribution, &table, &config)?;
        let oracle = brute_force_attack(&s, &m, &v, &attribution, &table, &config)?;
        ok &= greedy.d_max <= oracle.d_max + 1e-12 && greedy.constraint_held;
        if oracle.d_max > 0.0 {
            ratios.push(greedy.d_max / oracle.d_max);
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    Ok(Check {
        name: "greedy attack never beats exhaustive search",
        passed: ok,
        detail: format!("mean greedy/oracle ratio {mean:.3}"),
    })
}

fn top5_check() -> Result<Check> {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<TextSample> = (0..4).map(|_| random_sample(&mut rng, &v, 4, 0)).collect();
    let always = top5_accuracy(&ScriptedLm::oracle(&samples), &samples)?;
    let never = top5_accuracy(&ScriptedLm::never(&samples), &samples)?;
    Ok(Check {
        name: "top-5 accuracy on stub models",
        passed: always.micro == 1.0 && never.micro == 0.0,
        detail: format!("always {} / never {}", always.micro, never.micro),
    })
}

fn zero_ratio_check() -> Result<Check> {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples = (0..8).map(|i| random_sample(&mut rng, &v, 4, i % 2)).collect();
    let data = Dataset {
        samples,
        vocabulary: v,
        label_names: vec!["a".into(), "b".into()],
        task_mode: TaskMode::SingleLabel,
    };
    let train = TrainConfig {
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let table = SynonymTable::parse(SYNONYMS, std::path::Path::new("selftest"))?;
    let vanilla = train_vanilla(&data, &[], &train)?;
    let adv = adversarial_train(
        &data,
        &[],
        &AdvTrainConfig {
            train,
            attack_ratio: 0.0,
            attack: AttackConfig::default(),
        },
        &table,
    )?;
    Ok(Check {
        name: "attack ratio 0 reproduces vanilla training",
        passed: vanilla.classifier.parameters() == adv.classifier.parameters(),
        detail: "parameter trajectories compared exactly".into(),
    })
}

/// Runs every check; an error inside a check counts as a failure.
pub fn run_selftest() -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<Vec<Check>>| match r {
        Ok(c) => out.extend(c),
        Err(e) => out.push(Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        }),
    };
    push("gradient vs finite differences", gradient_check().map(|c| vec![c]));
    push("attribution completeness", completeness_checks());
    push("label-set additivity", multilabel_check().map(|c| vec![c]));
    push("greedy vs exhaustive", oracle_check().map(|c| vec![c]));
    push("top-5 accuracy", top5_check().map(|c| vec![c]));
    push("zero attack ratio", zero_ratio_check().map(|c| vec![c]));
    out
}
