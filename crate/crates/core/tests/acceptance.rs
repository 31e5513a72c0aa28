//! Acceptance suite: one PASS/FAIL line per criterion. Expected values come
//! from oracles written here (direct forward passes, hand-derived closed
//! forms, set comparisons, enumerated counts), not from the library paths
//! under test.
//!
//!     cargo test --release --test acceptance -- --nocapture

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use attribution_robustness::attribution::{attribute, AttributionConfig, Baseline, Method};
use attribution_robustness::autodiff::Tensor;
use attribution_robustness::candidates::{top5_accuracy, ScriptedLm, SynonymTable, UnigramLm};
use attribution_robustness::dare::{brute_force_attack, dare_attack, prediction_constraint, AttackConfig, ConstraintMode};
use attribution_robustness::data::{load_dataset, Dataset, DatasetSpec};
use attribution_robustness::experiment::{render_report, run_experiment, ExperimentConfig};
use attribution_robustness::model::{
    classification_loss_value, loss_and_gradients, train_vanilla, Architecture, LabelSet, Pooling, ReferenceClassifier,
    TaskMode, TextSample, TrainConfig, Vocabulary,
};
use attribution_robustness::robust::{
    adversarial_train, far_inner_max, far_train, training_attack, AdvTrainConfig, FarConfig,
};

const WORDS: [&str; 12] = [
    "good", "fine", "great", "bad", "poor", "awful", "movie", "film", "plot", "story", "the", "was",
];
const SYNONYMS: &str = "awful\tbad,poor,lousy\nbad\tpoor,awful,lousy\nfilm\tmovie,picture\nfine\tgood,great,nice\n\
good\tfine,great,nice\ngreat\tgood,fine,superb\nmovie\tfilm,picture\nplot\tstory,storyline\npoor\tbad,awful,weak\n\
story\tplot,storyline\n";

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn vocab() -> Vocabulary {
    Vocabulary::build(WORDS.iter().copied(), 1)
}

fn table() -> SynonymTable {
    SynonymTable::parse(SYNONYMS, Path::new("acceptance")).unwrap()
}

fn random_sample(rng: &mut ChaCha8Rng, v: &Vocabulary, len: usize, labels: LabelSet) -> TextSample {
    let text: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    TextSample::from_text("a", &text.join(" "), labels, v, 16).unwrap()
}

fn model(pooling: Pooling, labels: usize, mode: TaskMode, seed: u64) -> ReferenceClassifier {
    ReferenceClassifier::init(Architecture::reference(vocab().len(), labels, pooling, mode), seed)
}

fn with_random_biases(mut m: ReferenceClassifier, seed: u64) -> ReferenceClassifier {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.parameters().len();
    for i in [n - 3, n - 1] {
        for x in m.parameters_mut()[i].data_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
    m
}

// ---- independent arithmetic ----

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum()).collect())
        .collect()
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// Mean-pool forward written out by hand: relu(mean(x) W1 + b1) W2 + b2.
fn mean_pool_forward(m: &ReferenceClassifier, x: &[Vec<f64>]) -> Vec<f64> {
    let p = m.parameters();
    let n = p.len();
    let (w1, b1, w2, b2) = (rows_of(&p[n - 4]), &p[n - 3], rows_of(&p[n - 2]), &p[n - 1]);
    let h = x[0].len();
    let pooled: Vec<f64> = (0..h).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64).collect();
    let hidden: Vec<f64> = matmul(&[pooled], &w1)[0]
        .iter()
        .zip(b1.data())
        .map(|(a, b)| (a + b).max(0.0))
        .collect();
    matmul(&[hidden], &w2)[0].iter().zip(b2.data()).map(|(a, b)| a + b).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---- criteria ----

struct Outcome {
    passed: bool,
    detail: String,
}

fn axioms() -> Outcome {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let ig256 = AttributionConfig::new(Method::IntegratedGradients).with_ig_steps(256);
    let dl = AttributionConfig {
        method: Method::DeepLift,
        baseline: Baseline::Zero,
        ..AttributionConfig::default()
    };

    // completeness and summation-to-delta on the initialized mean-pool nets
    let (mut ig_err, mut dl_err, mut hard_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..20u64 {
        let m = model(Pooling::Mean, 3, TaskMode::SingleLabel, case);
        let len = 1 + case as usize % 8;
        let s = random_sample(&mut rng, &v, len, LabelSet::single(0));
        let label = case as usize % 3;
        let x = rows_of(&m.embed(&s).unwrap());
        let zero = vec![vec![0.0; x[0].len()]; x.len()];
        let delta = mean_pool_forward(&m, &x)[label] - mean_pool_forward(&m, &zero)[label];
        let ls = LabelSet::single(label);
        let ig_sum: f64 = attribute(&m, &s, &ls, &ig256).unwrap().per_word.iter().sum();
        let dl_sum: f64 = attribute(&m, &s, &ls, &dl).unwrap().per_word.iter().sum();
        ig_err = ig_err.max((ig_sum - delta).abs());
        dl_err = dl_err.max((dl_sum - delta).abs());

        // informational: nonzero hidden biases make the path gradient vary
        let hard = with_random_biases(model(Pooling::Mean, 3, TaskMode::SingleLabel, case), 900 + case);
        let delta = mean_pool_forward(&hard, &x)[label] - mean_pool_forward(&hard, &zero)[label];
        let sum: f64 = attribute(&hard, &s, &ls, &ig256).unwrap().per_word.iter().sum();
        hard_err = hard_err.max((sum - delta).abs());
    }

    // affine model: hidden units always active, so dF_l/dx[i][j] = (W1 W2)[j][l] / n
    let mut closed_err: f64 = 0.0;
    for seed in 0..5u64 {
        let mut m = model(Pooling::Mean, 2, TaskMode::SingleLabel, 50 + seed);
        let n = m.parameters().len();
        m.parameters_mut()[n - 3].data_mut().iter_mut().for_each(|b| *b = 100.0);
        let w = matmul(&rows_of(&m.parameters()[n - 4]), &rows_of(&m.parameters()[n - 2]));
        let s = random_sample(&mut rng, &v, 2 + seed as usize, LabelSet::single(0));
        let x = rows_of(&m.embed(&s).unwrap());
        let len = x.len() as f64;
        for label in 0..2 {
            let ls = LabelSet::single(label);
            let maps = [
                (Method::Saliency, attribute(&m, &s, &ls, &AttributionConfig::new(Method::Saliency)).unwrap()),
                (Method::IntegratedGradients, attribute(&m, &s, &ls, &ig256.clone().with_ig_steps(3)).unwrap()),
                (Method::DeepLift, attribute(&m, &s, &ls, &dl).unwrap()),
            ];
            for (method, map) in &maps {
                for (i, row) in x.iter().enumerate() {
                    let mut word = 0.0;
                    for (j, xij) in row.iter().enumerate() {
                        let g = w[j][label] / len;
                        let expected = match method {
                            Method::Saliency => g.abs(),
                            _ => g * xij,
                        };
                        closed_err = closed_err.max((map.per_embedding.get(i, j) - expected).abs());
                        word += expected;
                    }
                    closed_err = closed_err.max((map.per_word[i] - word).abs());
                }
            }
        }
    }
    Outcome {
        passed: ig_err < 1e-3 && dl_err < 1e-9 && closed_err < 1e-9,
        detail: format!(
            "IG completeness max err {ig_err:.2e} (m=256, 20 cases); DeepLIFT delta err {dl_err:.2e}; \
             closed forms S/IG/DL max err {closed_err:.2e}; [info] IG err with nonzero biases {hard_err:.2e}"
        ),
    }
}

fn gradients() -> Outcome {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst, mut compared, mut kinks): (f64, usize, usize) = (0.0, 0, 0);
    let mut record = |analytic: f64, f: &dyn Fn(f64) -> f64| {
        let fd = |h: f64| (f(h) - f(-h)) / (2.0 * h);
        let (a, b) = (fd(1e-6), fd(1e-5));
        // disagreement between step sizes means a ReLU kink is within reach
        if (a - b).abs() > 1e-5 * (1.0 + a.abs()) {
            kinks += 1;
            return;
        }
        let scale = analytic.abs().max(a.abs());
        if scale > 1e-5 {
            worst = worst.max((analytic - a).abs() / scale);
            compared += 1;
        }
    };
    for case in 0..24u64 {
        let pooling = if case % 2 == 0 { Pooling::Mean } else { Pooling::Attention };
        let mode = if case % 4 < 2 { TaskMode::SingleLabel } else { TaskMode::Multilabel };
        let m = with_random_biases(model(pooling, 3, mode, 300 + case), 400 + case);
        let labels = match mode {
            TaskMode::SingleLabel => LabelSet::single(case as usize % 3),
            TaskMode::Multilabel => LabelSet::multi([0, 2]),
        };
        let s = random_sample(&mut rng, &v, 2 + case as usize % 6, labels.clone());

        // input gradient of the loss
        let x = m.embed(&s).unwrap();
        let (_, grads) = loss_and_gradients(&m, &s, &labels).unwrap();
        let embedding_grad = &grads.0[0];
        for (pos, &id) in s.ids.iter().enumerate() {
            for j in 0..x.cols() {
                // every occurrence of the word shares the embedding row
                let _ = pos;
                let analytic = embedding_grad.get(id, j);
                let f = |h: f64| {
                    let mut p = m.clone();
                    p.parameters_mut()[0].data_mut()[id * x.cols() + j] += h;
                    classification_loss_value(&p, &s, &labels).unwrap()
                };
                record(analytic, &f);
            }
        }
        // a handful of entries of every other parameter
        for k in 1..m.parameters().len() {
            let size = m.parameters()[k].len();
            for _ in 0..4 {
                let e = rng.gen_range(0..size);
                let f = |h: f64| {
                    let mut p = m.clone();
                    p.parameters_mut()[k].data_mut()[e] += h;
                    classification_loss_value(&p, &s, &labels).unwrap()
                };
                record(grads.0[k].data()[e], &f);
            }
        }
    }
    Outcome {
        passed: worst < 1e-3 && compared > 100,
        detail: format!("max relative error {worst:.2e} over {compared} entries in 24 cases ({kinks} near kinks skipped)"),
    }
}

fn oracle_dominance() -> Outcome {
    let v = vocab();
    let t = table();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = Vec::new();
    let mut ratios = Vec::new();
    for case in 0..50u64 {
        let method = Method::ALL[case as usize % 4];
        // attention maps need attention pooling
        let pooling = if case % 2 == 0 || method == Method::Attention { Pooling::Attention } else { Pooling::Mean };
        let m = with_random_biases(model(pooling, 2, TaskMode::SingleLabel, 500 + case), 600 + case);
        let len = rng.gen_range(3..=8);
        let s = random_sample(&mut rng, &v, len, LabelSet::single(0));
        let attribution = AttributionConfig::new(method).with_ig_steps(16);
        let config = AttackConfig {
            rho_max: [0.25, 0.34, 0.5][case as usize % 3],
            k: 1 + case as usize % 3,
            ..AttackConfig::default()
        };
        let greedy = dare_attack(&s, &m, &v, &attribution, &t, &config).unwrap();
        let oracle = brute_force_attack(&s, &m, &v, &attribution, &t, &config).unwrap();
        if greedy.d_max > oracle.d_max + 1e-12 {
            violations.push(format!("case {case}: greedy {} > oracle {}", greedy.d_max, oracle.d_max));
        }
        let predicted = argmax(&m.logits(&s).unwrap());
        let original_map = attribute(&m, &s, &LabelSet::single(predicted), &attribution).unwrap();
        for (name, r) in [("greedy", &greedy), ("oracle", &oracle)] {
            if argmax(&m.logits(&r.adversarial).unwrap()) != predicted {
                violations.push(format!("case {case}: {name} adversary changes the prediction"));
            }
            let changed = s.tokens.iter().zip(&r.adversarial.tokens).filter(|(a, b)| a != b).count();
            if changed != r.n || changed as f64 > config.rho_max * len as f64 {
                violations.push(format!("case {case}: {name} substitutes {changed} of {len} words"));
            }
            let d = if changed == 0 {
                0.0
            } else {
                let map = attribute(&m, &r.adversarial, &LabelSet::single(predicted), &attribution).unwrap();
                1.0 - cosine(&map.per_word, &original_map.per_word)
            };
            if (d - r.d_max).abs() > 1e-9 {
                violations.push(format!("case {case}: {name} reports d {} but recomputed {d}", r.d_max));
            }
        }
        if oracle.d_max > 0.0 {
            ratios.push(greedy.d_max / oracle.d_max);
        }
    }
    Outcome {
        passed: violations.is_empty(),
        detail: if violations.is_empty() {
            format!(
                "50 instances, no violations; [info] mean greedy/oracle ratio {:.3} over {} nonzero oracles",
                mean(&ratios),
                ratios.len()
            )
        } else {
            violations.join("; ")
        },
    }
}

fn multilabel() -> Outcome {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    let subsets: [&[usize]; 4] = [&[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]];
    for case in 0..8u64 {
        let pooling = if case % 2 == 0 { Pooling::Attention } else { Pooling::Mean };
        let m = with_random_biases(model(pooling, 3, TaskMode::Multilabel, 700 + case), 800 + case);
        let s = random_sample(&mut rng, &v, 2 + case as usize % 6, LabelSet::multi([0]));
        for method in Method::ALL {
            if method == Method::Attention && pooling == Pooling::Mean {
                continue;
            }
            let c = AttributionConfig::new(method).with_ig_steps(12);
            for set in subsets {
                let joint = attribute(&m, &s, &LabelSet::multi(set.iter().copied()), &c).unwrap();
                let mut sum = vec![0.0; s.len()];
                for &l in set {
                    let single = attribute(&m, &s, &LabelSet::single(l), &c).unwrap();
                    sum.iter_mut().zip(&single.per_word).for_each(|(a, b)| *a += b);
                }
                for (a, b) in joint.per_word.iter().zip(&sum) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }

    // label-set constraint against plain set comparison, every pair of
    // logit vectors on a grid that includes the threshold itself
    let grid = [-2.0, -0.5, 0.0, 0.5, 2.0];
    let mut vectors = Vec::new();
    for a in grid {
        for b in grid {
            for c in grid {
                vectors.push([a, b, c]);
            }
        }
    }
    let set_of = |z: &[f64; 3]| -> BTreeSet<usize> { (0..3).filter(|&i| 1.0 / (1.0 + (-z[i]).exp()) > 0.5).collect() };
    let mut mismatches = 0;
    for original in &vectors {
        let labels = LabelSet::multi(set_of(original));
        for candidate in &vectors {
            let expected = set_of(original) == set_of(candidate);
            if prediction_constraint(&labels, candidate, ConstraintMode::LabelSetEquality) != expected {
                mismatches += 1;
            }
        }
    }
    let pairs = vectors.len() * vectors.len();
    Outcome {
        passed: worst < 1e-9 && mismatches == 0,
        detail: format!("additivity max deviation {worst:.2e}; constraint mismatches {mismatches}/{pairs}"),
    }
}

struct ToyRun {
    /// (regime, method) -> (cos values, r values)
    rows: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)>,
    seconds: f64,
}

fn read_rows(path: &Path) -> BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (regime, method, cos, r) = (col("regime"), col("method"), col("cos"), col("r"));
    let mut out: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let e = out.entry((f[regime].to_string(), f[method].to_string())).or_default();
        e.0.push(f[cos].parse().unwrap());
        e.1.push(f[r].parse().unwrap());
    }
    out
}

fn toy_run() -> ToyRun {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::load(&data_dir().join("toy_experiment.toml")).unwrap();
    config.output_root = Some(dir.path().to_path_buf());
    let bundle = run_experiment(&config).unwrap();
    ToyRun {
        rows: read_rows(&bundle.rows),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn trend(run: &ToyRun) -> Outcome {
    let stat = |regime: &str| {
        let (cos, r) = &run.rows[&(regime.to_string(), "IG".to_string())];
        (mean(cos), mean(r), cos.len())
    };
    let (van, adv, far) = (stat("vanilla"), stat("adversarial"), stat("far"));
    let passed = adv.0 - van.0 >= 0.05 && far.0 - adv.0 >= 0.05 && van.1 > adv.1 && adv.1 > far.1;
    Outcome {
        passed,
        detail: format!(
            "IG cos vanilla {:.3} -> adversarial {:.3} -> far {:.3}; r(s) {:.3} -> {:.3} -> {:.3} ({} test samples, {:.0} s)",
            van.0, adv.0, far.0, van.1, adv.1, far.1, van.2, run.seconds
        ),
    }
}

fn transfer(run: &ToyRun) -> Outcome {
    let cos = |regime: &str, method: &str| mean(&run.rows[&(regime.to_string(), method.to_string())].0);
    let s = cos("far", "S") - cos("vanilla", "S");
    let dl = cos("far", "DL") - cos("vanilla", "DL");
    Outcome {
        passed: s > 0.0 && dl > 0.0,
        detail: format!(
            "far - vanilla cos: S {s:+.3} ({:.3} -> {:.3}), DL {dl:+.3} ({:.3} -> {:.3})",
            cos("vanilla", "S"),
            cos("far", "S"),
            cos("vanilla", "DL"),
            cos("far", "DL")
        ),
    }
}

fn endpoint_data() -> Dataset {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let positive = ["good", "fine", "great"];
    let negative = ["bad", "poor", "awful"];
    let nouns = ["movie", "film", "plot", "story"];
    let samples = (0..12)
        .map(|i| {
            let adjectives = if i % 2 == 0 { positive } else { negative };
            let text = format!(
                "the {} was {} {}",
                nouns[rng.gen_range(0..4)],
                adjectives[rng.gen_range(0..3)],
                adjectives[rng.gen_range(0..3)]
            );
            TextSample::from_text(format!("e{i}"), &text, LabelSet::single(i % 2), &v, 16).unwrap()
        })
        .collect();
    Dataset {
        samples,
        vocabulary: v,
        label_names: vec!["pos".into(), "neg".into()],
        task_mode: TaskMode::SingleLabel,
    }
}

fn max_param_diff(a: &ReferenceClassifier, b: &ReferenceClassifier) -> f64 {
    a.parameters()
        .iter()
        .zip(b.parameters())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn endpoints() -> Outcome {
    let data = endpoint_data();
    let t = table();
    let train = TrainConfig {
        pooling: Pooling::Attention,
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let attack = AttackConfig {
        rho_max: 0.4,
        k: 2,
        constraint_mode: ConstraintMode::None,
        ..AttackConfig::default()
    };
    let mut notes = Vec::new();

    // attack ratio 0: the adversarial trajectory is the vanilla one
    let vanilla = train_vanilla(&data, &[], &train).unwrap();
    let zero = adversarial_train(
        &data,
        &[],
        &AdvTrainConfig {
            train: train.clone(),
            attack_ratio: 0.0,
            attack: attack.clone(),
        },
        &t,
    )
    .unwrap();
    let d_ratio = max_param_diff(&vanilla.classifier, &zero.classifier);
    let ratio_ok = d_ratio == 0.0;
    notes.push(format!("ratio 0 vs vanilla {d_ratio:.1e}"));

    // delta = 0 (with gamma = 0): FAR trains exactly like adversarial training
    let adv = adversarial_train(
        &data,
        &[],
        &AdvTrainConfig {
            train: train.clone(),
            attack_ratio: 0.5,
            attack: attack.clone(),
        },
        &t,
    )
    .unwrap();
    let far = far_train(
        &data,
        &[],
        &FarConfig {
            train: train.clone(),
            gamma: 0.0,
            delta: 0.0,
            preset: None,
            attack_ratio: 0.5,
            attack: attack.clone(),
            ..FarConfig::default()
        },
        &t,
    )
    .unwrap();
    let d_delta = max_param_diff(&adv.classifier, &far.classifier);
    notes.push(format!("delta 0 vs adversarial {d_delta:.1e}"));

    // inner objective endpoints and the recomputed mix at gamma = 0.85
    let m = &vanilla.classifier;
    let ig = AttributionConfig::new(Method::IntegratedGradients).with_ig_steps(8);
    let (mut g0, mut g1, mut mix): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut same_samples = true;
    for s in &data.samples {
        let plain = training_attack(s, m, &data.vocabulary, &t, &attack).unwrap();
        let far0 = far_inner_max(s, m, &data.vocabulary, &ig, &t, 0.0, &attack).unwrap();
        same_samples &= plain.sample == far0.sample;
        g0 = g0.max((plain.objective - far0.objective).abs());

        let predicted = s.with_labels(m.predict(s).unwrap());
        let dare = dare_attack(&predicted, m, &data.vocabulary, &ig, &t, &attack).unwrap();
        let far1 = far_inner_max(&predicted, m, &data.vocabulary, &ig, &t, 1.0, &attack).unwrap();
        same_samples &= dare.adversarial.tokens == far1.sample.tokens;
        g1 = g1.max((dare.d_max - far1.objective).abs());

        let gamma = 0.85;
        let out = far_inner_max(s, m, &data.vocabulary, &ig, &t, gamma, &attack).unwrap();
        let loss = classification_loss_value(m, &out.sample, &s.labels).unwrap();
        let a_adv = attribute(m, &out.sample, &s.labels, &ig).unwrap();
        let a = attribute(m, s, &s.labels, &ig).unwrap();
        let d = if out.sample.tokens == s.tokens {
            0.0
        } else {
            1.0 - cosine(&a_adv.per_word, &a.per_word)
        };
        mix = mix.max((out.objective - ((1.0 - gamma) * loss + gamma * d)).abs());
    }
    notes.push(format!("gamma 0 {g0:.1e}, gamma 1 {g1:.1e}, gamma 0.85 recomputed {mix:.1e}"));
    Outcome {
        passed: ratio_ok && d_delta < 1e-9 && g0 < 1e-9 && g1 < 1e-9 && mix < 1e-9 && same_samples,
        detail: notes.join("; "),
    }
}

fn top5() -> Outcome {
    let spec = DatasetSpec {
        path: data_dir().join("fixture20.jsonl"),
        format: "jsonl".into(),
        task_mode: TaskMode::SingleLabel,
        labels: vec![],
        max_len: 32,
        preprocess: Default::default(),
    };
    let (data, _) = load_dataset(&spec).unwrap();
    let always = top5_accuracy(&ScriptedLm::oracle(&data.samples), &data.samples).unwrap();
    let never = top5_accuracy(&ScriptedLm::never(&data.samples), &data.samples).unwrap();
    let unigram = top5_accuracy(&UnigramLm::from_samples(&data.samples), &data.samples).unwrap();
    // Counted by hand: the five most frequent words are the (14), was (14),
    // good (7), and bad/movie (6 each). Per sample (hits, words):
    let hand: [(usize, usize); 20] = [
        (4, 4), (3, 4), (3, 4), (3, 4), (3, 4), (2, 3), (1, 3), (2, 4), (3, 4), (3, 4),
        (2, 5), (2, 5), (2, 4), (3, 4), (0, 3), (3, 4), (2, 4), (0, 3), (4, 4), (2, 4),
    ];
    let hits: usize = hand.iter().map(|h| h.0).sum();
    let total: usize = hand.iter().map(|h| h.1).sum();
    let macro_ = hand.iter().map(|&(h, n)| h as f64 / n as f64).sum::<f64>() / 20.0;
    let passed = always.micro == 1.0
        && never.micro == 0.0
        && unigram.hits == hits
        && unigram.total == total
        && (unigram.micro - hits as f64 / total as f64).abs() < 1e-12
        && (unigram.macro_ - macro_).abs() < 1e-12;
    Outcome {
        passed,
        detail: format!(
            "always {} / never {}; unigram {}/{} = {:.4} (hand {hits}/{total}), macro {:.4} (hand {macro_:.4})",
            always.micro, never.micro, unigram.hits, unigram.total, unigram.micro, unigram.macro_
        ),
    }
}

fn reproducibility() -> Outcome {
    let config_path = data_dir().join("fixture20_experiment.toml");
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::load(&config_path).unwrap();
        config.output_root = Some(dir.path().to_path_buf());
        let bundle = run_experiment(&config).unwrap();
        let rows = std::fs::read(&bundle.rows).unwrap();
        let report = render_report(&bundle.dir).unwrap();
        (rows, report, dir)
    };
    let (rows1, report1, _d1) = run();
    let (rows2, _, _d2) = run();
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fixture20_report.md"))
        .unwrap();
    Outcome {
        passed: rows1 == rows2 && report1 == golden,
        detail: format!(
            "rows CSV identical: {} ({} bytes); golden report matches: {}",
            rows1 == rows2,
            rows1.len(),
            report1 == golden
        ),
    }
}

#[test]
fn acceptance() {
    let timed = |f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        (o, start.elapsed().as_secs_f64())
    };
    let mut results = Vec::new();
    results.push(("1 attribution axioms", timed(&axioms)));
    results.push(("2 gradient correctness", timed(&gradients)));
    results.push(("3 oracle dominance", timed(&oracle_dominance)));
    results.push(("4 multilabel semantics", timed(&multilabel)));
    let (toy, toy_secs) = {
        let start = Instant::now();
        let run = toy_run();
        (run, start.elapsed().as_secs_f64())
    };
    results.push(("5 robust-training trend", (trend(&toy), toy_secs)));
    results.push(("6 transfer to S and DL", (transfer(&toy), 0.0)));
    results.push(("7 endpoint equivalences", timed(&endpoints)));
    results.push(("8 top-5 procedure", timed(&top5)));
    results.push(("9 reproducibility", timed(&reproducibility)));

    // written to the raw stdout handle so the lines show without --nocapture
    let mut out = std::io::stdout().lock();
    for (name, (o, secs)) in &results {
        let status = if o.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} criterion {name}: {} [{secs:.1} s]", o.detail).unwrap();
    }
    drop(out);
    let failed: Vec<&str> = results.iter().filter(|r| !r.1 .0.passed).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
