//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use pathprompt::augment::{apply_residual_reweight, soft_select_weights, PathWeights, SelectorParams, Strategy};
use pathprompt::config::RunConfig;
use pathprompt::eval::{auc, split_dataset, SplitKind, SplitSpec};
use pathprompt::experiment::{run_bias_experiment, Experiment};
use pathprompt::graph::{path_similarity, select_diverse_paths, MetaPathInstance};
use pathprompt::model::{autoregressive_loss, ModelConfig, Projection};
use pathprompt::pipeline;
use pathprompt::prompt::{Answer, PromptSample, Task};
use pathprompt::synth::{generate_world, make_task_datasets, World, WorldConfig};
use pathprompt::trainer::{sample_gradient, sample_loss};
use pathprompt::{Matrix, MicroLm, Trainable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::gaussian(rows, cols, 1.0, rng)
}

fn raw_sample(ids: Vec<usize>, prompt_len: usize, spans: Vec<(usize, usize)>, use_selector: bool) -> PromptSample {
    let n = ids.len();
    PromptSample {
        id: "s".into(),
        task: Task::PointWise,
        instruction: String::new(),
        profile: String::new(),
        paths: vec![String::new(); spans.len()],
        jds: vec![String::new()],
        label: Answer::Yes,
        use_selector,
        token_ids: ids,
        loss_mask: (0..n).map(|i| i >= prompt_len).collect(),
        path_spans: spans,
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        vocab_size: 32,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        context_len: 32,
        lora_rank: 4,
        lora_targets: vec![Projection::Query, Projection::Key, Projection::Value, Projection::Output],
        ..Default::default()
    };
    let model = MicroLm::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for trial in 0..3 {
        let mut t = Trainable::init(&model, Strategy::SoftSelector, 0.3, trial).unwrap();
        for s in t.slices_mut() {
            s.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let ids: Vec<usize> = (0..18).map(|_| rng.random_range(0..32)).collect();
        let sample = raw_sample(ids, 11, vec![(2, 5), (5, 9), (9, 10)], true);
        let (_, grad) = sample_gradient(&model, &t, &sample, false).unwrap();
        let analytic: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
        let h = 1e-5;
        for (k, g) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let orig = t.slices()[k][i];
                t.slices_mut()[k][i] = orig + h;
                let up = sample_loss(&model, &t, &sample).unwrap();
                t.slices_mut()[k][i] = orig - h;
                let down = sample_loss(&model, &t, &sample).unwrap();
                t.slices_mut()[k][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (worst < 1e-4 && secs < 30.0, format!("max relative error {worst:.2e}, {secs:.1}s"))
}

fn zero_adapter_no_op() -> Outcome {
    let cfg = ModelConfig { vocab_size: 64, context_len: 64, ..Default::default() };
    let model = MicroLm::new(cfg).unwrap();
    let adapters = model.init_adapters(5);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    for _ in 0..100 {
        let len = rng.random_range(1..=64);
        let x = gaussian_matrix(len, 64, &mut rng);
        let with = model.forward(Some(&adapters), &x, true).unwrap().logits;
        let without = model.forward(None, &x, true).unwrap().logits;
        if with.data.iter().zip(&without.data).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{mismatches}/100 inputs differ"))
}

fn loss_masking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let vocab = 32;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(4..40);
        let logits = gaussian_matrix(n, vocab, &mut rng);
        let mut targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        let start = rng.random_range(1..n);
        let mask: Vec<bool> = (0..n).map(|i| i >= start).collect();
        let base = autoregressive_loss(&logits, &targets, &mask).unwrap();
        for i in 0..start {
            let keep = targets[i];
            targets[i] = (keep + 1 + rng.random_range(0..vocab - 1)) % vocab;
            worst = worst.max((autoregressive_loss(&logits, &targets, &mask).unwrap() - base).abs());
            targets[i] = keep;
        }
    }
    let uniform = Matrix::from_vec(5, vocab, (0..5 * vocab).map(|i| (i / vocab) as f64 * 3.7).collect());
    let loss = autoregressive_loss(&uniform, &[1, 2, 3, 4, 5], &[true; 5]).unwrap();
    let err = (loss - (vocab as f64).ln()).abs();
    (worst < 1e-15 && err < 1e-9, format!("prompt-target change {worst:.1e}, uniform error {err:.1e}"))
}

fn random_token_set(rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let n = rng.random_range(1..20);
    (0..n).map(|_| rng.random_range(0..40)).collect()
}

fn diversity_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let a: Vec<usize> = random_token_set(&mut rng).into_iter().collect();
        let b: Vec<usize> = random_token_set(&mut rng).into_iter().collect();
        let inter = a.iter().filter(|x| b.contains(x)).count();
        let union = a.len() + b.iter().filter(|x| !a.contains(x)).count();
        let want = inter as f64 / union as f64;
        let got = path_similarity(&a.iter().copied().collect(), &b.iter().copied().collect()).unwrap();
        if got != want {
            mismatches += 1;
        }
    }
    let mut violations = 0;
    for _ in 0..300 {
        let gamma = rng.random_range(0.0..=1.0);
        let max_paths = rng.random_range(1..6);
        let instances: Vec<MetaPathInstance> = (0..rng.random_range(1..12))
            .map(|_| MetaPathInstance { nodes: vec![], edge_kinds: vec![], directions: vec![], tokens: random_token_set(&mut rng) })
            .collect();
        let kept = select_diverse_paths(&instances, gamma, max_paths);
        let jac = |x: &MetaPathInstance, y: &MetaPathInstance| path_similarity(&x.tokens, &y.tokens).unwrap();
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                if jac(&kept[i], &kept[j]) > gamma {
                    violations += 1;
                }
            }
        }
        if kept.len() > max_paths {
            violations += 1;
        }
        // Greedy maximality: an instance was dropped only for a conflict or the cap.
        if kept.len() < max_paths {
            for inst in &instances {
                if !kept.contains(inst) && kept.iter().all(|k| jac(k, inst) <= gamma) {
                    violations += 1;
                }
            }
        }
    }
    (mismatches == 0 && violations == 0, format!("{mismatches} similarity mismatches, {violations} selection violations"))
}

fn selector_math() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let d = 16;
    let (mut sum_err, mut shift_err, mut reweight_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let k = rng.random_range(1..6);
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let params = SelectorParams::with_weights(w.clone(), rng.random_range(0.01..=0.5)).unwrap();
        let h: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let alphas = soft_select_weights(&h, &params).alphas;
        sum_err = sum_err.max((alphas.iter().sum::<f64>() - 1.0).abs());

        // Moving every pooled embedding along w_a shifts all scores equally.
        let norm2: f64 = w.iter().map(|x| x * x).sum();
        let t = rng.random_range(-5.0..5.0);
        let shifted: Vec<Vec<f64>> =
            h.iter().map(|hi| hi.iter().zip(&w).map(|(x, wi)| x + t * wi / norm2).collect()).collect();
        let moved = soft_select_weights(&shifted, &params).alphas;
        shift_err = shift_err.max(alphas.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let mut bounds: Vec<usize> = (0..2 * k).map(|_| rng.random_range(0..30)).collect();
        bounds.sort_unstable();
        let spans: Vec<(usize, usize)> = bounds.chunks(2).map(|c| (c[0], c[1])).collect();
        let e = gaussian_matrix(30, d, &mut rng);
        let out = apply_residual_reweight(&e, &spans, &PathWeights { alphas: alphas.clone() }, params.lambda).unwrap();
        for tok in 0..30 {
            let scale = spans.iter().zip(&alphas).find(|((s, e), _)| (*s..*e).contains(&tok)).map_or(1.0, |(_, a)| 1.0 + params.lambda * a);
            for c in 0..d {
                reweight_err = reweight_err.max((out.at(tok, c) - scale * e.at(tok, c)).abs());
            }
        }
    }
    (
        sum_err < 1e-9 && shift_err < 1e-12 && reweight_err < 1e-12,
        format!("sum {sum_err:.1e}, shift {shift_err:.1e}, reweight {reweight_err:.1e}"),
    )
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut mismatches = 0;
    let mut done = 0;
    while done < 100 {
        let n = rng.random_range(2..=500);
        let levels = rng.random_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().all(|l| *l) || labels.iter().all(|l| !*l) {
            continue;
        }
        let (mut num2, mut den) = (0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                if labels[i] && !labels[j] {
                    den += 1;
                    num2 += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        let want = num2 as f64 / (2 * den) as f64;
        if auc(&scores, &labels).unwrap() != want {
            mismatches += 1;
        }
        done += 1;
    }
    (mismatches == 0, format!("{mismatches}/100 instances differ"))
}

fn split_contracts(world: &World) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for task in [Task::PointWise, Task::PairWise] {
        let pairs = make_task_datasets(world, task, WorldConfig::default().labeled_per_class, world_seed());
        let (train, test) = split_dataset(&pairs, &world.jds, &SplitSpec::default()).unwrap();
        let ratio = train.len() as f64 / test.len() as f64;
        ok &= (ratio / 5.0 - 1.0).abs() <= 0.02;
        notes.push(format!("{} random {}:{}", task.name(), train.len(), test.len()));
        for kind in [SplitKind::OodPosition, SplitKind::OodJd] {
            let (train, test) = split_dataset(&pairs, &world.jds, &SplitSpec { kind, ..SplitSpec::default() }).unwrap();
            let keys = |side: &[pathprompt::synth::LabeledPair]| -> BTreeSet<String> {
                side.iter()
                    .flat_map(|r| r.jobs.iter())
                    .map(|j| match kind {
                        SplitKind::OodPosition => world.jds[j].position_title().to_string(),
                        _ => j.to_string(),
                    })
                    .collect()
            };
            let shared = keys(&train).intersection(&keys(&test)).count();
            ok &= shared == 0 && !test.is_empty();
            notes.push(format!("{} {kind} shared keys {shared}", task.name()));
        }
    }
    (ok, notes.join(", "))
}

fn world_seed() -> u64 {
    WorldConfig::default().seed
}

/// Everything except the wall-clock column of the training log.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for step in ["world", "data", "model", "eval"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(step)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            let mut bytes = std::fs::read(&p).unwrap();
            if p.file_name().unwrap() == pipeline::TRAIN_LOG_FILE {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect::<String>().into_bytes();
            }
            out.push((format!("{step}/{}", p.file_name().unwrap().to_string_lossy()), bytes));
        }
    }
    out
}

fn end_to_end_determinism() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig { d_model: 16, n_layers: 1, ..Default::default() };
    cfg.train.epochs = 1;
    cfg.train.strategy = Strategy::Hybrid;
    cfg.set_seed(21);
    let run = |root: &Path| {
        pipeline::synth(&cfg, &root.join("world")).unwrap();
        pipeline::prepare(&cfg, &root.join("world"), &root.join("data")).unwrap();
        pipeline::train(&cfg, &root.join("data"), &root.join("model")).unwrap();
        pipeline::eval(&cfg, &root.join("model").join(pipeline::CHECKPOINT_FILE), &root.join("data"), &root.join("eval"))
            .unwrap();
        artifacts(root)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = (run(a.path()), run(b.path()));
    let differing: Vec<&str> =
        first.iter().zip(&second).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let ok = first.len() == second.len() && differing.is_empty();
    (ok, format!("{} artifacts compared, differing: {differing:?}", first.len()))
}

fn path_trend(exp: &mut Experiment<'_>) -> Outcome {
    let start = Instant::now();
    let auc0 = exp.evaluate(0, Strategy::None).unwrap().auc;
    let auc2 = exp.evaluate(2, Strategy::None).unwrap().auc;
    let seconds = start.elapsed().as_secs_f64();
    let gain = auc2 - auc0;
    (gain >= 0.05 && seconds < 600.0, format!("AUC 0 paths {auc0:.4}, 2 paths {auc2:.4}, gain {gain:+.4}, {seconds:.0}s"))
}

fn ordering_trend(exp: &mut Experiment<'_>) -> Outcome {
    let report = run_bias_experiment(exp, 2, &Strategy::ALL).unwrap();
    let row = |s: Strategy| report.rows.iter().find(|r| r.strategy == s).unwrap();
    let base = row(Strategy::None);
    let base_std = base.ordering_std.unwrap();
    let mut ok = row(Strategy::Hybrid).ordering_std.unwrap() < base_std;
    for s in [Strategy::Shuffle, Strategy::SoftSelector, Strategy::Hybrid] {
        ok &= row(s).auc >= base.auc - 0.01;
    }
    let detail = report
        .rows
        .iter()
        .map(|r| format!("{} auc {:.4} std {:.5}", r.strategy.name(), r.auc, r.ordering_std.unwrap()))
        .collect::<Vec<_>>()
        .join(", ");
    (ok, detail)
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, outcome: Outcome| {
        println!("criterion {n:>2} {:<4} {name}: {}", if outcome.0 { "PASS" } else { "FAIL" }, outcome.1);
        results.push((n, name, outcome));
    };
    record(1, "gradient check", gradient_check());
    record(2, "zero-adapter no-op", zero_adapter_no_op());
    record(3, "loss masking", loss_masking());
    record(4, "path similarity and diversity", diversity_oracles());
    record(5, "selector math", selector_math());
    record(6, "AUC oracle", auc_oracle());

    let cfg = RunConfig::default();
    let world = generate_world(&cfg.world).unwrap();
    record(9, "split contracts", split_contracts(&world));
    record(10, "end-to-end determinism", end_to_end_determinism());

    let mut exp = Experiment::new(&cfg, &world).unwrap();
    record(7, "path-count trend", path_trend(&mut exp));
    record(8, "ordering-bias trend", ordering_trend(&mut exp));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed {:?}", results.len() - failed.len(), failed.len(), failed);
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
