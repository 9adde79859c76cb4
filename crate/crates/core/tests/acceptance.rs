//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//! Failures only change the exit status when `DIQNN_ACCEPTANCE_STRICT=1`.
//! `DIQNN_ACCEPTANCE_ONLY=1,4` runs a subset;
//! `DIQNN_MNIST_DIR` points at the IDX files (default `data/mnist` at the
//! workspace root).

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diqnn::analysis::{
    check_euler_identity, class_spectra, spearman, truncate_and_eval_with, truncated_network, RankSpec,
};
use diqnn::data::{load_idx, make_xor, Dataset};
use diqnn::linalg::Matrix;
use diqnn::margin::{check_margin_derivative, theorem_diagnostics, Separation};
use diqnn::model::{Activation, InitScheme, LayerSpec, Network, NetworkSpec};
use diqnn::train::{
    accuracy, regularized_loss, train, train_with_hook, verify_xor, Optimizer, RecordPolicy, TrainConfig,
};
use diqnn::{Error, Result};

type Check = fn(&mut Context) -> Result<Outcome>;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Default)]
struct Context {
    mnist: Option<(Dataset, Dataset)>,
    quadratic: Option<Network>,
}

const SUBSET_TRAIN: usize = 10_000;
const SUBSET_TEST: usize = 2_000;

impl Context {
    fn mnist(&mut self) -> Result<&(Dataset, Dataset)> {
        if self.mnist.is_none() {
            let dir = std::env::var_os("DIQNN_MNIST_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
            let train = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
            let test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
            self.mnist = Some((train, test));
        }
        Ok(self.mnist.as_ref().unwrap())
    }

    fn subset(&mut self) -> Result<(Dataset, Dataset)> {
        let (train, test) = self.mnist()?;
        Ok((train.take(SUBSET_TRAIN)?, test.take(SUBSET_TEST)?))
    }

    /// Quadratic net trained on full MNIST with the reference settings.
    fn quadratic(&mut self) -> Result<Network> {
        if self.quadratic.is_none() {
            let (train_set, test_set) = self.mnist()?.clone();
            let net = train_mnist("quadratic", 0, &train_set, &test_set)?;
            self.quadratic = Some(net);
        }
        Ok(self.quadratic.clone().unwrap())
    }
}

fn mnist_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        batch_size: Some(100),
        epochs: 5,
        seed,
        record: RecordPolicy::EpochEnd,
        eval_limit: Some(1000),
        ..TrainConfig::default()
    }
}

/// Subset runs keep the full-set number of updates: 30 epochs of 10k at
/// batch 100 is 3000 steps, the same as 5 epochs of 60k.
fn subset_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        ..mnist_config(seed)
    }
}

fn train_mnist(model: &str, seed: u64, train_set: &Dataset, test_set: &Dataset) -> Result<Network> {
    train_model(model, &mnist_config(seed), train_set, test_set)
}

fn train_model(model: &str, config: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<Network> {
    let spec = NetworkSpec::parse(model, train_set.dim(), train_set.classes())?;
    let mut net = Network::init(&spec, config.seed, InitScheme::Gaussian)?;
    train(&mut net, train_set, Some(test_set), config)?;
    Ok(net)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn c1_xor_flow(_: &mut Context) -> Result<Outcome> {
    let started = Instant::now();
    let report = verify_xor(50.0, 1e-2)?;
    let elapsed = started.elapsed();
    let fast = elapsed < Duration::from_secs(5);
    let mut parts: Vec<String> = report
        .checks
        .iter()
        .map(|c| format!("{}={}({:.3e})", c.name, if c.passed { "ok" } else { "FAIL" }, c.value))
        .collect();
    if let Some(r) = report.rate_ratio {
        parts.push(format!("measured/closed-form={r:.4}"));
    }
    parts.push(format!("runtime={elapsed:.2?}"));
    Ok(Outcome::new(report.all_passed() && fast, parts.join(" ")))
}

fn c2_xor_gd(_: &mut Context) -> Result<Outcome> {
    let started = Instant::now();
    let data = make_xor();
    let mut net = Network::init(&NetworkSpec::parse("lowrank:1", 2, 2)?, 0, InitScheme::XorPaper)?;
    let config = TrainConfig {
        learning_rate: 0.1,
        optimizer: Optimizer::Gd,
        epochs: 396,
        record: RecordPolicy::EveryStep,
        ..TrainConfig::default()
    };
    let trace = train(&mut net, &data, None, &config)?;
    let elapsed = started.elapsed();
    let mu: Vec<f64> = trace.records.iter().map(|r| r.delta_mu).collect();
    let worst = mu.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let acc = accuracy(&net, &data)?;
    Ok(Outcome::new(
        worst >= 0.0 && acc == 1.0 && elapsed < Duration::from_secs(1),
        format!(
            "steps={} smallest Δμ increment={worst:.3e} final Δμ={:.4} accuracy={}/4 runtime={elapsed:.2?}",
            mu.len() - 1,
            mu.last().unwrap(),
            (acc * 4.0).round()
        ),
    ))
}

fn random_low_rank_stack(rng: &mut ChaCha8Rng) -> (NetworkSpec, usize) {
    let layers = rng.random_range(1..=2usize);
    let d = rng.random_range(1..=20);
    let k = rng.random_range(2..=20);
    let spec = if layers == 1 {
        vec![LayerSpec::low_rank(d, k, rng.random_range(1..=4))]
    } else {
        let h = rng.random_range(1..=20);
        vec![
            LayerSpec::low_rank(d, h, rng.random_range(1..=4)),
            LayerSpec::low_rank(h, k, rng.random_range(1..=4)),
        ]
    };
    (NetworkSpec::new(spec, Activation::None).unwrap(), layers)
}

fn c3_homogeneity(_: &mut Context) -> Result<Outcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = 200;
    let (mut worst_h, mut worst_e, mut wrong_degree) = (0.0f64, 0.0f64, 0);
    for case in 0..cases {
        let (spec, l) = random_low_rank_stack(&mut rng);
        let net = Network::init(&spec, case, InitScheme::Gaussian)?;
        let expected = (1u32 << (l + 1)) - 2;
        if net.homogeneity_degree() != Some(expected) {
            wrong_degree += 1;
        }
        let x: Vec<f64> = (0..net.inputs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = net.predict(&x)?;
        let alpha = rng.random_range(0.25..4.0);
        let mut scaled = net.clone();
        for t in scaled.theta_mut() {
            *t *= alpha;
        }
        let out = scaled.predict(&x)?;
        let factor = f64::powi(alpha, expected as i32);
        let num: f64 = out.iter().zip(&base).map(|(o, b)| (o - factor * b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = base.iter().map(|b| (factor * b).powi(2)).sum::<f64>().sqrt();
        if num > 0.0 {
            worst_h = worst_h.max(num / den);
        }
        worst_e = worst_e.max(check_euler_identity(&net, &x)?.worst_relative_error);
    }
    let elapsed = started.elapsed();
    Ok(Outcome::new(
        wrong_degree == 0 && worst_h < 1e-10 && worst_e < 1e-8 && elapsed < Duration::from_secs(10),
        format!(
            "cases={cases} degree mismatches={wrong_degree} worst homogeneity={worst_h:.2e} worst Euler={worst_e:.2e} runtime={elapsed:.2?}"
        ),
    ))
}

/// Mean cross-entropy minus `λ·Δμ`, written out independently of the
/// library's loss code.
fn oracle_objective(net: &Network, data: &Dataset, lambda: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..data.len() {
        let out = net.predict(data.sample(i)).unwrap();
        let y = data.label(i);
        let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + out.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let mut obj = lse - out[y];
        if lambda != 0.0 {
            let other = out
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            obj -= lambda * (out[y] - other) / norm;
        }
        total += obj;
    }
    total / data.len() as f64
}

fn random_spec(rng: &mut ChaCha8Rng, case: usize) -> NetworkSpec {
    let d = rng.random_range(2..=6);
    let k = rng.random_range(2..=4);
    let h = rng.random_range(2..=5);
    let r = rng.random_range(1..=3);
    let (layers, act) = match case % 6 {
        0 => (vec![LayerSpec::linear(d, k, true)], Activation::None),
        1 => (vec![LayerSpec::linear(d, h, true), LayerSpec::linear(h, k, true)], Activation::Relu),
        2 => (vec![LayerSpec::quadratic(d, k)], Activation::None),
        3 => (vec![LayerSpec::low_rank(d, k, r)], Activation::None),
        4 => (vec![LayerSpec::low_rank(d, h, r), LayerSpec::low_rank(h, k, r)], Activation::None),
        _ => (vec![LayerSpec::quadratic(d, h), LayerSpec::low_rank(h, k, r)], Activation::None),
    };
    NetworkSpec::new(layers, act).unwrap()
}

fn c4_gradient_oracle(_: &mut Context) -> Result<Outcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases = 120;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut failures = 0;
    for case in 0..cases {
        let spec = random_spec(&mut rng, case);
        let net = Network::init(&spec, case as u64, InitScheme::Gaussian)?;
        let n = rng.random_range(2..=5);
        let x: Vec<f64> = (0..n * net.inputs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..net.outputs())).collect();
        let data = Dataset::new(Matrix::from_vec(n, net.inputs(), x)?, labels, net.outputs(), "fd")?;
        let lambda = if case % 2 == 0 { 0.0 } else { 0.7 };
        let (_, grad) = regularized_loss(&net, &data, lambda)?;
        let mut fd = vec![0.0; grad.len()];
        let mut probe = net.clone();
        for (k, slot) in fd.iter_mut().enumerate() {
            let t = net.theta()[k];
            probe.theta_mut()[k] = t + h;
            let up = oracle_objective(&probe, &data, lambda);
            probe.theta_mut()[k] = t - h;
            let down = oracle_objective(&probe, &data, lambda);
            probe.theta_mut()[k] = t;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(fd.iter().map(|v| v * v).sum::<f64>().sqrt())
            .max(1e-8);
        let rel = diff / scale;
        worst = worst.max(rel);
        if rel >= 1e-5 {
            failures += 1;
        }
    }
    let elapsed = started.elapsed();
    Ok(Outcome::new(
        failures == 0 && elapsed < Duration::from_secs(30),
        format!("cases={cases} failures={failures} worst relative error={worst:.2e} runtime={elapsed:.2?}"),
    ))
}

fn c5_full_mnist(ctx: &mut Context) -> Result<Outcome> {
    let started = Instant::now();
    let (train_set, test_set) = ctx.mnist()?.clone();
    let seeds = [0u64, 1, 2];
    let mut quad = Vec::new();
    let mut lin = Vec::new();
    for &seed in &seeds {
        let net = train_mnist("quadratic", seed, &train_set, &test_set)?;
        quad.push(accuracy(&net, &test_set)?);
        if seed == 0 {
            ctx.quadratic = Some(net);
        }
        lin.push(accuracy(&train_mnist("linear", seed, &train_set, &test_set)?, &test_set)?);
    }
    let elapsed = started.elapsed();
    let (q, l) = (mean(&quad), mean(&lin));
    let gap = q - l;
    let mut passed = q >= 0.975 && (0.88..=0.92).contains(&l) && gap >= 0.06;
    let mut detail = format!(
        "quadratic={} {:?} linear={} {:?} gap={:.2}pp runtime={elapsed:.0?}",
        pct(q),
        quad.iter().map(|a| pct(*a)).collect::<Vec<_>>(),
        pct(l),
        lin.iter().map(|a| pct(*a)).collect::<Vec<_>>(),
        100.0 * gap
    );
    if elapsed > Duration::from_secs(30 * 60) {
        let (tr, te) = ctx.subset()?;
        let mut gaps = Vec::new();
        for &seed in &seeds {
            let q = accuracy(&train_mnist("quadratic", seed, &tr, &te)?, &te)?;
            let l = accuracy(&train_mnist("linear", seed, &tr, &te)?, &te)?;
            gaps.push(q - l);
        }
        let g = mean(&gaps);
        passed &= g >= 0.04;
        detail.push_str(&format!(" over budget; subset gap={:.2}pp", 100.0 * g));
    }
    Ok(Outcome::new(passed, detail))
}

fn c6_low_rank_ordering(ctx: &mut Context) -> Result<Outcome> {
    let (tr, te) = ctx.subset()?;
    let seeds = [0u64, 1, 2];
    let score = |model: &str| -> Result<f64> {
        let mut accs = Vec::new();
        for &s in &seeds {
            accs.push(accuracy(&train_model(model, &subset_config(s), &tr, &te)?, &te)?);
        }
        Ok(mean(&accs))
    };
    let linear = score("linear")?;
    let mut accs = Vec::new();
    for r in [1, 2, 4, 8] {
        accs.push((r, score(&format!("lowrank:{r}"))?));
    }
    let beats_linear = accs[0].1 >= linear;
    let ordered = accs.windows(2).all(|w| w[1].1 >= w[0].1 - 0.005);
    Ok(Outcome::new(
        beats_linear && ordered,
        format!(
            "linear={} {} (mean of {} seeds)",
            pct(linear),
            accs.iter().map(|(r, a)| format!("rank{r}={}", pct(*a))).collect::<Vec<_>>().join(" "),
            seeds.len()
        ),
    ))
}

/// Model for the margin-tracking and regularization runs: the largest rank
/// of the ordering check, so the 90% threshold is within reach.
const TRACKING_MODEL: &str = "lowrank:8";

fn c7_margin_generalization(ctx: &mut Context) -> Result<Outcome> {
    let (tr, te) = ctx.subset()?;
    let mut net = Network::init(&NetworkSpec::parse(TRACKING_MODEL, 784, 10)?, 0, InitScheme::Gaussian)?;
    let config = TrainConfig {
        record: RecordPolicy::Every(60),
        eval_limit: None,
        ..subset_config(0)
    };
    let trace = train(&mut net, &tr, Some(&te), &config)?;
    let mu: Vec<f64> = trace.records.iter().map(|r| r.delta_mu).collect();
    let acc: Vec<f64> = trace.records.iter().map(|r| r.test_acc.unwrap()).collect();
    let rho = spearman(&mu, &acc)?;
    let (start, end) = (mu[0], *mu.last().unwrap());
    Ok(Outcome::new(
        rho >= 0.8 && end > start,
        format!("records={} spearman={rho:.4} Δμ start={start:.4} end={end:.4}", mu.len()),
    ))
}

fn c8_margin_regularization(ctx: &mut Context) -> Result<Outcome> {
    let (tr, te) = ctx.subset()?;
    let seeds = [0u64, 1, 2];
    let target = 0.9;
    let mut means = Vec::new();
    let mut unreached = 0;
    for lambda in [0.0, 0.1, 1.0] {
        let mut steps = Vec::new();
        for &seed in &seeds {
            let mut net = Network::init(&NetworkSpec::parse(TRACKING_MODEL, 784, 10)?, seed, InitScheme::Gaussian)?;
            let config = TrainConfig {
                lambda_margin: lambda,
                record: RecordPolicy::Every(10),
                eval_limit: Some(SUBSET_TEST),
                ..subset_config(seed)
            };
            let trace = train(&mut net, &tr, Some(&te), &config)?;
            let hit = trace.records.iter().find(|r| r.test_acc.unwrap() >= target);
            steps.push(match hit {
                Some(r) => r.step as f64,
                None => {
                    unreached += 1;
                    // Censored at one record past the end of training.
                    (trace.last().unwrap().step + 10) as f64
                }
            });
        }
        means.push((lambda, mean(&steps)));
    }
    let base = means[0].1;
    let faster = means[1..].iter().any(|&(_, s)| s < base);
    Ok(Outcome::new(
        faster,
        format!(
            "mean steps to {}% test accuracy: {} (runs never reaching it: {unreached})",
            100.0 * target,
            means.iter().map(|(l, s)| format!("λ={l}: {s:.1}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

fn c9_margin_derivative(ctx: &mut Context) -> Result<Outcome> {
    let (tr, _) = ctx.subset()?;
    let data = tr.take(1000)?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut failures = 0;
    for (name, optimizer, epochs) in [("gd", Optimizer::Gd, 20), ("sgd", Optimizer::Sgd, 2)] {
        let mut net = Network::init(&NetworkSpec::parse("lowrank:1", 784, 10)?, 9, InitScheme::Gaussian)?;
        let config = TrainConfig {
            optimizer,
            epochs,
            learning_rate: 0.01,
            batch_size: Some(100),
            record: RecordPolicy::EpochEnd,
            eval_limit: Some(100),
            ..TrainConfig::default()
        };
        let mut points = 0;
        train_with_hook(&mut net, &data, None, &config, |ev| {
            let direction: Vec<f64> = ev.gradient.iter().map(|g| -g).collect();
            let check = check_margin_derivative(ev.net, &data, &direction, 1e-5)?;
            let rel = check.relative_error();
            worst = worst.max(rel);
            if rel >= 1e-3 {
                failures += 1;
                eprintln!("  {name} step {}: predicted {:e} observed {:e}", ev.step, check.predicted, check.observed);
            }
            points += 1;
            Ok(())
        })?;
        if points != 20 {
            return Err(Error::Contract(format!("{name}: expected 20 points, got {points}")));
        }
        checked += points;
    }
    Ok(Outcome::new(
        failures == 0,
        format!("points={checked} (20 GD + 20 SGD) failures={failures} worst relative error={worst:.2e}"),
    ))
}

fn c10_rank_truncation(ctx: &mut Context) -> Result<Outcome> {
    let net = ctx.quadratic()?;
    let (_, test_set) = ctx.mnist()?.clone();
    let spectra = class_spectra(&net)?;
    let ranks = [1, 2, 4, 8, 16].map(RankSpec::Rank);
    let curve = truncate_and_eval_with(&net, &test_set, &[&ranks[..], &[RankSpec::Full]].concat(), &spectra)?;
    let full = curve.full_accuracy;
    let r16 = curve.points[4].accuracy;
    let copy = truncated_network(&net, &spectra, net.inputs())?;
    let mut identical = true;
    for i in 0..test_set.len() {
        let (a, b) = (net.predict(test_set.sample(i))?, copy.predict(test_set.sample(i))?);
        identical &= a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    Ok(Outcome::new(
        full - r16 <= 0.02 && identical && curve.points[5].accuracy == full,
        format!(
            "full={} {} full-rank copy bit-identical={identical}",
            pct(full),
            curve.points[..5]
                .iter()
                .map(|p| format!("rank{}={}", p.rank, pct(p.accuracy)))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    ))
}

fn c11_theorem_diagnostics(ctx: &mut Context) -> Result<Outcome> {
    let mut notes = Vec::new();
    let mut passed = true;

    // k = 2: XOR after a few GD steps, and MNIST digits 0 and 1.
    let xor = make_xor();
    let mut net = Network::init(&NetworkSpec::parse("lowrank:1", 2, 2)?, 0, InitScheme::XorPaper)?;
    let gd = TrainConfig {
        optimizer: Optimizer::Gd,
        learning_rate: 0.1,
        epochs: 20,
        record: RecordPolicy::EpochEnd,
        ..TrainConfig::default()
    };
    train(&mut net, &xor, None, &gd)?;
    let d = theorem_diagnostics(&net, &xor)?;
    passed &= d.bound == Some(0.0);
    notes.push(format!("xor bound={:?}", d.bound));

    let (tr, _) = ctx.subset()?;
    let idx: Vec<usize> = (0..tr.len()).filter(|&i| tr.label(i) < 2).take(400).collect();
    let sub = tr.subset(&idx)?;
    let binary = Dataset::new(sub.features().clone(), sub.labels().to_vec(), 2, "mnist-01")?;
    let mut net = Network::init(&NetworkSpec::parse("lowrank:1", 784, 2)?, 1, InitScheme::Gaussian)?;
    train(&mut net, &binary, None, &mnist_config(1))?;
    let d = theorem_diagnostics(&net, &binary)?;
    passed &= d.bound == Some(0.0);
    notes.push(format!("mnist 0/1 bound={:?}", d.bound));

    // k = 10 on an MNIST sample.
    let data = tr.take(500)?;
    let mut net = Network::init(&NetworkSpec::parse("lowrank:1", 784, 10)?, 2, InitScheme::Gaussian)?;
    train(&mut net, &tr, None, &mnist_config(2))?;
    let d = theorem_diagnostics(&net, &data)?;
    let ev = &d.gram_eigenvalues;
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let psd = min >= -1e-8 * max.abs();
    passed &= psd;
    match d.separation {
        Separation::Separated(_) => {
            let ok = d.bound.is_some_and(|b| b <= 0.0 && b.is_finite());
            passed &= ok;
            notes.push(format!("mnist k=10 separated, bound={:?}", d.bound));
        }
        ref s => notes.push(format!("mnist k=10 separation {s:?}; bound={:?} (no claim)", d.bound)),
    }
    notes.push(format!("gram eigenvalues in [{min:.3e}, {max:.3e}]"));
    Ok(Outcome::new(passed, notes.join("; ")))
}

fn main() {
    let criteria: [(u32, &str, Check); 11] = [
        (1, "xor gradient flow", c1_xor_flow),
        (2, "xor gradient descent", c2_xor_gd),
        (3, "homogeneity and Euler identity", c3_homogeneity),
        (4, "gradient oracle", c4_gradient_oracle),
        (5, "MNIST quadratic vs linear", c5_full_mnist),
        (6, "low-rank ordering", c6_low_rank_ordering),
        (7, "margin tracks test accuracy", c7_margin_generalization),
        (8, "margin regularization speed", c8_margin_regularization),
        (9, "margin derivative", c9_margin_derivative),
        (10, "rank truncation", c10_rank_truncation),
        (11, "margin theorem diagnostics", c11_theorem_diagnostics),
    ];
    let only: Option<BTreeSet<u32>> = std::env::var("DIQNN_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut ctx = Context::default();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = check(&mut ctx).unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        if !outcome.passed {
            failed += 1;
        }
        println!(
            "{status} [{id}] {name} ({:.1}s): {}",
            started.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!("{} of {ran} criteria passed", ran - failed);
    let strict = std::env::var("DIQNN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
