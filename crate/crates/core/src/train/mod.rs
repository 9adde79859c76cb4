//! Losses, optimizers and the training loop.

mod xor;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use xor::{verify_xor, XorCheck, XorReport, XorSample};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::SYMMETRY_TOLERANCE;
use crate::margin::{self, check_compatible, runner_up, softmax, DEGENERATE_NORM};
use crate::model::{argmax, Network};

/// Loss above which training is considered diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Softmax cross-entropy `-log softmax(Φ)_y` and its gradient
/// `softmax(Φ) - e_y` with respect to `Φ`.
pub fn cross_entropy(outputs: &[f64], label: usize) -> (f64, Vec<f64>) {
    let top = argmax(outputs);
    let m = outputs[top];
    let rest: f64 = outputs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    // log Σ exp(Φ_i - m) = log(1 + rest); ln_1p keeps tiny losses accurate.
    let loss = (m - outputs[label]) + rest.ln_1p();
    let mut grad = softmax(outputs);
    grad[label] -= 1.0;
    (loss, grad)
}

/// Mean cross-entropy minus `λ Δμ` over `indices`, and its θ-gradient.
pub fn loss_and_gradient(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.param_count()];
    let loss = accumulate_loss_gradient(net, data, indices, lambda, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate_loss_gradient(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    lambda: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Spec("empty batch".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Spec(format!("margin weight {lambda} must be non-negative")));
    }
    let w = 1.0 / indices.len() as f64;
    let mut ce = 0.0;
    let mut margin_sum = 0.0;
    for &n in indices {
        let y = data.label(n);
        let (out, trace) = net.forward(data.sample(n))?;
        let (loss, mut g) = cross_entropy(&out, y);
        ce += loss;
        if lambda != 0.0 {
            let norm = crate::linalg::norm2(&out);
            if norm > DEGENERATE_NORM {
                let j = runner_up(&out, y);
                let s = out[y] - out[j];
                margin_sum += s / norm;
                // g -= λ ∂(s/‖Φ‖)/∂Φ
                let c = s / (norm * norm * norm);
                for (gi, &v) in g.iter_mut().zip(&out) {
                    *gi += lambda * c * v;
                }
                g[y] -= lambda / norm;
                g[j] += lambda / norm;
            }
        }
        net.backward_into(&trace, &g, w, grad, false)?;
    }
    Ok(if lambda != 0.0 {
        ce * w - lambda * margin_sum * w
    } else {
        ce * w
    })
}

/// Margin-regularized loss `CE - λ Δμ` over a whole batch.
pub fn regularized_loss(net: &Network, batch: &Dataset, lambda: f64) -> Result<(f64, Vec<f64>)> {
    check_compatible(net, batch)?;
    let indices: Vec<usize> = (0..batch.len()).collect();
    loss_and_gradient(net, batch, &indices, lambda)
}

/// Fraction of samples whose largest output is the label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    Ok(evaluate(net, data, None, 0.0)?.accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// `CE - λ Δμ`.
    pub loss: f64,
    pub accuracy: f64,
    pub delta_mu: f64,
    pub samples: usize,
}

/// Loss, accuracy and margin over the first `limit` samples.
pub fn evaluate(net: &Network, data: &Dataset, limit: Option<usize>, lambda: f64) -> Result<Evaluation> {
    check_compatible(net, data)?;
    let n = limit.map_or(data.len(), |l| l.min(data.len()));
    let mut ce = 0.0;
    let mut correct = 0usize;
    let mut margin_sum = 0.0;
    for i in 0..n {
        let out = net.predict(data.sample(i))?;
        let y = data.label(i);
        ce += cross_entropy(&out, y).0;
        if argmax(&out) == y {
            correct += 1;
        }
        let norm = crate::linalg::norm2(&out);
        if norm > DEGENERATE_NORM {
            margin_sum += (out[y] - out[runner_up(&out, y)]) / norm;
        }
    }
    let nf = n as f64;
    let delta_mu = margin_sum / nf;
    Ok(Evaluation {
        loss: ce / nf - lambda * delta_mu,
        accuracy: correct as f64 / nf,
        delta_mu,
        samples: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// One full-batch step per epoch.
    Gd,
    Sgd,
    /// RK4 integration of `dθ/dt = -∇L(θ)`.
    GradientFlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "every")]
pub enum RecordPolicy {
    /// Every step for at most 1000 training samples, otherwise every 50
    /// steps and at each epoch end.
    Auto,
    EveryStep,
    /// Every `n` steps and at each epoch end.
    Every(usize),
    EpochEnd,
}

impl RecordPolicy {
    fn interval(self, samples: usize) -> Option<usize> {
        match self {
            RecordPolicy::Auto if samples <= 1000 => Some(1),
            RecordPolicy::Auto => Some(50),
            RecordPolicy::EveryStep => Some(1),
            RecordPolicy::Every(n) => Some(n.max(1)),
            RecordPolicy::EpochEnd => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// `None` is full batch.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub lambda_margin: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub flow_step: f64,
    pub total_time: f64,
    pub record: RecordPolicy,
    /// Leading train/test samples evaluated for each trace record; `None`
    /// evaluates the full sets.
    pub eval_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: Some(100),
            epochs: 5,
            lambda_margin: 0.0,
            seed: 0,
            optimizer: Optimizer::Sgd,
            flow_step: 1e-2,
            total_time: 50.0,
            record: RecordPolicy::Auto,
            eval_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Spec(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.optimizer != Optimizer::GradientFlow && self.epochs == 0 {
            return Err(Error::Spec("epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Spec("batch size must be positive".into()));
        }
        if !(self.lambda_margin >= 0.0) {
            return Err(Error::Spec(format!(
                "margin weight {} must be non-negative",
                self.lambda_margin
            )));
        }
        if self.optimizer == Optimizer::GradientFlow {
            if !(self.flow_step > 0.0) || !self.flow_step.is_finite() {
                return Err(Error::Spec(format!("flow step {} must be positive", self.flow_step)));
            }
            if !(self.total_time >= 0.0) || !self.total_time.is_finite() {
                return Err(Error::Spec(format!(
                    "total time {} must be non-negative",
                    self.total_time
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub delta_mu: f64,
    pub theta_norm: f64,
    pub wall_ms: u64,
    /// Integration time, gradient flow only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
}

pub const TRACE_CSV_HEADER: &str = "step,epoch,loss,train_acc,test_acc,delta_mu,theta_norm,wall_ms";

impl TrainTrace {
    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for r in &self.records {
            let test = r.test_acc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.step, r.epoch, r.loss, r.train_acc, test, r.delta_mu, r.theta_norm, r.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            margin::write_ndjson(&mut w, r)?;
        }
        Ok(())
    }
}

/// State passed to a training hook before each parameter update.
pub struct StepEvent<'a> {
    /// Index of the update about to be applied (the first is 1).
    pub step: usize,
    pub epoch: usize,
    pub net: &'a Network,
    pub batch: &'a [usize],
    /// Gradient of the batch objective; the update is `-lr * gradient`.
    pub gradient: &'a [f64],
    pub learning_rate: f64,
}

pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    train_with_hook(net, train_set, test_set, config, |_| Ok(()))
}

/// Trains `net` in place. `hook` runs before every GD/SGD update.
pub fn train_with_hook(
    net: &mut Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
    mut hook: impl FnMut(&StepEvent<'_>) -> Result<()>,
) -> Result<TrainTrace> {
    config.validate()?;
    check_compatible(net, train_set)?;
    if let Some(t) = test_set {
        check_compatible(net, t)?;
    }
    if config.optimizer == Optimizer::GradientFlow {
        return gradient_flow(net, train_set, test_set, config, |_, _| Ok(()));
    }

    let started = Instant::now();
    let interval = config.record.interval(train_set.len());
    let mut trace = TrainTrace::default();
    let mut recorder = Recorder {
        train_set,
        test_set,
        lambda: config.lambda_margin,
        started,
    };
    trace.records.push(recorder.record(net, 0, 0, config.eval_limit, None)?);

    let n = train_set.len();
    let batch = match config.optimizer {
        Optimizer::Gd => n,
        _ => config.batch_size.unwrap_or(n).min(n),
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grad = vec![0.0; net.param_count()];
    let check_symmetry = net
        .layers()
        .iter()
        .any(|l| l.kind == crate::model::LayerKind::Quadratic);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        if config.optimizer == Optimizer::Sgd {
            order.shuffle(&mut rng);
        }
        let chunks: Vec<&[usize]> = order.chunks(batch).collect();
        let last_chunk = chunks.len() - 1;
        for (c, indices) in chunks.into_iter().enumerate() {
            step += 1;
            let loss = accumulate_loss_gradient(net, train_set, indices, config.lambda_margin, &mut grad)?;
            check_divergence(step, loss)?;
            hook(&StepEvent {
                step,
                epoch,
                net,
                batch: indices,
                gradient: &grad,
                learning_rate: config.learning_rate,
            })?;
            // Apply the step and clear the gradient in one pass.
            for (t, g) in net.theta_mut().iter_mut().zip(grad.iter_mut()) {
                *t -= config.learning_rate * *g;
                *g = 0.0;
            }
            if check_symmetry {
                net.check_quadratic_symmetry(SYMMETRY_TOLERANCE)?;
            }
            let epoch_end = c == last_chunk;
            let due = interval.is_some_and(|k| step % k == 0);
            if epoch_end || due {
                let rec = recorder.record(net, step, epoch, config.eval_limit, None)?;
                check_divergence(step, rec.loss)?;
                if epoch_end {
                    log::info!(
                        "epoch {epoch} step {step}: loss {:.4} train_acc {:.4} test_acc {} Δμ {:.4}",
                        rec.loss,
                        rec.train_acc,
                        rec.test_acc.map_or("-".into(), |a| format!("{a:.4}")),
                        rec.delta_mu
                    );
                }
                trace.records.push(rec);
            }
        }
    }
    Ok(trace)
}

struct Recorder<'a> {
    train_set: &'a Dataset,
    test_set: Option<&'a Dataset>,
    lambda: f64,
    started: Instant,
}

impl Recorder<'_> {
    fn record(
        &mut self,
        net: &Network,
        step: usize,
        epoch: usize,
        limit: Option<usize>,
        time: Option<f64>,
    ) -> Result<TrainRecord> {
        let tr = evaluate(net, self.train_set, limit, self.lambda)?;
        let test_acc = match self.test_set {
            Some(t) => Some(evaluate(net, t, limit, 0.0)?.accuracy),
            None => None,
        };
        Ok(TrainRecord {
            step,
            epoch,
            loss: tr.loss,
            train_acc: tr.accuracy,
            test_acc,
            delta_mu: tr.delta_mu,
            theta_norm: net.theta_norm(),
            wall_ms: self.started.elapsed().as_millis() as u64,
            time,
        })
    }
}

fn check_divergence(step: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step,
            reason: format!("loss is {loss}"),
        });
    }
    if loss > DIVERGENCE_LOSS {
        return Err(Error::Diverged {
            step,
            reason: format!("loss {loss:e} exceeds {DIVERGENCE_LOSS:e}"),
        });
    }
    Ok(())
}

/// Integrates `dθ/dt = -∇L(θ)` over the whole training set with classical
/// fourth-order Runge-Kutta, using `config.flow_step` up to
/// `config.total_time` (the final step is shortened to land on it).
///
/// `on_step(time, net)` runs after every step, including once at time 0.
pub fn gradient_flow(
    net: &mut Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
    mut on_step: impl FnMut(f64, &Network) -> Result<()>,
) -> Result<TrainTrace> {
    let config = TrainConfig {
        optimizer: Optimizer::GradientFlow,
        ..config.clone()
    };
    config.validate()?;
    check_compatible(net, train_set)?;
    let mut recorder = Recorder {
        train_set,
        test_set,
        lambda: config.lambda_margin,
        started: Instant::now(),
    };
    let interval = config.record.interval(train_set.len());
    let indices: Vec<usize> = (0..train_set.len()).collect();
    let h = config.flow_step;
    let total = config.total_time;
    let steps = if total == 0.0 { 0 } else { (total / h - 1e-9).ceil() as usize };

    let mut trace = TrainTrace::default();
    trace.records.push(recorder.record(net, 0, 0, config.eval_limit, Some(0.0))?);
    on_step(0.0, net)?;

    let lambda = config.lambda_margin;
    let mut probe = net.clone();
    let mut field = |theta: &[f64], out: &mut Vec<f64>| -> Result<f64> {
        probe.set_theta(theta)?;
        let (loss, g) = loss_and_gradient(&probe, train_set, &indices, lambda)?;
        *out = g;
        for v in out.iter_mut() {
            *v = -*v;
        }
        Ok(loss)
    };

    let p = net.param_count();
    let (mut k1, mut k2, mut k3, mut k4) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut tmp = vec![0.0; p];
    for step in 1..=steps {
        let t0 = (step - 1) as f64 * h;
        let dt = if step == steps { total - t0 } else { h };
        let theta = net.theta().to_vec();

        let loss = field(&theta, &mut k1)?;
        check_divergence(step, loss)?;
        for i in 0..p {
            tmp[i] = theta[i] + 0.5 * dt * k1[i];
        }
        field(&tmp, &mut k2)?;
        for i in 0..p {
            tmp[i] = theta[i] + 0.5 * dt * k2[i];
        }
        field(&tmp, &mut k3)?;
        for i in 0..p {
            tmp[i] = theta[i] + dt * k3[i];
        }
        field(&tmp, &mut k4)?;
        let next: Vec<f64> = (0..p)
            .map(|i| theta[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        net.set_theta(&next)?;

        let time = if step == steps { total } else { step as f64 * h };
        on_step(time, net)?;
        let due = step == steps || interval.is_some_and(|k| step % k == 0);
        if due {
            let rec = recorder.record(net, step, 0, config.eval_limit, Some(time))?;
            check_divergence(step, rec.loss)?;
            trace.records.push(rec);
        }
    }
    Ok(trace)
}
