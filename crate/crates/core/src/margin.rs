//! Normalized classification margin and the quantities that bound its rate
//! of change during training.
//!
//! For a sample `(x, y)` with output `Φ = Φ(x, θ)`, the runner-up `j` is the
//! largest non-true class (lowest index on ties), the raw margin is
//! `s = Φ_y - Φ_j`, and the normalized margin is `s / ‖Φ‖₂`. The dataset
//! margin `Δμ` is the mean of the normalized margins.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{condition_number_from_values, cosine, dot, norm1, norm2, sym_eigen, Matrix};
use crate::model::{ForwardTrace, Network};

/// Output norms at or below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Upper bound on `N × P` for routines that keep one gradient per sample.
pub const MAX_PER_SAMPLE_ENTRIES: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMargin {
    pub index: usize,
    /// `Φ_y - Φ_j`.
    pub s: f64,
    pub runner_up: usize,
    /// `s / ‖Φ‖₂`, or 0 for a degenerate sample.
    pub normalized: f64,
    /// Softmax probability of the runner-up class.
    pub softmax_runner_up: f64,
    pub output_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub delta_mu: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub theta_norm: f64,
    /// Samples whose output norm was at most [`DEGENERATE_NORM`].
    pub degenerate: usize,
    pub per_sample: Vec<SampleMargin>,
}

/// Compact per-step record without the per-sample list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSummary {
    pub delta_mu: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub theta_norm: f64,
    pub degenerate: usize,
    pub samples: usize,
}

impl MarginReport {
    pub fn summary(&self) -> MarginSummary {
        MarginSummary {
            delta_mu: self.delta_mu,
            mu1: self.mu1,
            mu2: self.mu2,
            theta_norm: self.theta_norm,
            degenerate: self.degenerate,
            samples: self.per_sample.len(),
        }
    }
}

/// Writes `value` as one line of JSON.
pub fn write_ndjson<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Softmax with max subtraction.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Largest output among classes other than `label`, lowest index on ties.
pub fn runner_up(output: &[f64], label: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, &v) in output.iter().enumerate() {
        if i == label {
            continue;
        }
        if best.is_none_or(|b| v > output[b]) {
            best = Some(i);
        }
    }
    best.expect("at least two classes")
}

pub(crate) fn check_compatible(net: &Network, data: &Dataset) -> Result<()> {
    if net.inputs() != data.dim() {
        return Err(Error::Dimension(format!(
            "network expects {} inputs, dataset has {} features",
            net.inputs(),
            data.dim()
        )));
    }
    if net.outputs() < 2 {
        return Err(Error::Spec("margins need at least two classes".into()));
    }
    if data.classes() > net.outputs() {
        return Err(Error::Dimension(format!(
            "dataset has {} classes, network has {} outputs",
            data.classes(),
            net.outputs()
        )));
    }
    Ok(())
}

struct Evaluated {
    output: Vec<f64>,
    trace: ForwardTrace,
    margin: SampleMargin,
}

fn evaluate(net: &Network, data: &Dataset, n: usize) -> Result<Evaluated> {
    let (output, trace) = net.forward(data.sample(n))?;
    let margin = sample_margin(n, &output, data.label(n));
    Ok(Evaluated { output, trace, margin })
}

fn sample_margin(index: usize, output: &[f64], label: usize) -> SampleMargin {
    let j = runner_up(output, label);
    let s = output[label] - output[j];
    let norm = norm2(output);
    let normalized = if norm > DEGENERATE_NORM { s / norm } else { 0.0 };
    SampleMargin {
        index,
        s,
        runner_up: j,
        normalized,
        softmax_runner_up: softmax(output)[j],
        output_norm: norm,
    }
}

fn is_degenerate(m: &SampleMargin) -> bool {
    m.output_norm <= DEGENERATE_NORM
}

pub fn compute_margin(net: &Network, data: &Dataset) -> Result<MarginReport> {
    check_compatible(net, data)?;
    let n = data.len() as f64;
    let (mut mu1, mut mu2) = (0.0, 0.0);
    let mut degenerate = 0;
    let mut per_sample = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let out = net.predict(data.sample(i))?;
        let m = sample_margin(i, &out, data.label(i));
        if is_degenerate(&m) {
            degenerate += 1;
        } else {
            mu1 += out[data.label(i)] / m.output_norm;
            mu2 += out[m.runner_up] / m.output_norm;
        }
        per_sample.push(m);
    }
    if degenerate > 0 {
        log::warn!("{degenerate} samples have a zero output vector; their margin counts as 0");
    }
    let (mu1, mu2) = (mu1 / n, mu2 / n);
    Ok(MarginReport {
        delta_mu: mu1 - mu2,
        mu1,
        mu2,
        theta_norm: net.theta_norm(),
        degenerate,
        per_sample,
    })
}

/// Output gradient of `s / ‖Φ‖` for one sample.
fn normalized_margin_output_grad(output: &[f64], m: &SampleMargin, label: usize) -> Vec<f64> {
    let norm = m.output_norm;
    let c = m.s / (norm * norm * norm);
    let mut g: Vec<f64> = output.iter().map(|&v| -c * v).collect();
    g[label] += 1.0 / norm;
    g[m.runner_up] -= 1.0 / norm;
    g
}

/// Adds `scale * ∂Δμ/∂θ` for the given samples into `grad` and returns the
/// number of degenerate samples skipped. `Δμ` is averaged over `indices`.
pub(crate) fn accumulate_margin_gradient(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    scale: f64,
    grad: &mut [f64],
) -> Result<usize> {
    let w = scale / indices.len() as f64;
    let mut skipped = 0;
    for &n in indices {
        let e = evaluate(net, data, n)?;
        if is_degenerate(&e.margin) {
            skipped += 1;
            continue;
        }
        let g = normalized_margin_output_grad(&e.output, &e.margin, data.label(n));
        net.backward_into(&e.trace, &g, w, grad, false)?;
    }
    Ok(skipped)
}

/// Exact gradient of `Δμ` with respect to θ. Degenerate samples contribute
/// nothing.
///
/// On homogeneous nets this equals `(1/N) Σ αₙ / ‖Φₙ‖` whenever the output
/// norms scale exactly like `‖θ‖^L` along the direction of interest (see
/// [`assumed_margin_gradient`]); it is always orthogonal to θ there.
pub fn margin_gradient(net: &Network, data: &Dataset) -> Result<Vec<f64>> {
    check_compatible(net, data)?;
    let mut grad = vec![0.0; net.param_count()];
    let indices: Vec<usize> = (0..data.len()).collect();
    let skipped = accumulate_margin_gradient(net, data, &indices, 1.0, &mut grad)?;
    if skipped > 0 {
        log::warn!("{skipped} degenerate samples skipped in the margin gradient");
    }
    Ok(grad)
}

fn require_degree(net: &Network) -> Result<u32> {
    net.homogeneity_degree().ok_or_else(|| {
        Error::Unsupported("only pure quadratic or low-rank stacks are homogeneous".into())
    })
}

/// `(1/N) Σ αₙ / ‖Φₙ‖` with `αₙ = ∂sₙ - (L sₙ / ‖θ‖²) θ`, i.e. the margin
/// gradient under the assumption that each `‖Φₙ‖ / ‖θ‖^L` is constant.
pub fn assumed_margin_gradient(net: &Network, data: &Dataset) -> Result<Vec<f64>> {
    check_compatible(net, data)?;
    let l = f64::from(require_degree(net)?);
    let theta = net.theta();
    let theta_sq = dot(theta, theta);
    let n = data.len() as f64;
    let mut grad = vec![0.0; net.param_count()];
    let mut mean_normalized = 0.0;
    for i in 0..data.len() {
        let e = evaluate(net, data, i)?;
        if is_degenerate(&e.margin) {
            continue;
        }
        let mut g = vec![0.0; net.outputs()];
        g[data.label(i)] = 1.0 / e.margin.output_norm;
        g[e.margin.runner_up] = -1.0 / e.margin.output_norm;
        net.backward_into(&e.trace, &g, 1.0 / n, &mut grad, false)?;
        mean_normalized += e.margin.normalized / n;
    }
    if theta_sq > 0.0 {
        crate::linalg::axpy(-l * mean_normalized / theta_sq, theta, &mut grad);
    }
    Ok(grad)
}

fn check_per_sample_budget(net: &Network, rows: usize) -> Result<()> {
    if rows.saturating_mul(net.param_count()) > MAX_PER_SAMPLE_ENTRIES {
        return Err(Error::Spec(format!(
            "{rows} per-sample gradients of {} parameters exceed the {MAX_PER_SAMPLE_ENTRIES}-entry budget; use fewer samples",
            net.param_count()
        )));
    }
    Ok(())
}

/// `∂sₙ/∂θ` for every sample, with the sample margins.
fn margin_jacobian(net: &Network, data: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<SampleMargin>)> {
    check_per_sample_budget(net, data.len())?;
    let mut rows = Vec::with_capacity(data.len());
    let mut margins = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let e = evaluate(net, data, i)?;
        let mut g = vec![0.0; net.outputs()];
        g[data.label(i)] = 1.0;
        g[e.margin.runner_up] = -1.0;
        let mut row = vec![0.0; net.param_count()];
        net.backward_into(&e.trace, &g, 1.0, &mut row, false)?;
        rows.push(row);
        margins.push(e.margin);
    }
    Ok((rows, margins))
}

/// Tangential parts `αₙ = ∂sₙ - (L sₙ / ‖θ‖²) θ` of the per-sample margin
/// gradients.
pub fn tangential_components(net: &Network, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    check_compatible(net, data)?;
    let l = f64::from(require_degree(net)?);
    let theta = net.theta();
    let theta_sq = dot(theta, theta);
    let (mut rows, margins) = margin_jacobian(net, data)?;
    if theta_sq > 0.0 {
        for (row, m) in rows.iter_mut().zip(&margins) {
            crate::linalg::axpy(-l * m.s / theta_sq, theta, row);
        }
    }
    Ok(rows)
}

/// Separation of the non-runner-up margins from the runner-up margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "epsilon", rename_all = "snake_case")]
pub enum Separation {
    /// Two classes: nothing to separate.
    Vacuous,
    /// Largest ε, i.e. the reciprocal of the smallest gap.
    Separated(f64),
    /// Some class ties the runner-up.
    NotSeparated,
}

impl Separation {
    /// ε as a number, with +∞ for the vacuous case.
    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            Separation::Vacuous => Some(f64::INFINITY),
            Separation::Separated(e) => Some(e),
            Separation::NotSeparated => None,
        }
    }
}

/// Computes the separation of `{Φ_y - Φ_j : j ≠ y}` for each sample and
/// combines them.
pub fn epsilon_separation(outputs: &[Vec<f64>], labels: &[usize]) -> Separation {
    let mut min_gap = f64::INFINITY;
    for (out, &y) in outputs.iter().zip(labels) {
        if out.len() <= 2 {
            continue;
        }
        let j = runner_up(out, y);
        for (i, &v) in out.iter().enumerate() {
            if i != y && i != j {
                // (Φ_y - Φ_i) - (Φ_y - Φ_j)
                min_gap = min_gap.min(out[j] - v);
            }
        }
    }
    if min_gap == f64::INFINITY {
        Separation::Vacuous
    } else if min_gap > 0.0 {
        Separation::Separated(1.0 / min_gap)
    } else {
        Separation::NotSeparated
    }
}

#[derive(Debug, Clone)]
pub struct TheoremDiagnostics {
    pub degree: u32,
    pub samples: usize,
    pub classes: usize,
    pub theta_norm: f64,
    pub separation: Separation,
    /// Largest `‖∂(Φ_y - Φ_j)/∂θ‖₂` over samples and classes `j ≠ y`.
    pub max_margin_grad: f64,
    /// `∂S ∂Sᵀ - (L² / ‖θ‖²) S Sᵀ`, the Gram matrix of the tangential parts.
    pub gram: Matrix,
    pub gram_eigenvalues: Vec<f64>,
    /// Condition number of `gram`, +∞ when singular.
    pub cond_c: f64,
    /// `aₙ = ‖Φₙ‖ / ‖θ‖^L`.
    pub a: Vec<f64>,
    /// `(1/a₁, …, 1/a_N)`.
    pub a_vec: Vec<f64>,
    /// Runner-up softmax probabilities.
    pub v: Vec<f64>,
    pub m_cos: f64,
    /// Whether `m > 0` and `c - 1 ≤ 2m / √(1 - m²)`.
    pub condition_holds: bool,
    /// Lower bound on `dΔμ/dt`; `None` when the margins are not separated.
    pub bound: Option<f64>,
}

/// Serializable digest of [`TheoremDiagnostics`]. Infinite values are
/// written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub degree: u32,
    pub samples: usize,
    pub classes: usize,
    pub theta_norm: f64,
    pub separation: Separation,
    pub max_margin_grad: f64,
    pub gram_min_eigenvalue: f64,
    pub gram_max_eigenvalue: f64,
    pub cond_c: Option<f64>,
    pub a_l1: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub m_cos: f64,
    pub condition_holds: bool,
    pub bound: Option<f64>,
}

impl TheoremDiagnostics {
    pub fn record(&self) -> DiagnosticsRecord {
        let finite = |v: f64| v.is_finite().then_some(v);
        let min = self.gram_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.gram_eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        DiagnosticsRecord {
            degree: self.degree,
            samples: self.samples,
            classes: self.classes,
            theta_norm: self.theta_norm,
            separation: self.separation,
            max_margin_grad: self.max_margin_grad,
            gram_min_eigenvalue: min,
            gram_max_eigenvalue: max,
            cond_c: finite(self.cond_c),
            a_l1: norm1(&self.a_vec),
            a_min: self.a.iter().copied().fold(f64::INFINITY, f64::min),
            a_max: self.a.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            m_cos: self.m_cos,
            condition_holds: self.condition_holds,
            bound: self.bound.and_then(finite),
        }
    }
}

/// Evaluates every quantity entering the lower bound on `dΔμ/dt`.
///
/// Keeps one gradient per sample and per class in memory, so the data set
/// must satisfy `N × P ≤ MAX_PER_SAMPLE_ENTRIES`.
pub fn theorem_diagnostics(net: &Network, data: &Dataset) -> Result<TheoremDiagnostics> {
    check_compatible(net, data)?;
    let degree = require_degree(net)?;
    let k = net.outputs();
    let p = net.param_count();
    check_per_sample_budget(net, data.len() + k)?;
    let l = f64::from(degree);
    let theta = net.theta();
    let theta_norm = norm2(theta);
    if theta_norm == 0.0 {
        return Err(Error::Degenerate("θ is zero".into()));
    }
    let theta_l = theta_norm.powi(degree as i32);

    let n = data.len();
    let mut ds = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut max_grad: f64 = 0.0;
    for i in 0..n {
        let e = evaluate(net, data, i)?;
        if is_degenerate(&e.margin) {
            return Err(Error::Degenerate(format!("sample {i} has a zero output vector")));
        }
        let y = data.label(i);
        // Rows of the output Jacobian, then norms of their differences.
        let jac: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                let mut g = vec![0.0; k];
                g[c] = 1.0;
                let mut row = vec![0.0; p];
                net.backward_into(&e.trace, &g, 1.0, &mut row, false).map(|_| row)
            })
            .collect::<Result<_>>()?;
        for (c, row) in jac.iter().enumerate() {
            if c == y {
                continue;
            }
            let d: f64 = jac[y]
                .iter()
                .zip(row)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            max_grad = max_grad.max(d);
        }
        let j = e.margin.runner_up;
        ds.push(jac[y].iter().zip(&jac[j]).map(|(a, b)| a - b).collect::<Vec<f64>>());
        s.push(e.margin.s);
        a.push(e.margin.output_norm / theta_l);
        v.push(e.margin.softmax_runner_up);
        outputs.push(e.output);
    }

    let mut gram = Matrix::zeros(n, n);
    let c = l * l / (theta_norm * theta_norm);
    for r in 0..n {
        for q in r..n {
            let val = dot(&ds[r], &ds[q]) - c * s[r] * s[q];
            gram.as_mut_slice()[r * n + q] = val;
            gram.as_mut_slice()[q * n + r] = val;
        }
    }
    let gram_eigenvalues = sym_eigen(&gram)?.values().to_vec();
    let cond_c = condition_number_from_values(&gram_eigenvalues);

    let a_vec: Vec<f64> = a.iter().map(|x| 1.0 / x).collect();
    let m_cos = cosine(&a_vec, &v)?;
    let condition_holds = m_cos > 0.0 && {
        let rhs = if m_cos >= 1.0 {
            f64::INFINITY
        } else {
            2.0 * m_cos / (1.0 - m_cos * m_cos).sqrt()
        };
        cond_c - 1.0 <= rhs
    };

    let labels = data.labels();
    let separation = epsilon_separation(&outputs, labels);
    let bound = match separation {
        _ if k == 2 => Some(0.0),
        Separation::Vacuous => Some(0.0),
        Separation::Separated(eps) => Some(
            -(max_grad * max_grad) * (k as f64 - 2.0) * norm1(&a_vec) * (-1.0 / eps).exp()
                / (n as f64 * theta_l),
        ),
        Separation::NotSeparated => None,
    };

    Ok(TheoremDiagnostics {
        degree,
        samples: n,
        classes: k,
        theta_norm,
        separation,
        max_margin_grad: max_grad,
        gram,
        gram_eigenvalues,
        cond_c,
        a,
        a_vec,
        v,
        m_cos,
        condition_holds,
        bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginDerivativeCheck {
    /// `⟨∂Δμ/∂θ, d⟩ · h` with the exact margin gradient.
    pub predicted: f64,
    /// Same with [`assumed_margin_gradient`]; `None` for non-homogeneous nets.
    pub predicted_assumed: Option<f64>,
    /// `Δμ(θ + h d) - Δμ(θ)`.
    pub observed: f64,
}

impl MarginDerivativeCheck {
    /// `|predicted - observed| / |observed|`, or 0 when both vanish.
    pub fn relative_error(&self) -> f64 {
        relative_gap(self.predicted, self.observed)
    }

    pub fn relative_error_assumed(&self) -> Option<f64> {
        self.predicted_assumed.map(|p| relative_gap(p, self.observed))
    }
}

fn relative_gap(predicted: f64, observed: f64) -> f64 {
    let diff = (predicted - observed).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / observed.abs()
    }
}

/// Compares the first-order change of `Δμ` along `direction` with the change
/// observed after stepping a copy of the network.
pub fn check_margin_derivative(
    net: &Network,
    data: &Dataset,
    direction: &[f64],
    step_size: f64,
) -> Result<MarginDerivativeCheck> {
    if direction.len() != net.param_count() {
        return Err(Error::Dimension(format!(
            "direction has length {}, network has {} parameters",
            direction.len(),
            net.param_count()
        )));
    }
    let before = compute_margin(net, data)?.delta_mu;
    let predicted = dot(&margin_gradient(net, data)?, direction) * step_size;
    let predicted_assumed = match net.homogeneity_degree() {
        Some(_) => Some(dot(&assumed_margin_gradient(net, data)?, direction) * step_size),
        None => None,
    };
    let mut moved = net.clone();
    crate::linalg::axpy(step_size, direction, moved.theta_mut());
    let after = compute_margin(&moved, data)?.delta_mu;
    Ok(MarginDerivativeCheck {
        predicted,
        predicted_assumed,
        observed: after - before,
    })
}
