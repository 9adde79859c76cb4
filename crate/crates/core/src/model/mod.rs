//! Layers, network composition and analytic backpropagation.
//!
//! All parameters of a [`Network`] live in one flat vector θ; each layer owns
//! a contiguous slice of it. Layout per layer:
//!
//! * linear: weight rows (`outputs × inputs`) followed by the bias, if any;
//! * quadratic: `A_0, A_1, …` each `inputs × inputs` row-major;
//! * low-rank: `c_{0,0}, …, c_{0,r-1}, c_{1,0}, …` each of length `inputs`.

mod checkpoint;
mod layer;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use layer::{LayerKind, LayerSpec, LowRankLayer, QuadraticLayer};

use crate::error::{Error, Result};
use crate::linalg::norm2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    /// Applied between layers (never after the last). Linear stacks only.
    Relu,
}

/// Layer stack description, independent of parameter values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Quadratic: `(G + Gᵀ)/2`, low-rank factors and linear weights: i.i.d.
    /// normal with variance `1/inputs`. Biases start at zero.
    Gaussian,
    /// Rank-one, two-unit, two-input low-rank layer with `c_1 = e_1`,
    /// `c_2 = e_2`.
    XorPaper,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, activation: Activation) -> Result<Self> {
        let spec = Self { layers, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Spec("network needs at least one layer".into()));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Spec(format!(
                    "layer {i} has {} outputs but layer {} expects {} inputs",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        if self.activation == Activation::Relu
            && self
                .layers
                .iter()
                .any(|l| !matches!(l.kind, LayerKind::Linear { .. }))
        {
            return Err(Error::Spec(
                "ReLU is only allowed in purely linear networks".into(),
            ));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Degree `L` with `Φ(x, αθ) = α^L Φ(x, θ)`, or `None` when the stack
    /// contains linear layers.
    ///
    /// Each layer contributes its own degree plus twice the degree of its
    /// input, so a pure low-rank stack of `l` layers has `L = 2^{l+1} - 2`
    /// and a pure quadratic stack has `L = 2^l - 1`.
    pub fn homogeneity_degree(&self) -> Option<u32> {
        self.layers
            .iter()
            .try_fold(0u32, |input_degree, layer| {
                Some(layer.own_degree()? + 2 * input_degree)
            })
    }

    /// Parses a model description as accepted by the command line:
    ///
    /// * `linear`: single bias-carrying linear layer `inputs -> classes`;
    /// * `mlp:H`: `inputs -> ReLU(H) -> classes`, linear with biases;
    /// * `quadratic`: single quadratic layer;
    /// * `lowrank:R`: single low-rank layer of rank `R`;
    /// * `lowrank-deep:W1xR1,...,R`: low-rank stack, hidden widths `W` with
    ///   ranks `R`, the last entry being the rank of the output layer.
    pub fn parse(model: &str, inputs: usize, classes: usize) -> Result<Self> {
        let (name, arg) = match model.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (model, None),
        };
        let parse_count = |s: &str, what: &str| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Spec(format!("invalid {what} {s:?} in model {model:?}")))
        };
        let (layers, activation) = match (name, arg) {
            ("linear", None) => (vec![LayerSpec::linear(inputs, classes, true)], Activation::None),
            ("mlp", Some(h)) => {
                let h = parse_count(h, "hidden width")?;
                (
                    vec![
                        LayerSpec::linear(inputs, h, true),
                        LayerSpec::linear(h, classes, true),
                    ],
                    Activation::Relu,
                )
            }
            ("quadratic", None) => (vec![LayerSpec::quadratic(inputs, classes)], Activation::None),
            ("lowrank", Some(r)) => (
                vec![LayerSpec::low_rank(inputs, classes, parse_count(r, "rank")?)],
                Activation::None,
            ),
            ("lowrank-deep", Some(list)) => {
                let entries: Vec<&str> = list.split(',').collect();
                let mut layers = Vec::with_capacity(entries.len());
                let mut width = inputs;
                for (i, entry) in entries.iter().enumerate() {
                    if i + 1 == entries.len() {
                        layers.push(LayerSpec::low_rank(width, classes, parse_count(entry, "rank")?));
                    } else {
                        let (w, r) = entry.split_once('x').ok_or_else(|| {
                            Error::Spec(format!(
                                "hidden entry {entry:?} in model {model:?} must look like WIDTHxRANK"
                            ))
                        })?;
                        let w = parse_count(w, "width")?;
                        layers.push(LayerSpec::low_rank(width, w, parse_count(r, "rank")?));
                        width = w;
                    }
                }
                (layers, Activation::None)
            }
            _ => return Err(Error::Spec(format!("unknown model {model:?}"))),
        };
        Self::new(layers, activation)
    }
}

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed)
}

/// Layer stack plus its flat parameter vector θ.
#[derive(Debug)]
pub struct Network {
    spec: NetworkSpec,
    offsets: Vec<usize>,
    params: Vec<f64>,
    id: u64,
    generation: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            offsets: self.offsets.clone(),
            params: self.params.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Per-layer values retained by [`Network::forward`] for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    network_id: u64,
    generation: u64,
    /// `inputs[l]` is what layer `l` consumed (after any activation).
    inputs: Vec<Vec<f64>>,
    /// Raw layer outputs, before activation.
    outputs: Vec<Vec<f64>>,
    aux: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }

    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("trace has at least one layer")
    }
}

impl Network {
    /// Network with all parameters zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut offsets = Vec::with_capacity(spec.layers.len() + 1);
        let mut total = 0;
        for layer in &spec.layers {
            offsets.push(total);
            total += layer.param_count();
        }
        offsets.push(total);
        Ok(Self {
            spec,
            offsets,
            params: vec![0.0; total],
            id: fresh_id(),
            generation: 0,
        })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::Dimension(format!(
                "network has {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        net.check_quadratic_symmetry(crate::linalg::SYMMETRY_TOLERANCE)?;
        Ok(net)
    }

    /// Draws parameters deterministically from `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64, scheme: InitScheme) -> Result<Self> {
        let mut net = Self::zeros(spec.clone())?;
        match scheme {
            InitScheme::XorPaper => {
                let expected = LayerSpec::low_rank(2, 2, 1);
                if spec.layers != [expected] {
                    return Err(Error::Spec(
                        "xor paper init needs a single rank-1 low-rank layer 2 -> 2".into(),
                    ));
                }
                net.params.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
            }
            InitScheme::Gaussian => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for (l, layer) in spec.layers.iter().enumerate() {
                    let std = (1.0 / layer.inputs as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    let slice = &mut net.params[net.offsets[l]..net.offsets[l + 1]];
                    match layer.kind {
                        LayerKind::Linear { bias } => {
                            let n_w = layer.inputs * layer.outputs;
                            for w in &mut slice[..n_w] {
                                *w = normal.sample(&mut rng);
                            }
                            if bias {
                                slice[n_w..].fill(0.0);
                            }
                        }
                        LayerKind::Quadratic => {
                            let n = layer.inputs;
                            for a in slice.chunks_exact_mut(n * n) {
                                for v in a.iter_mut() {
                                    *v = normal.sample(&mut rng);
                                }
                                for i in 0..n {
                                    for j in (i + 1)..n {
                                        let avg = 0.5 * (a[i * n + j] + a[j * n + i]);
                                        a[i * n + j] = avg;
                                        a[j * n + i] = avg;
                                    }
                                }
                            }
                        }
                        LayerKind::LowRank { .. } => {
                            for v in slice.iter_mut() {
                                *v = normal.sample(&mut rng);
                            }
                        }
                    }
                }
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.spec.layers
    }

    pub fn inputs(&self) -> usize {
        self.spec.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.spec.outputs()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn homogeneity_degree(&self) -> Option<u32> {
        self.spec.homogeneity_degree()
    }

    /// Flat parameter vector θ.
    pub fn theta(&self) -> &[f64] {
        &self.params
    }

    /// Mutable θ. Any trace taken before this call becomes stale.
    pub fn theta_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "network has {} parameters, got {}",
                self.params.len(),
                theta.len()
            )));
        }
        self.theta_mut().copy_from_slice(theta);
        Ok(())
    }

    pub fn theta_norm(&self) -> f64 {
        norm2(&self.params)
    }

    /// Parameter range `[start, end)` of layer `l` inside θ.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn layer_params(&self, l: usize) -> &[f64] {
        &self.params[self.layer_range(l)]
    }

    pub fn quadratic_layer(&self, l: usize) -> Result<QuadraticLayer<'_>> {
        let spec = self.layer_spec(l)?;
        match spec.kind {
            LayerKind::Quadratic => Ok(QuadraticLayer::new(spec, self.layer_params(l))),
            _ => Err(Error::Unsupported(format!("layer {l} is not quadratic"))),
        }
    }

    pub fn low_rank_layer(&self, l: usize) -> Result<LowRankLayer<'_>> {
        let spec = self.layer_spec(l)?;
        match spec.kind {
            LayerKind::LowRank { rank } => Ok(LowRankLayer::new(spec, rank, self.layer_params(l))),
            _ => Err(Error::Unsupported(format!("layer {l} is not low-rank"))),
        }
    }

    fn layer_spec(&self, l: usize) -> Result<&LayerSpec> {
        self.spec.layers.get(l).ok_or(Error::IndexOutOfRange {
            index: l,
            len: self.spec.layers.len(),
        })
    }

    /// Fails if any quadratic weight matrix is asymmetric beyond `tol`.
    pub fn check_quadratic_symmetry(&self, tol: f64) -> Result<()> {
        for (l, layer) in self.spec.layers.iter().enumerate() {
            if layer.kind == LayerKind::Quadratic {
                let asym = QuadraticLayer::new(layer, self.layer_params(l)).max_asymmetry();
                if asym > tol {
                    return Err(Error::Contract(format!(
                        "quadratic layer {l} lost symmetry (max |A - Aᵀ| = {asym:e})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Output `Φ(x, θ)`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        let mut aux = Vec::new();
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let mut y = layer.forward(self.layer_params(l), &h, &mut aux);
            if l + 1 < self.spec.layers.len() && self.spec.activation == Activation::Relu {
                relu_in_place(&mut y);
            }
            h = y;
        }
        Ok(h)
    }

    /// Index of the largest output; ties go to the lowest index.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict(x)?))
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_input(x)?;
        let n = self.spec.layers.len();
        let mut trace = ForwardTrace {
            network_id: self.id,
            generation: self.generation,
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            aux: Vec::with_capacity(n),
        };
        let mut h = x.to_vec();
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let mut aux = Vec::new();
            let y = layer.forward(self.layer_params(l), &h, &mut aux);
            let next = if l + 1 < n && self.spec.activation == Activation::Relu {
                let mut a = y.clone();
                relu_in_place(&mut a);
                a
            } else {
                y.clone()
            };
            trace.inputs.push(std::mem::replace(&mut h, next));
            trace.outputs.push(y);
            trace.aux.push(aux);
        }
        Ok((h, trace))
    }

    /// Gradients of `output_gradᵀ Φ` with respect to θ and to the input.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let input_grad = self
            .backward_into(trace, output_grad, 1.0, &mut grad, true)?
            .expect("input gradient requested");
        Ok((grad, input_grad))
    }

    /// Adds `scale * ∂(output_gradᵀ Φ)/∂θ` into `grad`. The input gradient is
    /// only computed when `want_input_grad` is set.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
        scale: f64,
        grad: &mut [f64],
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        if trace.network_id != self.id || trace.generation != self.generation {
            return Err(Error::Contract(
                "forward trace does not belong to the current network parameters".into(),
            ));
        }
        if output_grad.len() != self.outputs() {
            return Err(Error::Dimension(format!(
                "output gradient has length {}, network has {} outputs",
                output_grad.len(),
                self.outputs()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "gradient buffer has length {}, network has {} parameters",
                grad.len(),
                self.params.len()
            )));
        }
        let mut g = output_grad.to_vec();
        let n = self.spec.layers.len();
        for l in (0..n).rev() {
            let layer = &self.spec.layers[l];
            let range = self.layer_range(l);
            let need_input = l > 0 || want_input_grad;
            let gx = layer.backward(
                &self.params[range.clone()],
                &trace.inputs[l],
                &trace.aux[l],
                &g,
                scale,
                &mut grad[range],
                need_input,
            );
            match gx {
                Some(mut gx) if l > 0 => {
                    if self.spec.activation == Activation::Relu {
                        for (gi, &pre) in gx.iter_mut().zip(&trace.outputs[l - 1]) {
                            if pre <= 0.0 {
                                *gi = 0.0;
                            }
                        }
                    }
                    g = gx;
                }
                other => return Ok(other),
            }
        }
        unreachable!("loop returns at layer 0")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(Error::Dimension(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.inputs()
            )));
        }
        Ok(())
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
