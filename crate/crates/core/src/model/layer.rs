use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// What a layer computes for each output unit `o`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    /// `y_o = w_o · x (+ b_o)`
    Linear { bias: bool },
    /// `y_o = xᵀ A_o x` with one symmetric `A_o` per unit.
    Quadratic,
    /// `y_o = Σ_j ⟨c_oj, x⟩²`, i.e. `A_o = Σ_j c_oj c_ojᵀ`.
    LowRank { rank: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerSpec {
    pub fn linear(inputs: usize, outputs: usize, bias: bool) -> Self {
        Self {
            kind: LayerKind::Linear { bias },
            inputs,
            outputs,
        }
    }

    pub fn quadratic(inputs: usize, outputs: usize) -> Self {
        Self {
            kind: LayerKind::Quadratic,
            inputs,
            outputs,
        }
    }

    pub fn low_rank(inputs: usize, outputs: usize, rank: usize) -> Self {
        Self {
            kind: LayerKind::LowRank { rank },
            inputs,
            outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        let (i, o) = (self.inputs, self.outputs);
        match self.kind {
            LayerKind::Linear { bias } => o * i + if bias { o } else { 0 },
            LayerKind::Quadratic => o * i * i,
            LayerKind::LowRank { rank } => o * rank * i,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::Spec(format!(
                "layer dimensions must be positive, got {} -> {}",
                self.inputs, self.outputs
            )));
        }
        if let LayerKind::LowRank { rank: 0 } = self.kind {
            return Err(Error::Spec("low-rank layer needs rank >= 1".into()));
        }
        Ok(())
    }

    /// Degree of the output in this layer's own parameters.
    pub(crate) fn own_degree(&self) -> Option<u32> {
        match self.kind {
            LayerKind::Linear { .. } => None,
            LayerKind::Quadratic => Some(1),
            LayerKind::LowRank { .. } => Some(2),
        }
    }

    /// Evaluates the layer. `aux` receives the projections `⟨c_oj, x⟩` for
    /// low-rank layers and stays empty otherwise.
    pub(crate) fn forward(&self, params: &[f64], x: &[f64], aux: &mut Vec<f64>) -> Vec<f64> {
        let (n_in, n_out) = (self.inputs, self.outputs);
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(x.len(), n_in);
        match self.kind {
            LayerKind::Linear { bias } => {
                let (w, b) = params.split_at(n_out * n_in);
                (0..n_out)
                    .map(|o| {
                        let z = dot(&w[o * n_in..(o + 1) * n_in], x);
                        if bias {
                            z + b[o]
                        } else {
                            z
                        }
                    })
                    .collect()
            }
            LayerKind::Quadratic => {
                let support = nonzero_support(x);
                let runs = support_runs(&support);
                params
                    .chunks_exact(n_in * n_in)
                    .map(|a| {
                        let mut total = 0.0;
                        for &p in &support {
                            let row = &a[p * n_in..(p + 1) * n_in];
                            total += x[p] * runs_dot(row, x, &runs);
                        }
                        total
                    })
                    .collect()
            }
            LayerKind::LowRank { rank } => {
                aux.clear();
                aux.extend(params.chunks_exact(n_in).map(|c| dot(c, x)));
                aux.chunks_exact(rank)
                    .map(|z| z.iter().map(|v| v * v).sum())
                    .collect()
            }
        }
    }

    /// Adds `scale * ∂(gᵀy)/∂params` into `grad` and, if requested, returns
    /// `∂(gᵀy)/∂x` (unscaled).
    pub(crate) fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        aux: &[f64],
        g: &[f64],
        scale: f64,
        grad: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (n_in, n_out) = (self.inputs, self.outputs);
        debug_assert_eq!(grad.len(), self.param_count());
        match self.kind {
            LayerKind::Linear { bias } => {
                let (gw, gb) = grad.split_at_mut(n_out * n_in);
                for o in 0..n_out {
                    let go = scale * g[o];
                    if go == 0.0 {
                        continue;
                    }
                    for (gi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                        *gi += go * xi;
                    }
                    if bias {
                        gb[o] += go;
                    }
                }
                want_input_grad.then(|| {
                    let w = &params[..n_out * n_in];
                    let mut gx = vec![0.0; n_in];
                    for o in 0..n_out {
                        if g[o] != 0.0 {
                            for (gi, wi) in gx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                                *gi += g[o] * wi;
                            }
                        }
                    }
                    gx
                })
            }
            LayerKind::Quadratic => {
                let support = nonzero_support(x);
                let runs = support_runs(&support);
                for (o, ga) in grad.chunks_exact_mut(n_in * n_in).enumerate() {
                    let go = scale * g[o];
                    if go == 0.0 {
                        continue;
                    }
                    for &p in &support {
                        let xp = x[p];
                        let row = &mut ga[p * n_in..(p + 1) * n_in];
                        // x_p * x_q is commutative bit-for-bit, so entries
                        // (p, q) and (q, p) receive identical increments and
                        // the accumulated gradient stays exactly symmetric.
                        // Zeros inside a run add nothing.
                        for r in &runs {
                            for (gq, &xq) in row[r.clone()].iter_mut().zip(&x[r.clone()]) {
                                *gq += go * (xp * xq);
                            }
                        }
                    }
                }
                want_input_grad.then(|| {
                    let mut gx = vec![0.0; n_in];
                    for (o, a) in params.chunks_exact(n_in * n_in).enumerate() {
                        if g[o] == 0.0 {
                            continue;
                        }
                        let factor = 2.0 * g[o];
                        for (i, gi) in gx.iter_mut().enumerate() {
                            let row = &a[i * n_in..(i + 1) * n_in];
                            *gi += factor * runs_dot(row, x, &runs);
                        }
                    }
                    gx
                })
            }
            LayerKind::LowRank { rank } => {
                for (u, gc) in grad.chunks_exact_mut(n_in).enumerate() {
                    let go = scale * g[u / rank];
                    if go == 0.0 {
                        continue;
                    }
                    let f = 2.0 * go * aux[u];
                    for (gi, xi) in gc.iter_mut().zip(x) {
                        *gi += f * xi;
                    }
                }
                want_input_grad.then(|| {
                    let mut gx = vec![0.0; n_in];
                    for (u, c) in params.chunks_exact(n_in).enumerate() {
                        let f = 2.0 * g[u / rank] * aux[u];
                        if f != 0.0 {
                            for (gi, ci) in gx.iter_mut().zip(c) {
                                *gi += f * ci;
                            }
                        }
                    }
                    gx
                })
            }
        }
    }
}

fn nonzero_support(x: &[f64]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter_map(|(i, &v)| (v != 0.0).then_some(i))
        .collect()
}

/// Gaps of zeros at most this long are folded into the surrounding run.
const RUN_GAP: usize = 8;

/// Contiguous index ranges covering `support` (sorted).
fn support_runs(support: &[usize]) -> Vec<Range<usize>> {
    let mut runs: Vec<Range<usize>> = Vec::new();
    for &i in support {
        match runs.last_mut() {
            Some(r) if i <= r.end + RUN_GAP => r.end = i + 1,
            _ => runs.push(i..i + 1),
        }
    }
    runs
}

fn runs_dot(row: &[f64], x: &[f64], runs: &[Range<usize>]) -> f64 {
    runs.iter().map(|r| dot(&row[r.clone()], &x[r.clone()])).sum()
}

/// Read-only view of a quadratic layer's weight matrices.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticLayer<'a> {
    inputs: usize,
    outputs: usize,
    params: &'a [f64],
}

impl<'a> QuadraticLayer<'a> {
    pub(crate) fn new(spec: &LayerSpec, params: &'a [f64]) -> Self {
        Self {
            inputs: spec.inputs,
            outputs: spec.outputs,
            params,
        }
    }

    pub fn units(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Row-major entries of `A_unit`.
    pub fn raw(&self, unit: usize) -> &'a [f64] {
        let n = self.inputs * self.inputs;
        &self.params[unit * n..(unit + 1) * n]
    }

    pub fn matrix(&self, unit: usize) -> Result<Matrix> {
        if unit >= self.outputs {
            return Err(Error::IndexOutOfRange {
                index: unit,
                len: self.outputs,
            });
        }
        Matrix::from_vec(self.inputs, self.inputs, self.raw(unit).to_vec())
    }

    /// Largest `|A_ij - A_ji|` across all units.
    pub fn max_asymmetry(&self) -> f64 {
        const TILE: usize = 32;
        let n = self.inputs;
        let mut worst: f64 = 0.0;
        for u in 0..self.outputs {
            let a = self.raw(u);
            // Tiled so the transposed reads stay in cache.
            for bi in (0..n).step_by(TILE) {
                for bj in (bi..n).step_by(TILE) {
                    for i in bi..(bi + TILE).min(n) {
                        for j in bj.max(i + 1)..(bj + TILE).min(n) {
                            worst = worst.max((a[i * n + j] - a[j * n + i]).abs());
                        }
                    }
                }
            }
        }
        worst
    }
}

/// Read-only view of a low-rank layer's factor vectors.
#[derive(Debug, Clone, Copy)]
pub struct LowRankLayer<'a> {
    inputs: usize,
    outputs: usize,
    rank: usize,
    params: &'a [f64],
}

impl<'a> LowRankLayer<'a> {
    pub(crate) fn new(spec: &LayerSpec, rank: usize, params: &'a [f64]) -> Self {
        Self {
            inputs: spec.inputs,
            outputs: spec.outputs,
            rank,
            params,
        }
    }

    pub fn units(&self) -> usize {
        self.outputs
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Factor `c_j` of output `unit`.
    pub fn factor(&self, unit: usize, j: usize) -> &'a [f64] {
        let start = (unit * self.rank + j) * self.inputs;
        &self.params[start..start + self.inputs]
    }

    /// `Σ_j c_j c_jᵀ` for one output unit.
    pub fn effective_matrix(&self, unit: usize) -> Result<Matrix> {
        if unit >= self.outputs {
            return Err(Error::IndexOutOfRange {
                index: unit,
                len: self.outputs,
            });
        }
        let n = self.inputs;
        let mut m = Matrix::zeros(n, n);
        for j in 0..self.rank {
            let c = self.factor(unit, j);
            for i in 0..n {
                if c[i] == 0.0 {
                    continue;
                }
                for (o, &ck) in m.row_mut(i).iter_mut().zip(c) {
                    *o += c[i] * ck;
                }
            }
        }
        Ok(m)
    }
}
