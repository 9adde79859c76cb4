//! Post-hoc analyses of trained networks.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, norm2, sym_eigen, EigenDecomposition};
use crate::margin::check_compatible;
use crate::model::{argmax, LayerKind, Network};
use crate::train::accuracy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSpec {
    Rank(usize),
    Full,
}

impl fmt::Display for RankSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankSpec::Rank(r) => write!(f, "{r}"),
            RankSpec::Full => f.write_str("full"),
        }
    }
}

impl FromStr for RankSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") {
            return Ok(RankSpec::Full);
        }
        s.parse()
            .map(RankSpec::Rank)
            .map_err(|_| Error::Spec(format!("invalid rank {s:?}")))
    }
}

/// Parses a comma-separated list such as `1,2,4,full`.
pub fn parse_ranks(list: &str) -> Result<Vec<RankSpec>> {
    list.split(',').map(str::parse).collect()
}

/// Eigendecomposition of each output unit's weight matrix.
#[derive(Debug, Clone)]
pub struct ClassSpectra {
    pub inputs: usize,
    pub units: Vec<EigenDecomposition>,
}

/// Decomposes `A_i` (quadratic) or `Σ c cᵀ` (low-rank) for every output of a
/// single-layer network.
pub fn class_spectra(net: &Network) -> Result<ClassSpectra> {
    if net.layers().len() != 1 {
        return Err(Error::Unsupported(
            "spectra need a single quadratic or low-rank layer".into(),
        ));
    }
    let units = match net.layers()[0].kind {
        LayerKind::Quadratic => {
            let q = net.quadratic_layer(0)?;
            (0..q.units())
                .map(|u| sym_eigen(&q.matrix(u)?))
                .collect::<Result<_>>()?
        }
        LayerKind::LowRank { .. } => {
            let l = net.low_rank_layer(0)?;
            (0..l.units())
                .map(|u| sym_eigen(&l.effective_matrix(u)?))
                .collect::<Result<_>>()?
        }
        LayerKind::Linear { .. } => {
            return Err(Error::Unsupported("linear layers have no weight spectrum".into()))
        }
    };
    Ok(ClassSpectra {
        inputs: net.inputs(),
        units,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPoint {
    pub rank: RankSpec,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCurve {
    pub full_accuracy: f64,
    pub points: Vec<RankPoint>,
}

impl RankCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rank,accuracy")?;
        for p in &self.points {
            writeln!(w, "{},{}", p.rank, p.accuracy)?;
        }
        Ok(())
    }
}

fn require_single_quadratic(net: &Network) -> Result<()> {
    match net.layers() {
        [l] if l.kind == LayerKind::Quadratic => Ok(()),
        _ => Err(Error::Unsupported(
            "rank truncation needs a single full quadratic layer".into(),
        )),
    }
}

/// Copy of `net` with every `A_i` replaced by its leading `rank` spectral
/// terms. `rank >= d` returns an exact copy.
pub fn truncated_network(net: &Network, spectra: &ClassSpectra, rank: usize) -> Result<Network> {
    require_single_quadratic(net)?;
    let d = net.inputs();
    if rank > d {
        return Err(Error::Spec(format!("rank {rank} exceeds dimension {d}")));
    }
    if rank == d {
        return Ok(net.clone());
    }
    let mut out = net.clone();
    let theta = out.theta_mut();
    for (u, eig) in spectra.units.iter().enumerate() {
        let m = eig.truncated(rank);
        theta[u * d * d..(u + 1) * d * d].copy_from_slice(m.as_slice());
    }
    Ok(out)
}

/// Test accuracy after truncating each class matrix to the requested ranks.
/// Ranks must be strictly increasing; `Full` (or `d`) evaluates the original
/// network.
pub fn truncate_and_eval(net: &Network, data: &Dataset, ranks: &[RankSpec]) -> Result<RankCurve> {
    let spectra = class_spectra_for_truncation(net)?;
    truncate_and_eval_with(net, data, ranks, &spectra)
}

fn class_spectra_for_truncation(net: &Network) -> Result<ClassSpectra> {
    require_single_quadratic(net)?;
    class_spectra(net)
}

/// As [`truncate_and_eval`] with precomputed spectra.
pub fn truncate_and_eval_with(
    net: &Network,
    data: &Dataset,
    ranks: &[RankSpec],
    spectra: &ClassSpectra,
) -> Result<RankCurve> {
    require_single_quadratic(net)?;
    check_compatible(net, data)?;
    let d = net.inputs();
    for w in ranks.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Spec(format!(
                "ranks must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(RankSpec::Rank(r)) = ranks.iter().find(|r| matches!(r, RankSpec::Rank(r) if *r > d)) {
        return Err(Error::Spec(format!("rank {r} exceeds dimension {d}")));
    }
    let full_accuracy = accuracy(net, data)?;
    let mut points = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let acc = match rank {
            RankSpec::Full => full_accuracy,
            RankSpec::Rank(r) if r == d => full_accuracy,
            RankSpec::Rank(r) => accuracy(&truncated_network(net, spectra, r)?, data)?,
        };
        points.push(RankPoint { rank, accuracy: acc });
    }
    Ok(RankCurve {
        full_accuracy,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaClass {
    pub class: usize,
    /// Samples predicted as this class.
    pub count: usize,
    /// Mean input over those samples; `None` when there are none.
    pub sta: Option<Vec<f64>>,
    pub leading_eigenvalue: f64,
    pub leading_eigenvector: Vec<f64>,
    /// `|cos(sta, leading eigenvector)|`.
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaReport {
    pub classes: Vec<StaClass>,
}

impl StaReport {
    /// Mean absolute cosine over classes with a defined STA.
    pub fn mean_cosine(&self) -> Option<f64> {
        let c: Vec<f64> = self.classes.iter().filter_map(|c| c.cosine).collect();
        (!c.is_empty()).then(|| c.iter().sum::<f64>() / c.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "class,count,leading_eigenvalue,cosine")?;
        for c in &self.classes {
            let cos = c.cosine.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", c.class, c.count, c.leading_eigenvalue, cos)?;
        }
        Ok(())
    }

    /// One row per class: the class index followed by the STA entries.
    /// Classes without predictions are skipped.
    pub fn write_sta_rows<W: Write>(&self, mut w: W) -> Result<()> {
        for c in &self.classes {
            if let Some(sta) = &c.sta {
                write!(w, "{}", c.class)?;
                for v in sta {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Mean input per predicted class, compared with the leading eigenvector of
/// that class's weight matrix.
pub fn spike_triggered_average(net: &Network, data: &Dataset) -> Result<StaReport> {
    let spectra = class_spectra(net)?;
    spike_triggered_average_with(net, data, &spectra)
}

pub fn spike_triggered_average_with(net: &Network, data: &Dataset, spectra: &ClassSpectra) -> Result<StaReport> {
    check_compatible(net, data)?;
    let k = net.outputs();
    let d = data.dim();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for i in 0..data.len() {
        let c = argmax(&net.predict(data.sample(i))?);
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(data.sample(i)) {
            *s += x;
        }
    }
    let classes = (0..k)
        .map(|c| {
            let eig = &spectra.units[c];
            let sta = (counts[c] > 0).then(|| sums[c].iter().map(|s| s / counts[c] as f64).collect::<Vec<f64>>());
            let leading = eig.vector(0).to_vec();
            let cos = sta.as_ref().and_then(|s| abs_cosine(s, &leading));
            StaClass {
                class: c,
                count: counts[c],
                sta,
                leading_eigenvalue: eig.values()[0],
                leading_eigenvector: leading,
                cosine: cos,
            }
        })
        .collect();
    Ok(StaReport { classes })
}

fn abs_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    cosine(a, b).ok().map(f64::abs)
}

/// Mean `|cos|` between each class STA and the leading eigenvector of a
/// different class, under a seeded derangement of the classes.
pub fn sta_shuffled_baseline(report: &StaReport, seed: u64) -> Option<f64> {
    let k = report.classes.len();
    if k < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..k).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    let cos: Vec<f64> = report
        .classes
        .iter()
        .zip(&perm)
        .filter_map(|(c, &p)| {
            let sta = c.sta.as_ref()?;
            abs_cosine(sta, &report.classes[p].leading_eigenvector)
        })
        .collect();
    (!cos.is_empty()).then(|| cos.iter().sum::<f64>() / cos.len() as f64)
}

fn require_degree(net: &Network) -> Result<u32> {
    net.homogeneity_degree().ok_or_else(|| {
        Error::Unsupported("homogeneity needs a pure quadratic or low-rank stack".into())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCheck {
    pub alpha: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub degree: u32,
    pub scales: Vec<ScaleCheck>,
    pub worst_relative_error: f64,
}

fn relative_vec_error(actual: &[f64], expected: &[f64]) -> f64 {
    let diff: f64 = actual
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = norm2(expected).max(norm2(actual));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares `Φ(x, αθ)` with `α^L Φ(x, θ)` for each scale.
pub fn check_homogeneity(net: &Network, x: &[f64], scales: &[f64]) -> Result<HomogeneityReport> {
    let degree = require_degree(net)?;
    let base = net.predict(x)?;
    let mut scaled = net.clone();
    let mut checks = Vec::with_capacity(scales.len());
    for &alpha in scales {
        let theta: Vec<f64> = net.theta().iter().map(|t| alpha * t).collect();
        scaled.set_theta(&theta)?;
        let out = scaled.predict(x)?;
        let factor = alpha.powi(degree as i32);
        let expected: Vec<f64> = base.iter().map(|v| factor * v).collect();
        checks.push(ScaleCheck {
            alpha,
            relative_error: relative_vec_error(&out, &expected),
        });
    }
    let worst = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    Ok(HomogeneityReport {
        degree,
        scales: checks,
        worst_relative_error: worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerOutput {
    /// `⟨∂Φ_i/∂θ, θ⟩`
    pub lhs: f64,
    /// `L Φ_i`
    pub rhs: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerReport {
    pub degree: u32,
    pub outputs: Vec<EulerOutput>,
    pub worst_relative_error: f64,
}

/// Checks `⟨∂Φ_i/∂θ, θ⟩ = L Φ_i` for every output.
///
/// The error is taken relative to `max(|L Φ_i|, Σ_k |θ_k ∂Φ_i/∂θ_k|)`, the
/// magnitude of the terms that cancel in the inner product.
pub fn check_euler_identity(net: &Network, x: &[f64]) -> Result<EulerReport> {
    let degree = require_degree(net)?;
    let l = f64::from(degree);
    let (out, trace) = net.forward(x)?;
    let theta = net.theta();
    let mut outputs = Vec::with_capacity(out.len());
    for (i, &phi) in out.iter().enumerate() {
        let mut g = vec![0.0; out.len()];
        g[i] = 1.0;
        let mut grad = vec![0.0; net.param_count()];
        net.backward_into(&trace, &g, 1.0, &mut grad, false)?;
        let lhs = dot(&grad, theta);
        let rhs = l * phi;
        let magnitude: f64 = grad.iter().zip(theta).map(|(g, t)| (g * t).abs()).sum();
        let scale = rhs.abs().max(magnitude);
        let diff = (lhs - rhs).abs();
        outputs.push(EulerOutput {
            lhs,
            rhs,
            relative_error: if diff == 0.0 { 0.0 } else { diff / scale },
        });
    }
    let worst = outputs.iter().map(|o| o.relative_error).fold(0.0, f64::max);
    Ok(EulerReport {
        degree,
        outputs,
        worst_relative_error: worst,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // ties share the mean of their 1-based positions
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate("need at least two pairs".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let ca: Vec<f64> = ra.iter().map(|r| r - mean).collect();
    let cb: Vec<f64> = rb.iter().map(|r| r - mean).collect();
    cosine(&ca, &cb).map_err(|_| Error::Degenerate("constant sequence has no rank correlation".into()))
}
