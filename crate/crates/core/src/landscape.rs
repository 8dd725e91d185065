//! Filter-normalised random directions and 2-D loss surfaces
//! `f(α, β) = L(θ + α·δ + β·ρ)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bitset::BitSet;
use crate::data::{augment, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::nn::{NetworkGraph, ParamRole, ParameterStore};
use crate::seed::{self, derive_seed, Stream};

pub const DEFAULT_SUBSET: usize = 1000;

/// A perturbation mirroring the parameter store.
pub type Direction = ParameterStore<f32>;

/// Gaussian direction rescaled so each conv filter / dense row of a weight
/// tensor, and each bias vector as a whole, has the norm of the matching
/// parameter group. Entries with a clear keep flag are zero.
pub fn filter_normalized_direction(net: &NetworkGraph<f32>, seed: u64, keep: Option<&BitSet>) -> Result<Direction> {
    let params = net.params();
    if let Some(k) = keep {
        if k.len() != params.len() {
            return Err(Error::Structure(format!(
                "keep map has {} flags for {} parameters",
                k.len(),
                params.len()
            )));
        }
    }
    let mut rng = seed::rng(seed);
    let mut dir: Vec<f64> = (0..params.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    if let Some(k) = keep {
        for (i, d) in dir.iter_mut().enumerate() {
            if !k.get(i) {
                *d = 0.0;
            }
        }
    }
    let theta = params.values();
    for e in params.layout().entries() {
        let group = match e.role {
            ParamRole::Weight => e.unit_len(),
            ParamRole::Bias => e.len(),
        };
        for start in (e.offset..e.offset + e.len()).step_by(group) {
            let r = start..start + group;
            let tn = theta[r.clone()].iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            let dn = dir[r.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if tn == 0.0 || dn == 0.0 { 0.0 } else { tn / dn };
            for d in &mut dir[r] {
                *d *= scale;
            }
        }
    }
    ParameterStore::from_values(
        std::sync::Arc::clone(params.layout()),
        dir.into_iter().map(|v| v as f32).collect(),
    )
}

/// `size` distinct sample indices drawn from the evaluation stream of `seed`.
pub fn eval_subset(n: usize, size: usize, seed: u64) -> Vec<usize> {
    let size = size.min(n);
    index::sample(&mut seed::rng(derive_seed(seed, Stream::EvalSubset, 0)), n, size).into_vec()
}

/// Mean cross-entropy of `net` over `idx`, accumulated batch by batch.
pub fn evaluate_loss(
    net: &NetworkGraph<f32>,
    data: &Dataset,
    idx: &[usize],
    transform: &AugmentPolicy,
    batch_size: usize,
) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty subset".into()));
    }
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (mut x, y) = data.batch(chunk)?;
        augment(&mut x, 0, transform)?;
        total += net.loss(&x, &y)? * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// `resolution` evenly spaced points over `[lo, hi]`; a single point is 0.
/// Points within rounding distance of 0 are snapped to exactly 0.
pub fn grid_axis(lo: f64, hi: f64, resolution: usize) -> Result<Vec<f64>> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("grid resolution must be at least 1".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= 0.0 && 0.0 <= hi) {
        return Err(Error::InvalidArgument(format!(
            "grid range [{lo}, {hi}] must be finite and contain 0"
        )));
    }
    if resolution == 1 {
        return Ok(vec![0.0]);
    }
    let span = hi - lo;
    Ok((0..resolution)
        .map(|i| {
            let v = lo + span * i as f64 / (resolution - 1) as f64;
            if v.abs() <= 1e-12 * span {
                0.0
            } else {
                v
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub resolution: usize,
    pub batch_size: usize,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Row-major by β: `values[j * alphas.len() + i] = f(alphas[i], betas[j])`.
    pub values: Vec<f64>,
}

impl LossGrid {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.alphas.len() + i]
    }

    /// Comma-separated matrix: `#` metadata lines, then a header row of α
    /// values, then one row per β starting with the β value.
    pub fn to_csv(&self, metadata: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("beta\\alpha");
        for a in &self.alphas {
            let _ = write!(out, ",{a}");
        }
        out.push('\n');
        for (j, b) in self.betas.iter().enumerate() {
            let _ = write!(out, "{b}");
            for i in 0..self.alphas.len() {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path, metadata: &[(&str, String)]) -> Result<()> {
        fs::write(path, self.to_csv(metadata)).map_err(|e| Error::io(path, e))
    }
}

/// Evaluates `L(θ + αδ + βρ)` on every grid point over the samples `idx`.
/// Works on copies; `net` is never modified.
pub fn loss_grid(
    net: &NetworkGraph<f32>,
    data: &Dataset,
    idx: &[usize],
    transform: &AugmentPolicy,
    delta: &Direction,
    rho: &Direction,
    spec: &GridSpec,
) -> Result<LossGrid> {
    let theta = net.params();
    if delta.layout() != theta.layout() || rho.layout() != theta.layout() {
        return Err(Error::Structure("directions do not mirror the network's parameters".into()));
    }
    let alphas = grid_axis(spec.alpha.0, spec.alpha.1, spec.resolution)?;
    let betas = grid_axis(spec.beta.0, spec.beta.1, spec.resolution)?;
    let cells: Vec<(f64, f64)> = betas.iter().flat_map(|&b| alphas.iter().map(move |&a| (a, b))).collect();
    let eval = |&(a, b): &(f64, f64)| -> Result<f64> {
        if a == 0.0 && b == 0.0 {
            return evaluate_loss(net, data, idx, transform, spec.batch_size);
        }
        let mut probe = net.clone();
        let (af, bf) = (a as f32, b as f32);
        for ((w, &d), &r) in probe
            .params_mut()
            .values_mut()
            .iter_mut()
            .zip(delta.values())
            .zip(rho.values())
        {
            *w += af * d + bf * r;
        }
        evaluate_loss(&probe, data, idx, transform, spec.batch_size)
    };
    let values = if spec.workers <= 1 {
        cells.iter().map(eval).collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start workers: {e}")))?
            .install(|| cells.par_iter().map(eval).collect::<Result<Vec<_>>>())?
    };
    Ok(LossGrid { alphas, betas, values })
}
