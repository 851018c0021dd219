//! Verification instruments: adjointness error statistics, PSNR and dense
//! operator assembly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PatError, Result};
use crate::operators::ImagingOperator;
use crate::real::{dot, norm2, norm_inf, Real};

/// `χ = |⟨Ax, y⟩ − ⟨x, By⟩|`.
pub fn adjoint_error(ax_dot_y: f64, x_dot_by: f64) -> f64 {
    (ax_dot_y - x_dot_by).abs()
}

/// Scale-free companion `χ / (‖Ax‖‖y‖ + ‖x‖‖By‖)`.
pub fn normalized_adjoint_error(chi: f64, ax_norm: f64, y_norm: f64, x_norm: f64, by_norm: f64) -> f64 {
    let denom = ax_norm * y_norm + x_norm * by_norm;
    if denom == 0.0 {
        0.0
    } else {
        chi / denom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointTestReport {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub log10_raw_max: f64,
    pub log10_raw_median: f64,
    pub log10_normalized_max: f64,
    pub log10_normalized_median: f64,
    pub precision: String,
    pub grid_dims: Vec<usize>,
    pub pml_size: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub distribution: String,
    /// Set when a trial failed; the statistics then cover the trials before
    /// the failure.
    pub error: Option<String>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn log10_stats(v: &[f64]) -> (f64, f64) {
    let logs: Vec<f64> = v.iter().map(|x| x.log10()).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (max, median(&logs))
}

/// Standard normal vector drawn from the stream for (`seed`, `trial`,
/// `stream`), independent of scheduling order.
pub fn seeded_normal<T: Real>(seed: u64, trial: u64, stream: u64, n: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial * 2 + stream);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(z)
        })
        .collect()
}

/// Statistics of `χ[A, A*]` over `trials` random pairs `(x, y)`.
pub fn run_adjoint_study<T: Real, O: ImagingOperator<T> + ?Sized>(
    op: &O,
    trials: usize,
    seed: u64,
    grid_dims: Vec<usize>,
    pml_size: Vec<usize>,
) -> Result<AdjointTestReport> {
    if trials < 1 {
        return invalid("adjoint study needs at least one trial");
    }
    let results: Vec<Result<(f64, f64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let x: Vec<T> = seeded_normal(seed, t, 0, op.image_len());
            let y: Vec<T> = seeded_normal(seed, t, 1, op.data_len());
            let ax = op.forward(&x)?;
            let by = op.adjoint(&y)?;
            let chi = adjoint_error(dot(&ax, &y), dot(&x, &by));
            let nrm = normalized_adjoint_error(chi, norm2(&ax), norm2(&y), norm2(&x), norm2(&by));
            Ok((chi, nrm))
        })
        .collect();
    let mut raw = Vec::new();
    let mut normalized = Vec::new();
    let mut error = None;
    for r in results {
        match r {
            Ok((a, b)) => {
                raw.push(a);
                normalized.push(b);
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let (log10_raw_max, log10_raw_median) = log10_stats(&raw);
    let (log10_normalized_max, log10_normalized_median) = log10_stats(&normalized);
    Ok(AdjointTestReport {
        trials: raw.len(),
        raw,
        normalized,
        log10_raw_max,
        log10_raw_median,
        log10_normalized_max,
        log10_normalized_median,
        precision: T::NAME.to_string(),
        grid_dims,
        pml_size,
        seed,
        distribution: "standard_normal".to_string(),
        error,
    })
}

/// Max-normalize and zero everything below 1 % of the peak.
fn normalize_threshold<T: Real>(p: &[T]) -> Vec<f64> {
    let m = norm_inf(p);
    p.iter()
        .map(|v| {
            let x = if m > 0.0 { v.as_f64() / m } else { 0.0 };
            if x >= 0.01 {
                x
            } else {
                0.0
            }
        })
        .collect()
}

/// Peak signal-to-noise ratio in dB after normalizing each image by its own
/// maximum; `+∞` for identical normalized images.
pub fn psnr<T: Real>(p: &[T], q: &[T]) -> Result<f64> {
    if p.len() != q.len() {
        return invalid("psnr: images differ in size");
    }
    if p.iter().all(|v| *v == T::zero()) {
        return invalid("psnr: reference image is identically zero");
    }
    let (a, b) = (normalize_threshold(p), normalize_threshold(q));
    let err: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (p.len() as f64 / err).log10())
}

pub const DENSE_LIMIT: usize = 10_000_000;

/// Column-wise assembly of a linear map into a row-major `n_out × n_in`
/// matrix.
pub fn assemble_dense<F>(op: F, n_in: usize, n_out: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if n_in.saturating_mul(n_out) > DENSE_LIMIT {
        return Err(PatError::SizeGuard {
            n_in,
            n_out,
            limit: DENSE_LIMIT,
        });
    }
    let cols: Vec<Vec<f64>> = (0..n_in)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n_in];
            e[j] = 1.0;
            let c = op(&e)?;
            if c.len() != n_out {
                return invalid(format!("column {j} has {} entries, expected {n_out}", c.len()));
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut m = vec![0.0; n_in * n_out];
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            m[i * n_in + j] = *v;
        }
    }
    Ok(m)
}

/// `‖B − Aᵀ‖_F / ‖A‖_F` for row-major `A` (`rows × cols`) and `B`
/// (`cols × rows`).
pub fn transpose_error(a: &[f64], b: &[f64], rows: usize, cols: usize) -> f64 {
    let mut diff = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            diff += (b[j * rows + i] - a[i * cols + j]).powi(2);
        }
    }
    let na: f64 = a.iter().map(|x| x * x).sum();
    (diff / na).sqrt()
}
