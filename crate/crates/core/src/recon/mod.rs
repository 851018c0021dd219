//! Reconstruction methods: direct time reversal and back-projection,
//! iterative time reversal, (projected) gradient descent on the
//! least-squares functional and proximal gradient descent with a
//! positivity-constrained TV penalty.
//!
//! All iterations start at zero.

pub mod tv;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::psnr;
use crate::error::{invalid, PatError, Result};
use crate::operators::ImagingOperator;
use crate::real::{dot, norm2, Real};

pub use tv::{tv, tv_denoise_objective, tv_prox, DEFAULT_PROX_ITERATIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "TR")]
    Tr,
    #[serde(rename = "BP")]
    Bp,
    #[serde(rename = "iTR")]
    Itr,
    #[serde(rename = "iTR+")]
    ItrPlus,
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "LS+")]
    LsPlus,
    #[serde(rename = "TV+")]
    TvPlus,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Tr,
        Method::Bp,
        Method::Itr,
        Method::ItrPlus,
        Method::Ls,
        Method::LsPlus,
        Method::TvPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tr => "TR",
            Method::Bp => "BP",
            Method::Itr => "iTR",
            Method::ItrPlus => "iTR+",
            Method::Ls => "LS",
            Method::LsPlus => "LS+",
            Method::TvPlus => "TV+",
        }
    }

    /// Whether the step size depends on the spectral norm of `A*A`.
    pub fn needs_theta(self) -> bool {
        matches!(self, Method::Ls | Method::LsPlus | Method::TvPlus)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PatError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PatError::InvalidArgument(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconSettings {
    pub method: Method,
    pub iterations: usize,
    pub eta_factor: f64,
    pub lambda: f64,
    pub prox_iterations: usize,
    /// Clip the final image to non-negative values.
    pub project_output: bool,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            method: Method::TvPlus,
            iterations: 100,
            eta_factor: 1.8,
            lambda: 0.01,
            prox_iterations: DEFAULT_PROX_ITERATIONS,
            project_output: true,
        }
    }
}

impl ReconSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return invalid("iteration count must be at least 1");
        }
        if !(self.lambda >= 0.0) {
            return invalid("lambda must be non-negative");
        }
        if !(self.eta_factor > 0.0 && self.eta_factor < 2.0) {
            return invalid("eta_factor must lie in (0, 2)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    /// `½‖A p^k − f‖²` of the iterate entering iteration `k`.
    pub objective: Vec<f64>,
    /// Objective plus any regularization term.
    pub composite: Vec<f64>,
    /// `‖p^{k+1} − p^k‖`.
    pub step_norm: Vec<f64>,
    /// Seconds since the start of the reconstruction.
    pub wall_time: Vec<f64>,
    /// PSNR of `p^{k+1}` against a ground truth, when one was supplied.
    pub psnr: Vec<f64>,
    pub diverged: bool,
}

impl IterationLog {
    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }

    fn note_divergence(&mut self) {
        const WINDOW: usize = 10;
        let n = self.composite.len();
        if self.diverged || n <= WINDOW {
            return;
        }
        let w = &self.composite[n - WINDOW - 1..];
        if w.windows(2).all(|p| p[1] > p[0]) {
            log::warn!("objective increased over {WINDOW} consecutive iterations");
            self.diverged = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIteration {
    pub theta: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Dominant eigenvalue of a symmetric positive semi-definite map, e.g.
/// `p ↦ A*(A p)`.
pub fn power_iteration<T, F>(apply: F, n: usize, tol: f64, max_iter: usize) -> Result<PowerIteration>
where
    T: Real,
    F: Fn(&[T]) -> Result<Vec<T>>,
{
    if n == 0 {
        return invalid("power iteration on an empty vector space");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<T> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(1.0 + 0.1 * z)
        })
        .collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x = T::of(x.as_f64() / nv));
    let mut theta = 0.0;
    for it in 1..=max_iter {
        let w = apply(&v)?;
        let next = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return Ok(PowerIteration {
                theta: 0.0,
                iterations: it,
                converged: true,
            });
        }
        let change = (next - theta).abs();
        theta = next;
        v = w.iter().map(|x| T::of(x.as_f64() / nw)).collect();
        if it > 1 && change <= tol * theta.abs() {
            return Ok(PowerIteration {
                theta,
                iterations: it,
                converged: true,
            });
        }
    }
    log::warn!("power iteration did not converge in {max_iter} iterations");
    Ok(PowerIteration {
        theta,
        iterations: max_iter,
        converged: false,
    })
}

/// Largest eigenvalue of `A*A` for an imaging operator.
pub fn estimate_theta<T: Real, O: ImagingOperator<T> + ?Sized>(
    op: &O,
    tol: f64,
    max_iter: usize,
) -> Result<PowerIteration> {
    power_iteration(|p: &[T]| op.adjoint(&op.forward(p)?), op.image_len(), tol, max_iter)
}

pub fn project_nonnegative<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    });
}

/// Which operator maps residuals back to image space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backprojection {
    Adjoint,
    TimeReversal,
}

/// Map applied after each gradient-type step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepProjection {
    Identity,
    Nonnegative,
    /// Positivity-constrained TV prox with weight `η λ`.
    TotalVariation {
        lambda: f64,
        inner_iterations: usize,
        dims: Vec<usize>,
    },
}

/// Ground truth used for per-iteration PSNR logging.
pub struct Monitor<'a, T: Real> {
    pub ground_truth: Option<&'a [T]>,
}

impl<T: Real> Default for Monitor<'_, T> {
    fn default() -> Self {
        Self { ground_truth: None }
    }
}

/// `p ← Π(p − η B(A p − f))` for `iterations` steps from `p = 0`.
pub fn gradient_iteration<T: Real, O: ImagingOperator<T> + ?Sized>(
    op: &O,
    f: &[T],
    iterations: usize,
    eta: f64,
    back: Backprojection,
    projection: &StepProjection,
    monitor: &Monitor<'_, T>,
) -> Result<(Vec<T>, IterationLog)> {
    if f.len() != op.data_len() {
        return invalid(format!(
            "data has {} samples, operator expects {}",
            f.len(),
            op.data_len()
        ));
    }
    if iterations < 1 {
        return invalid("iteration count must be at least 1");
    }
    let start = Instant::now();
    let n = op.image_len();
    let mut p = vec![T::zero(); n];
    let mut log = IterationLog::default();
    let eta_t = T::of(eta);
    for _ in 0..iterations {
        let ap = op.forward(&p)?;
        let resid: Vec<T> = ap.iter().zip(f).map(|(a, b)| *a - *b).collect();
        let objective = 0.5 * dot(&resid, &resid);
        let penalty = match projection {
            StepProjection::TotalVariation { lambda, dims, .. } => lambda * tv(&p, dims)?,
            _ => 0.0,
        };
        let g = match back {
            Backprojection::Adjoint => op.adjoint(&resid)?,
            Backprojection::TimeReversal => op.time_reversal(&resid)?,
        };
        let mut next: Vec<T> = p.iter().zip(&g).map(|(x, d)| *x - eta_t * *d).collect();
        match projection {
            StepProjection::Identity => {}
            StepProjection::Nonnegative => project_nonnegative(&mut next),
            StepProjection::TotalVariation {
                lambda,
                inner_iterations,
                dims,
            } => next = tv_prox(&next, dims, eta * lambda, *inner_iterations)?,
        }
        let step: f64 = next
            .iter()
            .zip(&p)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>()
            .sqrt();
        p = next;
        log.objective.push(objective);
        log.composite.push(objective + penalty);
        log.step_norm.push(step);
        log.wall_time.push(start.elapsed().as_secs_f64());
        if let Some(gt) = monitor.ground_truth {
            log.psnr.push(psnr(&p, gt).unwrap_or(f64::NAN));
        }
        log.note_divergence();
    }
    Ok((p, log))
}

pub fn recon_tr<T: Real, O: ImagingOperator<T> + ?Sized>(op: &O, f: &[T], project: bool) -> Result<Vec<T>> {
    let mut p = op.time_reversal(f)?;
    if project {
        project_nonnegative(&mut p);
    }
    Ok(p)
}

pub fn recon_bp<T: Real, O: ImagingOperator<T> + ?Sized>(op: &O, f: &[T], project: bool) -> Result<Vec<T>> {
    let mut p = op.adjoint(f)?;
    if project {
        project_nonnegative(&mut p);
    }
    Ok(p)
}

/// Iterative time reversal `p ← Π(p − A◁(A p − f))`.
pub fn recon_itr<T: Real, O: ImagingOperator<T> + ?Sized>(
    op: &O,
    f: &[T],
    iterations: usize,
    positivity: bool,
    monitor: &Monitor<'_, T>,
) -> Result<(Vec<T>, IterationLog)> {
    let proj = if positivity {
        StepProjection::Nonnegative
    } else {
        StepProjection::Identity
    };
    gradient_iteration(op, f, iterations, 1.0, Backprojection::TimeReversal, &proj, monitor)
}

/// Gradient descent (optionally projected) on `½‖A p − f‖²`.
pub fn recon_ls<T: Real, O: ImagingOperator<T> + ?Sized>(
    op: &O,
    f: &[T],
    iterations: usize,
    eta: f64,
    positivity: bool,
    monitor: &Monitor<'_, T>,
) -> Result<(Vec<T>, IterationLog)> {
    if !(eta > 0.0) {
        return invalid("step size must be positive");
    }
    let proj = if positivity {
        StepProjection::Nonnegative
    } else {
        StepProjection::Identity
    };
    gradient_iteration(op, f, iterations, eta, Backprojection::Adjoint, &proj, monitor)
}

/// Proximal gradient descent on `½‖A p − f‖² + λ TV(p)` subject to `p ≥ 0`.
#[allow(clippy::too_many_arguments)]
pub fn recon_tv<T: Real, O: ImagingOperator<T> + ?Sized>(
    op: &O,
    f: &[T],
    dims: &[usize],
    iterations: usize,
    eta: f64,
    lambda: f64,
    prox_iterations: usize,
    monitor: &Monitor<'_, T>,
) -> Result<(Vec<T>, IterationLog)> {
    if !(eta > 0.0) {
        return invalid("step size must be positive");
    }
    if !(lambda >= 0.0) {
        return invalid("lambda must be non-negative");
    }
    if dims.iter().product::<usize>() != op.image_len() {
        return invalid("image dims do not match the operator");
    }
    let proj = StepProjection::TotalVariation {
        lambda,
        inner_iterations: prox_iterations,
        dims: dims.to_vec(),
    };
    gradient_iteration(op, f, iterations, eta, Backprojection::Adjoint, &proj, monitor)
}

#[derive(Debug, Clone)]
pub struct ReconOutput<T: Real> {
    pub image: Vec<T>,
    pub log: IterationLog,
    pub theta: Option<f64>,
}

/// Power-iteration budget used when `θ` is not supplied.
pub const THETA_TOLERANCE: f64 = 1e-4;
pub const THETA_MAX_ITER: usize = 50;

/// Runs one method end to end. `theta` is estimated when needed and absent.
pub fn reconstruct<T: Real, O: ImagingOperator<T> + ?Sized>(
    op: &O,
    f: &[T],
    dims: &[usize],
    settings: &ReconSettings,
    theta: Option<f64>,
    monitor: &Monitor<'_, T>,
) -> Result<ReconOutput<T>> {
    settings.validate()?;
    let theta = match (settings.method.needs_theta(), theta) {
        (true, None) => Some(estimate_theta(op, THETA_TOLERANCE, THETA_MAX_ITER)?.theta),
        (_, t) => t,
    };
    let eta = theta.map(|t| settings.eta_factor / t).unwrap_or(1.0);
    let k = settings.iterations;
    let (mut image, log) = match settings.method {
        Method::Tr => (recon_tr(op, f, false)?, IterationLog::default()),
        Method::Bp => (recon_bp(op, f, false)?, IterationLog::default()),
        Method::Itr => recon_itr(op, f, k, false, monitor)?,
        Method::ItrPlus => recon_itr(op, f, k, true, monitor)?,
        Method::Ls => recon_ls(op, f, k, eta, false, monitor)?,
        Method::LsPlus => recon_ls(op, f, k, eta, true, monitor)?,
        Method::TvPlus => recon_tv(op, f, dims, k, eta, settings.lambda, settings.prox_iterations, monitor)?,
    };
    if settings.project_output {
        project_nonnegative(&mut image);
    }
    Ok(ReconOutput { image, log, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::DenseOperator;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("XYZ".parse::<Method>().is_err());
    }

    #[test]
    fn settings_validation() {
        let mut s = ReconSettings::default();
        assert!(s.validate().is_ok());
        s.eta_factor = 2.0;
        assert!(s.validate().is_err());
        s.eta_factor = 1.8;
        s.iterations = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn power_iteration_diagonal_and_zero() {
        let diag = |v: &[f64]| Ok(vec![9.0 * v[0], v[1]]);
        let r = power_iteration(diag, 2, 1e-12, 1000).unwrap();
        assert!((r.theta - 9.0).abs() < 1e-9);
        let zero = |v: &[f64]| Ok(vec![0.0; v.len()]);
        let r = power_iteration(zero, 3, 1e-12, 10).unwrap();
        assert_eq!(r.theta, 0.0);
        assert_eq!(r.iterations, 1);
    }

    fn tiny() -> DenseOperator {
        // 3 × 2 forward, reversal = 0.5 · transpose
        let a = vec![1.0, 0.5, 0.2, 1.0, 0.3, -0.4];
        let rev = vec![0.5, 0.1, 0.15, 0.25, 0.5, -0.2];
        DenseOperator::new(3, 2, a, rev).unwrap()
    }

    #[test]
    fn first_iterates_are_analytic() {
        let op = tiny();
        let f = vec![1.0, -2.0, 0.5];
        let (p, _) = recon_itr(&op, &f, 1, false, &Monitor::default()).unwrap();
        assert_eq!(p, op.time_reversal(&f).unwrap());
        let eta = 0.3;
        let (p, log) = recon_ls(&op, &f, 1, eta, false, &Monitor::default()).unwrap();
        let atf = op.adjoint(&f).unwrap();
        for (a, b) in p.iter().zip(&atf) {
            assert!((a - eta * b).abs() < 1e-15);
        }
        assert!((log.objective[0] - 0.5 * dot(&f, &f)).abs() < 1e-15);
    }

    #[test]
    fn zero_data_gives_zero_images() {
        let op = tiny();
        let f = vec![0.0; 3];
        assert!(recon_tr(&op, &f, true).unwrap().iter().all(|&x| x == 0.0));
        assert!(recon_bp(&op, &f, true).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_lengths() {
        let op = tiny();
        assert!(recon_ls(&op, &[1.0], 3, 0.1, false, &Monitor::default()).is_err());
        assert!(recon_tv(&op, &[1.0; 3], &[3, 3], 3, 0.1, 0.1, 5, &Monitor::default()).is_err());
    }
}
