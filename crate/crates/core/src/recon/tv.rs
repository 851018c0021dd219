//! Isotropic discrete total variation with forward differences and
//! replicated (Neumann) boundary, and its positivity-constrained proximal
//! map computed by fast gradient projection on the dual.

use crate::error::{invalid, Result};
use crate::grid::strides_of;
use crate::real::Real;

fn check_dims(len: usize, dims: &[usize]) -> Result<()> {
    if !(dims.len() == 2 || dims.len() == 3) {
        return invalid(format!("TV needs a 2D or 3D image, got {} axes", dims.len()));
    }
    if dims.iter().product::<usize>() != len {
        return invalid("image length does not match dims");
    }
    Ok(())
}

/// Forward differences along every axis; zero on the last slice of each
/// axis.
fn gradient<T: Real>(x: &[T], dims: &[usize], out: &mut [Vec<T>]) {
    let strides = strides_of(dims);
    for (ax, g) in out.iter_mut().enumerate() {
        let (n, s) = (dims[ax], strides[ax]);
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = if (i / s) % n + 1 < n {
                x[i + s] - x[i]
            } else {
                T::zero()
            };
        }
    }
}

/// Negative adjoint of [`gradient`].
fn divergence<T: Real>(p: &[Vec<T>], dims: &[usize], out: &mut [T]) {
    let strides = strides_of(dims);
    out.iter_mut().for_each(|v| *v = T::zero());
    for (ax, g) in p.iter().enumerate() {
        let (n, s) = (dims[ax], strides[ax]);
        for (i, o) in out.iter_mut().enumerate() {
            let k = (i / s) % n;
            let here = if k + 1 < n { g[i] } else { T::zero() };
            let before = if k > 0 { g[i - s] } else { T::zero() };
            *o += here - before;
        }
    }
}

pub fn tv<T: Real>(image: &[T], dims: &[usize]) -> Result<f64> {
    check_dims(image.len(), dims)?;
    let mut g = vec![vec![T::zero(); image.len()]; dims.len()];
    gradient(image, dims, &mut g);
    Ok((0..image.len())
        .map(|i| g.iter().map(|gi| gi[i].as_f64().powi(2)).sum::<f64>().sqrt())
        .sum())
}

/// `½‖x − y‖² + α TV(x)`.
pub fn tv_denoise_objective<T: Real>(x: &[T], y: &[T], dims: &[usize], alpha: f64) -> Result<f64> {
    let fit: f64 = x.iter().zip(y).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    Ok(0.5 * fit + alpha * tv(x, dims)?)
}

pub const DEFAULT_PROX_ITERATIONS: usize = 20;

/// Approximate `argmin_{x ≥ 0} ½‖x − y‖² + α TV(x)` with `inner_iters`
/// accelerated dual projection steps.
pub fn tv_prox<T: Real>(y: &[T], dims: &[usize], alpha: f64, inner_iters: usize) -> Result<Vec<T>> {
    check_dims(y.len(), dims)?;
    if alpha < 0.0 || !alpha.is_finite() {
        return invalid(format!("alpha must be non-negative, got {alpha}"));
    }
    let project = |v: T| if v > T::zero() { v } else { T::zero() };
    if alpha == 0.0 || inner_iters == 0 {
        return Ok(y.iter().map(|&v| project(v)).collect());
    }
    let n = y.len();
    let d = dims.len();
    let a = T::of(alpha);
    // Lipschitz constant of the dual gradient is 4d α².
    let step = T::of(1.0 / (4.0 * d as f64 * alpha));
    let zeros = || vec![vec![T::zero(); n]; d];
    let (mut p, mut r, mut grad) = (zeros(), zeros(), zeros());
    let mut div = vec![T::zero(); n];
    let mut x = vec![T::zero(); n];
    let mut t = 1.0f64;
    let primal = |r: &[Vec<T>], div: &mut Vec<T>, x: &mut Vec<T>| {
        divergence(r, dims, div);
        for ((xi, yi), di) in x.iter_mut().zip(y).zip(div.iter()) {
            *xi = project(*yi + a * *di);
        }
    };
    for _ in 0..inner_iters {
        primal(&r, &mut div, &mut x);
        gradient(&x, dims, &mut grad);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = T::of((t - 1.0) / t_next);
        for i in 0..n {
            let mut norm2 = T::zero();
            for ax in 0..d {
                let v = r[ax][i] + step * grad[ax][i];
                grad[ax][i] = v;
                norm2 += v * v;
            }
            let scale = if norm2 > T::one() {
                T::one() / norm2.sqrt()
            } else {
                T::one()
            };
            for ax in 0..d {
                let new = grad[ax][i] * scale;
                r[ax][i] = new + momentum * (new - p[ax][i]);
                p[ax][i] = new;
            }
        }
        t = t_next;
    }
    primal(&p, &mut div, &mut x);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_and_divergence_are_negative_adjoints() {
        let dims = [5usize, 4, 3];
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let p: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
        let mut g = vec![vec![0.0; n]; 3];
        gradient(&x, &dims, &mut g);
        let mut dv = vec![0.0; n];
        divergence(&p, &dims, &mut dv);
        let lhs: f64 = (0..3)
            .map(|a| g[a].iter().zip(&p[a]).map(|(u, v)| u * v).sum::<f64>())
            .sum();
        let rhs: f64 = -x.iter().zip(&dv).map(|(u, v)| u * v).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn tv_rejects_bad_dims() {
        assert!(tv(&[1.0f64; 8], &[8]).is_err());
        assert!(tv(&[1.0f64; 8], &[3, 3]).is_err());
    }

    #[test]
    fn constant_positive_input_is_fixed_point() {
        let y = vec![0.7f64; 36];
        let x = tv_prox(&y, &[6, 6], 0.3, 50).unwrap();
        for v in x {
            assert!((v - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn output_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.5).collect();
        let x = tv_prox(&y, &[8, 8], 0.2, 20).unwrap();
        assert!(x.iter().all(|&v| v >= 0.0));
    }
}
