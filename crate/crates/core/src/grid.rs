//! Uniform Cartesian grid, discrete wavenumbers and k-space corrected
//! spectral derivatives.
//!
//! Transform convention: the forward transform is unnormalized and the
//! inverse carries the `1/N` factor. Fields are stored row-major with the
//! last index fastest.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::real::Real;

/// Regular collocation grid. `dims` include the absorbing layer, which is
/// `pml_size[axis]` points thick at both ends of each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub pml_size: Vec<usize>,
    pub pml_enabled: bool,
}

impl Grid {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, pml_size: Vec<usize>) -> Result<Self> {
        let d = dims.len();
        if !(d == 2 || d == 3) {
            return invalid(format!("grid must be 2D or 3D, got {d} axes"));
        }
        if spacing.len() != d || pml_size.len() != d {
            return invalid("dims, spacing and pml_size must have the same length");
        }
        for ax in 0..d {
            if dims[ax] < 8 {
                return invalid(format!("axis {ax}: need at least 8 points, got {}", dims[ax]));
            }
            if !(spacing[ax] > 0.0) || !spacing[ax].is_finite() {
                return invalid(format!("axis {ax}: spacing must be positive"));
            }
            if 2 * pml_size[ax] >= dims[ax] {
                return invalid(format!(
                    "axis {ax}: PML of {} points does not fit in {} points",
                    pml_size[ax], dims[ax]
                ));
            }
        }
        let pml_enabled = pml_size.iter().any(|&p| p > 0);
        Ok(Self {
            dims,
            spacing,
            pml_size,
            pml_enabled,
        })
    }

    /// Isotropic grid whose non-absorbing interior has `interior` points per
    /// axis, padded by `pml` points on every side.
    pub fn with_interior(ndim: usize, interior: usize, dx: f64, pml: usize) -> Result<Self> {
        Self::new(vec![interior + 2 * pml; ndim], vec![dx; ndim], vec![pml; ndim])
    }

    /// Same grid with the absorbing layer switched off (periodic domain).
    pub fn without_pml(&self) -> Self {
        Self {
            pml_size: vec![0; self.ndim()],
            pml_enabled: false,
            ..self.clone()
        }
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    pub fn interior_dims(&self) -> Vec<usize> {
        self.dims.iter().zip(&self.pml_size).map(|(n, p)| n - 2 * p).collect()
    }

    pub fn interior_len(&self) -> usize {
        self.interior_dims().iter().product()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.ndim()];
        for (ax, s) in self.strides().into_iter().enumerate() {
            out[ax] = flat / s;
            flat %= s;
        }
        out
    }

    pub fn is_interior(&self, idx: &[usize]) -> bool {
        idx.iter()
            .zip(&self.dims)
            .zip(&self.pml_size)
            .all(|((&i, &n), &p)| i >= p && i < n - p)
    }

    /// Flat grid indices of the interior points, in row-major order of the
    /// interior sub-grid.
    pub fn interior_indices(&self) -> Vec<usize> {
        let idims = self.interior_dims();
        let total: usize = idims.iter().product();
        let istrides = strides_of(&idims);
        let strides = self.strides();
        (0..total)
            .map(|mut j| {
                let mut flat = 0;
                for ax in 0..self.ndim() {
                    let i = j / istrides[ax];
                    j %= istrides[ax];
                    flat += (i + self.pml_size[ax]) * strides[ax];
                }
                flat
            })
            .collect()
    }

    /// Physical coordinate of a grid index along `axis`, with the interior
    /// origin at zero.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        (i as f64 - self.pml_size[axis] as f64) * self.spacing[axis]
    }
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for ax in (0..dims.len().saturating_sub(1)).rev() {
        s[ax] = s[ax + 1] * dims[ax + 1];
    }
    s
}

/// Discrete wavenumbers `2π m / (n dx)` in transform order. The Nyquist
/// index (even `n`) carries the positive frequency.
pub fn make_wavenumbers(n: usize, dx: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return invalid(format!("wavenumber vector needs n >= 2, got {n}"));
    }
    if !(dx > 0.0) {
        return invalid(format!("spacing must be positive, got {dx}"));
    }
    let half = n / 2;
    Ok((0..n)
        .map(|j| {
            let m = if j <= half { j as f64 } else { j as f64 - n as f64 };
            2.0 * PI * m / (n as f64 * dx)
        })
        .collect())
}

pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// k-space correction `sinc(c_ref dt |k| / 2)` over the full wavenumber grid.
pub fn kspace_correction(grid: &Grid, c_ref: f64, dt: f64) -> Result<Vec<f64>> {
    if !(c_ref > 0.0) || !(dt > 0.0) {
        return invalid("c_ref and dt must be positive");
    }
    let ks = axis_wavenumbers(grid)?;
    let mut kappa = vec![0.0; grid.len()];
    for (flat, kap) in kappa.iter_mut().enumerate() {
        let idx = grid.unflatten(flat);
        let k2: f64 = idx.iter().enumerate().map(|(ax, &i)| ks[ax][i].powi(2)).sum();
        *kap = sinc(0.5 * c_ref * dt * k2.sqrt());
    }
    Ok(kappa)
}

fn axis_wavenumbers(grid: &Grid) -> Result<Vec<Vec<f64>>> {
    (0..grid.ndim())
        .map(|ax| make_wavenumbers(grid.dims[ax], grid.spacing[ax]))
        .collect()
}

/// Multi-dimensional complex FFT over a row-major buffer.
pub struct FftNd<T: Real> {
    dims: Vec<usize>,
    strides: Vec<usize>,
    forward: Vec<Arc<dyn Fft<T>>>,
    inverse: Vec<Arc<dyn Fft<T>>>,
    scale: T,
}

impl<T: Real> FftNd<T> {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let total: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            strides: strides_of(dims),
            forward,
            inverse,
            scale: T::one() / T::of(total as f64),
        }
    }

    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, &self.forward);
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, &self.inverse);
        let s = self.scale;
        buf.iter_mut().for_each(|z| *z = *z * s);
    }

    fn transform(&self, buf: &mut [Complex<T>], plans: &[Arc<dyn Fft<T>>]) {
        let d = self.dims.len();
        // Contiguous last axis: rustfft handles consecutive chunks in one call.
        plans[d - 1].process(buf);
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        for ax in 0..d - 1 {
            let n = self.dims[ax];
            let stride = self.strides[ax];
            let plan = &plans[ax];
            line.resize(n, Complex::new(T::zero(), T::zero()));
            scratch.resize(plan.get_inplace_scratch_len(), Complex::new(T::zero(), T::zero()));
            let block = n * stride;
            for base_block in (0..buf.len()).step_by(block) {
                for off in 0..stride {
                    let base = base_block + off;
                    for (j, z) in line.iter_mut().enumerate() {
                        *z = buf[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, z) in line.iter().enumerate() {
                        buf[base + j * stride] = *z;
                    }
                }
            }
        }
    }
}

/// Which half-cell translation a spectral derivative carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shift {
    Plus,
    Minus,
    None,
}

/// Wavenumber-domain operators for one grid, reference speed and time step.
pub struct KSpaceOperators<T: Real> {
    pub grid: Grid,
    pub k_axis: Vec<Vec<f64>>,
    pub kappa: Vec<T>,
    /// Per-axis `exp(+i k dx / 2)`, indexed by the axis wavenumber.
    pub shift_plus: Vec<Vec<Complex<T>>>,
    /// Per-axis `exp(-i k dx / 2)`.
    pub shift_minus: Vec<Vec<Complex<T>>>,
    // i k_ξ κ e^{±i k_ξ Δξ/2} over the full k-grid, per axis.
    deriv_plus: Vec<Vec<Complex<T>>>,
    deriv_minus: Vec<Vec<Complex<T>>>,
    fft: FftNd<T>,
}

impl<T: Real> KSpaceOperators<T> {
    pub fn new(grid: &Grid, c_ref: f64, dt: f64) -> Result<Self> {
        let k_axis = axis_wavenumbers(grid)?;
        let kappa64 = kspace_correction(grid, c_ref, dt)?;
        let d = grid.ndim();
        let phase = |sign: f64| -> Vec<Vec<Complex<T>>> {
            (0..d)
                .map(|ax| {
                    k_axis[ax]
                        .iter()
                        .map(|&k| {
                            let a = sign * k * grid.spacing[ax] / 2.0;
                            Complex::new(T::of(a.cos()), T::of(a.sin()))
                        })
                        .collect()
                })
                .collect()
        };
        let shift_plus = phase(1.0);
        let shift_minus = phase(-1.0);
        let build = |sign: f64| -> Vec<Vec<Complex<T>>> {
            (0..d)
                .map(|ax| {
                    (0..grid.len())
                        .map(|flat| {
                            let i = grid.unflatten(flat)[ax];
                            let k = k_axis[ax][i];
                            let a = sign * k * grid.spacing[ax] / 2.0;
                            // i k κ (cos a + i sin a)
                            let m = k * kappa64[flat];
                            Complex::new(T::of(-m * a.sin()), T::of(m * a.cos()))
                        })
                        .collect()
                })
                .collect()
        };
        let deriv_plus = build(1.0);
        let deriv_minus = build(-1.0);
        Ok(Self {
            grid: grid.clone(),
            kappa: kappa64.iter().map(|&x| T::of(x)).collect(),
            k_axis,
            shift_plus,
            shift_minus,
            deriv_plus,
            deriv_minus,
            fft: FftNd::new(&grid.dims),
        })
    }

    pub fn fft(&self) -> &FftNd<T> {
        &self.fft
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.grid.len() {
            return invalid(format!("field has {n} points, grid has {}", self.grid.len()));
        }
        Ok(())
    }

    /// Real part of `F⁻¹{ i k_axis κ · phase · F{field} }`.
    pub fn spectral_derivative(&self, field: &[T], axis: usize, shift: Shift) -> Result<Vec<T>> {
        self.check_len(field.len())?;
        if axis >= self.grid.ndim() {
            return invalid(format!("axis {axis} out of range for a {}D grid", self.grid.ndim()));
        }
        let mut buf: Vec<Complex<T>> = field.iter().map(|&x| Complex::new(x, T::zero())).collect();
        self.fft.forward(&mut buf);
        match shift {
            Shift::Plus => mul_assign(&mut buf, &self.deriv_plus[axis]),
            Shift::Minus => mul_assign(&mut buf, &self.deriv_minus[axis]),
            Shift::None => {
                // The odd multiplier has no real counterpart at the Nyquist
                // index of an even axis, so that component is dropped.
                let n = self.grid.dims[axis];
                for (flat, z) in buf.iter_mut().enumerate() {
                    let i = self.grid.unflatten(flat)[axis];
                    let k = if n % 2 == 0 && i == n / 2 {
                        0.0
                    } else {
                        self.k_axis[axis][i]
                    };
                    let m = T::of(k) * self.kappa[flat];
                    *z = Complex::new(-z.im * m, z.re * m);
                }
            }
        }
        self.fft.inverse(&mut buf);
        Ok(take_real(&buf, field))
    }

    /// Staggered gradient components `∂⁺_ξ p` for every axis.
    pub fn gradient_plus(&self, p: &[T], out: &mut [Vec<T>], work: &mut Workspace<T>) {
        let spec = &mut work.spectrum;
        fill_complex(spec, p);
        self.fft.forward(spec);
        let d = self.grid.ndim();
        let mut ax = 0;
        // Two real results per inverse transform: the staggered multipliers
        // are Hermitian, so each inverse is real on its own.
        while ax < d {
            let buf = &mut work.packed;
            if ax + 1 < d {
                let (h0, h1) = (&self.deriv_plus[ax], &self.deriv_plus[ax + 1]);
                buf.iter_mut()
                    .zip(spec.iter())
                    .zip(h0.iter().zip(h1))
                    .for_each(|((z, s), (a, b))| *z = *s * *a + Complex::new(T::zero(), T::one()) * (*s * *b));
                self.fft.inverse(buf);
                let (lo, hi) = out.split_at_mut(ax + 1);
                for ((x, y), z) in lo[ax].iter_mut().zip(hi[0].iter_mut()).zip(buf.iter()) {
                    *x = z.re;
                    *y = z.im;
                }
                ax += 2;
            } else {
                buf.iter_mut()
                    .zip(spec.iter())
                    .zip(&self.deriv_plus[ax])
                    .for_each(|((z, s), h)| *z = *s * *h);
                self.fft.inverse(buf);
                out[ax].iter_mut().zip(buf.iter()).for_each(|(x, z)| *x = z.re);
                ax += 1;
            }
        }
    }

    /// Per-axis staggered derivatives `∂⁻_ξ u_ξ`.
    pub fn divergence_minus(&self, u: &[Vec<T>], out: &mut [Vec<T>], work: &mut Workspace<T>) {
        let d = self.grid.ndim();
        let n = self.grid.len();
        let mut ax = 0;
        while ax < d {
            if ax + 1 < d {
                // Pack u_a + i u_b, transform once, then separate with the
                // Hermitian symmetry of real-input spectra.
                let buf = &mut work.packed;
                for ((z, a), b) in buf.iter_mut().zip(&u[ax]).zip(&u[ax + 1]) {
                    *z = Complex::new(*a, *b);
                }
                self.fft.forward(buf);
                let spec = &mut work.spectrum;
                let half = T::of(0.5);
                let neg = &work.negate;
                for k in 0..n {
                    let zk = buf[k];
                    let zm = buf[neg[k]].conj();
                    let ua = (zk + zm) * half;
                    let ub = (zk - zm) * half;
                    // ub holds i·U_b
                    let ha = self.deriv_minus[ax][k];
                    let hb = self.deriv_minus[ax + 1][k];
                    // ha·Ua + i·hb·Ub = ha·Ua + hb·(i·Ub)
                    spec[k] = ua * ha + ub * hb;
                }
                self.fft.inverse(spec);
                let (lo, hi) = out.split_at_mut(ax + 1);
                for ((x, y), z) in lo[ax].iter_mut().zip(hi[0].iter_mut()).zip(spec.iter()) {
                    *x = z.re;
                    *y = z.im;
                }
                ax += 2;
            } else {
                let buf = &mut work.packed;
                fill_complex(buf, &u[ax]);
                self.fft.forward(buf);
                mul_assign(buf, &self.deriv_minus[ax]);
                self.fft.inverse(buf);
                out[ax].iter_mut().zip(buf.iter()).for_each(|(x, z)| *x = z.re);
                ax += 1;
            }
        }
    }

    /// Multiply the spectrum of `field` by a real multiplier and return the
    /// real part of the inverse transform.
    pub fn apply_multiplier(&self, field: &[T], multiplier: &[T]) -> Vec<T> {
        let mut buf: Vec<Complex<T>> = field.iter().map(|&x| Complex::new(x, T::zero())).collect();
        self.fft.forward(&mut buf);
        buf.iter_mut().zip(multiplier).for_each(|(z, &m)| *z = *z * m);
        self.fft.inverse(&mut buf);
        take_real(&buf, field)
    }

    pub fn workspace(&self) -> Workspace<T> {
        Workspace::new(&self.grid)
    }
}

/// Scratch buffers reused across time steps.
pub struct Workspace<T: Real> {
    spectrum: Vec<Complex<T>>,
    packed: Vec<Complex<T>>,
    // flat index of the wavenumber -k for every k
    negate: Vec<usize>,
}

impl<T: Real> Workspace<T> {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.len();
        let strides = grid.strides();
        let negate = (0..n)
            .map(|flat| {
                grid.unflatten(flat)
                    .iter()
                    .enumerate()
                    .map(|(ax, &i)| ((grid.dims[ax] - i) % grid.dims[ax]) * strides[ax])
                    .sum()
            })
            .collect();
        let zero = Complex::new(T::zero(), T::zero());
        Self {
            spectrum: vec![zero; n],
            packed: vec![zero; n],
            negate,
        }
    }
}

fn fill_complex<T: Real>(buf: &mut [Complex<T>], src: &[T]) {
    buf.iter_mut()
        .zip(src)
        .for_each(|(z, &x)| *z = Complex::new(x, T::zero()));
}

fn mul_assign<T: Real>(buf: &mut [Complex<T>], h: &[Complex<T>]) {
    buf.iter_mut().zip(h).for_each(|(z, m)| *z = *z * *m);
}

fn take_real<T: Real>(buf: &[Complex<T>], field: &[T]) -> Vec<T> {
    #[cfg(debug_assertions)]
    {
        let scale = field.iter().fold(0.0f64, |m, x| m.max(x.as_f64().abs()));
        let residue = buf.iter().fold(0.0f64, |m, z| m.max(z.im.as_f64().abs()));
        let tol = if T::NAME == "f32" { 1e-3 } else { 1e-6 };
        debug_assert!(
            residue <= tol * scale.max(f64::MIN_POSITIVE) || residue < 1e-30,
            "imaginary residue {residue:e} after inverse transform (field scale {scale:e})"
        );
    }
    #[cfg(not(debug_assertions))]
    let _ = field;
    buf.iter().map(|z| z.re).collect()
}
