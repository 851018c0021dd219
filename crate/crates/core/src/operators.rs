//! Photoacoustic operators built on the time stepper: forward `A = M P`,
//! adjoint `A* = P* M*` and time reversal `A◁ = P◁ M*`, together with the
//! spectral smoothing `Q` and the measurement model `M`.
//!
//! Images live on the non-absorbing interior of the grid; data vectors are
//! `(N_t + 1) × N_Γ` samples, time-major.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{make_wavenumbers, Grid, KSpaceOperators};
use crate::medium::{Medium, PmlOperators, PmlSettings};
use crate::real::Real;
use crate::solver::{SensorArray, Solver, SourceSchedule, SourceSupport, TimeAxis, DEFAULT_CFL};

/// A linear imaging model with an adjoint and an approximate inverse.
pub trait ImagingOperator<T: Real>: Sync {
    fn image_len(&self) -> usize;
    fn data_len(&self) -> usize;
    fn forward(&self, image: &[T]) -> Result<Vec<T>>;
    fn adjoint(&self, data: &[T]) -> Result<Vec<T>>;
    fn time_reversal(&self, data: &[T]) -> Result<Vec<T>>;
}

/// Detector model mapping recorded sensor pressures to data.
pub trait MeasurementModel<T: Real>: Send + Sync {
    fn measure(&self, g: &[T]) -> Result<Vec<T>>;
    fn measure_adjoint(&self, f: &[T]) -> Result<Vec<T>>;
}

/// Point sampling in space and time: `M` is the identity on the recorded
/// sample layout.
#[derive(Debug, Clone, Copy)]
pub struct PointSampling {
    pub samples: usize,
}

impl<T: Real> MeasurementModel<T> for PointSampling {
    fn measure(&self, g: &[T]) -> Result<Vec<T>> {
        if g.len() != self.samples {
            return invalid(format!("expected {} samples, got {}", self.samples, g.len()));
        }
        Ok(g.to_vec())
    }

    fn measure_adjoint(&self, f: &[T]) -> Result<Vec<T>> {
        self.measure(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSettings {
    pub enabled: bool,
}

impl Default for SmoothingSettings {
    fn default() -> Self {
        Self { enabled: true }
    }
}

/// Source sequence used to drive the adjoint wave solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointSchedule {
    /// Slot `n` injects `g̃^{N_t-1-n} + g̃^{N_t-n}`; the exact transpose of the
    /// discrete forward map for a lossless medium.
    Shifted,
    /// `g̃^{N_t}`, then `g̃^{N_t-n+1} + g̃^{N_t-n}`, then `g̃^1 + 2 g̃^0`, with
    /// `g̃^{N_t+1} := g̃^{N_t}`. Kept for comparison; it lags the transpose by
    /// one sample.
    Printed,
}

/// Everything that defines the three operators.
#[derive(Debug, Clone)]
pub struct PatOperatorConfig {
    pub grid: Grid,
    pub medium: Medium,
    pub pml: PmlSettings,
    pub time: TimeAxis,
    pub sensors: SensorArray,
    pub smoothing: SmoothingSettings,
    pub adjoint_schedule: AdjointSchedule,
}

impl PatOperatorConfig {
    pub fn new(grid: Grid, medium: Medium, time: TimeAxis, sensors: SensorArray) -> Result<Self> {
        let cfg = Self {
            grid,
            medium,
            pml: PmlSettings::default(),
            time,
            sensors,
            smoothing: SmoothingSettings::default(),
            adjoint_schedule: AdjointSchedule::Shifted,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.medium.len() != self.grid.len() {
            return invalid("medium does not match grid");
        }
        self.time.check_cfl(&self.grid, self.medium.c_ref, DEFAULT_CFL)?;
        for &i in self.sensors.indices() {
            if !self.grid.is_interior(&self.grid.unflatten(i)) {
                return invalid("sensor inside the absorbing layer");
            }
        }
        Ok(())
    }

    pub fn data_len(&self) -> usize {
        self.time.samples() * self.sensors.len()
    }
}

/// Separable Blackman window over the resolved band of one axis.
pub fn blackman_window(n: usize, dx: f64) -> Result<Vec<f64>> {
    let k = make_wavenumbers(n, dx)?;
    let k_nyq = std::f64::consts::PI / dx;
    Ok(k.iter()
        .map(|&kk| {
            let r = std::f64::consts::PI * kk.abs() / k_nyq;
            (0.42 + 0.5 * r.cos() + 0.08 * (2.0 * r).cos()).max(0.0)
        })
        .collect())
}

/// The assembled operators for one configuration and precision.
pub struct PatOperators<T: Real> {
    pub config: PatOperatorConfig,
    solver: Solver<T>,
    measurement: Arc<dyn MeasurementModel<T>>,
    interior: Vec<usize>,
    // Q multiplier over the full k-grid; None when smoothing is off.
    window: Option<Vec<T>>,
    // 1 / (2 c₀² d Δt)
    forward_scale: Vec<T>,
    // ρ₀ / (2 d Δt) at sensors
    adjoint_scale: Vec<T>,
    // 1 / (c₀² ρ₀)
    adjoint_output_scale: Vec<T>,
    adjoint_sign: T,
}

impl<T: Real> PatOperators<T> {
    pub fn new(config: PatOperatorConfig) -> Result<Self> {
        config.validate()?;
        let grid = &config.grid;
        let medium = &config.medium;
        let dt = config.time.dt;
        let d = grid.ndim() as f64;
        let ks = KSpaceOperators::new(grid, medium.c_ref, dt)?;
        let pml = PmlOperators::new(grid, config.pml, medium.c_ref, dt)?;
        let solver = Solver::from_parts(grid, medium, &pml, ks, config.time, config.sensors.clone());
        let window = if config.smoothing.enabled {
            let axes: Vec<Vec<f64>> = (0..grid.ndim())
                .map(|ax| blackman_window(grid.dims[ax], grid.spacing[ax]))
                .collect::<Result<_>>()?;
            Some(
                (0..grid.len())
                    .map(|flat| {
                        let idx = grid.unflatten(flat);
                        T::of(idx.iter().enumerate().map(|(ax, &i)| axes[ax][i]).product())
                    })
                    .collect(),
            )
        } else {
            None
        };
        let forward_scale = medium.c0.iter().map(|c| T::of(1.0 / (2.0 * c * c * d * dt))).collect();
        let adjoint_scale = config
            .sensors
            .indices()
            .iter()
            .map(|&i| T::of(medium.rho0[i] / (2.0 * d * dt)))
            .collect();
        let adjoint_output_scale = medium
            .c0
            .iter()
            .zip(&medium.rho0)
            .map(|(c, r)| T::of(1.0 / (c * c * r)))
            .collect();
        let measurement = Arc::new(PointSampling {
            samples: config.data_len(),
        });
        Ok(Self {
            interior: grid.interior_indices(),
            config,
            solver,
            measurement,
            window,
            forward_scale,
            adjoint_scale,
            adjoint_output_scale,
            adjoint_sign: T::one(),
        })
    }

    /// Replaces the point-sampling detector model.
    pub fn with_measurement(mut self, m: Arc<dyn MeasurementModel<T>>) -> Self {
        self.measurement = m;
        self
    }

    /// Fault-injection hook: flips the sign of the adjoint output.
    #[doc(hidden)]
    pub fn with_corrupted_adjoint(mut self) -> Self {
        self.adjoint_sign = -T::one();
        self
    }

    pub fn solver(&self) -> &Solver<T> {
        &self.solver
    }

    pub fn grid(&self) -> &Grid {
        &self.config.grid
    }

    pub fn time(&self) -> TimeAxis {
        self.config.time
    }

    pub fn n_sensors(&self) -> usize {
        self.config.sensors.len()
    }

    pub fn interior_indices(&self) -> &[usize] {
        &self.interior
    }

    /// Zero-padded full-grid field from an interior image.
    pub fn embed(&self, image: &[T]) -> Vec<T> {
        let mut f = vec![T::zero(); self.config.grid.len()];
        for (&v, &i) in image.iter().zip(&self.interior) {
            f[i] = v;
        }
        f
    }

    pub fn restrict(&self, field: &[T]) -> Vec<T> {
        self.interior.iter().map(|&i| field[i]).collect()
    }

    /// `Q` on a full-grid field.
    pub fn smooth_field(&self, field: &[T]) -> Result<Vec<T>> {
        if field.len() != self.config.grid.len() {
            return invalid("field does not match grid");
        }
        Ok(match &self.window {
            Some(w) => self.solver.kspace().apply_multiplier(field, w),
            None => field.to_vec(),
        })
    }

    /// `Q` on an interior image (restriction of `Q` applied to the padded
    /// image).
    pub fn smooth(&self, image: &[T]) -> Result<Vec<T>> {
        self.check_image(image)?;
        Ok(self.restrict(&self.smooth_field(&self.embed(image))?))
    }

    pub fn measure(&self, g: &[T]) -> Result<Vec<T>> {
        self.measurement.measure(g)
    }

    pub fn measure_adjoint(&self, f: &[T]) -> Result<Vec<T>> {
        self.measurement.measure_adjoint(f)
    }

    fn check_image(&self, image: &[T]) -> Result<()> {
        if image.len() != self.interior.len() {
            return invalid(format!(
                "image has {} values, interior has {}",
                image.len(),
                self.interior.len()
            ));
        }
        Ok(())
    }

    fn check_data(&self, data: &[T]) -> Result<()> {
        if data.len() != self.config.data_len() {
            return invalid(format!(
                "data has {} samples, expected {}",
                data.len(),
                self.config.data_len()
            ));
        }
        Ok(())
    }

    /// Sensor values `g̃^m` from a time-major sample vector, zero outside
    /// `0 … N_t`.
    fn sample_row<'a>(&self, g: &'a [T], m: i64, zeros: &'a [T]) -> &'a [T] {
        let ns = self.n_sensors();
        let nt = self.config.time.nt as i64;
        if (0..=nt).contains(&m) {
            &g[m as usize * ns..(m as usize + 1) * ns]
        } else {
            zeros
        }
    }

    pub fn forward_op(&self, p0: &[T]) -> Result<Vec<T>> {
        self.check_image(p0)?;
        // the smoothed image is cut back to the interior so no source lands
        // in the absorbing layer, where the damped update has no exact
        // transpose in the adjoint schedule
        let q = self.embed(&self.smooth(p0)?);
        let s: Vec<T> = q.iter().zip(&self.forward_scale).map(|(a, b)| *a * *b).collect();
        let mut sched = SourceSchedule::mass(&self.config.time, SourceSupport::Grid);
        sched.set(-1, s.clone());
        sched.set(0, s);
        let out = self.solver.run(&sched, true, false)?;
        self.measure(&out.recordings.expect("recording requested"))
    }

    /// Mass-source schedule that drives the adjoint solve.
    pub fn adjoint_schedule(&self, g: &[T]) -> SourceSchedule<T> {
        let nt = self.config.time.nt as i64;
        let ns = self.n_sensors();
        let zeros = vec![T::zero(); ns];
        let two = T::of(2.0);
        let mut sched = SourceSchedule::mass(&self.config.time, SourceSupport::Sensors);
        for n in -1..nt {
            let (a, b, wb) = match self.config.adjoint_schedule {
                AdjointSchedule::Shifted => (nt - 1 - n, nt - n, T::one()),
                AdjointSchedule::Printed => {
                    if n == -1 {
                        (nt, nt + 2, T::one())
                    } else if n == 0 {
                        (nt, nt, T::one())
                    } else if n == nt - 1 {
                        (1, 0, two)
                    } else {
                        (nt - n + 1, nt - n, T::one())
                    }
                }
            };
            let ra = self.sample_row(g, a, &zeros);
            let rb = self.sample_row(g, b, &zeros);
            let v: Vec<T> = ra
                .iter()
                .zip(rb)
                .zip(&self.adjoint_scale)
                .map(|((x, y), s)| (*x + wb * *y) * *s)
                .collect();
            sched.set(n, v);
        }
        sched
    }

    pub fn adjoint_op(&self, f: &[T]) -> Result<Vec<T>> {
        self.check_data(f)?;
        let g = self.measure_adjoint(f)?;
        let sched = self.adjoint_schedule(&g);
        let out = self.solver.run(&sched, false, true)?;
        let p = out.final_pressure.expect("final field requested");
        let scaled: Vec<T> = p
            .iter()
            .zip(&self.adjoint_output_scale)
            .map(|(a, b)| *a * *b * self.adjoint_sign)
            .collect();
        self.smooth(&self.restrict(&scaled))
    }

    /// Dirichlet schedule: the step starting at `n` forces `g̃^{N_t-1-n}`,
    /// so `p^{N_t}` meets `g̃^0` at the sensors.
    pub fn time_reversal_schedule(&self, g: &[T]) -> SourceSchedule<T> {
        let nt = self.config.time.nt as i64;
        let zeros = vec![T::zero(); self.n_sensors()];
        let mut sched = SourceSchedule::dirichlet(&self.config.time);
        for n in -1..nt {
            sched.set(n, self.sample_row(g, nt - 1 - n, &zeros).to_vec());
        }
        sched
    }

    pub fn time_reversal_op(&self, f: &[T]) -> Result<Vec<T>> {
        self.check_data(f)?;
        let g = self.measure_adjoint(f)?;
        let sched = self.time_reversal_schedule(&g);
        let out = self.solver.run(&sched, false, true)?;
        let p = out.final_pressure.expect("final field requested");
        self.smooth(&self.restrict(&p))
    }
}

impl<T: Real> ImagingOperator<T> for PatOperators<T> {
    fn image_len(&self) -> usize {
        self.interior.len()
    }

    fn data_len(&self) -> usize {
        self.config.data_len()
    }

    fn forward(&self, image: &[T]) -> Result<Vec<T>> {
        self.forward_op(image)
    }

    fn adjoint(&self, data: &[T]) -> Result<Vec<T>> {
        self.adjoint_op(data)
    }

    fn time_reversal(&self, data: &[T]) -> Result<Vec<T>> {
        self.time_reversal_op(data)
    }
}

/// Explicit matrices standing in for the wave operators; row-major storage.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
    /// Adjoint used by the reconstruction methods, `cols × rows`.
    pub adjoint: Vec<f64>,
    /// Approximate inverse, `cols × rows`.
    pub reversal: Vec<f64>,
}

impl DenseOperator {
    /// Operator whose adjoint is the exact transpose.
    pub fn new(rows: usize, cols: usize, a: Vec<f64>, reversal: Vec<f64>) -> Result<Self> {
        if a.len() != rows * cols || reversal.len() != rows * cols {
            return invalid("matrix sizes do not match");
        }
        let adjoint = transpose(&a, rows, cols);
        Ok(Self {
            rows,
            cols,
            a,
            adjoint,
            reversal,
        })
    }
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

pub fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|i| a[i * cols..(i + 1) * cols].iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

impl ImagingOperator<f64> for DenseOperator {
    fn image_len(&self) -> usize {
        self.cols
    }

    fn data_len(&self) -> usize {
        self.rows
    }

    fn forward(&self, image: &[f64]) -> Result<Vec<f64>> {
        if image.len() != self.cols {
            return invalid("image length mismatch");
        }
        Ok(matvec(&self.a, self.rows, self.cols, image))
    }

    fn adjoint(&self, data: &[f64]) -> Result<Vec<f64>> {
        if data.len() != self.rows {
            return invalid("data length mismatch");
        }
        Ok(matvec(&self.adjoint, self.cols, self.rows, data))
    }

    fn time_reversal(&self, data: &[f64]) -> Result<Vec<f64>> {
        if data.len() != self.rows {
            return invalid("data length mismatch");
        }
        Ok(matvec(&self.reversal, self.cols, self.rows, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ops(pml: usize, smoothing: bool) -> PatOperators<f64> {
        let g = Grid::with_interior(2, 12, 1e-4, pml).unwrap();
        let m = Medium::homogeneous(&g, 1500.0, 1000.0).unwrap();
        let t = TimeAxis::from_cfl(&g, 1500.0, DEFAULT_CFL, 1.2e-3 / 1500.0).unwrap();
        let row = pml + 1;
        let s = SensorArray::new(&g, (pml..pml + 12).map(|j| g.flat_index(&[row, j])).collect()).unwrap();
        let mut cfg = PatOperatorConfig::new(g, m, t, s).unwrap();
        cfg.smoothing.enabled = smoothing;
        PatOperators::new(cfg).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    #[test]
    fn blackman_window_edges() {
        let w = blackman_window(8, 1.0).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15);
        assert!(w[4].abs() < 1e-15);
        assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn smoothing_is_self_adjoint_and_kills_checkerboard() {
        let op = ops(2, true);
        let n = op.grid().len();
        let (x, y) = (random(n, 1), random(n, 2));
        let (qx, qy) = (op.smooth_field(&x).unwrap(), op.smooth_field(&y).unwrap());
        let (a, b) = (dot(&qx, &y), dot(&x, &qy));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
        assert!(op.smooth_field(&vec![0.0; n]).unwrap().iter().all(|&v| v == 0.0));
        let c = op.smooth_field(&vec![2.5; n]).unwrap();
        let mean = c.iter().sum::<f64>() / n as f64;
        assert!((mean - 2.5).abs() < 1e-12);
        let dims = op.grid().dims.clone();
        let checker: Vec<f64> = (0..n)
            .map(|f| {
                if (f / dims[1] + f % dims[1]) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let s = op.smooth_field(&checker).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let op = ops(2, true);
        assert!(op
            .forward_op(&vec![0.0; op.image_len()])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(op
            .adjoint_op(&vec![0.0; op.data_len()])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(op
            .time_reversal_op(&vec![0.0; op.data_len()])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatches_are_rejected() {
        let op = ops(2, true);
        assert!(op.forward_op(&[1.0; 3]).is_err());
        assert!(op.adjoint_op(&[1.0; 3]).is_err());
        assert!(op.time_reversal_op(&[1.0; 3]).is_err());
    }

    #[test]
    fn measurement_is_identity_with_adjoint() {
        let op = ops(2, true);
        let f = random(op.data_len(), 3);
        assert_eq!(op.measure(&op.measure_adjoint(&f).unwrap()).unwrap(), f);
        let g = random(op.data_len(), 4);
        assert_eq!(
            dot(&op.measure(&g).unwrap(), &f),
            dot(&g, &op.measure_adjoint(&f).unwrap())
        );
        assert_eq!(f.len(), op.time().samples() * op.n_sensors());
    }

    #[test]
    fn shifted_schedule_is_exact_without_pml() {
        let op = ops(0, true);
        let x = random(op.image_len(), 5);
        let y = random(op.data_len(), 6);
        let ax = op.forward_op(&x).unwrap();
        let aty = op.adjoint_op(&y).unwrap();
        let (l, r) = (dot(&ax, &y), dot(&x, &aty));
        assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()), "{l} vs {r}");
    }

    #[test]
    fn printed_schedule_lags_transpose() {
        let mut op_cfg = ops(0, true).config.clone();
        op_cfg.adjoint_schedule = AdjointSchedule::Printed;
        let printed = PatOperators::<f64>::new(op_cfg).unwrap();
        let x = random(printed.image_len(), 5);
        let y = random(printed.data_len(), 6);
        let (l, r) = (
            dot(&printed.forward_op(&x).unwrap(), &y),
            dot(&x, &printed.adjoint_op(&y).unwrap()),
        );
        assert!((l - r).abs() > 1e-3 * l.abs().max(r.abs()));
    }

    #[test]
    fn corrupted_adjoint_flips_sign() {
        let op = ops(0, true);
        let y = random(op.data_len(), 7);
        let good = op.adjoint_op(&y).unwrap();
        let bad = ops(0, true).with_corrupted_adjoint().adjoint_op(&y).unwrap();
        for (a, b) in good.iter().zip(&bad) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn dense_operator_round_trip() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let op = DenseOperator::new(3, 2, a, vec![0.0; 6]).unwrap();
        assert_eq!(op.forward(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0, 11.0]);
        assert_eq!(op.adjoint(&[1.0, 0.0, 1.0]).unwrap(), vec![6.0, 8.0]);
    }
}
