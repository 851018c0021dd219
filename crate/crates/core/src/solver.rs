//! k-space pseudospectral time stepping of the first-order acoustic system
//! with split densities, PML damping, mass-source injection and a Dirichlet
//! variant for time reversal.
//!
//! State at step `n` holds `p^n`, `u_ξ^{n-1/2}` and `ρ_ξ^n`. One step reads
//! the source slot `s^{n+1/2}` and advances to `n + 1`:
//!
//! ```text
//! u_ξ ← Λˢ_ξ (Λˢ_ξ u_ξ − Δt/ρ₀ ∂⁺_ξ p)
//! ρ_ξ ← Λ_ξ (Λ_ξ ρ_ξ − Δt ρ₀ ∂⁻_ξ u_ξ) + Δt s
//! p   ← c₀² Σ_ξ ρ_ξ
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PatError, Result};
use crate::grid::{Grid, KSpaceOperators, Workspace};
use crate::medium::{Medium, PmlOperators, PmlSettings};
use crate::real::Real;

/// Steps between non-finite checks during a run.
pub const STABILITY_CHECK_INTERVAL: i64 = 50;

pub const DEFAULT_CFL: f64 = 0.3;

/// Point sensors: selection `W` and its adjoint injection `W*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorArray {
    indices: Vec<usize>,
}

impl SensorArray {
    pub fn new(grid: &Grid, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return invalid("sensor array is empty");
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return invalid("sensor indices must be unique");
        }
        for &i in &indices {
            if i >= grid.len() || !grid.is_interior(&grid.unflatten(i)) {
                return invalid(format!("sensor index {i} is outside the non-absorbing interior"));
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `W`: field values at the sensor points.
    pub fn select<T: Copy>(&self, field: &[T], out: &mut [T]) {
        for (o, &i) in out.iter_mut().zip(&self.indices) {
            *o = field[i];
        }
    }

    /// `W*`: scatter sensor values into a zero field of length `n`.
    pub fn inject<T: Real>(&self, values: &[T], n: usize) -> Vec<T> {
        let mut f = vec![T::zero(); n];
        for (&v, &i) in values.iter().zip(&self.indices) {
            f[i] = v;
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub nt: usize,
    pub dt: f64,
}

impl TimeAxis {
    pub fn new(nt: usize, dt: f64) -> Result<Self> {
        if nt < 1 {
            return invalid("time axis needs at least one step");
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return invalid("time step must be positive");
        }
        Ok(Self { nt, dt })
    }

    /// Time step from the CFL number and enough steps to cover `t_end`.
    pub fn from_cfl(grid: &Grid, c_ref: f64, cfl: f64, t_end: f64) -> Result<Self> {
        let dx = grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        let dt = cfl * dx / c_ref;
        let nt = (t_end / dt).ceil().max(1.0) as usize;
        Self::new(nt, dt)
    }

    pub fn t_end(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    pub fn samples(&self) -> usize {
        self.nt + 1
    }

    pub fn check_cfl(&self, grid: &Grid, c_ref: f64, cfl: f64) -> Result<()> {
        let dx = grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        let limit = cfl * dx / c_ref;
        if self.dt > limit * (1.0 + 1e-12) {
            return invalid(format!(
                "time step {:e} exceeds CFL limit {:e} (cfl {cfl})",
                self.dt, limit
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticState<T: Real> {
    pub u: Vec<Vec<T>>,
    pub rho_split: Vec<Vec<T>>,
    pub p: Vec<T>,
    pub step_index: i64,
}

impl<T: Real> AcousticState<T> {
    /// All-zero state at `n = -1`.
    pub fn zero(grid: &Grid) -> Self {
        let d = grid.ndim();
        let n = grid.len();
        Self {
            u: vec![vec![T::zero(); n]; d],
            rho_split: vec![vec![T::zero(); n]; d],
            p: vec![T::zero(); n],
            step_index: -1,
        }
    }

    pub fn is_finite(&self) -> bool {
        let ok = |v: &[T]| v.iter().all(|x| x.is_finite());
        ok(&self.p) && self.u.iter().all(|f| ok(f)) && self.rho_split.iter().all(|f| ok(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceMode {
    Mass,
    Dirichlet,
}

/// Where the values of a source slot live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSupport {
    Grid,
    Sensors,
}

/// Precomputed sequence of source values `s^{n+1/2}` for `n = -1 … N_t-1`
/// (slot `n + 1`). Empty slots inject nothing.
#[derive(Debug, Clone)]
pub struct SourceSchedule<T: Real> {
    pub mode: SourceMode,
    pub support: SourceSupport,
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> SourceSchedule<T> {
    pub fn mass(time: &TimeAxis, support: SourceSupport) -> Self {
        Self {
            mode: SourceMode::Mass,
            support,
            slots: vec![None; time.nt + 1],
        }
    }

    pub fn dirichlet(time: &TimeAxis) -> Self {
        Self {
            mode: SourceMode::Dirichlet,
            support: SourceSupport::Sensors,
            slots: vec![None; time.nt + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Sets the value injected during the step that starts at `n`.
    pub fn set(&mut self, n: i64, values: Vec<T>) {
        self.slots[(n + 1) as usize] = Some(values);
    }

    pub fn get(&self, n: i64) -> Option<&[T]> {
        self.slots.get((n + 1) as usize).and_then(|s| s.as_deref())
    }
}

/// Recorded sensor series (row-major `(N_t+1) × N_Γ`) and/or final pressure.
#[derive(Debug, Clone, Default)]
pub struct RunOutput<T: Real> {
    pub recordings: Option<Vec<T>>,
    pub final_pressure: Option<Vec<T>>,
}

/// Time stepper for one grid, medium, PML and time axis. Coefficients are
/// precomputed in the working precision.
pub struct Solver<T: Real> {
    pub grid: Grid,
    pub time: TimeAxis,
    pub sensors: SensorArray,
    ks: KSpaceOperators<T>,
    c0_sq: Vec<T>,
    // Λˢ², Λˢ·Δt/ρ₀, Λ², Λ·Δt·ρ₀ per axis
    u_decay: Vec<Vec<T>>,
    u_force: Vec<Vec<T>>,
    rho_decay: Vec<Vec<T>>,
    rho_force: Vec<Vec<T>>,
    // 1/(d c₀²) at each sensor
    dirichlet_scale: Vec<T>,
    dt: T,
}

impl<T: Real> Solver<T> {
    pub fn new(grid: &Grid, medium: &Medium, pml: PmlSettings, time: TimeAxis, sensors: SensorArray) -> Result<Self> {
        if medium.len() != grid.len() {
            return invalid(format!("medium has {} points, grid has {}", medium.len(), grid.len()));
        }
        let ks = KSpaceOperators::new(grid, medium.c_ref, time.dt)?;
        let pml_ops = PmlOperators::new(grid, pml, medium.c_ref, time.dt)?;
        Ok(Self::assemble(grid, medium, &pml_ops, time, sensors, ks))
    }

    pub fn from_parts(
        grid: &Grid,
        medium: &Medium,
        pml: &PmlOperators,
        ks: KSpaceOperators<T>,
        time: TimeAxis,
        sensors: SensorArray,
    ) -> Self {
        Self::assemble(grid, medium, pml, time, sensors, ks)
    }

    fn assemble(
        grid: &Grid,
        medium: &Medium,
        pml: &PmlOperators,
        time: TimeAxis,
        sensors: SensorArray,
        ks: KSpaceOperators<T>,
    ) -> Self {
        let dt = time.dt;
        let d = grid.ndim();
        let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        let mut u_decay = Vec::with_capacity(d);
        let mut u_force = Vec::with_capacity(d);
        let mut rho_decay = Vec::with_capacity(d);
        let mut rho_force = Vec::with_capacity(d);
        for ax in 0..d {
            let ls = &pml.lambda_staggered[ax];
            let l = &pml.lambda[ax];
            u_decay.push(cast(ls.iter().map(|x| x * x).collect()));
            u_force.push(cast(ls.iter().zip(&medium.rho0).map(|(x, r)| x * dt / r).collect()));
            rho_decay.push(cast(l.iter().map(|x| x * x).collect()));
            rho_force.push(cast(l.iter().zip(&medium.rho0).map(|(x, r)| x * dt * r).collect()));
        }
        let dirichlet_scale = sensors
            .indices()
            .iter()
            .map(|&i| T::of(1.0 / (d as f64 * medium.c0[i] * medium.c0[i])))
            .collect();
        Self {
            grid: grid.clone(),
            time,
            sensors,
            ks,
            c0_sq: cast(medium.c0.iter().map(|c| c * c).collect()),
            u_decay,
            u_force,
            rho_decay,
            rho_force,
            dirichlet_scale,
            dt: T::of(dt),
        }
    }

    pub fn kspace(&self) -> &KSpaceOperators<T> {
        &self.ks
    }

    fn advance_velocity_and_density(&self, state: &mut AcousticState<T>, bufs: &mut StepBuffers<T>) {
        let d = self.grid.ndim();
        self.ks.gradient_plus(&state.p, &mut bufs.deriv, &mut bufs.work);
        for ax in 0..d {
            let (a, b) = (&self.u_decay[ax], &self.u_force[ax]);
            for (((u, g), a), b) in state.u[ax].iter_mut().zip(&bufs.deriv[ax]).zip(a).zip(b) {
                *u = *a * *u - *b * *g;
            }
        }
        self.ks.divergence_minus(&state.u, &mut bufs.deriv, &mut bufs.work);
        for ax in 0..d {
            let (a, b) = (&self.rho_decay[ax], &self.rho_force[ax]);
            for (((r, g), a), b) in state.rho_split[ax].iter_mut().zip(&bufs.deriv[ax]).zip(a).zip(b) {
                *r = *a * *r - *b * *g;
            }
        }
    }

    fn update_pressure(&self, state: &mut AcousticState<T>) {
        let d = self.grid.ndim();
        for (i, p) in state.p.iter_mut().enumerate() {
            let mut s = T::zero();
            for ax in 0..d {
                s += state.rho_split[ax][i];
            }
            *p = self.c0_sq[i] * s;
        }
        state.step_index += 1;
    }

    fn add_mass_source(&self, state: &mut AcousticState<T>, support: SourceSupport, s: &[T]) {
        let dt = self.dt;
        for rho in state.rho_split.iter_mut() {
            match support {
                SourceSupport::Grid => {
                    rho.iter_mut().zip(s).for_each(|(r, v)| *r += dt * *v);
                }
                SourceSupport::Sensors => {
                    for (&i, v) in self.sensors.indices().iter().zip(s) {
                        rho[i] += dt * *v;
                    }
                }
            }
        }
    }

    fn check_source(&self, support: SourceSupport, s: &[T]) -> Result<()> {
        let want = match support {
            SourceSupport::Grid => self.grid.len(),
            SourceSupport::Sensors => self.sensors.len(),
        };
        if s.len() != want {
            return invalid(format!("source has {} values, expected {want}", s.len()));
        }
        Ok(())
    }

    fn check_state(&self, state: &AcousticState<T>) -> Result<()> {
        let n = self.grid.len();
        let d = self.grid.ndim();
        let sized = |v: &Vec<Vec<T>>| v.len() == d && v.iter().all(|f| f.len() == n);
        if state.p.len() != n || !sized(&state.u) || !sized(&state.rho_split) {
            return invalid("state buffers do not match the grid");
        }
        Ok(())
    }

    fn guard(state: &AcousticState<T>) -> Result<()> {
        if state.is_finite() {
            Ok(())
        } else {
            Err(PatError::NumericalInstability { step: state.step_index })
        }
    }

    /// One leapfrog step with an optional mass source `s^{n+1/2}`.
    pub fn step(&self, state: &mut AcousticState<T>, source: Option<(SourceSupport, &[T])>) -> Result<()> {
        self.check_state(state)?;
        if let Some((support, s)) = source {
            self.check_source(support, s)?;
        }
        let mut bufs = StepBuffers::new(self);
        self.step_inner(state, source, &mut bufs);
        Self::guard(state)
    }

    /// One step with the sensor pressures forced to `b`.
    pub fn step_dirichlet(&self, state: &mut AcousticState<T>, b: &[T]) -> Result<()> {
        self.check_state(state)?;
        self.check_source(SourceSupport::Sensors, b)?;
        let mut bufs = StepBuffers::new(self);
        self.step_dirichlet_inner(state, b, &mut bufs);
        Self::guard(state)
    }

    fn step_inner(
        &self,
        state: &mut AcousticState<T>,
        source: Option<(SourceSupport, &[T])>,
        bufs: &mut StepBuffers<T>,
    ) {
        self.advance_velocity_and_density(state, bufs);
        if let Some((support, s)) = source {
            self.add_mass_source(state, support, s);
        }
        self.update_pressure(state);
    }

    fn step_dirichlet_inner(&self, state: &mut AcousticState<T>, b: &[T], bufs: &mut StepBuffers<T>) {
        self.advance_velocity_and_density(state, bufs);
        for rho in state.rho_split.iter_mut() {
            for ((&i, &v), &w) in self.sensors.indices().iter().zip(b).zip(&self.dirichlet_scale) {
                rho[i] = w * v;
            }
        }
        self.update_pressure(state);
    }

    /// Runs `n = -1 … N_t-1` from the zero state. Recordings hold
    /// `g^m = W p^m` for `m = 0 … N_t`.
    pub fn run(&self, schedule: &SourceSchedule<T>, record: bool, return_final: bool) -> Result<RunOutput<T>> {
        self.run_observed(schedule, record, return_final, |_| {})
    }

    /// As [`Solver::run`], calling `observe` with the state after every step.
    pub fn run_observed<F>(
        &self,
        schedule: &SourceSchedule<T>,
        record: bool,
        return_final: bool,
        mut observe: F,
    ) -> Result<RunOutput<T>>
    where
        F: FnMut(&AcousticState<T>),
    {
        let nt = self.time.nt as i64;
        if schedule.len() != self.time.nt + 1 {
            return invalid(format!(
                "schedule has {} slots, time axis needs {}",
                schedule.len(),
                self.time.nt + 1
            ));
        }
        for n in -1..nt {
            if let Some(s) = schedule.get(n) {
                self.check_source(schedule.support, s)?;
            }
        }
        let ns = self.sensors.len();
        let mut state = AcousticState::zero(&self.grid);
        let mut bufs = StepBuffers::new(self);
        let mut recordings = if record {
            Some(vec![T::zero(); (self.time.nt + 1) * ns])
        } else {
            None
        };
        let zeros = vec![T::zero(); ns];
        for n in -1..nt {
            match schedule.mode {
                SourceMode::Mass => {
                    let src = schedule.get(n).map(|s| (schedule.support, s));
                    self.step_inner(&mut state, src, &mut bufs);
                }
                SourceMode::Dirichlet => {
                    let b = schedule.get(n).unwrap_or(&zeros);
                    self.step_dirichlet_inner(&mut state, b, &mut bufs);
                }
            }
            if let Some(rec) = recordings.as_mut() {
                let m = (n + 1) as usize;
                self.sensors.select(&state.p, &mut rec[m * ns..(m + 1) * ns]);
            }
            observe(&state);
            if (n + 1) % STABILITY_CHECK_INTERVAL == 0 {
                Self::guard(&state)?;
            }
        }
        Self::guard(&state)?;
        Ok(RunOutput {
            recordings,
            final_pressure: if return_final { Some(state.p) } else { None },
        })
    }
}

struct StepBuffers<T: Real> {
    deriv: Vec<Vec<T>>,
    work: Workspace<T>,
}

impl<T: Real> StepBuffers<T> {
    fn new(solver: &Solver<T>) -> Self {
        Self {
            deriv: vec![vec![T::zero(); solver.grid.len()]; solver.grid.ndim()],
            work: solver.ks.workspace(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pml: usize) -> (Grid, Medium, TimeAxis, SensorArray) {
        let g = Grid::new(vec![16, 16], vec![1e-3; 2], vec![pml; 2]).unwrap();
        let m = Medium::homogeneous(&g, 1500.0, 1000.0).unwrap();
        let t = TimeAxis::from_cfl(&g, 1500.0, DEFAULT_CFL, 20.0 * 0.3e-3 / 1500.0).unwrap();
        let s = SensorArray::new(&g, vec![g.flat_index(&[5, 5]), g.flat_index(&[6, 9])]).unwrap();
        (g, m, t, s)
    }

    #[test]
    fn sensor_validation() {
        let g = Grid::new(vec![16, 16], vec![1.0; 2], vec![2, 2]).unwrap();
        assert!(SensorArray::new(&g, vec![]).is_err());
        assert!(SensorArray::new(&g, vec![40, 40]).is_err());
        assert!(SensorArray::new(&g, vec![0]).is_err());
        let s = SensorArray::new(&g, vec![40, 41]).unwrap();
        let f = s.inject(&[1.0f64, 2.0], g.len());
        let mut back = [0.0; 2];
        s.select(&f, &mut back);
        assert_eq!(back, [1.0, 2.0]);
    }

    #[test]
    fn zero_state_stays_zero() {
        let (g, m, t, s) = small(2);
        let solver = Solver::<f64>::new(&g, &m, PmlSettings::default(), t, s).unwrap();
        let mut st = AcousticState::zero(&g);
        solver.step(&mut st, None).unwrap();
        assert_eq!(st.step_index, 0);
        assert!(st.p.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_pressure_is_stationary_without_pml() {
        let (g, m, t, s) = small(0);
        let solver = Solver::<f64>::new(&g, &m, PmlSettings::default(), t, s).unwrap();
        let mut st = AcousticState::zero(&g);
        for r in st.rho_split.iter_mut() {
            r.iter_mut().for_each(|x| *x = 1.0 / (2.0 * 1500.0 * 1500.0));
        }
        st.p = vec![1.0; g.len()];
        let before = st.clone();
        for _ in 0..5 {
            solver.step(&mut st, None).unwrap();
        }
        for (a, b) in st.p.iter().zip(&before.p) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(st.u.iter().flatten().all(|x| x.abs() < 1e-18));
    }

    #[test]
    fn dirichlet_step_enforces_sensor_pressure() {
        let (g, m, t, s) = small(2);
        let solver = Solver::<f64>::new(&g, &m, PmlSettings::default(), t, s.clone()).unwrap();
        let mut st = AcousticState::zero(&g);
        st.p[g.flat_index(&[8, 8])] = 1.0;
        let b = [0.25, -3.0];
        solver.step_dirichlet(&mut st, &b).unwrap();
        let mut got = [0.0; 2];
        s.select(&st.p, &mut got);
        for (x, y) in got.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
        solver.step_dirichlet(&mut st, &[0.0, 0.0]).unwrap();
        s.select(&st.p, &mut got);
        assert_eq!(got, [0.0, 0.0]);
    }

    #[test]
    fn instability_is_reported_with_step_index() {
        let (g, m, t, s) = small(0);
        let solver = Solver::<f64>::new(&g, &m, PmlSettings::default(), t, s).unwrap();
        let mut st = AcousticState::zero(&g);
        st.p[3] = f64::NAN;
        match solver.step(&mut st, None) {
            Err(PatError::NumericalInstability { step }) => assert_eq!(step, 0),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn zero_schedule_records_zeros() {
        let (g, m, t, s) = small(2);
        let solver = Solver::<f64>::new(&g, &m, PmlSettings::default(), t, s).unwrap();
        let sched = SourceSchedule::mass(&t, SourceSupport::Grid);
        let out = solver.run(&sched, true, true).unwrap();
        let rec = out.recordings.unwrap();
        assert_eq!(rec.len(), (t.nt + 1) * 2);
        assert!(rec.iter().all(|&x| x == 0.0));
        assert!(out.final_pressure.unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn schedule_length_must_match() {
        let (g, m, t, s) = small(2);
        let solver = Solver::<f64>::new(&g, &m, PmlSettings::default(), t, s).unwrap();
        let other = TimeAxis::new(t.nt + 3, t.dt).unwrap();
        let sched = SourceSchedule::mass(&other, SourceSupport::Grid);
        assert!(solver.run(&sched, true, false).is_err());
    }

    #[test]
    fn cfl_check() {
        let g = Grid::new(vec![16, 16], vec![1e-3; 2], vec![0; 2]).unwrap();
        let t = TimeAxis::from_cfl(&g, 1500.0, 0.3, 1e-5).unwrap();
        assert!(t.check_cfl(&g, 1500.0, 0.3).is_ok());
        assert!(t.check_cfl(&g, 3000.0, 0.3).is_err());
        assert!(TimeAxis::new(0, 1e-7).is_err());
    }
}
