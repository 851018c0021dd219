//! Acoustic medium and perfectly matched layer absorption profiles.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::solver::SensorArray;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    /// Sound speed (m/s) at every grid point.
    pub c0: Vec<f64>,
    /// Ambient density (kg/m³) at every grid point.
    pub rho0: Vec<f64>,
    /// Reference speed of the k-space correction.
    pub c_ref: f64,
}

impl Medium {
    /// Builds a medium with `c_ref = max(c0)`.
    pub fn new(c0: Vec<f64>, rho0: Vec<f64>) -> Result<Self> {
        let c_ref = c0.iter().cloned().fold(0.0, f64::max);
        Self::with_reference(c0, rho0, c_ref)
    }

    pub fn with_reference(c0: Vec<f64>, rho0: Vec<f64>, c_ref: f64) -> Result<Self> {
        if c0.len() != rho0.len() {
            return invalid("c0 and rho0 must have the same length");
        }
        let ok = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !ok(&c0) || !ok(&rho0) {
            return invalid("c0 and rho0 must be finite and strictly positive");
        }
        if !(c_ref > 0.0) || !c_ref.is_finite() {
            return invalid("c_ref must be positive");
        }
        Ok(Self { c0, rho0, c_ref })
    }

    pub fn homogeneous(grid: &Grid, c: f64, rho: f64) -> Result<Self> {
        Self::new(vec![c; grid.len()], vec![rho; grid.len()])
    }

    pub fn len(&self) -> usize {
        self.c0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c0.is_empty()
    }

    pub fn c_min(&self) -> f64 {
        self.c0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn c_max(&self) -> f64 {
        self.c0.iter().cloned().fold(0.0, f64::max)
    }
}

/// Absorption profile parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmlSettings {
    pub alpha_max: f64,
    pub exponent: f64,
}

impl Default for PmlSettings {
    fn default() -> Self {
        Self {
            alpha_max: 2.0,
            exponent: 4.0,
        }
    }
}

/// Multiplicative damping operators `Λ_ξ` (regular grid) and `Λ^s_ξ`
/// (staggered grid), one full-grid field per axis.
#[derive(Debug, Clone)]
pub struct PmlOperators {
    pub lambda: Vec<Vec<f64>>,
    pub lambda_staggered: Vec<Vec<f64>>,
    pub alpha_max: f64,
    pub exponent: f64,
}

impl PmlOperators {
    pub fn new(grid: &Grid, settings: PmlSettings, c_ref: f64, dt: f64) -> Result<Self> {
        let build = |staggered| -> Result<Vec<Vec<f64>>> {
            (0..grid.ndim())
                .map(|ax| build_pml(grid, ax, staggered, settings.alpha_max, settings.exponent, c_ref, dt))
                .collect()
        };
        Ok(Self {
            lambda: build(false)?,
            lambda_staggered: build(true)?,
            alpha_max: settings.alpha_max,
            exponent: settings.exponent,
        })
    }
}

/// Normalized depth into the absorbing layer of a (possibly half-shifted)
/// position along one axis; 0 in the interior, 1 at the outer face.
fn layer_depth(pos: f64, n: usize, pml: usize) -> f64 {
    let p = pml as f64;
    let left = (p - pos) / p;
    let right = (pos - (n - 1 - pml) as f64) / p;
    left.max(right).clamp(0.0, 1.0)
}

/// Absorption field `Λ = exp(-α(s) c_ref dt / (2 Δξ))` with
/// `α(s) = alpha_max · s^exponent`, varying along `axis` only.
pub fn build_pml(
    grid: &Grid,
    axis: usize,
    staggered: bool,
    alpha_max: f64,
    exponent: f64,
    c_ref: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if alpha_max < 0.0 || !alpha_max.is_finite() {
        return invalid(format!("alpha_max must be non-negative, got {alpha_max}"));
    }
    if axis >= grid.ndim() {
        return invalid(format!("axis {axis} out of range"));
    }
    let n = grid.dims[axis];
    let pml = grid.pml_size[axis];
    if pml == 0 {
        return Ok(vec![1.0; grid.len()]);
    }
    let shift = if staggered { 0.5 } else { 0.0 };
    let scale = c_ref * dt / (2.0 * grid.spacing[axis]);
    let line: Vec<f64> = (0..n)
        .map(|i| {
            let s = layer_depth(i as f64 + shift, n, pml);
            if s == 0.0 {
                1.0
            } else {
                (-alpha_max * s.powf(exponent) * scale).exp()
            }
        })
        .collect();
    let stride = grid.strides()[axis];
    Ok((0..grid.len()).map(|flat| line[(flat / stride) % n]).collect())
}

/// Material constants of the breast-like three-material phantom.
pub mod materials {
    /// Top region.
    pub const A: (f64, f64) = (1500.0, 1000.0);
    /// Parabolic lower region.
    pub const B: (f64, f64) = (1400.0, 1200.0);
    /// Vessel-like inclusion.
    pub const C: (f64, f64) = (1560.0, 800.0);
}

/// Depth (from the top, domain units) of the A/B interface at lateral
/// position `x ∈ [0, 1]`.
pub fn interface_depth(x: f64) -> f64 {
    0.3 + 0.8 * (x - 0.5).powi(2)
}

/// Centre line of the vessel inclusion, defined for `x` in
/// [`VESSEL_SPAN`].
pub fn vessel_depth(x: f64) -> f64 {
    0.72 + 0.06 * (3.0 * std::f64::consts::PI * x).sin()
}

pub const VESSEL_SPAN: (f64, f64) = (0.15, 0.85);

/// Interior-normalized coordinates `(depth, lateral)` of a grid point in the
/// unit square; points in the absorbing layer map outside `[0, 1]`.
pub(crate) fn unit_coords(grid: &Grid, idx: &[usize]) -> (f64, f64) {
    let idims = grid.interior_dims();
    let f = |ax: usize| (idx[ax] as f64 - grid.pml_size[ax] as f64 + 0.5) / idims[ax] as f64;
    (f(0), f(1))
}

/// Distance in pixels from a point to the vessel centre line.
pub(crate) fn distance_to_polyline(y: f64, x: f64, poly: &[(f64, f64)]) -> f64 {
    poly.windows(2)
        .map(|w| {
            let (ay, ax) = w[0];
            let (by, bx) = w[1];
            let (dy, dx) = (by - ay, bx - ax);
            let len2 = dy * dy + dx * dx;
            let t = if len2 > 0.0 {
                (((y - ay) * dy + (x - ax) * dx) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (py, px) = (ay + t * dy, ax + t * dx);
            ((y - py).powi(2) + (x - px).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Vessel centre line in pixel coordinates of the interior grid.
pub(crate) fn vessel_polyline(n_rows: usize, n_cols: usize) -> Vec<(f64, f64)> {
    let samples = 64;
    (0..=samples)
        .map(|j| {
            let x = VESSEL_SPAN.0 + (VESSEL_SPAN.1 - VESSEL_SPAN.0) * j as f64 / samples as f64;
            (vessel_depth(x) * n_rows as f64, x * n_cols as f64)
        })
        .collect()
}

/// Vessel half-width in pixels (about three pixels wide).
pub const VESSEL_HALF_WIDTH: f64 = 1.5;

/// Number of sensors along the interface for an interior of `n` columns:
/// 200 at 512, proportionally fewer on coarser grids.
pub fn scenario_ii_sensor_count(n: usize) -> usize {
    ((200.0 * n as f64 / 512.0).round() as usize).max(1)
}

/// Three-material 2D medium with sensors on the A/B interface.
pub fn build_medium_scenario_ii(grid: &Grid) -> Result<(Medium, SensorArray)> {
    if grid.ndim() != 2 {
        return invalid("scenario II medium requires a 2D grid");
    }
    let idims = grid.interior_dims();
    let (rows, cols) = (idims[0], idims[1]);
    let poly = vessel_polyline(rows, cols);
    let mut c0 = vec![0.0; grid.len()];
    let mut rho0 = vec![0.0; grid.len()];
    for flat in 0..grid.len() {
        let idx = grid.unflatten(flat);
        let (y, x) = unit_coords(grid, &idx);
        let xc = x.clamp(0.0, 1.0);
        let (c, r) = if y < interface_depth(xc) {
            materials::A
        } else {
            let py = y * rows as f64;
            let px = x * cols as f64;
            if grid.is_interior(&idx) && distance_to_polyline(py, px, &poly) <= VESSEL_HALF_WIDTH {
                materials::C
            } else {
                materials::B
            }
        };
        c0[flat] = c;
        rho0[flat] = r;
    }
    let medium = Medium::new(c0, rho0)?;
    let sensors = interface_sensors(grid, scenario_ii_sensor_count(cols))?;
    Ok((medium, sensors))
}

/// Sensors equally spaced in arc length along the interface, each on the
/// last material-A pixel above the curve.
fn interface_sensors(grid: &Grid, count: usize) -> Result<SensorArray> {
    let idims = grid.interior_dims();
    let (rows, cols) = (idims[0] as f64, idims[1] as f64);
    // arc length table in pixel units
    let fine = 4096;
    let pts: Vec<(f64, f64)> = (0..=fine)
        .map(|j| {
            let x = j as f64 / fine as f64;
            (interface_depth(x) * rows, x * cols)
        })
        .collect();
    let mut arc = vec![0.0; pts.len()];
    for j in 1..pts.len() {
        let (a, b) = (pts[j - 1], pts[j]);
        arc[j] = arc[j - 1] + ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    }
    let total = arc[fine];
    let mut indices = Vec::with_capacity(count);
    let mut j = 0;
    for s in 0..count {
        let target = total * (s as f64 + 0.5) / count as f64;
        while j < fine && arc[j + 1] < target {
            j += 1;
        }
        let x = (j as f64 + 0.5) / fine as f64;
        let col = ((x * cols - 0.5).round() as usize).min(idims[1] - 1);
        let xc = (col as f64 + 0.5) / cols;
        // last row whose centre lies above the interface
        let depth_px = interface_depth(xc) * rows;
        let row = ((depth_px - 0.5).ceil() as isize - 1).clamp(0, idims[0] as isize - 1) as usize;
        let flat = grid.flat_index(&[row + grid.pml_size[0], col + grid.pml_size[1]]);
        if !indices.contains(&flat) {
            indices.push(flat);
        }
    }
    if indices.len() != count {
        return invalid(format!(
            "grid too coarse to place {count} distinct interface sensors (got {})",
            indices.len()
        ));
    }
    SensorArray::new(grid, indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pml_off_is_all_ones() {
        let g = Grid::new(vec![16, 16], vec![1e-3; 2], vec![0, 0]).unwrap();
        let l = build_pml(&g, 0, false, 2.0, 4.0, 1500.0, 1e-7).unwrap();
        assert!(l.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn pml_interior_is_exactly_one_and_edge_matches_closed_form() {
        let g = Grid::new(vec![32, 24], vec![1e-3, 2e-3], vec![6, 4]).unwrap();
        let (c, dt) = (1500.0, 2e-7);
        for ax in 0..2 {
            let l = build_pml(&g, ax, false, 2.0, 4.0, c, dt).unwrap();
            for flat in 0..g.len() {
                if g.is_interior(&g.unflatten(flat)) {
                    assert_eq!(l[flat], 1.0);
                }
                assert!(l[flat] > 0.0 && l[flat] <= 1.0);
            }
            let edge = (-2.0f64 * c * dt / (2.0 * g.spacing[ax])).exp();
            assert!((l[0] - edge).abs() < 1e-12);
        }
    }

    #[test]
    fn pml_monotone_towards_faces() {
        let g = Grid::new(vec![40, 16], vec![1e-3; 2], vec![10, 0]).unwrap();
        for staggered in [false, true] {
            let l = build_pml(&g, 0, staggered, 2.0, 4.0, 1500.0, 2e-7).unwrap();
            let line: Vec<f64> = (0..40).map(|i| l[i * 16]).collect();
            for i in 0..20 {
                assert!(line[i] <= line[i + 1] + 1e-15);
            }
            for i in 20..39 {
                assert!(line[i] >= line[i + 1] - 1e-15);
            }
        }
    }

    #[test]
    fn pml_rejects_negative_alpha() {
        let g = Grid::new(vec![16, 16], vec![1e-3; 2], vec![2, 2]).unwrap();
        assert!(build_pml(&g, 0, false, -1.0, 4.0, 1500.0, 1e-7).is_err());
    }

    #[test]
    fn scenario_ii_materials_and_sensors() {
        let g = Grid::with_interior(2, 512, 1.0 / 512.0, 24).unwrap();
        let (m, s) = build_medium_scenario_ii(&g).unwrap();
        assert_eq!(s.len(), 200);
        // top row of the interior is material A
        let top = g.flat_index(&[24, 200]);
        assert_eq!((m.c0[top], m.rho0[top]), materials::A);
        // a point on the vessel centre line is material C
        let x: f64 = 0.5;
        let row = (vessel_depth(x) * 512.0) as usize + 24;
        let col = (x * 512.0) as usize + 24;
        let flat = g.flat_index(&[row, col]);
        assert_eq!((m.c0[flat], m.rho0[flat]), materials::C);
        assert_eq!(m.c_min(), 1400.0);
        assert_eq!(m.c_max(), 1560.0);
        assert_eq!(m.c_ref, 1560.0);
        // sensors sit in material A directly above material B
        for &i in s.indices() {
            assert_eq!((m.c0[i], m.rho0[i]), materials::A);
            let below = i + g.strides()[0];
            assert_eq!((m.c0[below], m.rho0[below]), materials::B);
        }
    }

    #[test]
    fn scenario_ii_rejects_3d() {
        let g = Grid::with_interior(3, 16, 1.0, 0).unwrap();
        assert!(build_medium_scenario_ii(&g).is_err());
    }
}
