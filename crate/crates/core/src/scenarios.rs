//! Experiment definitions: a homogeneous cube with a planar sensor and a
//! centred ball, and a three-material 2D breast-like phantom with sensors
//! along a curved interface.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::medium::{
    build_medium_scenario_ii, distance_to_polyline, materials, unit_coords, vessel_depth, vessel_polyline, Medium,
    PmlSettings, VESSEL_HALF_WIDTH,
};
use crate::operators::{AdjointSchedule, PatOperatorConfig, PatOperators, SmoothingSettings};
use crate::real::{norm_inf, Real};
use crate::solver::{SensorArray, TimeAxis, DEFAULT_CFL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioLabel {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II")]
    II,
    #[serde(rename = "layered")]
    Layered,
    #[serde(rename = "custom")]
    Custom,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: ScenarioLabel,
    pub grid: Grid,
    pub medium: Medium,
    pub sensors: SensorArray,
    pub time: TimeAxis,
    /// Ground-truth initial pressure on the interior grid.
    pub p0: Vec<f64>,
    pub noise_rel: f64,
}

/// Crossings of the slowest wave over the domain covered by the time axis.
pub const DEFAULT_CROSSINGS: f64 = 1.5;

/// Default relative noise level of simulated data.
pub const DEFAULT_NOISE_REL: f64 = 0.01;

/// PML thickness for scenario II scaled from 24 points at 512.
pub fn scenario_ii_default_pml(n: usize) -> usize {
    ((24.0 * n as f64 / 512.0).round() as usize).max(1)
}

/// End time at which the slowest wave has crossed the interior
/// `DEFAULT_CROSSINGS` times.
pub fn default_t_end(grid: &Grid, medium: &Medium) -> f64 {
    let extent = grid
        .interior_dims()
        .iter()
        .zip(&grid.spacing)
        .map(|(n, dx)| *n as f64 * dx)
        .fold(0.0, f64::max);
    DEFAULT_CROSSINGS * extent / medium.c_min()
}

/// Time axis up to [`default_t_end`] at the default CFL number.
pub fn default_time_axis(grid: &Grid, medium: &Medium) -> Result<TimeAxis> {
    TimeAxis::from_cfl(grid, medium.c_ref, DEFAULT_CFL, default_t_end(grid, medium))
}

impl Scenario {
    pub fn interior_dims(&self) -> Vec<usize> {
        self.grid.interior_dims()
    }

    pub fn operator_config(&self) -> Result<PatOperatorConfig> {
        let cfg = PatOperatorConfig {
            grid: self.grid.clone(),
            medium: self.medium.clone(),
            pml: PmlSettings::default(),
            time: self.time,
            sensors: self.sensors.clone(),
            smoothing: SmoothingSettings::default(),
            adjoint_schedule: AdjointSchedule::Shifted,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn operators<T: Real>(&self) -> Result<PatOperators<T>> {
        PatOperators::new(self.operator_config()?)
    }
}

/// Homogeneous unit cube, sensors on the whole top voxel layer and a
/// centred ball of radius 0.15 and unit amplitude.
pub fn scenario_i(n: usize, pml: usize) -> Result<Scenario> {
    if n < 16 {
        return invalid(format!("scenario I needs n >= 16, got {n}"));
    }
    let grid = Grid::with_interior(3, n, 1.0 / n as f64, pml)?;
    let medium = Medium::homogeneous(&grid, 1500.0, 1000.0)?;
    let sensors = SensorArray::new(
        &grid,
        (0..n * n)
            .map(|j| grid.flat_index(&[pml, pml + j / n, pml + j % n]))
            .collect(),
    )?;
    let time = default_time_axis(&grid, &medium)?;
    let p0 = centred_ball(3, n);
    Ok(Scenario {
        label: ScenarioLabel::I,
        grid,
        medium,
        sensors,
        time,
        p0,
        noise_rel: DEFAULT_NOISE_REL,
    })
}

/// Centred ball of radius 0.15 and unit amplitude on an `n^d` interior of
/// the unit cube.
fn centred_ball(ndim: usize, n: usize) -> Vec<f64> {
    let radius = 0.15;
    (0..n.pow(ndim as u32))
        .map(|j| {
            let r2: f64 = (0..ndim)
                .map(|ax| {
                    let i = (j / n.pow((ndim - 1 - ax) as u32)) % n;
                    ((i as f64 + 0.5) / n as f64 - 0.5).powi(2)
                })
                .sum();
            if r2 <= radius * radius {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Small two-material 2D check case: material A above material B with a
/// flat interface at half depth, sensors on the whole top interior row and
/// a centred ball.
pub fn scenario_layered(n: usize, pml: usize) -> Result<Scenario> {
    if n < 8 {
        return invalid(format!("layered scenario needs n >= 8, got {n}"));
    }
    let grid = Grid::with_interior(2, n, 1.0 / n as f64, pml)?;
    let (mut c0, mut rho0) = (vec![materials::A.0; grid.len()], vec![materials::A.1; grid.len()]);
    for flat in 0..grid.len() {
        if grid.unflatten(flat)[0] >= pml + n / 2 {
            c0[flat] = materials::B.0;
            rho0[flat] = materials::B.1;
        }
    }
    let medium = Medium::new(c0, rho0)?;
    let sensors = SensorArray::new(&grid, (0..n).map(|j| grid.flat_index(&[pml, pml + j])).collect())?;
    let time = default_time_axis(&grid, &medium)?;
    Ok(Scenario {
        label: ScenarioLabel::Layered,
        grid,
        medium,
        sensors,
        time,
        p0: centred_ball(2, n),
        noise_rel: DEFAULT_NOISE_REL,
    })
}

/// Branches of the vessel tree as `(start x, depth offset, end x, depth
/// offset, amplitude)` in domain units, anchored on the vessel centre line.
const BRANCHES: [(f64, f64, f64, f64, f64); 4] = [
    (0.30, 0.0, 0.22, -0.12, 0.8),
    (0.45, 0.0, 0.55, 0.13, 0.6),
    (0.62, 0.0, 0.70, -0.14, 0.7),
    (0.78, 0.0, 0.86, 0.10, 0.5),
];

/// Vessel-tree initial pressure on an `rows × cols` interior.
fn vessel_tree(grid: &Grid) -> Vec<f64> {
    let idims = grid.interior_dims();
    let (rows, cols) = (idims[0], idims[1]);
    let trunk = vessel_polyline(rows, cols);
    let branches: Vec<(Vec<(f64, f64)>, f64)> = BRANCHES
        .iter()
        .map(|&(x0, dy0, x1, dy1, amp)| {
            let a = ((vessel_depth(x0) + dy0) * rows as f64, x0 * cols as f64);
            let b = ((vessel_depth(x0) + dy1) * rows as f64, x1 * cols as f64);
            (vec![a, b], amp)
        })
        .collect();
    let branch_half_width = 1.0;
    grid.interior_indices()
        .iter()
        .map(|&flat| {
            let idx = grid.unflatten(flat);
            let (y, x) = unit_coords(grid, &idx);
            let (py, px) = (y * rows as f64, x * cols as f64);
            let mut v: f64 = 0.0;
            if distance_to_polyline(py, px, &trunk) <= VESSEL_HALF_WIDTH {
                v = 1.0;
            }
            for (seg, amp) in &branches {
                if distance_to_polyline(py, px, seg) <= branch_half_width {
                    v = v.max(*amp);
                }
            }
            v
        })
        .collect()
}

/// Three-material 2D scenario on an `n × n` interior of the unit square.
pub fn scenario_ii(n: usize, pml: usize) -> Result<Scenario> {
    if n < 64 {
        return invalid(format!("scenario II needs n >= 64, got {n}"));
    }
    let grid = Grid::with_interior(2, n, 1.0 / n as f64, pml)?;
    let (medium, sensors) = build_medium_scenario_ii(&grid)?;
    let time = default_time_axis(&grid, &medium)?;
    let p0 = vessel_tree(&grid);
    Ok(Scenario {
        label: ScenarioLabel::II,
        grid,
        medium,
        sensors,
        time,
        p0,
        noise_rel: DEFAULT_NOISE_REL,
    })
}

/// `f = A p0 + ε`, `ε` i.i.d. normal with standard deviation
/// `noise_rel · max|A p0|`.
pub fn simulate_data<T: Real>(ops: &PatOperators<T>, p0: &[f64], noise_rel: f64, seed: u64) -> Result<Vec<T>> {
    if !(noise_rel >= 0.0) {
        return invalid("noise level must be non-negative");
    }
    let p0t: Vec<T> = p0.iter().map(|&v| T::of(v)).collect();
    let mut f = ops.forward_op(&p0t)?;
    add_noise(&mut f, noise_rel, seed);
    Ok(f)
}

pub fn add_noise<T: Real>(f: &mut [T], noise_rel: f64, seed: u64) {
    if noise_rel == 0.0 {
        return;
    }
    let sigma = noise_rel * norm_inf(f);
    if sigma == 0.0 {
        return;
    }
    let dist = Normal::new(0.0, sigma).expect("positive finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in f.iter_mut() {
        *v = T::of(v.as_f64() + dist.sample(&mut rng));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_i_layout() {
        let s = scenario_i(16, 4).unwrap();
        assert_eq!(s.sensors.len(), 256);
        assert!(s.medium.c0.iter().all(|&c| c == 1500.0));
        assert!(s.medium.rho0.iter().all(|&r| r == 1000.0));
        assert_eq!(norm_inf(&s.p0), 1.0);
        // ball does not touch the interior boundary
        let n = 16;
        for (j, &v) in s.p0.iter().enumerate() {
            let c = [j / (n * n), (j / n) % n, j % n];
            if v > 0.0 {
                assert!(c.iter().all(|&i| i > 0 && i < n - 1));
            }
        }
        assert!(scenario_i(8, 2).is_err());
    }

    #[test]
    fn scenario_ii_layout() {
        let s = scenario_ii(128, scenario_ii_default_pml(128)).unwrap();
        assert_eq!(s.grid.pml_size, vec![6, 6]);
        assert_eq!(s.sensors.len(), 50);
        assert!(s.p0.iter().all(|&v| v >= 0.0));
        assert_eq!(norm_inf(&s.p0), 1.0);
        assert_eq!(s.medium.c_min(), 1400.0);
        assert_eq!(s.medium.c_max(), 1560.0);
        assert!(scenario_ii(32, 2).is_err());
        assert_eq!(scenario_ii_default_pml(512), 24);
    }

    #[test]
    fn vessel_tree_sits_in_material_b_or_c() {
        let s = scenario_ii(128, 6).unwrap();
        let interior = s.grid.interior_indices();
        for (&flat, &v) in interior.iter().zip(&s.p0) {
            if v > 0.0 {
                let m = (s.medium.c0[flat], s.medium.rho0[flat]);
                assert!(m == materials::B || m == materials::C, "p0 in material A at {flat}");
            }
        }
    }

    #[test]
    fn layered_layout() {
        let s = scenario_layered(12, 2).unwrap();
        assert_eq!(s.grid.dims, vec![16, 16]);
        assert_eq!(s.sensors.len(), 12);
        assert_eq!(s.medium.c_min(), materials::B.0);
        assert_eq!(s.medium.c_ref, materials::A.0);
        assert_eq!(s.p0.iter().filter(|&&v| v > 0.0).count(), 12);
        assert!(scenario_layered(6, 2).is_err());
    }

    #[test]
    fn scenario_ii_is_deterministic() {
        let a = scenario_ii(64, 3).unwrap();
        let b = scenario_ii(64, 3).unwrap();
        assert_eq!(a.p0, b.p0);
        assert_eq!(a.medium, b.medium);
        assert_eq!(a.sensors, b.sensors);
    }
}
