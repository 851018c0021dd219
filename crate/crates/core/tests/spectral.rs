use std::f64::consts::PI;

use pat_core::{Grid, KSpaceOperators, Shift};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

fn periodic_grid(rows: usize, cols: usize) -> Grid {
    Grid::new(vec![rows, cols], vec![0.5e-3, 0.25e-3], vec![0, 0]).unwrap()
}

#[test]
fn single_mode_derivative_matches_analytic_form() {
    let grid = periodic_grid(16, 32);
    let (c_ref, dt) = (1500.0, 5e-8);
    let ks = KSpaceOperators::<f64>::new(&grid, c_ref, dt).unwrap();
    for (axis, m) in [(0usize, 3.0f64), (1, 5.0), (1, 1.0)] {
        let n = grid.dims[axis];
        let length = n as f64 * grid.spacing[axis];
        let k = 2.0 * PI * m / length;
        let field: Vec<f64> = (0..grid.len())
            .map(|flat| {
                let x = grid.unflatten(flat)[axis] as f64 * grid.spacing[axis];
                (k * x).sin()
            })
            .collect();
        let arg = c_ref * dt * k / 2.0;
        let kappa = arg.sin() / arg;
        let expect: Vec<f64> = (0..grid.len())
            .map(|flat| {
                let x = grid.unflatten(flat)[axis] as f64 * grid.spacing[axis];
                k * kappa * (k * x).cos()
            })
            .collect();
        let got = ks.spectral_derivative(&field, axis, Shift::None).unwrap();
        let err: Vec<f64> = got.iter().zip(&expect).map(|(a, b)| a - b).collect();
        assert!(
            norm(&err) / norm(&expect) < 1e-12,
            "axis {axis}, m {m}: {}",
            norm(&err) / norm(&expect)
        );
    }
}

#[test]
fn unshifted_derivative_is_skew_adjoint() {
    let grid = periodic_grid(16, 24);
    let ks = KSpaceOperators::<f64>::new(&grid, 1500.0, 4e-8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for axis in 0..2 {
        let f = random_field(&mut rng, grid.len());
        let g = random_field(&mut rng, grid.len());
        let df = ks.spectral_derivative(&f, axis, Shift::None).unwrap();
        let dg = ks.spectral_derivative(&g, axis, Shift::None).unwrap();
        let scale = norm(&df) * norm(&g) + norm(&f) * norm(&dg);
        assert!((dot(&df, &g) + dot(&f, &dg)).abs() / scale < 1e-10);
    }
}

#[test]
fn staggered_pair_are_negative_adjoints() {
    let grid = periodic_grid(20, 16);
    let ks = KSpaceOperators::<f64>::new(&grid, 1500.0, 4e-8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for axis in 0..2 {
        let f = random_field(&mut rng, grid.len());
        let g = random_field(&mut rng, grid.len());
        let dpf = ks.spectral_derivative(&f, axis, Shift::Plus).unwrap();
        let dmg = ks.spectral_derivative(&g, axis, Shift::Minus).unwrap();
        let scale = norm(&dpf) * norm(&g) + norm(&f) * norm(&dmg);
        assert!((dot(&dpf, &g) + dot(&f, &dmg)).abs() / scale < 1e-10);
    }
}

#[test]
fn packed_gradient_matches_single_axis_derivatives() {
    let grid = Grid::new(vec![12, 16], vec![1e-3, 1e-3], vec![2, 3]).unwrap();
    let ks = KSpaceOperators::<f64>::new(&grid, 1500.0, 1e-7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = random_field(&mut rng, grid.len());
    let mut work = ks.workspace();
    let mut grad = vec![vec![0.0; grid.len()]; 2];
    ks.gradient_plus(&p, &mut grad, &mut work);
    for (axis, g) in grad.iter().enumerate() {
        let single = ks.spectral_derivative(&p, axis, Shift::Plus).unwrap();
        let err: Vec<f64> = g.iter().zip(&single).map(|(a, b)| a - b).collect();
        assert!(norm(&err) < 1e-12 * norm(&single));
    }
    let u: Vec<Vec<f64>> = (0..2).map(|_| random_field(&mut rng, grid.len())).collect();
    let mut div = vec![vec![0.0; grid.len()]; 2];
    ks.divergence_minus(&u, &mut div, &mut work);
    for axis in 0..2 {
        let single = ks.spectral_derivative(&u[axis], axis, Shift::Minus).unwrap();
        let err: Vec<f64> = div[axis].iter().zip(&single).map(|(a, b)| a - b).collect();
        assert!(norm(&err) < 1e-12 * norm(&single));
    }
}

#[test]
fn single_precision_tracks_double() {
    let grid = periodic_grid(16, 16);
    let k64 = KSpaceOperators::<f64>::new(&grid, 1500.0, 4e-8).unwrap();
    let k32 = KSpaceOperators::<f32>::new(&grid, 1500.0, 4e-8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let f = random_field(&mut rng, grid.len());
    let f32v: Vec<f32> = f.iter().map(|&x| x as f32).collect();
    let a = k64.spectral_derivative(&f, 1, Shift::Plus).unwrap();
    let b = k32.spectral_derivative(&f32v, 1, Shift::Plus).unwrap();
    let err: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - *y as f64).collect();
    assert!(norm(&err) / norm(&a) < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn derivative_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, axis in 0usize..2, shift in 0usize..3) {
        let grid = periodic_grid(8, 12);
        let ks = KSpaceOperators::<f64>::new(&grid, 1500.0, 4e-8).unwrap();
        let shift = [Shift::Plus, Shift::Minus, Shift::None][shift];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_field(&mut rng, grid.len());
        let g = random_field(&mut rng, grid.len());
        let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lhs = ks.spectral_derivative(&comb, axis, shift).unwrap();
        let df = ks.spectral_derivative(&f, axis, shift).unwrap();
        let dg = ks.spectral_derivative(&g, axis, shift).unwrap();
        let rhs: Vec<f64> = df.iter().zip(&dg).map(|(x, y)| a * x + b * y).collect();
        let err: Vec<f64> = lhs.iter().zip(&rhs).map(|(x, y)| x - y).collect();
        prop_assert!(norm(&err) <= 1e-12 * (norm(&rhs) + norm(&df) + norm(&dg)));
    }
}
