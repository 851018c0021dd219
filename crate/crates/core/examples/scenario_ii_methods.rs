//! Runs all seven reconstruction methods on scenario II and prints PSNR.
//!
//! `cargo run --release --example scenario_ii_methods -- [n] [iterations]`

use std::time::Instant;

use pat_core::analysis::psnr;
use pat_core::recon::{estimate_theta, reconstruct, Method, Monitor, ReconSettings};
use pat_core::scenarios::{scenario_ii, scenario_ii_default_pml, simulate_data, DEFAULT_NOISE_REL};

fn main() -> pat_core::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(128);
    let k = args.get(1).copied().unwrap_or(100);
    let sc = scenario_ii(n, scenario_ii_default_pml(n))?;
    let ops = sc.operators::<f32>()?;
    println!(
        "grid {:?}, nt {}, sensors {}",
        sc.grid.dims,
        sc.time.nt,
        sc.sensors.len()
    );
    let t = Instant::now();
    let f = simulate_data(&ops, &sc.p0, DEFAULT_NOISE_REL, 1)?;
    println!("forward: {:.2}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let theta = estimate_theta(&ops, 1e-3, 30)?;
    println!(
        "theta {:e} after {} its ({:.1}s)",
        theta.theta,
        theta.iterations,
        t.elapsed().as_secs_f64()
    );
    let dims = sc.interior_dims();
    let truth: Vec<f32> = sc.p0.iter().map(|&v| v as f32).collect();
    for m in Method::ALL {
        let t = Instant::now();
        let settings = ReconSettings {
            method: m,
            iterations: k,
            ..ReconSettings::default()
        };
        let out = reconstruct(&ops, &f, &dims, &settings, Some(theta.theta), &Monitor::default())?;
        println!(
            "{:5} PSNR {:6.2} dB  ({:.1}s)",
            m.name(),
            psnr(&out.image, &truth)?,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
