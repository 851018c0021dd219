//! Command-line front end: config-driven simulation, reconstruction and
//! adjointness verification with binary field I/O.

pub mod config;
pub mod fieldfile;
pub mod image;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pat_core::analysis::{assemble_dense, psnr, run_adjoint_study, transpose_error, AdjointTestReport, DENSE_LIMIT};
use pat_core::medium::{Medium, PmlSettings};
use pat_core::operators::{ImagingOperator, PatOperatorConfig, PatOperators, SmoothingSettings};
use pat_core::recon::{estimate_theta, reconstruct, IterationLog, Monitor, THETA_MAX_ITER, THETA_TOLERANCE};
use pat_core::scenarios::{
    default_t_end, scenario_i, scenario_ii, scenario_ii_default_pml, scenario_layered, simulate_data, Scenario,
    ScenarioLabel, DEFAULT_NOISE_REL,
};
use pat_core::{Grid, PatError, Real, SensorArray, TimeAxis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use config::{Precision, RunConfig, ScenarioConfig};
use fieldfile::{FieldData, FieldFile, FieldFileError, Provenance, Sidecar};

/// Absorbing layer used for scenario I when the config does not set one.
pub const SCENARIO_I_DEFAULT_PML: usize = 8;

/// Environment variable naming a fault to inject in `verify`; the only
/// recognised value is `adjoint_sign`.
pub const FAULT_ENV: &str = "PAT_FAULT_INJECTION";

pub const THREADS_ENV: &str = "PAT_THREADS";

pub const DATA_FILE: &str = "data.patf";
pub const P0_FILE: &str = "p0.patf";
pub const IMAGE_FILE: &str = "image.patf";
pub const PNG_FILE: &str = "image.png";
pub const LOG_FILE: &str = "log.csv";
pub const THETA_FILE: &str = "theta.json";
pub const REPORT_FILE: &str = "verify_report.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<PatError> for CliError {
    fn from(e: PatError) -> Self {
        match e {
            PatError::NumericalInstability { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<FieldFileError> for CliError {
    fn from(e: FieldFileError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "pat",
    version,
    about = "Photoacoustic tomography simulation and reconstruction"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// Reconstruction method: TR, BP, iTR, iTR+, LS, LS+ or TV+.
    #[arg(long, global = true)]
    pub method: Option<String>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate measurement data for the configured scenario.
    Simulate,
    /// Reconstruct an initial pressure image from measured data.
    Reconstruct {
        /// Data field file; defaults to `<out>/data.patf`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Adjointness study and, for small grids, the dense transpose check.
    Verify,
    /// PSNR of an image against a reference, both field files.
    Psnr { reference: PathBuf, image: PathBuf },
}

impl GlobalArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        if let Some(m) = &self.method {
            cfg.method.name = m.parse().map_err(|e: PatError| CliError::Usage(e.to_string()))?;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

pub fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        command_line: std::env::args().collect(),
        seed: Some(cfg.seed),
        git_revision: env!("PAT_GIT_REVISION").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: Some(cfg.hash()),
    }
}

fn read_field(path: &Path, grid: &Grid) -> Result<Vec<f64>, CliError> {
    let f = FieldFile::read(path)?;
    let dims: Vec<usize> = f.dims.iter().map(|&d| d as usize).collect();
    if dims != grid.dims {
        return Err(CliError::Usage(format!(
            "{}: dims {dims:?} do not match grid {:?}",
            path.display(),
            grid.dims
        )));
    }
    Ok(f.data.to_f64())
}

/// Builds the experiment described by the config, including the time axis
/// and reference speed overrides.
pub fn build_scenario(cfg: &RunConfig) -> Result<Scenario, CliError> {
    let mut s = match &cfg.scenario {
        ScenarioConfig::I { n, pml } => scenario_i(*n, pml.unwrap_or(SCENARIO_I_DEFAULT_PML))?,
        ScenarioConfig::II { n, pml } => scenario_ii(*n, pml.unwrap_or_else(|| scenario_ii_default_pml(*n)))?,
        ScenarioConfig::Layered { n, pml } => scenario_layered(*n, *pml)?,
        ScenarioConfig::Custom {
            dims,
            spacing,
            pml,
            c0,
            rho0,
            sensors,
            p0,
        } => {
            let grid = Grid::new(dims.clone(), vec![*spacing; dims.len()], vec![*pml; dims.len()])?;
            let medium = Medium::new(read_field(c0, &grid)?, read_field(rho0, &grid)?)?;
            let mask = read_field(sensors, &grid)?;
            let idx = mask
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, _)| i)
                .collect();
            let sensors = SensorArray::new(&grid, idx)?;
            let p0 = match p0 {
                Some(path) => {
                    let f = FieldFile::read(path)?;
                    let d: Vec<usize> = f.dims.iter().map(|&d| d as usize).collect();
                    if d != grid.interior_dims() {
                        return Err(CliError::Usage(format!(
                            "{}: dims {d:?} do not match interior {:?}",
                            path.display(),
                            grid.interior_dims()
                        )));
                    }
                    f.data.to_f64()
                }
                None => Vec::new(),
            };
            let time = TimeAxis::new(1, 1.0)?;
            Scenario {
                label: ScenarioLabel::Custom,
                grid,
                medium,
                sensors,
                time,
                p0,
                noise_rel: DEFAULT_NOISE_REL,
            }
        }
    };
    if let Some(c_ref) = cfg.c_ref {
        s.medium = Medium::with_reference(s.medium.c0.clone(), s.medium.rho0.clone(), c_ref)?;
    }
    s.time = match (cfg.time.nt, cfg.time.dt) {
        (Some(nt), Some(dt)) => TimeAxis::new(nt, dt)?,
        (Some(nt), None) => {
            let dx = s.grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
            TimeAxis::new(nt, cfg.time.cfl * dx / s.medium.c_ref)?
        }
        _ => {
            let t_end = cfg.time.t_end.unwrap_or_else(|| default_t_end(&s.grid, &s.medium));
            TimeAxis::from_cfl(&s.grid, s.medium.c_ref, cfg.time.cfl, t_end)?
        }
    };
    s.noise_rel = cfg.noise_rel;
    Ok(s)
}

pub fn operator_config(cfg: &RunConfig, s: &Scenario) -> Result<PatOperatorConfig, CliError> {
    let oc = PatOperatorConfig {
        grid: s.grid.clone(),
        medium: s.medium.clone(),
        pml: PmlSettings {
            alpha_max: cfg.pml.alpha_max,
            exponent: cfg.pml.exponent,
        },
        time: s.time,
        sensors: s.sensors.clone(),
        smoothing: SmoothingSettings { enabled: cfg.smoothing },
        adjoint_schedule: cfg.adjoint_schedule,
    };
    oc.validate()?;
    Ok(oc)
}

fn ensure_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| io_error(&cfg.out, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn to_field_data<T: Real>(v: Vec<T>) -> FieldData {
    match T::NAME {
        "f32" => FieldData::F32(v.iter().map(|x| x.as_f64() as f32).collect()),
        _ => FieldData::F64(v.iter().map(|x| x.as_f64()).collect()),
    }
}

fn from_field_data<T: Real>(d: &FieldData) -> Vec<T> {
    match d {
        FieldData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
        FieldData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
    }
}

fn dims_u64(d: &[usize]) -> Vec<u64> {
    d.iter().map(|&x| x as u64).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateManifest {
    pub config: RunConfig,
    pub config_sha256: String,
    pub provenance: Provenance,
    pub grid_dims: Vec<usize>,
    pub pml_size: Vec<usize>,
    pub nt: usize,
    pub dt: f64,
    pub n_sensors: usize,
    pub data_dims: Vec<usize>,
}

/// Simulated data in the configured precision; no files are written.
pub fn simulate_data_for<T: Real>(cfg: &RunConfig) -> Result<(Scenario, Vec<T>), CliError> {
    let s = build_scenario(cfg)?;
    if s.p0.is_empty() {
        return Err(CliError::Usage(
            "config key 'scenario.p0': required for simulate".into(),
        ));
    }
    let ops = PatOperators::<T>::new(operator_config(cfg, &s)?)?;
    let f = simulate_data(&ops, &s.p0, cfg.noise_rel, cfg.seed)?;
    Ok((s, f))
}

fn simulate<T: Real>(cfg: &RunConfig) -> Result<String, CliError> {
    let (s, f) = simulate_data_for::<T>(cfg)?;
    ensure_out(cfg)?;
    let prov = provenance(cfg);
    let data_dims = vec![s.time.samples(), s.sensors.len()];
    let data = FieldFile::new(dims_u64(&data_dims), to_field_data(f))?;
    fieldfile::write_with_sidecar(
        &cfg.out.join(DATA_FILE),
        &data,
        &Sidecar {
            description: "pressure at the sensors, one row per time sample".into(),
            spacing: vec![s.time.dt, 1.0],
            units: "Pa".into(),
            axes: vec!["time".into(), "sensor".into()],
            provenance: prov.clone(),
        },
    )?;
    let idims = s.interior_dims();
    let p0 = FieldFile::new(dims_u64(&idims), FieldData::F64(s.p0.clone()))?;
    fieldfile::write_with_sidecar(
        &cfg.out.join(P0_FILE),
        &p0,
        &Sidecar {
            description: "ground-truth initial pressure on the interior grid".into(),
            spacing: s.grid.spacing.clone(),
            units: "Pa".into(),
            axes: (0..idims.len()).map(|a| format!("x{a}")).collect(),
            provenance: prov.clone(),
        },
    )?;
    write_json(
        &cfg.out.join("manifest.json"),
        &SimulateManifest {
            config: cfg.clone(),
            config_sha256: cfg.hash(),
            provenance: prov,
            grid_dims: s.grid.dims.clone(),
            pml_size: s.grid.pml_size.clone(),
            nt: s.time.nt,
            dt: s.time.dt,
            n_sensors: s.sensors.len(),
            data_dims: data_dims.clone(),
        },
    )?;
    Ok(format!(
        "simulated {:?} samples on grid {:?} ({} precision) into {}",
        data_dims,
        s.grid.dims,
        cfg.precision.name(),
        cfg.out.display()
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThetaCache {
    operator_sha256: String,
    precision: String,
    theta: f64,
}

fn cached_theta<T: Real, O: ImagingOperator<T>>(cfg: &RunConfig, op: &O) -> Result<f64, CliError> {
    if let Some(t) = cfg.method.theta {
        return Ok(t);
    }
    let path = cfg.out.join(THETA_FILE);
    let key = cfg.operator_hash();
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(c) = serde_json::from_str::<ThetaCache>(&text) {
            if c.operator_sha256 == key && c.precision == T::NAME {
                log::info!("reusing theta {} from {}", c.theta, path.display());
                return Ok(c.theta);
            }
        }
    }
    let p = estimate_theta(op, THETA_TOLERANCE, THETA_MAX_ITER)?;
    if !p.converged {
        log::warn!(
            "power iteration stopped after {} iterations without converging",
            p.iterations
        );
    }
    write_json(
        &path,
        &ThetaCache {
            operator_sha256: key,
            precision: T::NAME.to_string(),
            theta: p.theta,
        },
    )?;
    Ok(p.theta)
}

#[derive(Debug, Serialize)]
struct LogRow {
    iteration: usize,
    objective: f64,
    composite: f64,
    step_norm: f64,
    wall_time: f64,
    psnr: Option<f64>,
}

pub fn write_log_csv(path: &Path, log: &IterationLog) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    if log.is_empty() {
        w.write_record(["iteration", "objective", "composite", "step_norm", "wall_time", "psnr"])
            .map_err(|e| io_error(path, e))?;
    }
    for i in 0..log.len() {
        w.serialize(LogRow {
            iteration: i + 1,
            objective: log.objective[i],
            composite: log.composite[i],
            step_norm: log.step_norm[i],
            wall_time: log.wall_time[i],
            psnr: log.psnr.get(i).copied(),
        })
        .map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconSummary {
    pub method: String,
    pub precision: String,
    pub iterations: usize,
    pub theta: Option<f64>,
    pub psnr: Option<f64>,
    pub diverged: bool,
    pub config_sha256: String,
    pub provenance: Provenance,
}

fn reconstruct_cmd<T: Real>(cfg: &RunConfig, data: &Path) -> Result<String, CliError> {
    let s = build_scenario(cfg)?;
    let ops = PatOperators::<T>::new(operator_config(cfg, &s)?)?;
    let file = FieldFile::read(data)?;
    let expect = dims_u64(&[s.time.samples(), s.sensors.len()]);
    if file.dims != expect {
        return Err(CliError::Usage(format!(
            "{}: data dims {:?} do not match the configured operator {:?}",
            data.display(),
            file.dims,
            expect
        )));
    }
    let f: Vec<T> = from_field_data(&file.data);
    ensure_out(cfg)?;
    let settings = cfg.method.settings();
    let theta = if settings.method.needs_theta() {
        Some(cached_theta(cfg, &ops)?)
    } else {
        cfg.method.theta
    };
    let truth: Vec<T> = s.p0.iter().map(|&v| T::of(v)).collect();
    let has_truth = truth.iter().any(|v| *v != T::zero());
    let monitor = Monitor {
        ground_truth: has_truth.then_some(truth.as_slice()),
    };
    let idims = s.interior_dims();
    let out = reconstruct(&ops, &f, &idims, &settings, theta, &monitor)?;
    if out.log.diverged {
        log::warn!("{} objective diverged", settings.method);
    }
    let quality = if has_truth {
        Some(psnr(&truth, &out.image)?)
    } else {
        None
    };
    let prov = provenance(cfg);
    image::write_png(&cfg.out.join(PNG_FILE), &out.image, &idims)?;
    let img = FieldFile::new(dims_u64(&idims), to_field_data(out.image))?;
    fieldfile::write_with_sidecar(
        &cfg.out.join(IMAGE_FILE),
        &img,
        &Sidecar {
            description: format!("{} reconstruction of the initial pressure", settings.method),
            spacing: s.grid.spacing.clone(),
            units: "Pa".into(),
            axes: (0..idims.len()).map(|a| format!("x{a}")).collect(),
            provenance: prov.clone(),
        },
    )?;
    write_log_csv(&cfg.out.join(LOG_FILE), &out.log)?;
    write_json(
        &cfg.out.join("recon.json"),
        &ReconSummary {
            method: settings.method.to_string(),
            precision: T::NAME.to_string(),
            iterations: out.log.len(),
            theta: out.theta,
            psnr: quality,
            diverged: out.log.diverged,
            config_sha256: cfg.hash(),
            provenance: prov,
        },
    )?;
    Ok(match quality {
        Some(q) => format!("{}: PSNR {q:.2} dB", settings.method),
        None => format!("{}: done", settings.method),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseCheck {
    pub relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub precision: String,
    pub fault_injection: Option<String>,
    pub study: AdjointTestReport,
    pub max_log10_threshold: f64,
    pub median_log10_threshold: f64,
    pub dense: Option<DenseCheck>,
    pub passed: bool,
    pub config_sha256: String,
    pub provenance: Provenance,
}

/// Runs the adjointness checks; the report is returned even when they fail.
pub fn verify_report<T: Real>(cfg: &RunConfig) -> Result<VerifyReport, CliError> {
    let s = build_scenario(cfg)?;
    let mut ops = PatOperators::<T>::new(operator_config(cfg, &s)?)?;
    let fault = std::env::var(FAULT_ENV).ok().filter(|v| !v.is_empty());
    match fault.as_deref() {
        None => {}
        Some("adjoint_sign") => ops = ops.with_corrupted_adjoint(),
        Some(other) => return Err(CliError::Usage(format!("{FAULT_ENV}: unknown fault '{other}'"))),
    }
    let v = &cfg.verify;
    let study = run_adjoint_study(&ops, v.trials, cfg.seed, s.grid.dims.clone(), s.grid.pml_size.clone())?;
    let (n_img, n_data) = (ops.image_len(), ops.data_len());
    let dense = if n_img.saturating_mul(n_data) <= DENSE_LIMIT {
        let cast = |x: &[f64]| -> Vec<T> { x.iter().map(|&v| T::of(v)).collect() };
        let back = |y: Vec<T>| -> Vec<f64> { y.iter().map(|v| v.as_f64()).collect() };
        let a = assemble_dense(|x| ops.forward(&cast(x)).map(back), n_img, n_data)?;
        let b = assemble_dense(|y| ops.adjoint(&cast(y)).map(back), n_data, n_img)?;
        let e = transpose_error(&a, &b, n_data, n_img);
        Some(DenseCheck {
            relative_error: e,
            tolerance: v.dense_tolerance,
            passed: e <= v.dense_tolerance,
        })
    } else {
        log::info!("grid too large for the dense transpose check");
        None
    };
    let passed = study.error.is_none()
        && study.log10_normalized_max <= v.max_log10
        && study.log10_normalized_median <= v.median_log10
        && dense.as_ref().is_none_or(|d| d.passed);
    Ok(VerifyReport {
        seed: cfg.seed,
        precision: T::NAME.to_string(),
        fault_injection: fault,
        study,
        max_log10_threshold: v.max_log10,
        median_log10_threshold: v.median_log10,
        dense,
        passed,
        config_sha256: cfg.hash(),
        provenance: provenance(cfg),
    })
}

fn verify<T: Real>(cfg: &RunConfig) -> Result<String, CliError> {
    let r = verify_report::<T>(cfg)?;
    ensure_out(cfg)?;
    write_json(&cfg.out.join(REPORT_FILE), &r)?;
    let dense = match &r.dense {
        Some(d) => format!(", dense transpose error {:.3e}", d.relative_error),
        None => String::new(),
    };
    let msg = format!(
        "adjointness log10 max {:.2}, median {:.2}{dense}",
        r.study.log10_normalized_max, r.study.log10_normalized_median
    );
    if r.passed {
        Ok(format!("PASS: {msg}"))
    } else {
        Err(CliError::Numerical(format!("FAIL: {msg}")))
    }
}

fn psnr_cmd(reference: &Path, image: &Path) -> Result<String, CliError> {
    let a = FieldFile::read(reference)?;
    let b = FieldFile::read(image)?;
    if a.dims != b.dims {
        return Err(CliError::Usage(format!("dims differ: {:?} vs {:?}", a.dims, b.dims)));
    }
    let v = psnr(&a.data.to_f64(), &b.data.to_f64())?;
    Ok(format!("{v:.4}"))
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(CliError::Usage(format!("{THREADS_ENV} must be positive")));
        }
        // A second initialisation in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Executes one command and returns the line to print on success.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    configure_threads()?;
    if let Command::Psnr { reference, image } = &cli.command {
        return psnr_cmd(reference, image);
    }
    let cfg = cli.global.resolve()?;
    macro_rules! dispatch {
        ($f:ident $(, $arg:expr)*) => {
            match cfg.precision {
                Precision::F32 => $f::<f32>(&cfg $(, $arg)*),
                Precision::F64 => $f::<f64>(&cfg $(, $arg)*),
            }
        };
    }
    match &cli.command {
        Command::Simulate => dispatch!(simulate),
        Command::Reconstruct { data } => {
            let path = data.clone().unwrap_or_else(|| cfg.out.join(DATA_FILE));
            dispatch!(reconstruct_cmd, &path)
        }
        Command::Verify => dispatch!(verify),
        Command::Psnr { .. } => unreachable!(),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.global.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(msg) => {
            if !cli.global.quiet {
                println!("{msg}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
