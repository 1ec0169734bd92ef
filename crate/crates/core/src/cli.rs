//! Command-line front end: argument parsing, configuration resolution and
//! the subcommands.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_dataset, DatasetParams, Mode};
use crate::error::{Error, Result};
use crate::experiment::{parse_angles, phantom_cloud, run_experiment, Backend, ExperimentParams, Protocol};
use crate::forward::{simulate_bmode, Scene};
use crate::inverse::{reconstruct_from_bmode, AdmmParams, Lambda};
use crate::io::{load_cloud, load_grid, save_bmode_pgm, save_cloud, save_grid, save_grid_pgm, write_pgm};
use crate::metrics::{evaluate_views, inclusion_rois};
use crate::model::{BModeImage, ImagingConfig, ScatterGrid};
use crate::phantom::{
    generate_cloud, grid_to_cloud, inclusion_phantom, ingest_intensity_images, procedural_image,
    sample_amplitudes, IntensityImage, PlaneExtent, ProceduralSpec,
};
use crate::psf::{make_psf_stack, PsfStack};
use crate::rng::{derive_seed, stream};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "ECHOSCAT_THREADS";

/// Name of the effective-configuration echo written to every output dir.
pub const RESOLVED_CONFIG: &str = "config.resolved.json";

#[derive(Parser, Debug)]
#[command(name = "echoscat", version, about = "Ultrasound scatterer simulation and reconstruction toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `a..b` (inclusive, integer degrees) or a comma-separated list.
    #[arg(long, global = true)]
    angles: Option<String>,
    /// scatgan1 or scatgan3.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// admm, predicted or identity.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Directory of externally predicted `.sgrid` maps.
    #[arg(long, global = true)]
    predicted: Option<PathBuf>,
    /// `<v>` (absolute) or `<v>*max` (relative to lambda_max).
    #[arg(long, global = true)]
    lambda: Option<String>,
    /// Scatterer density per mm^2.
    #[arg(long, global = true)]
    density: Option<f64>,
    #[arg(long = "f0-mhz", global = true)]
    f0_mhz: Option<f64>,
    /// 1 (per angle), 2 (single view) or 3 (three views).
    #[arg(long, global = true)]
    protocol: Option<String>,
    /// Beam steering in degrees: one value for `simulate`, one per input
    /// for `reconstruct`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    steer: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write an inclusion or procedural intensity phantom and its cloud.
    Phantom {
        /// inclusion or procedural.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Simulate B-mode views of a `.scat` cloud or `.sgrid` map.
    Simulate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Build training pairs from a directory of grayscale images, or from
    /// procedural images when no directory is given.
    Dataset {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Number of procedural images.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Reconstruct a scatter map from B-mode `.sgrid` views, or ingest
    /// predicted maps.
    Reconstruct {
        /// B-mode `.sgrid` files or directories of them.
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Score reconstructed views against reference views.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        reconstructed: PathBuf,
    },
    /// Rotation experiment on the inclusion phantom.
    Experiment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Inclusion,
    Procedural,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inclusion" => Ok(PhantomKind::Inclusion),
            "procedural" => Ok(PhantomKind::Procedural),
            _ => Err(Error::param("kind", format!("`{s}` is not inclusion or procedural"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub kind: PhantomKind,
    pub procedural: ProceduralSpec,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            kind: PhantomKind::Inclusion,
            procedural: ProceduralSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub angles_deg: Vec<f64>,
    pub steer_deg: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            angles_deg: vec![0.0],
            steer_deg: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub mode: Mode,
    pub density_per_mm2: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Procedural images generated when no input directory is given.
    pub procedural_count: usize,
    /// Side of the square, raster-centered extent assigned to each image.
    pub image_side_mm: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let p = DatasetParams::default();
        DatasetSection {
            mode: Mode::Scatgan1,
            density_per_mm2: p.density_per_mm2,
            sigma_min: p.sigma_min,
            sigma_max: p.sigma_max,
            procedural_count: 16,
            image_side_mm: 40.0,
        }
    }
}

impl DatasetSection {
    pub fn params(&self) -> DatasetParams {
        DatasetParams {
            density_per_mm2: self.density_per_mm2,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructSection {
    /// Steering per input view; empty means all unsteered.
    pub steer_deg: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out: Option<PathBuf>,
}

/// Everything a run needs. Built-in defaults, then the JSON file, then
/// flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub psf_bands: usize,
    pub imaging: ImagingConfig,
    pub phantom: PhantomSection,
    pub simulate: SimulateSection,
    pub dataset: DatasetSection,
    pub reconstruct: ReconstructSection,
    pub admm: AdmmParams,
    pub experiment: ExperimentParams,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            psf_bands: 4,
            imaging: ImagingConfig::default(),
            phantom: PhantomSection::default(),
            simulate: SimulateSection::default(),
            dataset: DatasetSection::default(),
            reconstruct: ReconstructSection::default(),
            admm: AdmmParams::default(),
            experiment: ExperimentParams::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Parses a JSON configuration; absent keys keep their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.imaging.validate()?;
        self.admm.validate()?;
        self.experiment.validate()?;
        if self.psf_bands == 0 {
            return Err(Error::param("psf_bands", "must be positive"));
        }
        let d = &self.dataset;
        if !(d.density_per_mm2 > 0.0 && d.density_per_mm2.is_finite()) {
            return Err(Error::param("dataset.density_per_mm2", "must be positive"));
        }
        if !(d.sigma_min > 0.0 && d.sigma_min <= d.sigma_max && d.sigma_max.is_finite()) {
            return Err(Error::param("dataset.sigma", "need 0 < sigma_min <= sigma_max"));
        }
        if !(d.image_side_mm > 0.0 && d.image_side_mm.is_finite()) {
            return Err(Error::param("dataset.image_side_mm", "must be positive"));
        }
        if self.simulate.angles_deg.is_empty() {
            return Err(Error::param("simulate.angles_deg", "must not be empty"));
        }
        Ok(())
    }

    fn apply(&mut self, flags: &GlobalArgs, command: &Command) -> Result<()> {
        if let Some(s) = flags.seed {
            self.seed = s;
        }
        if let Some(a) = &flags.angles {
            let angles = parse_angles(a)?;
            match command {
                Command::Simulate { .. } => self.simulate.angles_deg = angles,
                _ => self.experiment.angles_deg = angles,
            }
        }
        if let Some(m) = &flags.mode {
            self.dataset.mode = m.parse()?;
        }
        if let Some(b) = &flags.backend {
            self.experiment.backend = b.parse()?;
        }
        if let Some(p) = &flags.predicted {
            self.experiment.predicted_dir = Some(p.clone());
        }
        if let Some(l) = &flags.lambda {
            self.admm.lambda = l.parse::<Lambda>()?;
        }
        if let Some(d) = flags.density {
            self.dataset.density_per_mm2 = d;
            self.experiment.density_per_mm2 = d;
        }
        if let Some(f) = flags.f0_mhz {
            self.imaging.f0_hz = f * 1e6;
        }
        if let Some(p) = &flags.protocol {
            self.experiment.protocol = p.parse::<Protocol>()?;
        }
        if let Some(s) = &flags.steer {
            let steer = parse_list("steer", s)?;
            match command {
                Command::Simulate { .. } => {
                    if steer.len() != 1 {
                        return Err(Error::param("steer", "simulate takes one steering angle"));
                    }
                    self.simulate.steer_deg = steer[0];
                }
                _ => self.reconstruct.steer_deg = steer,
            }
        }
        if let Command::Phantom { kind: Some(k) } = command {
            self.phantom.kind = k.parse()?;
        }
        if let Some(o) = &flags.out {
            self.paths.out = Some(o.clone());
        }
        Ok(())
    }
}

fn parse_list(name: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::param(name, format!("`{t}` is not a number")))
        })
        .collect()
}

/// Exit status for an error: 2 usage, 3 data or format, 4 numerical.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Param { .. } => 2,
        Error::Format { .. } | Error::Io(_) => 3,
        Error::Numerical(_) | Error::UndefinedMetric(_) => 4,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Param { .. } => "usage",
        Error::Format { .. } => "format",
        Error::Io(_) => "io",
        Error::UndefinedMetric(_) => "metric",
        Error::Numerical(_) => "numerical",
    }
}

/// One-line JSON error record.
fn error_line(kind: &str, code: i32, message: &str) -> String {
    serde_json::json!({ "error": kind, "code": code, "message": message }).to_string()
}

/// Removes top-level entries of `out` that a failed run created, and `out`
/// itself if the run created it.
struct Cleanup {
    out: PathBuf,
    existed: bool,
    before: HashSet<OsString>,
}

impl Cleanup {
    fn new(out: &Path) -> Result<Self> {
        let existed = out.exists();
        let before = if existed {
            std::fs::read_dir(out)?
                .filter_map(|e| e.ok().map(|e| e.file_name()))
                .collect()
        } else {
            HashSet::new()
        };
        std::fs::create_dir_all(out)?;
        Ok(Cleanup {
            out: out.to_path_buf(),
            existed,
            before,
        })
    }

    fn rollback(&self) {
        if !self.existed {
            let _ = std::fs::remove_dir_all(&self.out);
            return;
        }
        let Ok(entries) = std::fs::read_dir(&self.out) else { return };
        for e in entries.flatten() {
            if self.before.contains(&e.file_name()) {
                continue;
            }
            let p = e.path();
            let _ = if p.is_dir() { std::fs::remove_dir_all(&p) } else { std::fs::remove_file(&p) };
        }
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Errors go to stderr as one JSON line.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
            let first = first.trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", 2, first));
            return 2;
        }
    };
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                let err = Error::param(THREADS_ENV, format!("`{v}` is not a positive integer"));
                eprintln!("{}", error_line("usage", 2, &err.to_string()));
                return 2;
            }
        },
        Err(_) => None,
    };
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(Error::Numerical(format!("thread pool: {e}"))),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_line(error_kind(&e), code, &e.to_string()));
            code
        }
    }
}

/// Entry point for the binary: reads the process arguments and logging
/// settings (`RUST_LOG`).
pub fn main_entry() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    run(std::env::args_os())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&cli.global, &cli.command)?;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    let out = cfg
        .paths
        .out
        .clone()
        .ok_or_else(|| Error::param("out", "an output directory is required (--out)"))?;
    let cleanup = Cleanup::new(&out)?;
    let result = (|| {
        std::fs::write(out.join(RESOLVED_CONFIG), cfg.to_json())?;
        match &cli.command {
            Command::Phantom { .. } => cmd_phantom(&cfg, &out),
            Command::Simulate { input } => cmd_simulate(&cfg, input, &out),
            Command::Dataset { input, count } => cmd_dataset(&cfg, input.as_deref(), *count, &out),
            Command::Reconstruct { input } => cmd_reconstruct(&cfg, input, &out),
            Command::Evaluate { reference, reconstructed } => cmd_evaluate(&cfg, reference, reconstructed, &out),
            Command::Experiment => cmd_experiment(&cfg, &out),
        }
    })();
    if result.is_err() {
        cleanup.rollback();
    }
    result
}

fn psf_stack(cfg: &RunConfig) -> Result<PsfStack> {
    make_psf_stack(&cfg.imaging, cfg.psf_bands)
}

/// Square extent of side `side` centered on the raster.
fn centered_extent(cfg: &RunConfig, side: f64) -> PlaneExtent {
    let (cx, cz) = cfg.imaging.geometry().center_xz();
    PlaneExtent::centered(cx, cz, side, side)
}

/// Loading failures of user-supplied files are data errors.
fn as_data(path: &Path, e: Error) -> Error {
    match e {
        Error::Param { name, reason } => Error::format(path.display().to_string(), format!("{name}: {reason}")),
        other => other,
    }
}

fn save_image_pgm(image: &IntensityImage, path: &Path) -> Result<()> {
    write_pgm(path, image.cols(), image.rows(), |r, c| image.get(r, c))
}

fn cmd_phantom(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ex = &cfg.experiment;
    let extent = centered_extent(cfg, ex.phantom_side_mm);
    let (image, cloud) = match cfg.phantom.kind {
        PhantomKind::Inclusion => {
            let image = inclusion_phantom(
                extent,
                ex.phantom_pixel_mm,
                ex.inclusion_radius_mm,
                ex.inclusion_contrast,
                ex.background,
            )?;
            (image, phantom_cloud(&cfg.imaging, ex, cfg.seed)?)
        }
        PhantomKind::Procedural => {
            let image = procedural_image(derive_seed(cfg.seed, stream::IMAGE), extent, &cfg.phantom.procedural)?;
            let domain = extent.with_slab(cfg.imaging.slab_thickness_mm / 2.0)?;
            let cloud = generate_cloud(&domain, ex.density_per_mm2, derive_seed(cfg.seed, stream::CLOUD))?;
            let sampled = sample_amplitudes(
                &cloud,
                &image,
                ex.sigma_min,
                ex.sigma_max,
                derive_seed(cfg.seed, stream::AMPLITUDE),
            )?;
            (image, sampled.cloud)
        }
    };
    save_grid(&image.to_grid(), out.join("phantom.sgrid"))?;
    save_image_pgm(&image, &out.join("phantom.pgm"))?;
    save_cloud(&cloud, out.join("cloud.scat"))?;
    log::info!("phantom: {} scatterers", cloud.len());
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let psf = psf_stack(cfg)?;
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let cloud = match ext {
        "scat" => Some(load_cloud(input).map_err(|e| as_data(input, e))?),
        "sgrid" => None,
        _ => return Err(Error::param("input", format!("{}: expected .scat or .sgrid", input.display()))),
    };
    let grid = match cloud {
        Some(_) => None,
        None => Some(load_grid(input).map_err(|e| as_data(input, e))?),
    };
    let geometry = cfg.imaging.geometry();
    // Off-raster or rotated grids are simulated through their pixel cloud.
    let grid_cloud = match &grid {
        Some(g) if !g.matches_raster(&geometry) || cfg.simulate.angles_deg.iter().any(|&a| a != 0.0) => {
            Some(grid_to_cloud(g)?)
        }
        _ => None,
    };
    let scene = match (&cloud, &grid_cloud, &grid) {
        (Some(c), _, _) | (None, Some(c), _) => Scene::Cloud(c),
        (None, None, Some(g)) => Scene::Grid(g),
        _ => unreachable!("one scene source is always present"),
    };
    let noise = derive_seed(cfg.seed, stream::NOISE);
    for (k, &angle) in cfg.simulate.angles_deg.iter().enumerate() {
        let b = simulate_bmode(scene, &psf, &cfg.imaging, angle, cfg.simulate.steer_deg, derive_seed(noise, k as u64))?;
        let stem = out.join(format!("view_{k:03}"));
        save_grid(&b.to_grid(), stem.with_extension("sgrid"))?;
        save_bmode_pgm(&b, stem.with_extension("pgm"))?;
    }
    Ok(())
}

fn cmd_dataset(cfg: &RunConfig, input: Option<&Path>, count: Option<usize>, out: &Path) -> Result<()> {
    let psf = psf_stack(cfg)?;
    let extent = centered_extent(cfg, cfg.dataset.image_side_mm);
    let images = match input {
        Some(dir) => {
            let ingested = ingest_intensity_images(dir, extent).map_err(|e| as_data(dir, e))?;
            if ingested.images.is_empty() {
                return Err(Error::format(dir.display().to_string(), "no readable grayscale images"));
            }
            ingested.images
        }
        None => {
            let n = count.unwrap_or(cfg.dataset.procedural_count);
            if n == 0 {
                return Err(Error::param("count", "must be positive"));
            }
            let base = derive_seed(cfg.seed, stream::IMAGE);
            (0..n)
                .map(|k| {
                    procedural_image(derive_seed(base, k as u64), extent, &cfg.phantom.procedural)
                        .map(|img| (format!("procedural_{k:05}"), img))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let dirs = generate_dataset(&images, &psf, &cfg.imaging, cfg.dataset.mode, &cfg.dataset.params(), cfg.seed, out)?;
    log::info!("dataset: {} pairs", dirs.len());
    Ok(())
}

/// `.sgrid` files named directly, or found (sorted) in named directories.
fn collect_grids(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|e| e == "sgrid"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(Error::format(p.display().to_string(), "no such file or directory"));
        }
    }
    if files.is_empty() {
        return Err(Error::format("input", "no .sgrid files found"));
    }
    Ok(files)
}

fn load_bmode(cfg: &RunConfig, path: &Path, steer_deg: f64) -> Result<BModeImage> {
    let grid = load_grid(path).map_err(|e| as_data(path, e))?;
    let b = BModeImage::from_grid(&grid, cfg.imaging.fs_hz, cfg.imaging.dynamic_range_db, steer_deg, 0.0)
        .map_err(|e| as_data(path, e))?;
    if b.geometry() != &cfg.imaging.geometry() {
        return Err(Error::format(path.display().to_string(), "raster differs from the imaging configuration"));
    }
    Ok(b)
}

fn write_map(grid: &ScatterGrid, stem: &Path) -> Result<()> {
    save_grid(grid, stem.with_extension("sgrid"))?;
    save_grid_pgm(grid, &stem.with_extension("pgm"))
}

fn cmd_reconstruct(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    match cfg.experiment.backend {
        Backend::Admm => {
            if inputs.is_empty() {
                return Err(Error::param("input", "the admm backend needs --input views"));
            }
            let files = collect_grids(inputs)?;
            let steer = &cfg.reconstruct.steer_deg;
            if !steer.is_empty() && steer.len() != files.len() {
                return Err(Error::param("steer", format!("{} angles for {} views", steer.len(), files.len())));
            }
            let views = files
                .iter()
                .enumerate()
                .map(|(k, f)| load_bmode(cfg, f, steer.get(k).copied().unwrap_or(0.0)))
                .collect::<Result<Vec<_>>>()?;
            let psf = psf_stack(cfg)?;
            let sol = reconstruct_from_bmode(&views, &psf, &cfg.imaging, &cfg.admm)?;
            write_map(&sol.grid, &out.join("map"))?;
            std::fs::write(out.join("convergence.csv"), sol.report.to_csv())?;
            Ok(())
        }
        Backend::Predicted => {
            let dir = cfg
                .experiment
                .predicted_dir
                .as_ref()
                .ok_or_else(|| Error::param("predicted", "the predicted backend needs --predicted <dir>"))?;
            let files = collect_grids(std::slice::from_ref(dir))?;
            let geometry = cfg.imaging.geometry();
            for f in &files {
                let grid = load_grid(f).map_err(|e| as_data(f, e))?;
                if !grid.matches_raster(&geometry) {
                    return Err(Error::format(f.display().to_string(), "grid is not on the B-mode raster"));
                }
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
                write_map(&grid, &out.join(stem))?;
            }
            Ok(())
        }
        Backend::Identity => Err(Error::param("backend", "identity only applies to experiments")),
    }
}

fn cmd_evaluate(cfg: &RunConfig, reference: &Path, reconstructed: &Path, out: &Path) -> Result<()> {
    let refs = collect_grids(&[reference.to_path_buf()])?;
    let recs = collect_grids(&[reconstructed.to_path_buf()])?;
    if refs.len() != recs.len() {
        return Err(Error::param(
            "views",
            format!("{} reference and {} reconstructed views", refs.len(), recs.len()),
        ));
    }
    let angles = &cfg.experiment.angles_deg;
    if angles.len() != refs.len() {
        return Err(Error::param(
            "angles",
            format!("{} angles for {} views (set --angles)", angles.len(), refs.len()),
        ));
    }
    let load = |files: &[PathBuf]| files.iter().map(|f| load_bmode(cfg, f, 0.0)).collect::<Result<Vec<_>>>();
    let (a, b) = (load(&refs)?, load(&recs)?);
    let ex = &cfg.experiment;
    let rois = inclusion_rois(&cfg.imaging.geometry(), ex.inclusion_radius_mm, ex.roi_margin_mm)?;
    let report = evaluate_views(&a, &b, angles, &rois)?;
    report.write(out, "report")
}

fn cmd_experiment(cfg: &RunConfig, out: &Path) -> Result<()> {
    let psf = psf_stack(cfg)?;
    let outcome = run_experiment(&psf, &cfg.imaging, &cfg.experiment, &cfg.admm, cfg.seed)?;
    outcome.write(out)?;
    let table = outcome.summary_table();
    std::fs::write(out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}
