//! Rotation experiments on the inclusion phantom: simulate ground-truth
//! views, reconstruct a scatter map per protocol, resimulate, score.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{envelope, log_compress, simulate_bmode, simulate_rf, Scene};
use crate::inverse::{build_view_system, reconstruct_from_bmode, solve, AdmmParams, ConvergenceReport, Solution};
use crate::io::{load_grid, save_bmode_pgm, save_grid, save_grid_pgm};
use crate::metrics::{evaluate_views, inclusion_rois, MetricReport};
use crate::model::{BModeImage, ImagingConfig, RFFrame, ScatterGrid, ScattererCloud};
use crate::phantom::{
    generate_cloud, grid_to_cloud, inclusion_phantom, sample_amplitudes, PlaneExtent,
    DEFAULT_DENSITY_PER_MM2, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN,
};
use crate::psf::PsfStack;
use crate::rng::{derive_seed, stream};

/// How scatter maps are obtained from the ground-truth views.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Protocol {
    /// One map per angle, each resimulated at its own angle.
    PerAngle,
    /// One map from the 0 degree view, resimulated at every angle.
    SingleView,
    /// One map from three views (0 and +-`side_angle_deg`), resimulated at
    /// every angle.
    ThreeView,
}

impl TryFrom<u8> for Protocol {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Protocol::PerAngle),
            2 => Ok(Protocol::SingleView),
            3 => Ok(Protocol::ThreeView),
            _ => Err(Error::param("protocol", format!("{v} is not 1, 2 or 3"))),
        }
    }
}

impl From<Protocol> for u8 {
    fn from(p: Protocol) -> u8 {
        match p {
            Protocol::PerAngle => 1,
            Protocol::SingleView => 2,
            Protocol::ThreeView => 3,
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::param("protocol", format!("`{s}` is not 1, 2 or 3")))?;
        Protocol::try_from(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Envelope-domain ADMM deconvolution.
    Admm,
    /// Grids produced externally, read from `predicted_dir`.
    Predicted,
    /// The ground-truth cloud itself (pipeline sanity check).
    Identity,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "admm" => Ok(Backend::Admm),
            "predicted" => Ok(Backend::Predicted),
            "identity" => Ok(Backend::Identity),
            _ => Err(Error::param("backend", format!("`{s}` is not admm, predicted or identity"))),
        }
    }
}

/// What the ADMM backend reconstructs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdmmInput {
    /// The simulated RF of the input views.
    Rf,
    /// The B-mode images only (envelope-domain matching).
    Bmode,
}

/// Parses `a..b` (inclusive, unit steps) or a comma-separated list.
pub fn parse_angles(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::param("angles", format!("cannot parse `{s}` (use a..b or a,b,c)"));
    let s = s.trim();
    let angles: Vec<f64> = if let Some((a, b)) = s.split_once("..") {
        let a: i64 = a.trim().parse().map_err(|_| bad())?;
        let b: i64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).map(|v| v as f64).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if angles.is_empty() || angles.iter().any(|a| !a.is_finite()) {
        return Err(bad());
    }
    Ok(angles)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentParams {
    pub protocol: Protocol,
    pub angles_deg: Vec<f64>,
    pub backend: Backend,
    pub admm_input: AdmmInput,
    pub predicted_dir: Option<PathBuf>,
    pub inclusion_radius_mm: f64,
    pub inclusion_contrast: f64,
    pub background: f64,
    /// Side of the square phantom, centered on the raster.
    pub phantom_side_mm: f64,
    pub phantom_pixel_mm: f64,
    pub density_per_mm2: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Steering of the side views in the three-view protocol.
    pub side_angle_deg: f64,
    /// Gap between the field ROI and the raster edge.
    pub roi_margin_mm: f64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            protocol: Protocol::SingleView,
            angles_deg: (0..=30).map(f64::from).collect(),
            backend: Backend::Admm,
            admm_input: AdmmInput::Rf,
            predicted_dir: None,
            inclusion_radius_mm: 7.0,
            inclusion_contrast: 0.1,
            background: 0.5,
            phantom_side_mm: 40.0,
            phantom_pixel_mm: 0.1,
            density_per_mm2: DEFAULT_DENSITY_PER_MM2,
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            side_angle_deg: 10.0,
            roi_margin_mm: 1.0,
        }
    }
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<()> {
        if self.angles_deg.is_empty() || self.angles_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::param("angles_deg", "must be a non-empty list of finite angles"));
        }
        for (name, v) in [
            ("inclusion_radius_mm", self.inclusion_radius_mm),
            ("phantom_side_mm", self.phantom_side_mm),
            ("phantom_pixel_mm", self.phantom_pixel_mm),
            ("density_per_mm2", self.density_per_mm2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("{v} is not positive")));
            }
        }
        if self.backend == Backend::Predicted && self.predicted_dir.is_none() {
            return Err(Error::param("predicted_dir", "the predicted backend needs a directory"));
        }
        Ok(())
    }
}

/// Everything an experiment produced, in angle order.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub protocol: Protocol,
    pub angles_deg: Vec<f64>,
    pub ground_truth: Vec<BModeImage>,
    /// Views handed to the reconstruction backend.
    pub inputs: Vec<BModeImage>,
    /// One map (protocols 2, 3) or one per angle (protocol 1); empty for
    /// the identity backend.
    pub maps: Vec<ScatterGrid>,
    pub resimulated: Vec<BModeImage>,
    pub convergence: Vec<ConvergenceReport>,
    pub report: MetricReport,
}

struct Seeds {
    cloud: u64,
    amplitude: u64,
    noise: u64,
    extra: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        Seeds {
            cloud: derive_seed(seed, stream::CLOUD),
            amplitude: derive_seed(seed, stream::AMPLITUDE),
            noise: derive_seed(seed, stream::NOISE),
            extra: derive_seed(seed, stream::IMAGE),
        }
    }

    /// Noise of the ground-truth view at angle index `k`; resimulation at
    /// that angle reuses it.
    fn view(&self, k: usize) -> u64 {
        derive_seed(self.noise, k as u64)
    }

    /// Noise of an input view that is not one of the evaluated angles.
    fn input(&self, j: usize) -> u64 {
        derive_seed(self.extra, j as u64)
    }
}

/// The inclusion phantom's scatterer cloud, filling a square centered on
/// the raster.
pub fn phantom_cloud(config: &ImagingConfig, params: &ExperimentParams, seed: u64) -> Result<ScattererCloud> {
    let seeds = Seeds::new(seed);
    let (cx, cz) = config.geometry().center_xz();
    let extent = PlaneExtent::centered(cx, cz, params.phantom_side_mm, params.phantom_side_mm);
    let image = inclusion_phantom(
        extent,
        params.phantom_pixel_mm,
        params.inclusion_radius_mm,
        params.inclusion_contrast,
        params.background,
    )?;
    let domain = extent.with_slab(config.slab_thickness_mm / 2.0)?;
    let cloud = generate_cloud(&domain, params.density_per_mm2, seeds.cloud)?;
    Ok(sample_amplitudes(&cloud, &image, params.sigma_min, params.sigma_max, seeds.amplitude)?.cloud)
}

fn predicted_grid(params: &ExperimentParams, name: &str, config: &ImagingConfig) -> Result<ScatterGrid> {
    let dir = params.predicted_dir.as_ref().expect("validated");
    let grid = load_grid(dir.join(name))?;
    if !grid.matches_raster(&config.geometry()) {
        return Err(Error::format(
            name,
            format!(
                "{}x{} grid does not match the {}x{} B-mode raster",
                grid.rows(),
                grid.cols(),
                config.samples_per_line(),
                config.n_lines
            ),
        ));
    }
    Ok(grid)
}

/// One simulated view, kept in both forms.
struct View {
    rf: RFFrame,
    bmode: BModeImage,
}

fn simulate_view(
    cloud: &ScattererCloud,
    psf: &PsfStack,
    config: &ImagingConfig,
    rotate_deg: f64,
    steer_deg: f64,
    rng_seed: u64,
) -> Result<View> {
    let rf = simulate_rf(cloud, psf, config, rotate_deg, steer_deg, rng_seed)?.frame;
    let bmode = log_compress(&envelope(&rf)?, config.dynamic_range_db)?;
    Ok(View { rf, bmode })
}

/// Reconstructs one map from `views`, each treated as view-aligned (a
/// rotated view yields a map in its own frame).
fn solve_views(
    views: &[&View],
    psf: &PsfStack,
    config: &ImagingConfig,
    input: AdmmInput,
    admm: &AdmmParams,
) -> Result<Solution> {
    match input {
        AdmmInput::Rf => {
            let systems = views
                .iter()
                .map(|v| {
                    let rf = &v.rf;
                    let aligned = RFFrame::new(*rf.geometry(), rf.f0_hz(), rf.steer_deg(), 0.0, rf.values().to_vec())?;
                    build_view_system(psf, config, rf.steer_deg(), &aligned, admm.upsample)
                })
                .collect::<Result<Vec<_>>>()?;
            solve(&systems, admm)
        }
        AdmmInput::Bmode => {
            let bmodes = views
                .iter()
                .map(|v| {
                    let b = &v.bmode;
                    BModeImage::new(*b.geometry(), b.dynamic_range_db(), b.steer_deg(), 0.0, b.values().to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            reconstruct_from_bmode(&bmodes, psf, config, admm)
        }
    }
}

/// Runs one experiment end to end.
pub fn run_experiment(
    psf: &PsfStack,
    config: &ImagingConfig,
    params: &ExperimentParams,
    admm: &AdmmParams,
    seed: u64,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    params.validate()?;
    admm.validate()?;
    let seeds = Seeds::new(seed);
    let angles = params.angles_deg.clone();
    let cloud = phantom_cloud(config, params, seed)?;
    let rois = inclusion_rois(&config.geometry(), params.inclusion_radius_mm, params.roi_margin_mm)?;

    let truth = angles
        .par_iter()
        .enumerate()
        .map(|(k, &a)| simulate_view(&cloud, psf, config, a, 0.0, seeds.view(k)))
        .collect::<Result<Vec<_>>>()?;
    let zero_k = angles.iter().position(|&a| a == 0.0);
    let extra_zero = match (params.protocol, zero_k) {
        (Protocol::PerAngle, _) | (_, Some(_)) => None,
        _ => Some(simulate_view(&cloud, psf, config, 0.0, 0.0, seeds.input(0))?),
    };
    let zero_view = || zero_k.map(|k| &truth[k]).or(extra_zero.as_ref()).expect("simulated");

    let sides = match params.protocol {
        Protocol::ThreeView => {
            let s = params.side_angle_deg;
            // The solver models steered views; an external network gets
            // rotated ones.
            let side = |j: usize, a: f64| match params.backend {
                Backend::Admm => simulate_view(&cloud, psf, config, 0.0, a, seeds.input(j)),
                _ => simulate_view(&cloud, psf, config, a, 0.0, seeds.input(j)),
            };
            vec![side(1, -s)?, side(2, s)?]
        }
        _ => Vec::new(),
    };
    let input_views: Vec<&View> = match params.protocol {
        Protocol::PerAngle => truth.iter().collect(),
        Protocol::SingleView => vec![zero_view()],
        Protocol::ThreeView => vec![&sides[0], zero_view(), &sides[1]],
    };

    let mut maps = Vec::new();
    let mut convergence = Vec::new();
    let resimulated = match (params.backend, params.protocol) {
        (Backend::Identity, _) => angles
            .par_iter()
            .enumerate()
            .map(|(k, &a)| simulate_bmode(Scene::Cloud(&cloud), psf, config, a, 0.0, seeds.view(k)))
            .collect::<Result<Vec<_>>>()?,
        (backend, Protocol::PerAngle) => {
            let solved = input_views
                .par_iter()
                .enumerate()
                .map(|(k, view)| match backend {
                    Backend::Admm => {
                        let s = solve_views(&[view], psf, config, params.admm_input, admm)?;
                        Ok((s.grid, Some(s.report)))
                    }
                    _ => Ok((predicted_grid(params, &format!("pred_{k:03}.sgrid"), config)?, None)),
                })
                .collect::<Result<Vec<_>>>()?;
            for (g, r) in solved {
                maps.push(g);
                convergence.extend(r);
            }
            maps.par_iter()
                .enumerate()
                .map(|(k, g)| simulate_bmode(Scene::Grid(g), psf, config, 0.0, 0.0, seeds.view(k)))
                .collect::<Result<Vec<_>>>()?
        }
        (backend, _) => {
            let grid = match backend {
                Backend::Admm => {
                    let s = solve_views(&input_views, psf, config, params.admm_input, admm)?;
                    convergence.push(s.report);
                    s.grid
                }
                _ => predicted_grid(params, "pred.sgrid", config)?,
            };
            let map_cloud = grid_to_cloud(&grid)?;
            maps.push(grid);
            angles
                .par_iter()
                .enumerate()
                .map(|(k, &a)| simulate_bmode(Scene::Cloud(&map_cloud), psf, config, a, 0.0, seeds.view(k)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let inputs: Vec<BModeImage> = input_views.iter().map(|v| v.bmode.clone()).collect();
    let ground_truth: Vec<BModeImage> = truth.into_iter().map(|v| v.bmode).collect();

    let report = evaluate_views(&ground_truth, &resimulated, &angles, &rois)?;
    Ok(ExperimentOutcome {
        protocol: params.protocol,
        angles_deg: angles,
        ground_truth,
        inputs,
        maps,
        resimulated,
        convergence,
        report,
    })
}

impl ExperimentOutcome {
    /// Writes the report, views, maps and convergence logs under `dir`.
    /// Per-angle files are indexed by angle position.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut written = Vec::new();
        for sub in ["ground_truth", "inputs", "maps", "resimulated"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let mut put_view = |b: &BModeImage, stem: PathBuf| -> Result<()> {
            let sgrid = stem.with_extension("sgrid");
            let pgm = stem.with_extension("pgm");
            save_grid(&b.to_grid(), &sgrid)?;
            save_bmode_pgm(b, &pgm)?;
            written.push(sgrid);
            written.push(pgm);
            Ok(())
        };
        for (k, b) in self.ground_truth.iter().enumerate() {
            put_view(b, dir.join("ground_truth").join(format!("view_{k:03}")))?;
        }
        for (k, b) in self.resimulated.iter().enumerate() {
            put_view(b, dir.join("resimulated").join(format!("view_{k:03}")))?;
        }
        for (j, b) in self.inputs.iter().enumerate() {
            put_view(b, dir.join("inputs").join(format!("input_{j:03}")))?;
        }
        for (k, g) in self.maps.iter().enumerate() {
            let stem = if self.maps.len() == 1 { "map".to_string() } else { format!("map_{k:03}") };
            let path = dir.join("maps").join(&stem);
            save_grid(g, path.with_extension("sgrid"))?;
            save_grid_pgm(g, path.with_extension("pgm"))?;
            written.push(path.with_extension("sgrid"));
            written.push(path.with_extension("pgm"));
        }
        for (k, c) in self.convergence.iter().enumerate() {
            let name = if self.convergence.len() == 1 {
                "convergence.csv".to_string()
            } else {
                format!("convergence_{k:03}.csv")
            };
            std::fs::write(dir.join(&name), c.to_csv())?;
            written.push(dir.join(name));
        }
        self.report.write(dir, "report")?;
        written.push(dir.join("report.csv"));
        written.push(dir.join("report.json"));
        Ok(written)
    }

    /// Mean and max rows in a fixed-width table.
    pub fn summary_table(&self) -> String {
        let mean = self.report.mean();
        let max = self.report.max();
        let mut s = format!(
            "protocol {} over {} angles\n{:<6} {:>10} {:>10} {:>10} {:>12}\n",
            u8::from(self.protocol),
            self.angles_deg.len(),
            "",
            "SNR err",
            "MII err",
            "CNR err",
            "chi2"
        );
        for (label, r) in [("mean", mean), ("max", max)] {
            s.push_str(&format!(
                "{:<6} {:>9.2}% {:>9.2}% {:>9.2}% {:>12.4e}\n",
                label,
                r.snr_err,
                r.mii_err,
                r.cnr_err,
                r.chi2
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psf::make_psf_stack;

    fn small() -> (ImagingConfig, PsfStack, ExperimentParams) {
        let cfg = ImagingConfig {
            n_lines: 48,
            depth_mm: 12.0,
            ..ImagingConfig::default()
        };
        let psf = make_psf_stack(&cfg, 3).unwrap();
        let params = ExperimentParams {
            angles_deg: vec![0.0, 5.0, 10.0],
            inclusion_radius_mm: 3.0,
            phantom_side_mm: 20.0,
            ..ExperimentParams::default()
        };
        (cfg, psf, params)
    }

    #[test]
    fn angle_parsing() {
        assert_eq!(parse_angles("0..3").unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(parse_angles("0..30").unwrap().len(), 31);
        assert_eq!(parse_angles("-10, 0,10").unwrap(), vec![-10.0, 0.0, 10.0]);
        assert_eq!(parse_angles("2.5").unwrap(), vec![2.5]);
        for bad in ["", "3..1", "a..b", "1,,2", "x"] {
            assert!(parse_angles(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn protocol_and_backend_parsing() {
        assert_eq!("3".parse::<Protocol>().unwrap(), Protocol::ThreeView);
        assert!("4".parse::<Protocol>().is_err());
        assert_eq!("identity".parse::<Backend>().unwrap(), Backend::Identity);
        assert!("gan".parse::<Backend>().is_err());
        let p: ExperimentParams = serde_json::from_str(r#"{"protocol":1,"backend":"identity"}"#).unwrap();
        assert_eq!(p.protocol, Protocol::PerAngle);
        assert!(serde_json::from_str::<ExperimentParams>(r#"{"protocol":9}"#).is_err());
        assert!(serde_json::from_str::<ExperimentParams>(r#"{"colour":1}"#).is_err());
    }

    #[test]
    fn identity_backend_scores_zero() {
        let (cfg, psf, mut params) = small();
        for protocol in [Protocol::PerAngle, Protocol::SingleView] {
            params.protocol = protocol;
            params.backend = Backend::Identity;
            let out = run_experiment(&psf, &cfg, &params, &AdmmParams::default(), 3).unwrap();
            assert_eq!(out.report.rows.len(), 3);
            for r in &out.report.rows {
                assert_eq!((r.snr_err, r.mii_err, r.cnr_err, r.chi2), (0.0, 0.0, 0.0, 0.0));
            }
            assert!(out.maps.is_empty());
        }
    }

    #[test]
    fn predicted_backend_reads_grids() {
        let (cfg, psf, mut params) = small();
        let dir = tempfile::tempdir().unwrap();
        params.backend = Backend::Predicted;
        params.predicted_dir = Some(dir.path().to_path_buf());
        // Missing file is an i/o error.
        assert!(run_experiment(&psf, &cfg, &params, &AdmmParams::default(), 3).is_err());
        let grid = ScatterGrid::zeros_like(&cfg.geometry());
        let mut vals = grid.to_raster();
        vals.iter_mut().step_by(7).for_each(|v| *v = 0.5);
        let (grid, _) = ScatterGrid::from_raster_clamped(&cfg.geometry(), &vals);
        save_grid(&grid, dir.path().join("pred.sgrid")).unwrap();
        let out = run_experiment(&psf, &cfg, &params, &AdmmParams::default(), 3).unwrap();
        assert_eq!(out.maps.len(), 1);
        assert!(out.report.rows.iter().all(|r| r.chi2.is_finite()));
        let files = out.write(dir.path().join("out")).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        assert!(dir.path().join("out/report.csv").exists());
    }

    #[test]
    fn summary_lists_mean_and_max() {
        let (cfg, psf, mut params) = small();
        params.backend = Backend::Identity;
        let out = run_experiment(&psf, &cfg, &params, &AdmmParams::default(), 3).unwrap();
        let t = out.summary_table();
        assert!(t.contains("mean") && t.contains("max") && t.contains("protocol 2"));
    }
}
