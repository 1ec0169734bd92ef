//! Paired {B-mode view(s), scatter map} training data.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{simulate_bmode, Scene};
use crate::io::{load_grid, save_grid};
use crate::model::{BModeImage, ImagingConfig, ScatterGrid};
use crate::phantom::{
    generate_cloud, rasterize_cloud, sample_amplitudes, GridSpec, IntensityImage,
    DEFAULT_DENSITY_PER_MM2, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN,
};
use crate::psf::PsfStack;
use crate::rng::{derive_seed, stream};

/// Input arity of the downstream network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Scatgan1,
    Scatgan3,
}

impl Mode {
    /// Probe rotations of the input views.
    pub fn angles_deg(self) -> &'static [f64] {
        match self {
            Mode::Scatgan1 => &[0.0],
            Mode::Scatgan3 => &[-10.0, 0.0, 10.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Scatgan1 => "scatgan1",
            Mode::Scatgan3 => "scatgan3",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scatgan1" => Ok(Mode::Scatgan1),
            "scatgan3" => Ok(Mode::Scatgan3),
            _ => Err(Error::param("mode", format!("`{s}` is not scatgan1 or scatgan3"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetParams {
    pub density_per_mm2: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            density_per_mm2: DEFAULT_DENSITY_PER_MM2,
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub seed: u64,
    pub angles_deg: Vec<f64>,
    pub mode: Mode,
    pub source: String,
    /// SHA-256 of the imaging configuration's JSON form.
    pub config: String,
}

#[derive(Clone, Debug)]
pub struct DatasetPair {
    pub inputs: Vec<BModeImage>,
    pub target: ScatterGrid,
    pub meta: PairMeta,
}

/// Hex SHA-256 of `value` serialized as JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Simulates the input view(s) of `image` and rasterizes the scatterers to
/// the B-mode lattice as the target. The cloud fills the image extent, with
/// elevational positions uniform over the slab thickness.
pub fn make_training_pair(
    image: &IntensityImage,
    source: &str,
    psf: &PsfStack,
    config: &ImagingConfig,
    mode: Mode,
    params: &DatasetParams,
    rng_seed: u64,
) -> Result<DatasetPair> {
    let domain = image.extent().with_slab(config.slab_thickness_mm / 2.0)?;
    let cloud = generate_cloud(&domain, params.density_per_mm2, derive_seed(rng_seed, stream::CLOUD))?;
    let sampled = sample_amplitudes(
        &cloud,
        image,
        params.sigma_min,
        params.sigma_max,
        derive_seed(rng_seed, stream::AMPLITUDE),
    )?;
    let cloud = sampled.cloud;
    let noise = derive_seed(rng_seed, stream::NOISE);
    let inputs = mode
        .angles_deg()
        .iter()
        .enumerate()
        .map(|(k, &a)| simulate_bmode(Scene::Cloud(&cloud), psf, config, a, 0.0, derive_seed(noise, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let target = rasterize_cloud(&cloud, &GridSpec::from_raster(&config.geometry()))?.grid;
    Ok(DatasetPair {
        inputs,
        target,
        meta: PairMeta {
            seed: rng_seed,
            angles_deg: mode.angles_deg().to_vec(),
            mode,
            source: source.to_string(),
            config: config_hash(config),
        },
    })
}

/// Writes `input_XXX.sgrid`, `target.sgrid` and `meta.json` into `dir`.
pub fn write_pair(pair: &DatasetPair, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (k, b) in pair.inputs.iter().enumerate() {
        save_grid(&b.to_grid(), dir.join(format!("input_{k:03}.sgrid")))?;
    }
    save_grid(&pair.target, dir.join("target.sgrid"))?;
    let meta = serde_json::to_string_pretty(&pair.meta).map_err(|e| Error::format("meta", e.to_string()))?;
    std::fs::write(dir.join("meta.json"), meta + "\n")?;
    Ok(())
}

/// Reads a pair directory back (inputs as grids, as stored).
pub fn read_pair(dir: impl AsRef<Path>) -> Result<(Vec<ScatterGrid>, ScatterGrid, PairMeta)> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: PairMeta = serde_json::from_str(&text).map_err(|e| Error::format("meta.json", e.to_string()))?;
    let inputs = (0..meta.angles_deg.len())
        .map(|k| load_grid(dir.join(format!("input_{k:03}.sgrid"))))
        .collect::<Result<Vec<_>>>()?;
    let target = load_grid(dir.join("target.sgrid"))?;
    Ok((inputs, target, meta))
}

/// Generates one pair per image into `out/pair_XXXXX`, in parallel. Pair
/// `k` uses seed `derive_seed(master_seed, k)`, so the result does not
/// depend on scheduling.
pub fn generate_dataset(
    images: &[(String, IntensityImage)],
    psf: &PsfStack,
    config: &ImagingConfig,
    mode: Mode,
    params: &DatasetParams,
    master_seed: u64,
    out: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out = out.as_ref();
    images
        .par_iter()
        .enumerate()
        .map(|(k, (source, image))| {
            let seed = derive_seed(master_seed, stream::PAIR_BASE * (k as u64 + 1));
            let pair = make_training_pair(image, source, psf, config, mode, params, seed)?;
            let dir = out.join(format!("pair_{k:05}"));
            write_pair(&pair, &dir)?;
            Ok(dir)
        })
        .collect()
}
