//! Dataset generation and evaluation.
//!
//! A dataset is a directory of quadruples per sample — clean sinogram
//! `s_nd`, noisy sinogram `s_ld`, clean raster `i_nd`, noisy FBP
//! reconstruction `i_ld` — plus a `manifest.txt` of `key=value` lines
//! recording geometry, dose, seeds and file paths. Generation is fully
//! deterministic: the same arguments reproduce byte-identical trees.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbp::{fbp, FilterKind};
use crate::geometry::FanGeometry;
use crate::image::Image;
use crate::io;
use crate::metrics::{sample_metrics, MetricReport};
use crate::noise::{insert_low_dose_noise, DoseConfig};
use crate::phantom::{analytic_sinogram, make_phantom, rasterize, Complexity};
use crate::rng::splitmix64;
use crate::sinogram::Sinogram;

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub count: usize,
    pub geometry: FanGeometry,
    pub width: usize,
    pub dose: DoseConfig,
    pub seed: u64,
    pub complexity: Complexity,
}

/// One generated sample, in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub s_nd: Sinogram,
    pub s_ld: Sinogram,
    pub i_nd: Image,
    pub i_ld: Image,
}

/// Generate one sample. Phantom and noise seeds are derived from the
/// dataset seed and the sample index.
pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Result<Sample> {
    let phantom_seed = splitmix64(spec.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        | 1; // never the fixed preset
    let phantom = make_phantom(phantom_seed, spec.complexity);
    let i_nd = rasterize(&phantom, spec.width)?;
    let s_nd = analytic_sinogram(&phantom, &spec.geometry)?;
    let noise_cfg = DoseConfig {
        seed: splitmix64(spec.dose.seed ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)),
        ..spec.dose
    };
    let s_ld = insert_low_dose_noise(&s_nd, &noise_cfg)?;
    let i_ld = fbp(&s_ld, FilterKind::Ramp, spec.width)?;
    Ok(Sample {
        s_nd,
        s_ld,
        i_nd,
        i_ld,
    })
}

fn sample_paths(index: usize) -> [String; 4] {
    [
        format!("sample_{index:04}_s_nd.sgm1"),
        format!("sample_{index:04}_s_ld.sgm1"),
        format!("sample_{index:04}_i_nd.img1"),
        format!("sample_{index:04}_i_ld.img1"),
    ]
}

/// Generate `spec.count` samples under `dir` and write the manifest.
pub fn gen_dataset(dir: impl AsRef<Path>, spec: &DatasetSpec) -> Result<()> {
    if spec.count == 0 {
        return Err(Error::domain("dataset count must be >= 1"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..spec.count)
        .into_par_iter()
        .try_for_each(|index| -> Result<()> {
            let sample = generate_sample(spec, index)?;
            let [p_snd, p_sld, p_ind, p_ild] = sample_paths(index);
            io::write_sinogram(dir.join(p_snd), &sample.s_nd)?;
            io::write_sinogram(dir.join(p_sld), &sample.s_ld)?;
            io::write_image(dir.join(p_ind), &sample.i_nd)?;
            io::write_image(dir.join(p_ild), &sample.i_ld)?;
            Ok(())
        })?;

    let g = &spec.geometry;
    let mut manifest = String::new();
    manifest.push_str(&format!("count={}\n", spec.count));
    manifest.push_str(&format!("seed={}\n", spec.seed));
    manifest.push_str(&format!("dose={}\n", spec.dose.dose_fraction));
    manifest.push_str(&format!("incident_photons={}\n", spec.dose.incident_photons));
    manifest.push_str(&format!("electronic_noise={}\n", spec.dose.electronic_noise));
    manifest.push_str(&format!("noise_seed={}\n", spec.dose.seed));
    manifest.push_str(&format!("width={}\n", spec.width));
    manifest.push_str(&format!("num_views={}\n", g.num_views));
    manifest.push_str(&format!("num_detectors={}\n", g.num_detectors));
    manifest.push_str(&format!("detector_spacing={}\n", g.detector_spacing));
    manifest.push_str(&format!("source_radius={}\n", g.source_radius));
    manifest.push_str(&format!("mode={}\n", g.mode.as_str()));
    for index in 0..spec.count {
        let [p_snd, p_sld, p_ind, p_ild] = sample_paths(index);
        manifest.push_str(&format!("sample.{index}.s_nd={p_snd}\n"));
        manifest.push_str(&format!("sample.{index}.s_ld={p_sld}\n"));
        manifest.push_str(&format!("sample.{index}.i_nd={p_ind}\n"));
        manifest.push_str(&format!("sample.{index}.i_ld={p_ild}\n"));
    }
    let mpath = dir.join("manifest.txt");
    fs::write(&mpath, manifest).map_err(|e| Error::io(mpath, e))?;
    Ok(())
}

/// Parse a `key=value` manifest.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = dir.as_ref().join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(&path, format!("bad manifest line {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Load every sample quadruple listed in the manifest under `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let count: usize = manifest
        .get("count")
        .ok_or_else(|| Error::format(dir.join("manifest.txt"), "missing count".to_string()))?
        .parse()
        .map_err(|_| Error::format(dir.join("manifest.txt"), "bad count".to_string()))?;
    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let get = |suffix: &str| -> Result<PathBuf> {
            manifest
                .get(&format!("sample.{index}.{suffix}"))
                .map(|p| dir.join(p))
                .ok_or_else(|| {
                    Error::format(
                        dir.join("manifest.txt"),
                        format!("missing sample.{index}.{suffix}"),
                    )
                })
        };
        samples.push(Sample {
            s_nd: io::read_sinogram(get("s_nd")?)?,
            s_ld: io::read_sinogram(get("s_ld")?)?,
            i_nd: io::read_image(get("i_nd")?)?,
            i_ld: io::read_image(get("i_ld")?)?,
        });
    }
    Ok(samples)
}

/// Pair `.img1`/`.sgm1` files by name between two directories and compute
/// per-sample metrics against the reference. Returns the report and the
/// list of reference files with no prediction counterpart.
pub fn eval_dirs(pred_dir: impl AsRef<Path>, ref_dir: impl AsRef<Path>) -> Result<(MetricReport, Vec<String>)> {
    let pred_dir = pred_dir.as_ref();
    let ref_dir = ref_dir.as_ref();
    let mut names: Vec<String> = fs::read_dir(ref_dir)
        .map_err(|e| Error::io(ref_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".img1") || n.ends_with(".sgm1"))
        .collect();
    names.sort();
    let mut report = MetricReport::default();
    let mut missing = Vec::new();
    for name in names {
        let pred_path = pred_dir.join(&name);
        if !pred_path.exists() {
            missing.push(name);
            continue;
        }
        let (pred, reference, w, h) = if name.ends_with(".img1") {
            let p = io::read_image(&pred_path)?;
            let r = io::read_image(ref_dir.join(&name))?;
            let (w, h) = (r.width, r.height);
            (p.data, r.data, w, h)
        } else {
            let p = io::read_sinogram(&pred_path)?;
            let r = io::read_sinogram(ref_dir.join(&name))?;
            let (w, h) = (r.num_detectors(), r.num_views());
            (p.data, r.data, w, h)
        };
        report.push(name, sample_metrics(&pred, &reference, w, h)?);
    }
    Ok((report, missing))
}
