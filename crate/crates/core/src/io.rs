//! Binary file formats.
//!
//! `IMG1` and `SGM1` share one layout: 4 magic bytes, a little-endian
//! `u32` header length, a UTF-8 header of `key=value` lines, then the
//! raster as little-endian IEEE-754 32-bit values, row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{FanGeometry, ScanMode};
use crate::image::Image;
use crate::sinogram::Sinogram;

const IMG_MAGIC: &[u8; 4] = b"IMG1";
const SGM_MAGIC: &[u8; 4] = b"SGM1";

fn encode(magic: &[u8; 4], header: &str, values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn decode<'a>(path: &Path, bytes: &'a [u8], magic: &[u8; 4]) -> Result<(BTreeMap<String, String>, &'a [u8])> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!("missing {} magic", String::from_utf8_lossy(magic)),
        ));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + hlen {
        return Err(Error::format(path, "truncated header".to_string()));
    }
    let header = std::str::from_utf8(&bytes[8..8 + hlen])
        .map_err(|_| Error::format(path, "header is not UTF-8".to_string()))?;
    let mut keys = BTreeMap::new();
    for line in header.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("bad header line {line:?}")))?;
        keys.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((keys, &bytes[8 + hlen..]))
}

fn parse<T: std::str::FromStr>(path: &Path, keys: &BTreeMap<String, String>, key: &str) -> Result<T> {
    keys.get(key)
        .ok_or_else(|| Error::format(path, format!("missing header key {key}")))?
        .parse::<T>()
        .map_err(|_| Error::format(path, format!("unparsable header key {key}")))
}

fn read_values(path: &Path, raw: &[u8], expect: usize) -> Result<Vec<f64>> {
    if raw.len() != expect * 4 {
        return Err(Error::format(
            path,
            format!("payload holds {} bytes, expected {}", raw.len(), expect * 4),
        ));
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::format(path, "non-finite raster value".to_string()));
    }
    Ok(values)
}

pub fn image_bytes(img: &Image) -> Vec<u8> {
    let header = format!(
        "width={}\nheight={}\npixel_size={}\n",
        img.width, img.height, img.pixel_size
    );
    encode(IMG_MAGIC, &header, img.data.iter().cloned())
}

pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image_bytes(img)).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (keys, raw) = decode(path, &bytes, IMG_MAGIC)?;
    let width: usize = parse(path, &keys, "width")?;
    let height: usize = parse(path, &keys, "height")?;
    let pixel_size: f64 = parse(path, &keys, "pixel_size")?;
    let data = read_values(path, raw, width * height)?;
    Image::new(width, height, pixel_size, data)
}

pub fn sinogram_bytes(s: &Sinogram) -> Vec<u8> {
    let g = &s.geometry;
    let header = format!(
        "num_views={}\nnum_detectors={}\ndetector_spacing={}\nsource_radius={}\nmode={}\n",
        g.num_views,
        g.num_detectors,
        g.detector_spacing,
        g.source_radius,
        g.mode.as_str()
    );
    encode(SGM_MAGIC, &header, s.data.iter().cloned())
}

pub fn write_sinogram(path: impl AsRef<Path>, s: &Sinogram) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, sinogram_bytes(s)).map_err(|e| Error::io(path, e))
}

pub fn read_sinogram(path: impl AsRef<Path>) -> Result<Sinogram> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (keys, raw) = decode(path, &bytes, SGM_MAGIC)?;
    let num_views: usize = parse(path, &keys, "num_views")?;
    let num_detectors: usize = parse(path, &keys, "num_detectors")?;
    let detector_spacing: f64 = parse(path, &keys, "detector_spacing")?;
    let source_radius: f64 = parse(path, &keys, "source_radius")?;
    let mode = ScanMode::parse(&parse::<String>(path, &keys, "mode")?)?;
    let geom = FanGeometry {
        num_views,
        num_detectors,
        detector_spacing,
        source_radius,
        mode,
    };
    // Parallel geometries store 0 for the unused source radius; keep the
    // validation that still applies.
    geom.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let data = read_values(path, raw, num_views * num_detectors)?;
    Sinogram::new(geom, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn image_round_trip() {
        let dir = tempdir();
        let img = Image::new(4, 3, 0.5, (0..12).map(|k| k as f64 * 0.25).collect()).unwrap();
        let path = dir.join("a.img1");
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.width, 4);
        assert_eq!(back.height, 3);
        assert_eq!(back.pixel_size, 0.5);
        assert_eq!(back.data, img.data);
    }

    #[test]
    fn sinogram_round_trip_both_modes() {
        let dir = tempdir();
        for geom in [
            FanGeometry::parallel(6, 5).unwrap(),
            FanGeometry::exact_fan(6, 5, 1, 2.0).unwrap(),
        ] {
            let s = Sinogram::new(geom, (0..30).map(|k| k as f64).collect()).unwrap();
            let path = dir.join("b.sgm1");
            write_sinogram(&path, &s).unwrap();
            let back = read_sinogram(&path).unwrap();
            assert_eq!(back.geometry, s.geometry);
            assert_eq!(back.data, s.data);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempdir();
        let path = dir.join("bad.img1");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(read_image(&path).is_err());
        let img = Image::zeros(8);
        let mut bytes = image_bytes(&img);
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_image(&path).is_err());
        assert!(read_image(dir.join("missing.img1")).is_err());
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "ldct-io-test-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    proptest! {
        #[test]
        fn round_trip_preserves_f32_values(values in proptest::collection::vec(-1e6f32..1e6f32, 12)) {
            let dir = tempdir();
            let img = Image::new(4, 3, 0.125, values.iter().map(|v| *v as f64).collect()).unwrap();
            let path = dir.join(format!("p{}.img1", values[0].to_bits()));
            write_image(&path, &img).unwrap();
            let back = read_image(&path).unwrap();
            prop_assert_eq!(back.data, img.data);
        }
    }
}
