use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::{sample_digest, to_u8, SynthConfig};
use super::{Dataset, Sample, Split, SplitSpec};
use crate::contrast::{BinaryMask, RgbImage};
use crate::error::{Error, Result};

/// Mask pixels at or above this 8-bit level are polyp.
pub const MASK_THRESHOLD: u8 = 128;

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> = img.to_interleaved().iter().map(|&v| to_u8(v)).collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let bytes: Vec<u8> = mask.as_slice().iter().map(|&v| v * 255).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::PathNotFound(path.to_path_buf()));
    }
    Ok(image::open(path)?)
}

/// 8-bit colour image scaled to `[0, 1]`.
pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let values: Vec<f64> = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    RgbImage::from_interleaved(h as usize, w as usize, &values)
}

/// Mask image thresholded at 128 on its 8-bit luma.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| (v >= MASK_THRESHOLD) as u8).collect();
    BinaryMask::new(h as usize, w as usize, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub polyp_fraction: f64,
    pub sha256: String,
}

/// `manifest.json` of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub split: SplitSpec,
    /// SHA-256 over the concatenated per-sample digests, in id order.
    pub corpus_sha256: String,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn build(cfg: &SynthConfig, split: &SplitSpec, data: &Dataset) -> Self {
        let samples: Vec<ManifestEntry> = data
            .samples
            .iter()
            .zip(&data.splits)
            .map(|(s, &split)| ManifestEntry {
                id: s.id.clone(),
                split,
                polyp_fraction: s.mask.fraction(),
                sha256: sample_digest(s),
            })
            .collect();
        let mut h = Sha256::new();
        for e in &samples {
            h.update(e.sha256.as_bytes());
        }
        Self {
            config: *cfg,
            split: *split,
            corpus_sha256: hex::encode(h.finalize()),
            samples,
        }
    }
}

/// Writes `images/<id>.png`, `masks/<id>.png` and `manifest.json` under
/// `dir`, returning the manifest.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig, split: &SplitSpec, data: &Dataset) -> Result<Manifest> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&masks)?;
    for s in &data.samples {
        write_rgb_png(&images.join(format!("{}.png", s.id)), &s.image)?;
        write_mask_png(&masks.join(format!("{}.png", s.id)), &s.mask)?;
    }
    let manifest = Manifest::build(cfg, split, data);
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Reads `dir/images/*.png` with masks paired by stem from `dir/masks`.
/// Samples whose mask is all background or all polyp are reported on
/// stderr and left out; their ids are listed in [`Dataset::excluded`].
pub fn load_dataset(dir: &Path, spec: &SplitSpec) -> Result<Dataset> {
    spec.validate()?;
    let images = dir.join("images");
    let masks = dir.join("masks");
    for d in [dir, &images, &masks] {
        if !d.is_dir() {
            return Err(Error::PathNotFound(d.to_path_buf()));
        }
    }
    let stems = png_stems(&images)?;
    if stems.is_empty() {
        return Err(Error::NoSamples(dir.to_path_buf()));
    }
    let mut samples = Vec::with_capacity(stems.len());
    let mut excluded = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (id, path) in stems {
        let mask_path = masks.join(format!("{id}.png"));
        if !mask_path.is_file() {
            return Err(Error::MissingMask {
                image: id,
                expected: mask_path,
            });
        }
        let image = read_rgb_png(&path)?;
        let mask = read_mask_png(&mask_path)?;
        let d = (image.height(), image.width());
        if mask.dims() != d {
            return Err(Error::Dimension(format!(
                "{id}: image is {}x{} but mask is {}x{}",
                d.0,
                d.1,
                mask.height(),
                mask.width()
            )));
        }
        if *dims.get_or_insert(d) != d {
            return Err(Error::Dimension(format!(
                "{id}: image is {}x{}, earlier samples are {:?}",
                d.0, d.1, dims
            )));
        }
        if !mask.is_mixed() {
            eprintln!("warning: excluding {id}: mask has a single class");
            excluded.push(id);
            continue;
        }
        samples.push(Sample { id, image, mask });
    }
    if samples.is_empty() {
        return Err(Error::NoSamples(dir.to_path_buf()));
    }
    let splits = spec.assign(samples.len())?;
    Ok(Dataset {
        samples,
        splits,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, ChromaMode};

    #[test]
    fn corpus_round_trips_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            seed: 3,
            count: 5,
            chroma_mode: ChromaMode::Opposed,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let manifest = write_corpus(dir.path(), &cfg, &SplitSpec::default(), &data).unwrap();
        let spec = SplitSpec::default();
        let back = load_dataset(dir.path(), &spec).unwrap();
        assert_eq!(back.samples, data.samples);
        assert_eq!(back.splits, data.splits);
        for (e, s) in manifest.samples.iter().zip(&back.samples) {
            assert_eq!(e.sha256, sample_digest(s));
        }
    }

    #[test]
    fn empty_directory_has_no_samples() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::create_dir_all(dir.path().join("masks")).unwrap();
        let err = load_dataset(dir.path(), &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, Error::NoSamples(_)));
        assert!(err.to_string().contains("no samples found"));
    }

    #[test]
    fn missing_mask_and_missing_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { count: 2, ..SynthConfig::default() };
        write_corpus(dir.path(), &cfg, &SplitSpec::default(), &synth_generate(&cfg).unwrap()).unwrap();
        fs::remove_file(dir.path().join("masks/synth_00001.png")).unwrap();
        assert!(matches!(
            load_dataset(dir.path(), &SplitSpec::default()),
            Err(Error::MissingMask { ref image, .. }) if image == "synth_00001"
        ));
        fs::remove_dir_all(dir.path().join("masks")).unwrap();
        match load_dataset(dir.path(), &SplitSpec::default()) {
            Err(Error::PathNotFound(p)) => assert!(p.ends_with("masks")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn degenerate_masks_are_excluded_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { count: 3, ..SynthConfig::default() };
        write_corpus(dir.path(), &cfg, &SplitSpec::default(), &synth_generate(&cfg).unwrap()).unwrap();
        write_mask_png(&dir.path().join("masks/synth_00002.png"), &BinaryMask::filled(64, 64, false)).unwrap();
        let d = load_dataset(dir.path(), &SplitSpec::default()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.excluded, vec!["synth_00002".to_string()]);
    }

    #[test]
    fn mask_threshold_is_128() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        GrayImage::from_raw(3, 1, vec![127, 128, 255]).unwrap().save(&p).unwrap();
        assert_eq!(read_mask_png(&p).unwrap().as_slice(), &[0, 1, 1]);
    }

    #[test]
    fn size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { count: 1, ..SynthConfig::default() };
        write_corpus(dir.path(), &cfg, &SplitSpec::default(), &synth_generate(&cfg).unwrap()).unwrap();
        write_mask_png(&dir.path().join("masks/synth_00000.png"), &BinaryMask::filled(32, 32, true)).unwrap();
        assert!(matches!(load_dataset(dir.path(), &SplitSpec::default()), Err(Error::Dimension(_))));
    }
}
