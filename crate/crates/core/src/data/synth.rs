//! Synthetic low-contrast polyp images.
//!
//! Each sample is drawn from its own SplitMix64 stream seeded with
//! `seed + index`, in this order: background colour, illumination direction,
//! blob geometry (redrawn until the area is in range), then per-pixel noise.
//! Pixel values are quantized to 8 bits so a corpus written to PNG and read
//! back is identical to the in-memory one.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Sample, SplitSpec};
use crate::contrast::{BinaryMask, RgbImage, LUMA_WEIGHTS};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::wavelet::Matrix2D;

/// Accepted polyp area as a fraction of the image.
pub const AREA_RANGE: (f64, f64) = (0.04, 0.30);

const MAX_BLOB_ATTEMPTS: usize = 10_000;

/// How the polyp's colour differs from the background beyond the luma step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChromaMode {
    /// Gray background and polyp, one noise field shared by all channels.
    Achromatic,
    /// Same chroma as the background; every channel shifts by the luma step.
    Matched,
    /// Red rises and blue falls so that the blue channel shows no step at
    /// all, while luma still shifts by exactly the luma step.
    Opposed,
}

impl ChromaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ChromaMode::Achromatic => "achromatic",
            ChromaMode::Matched => "matched",
            ChromaMode::Opposed => "opposed",
        }
    }

    /// Per-channel polyp offset for a luma step `delta`.
    pub fn polyp_offset(self, delta: f64) -> [f64; 3] {
        match self {
            ChromaMode::Achromatic | ChromaMode::Matched => [delta; 3],
            ChromaMode::Opposed => {
                let [wr, _, wb] = LUMA_WEIGHTS;
                let kappa = delta * wb / wr;
                [delta + kappa, delta, delta - kappa * wr / wb]
            }
        }
    }
}

impl fmt::Display for ChromaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChromaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "achromatic" => Ok(ChromaMode::Achromatic),
            "matched" => Ok(ChromaMode::Matched),
            "opposed" => Ok(ChromaMode::Opposed),
            _ => Err(Error::InvalidArgument(format!(
                "unknown chroma mode '{s}' (expected achromatic, matched or opposed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    /// Side length of the square images.
    pub size: usize,
    pub luma_delta: f64,
    pub chroma_mode: ChromaMode,
    /// Peak-to-centre amplitude of the linear illumination ramp.
    pub illumination_gradient: f64,
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 50,
            size: 64,
            luma_delta: 0.08,
            chroma_mode: ChromaMode::Matched,
            illumination_gradient: 0.1,
            noise_sigma: 0.03,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(32) {
            return Err(Error::InvalidArgument(format!(
                "image size {} must be a positive multiple of 32",
                self.size
            )));
        }
        if self.count == 0 {
            return Err(Error::InvalidArgument("count must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.luma_delta) {
            return Err(Error::InvalidArgument(format!(
                "luma_delta {} must be in [0, 0.5)",
                self.luma_delta
            )));
        }
        for (name, v) in [
            ("illumination_gradient", self.illumination_gradient),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn draw_blob(rng: &mut SplitMix64, size: usize) -> Result<BinaryMask> {
    let s = size as f64;
    for _ in 0..MAX_BLOB_ATTEMPTS {
        let cy = rng.uniform(0.3, 0.7) * s;
        let cx = rng.uniform(0.3, 0.7) * s;
        let k = rng.range_inclusive(2, 6);
        let parts: Vec<Ellipse> = (0..k)
            .map(|_| {
                let oy = rng.uniform(-0.15, 0.15) * s;
                let ox = rng.uniform(-0.15, 0.15) * s;
                let a = rng.uniform(0.06, 0.2) * s;
                let b = rng.uniform(0.06, 0.2) * s;
                let t = rng.uniform(0.0, PI);
                Ellipse {
                    cy: cy + oy,
                    cx: cx + ox,
                    a,
                    b,
                    cos: t.cos(),
                    sin: t.sin(),
                }
            })
            .collect();
        let mask = BinaryMask::from_fn(size, size, |r, c| {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            parts.iter().any(|e| e.contains(y, x))
        });
        let f = mask.fraction();
        if f >= AREA_RANGE.0 && f <= AREA_RANGE.1 {
            return Ok(mask);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no blob with area in {AREA_RANGE:?} after {MAX_BLOB_ATTEMPTS} draws"
    )))
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Sample `index` of the corpus described by `cfg`.
pub fn synth_sample(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let n = cfg.size;
    let mut rng = SplitMix64::for_index(cfg.seed, index as u64);
    let base = match cfg.chroma_mode {
        ChromaMode::Achromatic => [rng.uniform(0.35, 0.55); 3],
        _ => [rng.uniform(0.55, 0.70), rng.uniform(0.30, 0.42), rng.uniform(0.25, 0.35)],
    };
    let theta = rng.uniform(0.0, 2.0 * PI);
    let (gc, gs) = (theta.cos(), theta.sin());
    let mask = draw_blob(&mut rng, n)?;
    let offset = cfg.chroma_mode.polyp_offset(cfg.luma_delta);
    let shared_noise = cfg.chroma_mode == ChromaMode::Achromatic;

    let mut planes = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            let ramp = ((c as f64 + 0.5) / n as f64 - 0.5) * gc + ((r as f64 + 0.5) / n as f64 - 0.5) * gs;
            let light = cfg.illumination_gradient * ramp;
            let inside = mask.get(r, c);
            let shared = if shared_noise { cfg.noise_sigma * rng.normal() } else { 0.0 };
            for (ch, plane) in planes.iter_mut().enumerate() {
                let noise = if shared_noise { shared } else { cfg.noise_sigma * rng.normal() };
                let polyp = if inside { offset[ch] } else { 0.0 };
                plane[i] = quantize(base[ch] + light + polyp + noise);
            }
        }
    }
    let [pr, pg, pb] = planes;
    let image = RgbImage::new(
        Matrix2D::new(n, n, pr)?,
        Matrix2D::new(n, n, pg)?,
        Matrix2D::new(n, n, pb)?,
    )?;
    Ok(Sample {
        id: format!("synth_{index:05}"),
        image,
        mask,
    })
}

/// Whole corpus, split with [`SplitSpec::default`] like a corpus loaded
/// from disk with default options.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let samples = (0..cfg.count)
        .map(|i| synth_sample(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let splits = SplitSpec::default().assign(samples.len())?;
    Ok(Dataset {
        samples,
        splits,
        excluded: Vec::new(),
    })
}

/// SHA-256 (hex) of a sample's 8-bit content: interleaved RGB bytes followed
/// by mask bytes (0 or 255), exactly as written to PNG.
pub fn sample_digest(s: &Sample) -> String {
    let mut h = Sha256::new();
    let rgb: Vec<u8> = s.image.to_interleaved().iter().map(|&v| to_u8(v)).collect();
    h.update(&rgb);
    let m: Vec<u8> = s.mask.as_slice().iter().map(|&v| v * 255).collect();
    h.update(&m);
    hex::encode(h.finalize())
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::to_grayscale;

    fn cfg(mode: ChromaMode) -> SynthConfig {
        SynthConfig {
            seed: 7,
            count: 6,
            chroma_mode: mode,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let a = synth_generate(&cfg(ChromaMode::Opposed)).unwrap();
        let b = synth_generate(&cfg(ChromaMode::Opposed)).unwrap();
        assert_eq!(a, b);
        // one sample does not depend on how many others are generated
        assert_eq!(synth_sample(&cfg(ChromaMode::Opposed), 4).unwrap(), a.samples[4]);
        let c = synth_generate(&SynthConfig { seed: 8, ..cfg(ChromaMode::Opposed) }).unwrap();
        assert_ne!(a.samples[0], c.samples[0]);
    }

    #[test]
    fn area_within_range() {
        for s in synth_generate(&SynthConfig { count: 40, ..cfg(ChromaMode::Matched) }).unwrap().samples {
            let f = s.mask.fraction();
            assert!((AREA_RANGE.0..=AREA_RANGE.1).contains(&f), "{f}");
        }
    }

    #[test]
    fn opposed_offset_keeps_the_luma_step_and_hides_blue() {
        let o = ChromaMode::Opposed.polyp_offset(0.08);
        let luma: f64 = o.iter().zip(LUMA_WEIGHTS).map(|(a, w)| a * w).sum();
        assert!((luma - 0.08).abs() < 1e-15);
        assert!(o[2].abs() < 1e-15);
        assert!(o[0] > 0.08);
    }

    #[test]
    fn achromatic_images_have_equal_planes() {
        let d = synth_generate(&cfg(ChromaMode::Achromatic)).unwrap();
        for s in &d.samples {
            assert_eq!(s.image.plane(0), s.image.plane(1));
            assert_eq!(s.image.plane(1), s.image.plane(2));
        }
    }

    #[test]
    fn luma_step_visible_in_gray() {
        let noiseless = SynthConfig {
            noise_sigma: 0.0,
            illumination_gradient: 0.0,
            ..cfg(ChromaMode::Opposed)
        };
        let s = synth_sample(&noiseless, 0).unwrap();
        let g = to_grayscale(&s.image);
        let (mut inside, mut outside) = (Vec::new(), Vec::new());
        for r in 0..64 {
            for c in 0..64 {
                if s.mask.get(r, c) { inside.push(g.get(r, c)) } else { outside.push(g.get(r, c)) }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // 8-bit quantization moves each channel by at most half a level
        assert!((mean(&inside) - mean(&outside) - 0.08).abs() < 2.0 / 255.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            SynthConfig { size: 48, ..SynthConfig::default() },
            SynthConfig { count: 0, ..SynthConfig::default() },
            SynthConfig { luma_delta: 0.5, ..SynthConfig::default() },
            SynthConfig { noise_sigma: -1.0, ..SynthConfig::default() },
        ] {
            assert!(synth_generate(&bad).is_err());
        }
    }
}
