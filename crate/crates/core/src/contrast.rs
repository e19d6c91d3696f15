//! Polyp/background contrast index over wavelet sub-bands, compared between
//! the luma plane and the individual colour channels.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::wavelet::{wavedec2, Band, Matrix2D};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_LEVELS: usize = 3;

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Three-plane colour image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    planes: [Matrix2D; 3],
}

impl RgbImage {
    /// Planes must share dimensions; values are clamped into `[0, 1]`.
    pub fn new(r: Matrix2D, g: Matrix2D, b: Matrix2D) -> Result<Self> {
        if r.dims() != g.dims() || r.dims() != b.dims() {
            return Err(Error::Dimension(format!(
                "colour planes disagree: {:?} {:?} {:?}",
                r.dims(),
                g.dims(),
                b.dims()
            )));
        }
        let mut planes = [r, g, b];
        for p in planes.iter_mut() {
            for v in p.as_mut_slice() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Ok(Self { planes })
    }

    /// Builds an image from interleaved `H×W×3` values.
    pub fn from_interleaved(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if values.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "{height}x{width}x3 image needs {} values, got {}",
                height * width * 3,
                values.len()
            )));
        }
        let plane = |c: usize| {
            Matrix2D::new(
                height,
                width,
                (0..height * width).map(|i| values[3 * i + c]).collect(),
            )
        };
        Self::new(plane(0)?, plane(1)?, plane(2)?)
    }

    pub fn achromatic(plane: Matrix2D) -> Self {
        Self::new(plane.clone(), plane.clone(), plane).expect("same dims")
    }

    pub fn height(&self) -> usize {
        self.planes[0].rows()
    }

    pub fn width(&self) -> usize {
        self.planes[0].cols()
    }

    pub fn plane(&self, channel: usize) -> &Matrix2D {
        &self.planes[channel]
    }

    pub fn planes(&self) -> &[Matrix2D; 3] {
        &self.planes
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        let n = self.height() * self.width();
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            for p in &self.planes {
                out.push(p.as_slice()[i]);
            }
        }
        out
    }
}

/// Binary polyp mask, 1 = polyp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Self::new(height, width, data).expect("valid mask")
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self::from_fn(height, width, |_, _| value)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.data.len() as f64
    }

    /// True when both labels are present.
    pub fn is_mixed(&self) -> bool {
        let ones = self.count_ones();
        ones > 0 && ones < self.data.len()
    }

    pub fn inverted(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1 - v).collect(),
        }
    }
}

/// Which plane a contrast value was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Modality {
    #[serde(rename = "GRAY")]
    Gray,
    R,
    G,
    B,
    #[serde(rename = "RGB_MEAN")]
    RgbMean,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Gray,
        Modality::R,
        Modality::G,
        Modality::B,
        Modality::RgbMean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Gray => "GRAY",
            Modality::R => "R",
            Modality::G => "G",
            Modality::B => "B",
            Modality::RgbMean => "RGB_MEAN",
        }
    }
}

/// Luma plane `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(img: &RgbImage) -> Matrix2D {
    let [r, g, b] = img.planes();
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let data = r
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .zip(b.as_slice())
        .map(|((r, g), b)| (wr * r + wg * g + wb * b).clamp(0.0, 1.0))
        .collect();
    Matrix2D::new(img.height(), img.width(), data).expect("finite luma")
}

/// Mean |coefficient| inside and outside the mask, with region sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMeans {
    pub polyp: f64,
    pub background: f64,
    pub n_polyp: usize,
    pub n_background: usize,
}

impl RegionMeans {
    pub fn is_degenerate(&self) -> bool {
        self.n_polyp == 0 || self.n_background == 0
    }
}

pub fn region_means(coeffs: &Matrix2D, mask: &BinaryMask) -> Result<RegionMeans> {
    if coeffs.dims() != mask.dims() {
        return Err(Error::Dimension(format!(
            "coefficients {:?} vs mask {:?}",
            coeffs.dims(),
            mask.dims()
        )));
    }
    let (mut sp, mut sb) = (0.0, 0.0);
    let (mut np, mut nb) = (0usize, 0usize);
    for (v, &m) in coeffs.as_slice().iter().zip(mask.as_slice()) {
        if m == 1 {
            sp += v.abs();
            np += 1;
        } else {
            sb += v.abs();
            nb += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(RegionMeans {
        polyp: mean(sp, np),
        background: mean(sb, nb),
        n_polyp: np,
        n_background: nb,
    })
}

fn ratio(m: &RegionMeans, epsilon: f64) -> f64 {
    if m.is_degenerate() {
        return 0.0;
    }
    (m.polyp - m.background).abs() / (m.polyp + m.background + epsilon)
}

/// `|μp − μb| / (μp + μb + ε)` over absolute coefficients. Returns 0 when
/// either region is empty.
pub fn contrast_index(coeffs: &Matrix2D, mask: &BinaryMask, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(ratio(&region_means(coeffs, mask)?, epsilon))
}

/// Block-majority downsampling by `2^level`; ties go to polyp.
pub fn downsample_mask(mask: &BinaryMask, level: usize) -> Result<BinaryMask> {
    let f = 1usize
        .checked_shl(level as u32)
        .filter(|f| *f > 0)
        .ok_or_else(|| Error::Dimension(format!("level {level} too large")))?;
    let (h, w) = mask.dims();
    if h % f != 0 || w % f != 0 {
        return Err(Error::Dimension(format!(
            "{h}x{w} mask is not divisible by 2^{level}"
        )));
    }
    let (oh, ow) = (h / f, w / f);
    let mut data = Vec::with_capacity(oh * ow);
    for br in 0..oh {
        for bc in 0..ow {
            let mut ones = 0usize;
            for r in br * f..(br + 1) * f {
                for c in bc * f..(bc + 1) * f {
                    ones += mask.data[r * w + c] as usize;
                }
            }
            data.push((2 * ones >= f * f) as u8);
        }
    }
    BinaryMask::new(oh, ow, data)
}

/// One row of a contrast report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastEntry {
    pub level: usize,
    pub band: Band,
    pub modality: Modality,
    pub ci: f64,
    pub n_samples: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    pub entries: Vec<ContrastEntry>,
    pub epsilon: f64,
    pub levels: usize,
}

/// The `(level, band)` keys analysed for a given depth, in report order.
pub fn band_keys(levels: usize) -> Vec<(usize, Band)> {
    let mut keys = Vec::with_capacity(3 * levels + 1);
    for level in 1..=levels {
        for band in Band::DETAIL {
            keys.push((level, band));
        }
    }
    keys.push((levels, Band::LL));
    keys
}

impl ContrastReport {
    pub fn get(&self, level: usize, band: Band, modality: Modality) -> Option<&ContrastEntry> {
        self.entries
            .iter()
            .find(|e| e.level == level && e.band == band && e.modality == modality)
    }

    pub fn ci(&self, level: usize, band: Band, modality: Modality) -> Option<f64> {
        self.get(level, band, modality).map(|e| e.ci)
    }

    /// CSV with header `level,band,modality,ci,n_samples,n_skipped`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,band,modality,ci,n_samples,n_skipped\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.level,
                e.band,
                e.modality.as_str(),
                format_sig9(e.ci),
                e.n_samples,
                e.n_skipped
            );
        }
        out
    }

    /// Compares GRAY against RGB_MEAN in every detail band.
    pub fn verdict(&self, tolerance: f64) -> Verdict {
        let mut v = Verdict {
            levels: self.levels,
            total: 0,
            gray_higher: 0,
            equal: 0,
            rgb_higher: 0,
        };
        for (level, band) in band_keys(self.levels) {
            if band == Band::LL {
                continue;
            }
            let (Some(g), Some(m)) = (
                self.ci(level, band, Modality::Gray),
                self.ci(level, band, Modality::RgbMean),
            ) else {
                continue;
            };
            v.total += 1;
            if (g - m).abs() <= tolerance {
                v.equal += 1;
            } else if g > m {
                v.gray_higher += 1;
            } else {
                v.rgb_higher += 1;
            }
        }
        v
    }
}

/// Outcome of the GRAY vs RGB_MEAN comparison over detail bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub levels: usize,
    pub total: usize,
    pub gray_higher: usize,
    pub equal: usize,
    pub rgb_higher: usize,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.equal == self.total {
            write!(
                f,
                "GRAY = RGB_MEAN within tolerance in {}/{} detail bands ({} levels)",
                self.equal, self.total, self.levels
            )
        } else {
            write!(
                f,
                "GRAY > RGB_MEAN in {}/{} detail bands ({} levels)",
                self.gray_higher, self.total, self.levels
            )
        }
    }
}

/// `%.9g`-style formatting.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Per-key CI values for one pair, `None` where the downsampled mask has
/// lost one of the regions.
struct PairValues {
    values: Vec<[Option<f64>; 5]>,
}

fn pair_values(img: &RgbImage, mask: &BinaryMask, levels: usize, epsilon: f64) -> Result<PairValues> {
    if img.height() != mask.height() || img.width() != mask.width() {
        return Err(Error::Dimension(format!(
            "image {}x{} vs mask {}x{}",
            img.height(),
            img.width(),
            mask.height(),
            mask.width()
        )));
    }
    let gray = to_grayscale(img);
    let planes = [&gray, img.plane(0), img.plane(1), img.plane(2)];
    let pyramids = planes
        .iter()
        .map(|p| wavedec2(p, levels))
        .collect::<Result<Vec<_>>>()?;
    let masks = (1..=levels)
        .map(|l| downsample_mask(mask, l))
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    for (level, band) in band_keys(levels) {
        let m = &masks[level - 1];
        let mut row = [None; 5];
        for (k, pyr) in pyramids.iter().enumerate() {
            let coeffs = match band {
                Band::LL => &pyr.approx,
                b => pyr.details[level - 1].band(b).expect("detail band"),
            };
            let means = region_means(coeffs, m)?;
            if !means.is_degenerate() {
                row[k] = Some(ratio(&means, epsilon));
            }
        }
        if let (Some(r), Some(g), Some(b)) = (row[1], row[2], row[3]) {
            row[4] = Some((r + g + b) / 3.0);
        }
        values.push(row);
    }
    Ok(PairValues { values })
}

fn check_args(levels: usize, epsilon: f64) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be at least 1".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(())
}

/// Contrast report for a single image/mask pair.
pub fn analyze_pair(
    img: &RgbImage,
    mask: &BinaryMask,
    levels: usize,
    epsilon: f64,
) -> Result<ContrastReport> {
    analyze_corpus_inner(std::iter::once(("sample", img, mask)), levels, epsilon, true)
}

/// Mean of per-image contrast values over a corpus. Samples whose mask is
/// all-polyp or all-background are skipped and counted in `n_skipped`.
pub fn analyze_corpus<'a, I, S>(samples: I, levels: usize, epsilon: f64) -> Result<ContrastReport>
where
    I: IntoIterator<Item = (S, &'a RgbImage, &'a BinaryMask)>,
    S: AsRef<str>,
{
    analyze_corpus_inner(samples, levels, epsilon, false)
}

fn analyze_corpus_inner<'a, I, S>(
    samples: I,
    levels: usize,
    epsilon: f64,
    strict: bool,
) -> Result<ContrastReport>
where
    I: IntoIterator<Item = (S, &'a RgbImage, &'a BinaryMask)>,
    S: AsRef<str>,
{
    check_args(levels, epsilon)?;
    let keys = band_keys(levels);
    let mut sums = vec![[0.0f64; 5]; keys.len()];
    let mut counts = vec![[0usize; 5]; keys.len()];
    let mut n_samples = 0usize;
    let mut n_degenerate = 0usize;
    let mut last_degenerate = None;

    for (id, img, mask) in samples {
        n_samples += 1;
        if !mask.is_mixed() {
            let reason = if mask.count_ones() == 0 {
                "mask has no polyp pixels"
            } else {
                "mask has no background pixels"
            };
            let err = Error::DegenerateMask {
                sample: id.as_ref().to_string(),
                reason: reason.into(),
            };
            if strict {
                return Err(err);
            }
            n_degenerate += 1;
            last_degenerate = Some(err);
            continue;
        }
        let pv = pair_values(img, mask, levels, epsilon)?;
        for (k, row) in pv.values.iter().enumerate() {
            for (m, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    sums[k][m] += v;
                    counts[k][m] += 1;
                }
            }
        }
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    if n_degenerate == n_samples {
        return Err(last_degenerate.expect("at least one degenerate sample"));
    }

    let mut entries = Vec::with_capacity(keys.len() * 5);
    for (k, &(level, band)) in keys.iter().enumerate() {
        for (m, modality) in Modality::ALL.into_iter().enumerate() {
            let n = counts[k][m];
            entries.push(ContrastEntry {
                level,
                band,
                modality,
                ci: if n == 0 { 0.0 } else { sums[k][m] / n as f64 },
                n_samples,
                n_skipped: n_samples - n,
            });
        }
    }
    Ok(ContrastReport {
        entries,
        epsilon,
        levels,
    })
}
