//! Orthonormal 2D Haar wavelet transform.
//!
//! Sub-bands follow a horizontal-letter-first naming: `hl` is high-pass
//! along the horizontal axis (columns) and low-pass along the vertical axis
//! (rows), `lh` the reverse. For a 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2    hl = (a - b + c - d) / 2
//! lh = (a + b - c - d) / 2    hh = (a - b - c + d) / 2
//! ```
//!
//! which is the separable filter bank `(x, y) -> (x ± y) / √2` applied along
//! rows and then columns, with the two `1/√2` factors folded into one `1/2`
//! so small integer inputs transform exactly.

use crate::error::{Error, Result};

/// Dense row-major real matrix. Row index is vertical (y), column index
/// horizontal (x).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "Matrix2D::new",
                index,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.data.fill(value);
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), cols, data).expect("valid matrix")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Sum of squared entries.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix2D) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Matrix2D {
        Matrix2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }
}

/// Sub-band identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Band {
    LL,
    HL,
    LH,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::HL, Band::LH, Band::HH];
    pub const DETAIL: [Band; 3] = [Band::HL, Band::LH, Band::HH];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::LL => "LL",
            Band::HL => "HL",
            Band::LH => "LH",
            Band::HH => "HH",
        }
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    pub ll: Matrix2D,
    pub hl: Matrix2D,
    pub lh: Matrix2D,
    pub hh: Matrix2D,
}

impl SubbandSet {
    pub fn band(&self, band: Band) -> &Matrix2D {
        match band {
            Band::LL => &self.ll,
            Band::HL => &self.hl,
            Band::LH => &self.lh,
            Band::HH => &self.hh,
        }
    }

    pub fn energy(&self) -> f64 {
        self.ll.energy() + self.hl.energy() + self.lh.energy() + self.hh.energy()
    }
}

/// Detail bands of one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    pub hl: Matrix2D,
    pub lh: Matrix2D,
    pub hh: Matrix2D,
}

impl DetailBands {
    pub fn band(&self, band: Band) -> Option<&Matrix2D> {
        match band {
            Band::LL => None,
            Band::HL => Some(&self.hl),
            Band::LH => Some(&self.lh),
            Band::HH => Some(&self.hh),
        }
    }
}

/// Multi-level decomposition. `details[0]` is the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub details: Vec<DetailBands>,
    pub approx: Matrix2D,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }
}

/// Analysis kernel on a raw `rows × cols` plane. Outputs are
/// `(rows/2) × (cols/2)` each. Callers check evenness.
pub(crate) fn haar_forward_plane(
    src: &[f64],
    rows: usize,
    cols: usize,
    ll: &mut [f64],
    hl: &mut [f64],
    lh: &mut [f64],
    hh: &mut [f64],
) {
    let (hr, hc) = (rows / 2, cols / 2);
    for i in 0..hr {
        let top = &src[2 * i * cols..(2 * i + 1) * cols];
        let bot = &src[(2 * i + 1) * cols..(2 * i + 2) * cols];
        for j in 0..hc {
            let (a, b) = (top[2 * j], top[2 * j + 1]);
            let (c, d) = (bot[2 * j], bot[2 * j + 1]);
            // horizontal pass
            let (top_lo, top_hi) = (a + b, a - b);
            let (bot_lo, bot_hi) = (c + d, c - d);
            // vertical pass
            let o = i * hc + j;
            ll[o] = (top_lo + bot_lo) * 0.5;
            hl[o] = (top_hi + bot_hi) * 0.5;
            lh[o] = (top_lo - bot_lo) * 0.5;
            hh[o] = (top_hi - bot_hi) * 0.5;
        }
    }
}

/// Synthesis kernel; exact inverse (and adjoint) of [`haar_forward_plane`].
pub(crate) fn haar_inverse_plane(
    ll: &[f64],
    hl: &[f64],
    lh: &[f64],
    hh: &[f64],
    hr: usize,
    hc: usize,
    dst: &mut [f64],
) {
    let cols = 2 * hc;
    for i in 0..hr {
        for j in 0..hc {
            let o = i * hc + j;
            let (s, h, v, d) = (ll[o], hl[o], lh[o], hh[o]);
            let top_lo = s + v;
            let bot_lo = s - v;
            let top_hi = h + d;
            let bot_hi = h - d;
            dst[2 * i * cols + 2 * j] = (top_lo + top_hi) * 0.5;
            dst[2 * i * cols + 2 * j + 1] = (top_lo - top_hi) * 0.5;
            dst[(2 * i + 1) * cols + 2 * j] = (bot_lo + bot_hi) * 0.5;
            dst[(2 * i + 1) * cols + 2 * j + 1] = (bot_lo - bot_hi) * 0.5;
        }
    }
}

/// Single-level analysis. Rejects odd dimensions; no padding is applied.
pub fn dwt2(input: &Matrix2D) -> Result<SubbandSet> {
    let (rows, cols) = input.dims();
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::Dimension(format!(
            "dwt2 needs even dimensions, got {rows}x{cols}"
        )));
    }
    let (hr, hc) = (rows / 2, cols / 2);
    let mut ll = Matrix2D::zeros(hr, hc);
    let mut hl = Matrix2D::zeros(hr, hc);
    let mut lh = Matrix2D::zeros(hr, hc);
    let mut hh = Matrix2D::zeros(hr, hc);
    haar_forward_plane(
        input.as_slice(),
        rows,
        cols,
        ll.as_mut_slice(),
        hl.as_mut_slice(),
        lh.as_mut_slice(),
        hh.as_mut_slice(),
    );
    Ok(SubbandSet { ll, hl, lh, hh })
}

pub fn idwt2(bands: &SubbandSet) -> Result<Matrix2D> {
    let dims = bands.ll.dims();
    for (name, m) in [("hl", &bands.hl), ("lh", &bands.lh), ("hh", &bands.hh)] {
        if m.dims() != dims {
            return Err(Error::Dimension(format!(
                "band {name} is {}x{}, ll is {}x{}",
                m.rows(),
                m.cols(),
                dims.0,
                dims.1
            )));
        }
    }
    let (hr, hc) = dims;
    let mut out = Matrix2D::zeros(2 * hr, 2 * hc);
    haar_inverse_plane(
        bands.ll.as_slice(),
        bands.hl.as_slice(),
        bands.lh.as_slice(),
        bands.hh.as_slice(),
        hr,
        hc,
        out.as_mut_slice(),
    );
    Ok(out)
}

/// Multi-level analysis, recursing on the approximation band.
pub fn wavedec2(input: &Matrix2D, levels: usize) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(Error::Dimension("levels must be at least 1".into()));
    }
    let (rows, cols) = input.dims();
    let block = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if block == 0 || rows % block != 0 || cols % block != 0 {
        return Err(Error::Dimension(format!(
            "{rows}x{cols} input cannot be decomposed to {levels} levels"
        )));
    }
    let mut details = Vec::with_capacity(levels);
    let mut approx = input.clone();
    for _ in 0..levels {
        let set = dwt2(&approx)?;
        details.push(DetailBands {
            hl: set.hl,
            lh: set.lh,
            hh: set.hh,
        });
        approx = set.ll;
    }
    Ok(WaveletPyramid { details, approx })
}

/// Inverse of [`wavedec2`].
pub fn waverec2(pyramid: &WaveletPyramid) -> Result<Matrix2D> {
    let mut approx = pyramid.approx.clone();
    for d in pyramid.details.iter().rev() {
        approx = idwt2(&SubbandSet {
            ll: approx,
            hl: d.hl.clone(),
            lh: d.lh.clone(),
            hh: d.hh.clone(),
        })?;
    }
    Ok(approx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix2D {
        let mut s = seed;
        Matrix2D::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn constant_block_has_no_detail() {
        let c = 0.37;
        let s = dwt2(&Matrix2D::filled(2, 2, c)).unwrap();
        assert!((s.ll.get(0, 0) - 2.0 * c).abs() < 1e-15);
        assert_eq!(s.hl.get(0, 0), 0.0);
        assert_eq!(s.lh.get(0, 0), 0.0);
        assert_eq!(s.hh.get(0, 0), 0.0);
    }

    #[test]
    fn hand_computed_two_by_two() {
        let s = dwt2(&Matrix2D::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(s.ll.get(0, 0), 5.0);
        assert_eq!(s.hl.get(0, 0), -1.0);
        assert_eq!(s.lh.get(0, 0), -2.0);
        assert_eq!(s.hh.get(0, 0), 0.0);

        let back = idwt2(&s).unwrap();
        assert_eq!(back, Matrix2D::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    }

    #[test]
    fn inverse_of_constant_case() {
        let c = 1.25;
        let bands = SubbandSet {
            ll: Matrix2D::filled(1, 1, 2.0 * c),
            hl: Matrix2D::zeros(1, 1),
            lh: Matrix2D::zeros(1, 1),
            hh: Matrix2D::zeros(1, 1),
        };
        assert_eq!(idwt2(&bands).unwrap(), Matrix2D::filled(2, 2, c));
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert!(matches!(
            dwt2(&Matrix2D::zeros(3, 4)),
            Err(Error::Dimension(_))
        ));
        assert!(dwt2(&Matrix2D::zeros(4, 5)).is_err());
    }

    #[test]
    fn mismatched_bands_rejected() {
        let bands = SubbandSet {
            ll: Matrix2D::zeros(2, 2),
            hl: Matrix2D::zeros(2, 2),
            lh: Matrix2D::zeros(2, 1),
            hh: Matrix2D::zeros(2, 2),
        };
        assert!(matches!(idwt2(&bands), Err(Error::Dimension(_))));
    }

    #[test]
    fn energy_and_reconstruction_random() {
        let x = lcg_matrix(64, 64, 11);
        let s = dwt2(&x).unwrap();
        let rel = (s.energy() - x.energy()).abs() / x.energy();
        assert!(rel <= 1e-9, "energy rel err {rel}");
        assert!(idwt2(&s).unwrap().max_abs_diff(&x) <= 1e-6);
    }

    #[test]
    fn horizontal_only_signal_has_no_vertical_detail() {
        let x = Matrix2D::from_fn(8, 8, |_, c| (c as f64 * 0.7).sin());
        let s = dwt2(&x).unwrap();
        assert!(s.lh.as_slice().iter().all(|v| v.abs() <= 1e-12));
        assert!(s.hh.as_slice().iter().all(|v| v.abs() <= 1e-12));
        assert!(s.hl.as_slice().iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn single_level_pyramid_matches_dwt2() {
        let x = lcg_matrix(8, 8, 3);
        let p = wavedec2(&x, 1).unwrap();
        let s = dwt2(&x).unwrap();
        assert_eq!(p.approx, s.ll);
        assert_eq!(p.details[0].hl, s.hl);
        assert_eq!(p.details[0].lh, s.lh);
        assert_eq!(p.details[0].hh, s.hh);
    }

    #[test]
    fn constant_pyramid() {
        let c = 0.5;
        let p = wavedec2(&Matrix2D::filled(8, 8, c), 3).unwrap();
        assert_eq!(p.levels(), 3);
        assert_eq!(p.approx.dims(), (1, 1));
        assert!((p.approx.get(0, 0) - 8.0 * c).abs() < 1e-12);
        for d in &p.details {
            for m in [&d.hl, &d.lh, &d.hh] {
                assert!(m.as_slice().iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn pyramid_round_trip() {
        let x = lcg_matrix(32, 32, 5);
        let p = wavedec2(&x, 2).unwrap();
        assert_eq!(p.details[0].hl.dims(), (16, 16));
        assert_eq!(p.details[1].hl.dims(), (8, 8));
        assert!(waverec2(&p).unwrap().max_abs_diff(&x) <= 1e-6);
    }

    #[test]
    fn too_many_levels_rejected() {
        assert!(wavedec2(&Matrix2D::zeros(8, 8), 4).is_err());
        assert!(wavedec2(&Matrix2D::zeros(12, 8), 3).is_err());
        assert!(wavedec2(&Matrix2D::zeros(8, 8), 0).is_err());
    }
}
