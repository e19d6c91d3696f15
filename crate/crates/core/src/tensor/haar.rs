use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::wavelet::{haar_forward_plane, haar_inverse_plane};

/// Applies the per-plane Haar analysis to every channel. Output channels are
/// band-major: `[LL(C), HL(C), LH(C), HH(C)]`.
fn forward(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "haar_dwt needs even spatial dims, got {h}x{w}"
        )));
    }
    let (hh_, hw_) = (h / 2, w / 2);
    let q = hh_ * hw_;
    let mut out = vec![0.0; n * 4 * c * q];
    for b in 0..n {
        for ch in 0..c {
            let src = &x.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            let base = b * 4 * c * q;
            let mut bands = out[base..base + 4 * c * q].chunks_mut(c * q);
            let (ll, hl, lh, hh) = (
                bands.next().unwrap(),
                bands.next().unwrap(),
                bands.next().unwrap(),
                bands.next().unwrap(),
            );
            let r = ch * q..(ch + 1) * q;
            haar_forward_plane(
                src,
                h,
                w,
                &mut ll[r.clone()],
                &mut hl[r.clone()],
                &mut lh[r.clone()],
                &mut hh[r],
            );
        }
    }
    Tensor::new(&[n, 4 * c, hh_, hw_], out)
}

fn inverse(x: &Tensor) -> Result<Tensor> {
    let (n, c4, hh_, hw_) = x.dims4()?;
    if c4 % 4 != 0 {
        return Err(Error::Dimension(format!(
            "haar_idwt needs a multiple of 4 channels, got {c4}"
        )));
    }
    let c = c4 / 4;
    let (h, w, q) = (2 * hh_, 2 * hw_, hh_ * hw_);
    let mut out = vec![0.0; n * c * h * w];
    for b in 0..n {
        let base = b * 4 * c * q;
        let band = |k: usize, ch: usize| {
            let s = base + k * c * q + ch * q;
            &x.data()[s..s + q]
        };
        for ch in 0..c {
            let dst = &mut out[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            haar_inverse_plane(band(0, ch), band(1, ch), band(2, ch), band(3, ch), hh_, hw_, dst);
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

impl Tape {
    /// One-level Haar analysis of a feature map, `N×C×H×W → N×4C×H/2×W/2`.
    /// The transform is orthogonal, so its backward pass is the synthesis.
    pub fn haar_dwt(&mut self, x: Var) -> Result<Var> {
        let out = forward(self.value(x))?;
        self.push("haar_dwt", out, &[x], || {
            Box::new(|g: &Tensor| vec![Some(inverse(g).expect("band layout"))])
        })
    }

    /// Inverse of [`Tape::haar_dwt`].
    pub fn haar_idwt(&mut self, x: Var) -> Result<Var> {
        let out = inverse(self.value(x))?;
        self.push("haar_idwt", out, &[x], || {
            Box::new(|g: &Tensor| vec![Some(forward(g).expect("even dims"))])
        })
    }
}
