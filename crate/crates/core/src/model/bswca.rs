use super::params::{AttnLayer, Bound, Builder};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};
use crate::wavelet::Band;

/// Band-specific window cross-attention. Both streams are split into Haar
/// sub-bands; inside each band, RGB tokens query grayscale tokens through
/// that band's own projections, the result is added back to the RGB band,
/// and the bands are recombined.
#[derive(Debug, Clone)]
pub struct BswcaBlock {
    /// One parameter set per band, in `LL, HL, LH, HH` order.
    pub bands: [AttnLayer; 4],
    pub window: usize,
}

impl BswcaBlock {
    pub(crate) fn build(b: &mut Builder, name: &str, channels: usize, heads: usize, window: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "{name}: {channels} channels are not divisible by {heads} heads"
            )));
        }
        if window == 0 {
            return Err(Error::InvalidArgument("window size must be positive".into()));
        }
        Ok(Self {
            bands: Band::ALL.map(|band| b.attention(&format!("{name}.{}", band.as_str().to_lowercase()), channels, heads)),
            window,
        })
    }

    /// Window used on `h×w` sub-band maps: the configured size, shrunk to the
    /// band when the band is smaller.
    pub fn effective_window(&self, h: usize, w: usize) -> usize {
        self.window.min(h).min(w)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, rgb: Var, gray: Var) -> Result<Var> {
        let shape = tape.value(rgb).shape().to_vec();
        if tape.value(gray).shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "bswca: rgb {:?} vs gray {:?}",
                shape,
                tape.value(gray).shape()
            )));
        }
        let (n, c, h, w) = tape.value(rgb).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!("bswca needs even spatial dims, got {h}x{w}")));
        }
        let (bh, bw) = (h / 2, w / 2);
        let win = self.effective_window(bh, bw);
        if bh % win != 0 || bw % win != 0 {
            return Err(Error::Dimension(format!(
                "{bh}x{bw} sub-bands are not divisible by window {win}"
            )));
        }
        let rb = tape.haar_dwt(rgb)?;
        let gb = tape.haar_dwt(gray)?;
        let mut outs = Vec::with_capacity(4);
        for (i, layer) in self.bands.iter().enumerate() {
            let r = tape.slice_channels(rb, i * c, c)?;
            let g = tape.slice_channels(gb, i * c, c)?;
            let rt = tape.window_partition(r, win)?;
            let gt = tape.window_partition(g, win)?;
            let a = tape.cross_attention(rt, gt, layer.params(p))?;
            let a = tape.window_merge(a, n, bh, bw, win)?;
            outs.push(tape.add(r, a)?);
        }
        let cat = tape.concat_channels(&outs)?;
        tape.haar_idwt(cat)
    }
}
