use super::params::{Bound, Builder, ConvLayer};
use crate::error::Result;
use crate::tensor::{ConvSpec, Tape, Var};

/// Dilation rates of the three cascaded 3×3 convolutions.
pub const CDF_DILATIONS: [usize; 3] = [1, 2, 4];

/// Cascade dilated fusion:
///
/// ```text
/// h1 = relu(c1(x)),  h2 = relu(c2(x + h1)),  h3 = relu(c4(x + h1 + h2))
/// out = fuse(concat(x, h1, h2, h3))
/// ```
#[derive(Debug, Clone)]
pub struct CdfBlock {
    pub convs: [ConvLayer; 3],
    pub fuse: ConvLayer,
}

impl CdfBlock {
    pub(crate) fn build(b: &mut Builder, name: &str, channels: usize) -> Self {
        let convs = CDF_DILATIONS.map(|d| b.conv(&format!("{name}.d{d}"), channels, channels, 3, ConvSpec::same(d)));
        Self {
            convs,
            fuse: b.conv(&format!("{name}.fuse"), 4 * channels, channels, 1, ConvSpec::pointwise()),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let mut acc = x;
        let mut hs = Vec::with_capacity(3);
        for (i, conv) in self.convs.iter().enumerate() {
            let pre = conv.forward(tape, p, acc)?;
            let h = tape.relu(pre)?;
            hs.push(h);
            if i + 1 < self.convs.len() {
                acc = tape.add(acc, h)?;
            }
        }
        let cat = tape.concat_channels(&[x, hs[0], hs[1], hs[2]])?;
        self.fuse.forward(tape, p, cat)
    }
}

/// Receptive field along one axis of the last cascade stage.
pub fn cdf_receptive_field() -> usize {
    1 + 2 * CDF_DILATIONS.iter().sum::<usize>()
}
