use super::params::{Bound, Builder, ConvLayer, NormLayer};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tape, Var};

/// Pre-activation Res2Net block:
///
/// ```text
/// h  = conv_in(relu(norm_in(x)))          split into y1..ys
/// z1 = y1,  zi = conv3x3_i(yi + z(i-1))
/// out = x + conv_out(relu(norm_out(concat(z1..zs))))
/// ```
#[derive(Debug, Clone)]
pub struct Res2Block {
    pub norm_in: NormLayer,
    pub conv_in: ConvLayer,
    pub groups: Vec<ConvLayer>,
    pub norm_out: NormLayer,
    pub conv_out: ConvLayer,
    pub scale: usize,
}

impl Res2Block {
    pub(crate) fn build(b: &mut Builder, name: &str, channels: usize, scale: usize) -> Result<Self> {
        if scale == 0 || !channels.is_multiple_of(scale) {
            return Err(Error::InvalidArgument(format!(
                "{name}: {channels} channels are not divisible by scale {scale}"
            )));
        }
        let width = channels / scale;
        Ok(Self {
            norm_in: b.norm(&format!("{name}.norm_in"), channels),
            conv_in: b.conv(&format!("{name}.conv_in"), channels, channels, 1, ConvSpec::pointwise()),
            groups: (1..scale)
                .map(|i| b.conv(&format!("{name}.group{i}"), width, width, 3, ConvSpec::same(1)))
                .collect(),
            norm_out: b.norm(&format!("{name}.norm_out"), channels),
            conv_out: b.conv(&format!("{name}.conv_out"), channels, channels, 1, ConvSpec::pointwise()),
            scale,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let c = tape.value(x).dims4()?.1;
        if c % self.scale != 0 {
            return Err(Error::Shape(format!(
                "res2: {c} channels are not divisible by scale {}",
                self.scale
            )));
        }
        let width = c / self.scale;
        let a = self.norm_in.activate(tape, p, x)?;
        let h = self.conv_in.forward(tape, p, a)?;
        let mut zs = Vec::with_capacity(self.scale);
        for i in 0..self.scale {
            let y = if self.scale == 1 { h } else { tape.slice_channels(h, i * width, width)? };
            let z = match zs.last() {
                None => y,
                Some(&prev) => {
                    let s = tape.add(y, prev)?;
                    self.groups[i - 1].forward(tape, p, s)?
                }
            };
            zs.push(z);
        }
        let cat = if self.scale == 1 { zs[0] } else { tape.concat_channels(&zs)? };
        let a = self.norm_out.activate(tape, p, cat)?;
        let branch = self.conv_out.forward(tape, p, a)?;
        tape.add(x, branch)
    }
}
