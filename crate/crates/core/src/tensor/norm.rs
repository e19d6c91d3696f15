use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Group count used by the model: 8, or `C` when `C < 8`.
pub fn norm_groups(channels: usize) -> usize {
    if channels < 8 {
        channels
    } else {
        8
    }
}

impl Tape {
    /// Group normalization with per-channel affine `gamma`, `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::Shape(format!("{groups} groups do not divide {c} channels")));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::Shape(format!(
                    "group_norm {name} must have shape [{c}], got {:?}",
                    self.value(v).shape()
                )));
            }
        }
        let per = c / groups * h * w;
        let hw = h * w;
        let xd = self.value(x).data();
        let g = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data();

        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; n * groups];
        for (gi, chunk) in xd.chunks(per).enumerate() {
            let mean = chunk.iter().sum::<f64>() / per as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let is = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            inv_std[gi] = is;
            for (o, v) in xhat[gi * per..(gi + 1) * per].iter_mut().zip(chunk) {
                *o = (v - mean) * is;
            }
        }
        let mut out = vec![0.0; xd.len()];
        for (p, (o, xh)) in out.chunks_mut(hw).zip(xhat.chunks(hw)).enumerate() {
            let ch = p % c;
            for (ov, xv) in o.iter_mut().zip(xh) {
                *ov = g[ch] * xv + bt[ch];
            }
        }
        let out = Tensor::new(&[n, c, h, w], out)?;
        self.push("group_norm", out, &[x, gamma, beta], move || {
            Box::new(move |dy: &Tensor| {
                let dyd = dy.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dxhat = vec![0.0; dyd.len()];
                for (p, ((dyc, xhc), dxc)) in dyd
                    .chunks(hw)
                    .zip(xhat.chunks(hw))
                    .zip(dxhat.chunks_mut(hw))
                    .enumerate()
                {
                    let ch = p % c;
                    for ((d, xh), dx) in dyc.iter().zip(xhc).zip(dxc.iter_mut()) {
                        dgamma[ch] += d * xh;
                        dbeta[ch] += d;
                        *dx = d * g[ch];
                    }
                }
                let mut dx = vec![0.0; dyd.len()];
                let m = per as f64;
                for gi in 0..n * groups {
                    let range = gi * per..(gi + 1) * per;
                    let (dxh, xh) = (&dxhat[range.clone()], &xhat[range.clone()]);
                    let s1: f64 = dxh.iter().sum();
                    let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let is = inv_std[gi];
                    for ((o, a), b) in dx[range].iter_mut().zip(dxh).zip(xh) {
                        *o = is / m * (m * a - s1 - b * s2);
                    }
                }
                vec![
                    Some(Tensor::new(&[n, c, h, w], dx).expect("shape")),
                    Some(Tensor::new(&[c], dgamma).expect("shape")),
                    Some(Tensor::new(&[c], dbeta).expect("shape")),
                ]
            })
        })
    }
}
