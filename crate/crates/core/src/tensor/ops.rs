use std::rc::Rc;

use super::{same_shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let mut out = ta.clone();
        out.add_assign(tb);
        self.push("add", out, &[a, b], || {
            Box::new(|g: &Tensor| vec![Some(g.clone()), Some(g.clone())])
        })
    }

    /// Sum of several same-shape tensors, accumulated left to right.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::Shape("add_all of nothing".into()))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let input = self.shared(x);
        let mut out = (*input).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push("relu", out, &[x], move || {
            Box::new(move |g: &Tensor| {
                let mut gx = g.clone();
                for (d, &v) in gx.data_mut().iter_mut().zip(input.data()) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
                vec![Some(gx)]
            })
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = sigmoid(*v);
        }
        let saved = Rc::new(out.clone());
        self.push("sigmoid", out, &[x], move || {
            Box::new(move |g: &Tensor| {
                let mut gx = g.clone();
                for (d, &s) in gx.data_mut().iter_mut().zip(saved.data()) {
                    *d *= s * (1.0 - s);
                }
                vec![Some(gx)]
            })
        })
    }

    /// `Σ xᵢ·wᵢ` against a fixed weight tensor; reduces any op to a scalar
    /// for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let tx = self.value(x);
        same_shape("weighted_sum", tx, weights)?;
        let s: f64 = tx.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let w = weights.clone();
        self.push("weighted_sum", Tensor::scalar(s), &[x], move || {
            Box::new(move |g: &Tensor| {
                let k = g.item();
                let mut gx = w.clone();
                for v in gx.data_mut() {
                    *v *= k;
                }
                vec![Some(gx)]
            })
        })
    }

    /// Concatenates `N×Cᵢ×H×W` tensors along channels.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let (n, _, h, w) = self.value(xs[0]).dims4()?;
        let mut chans = Vec::with_capacity(xs.len());
        for &x in xs {
            let (xn, xc, xh, xw) = self.value(x).dims4()?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat_channels: {:?} vs {:?}",
                    self.value(xs[0]).shape(),
                    self.value(x).shape()
                )));
            }
            chans.push(xc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&x, &c) in xs.iter().zip(&chans) {
                let d = self.value(x).data();
                out.extend_from_slice(&d[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let out = Tensor::new(&[n, total, h, w], out)?;
        self.push("concat_channels", out, xs, move || {
            Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut grads: Vec<Vec<f64>> =
                    chans.iter().map(|c| Vec::with_capacity(n * c * hw)).collect();
                let mut off = 0;
                for _ in 0..n {
                    for (gi, &c) in grads.iter_mut().zip(&chans) {
                        gi.extend_from_slice(&gd[off..off + c * hw]);
                        off += c * hw;
                    }
                }
                grads
                    .into_iter()
                    .zip(&chans)
                    .map(|(v, &c)| Some(Tensor::new(&[n, c, h, w], v).expect("shape")))
                    .collect()
            })
        })
    }

    /// Channels `start..start + len` of an `N×C×H×W` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::Shape(format!(
                "slice_channels {start}..{} of {c} channels",
                start + len
            )));
        }
        let hw = h * w;
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            let base = (b * c + start) * hw;
            out.extend_from_slice(&d[base..base + len * hw]);
        }
        let out = Tensor::new(&[n, len, h, w], out)?;
        self.push("slice_channels", out, &[x], move || {
            Box::new(move |g: &Tensor| {
                let mut gx = Tensor::zeros(&[n, c, h, w]);
                let gd = g.data();
                for b in 0..n {
                    let base = (b * c + start) * hw;
                    gx.data_mut()[base..base + len * hw]
                        .copy_from_slice(&gd[b * len * hw..(b + 1) * len * hw]);
                }
                vec![Some(gx)]
            })
        })
    }

    pub fn upsample_nearest_2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (oh, ow) = (2 * h, 2 * w);
        let d = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let src = &d[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    dst[i * ow + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        self.push("upsample_nearest_2x", out, &[x], move || {
            Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut gx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let src = &gd[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for i in 0..oh {
                        for j in 0..ow {
                            dst[(i / 2) * w + j / 2] += src[i * ow + j];
                        }
                    }
                }
                vec![Some(Tensor::new(&[n, c, h, w], gx).expect("shape"))]
            })
        })
    }

    /// Bilinear resize with half-pixel centres (`align_corners = false`).
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::Shape("bilinear target must be non-empty".into()));
        }
        let rows = Rc::new(interp_taps(h, out_h));
        let cols = Rc::new(interp_taps(w, out_w));
        let d = self.value(x).data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for p in 0..n * c {
            let src = &d[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
                for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                    let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
                    let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
                    dst[i * out_w + j] = top * (1.0 - fr) + bot * fr;
                }
            }
        }
        let out = Tensor::new(&[n, c, out_h, out_w], out)?;
        self.push("upsample_bilinear", out, &[x], move || {
            Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut gx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let src = &gd[p * out_h * out_w..(p + 1) * out_h * out_w];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
                        for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                            let gv = src[i * out_w + j];
                            dst[r0 * w + c0] += gv * (1.0 - fr) * (1.0 - fc);
                            dst[r0 * w + c1] += gv * (1.0 - fr) * fc;
                            dst[r1 * w + c0] += gv * fr * (1.0 - fc);
                            dst[r1 * w + c1] += gv * fr * fc;
                        }
                    }
                }
                vec![Some(Tensor::new(&[n, c, h, w], gx).expect("shape"))]
            })
        })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Source taps `(lo, hi, frac)` for each output coordinate.
fn interp_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}
