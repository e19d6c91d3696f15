use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Geometry of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn same(dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation,
            dilation,
        }
    }

    pub const fn pointwise() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    pub const fn strided(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            dilation: 1,
        }
    }
}

/// Weight (`Cout×Cin×k×k`), optional bias (`Cout`) and geometry.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub weight: Var,
    pub bias: Option<Var>,
    pub spec: ConvSpec,
}

/// `(size + 2p − d(k − 1) − 1) / s + 1`, or an error when that is not a
/// positive integer.
pub fn conv_output_size(size: usize, kernel: usize, spec: ConvSpec) -> Result<usize> {
    if kernel == 0 || spec.stride == 0 || spec.dilation == 0 {
        return Err(Error::Shape(format!(
            "kernel {kernel}, stride {} and dilation {} must be positive",
            spec.stride, spec.dilation
        )));
    }
    let span = spec.dilation * (kernel - 1) + 1;
    let padded = size + 2 * spec.padding;
    if padded < span {
        return Err(Error::Shape(format!(
            "input {size} (padding {}) is smaller than the dilated kernel span {span}",
            spec.padding
        )));
    }
    let reach = padded - span;
    if !reach.is_multiple_of(spec.stride) {
        return Err(Error::Shape(format!(
            "input {size} with kernel {kernel}, padding {}, dilation {} and stride {} gives a non-integer output size",
            spec.padding, spec.dilation, spec.stride
        )));
    }
    Ok(reach / spec.stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.spec == ConvSpec::pointwise()
    }

    /// Source coordinate for output `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, size: usize) -> Option<usize> {
        let pos = (o * self.spec.stride + t * self.spec.dilation) as isize - self.spec.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        let Some(iy) = self.src(oy, ky, self.h) else {
                            line.fill(0.0);
                            continue;
                        };
                        let src = &plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            *v = self.src(ox, kx, self.w).map_or(0.0, |ix| src[ix]);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else {
                            continue;
                        };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = a·b + beta·c` for row-major `a` (m×k) and `b` (k×n), each
/// optionally read transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds views of the checked slices and
    // `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    /// Zero-padded 2D cross-correlation over `N×Cin×H×W` input.
    pub fn conv2d(&mut self, x: Var, p: ConvParams) -> Result<Var> {
        let (n, cin, h, w) = self.value(x).dims4()?;
        let wt = self.value(p.weight);
        let (cout, wcin, k, k2) = match wt.shape()[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(Error::Shape(format!("conv weight must be rank 4, got {:?}", wt.shape()))),
        };
        if k != k2 {
            return Err(Error::Shape(format!("conv kernel must be square, got {k}x{k2}")));
        }
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv expects {wcin} input channels, got {cin}"
            )));
        }
        if let Some(b) = p.bias {
            if self.value(b).shape() != [cout] {
                return Err(Error::Shape(format!(
                    "conv bias must have shape [{cout}], got {:?}",
                    self.value(b).shape()
                )));
            }
        }
        let geo = Geometry {
            cin,
            h,
            w,
            k,
            oh: conv_output_size(h, k, p.spec)?,
            ow: conv_output_size(w, k, p.spec)?,
            spec: p.spec,
        };
        let (rows, pos) = (geo.rows(), geo.positions());

        let xin = self.shared(x);
        let weight = self.shared(p.weight);
        let bias = p.bias.map(|b| self.shared(b));

        let mut out = vec![0.0; n * cout * pos];
        let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; rows * pos] };
        for b in 0..n {
            let xs = &xin.data()[b * cin * h * w..(b + 1) * cin * h * w];
            let ys = &mut out[b * cout * pos..(b + 1) * cout * pos];
            if let Some(bias) = &bias {
                for (co, chunk) in ys.chunks_mut(pos).enumerate() {
                    chunk.fill(bias.data()[co]);
                }
            }
            let src = if geo.is_pointwise() {
                xs
            } else {
                geo.im2col(xs, &mut cols);
                &cols
            };
            gemm(cout, rows, pos, weight.data(), false, src, false, 1.0, ys);
        }
        let out = Tensor::new(&[n, cout, geo.oh, geo.ow], out)?;

        let mut parents = vec![x, p.weight];
        parents.extend(p.bias);
        let need = [
            self.requires_grad(x),
            self.requires_grad(p.weight),
            p.bias.is_some_and(|b| self.requires_grad(b)),
        ];
        self.push("conv2d", out, &parents, move || {
            let has_bias = bias.is_some();
            Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut dx = need[0].then(|| vec![0.0; n * cin * h * w]);
                let mut dw = need[1].then(|| vec![0.0; cout * rows]);
                let mut db = need[2].then(|| vec![0.0; cout]);
                let mut cols = vec![0.0; rows * pos];
                for b in 0..n {
                    let gy = &gd[b * cout * pos..(b + 1) * cout * pos];
                    let xs = &xin.data()[b * cin * h * w..(b + 1) * cin * h * w];
                    if let Some(dw) = dw.as_mut() {
                        let src: &[f64] = if geo.is_pointwise() {
                            xs
                        } else {
                            geo.im2col(xs, &mut cols);
                            &cols
                        };
                        gemm(cout, pos, rows, gy, false, src, true, 1.0, dw);
                    }
                    if let Some(db) = db.as_mut() {
                        for (co, chunk) in gy.chunks(pos).enumerate() {
                            db[co] += chunk.iter().sum::<f64>();
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxs = &mut dx[b * cin * h * w..(b + 1) * cin * h * w];
                        if geo.is_pointwise() {
                            gemm(rows, cout, pos, weight.data(), true, gy, false, 1.0, dxs);
                        } else {
                            gemm(rows, cout, pos, weight.data(), true, gy, false, 0.0, &mut cols);
                            geo.col2im(&cols, dxs);
                        }
                    }
                }
                let mut grads = vec![
                    dx.map(|v| Tensor::new(&[n, cin, h, w], v).expect("shape")),
                    dw.map(|v| Tensor::new(&[cout, cin, k, k], v).expect("shape")),
                ];
                if has_bias {
                    grads.push(db.map(|v| Tensor::new(&[cout], v).expect("shape")));
                }
                grads
            })
        })
    }
}
