use super::conv::gemm;
use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Projection matrices (`C×C` each, applied to row-vector tokens) and head
/// count for one cross-attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub heads: usize,
}

struct Dims {
    batch: usize,
    tq: usize,
    tk: usize,
    c: usize,
    heads: usize,
}

impl Dims {
    fn head_dim(&self) -> usize {
        self.c / self.heads
    }
}

/// Row-wise softmax of scaled scores for every `(window, head)`. Layout of
/// the result: `[batch][head][tq][tk]`.
fn probabilities(q: &[f64], k: &[f64], d: &Dims) -> Vec<f64> {
    let hd = d.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut a = vec![0.0; d.batch * d.heads * d.tq * d.tk];
    for b in 0..d.batch {
        for h in 0..d.heads {
            let block = &mut a[((b * d.heads + h) * d.tq) * d.tk..((b * d.heads + h + 1) * d.tq) * d.tk];
            for i in 0..d.tq {
                let qi = &q[(b * d.tq + i) * d.c + h * hd..][..hd];
                let row = &mut block[i * d.tk..(i + 1) * d.tk];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &k[(b * d.tk + j) * d.c + h * hd..][..hd];
                    *r = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    sum += *r;
                }
                for r in row.iter_mut() {
                    *r /= sum;
                }
            }
        }
    }
    a
}

fn check_shapes(tape: &Tape, q: Var, kv: Var, p: &AttentionParams) -> Result<Dims> {
    let (batch, tq, c) = tape.value(q).dims3()?;
    let (kb, tk, kc) = tape.value(kv).dims3()?;
    if kb != batch || kc != c {
        return Err(Error::Shape(format!(
            "cross_attention: query {:?} vs key/value {:?}",
            tape.value(q).shape(),
            tape.value(kv).shape()
        )));
    }
    if p.heads == 0 || c % p.heads != 0 {
        return Err(Error::Shape(format!(
            "{} heads do not divide {c} channels",
            p.heads
        )));
    }
    for (name, w) in [("wq", p.wq), ("wk", p.wk), ("wv", p.wv), ("wo", p.wo)] {
        if tape.value(w).shape() != [c, c] {
            return Err(Error::Shape(format!(
                "{name} must be {c}x{c}, got {:?}",
                tape.value(w).shape()
            )));
        }
    }
    Ok(Dims {
        batch,
        tq,
        tk,
        c,
        heads: p.heads,
    })
}

fn project(x: &[f64], rows: usize, c: usize, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * c];
    gemm(rows, c, c, x, false, w, false, 0.0, &mut out);
    out
}

/// Attention probabilities of a block, `[batch][head][tq][tk]`, for
/// inspection and tests.
pub fn attention_probabilities(tape: &Tape, q: Var, kv: Var, p: &AttentionParams) -> Result<Vec<f64>> {
    let d = check_shapes(tape, q, kv, p)?;
    let qp = project(tape.value(q).data(), d.batch * d.tq, d.c, tape.value(p.wq).data());
    let kp = project(tape.value(kv).data(), d.batch * d.tk, d.c, tape.value(p.wk).data());
    Ok(probabilities(&qp, &kp, &d))
}

impl Tape {
    /// Multi-head attention with queries from `q` and keys/values from
    /// `kv`: per head `softmax(QKᵀ/√d)·V`, heads concatenated and projected
    /// by `wo`. Output has the shape of `q`.
    pub fn cross_attention(&mut self, q: Var, kv: Var, p: AttentionParams) -> Result<Var> {
        let d = check_shapes(self, q, kv, &p)?;
        let (rq, rk, c, hd) = (d.batch * d.tq, d.batch * d.tk, d.c, d.head_dim());

        let qin = self.shared(q);
        let kvin = self.shared(kv);
        let wq = self.shared(p.wq);
        let wk = self.shared(p.wk);
        let wv = self.shared(p.wv);
        let wo = self.shared(p.wo);

        let qp = project(qin.data(), rq, c, wq.data());
        let kp = project(kvin.data(), rk, c, wk.data());
        let vp = project(kvin.data(), rk, c, wv.data());
        let a = probabilities(&qp, &kp, &d);

        let mut mixed = vec![0.0; rq * c];
        for b in 0..d.batch {
            for h in 0..d.heads {
                let ab = &a[((b * d.heads + h) * d.tq) * d.tk..][..d.tq * d.tk];
                for i in 0..d.tq {
                    let orow = &mut mixed[(b * d.tq + i) * c + h * hd..][..hd];
                    for j in 0..d.tk {
                        let wgt = ab[i * d.tk + j];
                        let vrow = &vp[(b * d.tk + j) * c + h * hd..][..hd];
                        for (o, v) in orow.iter_mut().zip(vrow) {
                            *o += wgt * v;
                        }
                    }
                }
            }
        }
        let out = project(&mixed, rq, c, wo.data());
        let out = Tensor::new(&[d.batch, d.tq, c], out)?;

        self.push(
            "cross_attention",
            out,
            &[q, kv, p.wq, p.wk, p.wv, p.wo],
            move || {
                Box::new(move |g: &Tensor| {
                    let gd = g.data();
                    let scale = 1.0 / (hd as f64).sqrt();
                    // through the output projection
                    let mut dmixed = vec![0.0; rq * c];
                    gemm(rq, c, c, gd, false, wo.data(), true, 0.0, &mut dmixed);
                    let mut dwo = vec![0.0; c * c];
                    gemm(c, rq, c, &mixed, true, gd, false, 0.0, &mut dwo);

                    let mut dqp = vec![0.0; rq * c];
                    let mut dkp = vec![0.0; rk * c];
                    let mut dvp = vec![0.0; rk * c];
                    let mut da = vec![0.0; d.tk];
                    for b in 0..d.batch {
                        for h in 0..d.heads {
                            let ab = &a[((b * d.heads + h) * d.tq) * d.tk..][..d.tq * d.tk];
                            for i in 0..d.tq {
                                let dorow = &dmixed[(b * d.tq + i) * c + h * hd..][..hd];
                                let arow = &ab[i * d.tk..(i + 1) * d.tk];
                                for j in 0..d.tk {
                                    let vrow = &vp[(b * d.tk + j) * c + h * hd..][..hd];
                                    da[j] = dorow.iter().zip(vrow).map(|(x, y)| x * y).sum();
                                    let dvrow = &mut dvp[(b * d.tk + j) * c + h * hd..][..hd];
                                    for (dv, o) in dvrow.iter_mut().zip(dorow) {
                                        *dv += arow[j] * o;
                                    }
                                }
                                let dot: f64 = arow.iter().zip(&da).map(|(x, y)| x * y).sum();
                                let qrow = &qp[(b * d.tq + i) * c + h * hd..][..hd];
                                for j in 0..d.tk {
                                    let ds = arow[j] * (da[j] - dot) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    let krow = &kp[(b * d.tk + j) * c + h * hd..][..hd];
                                    let dqrow = &mut dqp[(b * d.tq + i) * c + h * hd..][..hd];
                                    for (dq, k) in dqrow.iter_mut().zip(krow) {
                                        *dq += ds * k;
                                    }
                                    let dkrow = &mut dkp[(b * d.tk + j) * c + h * hd..][..hd];
                                    for (dk, qv) in dkrow.iter_mut().zip(qrow) {
                                        *dk += ds * qv;
                                    }
                                }
                            }
                        }
                    }

                    let mut dq = vec![0.0; rq * c];
                    gemm(rq, c, c, &dqp, false, wq.data(), true, 0.0, &mut dq);
                    let mut dkv = vec![0.0; rk * c];
                    gemm(rk, c, c, &dkp, false, wk.data(), true, 0.0, &mut dkv);
                    gemm(rk, c, c, &dvp, false, wv.data(), true, 1.0, &mut dkv);
                    let mut dwq = vec![0.0; c * c];
                    gemm(c, rq, c, qin.data(), true, &dqp, false, 0.0, &mut dwq);
                    let mut dwk = vec![0.0; c * c];
                    gemm(c, rk, c, kvin.data(), true, &dkp, false, 0.0, &mut dwk);
                    let mut dwv = vec![0.0; c * c];
                    gemm(c, rk, c, kvin.data(), true, &dvp, false, 0.0, &mut dwv);

                    let mat = |v: Vec<f64>| Some(Tensor::new(&[c, c], v).expect("shape"));
                    vec![
                        Some(Tensor::new(&[d.batch, d.tq, c], dq).expect("shape")),
                        Some(Tensor::new(&[d.batch, d.tk, c], dkv).expect("shape")),
                        mat(dwq),
                        mat(dwk),
                        mat(dwv),
                        mat(dwo),
                    ]
                })
            },
        )
    }
}
