use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Maps token `(window, t, ch)` to the flat `N×C×H×W` index it came from.
fn index_map(n: usize, c: usize, h: usize, w: usize, win: usize) -> Vec<usize> {
    let (nwy, nwx) = (h / win, w / win);
    let mut map = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for wy in 0..nwy {
            for wx in 0..nwx {
                for dy in 0..win {
                    for dx in 0..win {
                        let (y, x) = (wy * win + dy, wx * win + dx);
                        for ch in 0..c {
                            map.push(((b * c + ch) * h + y) * w + x);
                        }
                    }
                }
            }
        }
    }
    map
}

fn check(h: usize, w: usize, win: usize) -> Result<()> {
    if win == 0 || !h.is_multiple_of(win) || !w.is_multiple_of(win) {
        return Err(Error::Dimension(format!(
            "{h}x{w} feature map is not divisible into {win}x{win} windows"
        )));
    }
    Ok(())
}

impl Tape {
    /// Splits `N×C×H×W` into non-overlapping `win×win` windows, giving
    /// `(N·nW)×win²×C` token sequences. Windows and the tokens inside them are
    /// both in row-major order.
    pub fn window_partition(&mut self, x: Var, win: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        check(h, w, win)?;
        let map = index_map(n, c, h, w, win);
        let d = self.value(x).data();
        let out: Vec<f64> = map.iter().map(|&i| d[i]).collect();
        let nw = n * (h / win) * (w / win);
        let out = Tensor::new(&[nw, win * win, c], out)?;
        self.push("window_partition", out, &[x], move || {
            Box::new(move |g: &Tensor| {
                let mut gx = vec![0.0; n * c * h * w];
                for (&i, v) in map.iter().zip(g.data()) {
                    gx[i] = *v;
                }
                vec![Some(Tensor::new(&[n, c, h, w], gx).expect("shape"))]
            })
        })
    }

    /// Inverse of [`Tape::window_partition`] back to `N×C×H×W`.
    pub fn window_merge(
        &mut self,
        tokens: Var,
        n: usize,
        h: usize,
        w: usize,
        win: usize,
    ) -> Result<Var> {
        check(h, w, win)?;
        let (nw, t, c) = self.value(tokens).dims3()?;
        if nw != n * (h / win) * (w / win) || t != win * win {
            return Err(Error::Shape(format!(
                "{:?} tokens do not tile a {n}x{c}x{h}x{w} map with {win}x{win} windows",
                self.value(tokens).shape()
            )));
        }
        let map = index_map(n, c, h, w, win);
        let mut out = vec![0.0; n * c * h * w];
        for (&i, v) in map.iter().zip(self.value(tokens).data()) {
            out[i] = *v;
        }
        let out = Tensor::new(&[n, c, h, w], out)?;
        self.push("window_merge", out, &[tokens], move || {
            Box::new(move |g: &Tensor| {
                let gd = g.data();
                let gt: Vec<f64> = map.iter().map(|&i| gd[i]).collect();
                vec![Some(Tensor::new(&[nw, t, c], gt).expect("shape"))]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_into_two_by_two_windows() {
        let mut t = Tape::new();
        // value encodes (y, x) as 10y + x
        let x = t.constant(Tensor::from_fn(&[1, 1, 4, 4], |i| (10 * (i / 4) + i % 4) as f64));
        let p = t.window_partition(x, 2).unwrap();
        let v = t.value(p);
        assert_eq!(v.shape(), &[4, 4, 1]);
        assert_eq!(&v.data()[..4], &[0.0, 1.0, 10.0, 11.0]);
        assert_eq!(&v.data()[4..8], &[2.0, 3.0, 12.0, 13.0]);
    }

    #[test]
    fn full_window_is_row_major_sequence() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_fn(&[1, 2, 3, 3], |i| i as f64));
        let p = t.window_partition(x, 3).unwrap();
        let v = t.value(p);
        assert_eq!(v.shape(), &[1, 9, 2]);
        for pos in 0..9 {
            assert_eq!(v.data()[pos * 2], pos as f64);
            assert_eq!(v.data()[pos * 2 + 1], 9.0 + pos as f64);
        }
    }

    #[test]
    fn merge_inverts_partition_bitwise() {
        let mut t = Tape::new();
        let src = Tensor::from_fn(&[2, 3, 8, 4], |i| (i as f64).sin());
        let x = t.constant(src.clone());
        let p = t.window_partition(x, 4).unwrap();
        let m = t.window_merge(p, 2, 8, 4, 4).unwrap();
        assert_eq!(t.value(m), &src);
    }

    #[test]
    fn indivisible_maps_rejected() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 1, 6, 4]));
        assert!(t.window_partition(x, 4).is_err());
    }
}
