use super::ops::sigmoid;
use super::{same_shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Additive smoothing in the soft-Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

/// The two parts of [`Tape::dice_bce_loss`] for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub bce: f64,
    pub soft_dice: f64,
}

/// Mean BCE-with-logits and the batch-mean soft Dice, computed in closed
/// form without touching a tape.
pub fn loss_parts(logits: &Tensor, target: &Tensor) -> Result<LossParts> {
    same_shape("dice_bce_loss", logits, target)?;
    let n = logits.shape()[0];
    let per = logits.numel() / n;
    let bce = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
        / logits.numel() as f64;
    let mut dice = 0.0;
    for (zs, ts) in logits.data().chunks(per).zip(target.data().chunks(per)) {
        let (mut i, mut p, mut t) = (0.0, 0.0, 0.0);
        for (&z, &tv) in zs.iter().zip(ts) {
            let s = sigmoid(z);
            i += s * tv;
            p += s;
            t += tv;
        }
        dice += (2.0 * i + DICE_SMOOTH) / (p + t + DICE_SMOOTH);
    }
    Ok(LossParts {
        bce,
        soft_dice: dice / n as f64,
    })
}

impl Tape {
    /// `BCE-with-logits + (1 − soft Dice)`. BCE is averaged over all
    /// elements; soft Dice `(2Σpt + 1)/(Σp + Σt + 1)` is computed per sample
    /// (leading axis) and averaged over the batch.
    pub fn dice_bce_loss(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let z = self.shared(logits);
        same_shape("dice_bce_loss", &z, target)?;
        if target.data().iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::InvalidArgument("loss target must be binary".into()));
        }
        let parts = loss_parts(&z, target)?;
        let out = Tensor::scalar(parts.bce + 1.0 - parts.soft_dice);
        let target = target.clone();
        self.push("dice_bce_loss", out, &[logits], move || {
            Box::new(move |g: &Tensor| {
                let k = g.item();
                let n = z.shape()[0];
                let per = z.numel() / n;
                let m = z.numel() as f64;
                let mut dz = vec![0.0; z.numel()];
                for ((zs, ts), ds) in z
                    .data()
                    .chunks(per)
                    .zip(target.data().chunks(per))
                    .zip(dz.chunks_mut(per))
                {
                    let (mut i, mut p, mut t) = (0.0, 0.0, 0.0);
                    for (&zv, &tv) in zs.iter().zip(ts) {
                        let s = sigmoid(zv);
                        i += s * tv;
                        p += s;
                        t += tv;
                    }
                    let den = p + t + DICE_SMOOTH;
                    let num = 2.0 * i + DICE_SMOOTH;
                    for ((&zv, &tv), d) in zs.iter().zip(ts).zip(ds.iter_mut()) {
                        let s = sigmoid(zv);
                        let ddice_dp = (2.0 * tv * den - num) / (den * den);
                        *d = k * ((s - tv) / m - ddice_dp * s * (1.0 - s) / n as f64);
                    }
                }
                vec![Some(Tensor::new(z.shape(), dz).expect("shape"))]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(z: Tensor, t: &Tensor) -> f64 {
        let mut tape = Tape::new();
        let v = tape.constant(z);
        let l = tape.dice_bce_loss(v, t).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn zero_logits_give_ln2_bce() {
        let target = Tensor::from_fn(&[1, 1, 4, 4], |i| (i % 2) as f64);
        let parts = loss_parts(&Tensor::zeros(&[1, 1, 4, 4]), &target).unwrap();
        assert!((parts.bce - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let target = Tensor::from_fn(&[2, 1, 4, 4], |i| ((i / 3) % 2) as f64);
        let z = Tensor::from_fn(&[2, 1, 4, 4], |i| if target.data()[i] == 1.0 { 40.0 } else { -40.0 });
        assert!(loss(z, &target) < 1e-12);
    }

    #[test]
    fn empty_target_and_empty_prediction() {
        let target = Tensor::zeros(&[1, 1, 4, 4]);
        let parts = loss_parts(&Tensor::filled(&[1, 1, 4, 4], -50.0), &target).unwrap();
        assert!((parts.soft_dice - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_binary_target_rejected() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let t = Tensor::filled(&[1, 1, 2, 2], 0.5);
        assert!(matches!(tape.dice_bce_loss(v, &t), Err(Error::InvalidArgument(_))));
    }
}
