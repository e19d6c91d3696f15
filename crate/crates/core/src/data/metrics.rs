use serde::{Deserialize, Serialize};

use super::{Sample, Split};
use crate::contrast::BinaryMask;
use crate::error::{Error, Result};
use crate::model::{batch_images, SegModel};

const EVAL_BATCH: usize = 8;

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "prediction is {:?}, ground truth is {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> usize {
    a.as_slice().iter().zip(b.as_slice()).filter(|(x, y)| **x == 1 && **y == 1).count()
}

/// `2|P∩G| / (|P| + |G|)`; two empty masks score 1.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let denom = pred.count_ones() + gt.count_ones();
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * overlap(pred, gt) as f64 / denom as f64)
}

/// `|P∩G| / |P∪G|`; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let inter = overlap(pred, gt);
    let union = pred.count_ones() + gt.count_ones() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Polyp where `p > threshold`. Since probabilities lie in `(0, 1)`, a
/// threshold at or below 0 marks everything and one at or above 1 marks
/// nothing, even where a probability rounded to exactly 0 or 1.
pub fn binarize(probs: &[f64], height: usize, width: usize, threshold: f64) -> Result<BinaryMask> {
    let data = probs
        .iter()
        .map(|&p| {
            let on = if threshold <= 0.0 {
                true
            } else if threshold >= 1.0 {
                false
            } else {
                p > threshold
            };
            on as u8
        })
        .collect();
    BinaryMask::new(height, width, data)
}

/// Anything that maps samples to per-pixel polyp probabilities.
pub trait Predictor {
    /// One row-major probability map per sample.
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<f64>>>;
}

impl Predictor for SegModel {
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_BATCH) {
            let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
            let probs = SegModel::predict(self, &batch_images(&images)?)?;
            let per = probs.numel() / chunk.len();
            out.extend(probs.data().chunks(per).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

/// Predicts the ground-truth mask.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
        Ok(samples
            .iter()
            .map(|s| s.mask.as_slice().iter().map(|&v| v as f64).collect())
            .collect())
    }
}

/// The same probability everywhere.
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
        Ok(samples
            .iter()
            .map(|s| vec![self.0; s.mask.height() * s.mask.width()])
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub dice: f64,
    pub iou: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub split: Split,
    pub runs: usize,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub iou_mean: f64,
    pub iou_std: f64,
    pub threshold: f64,
    pub per_run: Vec<RunMetrics>,
}

/// Mean Dice and IoU of one predictor over `samples`.
pub fn evaluate_run(pred: &dyn Predictor, samples: &[&Sample], threshold: f64, seed: u64) -> Result<RunMetrics> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let probs = pred.predict(samples)?;
    let (mut d, mut j) = (0.0, 0.0);
    for (s, p) in samples.iter().zip(&probs) {
        let m = binarize(p, s.mask.height(), s.mask.width(), threshold)?;
        d += dice(&m, &s.mask)?;
        j += iou(&m, &s.mask)?;
    }
    let n = samples.len() as f64;
    Ok(RunMetrics {
        seed,
        dice: d / n,
        iou: j / n,
        n_samples: samples.len(),
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summary over runs, each a `(training seed, predictor)` pair. The spread
/// is the sample standard deviation across runs, 0 for a single run.
pub fn evaluate(
    runs: &[(u64, &dyn Predictor)],
    split: Split,
    samples: &[&Sample],
    threshold: f64,
) -> Result<MetricsSummary> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    let per_run = runs
        .iter()
        .map(|&(seed, p)| evaluate_run(p, samples, threshold, seed))
        .collect::<Result<Vec<_>>>()?;
    let (dice_mean, dice_std) = mean_std(&per_run.iter().map(|r| r.dice).collect::<Vec<_>>());
    let (iou_mean, iou_std) = mean_std(&per_run.iter().map(|r| r.iou).collect::<Vec<_>>());
    Ok(MetricsSummary {
        split,
        runs: per_run.len(),
        dice_mean,
        dice_std,
        iou_mean,
        iou_std,
        threshold,
        per_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_plane(n: usize, rows: usize) -> BinaryMask {
        BinaryMask::from_fn(n, n, |r, _| r < rows)
    }

    #[test]
    fn closed_forms() {
        let gt = half_plane(8, 4);
        assert_eq!(dice(&gt, &gt).unwrap(), 1.0);
        assert_eq!(iou(&gt, &gt).unwrap(), 1.0);
        let other = BinaryMask::from_fn(8, 8, |r, _| r >= 4);
        assert_eq!(dice(&other, &gt).unwrap(), 0.0);
        assert_eq!(iou(&other, &gt).unwrap(), 0.0);
        let half = half_plane(8, 2);
        assert_eq!(dice(&half, &gt).unwrap(), 2.0 / 3.0);
        assert_eq!(iou(&half, &gt).unwrap(), 0.5);
        let empty = BinaryMask::filled(8, 8, false);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert!(dice(&gt, &half_plane(4, 2)).is_err());
    }

    #[test]
    fn binarize_extremes() {
        let p = [0.0, 0.3, 0.5, 0.9, 1.0];
        assert_eq!(binarize(&p, 1, 5, 0.5).unwrap().as_slice(), &[0, 0, 0, 1, 1]);
        assert_eq!(binarize(&p, 1, 5, 0.0).unwrap().count_ones(), 5);
        assert_eq!(binarize(&p, 1, 5, 1.0).unwrap().count_ones(), 0);
    }

    #[test]
    fn sample_standard_deviation() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }
}
