//! Corpora: synthetic generation, on-disk ingestion, splits and metrics.

mod io;
mod metrics;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, read_mask_png, read_rgb_png, write_corpus, write_mask_png, write_rgb_png, Manifest, ManifestEntry};
pub use metrics::{
    binarize, dice, evaluate, evaluate_run, iou, ConstantPredictor, MetricsSummary, OraclePredictor, Predictor,
    RunMetrics,
};
pub use synth::{sample_digest, synth_generate, synth_sample, ChromaMode, SynthConfig, AREA_RANGE};

use crate::contrast::{BinaryMask, RgbImage};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!(
                "unknown split '{s}' (expected train, val or test)"
            ))),
        }
    }
}

/// Validation and test fractions plus the shuffle seed. Validation and test
/// sizes are `floor(n · fraction)`; training gets the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.val) || !ok(self.test) || self.val + self.test > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "split fractions val={} test={} must be in [0, 1] and sum to at most 1",
                self.val, self.test
            )));
        }
        Ok(())
    }

    /// Split of each of `n` items, in item order.
    pub fn assign(&self, n: usize) -> Result<Vec<Split>> {
        self.validate()?;
        let n_val = (n as f64 * self.val).floor() as usize;
        let n_test = (n as f64 * self.test).floor() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::new(self.seed).shuffle(&mut order);
        let mut out = vec![Split::Train; n];
        for (rank, &i) in order.iter().enumerate() {
            if rank < n_val {
                out[i] = Split::Val;
            } else if rank < n_val + n_test {
                out[i] = Split::Test;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Split of each sample, parallel to `samples`.
    pub splits: Vec<Split>,
    /// Ids dropped during ingestion because their mask was all one class.
    pub excluded: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == split)
            .map(|(x, _)| x)
            .collect()
    }

    /// Square side length shared by all samples, if any.
    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.mask.dims())
    }

    /// Reassigns every sample's split.
    pub fn resplit(&mut self, spec: &SplitSpec) -> Result<()> {
        self.splits = spec.assign(self.samples.len())?;
        Ok(())
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.samples.iter().position(|s| s.id == id).map(|i| self.splits[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_item_goes_to_train() {
        assert_eq!(SplitSpec::default().assign(1).unwrap(), vec![Split::Train]);
    }

    #[test]
    fn split_sizes_use_floor() {
        let s = SplitSpec::default().assign(250).unwrap();
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (200, 25, 25));
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(SplitSpec { seed: 0, val: 0.6, test: 0.6 }.assign(5).is_err());
        assert!(SplitSpec { seed: 0, val: -0.1, test: 0.1 }.assign(5).is_err());
    }
}
