//! Mini-batch training with Adam on the BCE + Dice loss.

use serde::{Deserialize, Serialize};

use crate::data::{evaluate_run, Sample};
use crate::error::{Error, Result};
use crate::model::{batch_images, batch_masks, ModelConfig, ParamBreakdown, SegModel};
use crate::rng::named_stream;
use crate::tensor::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds parameter initialisation and batch order.
    pub seed: u64,
    /// Binarization threshold for the validation Dice.
    pub threshold: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            seed: 1,
            threshold: 0.5,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Sample-weighted mean loss over the epoch's batches.
    pub train_loss: f64,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub mode: String,
    pub param_count: usize,
    pub params: ParamBreakdown,
    pub config: TrainConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept: best validation Dice (earliest on
    /// ties), or the last epoch when there is no validation split.
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    /// Dice of the kept model on the training split.
    pub final_train_dice: f64,
}

pub struct TrainOutcome {
    pub model: SegModel,
    pub history: History,
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut SegModel,
    adam: &mut AdamState,
    cfg: AdamConfig,
    images: &Tensor,
    masks: &Tensor,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let x = tape.constant(images.clone());
    let logits = model.forward(&mut tape, &p, x)?;
    let loss = tape.dice_bce_loss(logits, masks)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let g: Vec<Tensor> = p
        .vars()
        .iter()
        .zip(model.params().tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);
    adam_step(model.params_mut().tensors_mut(), &g, adam, cfg)?;
    Ok(value)
}

/// Trains a fresh model. `on_epoch` sees each record as it is produced.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[&Sample],
    val_set: &[&Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut model = SegModel::new(cfg.model.clone(), cfg.seed)?;
    let (h, w) = train_set[0].mask.dims();
    model.check_input(&[1, 3, h, w])?;

    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(model.params().tensors());
    let mut order_rng = named_stream(cfg.seed, "batch-order");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, SegModel)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let samples: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
            let images = batch_images(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
            let masks = batch_masks(&samples.iter().map(|s| &s.mask).collect::<Vec<_>>())?;
            let loss = match train_step(&mut model, &mut adam, adam_cfg, &images, &masks) {
                Ok(l) if l.is_finite() => l,
                Ok(l) => return Err(Error::Diverged { epoch, step, loss: l }),
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss * chunk.len() as f64;
            steps += 1;
        }
        let val_dice = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_run(&model, val_set, cfg.threshold, cfg.seed)?.dice)
        };
        let rec = EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / train_set.len() as f64,
            val_dice,
        };
        on_epoch(&rec);
        records.push(rec);
        let improved = match (&best, val_dice) {
            (None, _) => true,
            (Some((_, b, _)), Some(v)) => v > *b,
            (Some(_), None) => true,
        };
        if improved {
            best = Some((epoch, val_dice.unwrap_or(f64::NAN), model.clone()));
        }
    }

    let (best_epoch, best_val, model) = best.expect("at least one epoch");
    let final_train_dice = evaluate_run(&model, train_set, cfg.threshold, cfg.seed)?.dice;
    let history = History {
        mode: model.mode().to_string(),
        param_count: model.param_count(),
        params: model.param_breakdown(),
        config: cfg.clone(),
        n_train: train_set.len(),
        n_val: val_set.len(),
        epochs: records,
        best_epoch,
        best_val_dice: if val_set.is_empty() { None } else { Some(best_val) },
        final_train_dice,
    };
    Ok(TrainOutcome { model, history })
}
