//! Minibatch training with seeded shuffling, freeze lists and best-validation selection.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, PRED_THRESHOLD};
use crate::model::Model;
use crate::nn::{bce_loss, dice_loss, DICE_EPS};
use crate::optim::{Adam, AdamConfig};
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    Bce,
    #[default]
    Dice,
}

impl LossKind {
    pub fn apply<T: Real>(self, tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
        match self {
            LossKind::Bce => bce_loss(tape, pred, target),
            LossKind::Dice => dice_loss(tape, pred, target, DICE_EPS),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Dice => "dice",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "dice" => Ok(LossKind::Dice),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (bce | dice)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Parameters whose name starts with any of these prefixes are not updated.
    pub freeze: Vec<String>,
    /// Stop once the validation Dice score reaches this value.
    pub stop_at_dice: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            loss: LossKind::Dice,
            adam: AdamConfig::default(),
            seed: 0,
            freeze: Vec::new(),
            stop_at_dice: None,
        }
    }
}

impl TrainConfig {
    pub fn is_frozen(&self, name: &str) -> bool {
        self.freeze.iter().any(|p| name.starts_with(p.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_iou: Option<f64>,
    pub val_dice: Option<f64>,
}

impl fmt::Display for EpochRecord {
    /// `epoch<TAB>loss<TAB>val_iou<TAB>val_dice`, `-` for missing values.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        write!(
            f,
            "{}\t{:.6}\t{}\t{}",
            self.epoch,
            self.loss,
            opt(self.val_iou),
            opt(self.val_dice)
        )
    }
}

/// One preprocessed training example.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub mask: Tensor<T>,
}

impl<T: Real> Sample<T> {
    pub fn from_pair(pair: &ImagePair) -> Self {
        Sample {
            image: pair.image.to_chw(),
            mask: pair.mask.to_chw(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    /// Highest validation Dice, or the final model when there is no validation set.
    pub best: Model<T>,
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
}

/// Mean loss over `batch` and its gradients. Frozen parameters get `None`.
pub fn batch_step<T: Real>(
    model: &Model<T>,
    batch: &[&Sample<T>],
    loss: LossKind,
    frozen: impl Fn(&str) -> bool,
) -> Result<(f64, Vec<Option<Tensor<T>>>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, frozen);
    let mut total: Option<Var> = None;
    for s in batch {
        let x = tape.constant(s.image.clone());
        let y = tape.constant(s.mask.clone());
        let pred = model.forward(&mut tape, &params, x)?.output;
        let l = loss.apply(&mut tape, pred, y)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::invalid("batch_step", "empty batch"))?;
    let mean = tape.scale(total, T::of(1.0 / batch.len() as f64))?;
    let value = tape.value(mean).item().as_f64();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = tape.backward(mean)?;
    let out = params
        .iter()
        .map(|&v| {
            if tape.requires_grad(v) {
                grads.get(v).cloned()
            } else {
                None
            }
        })
        .collect();
    Ok((value, out))
}

/// Trains `model` in place and returns the selected model with the epoch log.
/// `on_epoch` sees each record as soon as it is complete.
pub fn train<T: Real>(
    mut model: Model<T>,
    samples: &[Sample<T>],
    validation: &[ImagePair],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = batch_step(&model, &batch, config.loss, |n| config.is_frozen(n))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let mut values: Vec<Tensor<T>> =
                model.params().iter().map(|p| p.value.clone()).collect();
            let refs: Vec<Option<&Tensor<T>>> = grads.iter().map(Option::as_ref).collect();
            adam.step(&mut values, &refs)?;
            model.set_params(values)?;
            loss_sum += loss;
            batches += 1;
        }
        let mut record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            val_iou: None,
            val_dice: None,
        };
        if !validation.is_empty() {
            let report = evaluate(&model, validation, PRED_THRESHOLD)?;
            record.val_iou = Some(report.mean_iou);
            record.val_dice = Some(report.mean_dice);
            if report.mean_dice > best.2 {
                best = (model.clone(), epoch, report.mean_dice);
            }
        }
        on_epoch(&record);
        records.push(record);
        let reached =
            matches!((config.stop_at_dice, record.val_dice), (Some(t), Some(d)) if d >= t);
        if reached {
            break;
        }
    }
    if validation.is_empty() {
        best = (model, records.len(), f64::NAN);
    }
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic::flood_set;
    use crate::model::{ModelSpec, Variant};

    fn setup() -> (Model<f32>, Vec<Sample<f32>>, Vec<ImagePair>) {
        let pairs = flood_set(4, 16, 1);
        let model =
            Model::build(ModelSpec::new(Variant::GacUnet, 16, vec![4, 8]).with_seed(2)).unwrap();
        let samples = pairs.iter().map(Sample::from_pair).collect();
        (model, samples, pairs)
    }

    #[test]
    fn one_epoch_logs_a_record() {
        let (model, samples, pairs) = setup();
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let mut seen = Vec::new();
        let out = train(model, &samples, &pairs, &cfg, |r| seen.push(*r)).unwrap();
        assert_eq!(seen.len(), 1);
        assert!(seen[0].loss.is_finite());
        assert_eq!(out.best_epoch, 1);
        assert_eq!(seen[0].to_string().split('\t').count(), 4);
    }

    #[test]
    fn freezing_everything_changes_nothing() {
        let (model, samples, _) = setup();
        let before = model.to_bytes();
        let cfg = TrainConfig {
            epochs: 2,
            freeze: vec![String::new()],
            ..Default::default()
        };
        let out = train(model, &samples, &[], &cfg, |_| {}).unwrap();
        assert_eq!(out.best.to_bytes(), before);
    }

    #[test]
    fn partial_freeze_only_touches_the_rest() {
        let (model, samples, _) = setup();
        let cfg = TrainConfig {
            epochs: 1,
            freeze: vec!["enc".into()],
            ..Default::default()
        };
        let out = train(model.clone(), &samples, &[], &cfg, |_| {}).unwrap();
        for (a, b) in model.params().iter().zip(out.best.params()) {
            assert_eq!(a.name.starts_with("enc"), a.value == b.value, "{}", a.name);
        }
    }
}
