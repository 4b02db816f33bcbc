//! Overlap metrics on binary masks and the per-image evaluation report.

use std::fmt::Write as _;

use crate::dataio::{ImagePair, Raster};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::real::Real;

/// Sigmoid outputs strictly above this count as positive.
pub const PRED_THRESHOLD: f64 = 0.5;

/// Pixel counts of a predicted/true mask pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Overlap {
    pub intersection: usize,
    pub predicted: usize,
    pub actual: usize,
}

impl Overlap {
    pub fn count(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::shape("overlap", &[pred.len()], &[truth.len()]));
        }
        let mut o = Overlap::default();
        for (&p, &t) in pred.iter().zip(truth) {
            o.intersection += usize::from(p && t);
            o.predicted += usize::from(p);
            o.actual += usize::from(t);
        }
        Ok(o)
    }

    pub fn union(&self) -> usize {
        self.predicted + self.actual - self.intersection
    }

    /// `|∩| / |∪|`, or 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        match self.union() {
            0 => 1.0,
            u => self.intersection as f64 / u as f64,
        }
    }

    /// `2|∩| / (|pred| + |true|)`, or 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        match self.predicted + self.actual {
            0 => 1.0,
            s => (2 * self.intersection) as f64 / s as f64,
        }
    }
}

pub fn iou(pred: &[bool], truth: &[bool]) -> Result<f64> {
    Ok(Overlap::count(pred, truth)?.iou())
}

pub fn dice_score(pred: &[bool], truth: &[bool]) -> Result<f64> {
    Ok(Overlap::count(pred, truth)?.dice())
}

/// `0.50, 0.55, …, 0.95`.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

/// Fraction of images whose IoU reaches `t`.
pub fn precision_at(ious: &[f64], t: f64) -> f64 {
    ious.iter().filter(|&&v| v >= t).count() as f64 / ious.len() as f64
}

/// Mean over thresholds of the per-image hit rate.
pub fn mean_average_precision(ious: &[f64], thresholds: &[f64]) -> Result<f64> {
    if ious.is_empty() || thresholds.is_empty() {
        return Err(Error::invalid(
            "mean_average_precision",
            "needs at least one IoU and one threshold",
        ));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "mean_average_precision",
            "thresholds must be strictly ascending",
        ));
    }
    Ok(thresholds
        .iter()
        .map(|&t| precision_at(ious, t))
        .sum::<f64>()
        / thresholds.len() as f64)
}

pub fn binarize(values: &[f64], threshold: f64) -> Vec<bool> {
    values.iter().map(|&v| v > threshold).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub iou: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageScore>,
    pub mean_iou: f64,
    pub mean_dice: f64,
    pub map: f64,
    /// `(threshold, precision)` for every mAP threshold.
    pub precision: Vec<(f64, f64)>,
    pub pred_threshold: f64,
}

impl MetricReport {
    pub fn from_scores(images: Vec<ImageScore>, pred_threshold: f64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("cannot report on an empty test set".into()));
        }
        let n = images.len() as f64;
        let ious: Vec<f64> = images.iter().map(|s| s.iou).collect();
        let thresholds = default_thresholds();
        Ok(MetricReport {
            mean_iou: ious.iter().sum::<f64>() / n,
            mean_dice: images.iter().map(|s| s.dice).sum::<f64>() / n,
            map: mean_average_precision(&ious, &thresholds)?,
            precision: thresholds
                .iter()
                .map(|&t| (t, precision_at(&ious, t)))
                .collect(),
            images,
            pred_threshold,
        })
    }

    /// `id<TAB>iou<TAB>dice` per image, then `# `-prefixed aggregates.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.images {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", s.id, s.iou, s.dice);
        }
        let _ = writeln!(out, "# images\t{}", self.images.len());
        let _ = writeln!(out, "# pred_threshold\t{}", self.pred_threshold);
        let _ = writeln!(out, "# mean_iou\t{:.6}", self.mean_iou);
        let _ = writeln!(out, "# mean_dice\t{:.6}", self.mean_dice);
        let _ = writeln!(out, "# map\t{:.6}", self.map);
        for (t, p) in &self.precision {
            let _ = writeln!(out, "# precision@{t:.2}\t{p:.6}");
        }
        out
    }
}

/// Anything that maps an RGB raster to a one-channel probability raster.
pub trait Predictor {
    fn predict_mask(&self, image: &Raster) -> Result<Raster>;
}

impl<T: Real> Predictor for Model<T> {
    fn predict_mask(&self, image: &Raster) -> Result<Raster> {
        let out = self.predict(&image.to_chw::<T>())?;
        Raster::from_chw(&out)
    }
}

impl<F: Fn(&Raster) -> Result<Raster>> Predictor for F {
    fn predict_mask(&self, image: &Raster) -> Result<Raster> {
        self(image)
    }
}

pub fn score_pair(pred: &Raster, pair: &ImagePair, threshold: f64) -> Result<ImageScore> {
    if (pred.height(), pred.width(), pred.channels()) != (pair.height(), pair.width(), 1) {
        return Err(Error::shape(
            "evaluate",
            &[pred.channels(), pred.height(), pred.width()],
            &[1, pair.height(), pair.width()],
        ));
    }
    let o = Overlap::count(
        &binarize(pred.data(), threshold),
        &binarize(pair.mask.data(), 0.5),
    )?;
    Ok(ImageScore {
        id: pair.source_id.clone(),
        iou: o.iou(),
        dice: o.dice(),
    })
}

/// Binarizes predictions at `threshold` and scores every pair.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    pairs: &[ImagePair],
    threshold: f64,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Dataset(
            "cannot evaluate on an empty test set".into(),
        ));
    }
    let scores = pairs
        .iter()
        .map(|pair| score_pair(&predictor.predict_mask(&pair.image)?, pair, threshold))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_scores(scores, threshold)
}
