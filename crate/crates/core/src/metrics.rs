//! Accuracy metrics that use the human annotations instead of (or next to)
//! the single dataset label.
//!
//! A "prediction" is always the first entry of a model's ranked list.
//! Every metric is evaluated on an explicit list of images, usually one of
//! the [`Subset`]s.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classify::ImageAnnotation;
use crate::contains::SelectionFrequencyTable;
use crate::ingest::{DatasetIndex, PredictionSet};
use crate::seed::stream;
use crate::{ClassId, Error, ImageId, Result};

pub type AnnotationMap = BTreeMap<ImageId, ImageAnnotation>;

pub fn annotation_map(annotations: impl IntoIterator<Item = ImageAnnotation>) -> AnnotationMap {
    annotations.into_iter().map(|a| (a.image.clone(), a)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    MultiObject,
    /// Annotated main label differs from the dataset label.
    MainDisagreement,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::All, Subset::MultiObject, Subset::MainDisagreement];

    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::MultiObject => "multi_object",
            Subset::MainDisagreement => "main_disagreement",
        }
    }

    /// Annotated images of the dataset that belong to the subset, sorted.
    pub fn images(self, index: &DatasetIndex, annotations: &AnnotationMap) -> Vec<ImageId> {
        let mut out: Vec<ImageId> = index
            .records()
            .iter()
            .filter_map(|r| {
                let a = annotations.get(&r.image)?;
                let keep = match self {
                    Subset::All => true,
                    Subset::MultiObject => a.multi_object,
                    Subset::MainDisagreement => a.main_label != r.dataset_label,
                };
                keep.then(|| r.image.clone())
            })
            .collect();
        out.sort();
        out
    }
}

fn require_nonempty(subset: &[ImageId]) -> Result<()> {
    if subset.is_empty() {
        Err(Error::Undefined("empty subset"))
    } else {
        Ok(())
    }
}

fn lookup<'a>(annotations: &'a AnnotationMap, subset: &[ImageId]) -> Result<Vec<&'a ImageAnnotation>> {
    let mut missing = Vec::new();
    let found: Vec<&ImageAnnotation> = subset
        .iter()
        .filter_map(|i| {
            let a = annotations.get(i);
            if a.is_none() {
                missing.push(i.clone());
            }
            a
        })
        .collect();
    if missing.is_empty() {
        Ok(found)
    } else {
        Err(Error::Unannotated(missing))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per-image 0/1 outcomes: dataset label among the top `k`.
pub fn top_k_hits(preds: &PredictionSet, index: &DatasetIndex, subset: &[ImageId], k: usize) -> Vec<f64> {
    subset
        .iter()
        .map(|i| {
            let hit = match (preds.top_k(i, k), index.label(i)) {
                (Some(top), Some(l)) => top.contains(&l),
                _ => false,
            };
            f64::from(u8::from(hit))
        })
        .collect()
}

pub fn top_k_accuracy(preds: &PredictionSet, index: &DatasetIndex, subset: &[ImageId], k: usize) -> Result<f64> {
    require_nonempty(subset)?;
    Ok(mean(top_k_hits(preds, index, subset, k).into_iter()))
}

pub fn multi_label_hits(preds: &PredictionSet, annotations: &AnnotationMap, subset: &[ImageId]) -> Result<Vec<f64>> {
    Ok(lookup(annotations, subset)?
        .into_iter()
        .map(|a| f64::from(u8::from(preds.top1(&a.image).is_some_and(|p| a.has_object(p)))))
        .collect())
}

/// Top-1 prediction matches the label of any annotated object.
pub fn multi_label_accuracy(preds: &PredictionSet, annotations: &AnnotationMap, subset: &[ImageId]) -> Result<f64> {
    require_nonempty(subset)?;
    Ok(mean(multi_label_hits(preds, annotations, subset)?.into_iter()))
}

pub fn main_label_hits(preds: &PredictionSet, annotations: &AnnotationMap, subset: &[ImageId]) -> Result<Vec<f64>> {
    Ok(lookup(annotations, subset)?
        .into_iter()
        .map(|a| f64::from(u8::from(preds.top1(&a.image) == Some(a.main_label))))
        .collect())
}

/// Top-1 prediction equals the annotated main label.
pub fn main_label_accuracy(preds: &PredictionSet, annotations: &AnnotationMap, subset: &[ImageId]) -> Result<f64> {
    require_nonempty(subset)?;
    Ok(mean(main_label_hits(preds, annotations, subset)?.into_iter()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSf {
    pub mean: f64,
    /// Predictions whose (image, label) pair was never shown; counted as 0.
    pub absent: usize,
}

pub fn prediction_sf(preds: &PredictionSet, sft: &SelectionFrequencyTable, subset: &[ImageId]) -> Result<PredictionSf> {
    require_nonempty(subset)?;
    let mut absent = 0;
    let m = mean(subset.iter().map(|i| {
        match preds.top1(i).and_then(|p| sft.get(i, p)) {
            Some(s) => s,
            None => {
                absent += 1;
                0.0
            }
        }
    }));
    Ok(PredictionSf { mean: m, absent })
}

/// Expected top-1 accuracy (against the dataset label) of guessing one of
/// the annotated objects uniformly at random.
pub fn random_object_baseline(annotations: &AnnotationMap, subset: &[ImageId]) -> Result<f64> {
    require_nonempty(subset)?;
    Ok(mean(lookup(annotations, subset)?.into_iter().map(|a| {
        if a.has_object(a.dataset_label) {
            1.0 / a.objects.len() as f64
        } else {
            0.0
        }
    })))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfHistogram {
    /// `bins + 1` edges over [0, 1]; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Incorrect predictions never shown to annotators (binned as 0).
    pub absent: usize,
}

impl SfHistogram {
    pub fn new(bins: usize) -> Self {
        SfHistogram {
            edges: (0..=bins).map(|b| b as f64 / bins as f64).collect(),
            counts: vec![0; bins],
            absent: 0,
        }
    }

    pub fn add(&mut self, sf: f64) {
        let bins = self.counts.len();
        // small epsilon so k/bins lands in its own bin despite rounding
        let b = ((sf * bins as f64 + 1e-9).floor() as usize).min(bins - 1);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Distribution of sf(image, top-1) over images whose top-1 prediction is
/// not the dataset label.
pub fn incorrect_prediction_sf_histogram(
    preds: &PredictionSet,
    sft: &SelectionFrequencyTable,
    index: &DatasetIndex,
    subset: &[ImageId],
    bins: usize,
) -> SfHistogram {
    let mut h = SfHistogram::new(bins.max(1));
    for i in subset {
        let (Some(p), Some(l)) = (preds.top1(i), index.label(i)) else {
            continue;
        };
        if p == l {
            continue;
        }
        match sft.get(i, p) {
            Some(s) => h.add(s),
            None => {
                h.absent += 1;
                h.add(0.0);
            }
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAccuracy {
    /// `None` when neither class is ranked on any of the pair's images.
    pub accuracy: Option<f64>,
    /// Share of the pair's images where at least one of the two is ranked.
    pub coverage: f64,
    pub images: usize,
}

pub const PAIRWISE_CHANCE: f64 = 0.5;

/// Accuracy on images of classes `i` and `j` when the prediction is
/// restricted to whichever of the two is ranked first.
pub fn pairwise_accuracy(preds: &PredictionSet, index: &DatasetIndex, i: ClassId, j: ClassId) -> Result<PairwiseAccuracy> {
    let mut images = 0;
    let mut covered = 0;
    let mut correct = 0;
    for r in index.records() {
        if r.dataset_label != i && r.dataset_label != j {
            continue;
        }
        images += 1;
        let Some(ranked) = preds.ranked.get(&r.image) else {
            continue;
        };
        if let Some(&first) = ranked.iter().find(|&&c| c == i || c == j) {
            covered += 1;
            if first == r.dataset_label {
                correct += 1;
            }
        }
    }
    if images == 0 {
        return Err(Error::Undefined("no image of either class"));
    }
    Ok(PairwiseAccuracy {
        accuracy: (covered > 0).then(|| correct as f64 / covered as f64),
        coverage: covered as f64 / images as f64,
        images,
    })
}

/// Among top-5 corrections (dataset label in the top 5 but not first),
/// the share where the top-1 prediction labels a different annotated
/// object than the one labeled with the dataset label.
pub fn top5_correction_fraction(preds: &PredictionSet, annotations: &AnnotationMap, subset: &[ImageId]) -> Result<f64> {
    let mut corrections = 0;
    let mut other_object = 0;
    for a in lookup(annotations, subset)? {
        let Some(top5) = preds.top_k(&a.image, 5) else {
            continue;
        };
        let Some(&first) = top5.first() else {
            continue;
        };
        if first == a.dataset_label || !top5.contains(&a.dataset_label) {
            continue;
        }
        corrections += 1;
        match (a.block_with_label(first), a.block_with_label(a.dataset_label)) {
            (Some(p), Some(d)) if p != d => other_object += 1,
            _ => {}
        }
    }
    if corrections == 0 {
        return Err(Error::Undefined("no top-5 corrections"));
    }
    Ok(other_object as f64 / corrections as f64)
}

/// Percentile bootstrap over images: 95% interval for the mean.
pub fn bootstrap_ci(outcomes: &[f64], replicates: usize, seed: u64, label: &str) -> Option<[f64; 2]> {
    if outcomes.is_empty() || replicates == 0 {
        return None;
    }
    let mut rng = stream(seed, &[b"bootstrap", label.as_bytes()]);
    let n = outcomes.len();
    let mut means: Vec<f64> = (0..replicates)
        .map(|_| (0..n).map(|_| outcomes[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (replicates - 1) as f64).round() as usize).min(replicates - 1)];
    Some([at(0.025), at(0.975)])
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub images: usize,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub multi_label: Option<f64>,
    pub main_label: Option<f64>,
    pub mean_prediction_sf: Option<f64>,
    pub prediction_sf_absent: usize,
    pub random_object_baseline: Option<f64>,
    pub top1_ci: Option<[f64; 2]>,
    pub multi_label_ci: Option<[f64; 2]>,
    pub main_label_ci: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub declared_top1: Option<f64>,
    pub declared_top5: Option<f64>,
    pub subsets: BTreeMap<Subset, SubsetMetrics>,
    pub incorrect_prediction_sf: SfHistogram,
    pub top5_correction_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub models: Vec<ModelReport>,
}

pub struct ReportInputs<'a> {
    pub predictions: &'a [PredictionSet],
    pub index: &'a DatasetIndex,
    pub annotations: &'a AnnotationMap,
    pub sft: &'a SelectionFrequencyTable,
    pub sf_bins: usize,
    pub replicates: usize,
    pub seed: u64,
}

pub fn metrics_report(inp: &ReportInputs<'_>) -> Result<MetricsReport> {
    let mut models = Vec::new();
    for preds in inp.predictions {
        let mut subsets = BTreeMap::new();
        for subset in Subset::ALL {
            let images = subset.images(inp.index, inp.annotations);
            let mut m = SubsetMetrics {
                images: images.len(),
                ..Default::default()
            };
            if !images.is_empty() {
                let tag = |metric: &str| format!("{}/{}/{metric}", preds.model_id, subset.name());
                let top1 = top_k_hits(preds, inp.index, &images, 1);
                let multi = multi_label_hits(preds, inp.annotations, &images)?;
                let main = main_label_hits(preds, inp.annotations, &images)?;
                let psf = prediction_sf(preds, inp.sft, &images)?;
                m.top1 = Some(mean(top1.iter().copied()));
                m.top5 = Some(top_k_accuracy(preds, inp.index, &images, 5)?);
                m.multi_label = Some(mean(multi.iter().copied()));
                m.main_label = Some(mean(main.iter().copied()));
                m.mean_prediction_sf = Some(psf.mean);
                m.prediction_sf_absent = psf.absent;
                m.random_object_baseline = Some(random_object_baseline(inp.annotations, &images)?);
                m.top1_ci = bootstrap_ci(&top1, inp.replicates, inp.seed, &tag("top1"));
                m.multi_label_ci = bootstrap_ci(&multi, inp.replicates, inp.seed, &tag("multi_label"));
                m.main_label_ci = bootstrap_ci(&main, inp.replicates, inp.seed, &tag("main_label"));
            }
            subsets.insert(subset, m);
        }
        let all = Subset::All.images(inp.index, inp.annotations);
        let multi = Subset::MultiObject.images(inp.index, inp.annotations);
        models.push(ModelReport {
            model: preds.model_id.clone(),
            declared_top1: preds.declared_top1,
            declared_top5: preds.declared_top5,
            subsets,
            incorrect_prediction_sf: incorrect_prediction_sf_histogram(preds, inp.sft, inp.index, &all, inp.sf_bins),
            top5_correction_fraction: top5_correction_fraction(preds, inp.annotations, &multi).ok(),
        });
    }
    Ok(MetricsReport {
        bootstrap_replicates: inp.replicates,
        seed: inp.seed,
        models,
    })
}
