//! Error analysis: confusion and co-occurrence matrices, ambiguous class
//! pairs, sf versus accuracy, and likely mislabeled images.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classify::ClassifyResponse;
use crate::contains::{detect_unverified, SelectionFrequencyTable, Unverified};
use crate::ingest::{ClassTable, DatasetIndex, PredictionSet};
use crate::metrics::{pairwise_accuracy, AnnotationMap, PairwiseAccuracy};
use crate::{ClassId, Error, ImageId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Class,
    Superclass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Full,
    /// Only cells whose row and column share a superclass.
    Intra,
    /// Only cells whose row and column are in different superclasses.
    Inter,
}

/// Where the predicted label of an image comes from.
#[derive(Clone, Copy)]
pub enum Source<'a> {
    Model(&'a PredictionSet),
    /// Annotated main label.
    HumanMain(&'a AnnotationMap),
    /// Label with the highest sf; ties go to the smaller id.
    SfArgmax(&'a SelectionFrequencyTable),
}

impl Source<'_> {
    pub fn name(&self) -> String {
        match self {
            Source::Model(p) => p.model_id.clone(),
            Source::HumanMain(_) => "human_main".into(),
            Source::SfArgmax(_) => "sf_argmax".into(),
        }
    }

    fn predict(&self, image: &str) -> Option<ClassId> {
        match self {
            Source::Model(p) => p.top1(image),
            Source::HumanMain(a) => a.get(image).map(|a| a.main_label),
            Source::SfArgmax(t) => sf_argmax(t, image),
        }
    }
}

pub fn sf_argmax(sft: &SelectionFrequencyTable, image: &str) -> Option<ClassId> {
    let mut best: Option<(ClassId, f64)> = None;
    for (l, e) in sft.labels_for(image) {
        let s = e.sf();
        // labels_for is in id order, so strict > keeps the smaller id on ties
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((l, s));
        }
    }
    best.map(|(l, _)| l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub row: u32,
    pub col: u32,
    pub value: f64,
}

/// Row-normalized confusion counts.
///
/// `value(i, j)` is the share of row `i`'s images predicted as `j`, always
/// relative to all of row `i`'s images, so the intra and inter matrices of
/// the same source add up to the full one. Rows of a full matrix sum to 1;
/// [`ConfusionMatrix::normalized`] rescales the scoped matrices the same
/// way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub source: String,
    pub level: Level,
    pub scope: Scope,
    pub size: usize,
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        match self.row_totals[i] {
            0 => 0.0,
            t => self.counts[i][j] as f64 / t as f64,
        }
    }

    /// Rows with no images; their values are all zero.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.size).filter(|&i| self.row_totals[i] == 0).collect()
    }

    pub fn row_mass(&self, i: usize) -> f64 {
        (0..self.size).map(|j| self.value(i, j)).sum()
    }

    /// Rows rescaled to sum to 1 over the included cells; rows with no
    /// included mass stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    /// Non-zero cells in row-major order.
    pub fn entries(&self) -> Vec<MatrixEntry> {
        let mut out = Vec::new();
        for i in 0..self.size {
            for j in 0..self.size {
                if self.counts[i][j] > 0 {
                    out.push(MatrixEntry { row: i as u32, col: j as u32, value: self.value(i, j) });
                }
            }
        }
        out
    }
}

fn axis(classes: &ClassTable, level: Level, c: ClassId) -> usize {
    match level {
        Level::Class => c.index(),
        Level::Superclass => classes.superclass_of(c).index(),
    }
}

fn axis_len(classes: &ClassTable, level: Level) -> usize {
    match level {
        Level::Class => classes.len(),
        Level::Superclass => classes.registry().len(),
    }
}

fn in_scope(classes: &ClassTable, scope: Scope, truth: ClassId, pred: ClassId) -> bool {
    let same = classes.superclass_of(truth) == classes.superclass_of(pred);
    match scope {
        Scope::Full => true,
        Scope::Intra => same,
        Scope::Inter => !same,
    }
}

/// Rows are dataset labels. Images the source has no prediction for are
/// skipped. `subset` defaults to every image in the index.
pub fn confusion_matrix(
    source: Source<'_>,
    index: &DatasetIndex,
    classes: &ClassTable,
    level: Level,
    scope: Scope,
    subset: Option<&[ImageId]>,
) -> ConfusionMatrix {
    let n = axis_len(classes, level);
    let mut m = ConfusionMatrix {
        source: source.name(),
        level,
        scope,
        size: n,
        counts: vec![vec![0; n]; n],
        row_totals: vec![0; n],
    };
    let all: Vec<ImageId>;
    let images: &[ImageId] = match subset {
        Some(s) => s,
        None => {
            all = index.images().map(str::to_owned).collect();
            &all
        }
    };
    for image in images {
        let (Some(truth), Some(pred)) = (index.label(image), source.predict(image)) else {
            continue;
        };
        if !classes.contains(pred) {
            continue;
        }
        let (r, c) = (axis(classes, level, truth), axis(classes, level, pred));
        m.row_totals[r] += 1;
        if in_scope(classes, scope, truth, pred) {
            m.counts[r][c] += 1;
        }
    }
    m
}

/// `values[i][j]`: share of row `i`'s annotated images that also contain
/// an object labeled `j` (class level) or labeled in superclass `j`
/// (superclass level). The dataset-label object itself is not counted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub level: Level,
    pub size: usize,
    pub values: Vec<Vec<f64>>,
    pub row_images: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopCooccurrence {
    pub class: ClassId,
    pub other: ClassId,
    pub value: f64,
}

impl CooccurrenceMatrix {
    pub fn entries(&self) -> Vec<MatrixEntry> {
        let mut out = Vec::new();
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    out.push(MatrixEntry { row: i as u32, col: j as u32, value: v });
                }
            }
        }
        out
    }

    /// Rows ranked by their largest entry, each with the column attaining
    /// it (smaller id on ties). Rows without any co-occurrence are left out.
    pub fn top(&self, n: usize) -> Vec<TopCooccurrence> {
        let mut rows: Vec<TopCooccurrence> = self
            .values
            .iter()
            .enumerate()
            .filter_map(|(i, row)| {
                let (j, &v) = row
                    .iter()
                    .enumerate()
                    .rev()
                    .max_by(|a, b| a.1.total_cmp(b.1))?;
                (v > 0.0).then(|| TopCooccurrence { class: ClassId(i as u32), other: ClassId(j as u32), value: v })
            })
            .collect();
        rows.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.class.cmp(&b.class)));
        rows.truncate(n);
        rows
    }
}

pub fn cooccurrence_matrix(
    annotations: &AnnotationMap,
    index: &DatasetIndex,
    classes: &ClassTable,
    level: Level,
) -> CooccurrenceMatrix {
    let n = axis_len(classes, level);
    let mut hits = vec![vec![0usize; n]; n];
    let mut rows = vec![0usize; n];
    for rec in index.records() {
        let Some(a) = annotations.get(&rec.image) else {
            continue;
        };
        let r = axis(classes, level, rec.dataset_label);
        rows[r] += 1;
        let others: BTreeSet<usize> = a
            .object_labels()
            .filter(|&l| l != rec.dataset_label && classes.contains(l))
            .map(|l| axis(classes, level, l))
            .collect();
        for c in others {
            hits[r][c] += 1;
        }
    }
    let values = hits
        .iter()
        .zip(&rows)
        .map(|(row, &t)| row.iter().map(|&h| if t == 0 { 0.0 } else { h as f64 / t as f64 }).collect())
        .collect();
    CooccurrenceMatrix { level, size: n, values, row_images: rows }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguousPair {
    /// Smaller id of the pair.
    pub a: ClassId,
    pub b: ClassId,
    /// min(mean sf of `b` on images of `a`, mean sf of `a` on images of `b`)
    /// over images where the other label was shown
    pub score: f64,
    pub mean_ab: f64,
    pub mean_ba: f64,
    pub pairwise: BTreeMap<String, PairwiseAccuracy>,
}

/// Class pairs that annotators confuse in both directions, highest score
/// first; ties by class ids. Each direction averages only over images
/// where the other label was shown, and pairs lacking such images in
/// either direction are left out.
pub fn ambiguous_pairs(
    sft: &SelectionFrequencyTable,
    index: &DatasetIndex,
    predictions: &[PredictionSet],
    top_n: usize,
) -> Result<Vec<AmbiguousPair>> {
    // (label of image, other label) -> (sum sf, shown images)
    let mut sums: BTreeMap<(ClassId, ClassId), (f64, usize)> = BTreeMap::new();
    for rec in index.records() {
        for (l, e) in sft.labels_for(&rec.image) {
            if l != rec.dataset_label {
                let s = sums.entry((rec.dataset_label, l)).or_default();
                s.0 += e.sf();
                s.1 += 1;
            }
        }
    }
    let mut pairs = Vec::new();
    for (&(x, y), &(sxy, nxy)) in &sums {
        if x >= y {
            continue;
        }
        let Some(&(syx, nyx)) = sums.get(&(y, x)) else {
            continue;
        };
        let (ab, ba) = (sxy / nxy as f64, syx / nyx as f64);
        pairs.push(AmbiguousPair { a: x, b: y, score: ab.min(ba), mean_ab: ab, mean_ba: ba, pairwise: BTreeMap::new() });
    }
    pairs.sort_by(|p, q| q.score.total_cmp(&p.score).then((p.a, p.b).cmp(&(q.a, q.b))));
    pairs.truncate(top_n);
    for p in &mut pairs {
        for m in predictions {
            p.pairwise.insert(m.model_id.clone(), pairwise_accuracy(m, index, p.a, p.b)?);
        }
    }
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfAccuracyRow {
    pub class: ClassId,
    pub images: usize,
    /// Mean sf of the dataset label over the class's images that have one.
    pub mean_sf: Option<f64>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfAccuracyTable {
    pub model: String,
    pub rows: Vec<SfAccuracyRow>,
    /// Rank correlation between mean sf and accuracy over classes with both.
    pub spearman: Option<f64>,
}

pub fn sf_accuracy_table(sft: &SelectionFrequencyTable, preds: &PredictionSet, index: &DatasetIndex) -> SfAccuracyTable {
    let mut rows = Vec::new();
    for (class, images) in index.images_by_class() {
        let sfs: Vec<f64> = images.iter().filter_map(|i| sft.get(i, class)).collect();
        let correct = images.iter().filter(|i| preds.top1(i) == Some(class)).count();
        rows.push(SfAccuracyRow {
            class,
            images: images.len(),
            mean_sf: (!sfs.is_empty()).then(|| sfs.iter().sum::<f64>() / sfs.len() as f64),
            accuracy: correct as f64 / images.len() as f64,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| Some((r.mean_sf?, r.accuracy))).unzip();
    SfAccuracyTable { model: preds.model_id.clone(), spearman: spearman(&xs, &ys), rows }
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman's rho with average ranks for ties; `None` for fewer than two
/// points or a constant side.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeverSelected {
    pub image: ImageId,
    pub dataset_label: ClassId,
    /// Retained classify responses for the image.
    pub responses: usize,
    /// Most selected label; ties go to the smaller id.
    pub sel: Option<ClassId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MislabeledReport {
    /// Dataset label never affirmed in the contains stage.
    pub sf_zero: Vec<Unverified>,
    /// Dataset label offered in classify but no retained response chose it.
    pub never_selected: Vec<NeverSelected>,
}

pub fn mislabeled_report(
    sft: &SelectionFrequencyTable,
    retained: &[ClassifyResponse],
    index: &DatasetIndex,
) -> Result<MislabeledReport> {
    let mut by_image: BTreeMap<&str, (usize, BTreeMap<ClassId, usize>)> = BTreeMap::new();
    for r in retained {
        if index.label(&r.image).is_none() {
            return Err(Error::UnknownImage(r.image.clone()));
        }
        let e = by_image.entry(r.image.as_str()).or_default();
        e.0 += 1;
        for &l in &r.valid {
            *e.1.entry(l).or_default() += 1;
        }
    }
    let mut never_selected = Vec::new();
    for (image, (n, counts)) in by_image {
        let dataset_label = index.label(image).expect("checked above");
        if counts.contains_key(&dataset_label) {
            continue;
        }
        // max_by_key keeps the last maximum, so walk ids in reverse
        let sel = counts.iter().rev().max_by_key(|(_, &c)| c).map(|(&l, _)| l);
        never_selected.push(NeverSelected { image: image.to_owned(), dataset_label, responses: n, sel });
    }
    Ok(MislabeledReport { sf_zero: detect_unverified(sft, index), never_selected })
}
