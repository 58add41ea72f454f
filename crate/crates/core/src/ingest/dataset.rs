use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::read_jsonl;
use crate::{ClassId, Error, ImageId, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image: ImageId,
    pub dataset_label: ClassId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

/// Images with their original dataset labels, in file order.
#[derive(Clone, Debug, Default)]
pub struct DatasetIndex {
    records: Vec<DatasetRecord>,
    by_id: HashMap<ImageId, usize>,
}

impl DatasetIndex {
    pub fn new(records: Vec<DatasetRecord>, num_classes: usize) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.dataset_label.index() >= num_classes {
                return Err(Error::UnknownClass(r.dataset_label));
            }
            if by_id.insert(r.image.clone(), i).is_some() {
                return Err(Error::DuplicateImage(r.image.clone()));
            }
        }
        Ok(DatasetIndex { records, by_id })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.image.as_str())
    }

    pub fn contains(&self, image: &str) -> bool {
        self.by_id.contains_key(image)
    }

    pub fn label(&self, image: &str) -> Option<ClassId> {
        self.by_id.get(image).map(|&i| self.records[i].dataset_label)
    }

    pub fn record(&self, image: &str) -> Option<&DatasetRecord> {
        self.by_id.get(image).map(|&i| &self.records[i])
    }

    /// Images grouped by dataset label, each list sorted by image id.
    pub fn images_by_class(&self) -> BTreeMap<ClassId, Vec<ImageId>> {
        let mut out: BTreeMap<ClassId, Vec<ImageId>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.dataset_label).or_default().push(r.image.clone());
        }
        for v in out.values_mut() {
            v.sort();
        }
        out
    }

    /// Histogram of images-per-class counts.
    pub fn images_per_class(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for v in self.images_by_class().values() {
            *hist.entry(v.len()).or_insert(0) += 1;
        }
        hist
    }
}

pub fn load_dataset(path: impl AsRef<Path>, num_classes: usize) -> Result<DatasetIndex> {
    DatasetIndex::new(read_jsonl(path)?, num_classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub model: String,
    pub image: ImageId,
    pub topk: Vec<ClassId>,
}

/// One model's ranked predictions (best first).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_id: String,
    pub ranked: BTreeMap<ImageId, Vec<ClassId>>,
    pub declared_top1: Option<f64>,
    pub declared_top5: Option<f64>,
}

impl PredictionSet {
    pub fn new(model_id: impl Into<String>) -> Self {
        PredictionSet {
            model_id: model_id.into(),
            ..Default::default()
        }
    }

    pub fn top1(&self, image: &str) -> Option<ClassId> {
        self.ranked.get(image).and_then(|r| r.first().copied())
    }

    pub fn top_k(&self, image: &str, k: usize) -> Option<&[ClassId]> {
        self.ranked.get(image).map(|r| &r[..k.min(r.len())])
    }

    pub fn records(&self) -> Vec<PredictionRecord> {
        self.ranked
            .iter()
            .map(|(image, topk)| PredictionRecord {
                model: self.model_id.clone(),
                image: image.clone(),
                topk: topk.clone(),
            })
            .collect()
    }
}

/// Images of the dataset with no prediction, per model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub missing: BTreeMap<String, Vec<ImageId>>,
}

/// Loads ranked predictions. Records are grouped by their `model` field, in
/// order of first appearance.
pub fn load_predictions<P: AsRef<Path>>(
    paths: &[P],
    index: &DatasetIndex,
    num_classes: usize,
    k_min: usize,
) -> Result<(Vec<PredictionSet>, Coverage)> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_jsonl::<PredictionRecord>(p)?);
    }
    predictions_from_records(records, index, num_classes, k_min)
}

pub(crate) fn predictions_from_records(
    records: Vec<PredictionRecord>,
    index: &DatasetIndex,
    num_classes: usize,
    k_min: usize,
) -> Result<(Vec<PredictionSet>, Coverage)> {
    let mut sets: Vec<PredictionSet> = Vec::new();
    let mut position: HashMap<String, usize> = HashMap::new();
    for rec in records {
        if !index.contains(&rec.image) {
            return Err(Error::UnknownImage(rec.image));
        }
        if rec.topk.len() < k_min {
            return Err(Error::ShortRanking {
                model: rec.model,
                image: rec.image,
                len: rec.topk.len(),
                min: k_min,
            });
        }
        let mut seen = HashSet::new();
        for &c in &rec.topk {
            if c.index() >= num_classes {
                return Err(Error::UnknownClass(c));
            }
            if !seen.insert(c) {
                return Err(Error::DuplicateRank {
                    model: rec.model,
                    image: rec.image,
                    class: c,
                });
            }
        }
        let slot = *position.entry(rec.model.clone()).or_insert_with(|| {
            sets.push(PredictionSet::new(rec.model.clone()));
            sets.len() - 1
        });
        if sets[slot].ranked.insert(rec.image.clone(), rec.topk).is_some() {
            return Err(Error::DuplicateImage(rec.image));
        }
    }
    let mut coverage = Coverage::default();
    for set in &sets {
        let missing: Vec<ImageId> = index
            .images()
            .filter(|i| !set.ranked.contains_key(*i))
            .map(str::to_owned)
            .collect();
        if !missing.is_empty() {
            coverage.missing.insert(set.model_id.clone(), missing);
        }
    }
    Ok((sets, coverage))
}

#[derive(Deserialize)]
struct DeclaredAccuracy {
    model: String,
    top1: Option<f64>,
    top5: Option<f64>,
}

/// Attaches declared accuracies from `{"model", "top1", "top5"}` lines.
pub fn load_declared_accuracy(path: impl AsRef<Path>, sets: &mut [PredictionSet]) -> Result<()> {
    for d in read_jsonl::<DeclaredAccuracy>(path)? {
        if let Some(s) = sets.iter_mut().find(|s| s.model_id == d.model) {
            s.declared_top1 = d.top1;
            s.declared_top5 = d.top5;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub image: ImageId,
    pub labels: Vec<ClassId>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unpredicted: bool,
}

/// Per-image potential labels: every model's top-5 plus the dataset label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PotentialLabelSet {
    pools: BTreeMap<ImageId, BTreeSet<ClassId>>,
    /// Images no prediction file covers; their pool is the dataset label alone.
    pub unpredicted: Vec<ImageId>,
}

impl PotentialLabelSet {
    pub fn from_pools(pools: BTreeMap<ImageId, BTreeSet<ClassId>>) -> Self {
        PotentialLabelSet {
            pools,
            unpredicted: Vec::new(),
        }
    }

    pub fn get(&self, image: &str) -> Option<&BTreeSet<ClassId>> {
        self.pools.get(image)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ImageId, &BTreeSet<ClassId>)> {
        self.pools.iter()
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    /// Pool size -> number of images.
    pub fn size_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for p in self.pools.values() {
            *hist.entry(p.len()).or_insert(0) += 1;
        }
        hist
    }

    pub fn mean_size(&self) -> f64 {
        if self.pools.is_empty() {
            return 0.0;
        }
        self.pools.values().map(|p| p.len()).sum::<usize>() as f64 / self.pools.len() as f64
    }

    pub fn records(&self) -> Vec<PoolRecord> {
        let unpredicted: HashSet<&ImageId> = self.unpredicted.iter().collect();
        self.pools
            .iter()
            .map(|(image, labels)| PoolRecord {
                image: image.clone(),
                labels: labels.iter().copied().collect(),
                unpredicted: unpredicted.contains(image),
            })
            .collect()
    }

    pub fn from_records(records: Vec<PoolRecord>) -> Self {
        let mut out = PotentialLabelSet::default();
        for r in records {
            if r.unpredicted {
                out.unpredicted.push(r.image.clone());
            }
            out.pools.insert(r.image, r.labels.into_iter().collect());
        }
        out
    }
}

const POOL_TOP_K: usize = 5;

pub fn build_potential_labels(preds: &[PredictionSet], index: &DatasetIndex) -> Result<PotentialLabelSet> {
    if preds.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut out = PotentialLabelSet::default();
    for rec in index.records() {
        let mut pool = BTreeSet::from([rec.dataset_label]);
        let mut predicted = false;
        for set in preds {
            if let Some(top) = set.top_k(&rec.image, POOL_TOP_K) {
                predicted = true;
                pool.extend(top.iter().copied());
            }
        }
        if !predicted {
            out.unpredicted.push(rec.image.clone());
        }
        out.pools.insert(rec.image.clone(), pool);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(n: usize) -> DatasetIndex {
        DatasetIndex::new(
            (0..n)
                .map(|i| DatasetRecord {
                    image: format!("img{i}"),
                    dataset_label: ClassId(0),
                    url: None,
                })
                .collect(),
            100,
        )
        .unwrap()
    }

    fn rec(model: &str, image: &str, topk: &[u32]) -> PredictionRecord {
        PredictionRecord {
            model: model.into(),
            image: image.into(),
            topk: topk.iter().map(|&c| ClassId(c)).collect(),
        }
    }

    #[test]
    fn single_model_single_image() {
        let idx = index(1);
        let (sets, cov) =
            predictions_from_records(vec![rec("m", "img0", &[0, 1, 2, 3, 4])], &idx, 100, 5).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].top1("img0"), Some(ClassId(0)));
        assert!(cov.missing.is_empty());
    }

    #[test]
    fn ten_models_give_ten_sets_in_order() {
        let idx = index(3);
        let mut recs = Vec::new();
        for m in 0..10 {
            for i in 0..3 {
                recs.push(rec(&format!("model{m}"), &format!("img{i}"), &[1, 2, 3, 4, 5]));
            }
        }
        let (sets, _) = predictions_from_records(recs, &idx, 100, 5).unwrap();
        assert_eq!(sets.len(), 10);
        assert_eq!(sets[3].model_id, "model3");
    }

    #[test]
    fn duplicate_and_short_rankings_rejected() {
        let idx = index(1);
        let dup = predictions_from_records(vec![rec("m", "img0", &[0, 1, 1, 3, 4])], &idx, 100, 5);
        assert!(matches!(dup, Err(Error::DuplicateRank { class: ClassId(1), .. })));
        let short = predictions_from_records(vec![rec("m", "img0", &[0, 1, 2])], &idx, 100, 5);
        assert!(matches!(short, Err(Error::ShortRanking { len: 3, .. })));
    }

    #[test]
    fn missing_images_reported() {
        let idx = index(2);
        let (_, cov) = predictions_from_records(vec![rec("m", "img0", &[0, 1, 2, 3, 4])], &idx, 100, 5).unwrap();
        assert_eq!(cov.missing["m"], vec!["img1".to_string()]);
    }

    #[test]
    fn full_overlap_pool() {
        let idx = index(1);
        let recs = (0..10).map(|m| rec(&format!("m{m}"), "img0", &[0, 1, 2, 3, 4])).collect();
        let (sets, _) = predictions_from_records(recs, &idx, 100, 5).unwrap();
        let pool = build_potential_labels(&sets, &idx).unwrap();
        assert_eq!(pool.get("img0").unwrap().len(), 5);
    }

    #[test]
    fn disjoint_pools_plus_dataset_label() {
        let idx = index(1);
        let recs = (0..10u32)
            .map(|m| {
                let base = 1 + 5 * m;
                rec(&format!("m{m}"), "img0", &[base, base + 1, base + 2, base + 3, base + 4, 99])
            })
            .collect();
        let (sets, _) = predictions_from_records(recs, &idx, 100, 5).unwrap();
        let pool = build_potential_labels(&sets, &idx).unwrap();
        let p = pool.get("img0").unwrap();
        assert_eq!(p.len(), 51);
        assert!(p.contains(&ClassId(0)));
        assert!(!p.contains(&ClassId(99)), "only the top five ranks are pooled");
    }

    #[test]
    fn unpredicted_image_falls_back_to_dataset_label() {
        let idx = index(2);
        let (sets, _) = predictions_from_records(vec![rec("m", "img0", &[1, 2, 3, 4, 5])], &idx, 100, 5).unwrap();
        let pool = build_potential_labels(&sets, &idx).unwrap();
        assert_eq!(pool.get("img1").unwrap().iter().copied().collect::<Vec<_>>(), vec![ClassId(0)]);
        assert_eq!(pool.unpredicted, vec!["img1".to_string()]);
        assert_eq!(pool.size_histogram(), BTreeMap::from([(1, 1), (6, 1)]));
    }

    #[test]
    fn duplicate_dataset_image_rejected() {
        let recs = vec![
            DatasetRecord { image: "a".into(), dataset_label: ClassId(0), url: None },
            DatasetRecord { image: "a".into(), dataset_label: ClassId(1), url: None },
        ];
        assert!(matches!(DatasetIndex::new(recs, 2), Err(Error::DuplicateImage(_))));
    }
}
