//! Label validation through image grids.
//!
//! Every potential label of an image is checked by showing the image in a
//! grid of [`GridConfig::grid_size`] images under that label as the query.
//! A few of the grid slots are *controls*: images whose dataset label is the
//! query, so a diligent annotator is expected to select them. Control
//! selection drives quality control, and the surviving responses give each
//! (image, label) pair a selection frequency.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ingest::{DatasetIndex, PotentialLabelSet};
use crate::qc::{DropReason, DroppedResponse, QcReport};
use crate::seed::stream;
use crate::{ClassId, Error, ImageId, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub grid_size: usize,
    pub min_controls: usize,
    pub annotators_per_grid: usize,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            grid_size: 48,
            min_controls: 5,
            annotators_per_grid: 9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTask {
    pub task_id: String,
    pub query_label: ClassId,
    pub shown: Vec<ImageId>,
    pub controls: Vec<ImageId>,
    /// Padding images whose pool lacks the query label; only used when the
    /// query class has too few images to fill the grid with controls.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fillers: Vec<ImageId>,
    #[serde(default)]
    pub seed: u64,
}

impl GridTask {
    /// Shown images that are neither controls nor fillers.
    pub fn candidates(&self) -> impl Iterator<Item = &ImageId> {
        self.shown
            .iter()
            .filter(|i| !self.controls.contains(i) && !self.fillers.contains(i))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridResponse {
    pub task_id: String,
    pub worker: String,
    pub selected: Vec<ImageId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub received_at: Option<u64>,
}

/// Builds the grids for every label that occurs in some pool.
///
/// For query label `L`, the images to validate are those with `L` in their
/// pool and a different dataset label. They are shuffled and cut into
/// chunks of at most `grid_size - min_controls`. Each chunk is padded with
/// distinct controls (images labeled `L`), cycling through a shuffled list
/// of them so every control-eligible image is shown at least once; controls
/// repeat across grids but never within one. When the class has fewer
/// images than the padding needs, the rest of the grid is filled with
/// images that do not have `L` in their pool.
pub fn build_grids(
    pool: &PotentialLabelSet,
    index: &DatasetIndex,
    cfg: &GridConfig,
) -> Result<Vec<GridTask>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let labels: BTreeSet<ClassId> = pool.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let by_class = index.images_by_class();
    let mut to_check: BTreeMap<ClassId, Vec<ImageId>> = BTreeMap::new();
    for (image, labels) in pool.iter() {
        let own = index.label(image);
        for &l in labels {
            if Some(l) != own {
                to_check.entry(l).or_default().push(image.clone());
            }
        }
    }
    let all_images: Vec<&str> = {
        let mut v: Vec<&str> = index.images().collect();
        v.sort_unstable();
        v
    };
    let chunk_cap = cfg.grid_size.saturating_sub(cfg.min_controls).max(1);

    let mut grids = Vec::new();
    for &label in &labels {
        let mut rng = stream(cfg.seed, &[b"grid", &label.0.to_le_bytes()]);
        let empty = Vec::new();
        let eligible = by_class.get(&label).unwrap_or(&empty);
        if eligible.len() < cfg.min_controls {
            return Err(Error::InsufficientControls {
                label,
                available: eligible.len(),
                required: cfg.min_controls,
            });
        }
        let mut candidates = to_check.remove(&label).unwrap_or_default();
        candidates.sort();
        candidates.shuffle(&mut rng);
        let mut control_cycle = eligible.clone();
        control_cycle.shuffle(&mut rng);
        let mut cursor = 0;

        let chunks: Vec<&[ImageId]> = if candidates.is_empty() {
            vec![&[]]
        } else {
            candidates.chunks(chunk_cap).collect()
        };
        for chunk in chunks {
            let need = cfg.grid_size - chunk.len();
            let n_controls = need.min(control_cycle.len());
            let controls: Vec<ImageId> = (0..n_controls)
                .map(|i| control_cycle[(cursor + i) % control_cycle.len()].clone())
                .collect();
            cursor = (cursor + n_controls) % control_cycle.len();

            let n_fill = need - n_controls;
            let fillers: Vec<ImageId> = if n_fill == 0 {
                Vec::new()
            } else {
                let pool_of = |i: &str| pool.get(i).map_or(false, |p| p.contains(&label));
                let outside: Vec<&str> = all_images
                    .iter()
                    .copied()
                    .filter(|i| !pool_of(i) && index.label(i) != Some(label))
                    .collect();
                if outside.len() < n_fill {
                    return Err(Error::InsufficientImages {
                        label,
                        grid_size: cfg.grid_size,
                    });
                }
                outside
                    .choose_multiple(&mut rng, n_fill)
                    .map(|s| s.to_string())
                    .collect()
            };

            let mut shown: Vec<ImageId> = chunk.to_vec();
            shown.extend(controls.iter().cloned());
            shown.extend(fillers.iter().cloned());
            shown.shuffle(&mut rng);
            grids.push(GridTask {
                task_id: String::new(),
                query_label: label,
                shown,
                controls,
                fillers,
                seed: cfg.seed,
            });
        }
    }
    let mut order_rng = stream(cfg.seed, &[b"grid-order"]);
    grids.shuffle(&mut order_rng);
    for (i, g) in grids.iter_mut().enumerate() {
        g.task_id = format!("g{i:05}");
    }
    Ok(grids)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainsQcConfig {
    pub worker_control_rate: f64,
    pub worker_bad_share: f64,
    pub task_control_rate: f64,
}

impl Default for ContainsQcConfig {
    fn default() -> Self {
        ContainsQcConfig {
            worker_control_rate: 0.20,
            worker_bad_share: 0.50,
            task_control_rate: 0.40,
        }
    }
}

/// Fraction of the grid's controls the response selected.
pub fn control_rate(task: &GridTask, response: &GridResponse) -> f64 {
    if task.controls.is_empty() {
        return 1.0;
    }
    let selected: HashSet<&str> = response.selected.iter().map(String::as_str).collect();
    let hit = task
        .controls
        .iter()
        .filter(|c| selected.contains(c.as_str()))
        .count();
    hit as f64 / task.controls.len() as f64
}

/// Two-pass filter: first whole workers, then single responses.
///
/// A worker is dropped when the share of their responses with a control
/// rate strictly below `worker_control_rate` is at least
/// `worker_bad_share`. Of the remaining responses, those with a control rate
/// strictly below `task_control_rate` are dropped.
pub fn apply_contains_qc(
    tasks: &[GridTask],
    responses: &[GridResponse],
    cfg: &ContainsQcConfig,
) -> Result<(Vec<GridResponse>, QcReport)> {
    let by_id: HashMap<&str, &GridTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut report = QcReport {
        total: responses.len(),
        ..Default::default()
    };

    let mut rates = Vec::with_capacity(responses.len());
    let mut per_worker: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in responses {
        let task = by_id
            .get(r.task_id.as_str())
            .ok_or_else(|| Error::UnknownTask(r.task_id.clone()))?;
        let shown: HashSet<&str> = task.shown.iter().map(String::as_str).collect();
        let valid = r.selected.iter().all(|s| shown.contains(s.as_str()));
        let rate = control_rate(task, r);
        rates.push((rate, valid));
        let w = per_worker.entry(r.worker.as_str()).or_insert((0, 0));
        w.0 += 1;
        if rate < cfg.worker_control_rate {
            w.1 += 1;
        }
    }
    for (worker, (n, bad)) in &per_worker {
        if *bad as f64 / *n as f64 >= cfg.worker_bad_share {
            report
                .dropped_workers
                .insert(worker.to_string(), DropReason::WorkerLowControlRate);
        }
    }

    let mut retained = Vec::new();
    for (r, &(rate, valid)) in responses.iter().zip(&rates) {
        let reason = if report.dropped_workers.contains_key(&r.worker) {
            Some(DropReason::WorkerLowControlRate)
        } else if !valid {
            Some(DropReason::SelectionNotShown)
        } else if rate < cfg.task_control_rate {
            Some(DropReason::TaskLowControlRate)
        } else {
            None
        };
        match reason {
            Some(reason) => report.dropped_responses.push(DroppedResponse {
                task_id: r.task_id.clone(),
                worker: r.worker.clone(),
                reason,
            }),
            None => retained.push(r.clone()),
        }
    }
    report.retained = retained.len();
    report.finish();
    Ok((retained, report))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfEntry {
    pub affirmed: u32,
    pub shown_to: u32,
}

impl SfEntry {
    pub fn sf(&self) -> f64 {
        self.affirmed as f64 / self.shown_to as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfRecord {
    pub image: ImageId,
    pub label: ClassId,
    pub affirmed: u32,
    pub shown_to: u32,
    pub sf: f64,
}

/// Selection frequency per (image, label). Pairs never shown to a retained
/// annotator are absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectionFrequencyTable {
    entries: BTreeMap<(ImageId, ClassId), SfEntry>,
    /// Grids left without any retained response.
    pub unanswered: Vec<String>,
}

impl SelectionFrequencyTable {
    pub fn entry(&self, image: &str, label: ClassId) -> Option<SfEntry> {
        // BTreeMap keyed by owned String; a borrowed tuple lookup is not possible
        self.entries.get(&(image.to_owned(), label)).copied()
    }

    pub fn get(&self, image: &str, label: ClassId) -> Option<f64> {
        self.entry(image, label).map(|e| e.sf())
    }

    /// Absent pairs read as 0.
    pub fn get_or_zero(&self, image: &str, label: ClassId) -> f64 {
        self.get(image, label).unwrap_or(0.0)
    }

    /// All labels with an entry for `image`, ascending.
    pub fn labels_for<'a>(&'a self, image: &str) -> impl Iterator<Item = (ClassId, SfEntry)> + 'a {
        let lo = (image.to_owned(), ClassId(0));
        let hi = (image.to_owned(), ClassId(u32::MAX));
        self.entries.range(lo..=hi).map(|((_, l), e)| (*l, *e))
    }

    pub fn insert(&mut self, image: impl Into<ImageId>, label: ClassId, entry: SfEntry) {
        self.entries.insert((image.into(), label), entry);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ClassId, SfEntry)> {
        self.entries.iter().map(|((i, l), e)| (i.as_str(), *l, *e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> Vec<SfRecord> {
        self.iter()
            .map(|(image, label, e)| SfRecord {
                image: image.to_owned(),
                label,
                affirmed: e.affirmed,
                shown_to: e.shown_to,
                sf: e.sf(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<SfRecord>) -> Self {
        let mut t = SelectionFrequencyTable::default();
        for r in records {
            t.insert(
                r.image,
                r.label,
                SfEntry {
                    affirmed: r.affirmed,
                    shown_to: r.shown_to,
                },
            );
        }
        t
    }
}

/// Counts, for every shown (image, query label) pair, how many retained
/// responses saw it and how many selected it. An image shown in several
/// grids for the same label (controls) accumulates across them.
pub fn compute_selection_frequencies(
    tasks: &[GridTask],
    retained: &[GridResponse],
) -> SelectionFrequencyTable {
    let mut by_task: HashMap<&str, Vec<&GridResponse>> = HashMap::new();
    for r in retained {
        by_task.entry(r.task_id.as_str()).or_default().push(r);
    }
    let mut table = SelectionFrequencyTable::default();
    for task in tasks {
        let responses = by_task.get(task.task_id.as_str()).map_or(&[][..], |v| v.as_slice());
        if responses.is_empty() {
            table.unanswered.push(task.task_id.clone());
            continue;
        }
        let selected: Vec<HashSet<&str>> = responses
            .iter()
            .map(|r| r.selected.iter().map(String::as_str).collect())
            .collect();
        for image in &task.shown {
            let e = table
                .entries
                .entry((image.clone(), task.query_label))
                .or_default();
            e.shown_to += responses.len() as u32;
            e.affirmed += selected.iter().filter(|s| s.contains(image.as_str())).count() as u32;
        }
    }
    table.unanswered.sort();
    table
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeSfRow {
    pub image: ImageId,
    /// One count per threshold.
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeSfReport {
    pub thresholds: Vec<f64>,
    pub rows: Vec<RelativeSfRow>,
    /// Dataset label never affirmed; see [`detect_unverified`].
    pub excluded: Vec<ImageId>,
    /// Dataset label never shown to a retained annotator.
    pub missing: Vec<ImageId>,
}

impl RelativeSfReport {
    /// For each threshold: number of other labels -> number of images.
    pub fn histograms(&self) -> Vec<BTreeMap<usize, usize>> {
        (0..self.thresholds.len())
            .map(|t| {
                let mut h = BTreeMap::new();
                for r in &self.rows {
                    *h.entry(r.counts[t]).or_insert(0) += 1;
                }
                h
            })
            .collect()
    }

    /// Fraction of reported images with at least one other label at threshold `t`.
    pub fn share_with_other(&self, t: usize) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.counts[t] > 0).count() as f64 / self.rows.len() as f64
    }
}

pub const RELATIVE_SF_THRESHOLDS: [f64; 4] = [1.0, 0.75, 0.5, 0.25];

const SF_EPS: f64 = 1e-12;

/// Per image, how many non-dataset labels reach `t * sf(dataset label)`.
pub fn relative_sf_report(
    sft: &SelectionFrequencyTable,
    index: &DatasetIndex,
    thresholds: &[f64],
) -> RelativeSfReport {
    let mut report = RelativeSfReport {
        thresholds: thresholds.to_vec(),
        rows: Vec::new(),
        excluded: Vec::new(),
        missing: Vec::new(),
    };
    let mut records: Vec<_> = index.records().iter().collect();
    records.sort_by(|a, b| a.image.cmp(&b.image));
    for rec in records {
        let Some(own) = sft.get(&rec.image, rec.dataset_label) else {
            report.missing.push(rec.image.clone());
            continue;
        };
        if own == 0.0 {
            report.excluded.push(rec.image.clone());
            continue;
        }
        let others: Vec<f64> = sft
            .labels_for(&rec.image)
            .filter(|(l, _)| *l != rec.dataset_label)
            .map(|(_, e)| e.sf())
            .collect();
        let counts = thresholds
            .iter()
            .map(|t| others.iter().filter(|&&s| s >= t * own - SF_EPS).count())
            .collect();
        report.rows.push(RelativeSfRow {
            image: rec.image.clone(),
            counts,
        });
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unverified {
    pub image: ImageId,
    pub dataset_label: ClassId,
    /// Most selected other label, if any other label was affirmed.
    pub sel: Option<ClassId>,
    pub sel_sf: Option<f64>,
}

/// Images whose dataset label no retained annotator affirmed.
pub fn detect_unverified(sft: &SelectionFrequencyTable, index: &DatasetIndex) -> Vec<Unverified> {
    let mut out: Vec<Unverified> = index
        .records()
        .iter()
        .filter(|r| sft.get(&r.image, r.dataset_label) == Some(0.0))
        .map(|r| {
            let best = sft
                .labels_for(&r.image)
                .filter(|(l, e)| *l != r.dataset_label && e.affirmed > 0)
                .map(|(l, e)| (l, e.sf()))
                .fold(None::<(ClassId, f64)>, |acc, (l, s)| match acc {
                    Some((_, bs)) if bs >= s => acc,
                    _ => Some((l, s)),
                });
            Unverified {
                image: r.image.clone(),
                dataset_label: r.dataset_label,
                sel: best.map(|b| b.0),
                sel_sf: best.map(|b| b.1),
            }
        })
        .collect();
    out.sort_by(|a, b| a.image.cmp(&b.image));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DatasetRecord;

    fn grid(id: &str, controls: &[&str], others: &[&str]) -> GridTask {
        let controls: Vec<String> = controls.iter().map(|s| s.to_string()).collect();
        let mut shown = controls.clone();
        shown.extend(others.iter().map(|s| s.to_string()));
        GridTask {
            task_id: id.into(),
            query_label: ClassId(0),
            shown,
            controls,
            fillers: vec![],
            seed: 0,
        }
    }

    fn resp(task: &str, worker: &str, selected: &[&str]) -> GridResponse {
        GridResponse {
            task_id: task.into(),
            worker: worker.into(),
            selected: selected.iter().map(|s| s.to_string()).collect(),
            received_at: None,
        }
    }

    const TEN: [&str; 10] = ["c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9"];
    const TWENTY: [&str; 20] = [
        "c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9", "c10", "c11", "c12", "c13",
        "c14", "c15", "c16", "c17", "c18", "c19",
    ];

    #[test]
    fn worker_with_half_bad_tasks_dropped_entirely() {
        let tasks: Vec<GridTask> = (0..4).map(|i| grid(&format!("t{i}"), &TWENTY, &["x"])).collect();
        // control rates 0.10, 0.15, 0.60, 0.80
        let responses = vec![
            resp("t0", "w", &TWENTY[..2]),
            resp("t1", "w", &TWENTY[..3]),
            resp("t2", "w", &TWENTY[..12]),
            resp("t3", "w", &TWENTY[..16]),
        ];
        let (kept, report) = apply_contains_qc(&tasks, &responses, &Default::default()).unwrap();
        assert!(kept.is_empty());
        assert_eq!(report.dropped_workers.len(), 1);
        assert_eq!(report.dropped_count(), 4);
    }

    #[test]
    fn worker_kept_single_task_dropped() {
        let tasks: Vec<GridTask> = (0..2).map(|i| grid(&format!("t{i}"), &TEN, &["x"])).collect();
        let responses = vec![resp("t0", "w", &TEN[..9]), resp("t1", "w", &TEN[..3])];
        let (kept, report) = apply_contains_qc(&tasks, &responses, &Default::default()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].task_id, "t0");
        assert!(report.dropped_workers.is_empty());
        assert_eq!(report.dropped_responses[0].reason, DropReason::TaskLowControlRate);
    }

    #[test]
    fn perfect_workers_untouched() {
        let tasks = vec![grid("t0", &TEN, &["x"])];
        let responses: Vec<_> = (0..9).map(|w| resp("t0", &format!("w{w}"), &TEN)).collect();
        let (kept, report) = apply_contains_qc(&tasks, &responses, &Default::default()).unwrap();
        assert_eq!(kept.len(), 9);
        assert_eq!(report.dropped_count(), 0);
    }

    #[test]
    fn unknown_task_is_an_error() {
        let err = apply_contains_qc(&[], &[resp("nope", "w", &[])], &Default::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownTask(_)));
    }

    #[test]
    fn empty_input_empty_output() {
        let (kept, report) = apply_contains_qc(&[], &[], &Default::default()).unwrap();
        assert!(kept.is_empty());
        assert_eq!(report.total, 0);
    }

    #[test]
    fn sf_arithmetic() {
        let tasks = vec![grid("t0", &["c0"], &["a", "b"])];
        let mut rs: Vec<_> = (0..9)
            .map(|w| resp("t0", &format!("w{w}"), if w < 3 { &["c0", "a"] } else { &["c0"] }))
            .collect();
        let t = compute_selection_frequencies(&tasks, &rs);
        assert_eq!(t.get("a", ClassId(0)), Some(1.0 / 3.0));
        assert_eq!(t.get("b", ClassId(0)), Some(0.0));
        assert_eq!(t.get("b", ClassId(1)), None);

        // two responses removed by QC: denominator shrinks
        rs.truncate(7);
        for r in rs.iter_mut() {
            r.selected.push("b".into());
        }
        let t = compute_selection_frequencies(&tasks, &rs);
        assert_eq!(t.entry("b", ClassId(0)), Some(SfEntry { affirmed: 7, shown_to: 7 }));
        assert_eq!(t.get("b", ClassId(0)), Some(1.0));
    }

    #[test]
    fn unanswered_grid_flagged() {
        let tasks = vec![grid("t0", &["c0"], &["a"])];
        let t = compute_selection_frequencies(&tasks, &[]);
        assert!(t.is_empty());
        assert_eq!(t.unanswered, vec!["t0".to_string()]);
    }

    fn sft(rows: &[(&str, u32, u32)]) -> SelectionFrequencyTable {
        let mut t = SelectionFrequencyTable::default();
        for &(img, label, affirmed) in rows {
            t.insert(img, ClassId(label), SfEntry { affirmed, shown_to: 10 });
        }
        t
    }

    fn index(rows: &[(&str, u32)]) -> DatasetIndex {
        DatasetIndex::new(
            rows.iter()
                .map(|&(i, l)| DatasetRecord {
                    image: i.into(),
                    dataset_label: ClassId(l),
                    url: None,
                })
                .collect(),
            100,
        )
        .unwrap()
    }

    #[test]
    fn relative_counts() {
        let t = sft(&[("a", 0, 8), ("a", 1, 8), ("a", 2, 5), ("a", 3, 1)]);
        let r = relative_sf_report(&t, &index(&[("a", 0)]), &RELATIVE_SF_THRESHOLDS);
        assert_eq!(r.rows[0].counts, vec![1, 1, 2, 2]);

        let t = sft(&[("a", 0, 8)]);
        let r = relative_sf_report(&t, &index(&[("a", 0)]), &RELATIVE_SF_THRESHOLDS);
        assert_eq!(r.rows[0].counts, vec![0, 0, 0, 0]);
    }

    #[test]
    fn zero_dataset_sf_excluded_and_flagged() {
        let t = sft(&[("a", 0, 0), ("a", 5, 9), ("a", 6, 2), ("b", 1, 1)]);
        let idx = index(&[("a", 0), ("b", 1)]);
        let r = relative_sf_report(&t, &idx, &RELATIVE_SF_THRESHOLDS);
        assert_eq!(r.excluded, vec!["a".to_string()]);
        let u = detect_unverified(&t, &idx);
        assert_eq!(u.len(), 1);
        assert_eq!(u[0].sel, Some(ClassId(5)));
        assert_eq!(u[0].sel_sf, Some(0.9));
    }
}
