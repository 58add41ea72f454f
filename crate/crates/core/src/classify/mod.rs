//! The per-image classify task: build tasks from candidate sets, filter
//! responses, and aggregate them into [`ImageAnnotation`]s.

mod partition;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use partition::{partition_objects, ObjectBlock, ObjectPartition};

use crate::candidates::{CandidateSet, EligibilityDecision};
use crate::ingest::DatasetIndex;
use crate::qc::{DropReason, DroppedResponse, QcReport};
use crate::seed::stream;
use crate::{ClassId, Error, ImageId, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyTask {
    pub task_id: String,
    pub image: ImageId,
    /// Presentation order.
    pub candidates: Vec<ClassId>,
    pub annotators: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub task_id: String,
    pub worker: String,
    pub image: ImageId,
    /// One label per perceived object.
    pub valid: Vec<ClassId>,
    pub main: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qc_flag: Option<DropReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub received_at: Option<u64>,
}

impl ClassifyResponse {
    /// Ingest-time sanity flag: empty selection or a main label that was
    /// not marked valid.
    pub fn sanity_flag(&self) -> Option<DropReason> {
        if self.valid.is_empty() {
            Some(DropReason::EmptyValid)
        } else if !self.main.is_some_and(|m| self.valid.contains(&m)) {
            Some(DropReason::MainNotValid)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Aggregated,
    Auto,
    NoResponses,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image: ImageId,
    pub dataset_label: ClassId,
    pub num_objects: usize,
    pub count_confidence: f64,
    pub main_label: ClassId,
    pub main_confidence: f64,
    pub objects: Vec<ObjectBlock>,
    pub multi_object: bool,
    pub provenance: Provenance,
    /// Voted main label when it differed from its block's label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main_coerced_from: Option<ClassId>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub violation_cost: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl ImageAnnotation {
    /// Single object labeled with the dataset label.
    pub fn auto(image: impl Into<ImageId>, dataset_label: ClassId, provenance: Provenance) -> Self {
        ImageAnnotation {
            image: image.into(),
            dataset_label,
            num_objects: 1,
            count_confidence: 1.0,
            main_label: dataset_label,
            main_confidence: 1.0,
            objects: vec![ObjectBlock {
                label: dataset_label,
                members: vec![dataset_label],
                votes: 0,
            }],
            multi_object: false,
            provenance,
            main_coerced_from: None,
            violation_cost: 0,
            fallback: false,
        }
    }

    pub fn object_labels(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.objects.iter().map(|b| b.label)
    }

    pub fn has_object(&self, label: ClassId) -> bool {
        self.objects.iter().any(|b| b.label == label)
    }

    pub fn block_with_label(&self, label: ClassId) -> Option<usize> {
        self.objects.iter().position(|b| b.label == label)
    }
}

/// One task per eligible image; the others get an automatic single-object
/// annotation. Candidates are shuffled per image from `seed`.
pub fn build_classify_tasks(
    candidates: &[CandidateSet],
    eligibility: &[EligibilityDecision],
    index: &DatasetIndex,
    annotators: usize,
    seed: u64,
) -> Result<(Vec<ClassifyTask>, Vec<ImageAnnotation>)> {
    let eligible: HashMap<&str, bool> = eligibility
        .iter()
        .map(|d| (d.image.as_str(), d.eligible))
        .collect();
    let mut sets: Vec<&CandidateSet> = candidates.iter().collect();
    sets.sort_by(|a, b| a.image.cmp(&b.image));
    let mut tasks = Vec::new();
    let mut auto = Vec::new();
    for set in sets {
        let label = index
            .label(&set.image)
            .ok_or_else(|| Error::UnknownImage(set.image.clone()))?;
        if eligible.get(set.image.as_str()).copied().unwrap_or(false) && set.len() >= 2 {
            let mut order = set.candidates.clone();
            order.shuffle(&mut stream(seed, &[b"classify", set.image.as_bytes()]));
            tasks.push(ClassifyTask {
                task_id: format!("c{:05}", tasks.len()),
                image: set.image.clone(),
                candidates: order,
                annotators,
            });
        } else {
            auto.push(ImageAnnotation::auto(set.image.clone(), label, Provenance::Auto));
        }
    }
    Ok((tasks, auto))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyQcConfig {
    pub worker_flag_share: f64,
}

impl Default for ClassifyQcConfig {
    fn default() -> Self {
        ClassifyQcConfig {
            worker_flag_share: 1.0 / 3.0,
        }
    }
}

/// Drops responses with no valid label, a main label outside the valid
/// set, or labels that were not offered; then drops every response of a
/// worker whose flagged share is strictly above `worker_flag_share`.
pub fn apply_classify_qc(
    tasks: &[ClassifyTask],
    responses: &[ClassifyResponse],
    cfg: &ClassifyQcConfig,
) -> Result<(Vec<ClassifyResponse>, QcReport)> {
    let by_id: HashMap<&str, &ClassifyTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut report = QcReport {
        total: responses.len(),
        ..Default::default()
    };
    let mut flags = Vec::with_capacity(responses.len());
    let mut per_worker: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in responses {
        let task = by_id
            .get(r.task_id.as_str())
            .ok_or_else(|| Error::UnknownTask(r.task_id.clone()))?;
        let flag = r.sanity_flag().or_else(|| {
            r.valid
                .iter()
                .any(|l| !task.candidates.contains(l))
                .then_some(DropReason::LabelNotCandidate)
        });
        let w = per_worker.entry(r.worker.as_str()).or_insert((0, 0));
        w.0 += 1;
        if flag.is_some() {
            w.1 += 1;
        }
        flags.push(flag);
    }
    for (worker, (n, flagged)) in &per_worker {
        if *flagged as f64 / *n as f64 > cfg.worker_flag_share {
            report
                .dropped_workers
                .insert(worker.to_string(), DropReason::WorkerFlaggedShare);
        }
    }
    let mut retained = Vec::new();
    for (r, flag) in responses.iter().zip(flags) {
        let reason = flag.or_else(|| {
            report
                .dropped_workers
                .contains_key(&r.worker)
                .then_some(DropReason::WorkerFlaggedShare)
        });
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteSummary {
    pub num_objects: usize,
    pub count_confidence: f64,
    pub main_label: ClassId,
    pub main_confidence: f64,
}

/// Majority votes over object count and main label.
///
/// Count ties go to the smaller count. Main-label ties go to the label
/// selected as valid by more responses, then to the smaller class id.
/// Returns `None` when there are no responses.
pub fn aggregate_votes(responses: &[&ClassifyResponse]) -> Option<VoteSummary> {
    if responses.is_empty() {
        return None;
    }
    let n = responses.len() as f64;

    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in responses {
        *counts.entry(distinct(&r.valid).len()).or_insert(0) += 1;
    }
    // BTreeMap iterates ascending; keep the first maximum
    let (num_objects, count_votes) = counts
        .iter()
        .fold((0, 0), |best, (&c, &v)| if v > best.1 { (c, v) } else { best });

    let mut selected: BTreeMap<ClassId, usize> = BTreeMap::new();
    let mut mains: BTreeMap<ClassId, usize> = BTreeMap::new();
    for r in responses {
        for l in distinct(&r.valid) {
            *selected.entry(l).or_insert(0) += 1;
        }
        if let Some(m) = r.main {
            *mains.entry(m).or_insert(0) += 1;
        }
    }
    let (&main_label, &main_votes) = mains.iter().max_by(|a, b| {
        a.1.cmp(b.1)
            .then(selected.get(a.0).cmp(&selected.get(b.0)))
            .then(b.0.cmp(a.0))
    })?;
    Some(VoteSummary {
        num_objects,
        count_confidence: count_votes as f64 / n,
        main_label,
        main_confidence: main_votes as f64 / n,
    })
}

fn distinct(labels: &[ClassId]) -> BTreeSet<ClassId> {
    labels.iter().copied().collect()
}

/// Full aggregation for one image: votes, then a partition into the voted
/// number of objects. A voted main label that is not its block's label is
/// replaced by the block label and recorded in `main_coerced_from`.
pub fn annotate_image(image: &str, dataset_label: ClassId, responses: &[&ClassifyResponse]) -> ImageAnnotation {
    let Some(votes) = aggregate_votes(responses) else {
        return ImageAnnotation::auto(image, dataset_label, Provenance::NoResponses);
    };
    let selections: Vec<BTreeSet<ClassId>> = responses.iter().map(|r| distinct(&r.valid)).collect();
    let partition = partition_objects(&selections, votes.num_objects);
    let (main_label, main_coerced_from) = match partition.block_of(votes.main_label) {
        Some(b) if b.label != votes.main_label => (b.label, Some(votes.main_label)),
        _ => (votes.main_label, None),
    };
    let num_objects = partition.blocks.len();
    ImageAnnotation {
        image: image.to_owned(),
        dataset_label,
        num_objects,
        count_confidence: votes.count_confidence,
        main_label,
        main_confidence: votes.main_confidence,
        multi_object: num_objects >= 2,
        objects: partition.blocks,
        provenance: Provenance::Aggregated,
        main_coerced_from,
        violation_cost: partition.violation_cost,
        fallback: partition.fallback,
    }
}

/// Annotates every task's image from the retained responses, merges the
/// automatic annotations, and sorts by image id.
pub fn aggregate_all(
    tasks: &[ClassifyTask],
    retained: &[ClassifyResponse],
    auto: &[ImageAnnotation],
    index: &DatasetIndex,
) -> Result<Vec<ImageAnnotation>> {
    let mut by_task: HashMap<&str, Vec<&ClassifyResponse>> = HashMap::new();
    for r in retained {
        by_task.entry(r.task_id.as_str()).or_default().push(r);
    }
    let mut out: Vec<ImageAnnotation> = auto.to_vec();
    for t in tasks {
        let label = index
            .label(&t.image)
            .ok_or_else(|| Error::UnknownImage(t.image.clone()))?;
        let rs = by_task.get(t.task_id.as_str()).map_or(&[][..], |v| v.as_slice());
        out.push(annotate_image(&t.image, label, rs));
    }
    out.sort_by(|a, b| a.image.cmp(&b.image));
    Ok(out)
}
