//! Stage glue shared by the CLI, the service and the closed-loop tests.

use crate::candidates::{classify_eligible, select_candidates, CandidateSet, EligibilityDecision};
use crate::classify::{aggregate_all, apply_classify_qc, build_classify_tasks, ClassifyTask, ImageAnnotation};
use crate::contains::{apply_contains_qc, build_grids, compute_selection_frequencies, GridTask, SelectionFrequencyTable};
use crate::ingest::{build_potential_labels, ClassDistances, DatasetIndex, PotentialLabelSet};
use crate::qc::QcReport;
use crate::simulate::{simulate_classify, simulate_contains, AnnotatorModel, SyntheticDataset};
use crate::{Error, PipelineConfig, Result};

/// Candidate sets and eligibility for every image of the index, in index
/// order.
pub fn select_all_candidates(
    index: &DatasetIndex,
    pool: &PotentialLabelSet,
    sft: &SelectionFrequencyTable,
    distances: &ClassDistances,
    cfg: &PipelineConfig,
) -> Result<(Vec<CandidateSet>, Vec<EligibilityDecision>)> {
    let (ccfg, ecfg) = (cfg.candidates(), cfg.eligibility());
    let mut sets = Vec::with_capacity(index.len());
    let mut decisions = Vec::with_capacity(index.len());
    for rec in index.records() {
        let labels = pool
            .get(&rec.image)
            .ok_or_else(|| Error::UnknownImage(rec.image.clone()))?;
        let set = select_candidates(&rec.image, rec.dataset_label, sft, labels, distances, &ccfg);
        decisions.push(classify_eligible(&rec.image, rec.dataset_label, sft, &set, &ecfg));
        sets.push(set);
    }
    Ok((sets, decisions))
}

/// Every intermediate artifact of one simulated run.
#[derive(Clone, Debug)]
pub struct SimulatedRun {
    pub pool: PotentialLabelSet,
    pub grids: Vec<GridTask>,
    pub contains_qc: QcReport,
    pub sft: SelectionFrequencyTable,
    pub candidates: Vec<CandidateSet>,
    pub eligibility: Vec<EligibilityDecision>,
    pub tasks: Vec<ClassifyTask>,
    pub classify_qc: QcReport,
    pub annotations: Vec<ImageAnnotation>,
}

/// Runs both stages end to end with simulated annotators drawn from a pool
/// of `n_workers`.
pub fn run_simulated(
    data: &SyntheticDataset,
    model: &AnnotatorModel,
    cfg: &PipelineConfig,
    n_workers: usize,
) -> Result<SimulatedRun> {
    cfg.validate()?;
    let distances = ClassDistances::new(&data.hierarchy, &data.classes)?;
    let pool = build_potential_labels(&data.predictions, &data.index)?;
    let grids = build_grids(&pool, &data.index, &cfg.grid())?;
    let responses = simulate_contains(&data.world, &grids, &distances, model, cfg.annotators, n_workers)?;
    let (retained, contains_qc) = apply_contains_qc(&grids, &responses, &cfg.contains_qc())?;
    let sft = compute_selection_frequencies(&grids, &retained);
    let (candidates, eligibility) = select_all_candidates(&data.index, &pool, &sft, &distances, cfg)?;
    let (tasks, auto) = build_classify_tasks(&candidates, &eligibility, &data.index, cfg.annotators, cfg.seed)?;
    let responses = simulate_classify(&data.world, &tasks, &distances, model, n_workers)?;
    let (retained, classify_qc) = apply_classify_qc(&tasks, &responses, &cfg.classify_qc())?;
    let annotations = aggregate_all(&tasks, &retained, &auto, &data.index)?;
    Ok(SimulatedRun {
        pool,
        grids,
        contains_qc,
        sft,
        candidates,
        eligibility,
        tasks,
        classify_qc,
        annotations,
    })
}
