//! Quality-control report shared by both annotation stages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Worker missed most controls on too many of their grids.
    WorkerLowControlRate,
    /// This grid response selected too few controls.
    TaskLowControlRate,
    /// Selected images that were not on the grid.
    SelectionNotShown,
    EmptyValid,
    MainNotValid,
    LabelNotCandidate,
    /// Worker had too many flagged classify responses.
    WorkerFlaggedShare,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DroppedResponse {
    pub task_id: String,
    pub worker: String,
    pub reason: DropReason,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub dropped_workers: BTreeMap<String, DropReason>,
    /// Sorted by (task_id, worker).
    pub dropped_responses: Vec<DroppedResponse>,
    pub total: usize,
    pub retained: usize,
}

impl QcReport {
    pub fn dropped_count(&self) -> usize {
        self.dropped_responses.len()
    }

    pub(crate) fn finish(&mut self) {
        self.dropped_responses.sort();
    }
}
