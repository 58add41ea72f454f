//! Choosing the candidate labels shown in the classify task, and deciding
//! which images need that task at all.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::contains::SelectionFrequencyTable;
use crate::ingest::ClassDistances;
use crate::{ClassId, ImageId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub sf_high: f64,
    pub wn_far: u32,
    pub min_cands: usize,
    pub trunc: usize,
    pub in_sf_floor: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            sf_high: 0.5,
            wn_far: 5,
            min_cands: 5,
            trunc: 6,
            in_sf_floor: 0.125,
        }
    }
}

/// Which selection rule admitted a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DatasetLabel,
    HighSf,
    FarFromDatasetLabel,
    Backfill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub image: ImageId,
    /// Dataset label first, then in order of admission.
    pub candidates: Vec<ClassId>,
    pub provenance: BTreeMap<ClassId, Rule>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
    /// Oversized set kept whole because a label beyond the cut was affirmed
    /// at least as often as the dataset label.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exempt: bool,
}

impl CandidateSet {
    pub fn dataset_label(&self) -> ClassId {
        self.candidates[0]
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

fn by_sf_desc(sf: impl Fn(ClassId) -> f64) -> impl Fn(&ClassId, &ClassId) -> std::cmp::Ordering {
    move |a, b| sf(*b).total_cmp(&sf(*a)).then(a.cmp(b))
}

/// Applies the five selection rules in order:
///
/// 1. the dataset label, unconditionally;
/// 2. pool labels with sf at least `sf_high`;
/// 3. pool labels with nonzero sf more than `wn_far` hierarchy hops from
///    the dataset label (disconnected counts as far);
/// 4. while fewer than `min_cands`, the remaining nonzero-sf pool labels
///    by descending sf;
/// 5. above `trunc` labels, cut back to `trunc` (keeping the dataset label
///    and the highest-sf others) when every label beyond the cut has lower
///    sf than the dataset label, or the dataset label's sf is at most
///    `in_sf_floor`.
///
/// Ties in sf order break toward the smaller class id.
pub fn select_candidates(
    image: &str,
    dataset_label: ClassId,
    sft: &SelectionFrequencyTable,
    pool: &BTreeSet<ClassId>,
    distances: &ClassDistances,
    cfg: &CandidateConfig,
) -> CandidateSet {
    let sf = |l: ClassId| sft.get_or_zero(image, l);
    let mut out = CandidateSet {
        image: image.to_owned(),
        candidates: vec![dataset_label],
        provenance: BTreeMap::from([(dataset_label, Rule::DatasetLabel)]),
        truncated: false,
        exempt: false,
    };
    let admit = |out: &mut CandidateSet, l: ClassId, rule: Rule| {
        if !out.provenance.contains_key(&l) {
            out.candidates.push(l);
            out.provenance.insert(l, rule);
        }
    };

    for &l in pool {
        if sf(l) >= cfg.sf_high {
            admit(&mut out, l, Rule::HighSf);
        }
    }
    for &l in pool {
        if sf(l) > 0.0 && distances.farther_than(l, dataset_label, cfg.wn_far) {
            admit(&mut out, l, Rule::FarFromDatasetLabel);
        }
    }
    if out.candidates.len() < cfg.min_cands {
        let mut rest: Vec<ClassId> = pool
            .iter()
            .copied()
            .filter(|l| !out.provenance.contains_key(l) && sf(*l) > 0.0)
            .collect();
        rest.sort_by(by_sf_desc(sf));
        for l in rest {
            if out.candidates.len() >= cfg.min_cands {
                break;
            }
            admit(&mut out, l, Rule::Backfill);
        }
    }

    if out.candidates.len() > cfg.trunc {
        let own = sf(dataset_label);
        let mut others: Vec<ClassId> = out.candidates[1..].to_vec();
        others.sort_by(by_sf_desc(sf));
        let keep_n = cfg.trunc.saturating_sub(1);
        let excess = &others[keep_n..];
        if excess.iter().all(|&l| sf(l) < own) || own <= cfg.in_sf_floor {
            let drop: BTreeSet<ClassId> = excess.iter().copied().collect();
            out.candidates.retain(|l| !drop.contains(l));
            out.provenance.retain(|l, _| !drop.contains(l));
            out.truncated = true;
        } else {
            out.exempt = true;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EligibilityConfig {
    pub seen_floor: u32,
    pub dominance: f64,
}

impl Default for EligibilityConfig {
    fn default() -> Self {
        EligibilityConfig {
            seen_floor: 6,
            dominance: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityReason {
    SfZero,
    DominantDatasetLabel,
    NoExtraCandidate,
    Eligible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EligibilityDecision {
    pub image: ImageId,
    pub eligible: bool,
    pub reason: EligibilityReason,
}

/// Decides whether an image goes to the classify task.
///
/// Ineligible, checked in this order: the dataset label was never affirmed;
/// among labels seen by at least `seen_floor` retained annotators, the
/// dataset label's sf is strictly more than `dominance` times every other
/// label's; or the candidate set holds only the dataset label.
pub fn classify_eligible(
    image: &str,
    dataset_label: ClassId,
    sft: &SelectionFrequencyTable,
    candidates: &CandidateSet,
    cfg: &EligibilityConfig,
) -> EligibilityDecision {
    let decide = |reason| EligibilityDecision {
        image: image.to_owned(),
        eligible: reason == EligibilityReason::Eligible,
        reason,
    };
    let own = match sft.entry(image, dataset_label) {
        Some(e) if e.affirmed > 0 => e,
        _ => return decide(EligibilityReason::SfZero),
    };
    if own.shown_to >= cfg.seen_floor {
        // cross-multiplied so that exact ties (0.9 vs 2 * 0.45) compare exactly
        let dominant = sft
            .labels_for(image)
            .filter(|(l, e)| *l != dataset_label && e.shown_to >= cfg.seen_floor)
            .all(|(_, e)| {
                own.affirmed as f64 * e.shown_to as f64
                    > cfg.dominance * e.affirmed as f64 * own.shown_to as f64
            });
        if dominant {
            return decide(EligibilityReason::DominantDatasetLabel);
        }
    }
    if candidates.candidates.len() < 2 {
        return decide(EligibilityReason::NoExtraCandidate);
    }
    decide(EligibilityReason::Eligible)
}
