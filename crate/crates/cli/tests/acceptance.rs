//! Acceptance checks. Runs without the libtest harness and prints one
//! `PASS`, `FAIL` or `SKIP` line per criterion; any failure makes the
//! process exit nonzero.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdlabel::analysis::{confusion_matrix, Level, Scope, Source};
use crowdlabel::candidates::{
    classify_eligible, select_candidates, CandidateConfig, CandidateSet, EligibilityConfig, EligibilityReason, Rule,
};
use crowdlabel::classify::partition_objects;
use crowdlabel::classify::{apply_classify_qc, ClassifyQcConfig, ClassifyResponse, ClassifyTask, ImageAnnotation, ObjectBlock, Provenance};
use crowdlabel::contains::{apply_contains_qc, build_grids, ContainsQcConfig, GridConfig, GridResponse, GridTask, SelectionFrequencyTable, SfEntry};
use crowdlabel::import::{import_released, load_validation_labels};
use crowdlabel::ingest::{
    ClassDistances, ClassEntry, ClassTable, DatasetIndex, DatasetRecord, Hierarchy, PotentialLabelSet, PredictionSet,
    Superclass, SuperclassRegistry,
};
use crowdlabel::metrics::{annotation_map, multi_label_accuracy, pairwise_accuracy, top_k_accuracy, AnnotationMap};
use crowdlabel::pipeline::run_simulated;
use crowdlabel::qc::DropReason;
use crowdlabel::simulate::{generate_world, AnnotatorModel, WorldSpec};
use crowdlabel::{ClassId, ImageId, PipelineConfig, SuperclassId};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn main() {
    let checks: Vec<(&str, fn() -> Verdict)> = vec![
        ("partition_oracle", partition_oracle),
        ("noiseless_closed_loop", noiseless_closed_loop),
        ("noisy_recovery", noisy_recovery),
        ("qc_exactness", qc_exactness),
        ("candidate_rules", candidate_rules),
        ("metric_invariants", metric_invariants),
        ("grid_structure", grid_structure),
        ("released_import", released_import),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        match v {
            Pass(d) => println!("PASS {name}: {d}"),
            Skip(d) => println!("SKIP {name}: {d}"),
            Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- partition

fn violations(selections: &[BTreeSet<ClassId>], block_of: &BTreeMap<ClassId, usize>) -> u32 {
    let mut cost = 0;
    for s in selections {
        let v: Vec<&ClassId> = s.iter().collect();
        for a in 0..v.len() {
            for b in a + 1..v.len() {
                if block_of[v[a]] == block_of[v[b]] {
                    cost += 1;
                }
            }
        }
    }
    cost
}

/// Minimum cost over every surjective map from labels to `k` blocks.
fn brute_force_min(selections: &[BTreeSet<ClassId>], labels: &[ClassId], k: usize) -> u32 {
    let n = labels.len();
    let mut best = u32::MAX;
    let mut assign = vec![0usize; n];
    loop {
        let used: BTreeSet<usize> = assign.iter().copied().collect();
        if used.len() == k {
            let map = labels.iter().copied().zip(assign.iter().copied()).collect();
            best = best.min(violations(selections, &map));
        }
        let mut i = 0;
        while i < n {
            assign[i] += 1;
            if assign[i] < k {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

fn partition_oracle() -> Verdict {
    let start = Instant::now();
    for instance in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(instance);
        let n = rng.gen_range(1..=6);
        let mut universe: Vec<u32> = (0..20).collect();
        universe.shuffle(&mut rng);
        let labels: Vec<ClassId> = universe[..n].iter().map(|&c| ClassId(c)).collect();
        let responses = rng.gen_range(1..=9);
        let mut selections: Vec<BTreeSet<ClassId>> = (0..responses)
            .map(|_| {
                let mut s: BTreeSet<ClassId> = labels.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
                if s.is_empty() {
                    s.insert(labels[rng.gen_range(0..n)]);
                }
                s
            })
            .collect();
        // make the union exactly `labels`
        for &l in &labels {
            if !selections.iter().any(|s| s.contains(&l)) {
                let i = rng.gen_range(0..selections.len());
                selections[i].insert(l);
            }
        }
        let k = rng.gen_range(1..=4);
        let got = partition_objects(&selections, k);
        let mut sorted = labels.clone();
        sorted.sort();
        let kk = k.min(n);
        let want = brute_force_min(&selections, &sorted, kk);
        let block_of: BTreeMap<ClassId, usize> = got
            .blocks
            .iter()
            .enumerate()
            .flat_map(|(b, blk)| blk.members.iter().map(move |&m| (m, b)))
            .collect();
        let covered: Vec<ClassId> = block_of.keys().copied().collect();
        if got.blocks.len() != kk || covered != sorted {
            return Fail(format!("instance {instance}: blocks do not partition the labels into {kk}"));
        }
        let recomputed = violations(&selections, &block_of);
        if recomputed != got.violation_cost || got.violation_cost != want {
            return Fail(format!(
                "instance {instance}: reported {} recomputed {recomputed} brute force {want}",
                got.violation_cost
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(secs < 10.0, format!("1000 instances match the exhaustive minimum in {secs:.2} s (limit 10 s)"))
}

// ------------------------------------------------------------- closed loop

fn noiseless_closed_loop() -> Verdict {
    let data = generate_world(&WorldSpec::default()).unwrap();
    let run = run_simulated(&data, &AnnotatorModel::noiseless(0), &PipelineConfig::default(), 12).unwrap();
    let (mut covered, mut exact) = (0, 0);
    for a in &run.annotations {
        let truth = data.world.get(&a.image).unwrap();
        let pool = run.pool.get(&a.image).unwrap();
        if !truth.objects.iter().all(|o| pool.contains(o)) {
            continue;
        }
        covered += 1;
        let got: BTreeSet<ClassId> = a.object_labels().collect();
        let want: BTreeSet<ClassId> = truth.objects.iter().copied().collect();
        if got == want && a.num_objects == truth.objects.len() && a.main_label == truth.main {
            exact += 1;
        }
    }
    verdict(
        exact == covered && covered > 0,
        format!("{exact}/{covered} covered images exact (of {}); required 100%", run.annotations.len()),
    )
}

fn noisy_recovery() -> Verdict {
    let data = generate_world(&WorldSpec::default()).unwrap();
    let cfg = PipelineConfig::default();
    let mut accs = Vec::new();
    for seed in 0..5 {
        let model = AnnotatorModel { rho: 0.9, eta: 0.2, kappa: 2.0, seed, spammers: 0, spam_rate: 0.0 };
        let run = run_simulated(&data, &model, &cfg, 12).unwrap();
        let hits = run
            .annotations
            .iter()
            .filter(|a| data.world.get(&a.image).unwrap().main == a.main_label)
            .count();
        accs.push(hits as f64 / run.annotations.len() as f64);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let per: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
    verdict(
        mean >= 0.95,
        format!("mean main-label accuracy {mean:.4} over seeds 0-4 [{}], {} annotators; required >= 0.95", per.join(", "), cfg.annotators),
    )
}

// ---------------------------------------------------------------------- qc

fn qc_exactness() -> Verdict {
    let controls: Vec<ImageId> = (0..5).map(|i| format!("ctl{i}")).collect();
    let grids: Vec<GridTask> = (0..20)
        .map(|g| {
            let mut shown = controls.clone();
            shown.extend((0..3).map(|i| format!("g{g}_x{i}")));
            GridTask {
                task_id: format!("g{g:02}"),
                query_label: ClassId(0),
                shown,
                controls: controls.clone(),
                fillers: vec![],
                seed: 0,
            }
        })
        .collect();
    // controls hit per response (out of 5), by worker
    let plan: [(&str, &[usize]); 6] = [
        ("w1", &[0, 0, 5, 5]),    // bad share exactly half: worker dropped
        ("w2", &[0, 5, 5, 5]),    // one response under 40%
        ("w3", &[1, 1, 1, 1, 1]), // exactly 20% is not bad, but every response is under 40%
        ("w4", &[2, 2, 3, 5]),    // exactly 40% is kept
        ("w5", &[0, 0, 0, 5, 5]), // bad share 3/5: worker dropped
        ("w6", &[0, 1, 5, 5, 5]), // two responses under 40%
    ];
    let mut responses = Vec::new();
    let mut want_retained = BTreeSet::new();
    for (w, (worker, hits)) in plan.iter().enumerate() {
        for (j, &h) in hits.iter().enumerate() {
            let g = &grids[(w * 3 + j) % 20];
            let mut selected: Vec<ImageId> = controls[..h].to_vec();
            selected.push(g.shown[5].clone());
            responses.push(GridResponse {
                task_id: g.task_id.clone(),
                worker: worker.to_string(),
                selected,
                received_at: None,
            });
            if !["w1", "w5"].contains(worker) && h >= 2 {
                want_retained.insert((g.task_id.clone(), worker.to_string()));
            }
        }
    }
    let (retained, report) = apply_contains_qc(&grids, &responses, &ContainsQcConfig::default()).unwrap();
    let got_retained: BTreeSet<(String, String)> = retained.iter().map(|r| (r.task_id.clone(), r.worker.clone())).collect();
    let got_workers: Vec<&str> = report.dropped_workers.keys().map(String::as_str).collect();
    let w3_reasons: BTreeSet<DropReason> = report
        .dropped_responses
        .iter()
        .filter(|d| d.worker == "w3")
        .map(|d| d.reason)
        .collect();
    let mut problems = Vec::new();
    if got_workers != ["w1", "w5"] {
        problems.push(format!("contains dropped workers {got_workers:?}, want [w1, w5]"));
    }
    if got_retained != want_retained {
        problems.push(format!("contains retained {} responses, want {}", got_retained.len(), want_retained.len()));
    }
    if w3_reasons != BTreeSet::from([DropReason::TaskLowControlRate]) {
        problems.push(format!("w3 reasons {w3_reasons:?}"));
    }

    // classify: flagged share exactly one third is kept, 2/5 is dropped
    let tasks: Vec<ClassifyTask> = (0..6)
        .map(|t| ClassifyTask {
            task_id: format!("c{t}"),
            image: format!("im{t}"),
            candidates: vec![ClassId(0), ClassId(1), ClassId(2)],
            annotators: 3,
        })
        .collect();
    let cr = |t: usize, worker: &str, ok: bool| ClassifyResponse {
        task_id: format!("c{t}"),
        worker: worker.into(),
        image: format!("im{t}"),
        valid: vec![ClassId(0), ClassId(1)],
        main: Some(if ok { ClassId(0) } else { ClassId(2) }),
        qc_flag: None,
        received_at: None,
    };
    let cresp = vec![
        cr(0, "w2", true),
        cr(1, "w2", true),
        cr(2, "w2", false),
        cr(0, "w4", true),
        cr(1, "w4", false),
        cr(2, "w4", true),
        cr(3, "w4", false),
        cr(4, "w4", true),
        cr(3, "w6", true),
        cr(4, "w6", true),
        cr(5, "w6", true),
    ];
    let (kept, creport) = apply_classify_qc(&tasks, &cresp, &ClassifyQcConfig::default()).unwrap();
    let cworkers: Vec<&str> = creport.dropped_workers.keys().map(String::as_str).collect();
    if cworkers != ["w4"] || kept.len() != 5 {
        problems.push(format!("classify dropped {cworkers:?} kept {}, want [w4] and 5", kept.len()));
    }

    // eligibility: exactly double the competing sf is not dominant
    let mut sft = SelectionFrequencyTable::default();
    sft.insert("a", ClassId(0), SfEntry { affirmed: 16, shown_to: 40 });
    sft.insert("a", ClassId(1), SfEntry { affirmed: 8, shown_to: 40 });
    sft.insert("b", ClassId(0), SfEntry { affirmed: 17, shown_to: 40 });
    sft.insert("b", ClassId(1), SfEntry { affirmed: 8, shown_to: 40 });
    let set = |image: &str| CandidateSet {
        image: image.into(),
        candidates: vec![ClassId(0), ClassId(1)],
        provenance: BTreeMap::from([(ClassId(0), Rule::DatasetLabel), (ClassId(1), Rule::Backfill)]),
        truncated: false,
        exempt: false,
    };
    let ecfg = EligibilityConfig::default();
    let a = classify_eligible("a", ClassId(0), &sft, &set("a"), &ecfg).reason;
    let b = classify_eligible("b", ClassId(0), &sft, &set("b"), &ecfg).reason;
    if a != EligibilityReason::Eligible || b != EligibilityReason::DominantDatasetLabel {
        problems.push(format!("eligibility exactly-double {a:?}, above {b:?}"));
    }

    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "6 workers / 20 grids: dropped {got_workers:?}, retained {} of {}; classify dropped {cworkers:?}; exact-double eligible",
                report.retained, report.total
            )
        } else {
            problems.join("; ")
        },
    )
}

// -------------------------------------------------------------- candidates

/// Classes 0-4 share a parent; class 5 is 5 hops from class 0, class 6 is
/// 6 hops, classes 7-9 are 7 hops.
fn candidate_world() -> ClassDistances {
    let mut edges: Vec<(String, String)> = vec![
        ("root".into(), "a".into()),
        ("a".into(), "b".into()),
        ("b".into(), "near".into()),
        ("a".into(), "y".into()),
        ("y".into(), "c5".into()),
        ("a".into(), "z1".into()),
        ("z1".into(), "z2".into()),
        ("z2".into(), "c6".into()),
    ];
    for c in 0..5 {
        edges.push(("near".into(), format!("c{c}")));
    }
    for c in 7..10 {
        edges.push(("root".into(), format!("w{c}a")));
        edges.push((format!("w{c}a"), format!("w{c}b")));
        edges.push((format!("w{c}b"), format!("c{c}")));
    }
    let reg = SuperclassRegistry::new(vec![Superclass { name: "all".into(), expected_count: None }]);
    let classes = ClassTable::new(
        (0..10)
            .map(|c| ClassEntry {
                wnid: format!("c{c}"),
                names: vec![],
                wiki_url: String::new(),
                superclass: SuperclassId(0),
            })
            .collect(),
        reg,
    )
    .unwrap();
    ClassDistances::new(&Hierarchy::from_edges(edges).unwrap(), &classes).unwrap()
}

struct Scenario {
    name: &'static str,
    /// (label, affirmed out of 40); label 0 is the dataset label.
    sf: &'static [(u32, u32)],
    pool: &'static [u32],
    /// Expected (label, rule) pairs and flags.
    want: &'static [(u32, Rule)],
    truncated: bool,
    exempt: bool,
}

use Rule::{Backfill as B, DatasetLabel as D, FarFromDatasetLabel as F, HighSf as H};

const SCENARIOS: [Scenario; 12] = [
    Scenario { name: "dataset label only", sf: &[(0, 32)], pool: &[1, 2], want: &[(0, D)], truncated: false, exempt: false },
    Scenario { name: "high sf at the boundary", sf: &[(0, 36), (1, 20), (2, 19)], pool: &[1, 2, 3], want: &[(0, D), (1, H), (2, B)], truncated: false, exempt: false },
    Scenario { name: "far at 6 hops, not at 5", sf: &[(0, 36), (5, 4), (6, 4)], pool: &[5, 6], want: &[(0, D), (6, F), (5, B)], truncated: false, exempt: false },
    Scenario { name: "far label never affirmed", sf: &[(0, 36), (7, 0)], pool: &[7], want: &[(0, D)], truncated: false, exempt: false },
    Scenario { name: "backfill by sf, ties to smaller id", sf: &[(0, 36), (1, 8), (2, 12), (3, 12), (4, 4), (5, 2)], pool: &[1, 2, 3, 4, 5], want: &[(0, D), (2, B), (3, B), (1, B), (4, B)], truncated: false, exempt: false },
    Scenario { name: "no backfill once full", sf: &[(0, 36), (1, 24), (2, 24), (3, 12), (4, 8), (7, 4), (8, 4), (9, 4)], pool: &[1, 2, 3, 4, 7, 8, 9], want: &[(0, D), (1, H), (2, H), (7, F), (8, F), (9, F)], truncated: false, exempt: false },
    Scenario { name: "truncate below dataset label", sf: &[(0, 36), (1, 32), (2, 28), (3, 24), (4, 22), (7, 4), (8, 8), (9, 12)], pool: &[1, 2, 3, 4, 7, 8, 9], want: &[(0, D), (1, H), (2, H), (3, H), (4, H), (9, F)], truncated: true, exempt: false },
    Scenario { name: "exempt when the cut outranks the dataset label", sf: &[(0, 20), (1, 36), (2, 36), (3, 32), (4, 28), (7, 24), (8, 24), (9, 22)], pool: &[1, 2, 3, 4, 7, 8, 9], want: &[(0, D), (1, H), (2, H), (3, H), (4, H), (7, H), (8, H), (9, H)], truncated: false, exempt: true },
    Scenario { name: "dataset sf exactly 1/8 truncates", sf: &[(0, 5), (1, 36), (2, 36), (3, 32), (4, 28), (7, 24), (8, 24), (9, 22)], pool: &[1, 2, 3, 4, 7, 8, 9], want: &[(0, D), (1, H), (2, H), (3, H), (4, H), (7, H)], truncated: true, exempt: false },
    Scenario { name: "dataset sf above 1/8 stays exempt", sf: &[(0, 6), (1, 36), (2, 36), (3, 32), (4, 28), (7, 24), (8, 24), (9, 22)], pool: &[1, 2, 3, 4, 7, 8, 9], want: &[(0, D), (1, H), (2, H), (3, H), (4, H), (7, H), (8, H), (9, H)], truncated: false, exempt: true },
    Scenario { name: "cut tied with dataset label is exempt", sf: &[(0, 12), (1, 36), (2, 32), (3, 28), (4, 24), (7, 20), (8, 12)], pool: &[1, 2, 3, 4, 7, 8], want: &[(0, D), (1, H), (2, H), (3, H), (4, H), (7, H), (8, F)], truncated: false, exempt: true },
    Scenario { name: "unshown pool label is skipped", sf: &[(0, 36), (1, 8)], pool: &[1, 6], want: &[(0, D), (1, B)], truncated: false, exempt: false },
];

/// Plain restatement of the five rules over maps, used as the reference.
fn reference_candidates(sf: &BTreeMap<u32, f64>, pool: &[u32], dist: &dyn Fn(u32) -> u32, cfg: &CandidateConfig) -> (Vec<(u32, Rule)>, bool, bool) {
    let s = |l: u32| sf.get(&l).copied().unwrap_or(0.0);
    let mut out: Vec<(u32, Rule)> = vec![(0, Rule::DatasetLabel)];
    let has = |out: &Vec<(u32, Rule)>, l: u32| out.iter().any(|&(x, _)| x == l);
    let mut pool: Vec<u32> = pool.to_vec();
    pool.sort();
    for &l in &pool {
        if s(l) >= cfg.sf_high && !has(&out, l) {
            out.push((l, Rule::HighSf));
        }
    }
    for &l in &pool {
        if s(l) > 0.0 && dist(l) > cfg.wn_far && !has(&out, l) {
            out.push((l, Rule::FarFromDatasetLabel));
        }
    }
    let mut rest: Vec<u32> = pool.iter().copied().filter(|&l| s(l) > 0.0 && !has(&out, l)).collect();
    rest.sort_by(|a, b| s(*b).partial_cmp(&s(*a)).unwrap().then(a.cmp(b)));
    for l in rest {
        if out.len() >= cfg.min_cands {
            break;
        }
        out.push((l, Rule::Backfill));
    }
    let (mut truncated, mut exempt) = (false, false);
    if out.len() > cfg.trunc {
        let mut others: Vec<u32> = out[1..].iter().map(|&(l, _)| l).collect();
        others.sort_by(|a, b| s(*b).partial_cmp(&s(*a)).unwrap().then(a.cmp(b)));
        let cut: Vec<u32> = others[cfg.trunc - 1..].to_vec();
        if cut.iter().all(|&l| s(l) < s(0)) || s(0) <= cfg.in_sf_floor {
            out.retain(|(l, _)| !cut.contains(l));
            truncated = true;
        } else {
            exempt = true;
        }
    }
    (out, truncated, exempt)
}

fn candidate_rules() -> Verdict {
    let distances = candidate_world();
    let cfg = CandidateConfig::default();
    let hops = |l: u32| match l {
        0..=4 => 2,
        5 => 5,
        6 => 6,
        _ => 7,
    };
    for (c, h) in (1..10).map(|c| (c, hops(c))) {
        if distances.get(ClassId(0), ClassId(c)) != Some(h) {
            return Fail(format!("fixture hierarchy gives class {c} distance {:?}", distances.get(ClassId(0), ClassId(c))));
        }
    }
    let mut failures = Vec::new();
    for s in &SCENARIOS {
        let mut sft = SelectionFrequencyTable::default();
        let mut sf = BTreeMap::new();
        for &(l, a) in s.sf {
            sft.insert("img", ClassId(l), SfEntry { affirmed: a, shown_to: 40 });
            sf.insert(l, a as f64 / 40.0);
        }
        let pool: BTreeSet<ClassId> = s.pool.iter().map(|&l| ClassId(l)).collect();
        let got = select_candidates("img", ClassId(0), &sft, &pool, &distances, &cfg);
        let got_rules: BTreeMap<u32, Rule> = got.provenance.iter().map(|(l, r)| (l.0, *r)).collect();
        let want_rules: BTreeMap<u32, Rule> = s.want.iter().copied().collect();
        let (reference, rt, re) = reference_candidates(&sf, s.pool, &hops, &cfg);
        let ref_rules: BTreeMap<u32, Rule> = reference.into_iter().collect();
        let got_set: BTreeSet<u32> = got.candidates.iter().map(|l| l.0).collect();
        let ok = got_rules == want_rules
            && ref_rules == want_rules
            && got_set == want_rules.keys().copied().collect()
            && (got.truncated, got.exempt) == (s.truncated, s.exempt)
            && (rt, re) == (s.truncated, s.exempt);
        if !ok {
            failures.push(format!("{}: got {got_rules:?} t={} e={}", s.name, got.truncated, got.exempt));
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} scenarios match the expected table and the reference rules", SCENARIOS.len())
        } else {
            failures.join("; ")
        },
    )
}

// ----------------------------------------------------------------- metrics

struct MetricFixture {
    classes: ClassTable,
    index: DatasetIndex,
    preds: PredictionSet,
    anns: AnnotationMap,
    single: AnnotationMap,
}

fn metric_fixture(seed: u64) -> MetricFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_super = 3;
    let n_classes = 12u32;
    let reg = SuperclassRegistry::new((0..n_super).map(|s| Superclass { name: format!("s{s}"), expected_count: None }).collect());
    let classes = ClassTable::new(
        (0..n_classes)
            .map(|c| ClassEntry {
                wnid: format!("n{c:08}"),
                names: vec![],
                wiki_url: String::new(),
                superclass: SuperclassId(rng.gen_range(0..n_super as u32)),
            })
            .collect(),
        reg,
    )
    .unwrap();
    let n_images = rng.gen_range(10..60);
    let records: Vec<DatasetRecord> = (0..n_images)
        .map(|i| DatasetRecord { image: format!("i{i:03}"), dataset_label: ClassId(rng.gen_range(0..n_classes)), url: None })
        .collect();
    let index = DatasetIndex::new(records, n_classes as usize).unwrap();
    let mut preds = PredictionSet::new("m");
    let mut anns = Vec::new();
    let mut single = Vec::new();
    for r in index.records() {
        let mut order: Vec<ClassId> = (0..n_classes).map(ClassId).collect();
        order.shuffle(&mut rng);
        // bias toward the dataset label so hits occur
        if rng.gen_bool(0.5) {
            let p = order.iter().position(|&c| c == r.dataset_label).unwrap();
            order.swap(0, p);
        }
        order.truncate(5);
        preds.ranked.insert(r.image.clone(), order);
        let mut objects: BTreeSet<ClassId> = BTreeSet::from([r.dataset_label]);
        for _ in 0..rng.gen_range(0..3) {
            objects.insert(ClassId(rng.gen_range(0..n_classes)));
        }
        let objects: Vec<ClassId> = objects.into_iter().collect();
        let main = objects[rng.gen_range(0..objects.len())];
        anns.push(annotation(&r.image, r.dataset_label, &objects, main));
        single.push(annotation(&r.image, r.dataset_label, &[r.dataset_label], r.dataset_label));
    }
    MetricFixture { classes, index, preds, anns: annotation_map(anns), single: annotation_map(single) }
}

fn annotation(image: &str, dataset: ClassId, objects: &[ClassId], main: ClassId) -> ImageAnnotation {
    let objects: Vec<ObjectBlock> = objects.iter().map(|&o| ObjectBlock { label: o, members: vec![o], votes: 9 }).collect();
    ImageAnnotation {
        image: image.into(),
        dataset_label: dataset,
        num_objects: objects.len(),
        count_confidence: 1.0,
        main_label: main,
        main_confidence: 1.0,
        multi_object: objects.len() >= 2,
        objects,
        provenance: Provenance::Aggregated,
        main_coerced_from: None,
        violation_cost: 0,
        fallback: false,
    }
}

fn superclass_matches_aggregate(f: &MetricFixture, source: Source<'_>, scope: Scope) -> bool {
    let class = confusion_matrix(source, &f.index, &f.classes, Level::Class, scope, None);
    let sup = confusion_matrix(source, &f.index, &f.classes, Level::Superclass, scope, None);
    let n = f.classes.registry().len();
    let mut counts = vec![vec![0u64; n]; n];
    let mut totals = vec![0u64; n];
    for i in 0..class.size {
        let si = f.classes.superclass_of(ClassId(i as u32)).index();
        totals[si] += class.row_totals[i];
        for j in 0..class.size {
            counts[si][f.classes.superclass_of(ClassId(j as u32)).index()] += class.counts[i][j];
        }
    }
    (0..n).all(|i| {
        (0..n).all(|j| {
            let want = if totals[i] == 0 { 0.0 } else { counts[i][j] as f64 / totals[i] as f64 };
            (sup.value(i, j) - want).abs() <= 1e-9
        })
    })
}

fn metric_invariants() -> Verdict {
    for seed in 0..100 {
        let f = metric_fixture(seed);
        let all: Vec<ImageId> = f.index.images().map(String::from).collect();
        let top1 = top_k_accuracy(&f.preds, &f.index, &all, 1).unwrap();
        let top5 = top_k_accuracy(&f.preds, &f.index, &all, 5).unwrap();
        let multi = multi_label_accuracy(&f.preds, &f.anns, &all).unwrap();
        let multi_single = multi_label_accuracy(&f.preds, &f.single, &all).unwrap();
        if top5 < top1 || multi < top1 || multi_single != top1 {
            return Fail(format!("fixture {seed}: top1 {top1} top5 {top5} multi {multi} single-object multi {multi_single}"));
        }
        for i in 0..12 {
            for j in i + 1..12 {
                // undefined in both orders when neither class has images
                let a = pairwise_accuracy(&f.preds, &f.index, ClassId(i), ClassId(j)).ok();
                let b = pairwise_accuracy(&f.preds, &f.index, ClassId(j), ClassId(i)).ok();
                if a != b {
                    return Fail(format!("fixture {seed}: pairwise ({i},{j}) {a:?} vs {b:?}"));
                }
            }
        }
        for scope in [Scope::Full, Scope::Intra, Scope::Inter] {
            for source in [Source::Model(&f.preds), Source::HumanMain(&f.anns)] {
                if !superclass_matches_aggregate(&f, source, scope) {
                    return Fail(format!("fixture {seed}: superclass {scope:?} matrix of {} differs from aggregate", source.name()));
                }
            }
        }
    }
    Pass("100 fixtures: top5 >= top1, multi-label >= top1, single-object equality, pairwise symmetry, superclass aggregation within 1e-9".into())
}

// ------------------------------------------------------------------- grids

fn pool_strategy() -> impl Strategy<Value = (usize, Vec<u32>, Vec<Vec<u32>>)> {
    (6usize..10, 12usize..20).prop_flat_map(|(classes, per_class)| {
        let n = classes * per_class;
        (
            Just(classes),
            Just((0..n as u32).map(|i| i % classes as u32).collect::<Vec<_>>()),
            proptest::collection::vec(proptest::collection::vec(0..classes as u32, 0..3), n),
        )
    })
}

fn grid_structure() -> Verdict {
    let mut runner = TestRunner::new(PropConfig { cases: 48, failure_persistence: None, ..PropConfig::default() });
    let cfg = GridConfig::default();
    let (size, min_controls) = (cfg.grid_size, cfg.min_controls);
    let cap = size - min_controls;
    let result = runner.run(&pool_strategy(), |(classes, labels, extras)| {
        let records: Vec<DatasetRecord> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| DatasetRecord { image: format!("im{i:04}"), dataset_label: ClassId(l), url: None })
            .collect();
        let index = DatasetIndex::new(records.clone(), classes).unwrap();
        let pools: BTreeMap<ImageId, BTreeSet<ClassId>> = records
            .iter()
            .zip(&extras)
            .map(|(r, e)| {
                let mut p: BTreeSet<ClassId> = e.iter().map(|&c| ClassId(c)).collect();
                p.insert(r.dataset_label);
                (r.image.clone(), p)
            })
            .collect();
        let pool = PotentialLabelSet::from_pools(pools.clone());
        let grids = build_grids(&pool, &index, &cfg);
        prop_assume!(grids.is_ok());
        let grids = grids.unwrap();
        let mut per_label: BTreeMap<ClassId, usize> = BTreeMap::new();
        for g in &grids {
            prop_assert_eq!(g.shown.len(), size);
            let distinct: BTreeSet<&ImageId> = g.shown.iter().collect();
            prop_assert_eq!(distinct.len(), size);
            prop_assert!(g.controls.len() >= min_controls);
            for c in &g.controls {
                prop_assert_eq!(index.label(c), Some(g.query_label));
                prop_assert!(g.shown.contains(c));
            }
            *per_label.entry(g.query_label).or_default() += 1;
        }
        // grids per label = ceil(images to check / 43), at least one
        for (label, n) in per_label {
            let to_check = pools
                .iter()
                .filter(|(i, p)| p.contains(&label) && index.label(i) != Some(label))
                .count();
            prop_assert_eq!(n, to_check.div_ceil(cap).max(1));
        }
        Ok(())
    });
    match result {
        Ok(()) => Pass(format!("48 random pools: every grid has {size} distinct slots, >= {min_controls} controls of the query class, and ceil(n/{cap}) grids per label")),
        Err(e) => Fail(e.to_string()),
    }
}

// ------------------------------------------------------------------ import

fn released_import() -> Verdict {
    let vars = ["CROWDLABEL_RELEASED_ANNOTATIONS", "CROWDLABEL_VAL_LABELS", "CROWDLABEL_CLASSES"];
    let paths: Vec<Option<PathBuf>> = vars.iter().map(|v| std::env::var_os(v).map(PathBuf::from)).collect();
    let [Some(annotations), Some(labels), Some(class_file)] = &paths[..] else {
        return Skip(format!("set {} to run against the released annotation file", vars.join(", ")));
    };
    let registry = SuperclassRegistry::imagenet();
    let classes = crowdlabel::ingest::load_class_table(class_file, registry).unwrap();
    let index = load_validation_labels(labels, classes.len()).unwrap();
    let (_, summary) = import_released(annotations, &index, &classes).unwrap();
    let flag = |names: &[&str]| names.iter().map(|n| summary.flags.get(*n).copied().unwrap_or(0)).sum::<usize>();
    let sf_zero = flag(&["sf_zero", "unverified"]);
    let never = flag(&["never_selected", "mislabeled"]);
    let got = (summary.multi_object, summary.main_disagreement, sf_zero, never);
    verdict(
        got == (2156, 650, 150, 119),
        format!("multi-object {} (2156), main disagreement {} (650), sf zero {} (150), never selected {} (119)", got.0, got.1, got.2, got.3),
    )
}

// ------------------------------------------------------------- determinism

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crowdlabel"))
        .args(args)
        .env("ANNO_DATA_DIR", dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const PIPELINE: &[&[&str]] = &[
    &["simulate", "world", "--images", "200"],
    &["ingest"],
    &["grids", "build"],
    &["simulate", "contains", "--rho", "0.9", "--eta", "0.2", "--spammers", "1", "--spam-rate", "0.1"],
    &["qc", "contains"],
    &["sf", "compute"],
    &["candidates", "select"],
    &["classify", "build"],
    &["simulate", "classify", "--rho", "0.9", "--eta", "0.2"],
    &["classify", "qc"],
    &["classify", "aggregate"],
    &["metrics", "report", "--bootstrap-replicates", "50"],
    &["analyze", "confusion"],
    &["analyze", "confusion", "--source", "model:model1", "--level", "class", "--scope", "intra"],
    &["analyze", "cooccurrence"],
    &["analyze", "cooccurrence", "--level", "superclass"],
    &["analyze", "ambiguous"],
    &["analyze", "sfacc"],
    &["analyze", "mislabeled"],
];

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        for args in PIPELINE {
            let mut args = args.to_vec();
            args.extend(["--seed", "11"]);
            if let Err(e) = cli(dir, &args) {
                return Fail(e);
            }
        }
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let manifests = fa.keys().filter(|k| k.starts_with("manifests")).count();
    verdict(
        differing.is_empty() && manifests == PIPELINE.len(),
        if differing.is_empty() {
            format!("{} subcommands run twice: {} artifacts and {manifests} manifests byte-identical", PIPELINE.len(), fa.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}
