use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde_json::json;

use crowdlabel::analysis::{
    ambiguous_pairs, confusion_matrix, cooccurrence_matrix, mislabeled_report, sf_accuracy_table, Level, Scope,
    Source,
};
use crowdlabel::candidates::{CandidateSet, EligibilityDecision, EligibilityReason};
use crowdlabel::classify::{aggregate_all, apply_classify_qc, build_classify_tasks, ClassifyResponse, ClassifyTask, ImageAnnotation};
use crowdlabel::contains::{
    apply_contains_qc, build_grids, compute_selection_frequencies, detect_unverified, relative_sf_report, GridResponse,
    GridTask, SelectionFrequencyTable, SfRecord, RELATIVE_SF_THRESHOLDS,
};
use crowdlabel::import::{import_released as import_file, load_validation_labels};
use crowdlabel::ingest::{build_potential_labels, ClassDistances, ClassTable, DatasetIndex, PoolRecord, PotentialLabelSet, PredictionSet};
use crowdlabel::io::{read_jsonl, write_bytes, write_json, write_jsonl};
use crowdlabel::layout::Layout;
use crowdlabel::metrics::{annotation_map, main_label_accuracy, metrics_report as build_report, prediction_sf, AnnotationMap, ReportInputs, Subset};
use crowdlabel::pipeline::select_all_candidates;
use crowdlabel::simulate::{generate_world, AnnotatorModel, GroundTruthWorld, WorldSpec};
use crowdlabel::{simulate, ClassId, PipelineConfig};
use crowdlabel_service::{Service, ServiceConfig};

use crate::figures;
use crate::manifest::Run;
use crate::{LevelArg, NoiseArgs, ScopeArg};

const INPUTS: &str = "`simulate world` or provide the dataset inputs";

fn classes(run: &mut Run) -> Result<ClassTable> {
    run.input(run.layout.classes(), INPUTS)?;
    run.optional_input(run.layout.superclasses())?;
    Ok(run.layout.load_classes()?)
}

fn index(run: &mut Run, classes: &ClassTable) -> Result<DatasetIndex> {
    run.input(run.layout.dataset(), INPUTS)?;
    Ok(run.layout.load_index(classes.len())?)
}

fn distances(run: &mut Run, classes: &ClassTable) -> Result<ClassDistances> {
    run.input(run.layout.hierarchy(), INPUTS)?;
    let h = run.layout.load_hierarchy()?;
    Ok(ClassDistances::new(&h, classes)?)
}

fn predictions(run: &mut Run, classes: &ClassTable, index: &DatasetIndex) -> Result<Vec<PredictionSet>> {
    for f in run.layout.prediction_files()? {
        run.input(f, INPUTS)?;
    }
    run.optional_input(run.layout.declared_accuracy())?;
    let (sets, _) = run.layout.load_predictions(index, classes.len(), run.cfg.k_min)?;
    Ok(sets)
}

fn sf_table(run: &mut Run) -> Result<SelectionFrequencyTable> {
    let p = run.input(run.layout.sf(), "`sf compute`")?;
    Ok(SelectionFrequencyTable::from_records(read_jsonl::<SfRecord>(p)?))
}

fn grids(run: &mut Run) -> Result<Vec<GridTask>> {
    let p = run.input(run.layout.grids(), "`grids build`")?;
    Ok(read_jsonl(p)?)
}

fn classify_tasks(run: &mut Run) -> Result<Vec<ClassifyTask>> {
    let p = run.input(run.layout.classify_tasks(), "`classify build`")?;
    Ok(read_jsonl(p)?)
}

fn annotations(run: &mut Run) -> Result<AnnotationMap> {
    let p = run.input(run.layout.annotations(), "`classify aggregate` (or `import released-annotations`)")?;
    Ok(annotation_map(read_jsonl::<ImageAnnotation>(p)?))
}

fn world(run: &mut Run) -> Result<GroundTruthWorld> {
    let p = run.input(run.layout.world(), "`simulate world`")?;
    Ok(GroundTruthWorld::load(p)?)
}

fn jsonl<T: serde::Serialize>(run: &mut Run, path: &Path, records: &[T]) -> Result<()> {
    write_jsonl(path, records)?;
    run.output(path)
}

fn json<T: serde::Serialize>(run: &mut Run, path: &Path, value: &T) -> Result<()> {
    write_json(path, value)?;
    run.output(path)
}

fn figure(run: &mut Run, name: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let path = run.layout.figures().join(name);
    write(&path)?;
    run.output(&path)
}

pub fn ingest(layout: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(layout, cfg, "ingest");
    let classes = classes(&mut run)?;
    run.input(layout.hierarchy(), INPUTS)?;
    layout.load_hierarchy()?.check_covers(&classes)?;
    let index = index(&mut run, &classes)?;
    for f in layout.prediction_files()? {
        run.input(f, INPUTS)?;
    }
    run.optional_input(layout.declared_accuracy())?;
    let (preds, coverage) = layout.load_predictions(&index, classes.len(), cfg.k_min)?;
    let pool = build_potential_labels(&preds, &index)?;
    jsonl(&mut run, &layout.pool(), &pool.records())?;
    let report = json!({
        "classes": classes.len(),
        "superclasses": classes.registry().len(),
        "images": index.len(),
        "models": preds.iter().map(|p| &p.model_id).collect::<Vec<_>>(),
        "images_per_class": index.images_per_class(),
        "pool_size_histogram": pool.size_histogram(),
        "mean_pool_size": pool.mean_size(),
        "missing_predictions": coverage.missing.iter().map(|(m, v)| (m.clone(), v.len())).collect::<BTreeMap<_, _>>(),
    });
    json(&mut run, &layout.ingest_report(), &report)?;
    println!("{} images, {} classes, mean pool size {:.2}", index.len(), classes.len(), pool.mean_size());
    run.finish()
}

pub fn grids_build(layout: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(layout, cfg, "grids build");
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let pool = run.input(layout.pool(), "`ingest`")?;
    let pool = PotentialLabelSet::from_records(read_jsonl::<PoolRecord>(pool)?);
    let grids = build_grids(&pool, &index, &cfg.grid())?;
    jsonl(&mut run, &layout.grids(), &grids)?;
    println!("{} grids", grids.len());
    run.finish()
}

pub fn qc_contains(layout: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(layout, cfg, "qc contains");
    let grids = grids(&mut run)?;
    let responses = run.input(layout.responses_contains(), "annotation (`serve`) or `simulate contains`")?;
    let responses: Vec<GridResponse> = read_jsonl(responses)?;
    let (retained, report) = apply_contains_qc(&grids, &responses, &cfg.contains_qc())?;
    json(&mut run, &layout.qc_contains(), &report)?;
    jsonl(&mut run, &layout.retained_contains(), &retained)?;
    println!(
        "retained {}/{} responses, dropped {} workers",
        report.retained,
        report.total,
        report.dropped_workers.len()
    );
    run.finish()
}

pub fn sf_compute(layout: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(layout, cfg, "sf compute");
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let grids = grids(&mut run)?;
    let retained = run.input(layout.retained_contains(), "`qc contains`")?;
    let retained: Vec<GridResponse> = read_jsonl(retained)?;
    let sft = compute_selection_frequencies(&grids, &retained);
    jsonl(&mut run, &layout.sf(), &sft.records())?;
    let relative = relative_sf_report(&sft, &index, &RELATIVE_SF_THRESHOLDS);
    let share: Vec<_> = (0..relative.thresholds.len())
        .map(|t| json!({"threshold": relative.thresholds[t], "share_with_other": relative.share_with_other(t)}))
        .collect();
    let report = json!({
        "entries": sft.len(),
        "unanswered_grids": sft.unanswered,
        "relative": share,
        "excluded": relative.excluded,
        "missing": relative.missing,
        "unverified": detect_unverified(&sft, &index),
    });
    json(&mut run, &layout.sf_report(), &report)?;
    figure(&mut run, "fig6.csv", |p| figures::fig6(p, &relative))?;
    println!("{} (image, label) frequencies", sft.len());
    run.finish()
}

pub fn candidates_select(layout: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(layout, cfg, "candidates select");
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let distances = distances(&mut run, &classes)?;
    let pool = run.input(layout.pool(), "`ingest`")?;
    let pool = PotentialLabelSet::from_records(read_jsonl::<PoolRecord>(pool)?);
    let sft = sf_table(&mut run)?;
    let (sets, decisions) = select_all_candidates(&index, &pool, &sft, &distances, cfg)?;
    jsonl(&mut run, &layout.candidates(), &sets)?;
    jsonl(&mut run, &layout.eligibility(), &decisions)?;
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    for d in &decisions {
        *reasons.entry(format!("{:?}", d.reason)).or_default() += 1;
    }
    for (r, n) in reasons {
        println!("{r}: {n}");
    }
    run.finish()
}

pub fn classify_build(layout: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(layout, cfg, "classify build");
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let sets: Vec<CandidateSet> = read_jsonl(run.input(layout.candidates(), "`candidates select`")?)?;
    let decisions: Vec<EligibilityDecision> = read_jsonl(run.input(layout.eligibility(), "`candidates select`")?)?;
    let (tasks, auto) = build_classify_tasks(&sets, &decisions, &index, cfg.annotators, cfg.seed)?;
    jsonl(&mut run, &layout.classify_tasks(), &tasks)?;
    jsonl(&mut run, &layout.auto_annotations(), &auto)?;
    let sf_zero = decisions.iter().filter(|d| d.reason == EligibilityReason::SfZero).count();
    println!("{} classify tasks, {} automatic ({} with sf 0)", tasks.len(), auto.len(), sf_zero);
    run.finish()
}

pub fn classify_qc(layout: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(layout, cfg, "classify qc");
    let tasks = classify_tasks(&mut run)?;
    let responses = run.input(layout.responses_classify(), "annotation (`serve`) or `simulate classify`")?;
    let responses: Vec<ClassifyResponse> = read_jsonl(responses)?;
    let (retained, report) = apply_classify_qc(&tasks, &responses, &cfg.classify_qc())?;
    json(&mut run, &layout.qc_classify(), &report)?;
    jsonl(&mut run, &layout.retained_classify(), &retained)?;
    println!(
        "retained {}/{} responses, dropped {} workers",
        report.retained,
        report.total,
        report.dropped_workers.len()
    );
    run.finish()
}

pub fn classify_aggregate(layout: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(layout, cfg, "classify aggregate");
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let tasks = classify_tasks(&mut run)?;
    let auto: Vec<ImageAnnotation> = read_jsonl(run.input(layout.auto_annotations(), "`classify build`")?)?;
    let retained: Vec<ClassifyResponse> = read_jsonl(run.input(layout.retained_classify(), "`classify qc`")?)?;
    let anns = aggregate_all(&tasks, &retained, &auto, &index)?;
    jsonl(&mut run, &layout.annotations(), &anns)?;
    let multi = anns.iter().filter(|a| a.multi_object).count();
    println!("{} images annotated, {} with several objects", anns.len(), multi);
    run.finish()
}

/// The dataset label as a one-entry ranking for every image.
fn dataset_label_predictions(index: &DatasetIndex) -> PredictionSet {
    let mut p = PredictionSet::new("dataset_label");
    for r in index.records() {
        p.ranked.insert(r.image.clone(), vec![r.dataset_label]);
    }
    p
}

pub fn metrics_report(layout: &Layout, cfg: &PipelineConfig, pairs: usize) -> Result<()> {
    let mut run = Run::new(layout, cfg, "metrics report");
    run.param("pairs", pairs);
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let anns = annotations(&mut run)?;
    let sft = sf_table(&mut run)?;
    let preds = predictions(&mut run, &classes, &index)?;
    if preds.is_empty() {
        bail!("no prediction files under {}", layout.predictions_dir().display());
    }
    let report = build_report(&ReportInputs {
        predictions: &preds,
        index: &index,
        annotations: &anns,
        sft: &sft,
        sf_bins: cfg.sf_bins,
        replicates: cfg.bootstrap_replicates,
        seed: cfg.seed,
    })?;
    json(&mut run, &layout.metrics(), &report)?;

    let all = Subset::All.images(&index, &anns);
    let reference = dataset_label_predictions(&index);
    let reference = (
        prediction_sf(&reference, &sft, &all)?.mean,
        main_label_accuracy(&reference, &anns, &all)?,
    );
    let ambiguous = ambiguous_pairs(&sft, &index, &preds, pairs)?;
    figure(&mut run, "fig4a.csv", |p| figures::fig4a(p, &report))?;
    figure(&mut run, "fig4b.csv", |p| figures::fig4b(p, &report))?;
    figure(&mut run, "fig5a.csv", |p| figures::fig5a(p, &report))?;
    figure(&mut run, "fig7.csv", |p| figures::fig7(p, &report, reference))?;
    figure(&mut run, "fig8b.csv", |p| figures::fig8b(p, &ambiguous))?;
    figure(&mut run, "fig9.csv", |p| figures::fig9(p, &report))?;
    for m in &report.models {
        let s = &m.subsets[&Subset::All];
        println!(
            "{}: top1 {} multi-label {} main-label {}",
            m.model,
            figures::opt(s.top1),
            figures::opt(s.multi_label),
            figures::opt(s.main_label)
        );
    }
    run.finish()
}

fn level(l: LevelArg) -> (Level, &'static str) {
    match l {
        LevelArg::Class => (Level::Class, "class"),
        LevelArg::Superclass => (Level::Superclass, "superclass"),
    }
}

pub fn analyze_confusion(layout: &Layout, cfg: &PipelineConfig, source: &str, lv: LevelArg, scope: ScopeArg) -> Result<()> {
    let mut run = Run::new(layout, cfg, &format!("analyze confusion {source}"));
    let (lv, lv_name) = level(lv);
    let (scope, scope_name) = match scope {
        ScopeArg::Full => (Scope::Full, "full"),
        ScopeArg::Intra => (Scope::Intra, "intra"),
        ScopeArg::Inter => (Scope::Inter, "inter"),
    };
    run.param("level", lv_name);
    run.param("scope", scope_name);
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let (anns, sft, preds);
    let src = match source {
        "human" => {
            anns = annotations(&mut run)?;
            Source::HumanMain(&anns)
        }
        "sf-argmax" => {
            sft = sf_table(&mut run)?;
            Source::SfArgmax(&sft)
        }
        s => {
            let Some(model) = s.strip_prefix("model:") else {
                bail!("unknown source {s:?}; expected human, sf-argmax or model:<id>");
            };
            preds = predictions(&mut run, &classes, &index)?;
            let p = preds
                .iter()
                .find(|p| p.model_id == model)
                .with_context(|| format!("no predictions for model {model:?}"))?;
            Source::Model(p)
        }
    };
    let m = confusion_matrix(src, &index, &classes, lv, scope, None);
    let stem = format!("confusion_{}_{lv_name}_{scope_name}", m.source.replace([':', '/'], "_"));
    json(&mut run, &layout.analysis().join(format!("{stem}.json")), &m)?;
    if lv == Level::Superclass {
        figure(&mut run, &format!("fig12a_{}_{scope_name}.csv", m.source), |p| figures::confusion(p, &m))?;
    } else {
        figure(&mut run, &format!("{stem}.csv"), |p| figures::confusion(p, &m))?;
    }
    run.finish()
}

pub fn analyze_cooccurrence(layout: &Layout, cfg: &PipelineConfig, lv: LevelArg, top: usize) -> Result<()> {
    let (lv, lv_name) = level(lv);
    let mut run = Run::new(layout, cfg, &format!("analyze cooccurrence {lv_name}"));
    run.param("top", top);
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let anns = annotations(&mut run)?;
    let m = cooccurrence_matrix(&anns, &index, &classes, lv);
    json(&mut run, &layout.analysis().join(format!("cooccurrence_{lv_name}.json")), &m)?;
    match lv {
        Level::Class => figure(&mut run, "fig3b.csv", |p| figures::cooccurrence_top(p, &m, top))?,
        Level::Superclass => figure(&mut run, "fig12b.csv", |p| figures::cooccurrence(p, &m))?,
    }
    run.finish()
}

pub fn analyze_ambiguous(layout: &Layout, cfg: &PipelineConfig, top: usize) -> Result<()> {
    let mut run = Run::new(layout, cfg, "analyze ambiguous");
    run.param("top", top);
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let sft = sf_table(&mut run)?;
    let preds = predictions(&mut run, &classes, &index)?;
    let pairs = ambiguous_pairs(&sft, &index, &preds, top)?;
    json(&mut run, &layout.analysis().join("ambiguous.json"), &pairs)?;
    figure(&mut run, "fig8a.csv", |p| figures::fig8a(p, &pairs))?;
    for p in &pairs {
        let name = |c: ClassId| classes.get(c).map_or(String::new(), |e| e.names.first().cloned().unwrap_or_default());
        println!("{} / {}: {:.3}", name(p.a), name(p.b), p.score);
    }
    run.finish()
}

pub fn analyze_sfacc(layout: &Layout, cfg: &PipelineConfig, model: Option<&str>) -> Result<()> {
    let mut run = Run::new(layout, cfg, "analyze sfacc");
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let sft = sf_table(&mut run)?;
    let preds = predictions(&mut run, &classes, &index)?;
    let p = match model {
        Some(m) => preds.iter().find(|p| p.model_id == m).with_context(|| format!("no predictions for model {m:?}"))?,
        None => preds.first().context("no prediction files")?,
    };
    run.param("model", &p.model_id);
    let t = sf_accuracy_table(&sft, p, &index);
    json(&mut run, &layout.analysis().join(format!("sfacc_{}.json", p.model_id)), &t)?;
    figure(&mut run, &format!("sfacc_{}.csv", p.model_id), |path| figures::sfacc(path, &t))?;
    println!("spearman {}", figures::opt(t.spearman));
    run.finish()
}

pub fn analyze_mislabeled(layout: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(layout, cfg, "analyze mislabeled");
    let classes = classes(&mut run)?;
    let index = index(&mut run, &classes)?;
    let sft = sf_table(&mut run)?;
    let retained: Vec<ClassifyResponse> = read_jsonl(run.input(layout.retained_classify(), "`classify qc`")?)?;
    let report = mislabeled_report(&sft, &retained, &index)?;
    json(&mut run, &layout.analysis().join("mislabeled.json"), &report)?;
    println!(
        "{} images with sf 0, {} never selected in classify",
        report.sf_zero.len(),
        report.never_selected.len()
    );
    run.finish()
}

pub fn simulate_world(layout: &Layout, cfg: &PipelineConfig, spec: &WorldSpec) -> Result<()> {
    let mut run = Run::new(layout, cfg, "simulate world");
    run.param("spec", spec);
    let data = generate_world(spec)?;
    let out = |run: &mut Run, path: &Path, bytes: &[u8]| -> Result<()> {
        write_bytes(path, bytes)?;
        run.output(path)
    };
    out(&mut run, &layout.superclasses(), data.classes.registry().to_tsv().as_bytes())?;
    out(&mut run, &layout.classes(), data.classes.to_tsv().as_bytes())?;
    out(&mut run, &layout.hierarchy(), data.hierarchy.to_tsv().as_bytes())?;
    jsonl(&mut run, &layout.dataset(), data.index.records())?;
    for p in &data.predictions {
        jsonl(&mut run, &layout.predictions_dir().join(format!("{}.jsonl", p.model_id)), &p.records())?;
    }
    data.world.save(layout.world())?;
    run.output(&layout.world())?;
    run.finish()
}

fn annotator(n: &NoiseArgs, cfg: &PipelineConfig) -> AnnotatorModel {
    AnnotatorModel {
        rho: n.rho,
        eta: n.eta,
        kappa: n.kappa,
        seed: cfg.seed,
        spammers: n.spammers,
        spam_rate: n.spam_rate,
    }
}

fn noise_params(run: &mut Run, n: &NoiseArgs) {
    run.param("rho", n.rho);
    run.param("eta", n.eta);
    run.param("kappa", n.kappa);
    run.param("workers", n.workers);
    run.param("spammers", n.spammers);
    run.param("spam_rate", n.spam_rate);
}

pub fn simulate_contains(layout: &Layout, cfg: &PipelineConfig, n: &NoiseArgs) -> Result<()> {
    let mut run = Run::new(layout, cfg, "simulate contains");
    noise_params(&mut run, n);
    let classes = classes(&mut run)?;
    let distances = distances(&mut run, &classes)?;
    let world = world(&mut run)?;
    let grids = grids(&mut run)?;
    let responses =
        simulate::simulate_contains(&world, &grids, &distances, &annotator(n, cfg), cfg.annotators, n.workers)?;
    jsonl(&mut run, &layout.responses_contains(), &responses)?;
    println!("{} responses", responses.len());
    run.finish()
}

pub fn simulate_classify(layout: &Layout, cfg: &PipelineConfig, n: &NoiseArgs) -> Result<()> {
    let mut run = Run::new(layout, cfg, "simulate classify");
    noise_params(&mut run, n);
    let classes = classes(&mut run)?;
    let distances = distances(&mut run, &classes)?;
    let world = world(&mut run)?;
    let tasks = classify_tasks(&mut run)?;
    let responses = simulate::simulate_classify(&world, &tasks, &distances, &annotator(n, cfg), n.workers)?;
    jsonl(&mut run, &layout.responses_classify(), &responses)?;
    println!("{} responses", responses.len());
    run.finish()
}

pub fn import_released(layout: &Layout, cfg: &PipelineConfig, annotations: &Path, labels: &Path) -> Result<()> {
    let mut run = Run::new(layout, cfg, "import released-annotations");
    let classes = classes(&mut run)?;
    let labels = run.input(labels.to_owned(), "the validation label file")?;
    let annotations = run.input(annotations.to_owned(), "the released annotation file")?;
    let index = load_validation_labels(&labels, classes.len())?;
    let (images, summary) = import_file(&annotations, &index, &classes)?;
    jsonl(&mut run, &layout.dataset(), index.records())?;
    let anns: Vec<&ImageAnnotation> = images.iter().map(|i| &i.annotation).collect();
    jsonl(&mut run, &layout.annotations(), &anns)?;
    let flags: BTreeMap<&str, &Vec<String>> = images
        .iter()
        .filter(|i| !i.flags.is_empty())
        .map(|i| (i.annotation.image.as_str(), &i.flags))
        .collect();
    let report = json!({
        "images": summary.images,
        "multi_object": summary.multi_object,
        "main_disagreement": summary.main_disagreement,
        "flags": summary.flags,
        "skipped": summary.skipped,
        "flagged_images": flags,
    });
    json(&mut run, &layout.import_summary(), &report)?;
    println!(
        "{} images, {} with several objects, {} main label differs, {} records skipped",
        summary.images,
        summary.multi_object,
        summary.main_disagreement,
        summary.skipped.len()
    );
    run.finish()
}

pub fn serve(layout: &Layout, cfg: &PipelineConfig, addr: SocketAddr, lease_timeout: u64) -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let service = Service::open(
        layout.clone(),
        ServiceConfig {
            target: cfg.annotators,
            lease_timeout: Duration::from_secs(lease_timeout),
            pipeline: cfg.clone(),
        },
    )?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    println!("listening on http://{addr}");
    rt.block_on(crowdlabel_service::serve(Arc::new(service), addr))?;
    Ok(())
}
