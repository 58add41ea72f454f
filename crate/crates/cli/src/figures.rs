//! CSV tables behind the figures. Every file has a header row and one
//! record per plotted point.

use std::path::Path;

use anyhow::Result;

use crowdlabel::analysis::{AmbiguousPair, ConfusionMatrix, CooccurrenceMatrix, SfAccuracyTable};
use crowdlabel::contains::RelativeSfReport;
use crowdlabel::io::write_csv;
use crowdlabel::metrics::{MetricsReport, Subset, SubsetMetrics};

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn ci(v: Option<[f64; 2]>) -> [String; 2] {
    match v {
        Some([lo, hi]) => [num(lo), num(hi)],
        None => [String::new(), String::new()],
    }
}

fn subset<'a>(r: &'a crowdlabel::metrics::ModelReport, s: Subset) -> &'a SubsetMetrics {
    &r.subsets[&s]
}

/// Number of other labels at each relative threshold.
pub fn fig6(path: &Path, report: &RelativeSfReport) -> Result<()> {
    let mut rows = Vec::new();
    for (t, hist) in report.thresholds.iter().zip(report.histograms()) {
        for (others, images) in hist {
            rows.push(vec![num(*t), others.to_string(), images.to_string()]);
        }
    }
    write_csv(path, &["threshold", "other_labels", "images"], rows)?;
    Ok(())
}

/// Top-1 on all images against top-1 on multi-object images.
pub fn fig4a(path: &Path, report: &MetricsReport) -> Result<()> {
    let rows = report.models.iter().map(|m| {
        let (a, b) = (subset(m, Subset::All), subset(m, Subset::MultiObject));
        let [alo, ahi] = ci(a.top1_ci);
        let [blo, bhi] = ci(b.top1_ci);
        vec![m.model.clone(), opt(a.top1), alo, ahi, opt(b.top1), blo, bhi, b.images.to_string()]
    });
    let header = ["model", "top1_all", "top1_all_lo", "top1_all_hi", "top1_multi", "top1_multi_lo", "top1_multi_hi", "multi_images"];
    write_csv(path, &header, rows)?;
    Ok(())
}

/// Top-1 against multi-label accuracy on multi-object images.
pub fn fig4b(path: &Path, report: &MetricsReport) -> Result<()> {
    let rows = report.models.iter().map(|m| {
        let s = subset(m, Subset::MultiObject);
        let [lo, hi] = ci(s.multi_label_ci);
        vec![m.model.clone(), opt(s.top1), opt(s.multi_label), lo, hi, opt(m.top5_correction_fraction)]
    });
    write_csv(path, &["model", "top1_multi", "multi_label", "multi_label_lo", "multi_label_hi", "top5_correction"], rows)?;
    Ok(())
}

/// Accuracy on images whose main object differs from the dataset label.
pub fn fig5a(path: &Path, report: &MetricsReport) -> Result<()> {
    let rows = report.models.iter().map(|m| {
        let s = subset(m, Subset::MainDisagreement);
        vec![
            m.model.clone(),
            s.images.to_string(),
            opt(s.top1),
            opt(s.main_label),
            opt(s.random_object_baseline),
        ]
    });
    write_csv(path, &["model", "images", "top1", "main_label", "random_object_baseline"], rows)?;
    Ok(())
}

/// Top-1 against human-centric scores. `reference` is the dataset label
/// scored the same way: (mean sf, main-label accuracy).
pub fn fig7(path: &Path, report: &MetricsReport, reference: (f64, f64)) -> Result<()> {
    let mut rows: Vec<Vec<String>> = report
        .models
        .iter()
        .map(|m| {
            let s = subset(m, Subset::All);
            let [lo, hi] = ci(s.main_label_ci);
            vec![m.model.clone(), opt(s.top1), opt(s.mean_prediction_sf), opt(s.main_label), lo, hi]
        })
        .collect();
    rows.push(vec![
        "dataset_label".into(),
        num(1.0),
        num(reference.0),
        num(reference.1),
        String::new(),
        String::new(),
    ]);
    write_csv(path, &["model", "top1", "mean_prediction_sf", "main_label", "main_label_lo", "main_label_hi"], rows)?;
    Ok(())
}

/// Sf of incorrect top-1 predictions.
pub fn fig9(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut rows = Vec::new();
    for m in &report.models {
        let h = &m.incorrect_prediction_sf;
        let total = h.total().max(1) as f64;
        for (b, &c) in h.counts.iter().enumerate() {
            rows.push(vec![
                m.model.clone(),
                num(h.edges[b]),
                num(h.edges[b + 1]),
                c.to_string(),
                num(c as f64 / total),
            ]);
        }
    }
    write_csv(path, &["model", "bin_lo", "bin_hi", "count", "share"], rows)?;
    Ok(())
}

/// Pairwise accuracy of each model on the most ambiguous pairs.
pub fn fig8b(path: &Path, pairs: &[AmbiguousPair]) -> Result<()> {
    let mut rows = Vec::new();
    for p in pairs {
        for (model, acc) in &p.pairwise {
            rows.push(vec![
                model.clone(),
                p.a.0.to_string(),
                p.b.0.to_string(),
                opt(acc.accuracy),
                num(acc.coverage),
                acc.images.to_string(),
            ]);
        }
    }
    write_csv(path, &["model", "class_a", "class_b", "pairwise_accuracy", "coverage", "images"], rows)?;
    Ok(())
}

pub fn fig8a(path: &Path, pairs: &[AmbiguousPair]) -> Result<()> {
    let rows = pairs
        .iter()
        .map(|p| vec![p.a.0.to_string(), p.b.0.to_string(), num(p.score), num(p.mean_ab), num(p.mean_ba)]);
    write_csv(path, &["class_a", "class_b", "score", "mean_ab", "mean_ba"], rows)?;
    Ok(())
}

pub fn confusion(path: &Path, m: &ConfusionMatrix) -> Result<()> {
    let rows = m
        .entries()
        .into_iter()
        .map(|e| vec![e.row.to_string(), e.col.to_string(), num(e.value)]);
    write_csv(path, &["row", "col", "value"], rows)?;
    Ok(())
}

pub fn cooccurrence(path: &Path, m: &CooccurrenceMatrix) -> Result<()> {
    let rows = m
        .entries()
        .into_iter()
        .map(|e| vec![e.row.to_string(), e.col.to_string(), num(e.value)]);
    write_csv(path, &["row", "col", "value"], rows)?;
    Ok(())
}

pub fn cooccurrence_top(path: &Path, m: &CooccurrenceMatrix, n: usize) -> Result<()> {
    let rows = m
        .top(n)
        .into_iter()
        .map(|t| vec![t.class.0.to_string(), t.other.0.to_string(), num(t.value)]);
    write_csv(path, &["class", "other", "value"], rows)?;
    Ok(())
}

pub fn sfacc(path: &Path, t: &SfAccuracyTable) -> Result<()> {
    let rows = t.rows.iter().map(|r| {
        vec![r.class.0.to_string(), r.images.to_string(), opt(r.mean_sf), num(r.accuracy)]
    });
    write_csv(path, &["class", "images", "mean_sf", "accuracy"], rows)?;
    Ok(())
}
