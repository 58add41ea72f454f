use std::collections::BTreeSet;

use crowdlabel::classify::ImageAnnotation;
use crowdlabel::pipeline::{run_simulated, SimulatedRun};
use crowdlabel::simulate::{generate_world, AnnotatorModel, SyntheticDataset, WorldSpec};
use crowdlabel::{ClassId, PipelineConfig};

fn world() -> SyntheticDataset {
    generate_world(&WorldSpec::default()).unwrap()
}

fn in_pool(data: &SyntheticDataset, run: &SimulatedRun, a: &ImageAnnotation) -> bool {
    let pool = run.pool.get(&a.image).unwrap();
    data.world.get(&a.image).unwrap().objects.iter().all(|o| pool.contains(o))
}

#[test]
fn noiseless_recovers_every_covered_image() {
    let data = world();
    let run = run_simulated(&data, &AnnotatorModel::noiseless(7), &PipelineConfig::default(), 12).unwrap();
    assert_eq!(run.annotations.len(), 500);
    assert_eq!(run.contains_qc.dropped_count(), 0);
    let mut checked = 0;
    for a in &run.annotations {
        if !in_pool(&data, &run, a) {
            continue;
        }
        checked += 1;
        let truth = data.world.get(&a.image).unwrap();
        let got: BTreeSet<ClassId> = a.object_labels().collect();
        let want: BTreeSet<ClassId> = truth.objects.iter().copied().collect();
        assert_eq!(got, want, "{}", a.image);
        assert_eq!(a.num_objects, truth.objects.len(), "{}", a.image);
        assert_eq!(a.main_label, truth.main, "{}", a.image);
    }
    assert!(checked > 450, "only {checked} covered images");
}

#[test]
fn noisy_main_label_recovery() {
    let data = world();
    let mut total = 0.0;
    for seed in 0..5 {
        let model = AnnotatorModel { rho: 0.9, eta: 0.2, kappa: 2.0, seed, spammers: 0, spam_rate: 0.0 };
        let run = run_simulated(&data, &model, &PipelineConfig::default(), 12).unwrap();
        let hits = run
            .annotations
            .iter()
            .filter(|a| data.world.get(&a.image).unwrap().main == a.main_label)
            .count();
        let acc = hits as f64 / run.annotations.len() as f64;
        println!("seed {seed}: main-label accuracy {acc:.4}");
        total += acc;
    }
    assert!(total / 5.0 >= 0.95, "mean {}", total / 5.0);
}

#[test]
fn spammers_are_dropped_by_contains_qc() {
    let data = world();
    let model = AnnotatorModel { rho: 0.95, eta: 0.05, kappa: 2.0, seed: 1, spammers: 2, spam_rate: 0.05 };
    let run = run_simulated(&data, &model, &PipelineConfig::default(), 12).unwrap();
    let dropped: Vec<&String> = run.contains_qc.dropped_workers.keys().collect();
    assert_eq!(dropped, vec!["sim000", "sim001"]);
}

#[test]
fn run_is_deterministic() {
    let data = world();
    let model = AnnotatorModel { rho: 0.9, eta: 0.2, kappa: 2.0, seed: 4, spammers: 0, spam_rate: 0.0 };
    let a = run_simulated(&data, &model, &PipelineConfig::default(), 12).unwrap();
    let b = run_simulated(&data, &model, &PipelineConfig::default(), 12).unwrap();
    assert_eq!(a.annotations, b.annotations);
    assert_eq!(a.grids, b.grids);
}
