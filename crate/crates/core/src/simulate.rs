//! Seeded synthetic annotators and a synthetic dataset generator.
//!
//! Every random draw comes from a stream keyed on `(seed, worker, task)`,
//! so responses do not depend on the order tasks are simulated in.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{ClassifyResponse, ClassifyTask};
use crate::contains::{GridResponse, GridTask};
use crate::ingest::{
    ClassDistances, ClassEntry, ClassTable, DatasetIndex, DatasetRecord, Hierarchy, PredictionSet, Superclass,
    SuperclassRegistry,
};
use crate::io::{read_jsonl, write_jsonl};
use crate::seed::stream;
use crate::{ClassId, Error, ImageId, Result, SuperclassId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldImage {
    pub image: ImageId,
    pub objects: Vec<ClassId>,
    pub main: ClassId,
}

/// True objects and main label per image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruthWorld {
    images: BTreeMap<ImageId, WorldImage>,
}

impl GroundTruthWorld {
    pub fn new(images: Vec<WorldImage>) -> Result<Self> {
        let mut out = GroundTruthWorld::default();
        for mut w in images {
            w.objects.sort();
            w.objects.dedup();
            if w.objects.is_empty() || !w.objects.contains(&w.main) {
                return Err(Error::Config(format!("world image {}: main must be one of a nonempty object set", w.image)));
            }
            if out.images.contains_key(&w.image) {
                return Err(Error::DuplicateImage(w.image));
            }
            out.images.insert(w.image.clone(), w);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.images.values().collect::<Vec<_>>())
    }

    pub fn get(&self, image: &str) -> Option<&WorldImage> {
        self.images.get(image)
    }

    pub fn iter(&self) -> impl Iterator<Item = &WorldImage> {
        self.images.values()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Images with at least one object labeled `class`.
    pub fn control_eligible(&self, class: ClassId) -> Vec<&str> {
        self.iter()
            .filter(|w| w.objects.contains(&class))
            .map(|w| w.image.as_str())
            .collect()
    }
}

/// Per-annotator noise. A worker whose index is below `spammers` ignores
/// the content and selects every offered item with probability
/// `spam_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorModel {
    pub rho: f64,
    pub eta: f64,
    pub kappa: f64,
    pub seed: u64,
    #[serde(default)]
    pub spammers: usize,
    #[serde(default)]
    pub spam_rate: f64,
}

impl AnnotatorModel {
    pub fn noiseless(seed: u64) -> Self {
        AnnotatorModel { rho: 1.0, eta: 0.0, kappa: 1.0, seed, spammers: 0, spam_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("eta", self.eta), ("spam_rate", self.spam_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.kappa.is_nan() || self.kappa <= 0.0 {
            return Err(Error::Config(format!("kappa = {} must be positive", self.kappa)));
        }
        Ok(())
    }

    /// Affirmation probability of a false label `d` hops from the nearest
    /// true label; unreachable labels are never affirmed.
    pub fn false_affirm(&self, d: Option<u32>) -> f64 {
        match d {
            Some(d) => (self.eta * 2f64.powf(-(f64::from(d) - 1.0) / self.kappa)).min(1.0),
            None => 0.0,
        }
    }

    fn is_spammer(&self, worker: usize) -> bool {
        worker < self.spammers
    }
}

pub fn worker_name(index: usize) -> String {
    format!("sim{index:03}")
}

/// Worker indices for the `slot`-th task: `n` consecutive workers of the
/// pool, wrapping around.
fn assign(slot: usize, n: usize, pool: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |r| (slot * n + r) % pool)
}

fn nearest_true(objects: &[ClassId], label: ClassId, distances: &ClassDistances) -> Option<u32> {
    objects.iter().filter_map(|&o| distances.get(o, label)).min()
}

/// `n_annotators` distinct workers from a pool of `n_workers` answer each
/// grid.
pub fn simulate_contains(
    world: &GroundTruthWorld,
    grids: &[GridTask],
    distances: &ClassDistances,
    model: &AnnotatorModel,
    n_annotators: usize,
    n_workers: usize,
) -> Result<Vec<GridResponse>> {
    model.validate()?;
    check_pool(n_annotators, n_workers)?;
    let mut out = Vec::with_capacity(grids.len() * n_annotators);
    for (slot, grid) in grids.iter().enumerate() {
        for w in assign(slot, n_annotators, n_workers) {
            let worker = worker_name(w);
            let mut rng = stream(model.seed, &[b"contains", worker.as_bytes(), grid.task_id.as_bytes()]);
            let mut selected = Vec::new();
            for image in &grid.shown {
                let p = if model.is_spammer(w) {
                    model.spam_rate
                } else {
                    match world.get(image) {
                        Some(t) if t.objects.contains(&grid.query_label) => model.rho,
                        Some(t) => model.false_affirm(nearest_true(&t.objects, grid.query_label, distances)),
                        None => 0.0,
                    }
                };
                if rng.gen_bool(p) {
                    selected.push(image.clone());
                }
            }
            out.push(GridResponse { task_id: grid.task_id.clone(), worker, selected, received_at: None });
        }
    }
    Ok(out)
}

fn check_pool(n_annotators: usize, n_workers: usize) -> Result<()> {
    if n_annotators == 0 || n_workers < n_annotators {
        return Err(Error::Config(format!(
            "need at least {n_annotators} workers for {n_annotators} annotators per task, have {n_workers}"
        )));
    }
    Ok(())
}

/// Closest candidate within two hops of `label` that is not itself a true
/// object; ties go to the smaller id.
fn confusable(label: ClassId, objects: &[ClassId], candidates: &[ClassId], distances: &ClassDistances) -> Option<ClassId> {
    candidates
        .iter()
        .filter(|c| !objects.contains(c))
        .filter_map(|&c| Some((distances.get(label, c).filter(|&d| d <= 2)?, c)))
        .min()
        .map(|(_, c)| c)
}

/// Each task gets `task.annotators` distinct workers from a pool of
/// `n_workers`.
pub fn simulate_classify(
    world: &GroundTruthWorld,
    tasks: &[ClassifyTask],
    distances: &ClassDistances,
    model: &AnnotatorModel,
    n_workers: usize,
) -> Result<Vec<ClassifyResponse>> {
    model.validate()?;
    let mut out = Vec::new();
    for (slot, task) in tasks.iter().enumerate() {
        check_pool(task.annotators, n_workers)?;
        let truth = world.get(&task.image);
        for w in assign(slot, task.annotators, n_workers) {
            let worker = worker_name(w);
            let mut rng = stream(model.seed, &[b"classify", worker.as_bytes(), task.task_id.as_bytes()]);
            let (valid, main) = if model.is_spammer(w) {
                let valid: BTreeSet<ClassId> =
                    task.candidates.iter().copied().filter(|_| rng.gen_bool(model.spam_rate)).collect();
                (valid, task.candidates.choose(&mut rng).copied())
            } else if let Some(t) = truth {
                honest_classify(t, &task.candidates, distances, model, &mut rng)
            } else {
                (BTreeSet::new(), None)
            };
            out.push(ClassifyResponse {
                task_id: task.task_id.clone(),
                worker,
                image: task.image.clone(),
                valid: valid.into_iter().collect(),
                main,
                qc_flag: None,
                received_at: None,
            });
        }
    }
    Ok(out)
}

fn honest_classify(
    t: &WorldImage,
    candidates: &[ClassId],
    distances: &ClassDistances,
    model: &AnnotatorModel,
    rng: &mut impl Rng,
) -> (BTreeSet<ClassId>, Option<ClassId>) {
    let mut valid = BTreeSet::new();
    let mut main_pick = None;
    for &o in &t.objects {
        let alt = confusable(o, &t.objects, candidates, distances);
        let pick = if candidates.contains(&o) {
            // the draw happens even without an alternative so that adding a
            // confusable candidate does not shift the rest of the stream
            let keep = rng.gen_bool(model.rho);
            if keep { Some(o) } else { alt.or(Some(o)) }
        } else {
            alt
        };
        if let Some(p) = pick {
            valid.insert(p);
            if o == t.main {
                main_pick = Some(p);
            }
        }
    }
    if valid.is_empty() {
        return (valid, None);
    }
    let main = match main_pick {
        Some(m) if rng.gen_bool(model.rho) => m,
        _ => {
            let v: Vec<ClassId> = valid.iter().copied().collect();
            v[rng.gen_range(0..v.len())]
        }
    };
    (valid, Some(main))
}

/// Shape of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub images: usize,
    pub superclasses: usize,
    pub classes_per_superclass: usize,
    pub max_objects: usize,
    pub models: usize,
    /// Chance that a multi-object image's main object is not the one the
    /// dataset label names.
    pub main_disagreement: f64,
    /// Chance that a multi-object image has one object no model ranks.
    pub pool_miss: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            images: 500,
            superclasses: 11,
            classes_per_superclass: 2,
            max_objects: 3,
            models: 3,
            main_disagreement: 0.3,
            pool_miss: 0.05,
            seed: 0,
        }
    }
}

/// Everything the pipeline needs plus the truth it should recover.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub classes: ClassTable,
    pub hierarchy: Hierarchy,
    pub index: DatasetIndex,
    pub predictions: Vec<PredictionSet>,
    pub world: GroundTruthWorld,
}

const RANK_LEN: usize = 5;

/// Classes sit three levels below a root (`root > group > family > class`),
/// so two classes of one superclass are 2 hops apart and classes of
/// different superclasses 6.
pub fn generate_world(spec: &WorldSpec) -> Result<SyntheticDataset> {
    let n_classes = spec.superclasses * spec.classes_per_superclass;
    if spec.superclasses == 0 || spec.classes_per_superclass == 0 || n_classes < RANK_LEN + 1 {
        return Err(Error::Config(format!("need more than {RANK_LEN} classes, spec gives {n_classes}")));
    }
    if spec.max_objects == 0 || spec.images == 0 || spec.models == 0 {
        return Err(Error::Config("images, models and max_objects must be positive".into()));
    }
    let known = SuperclassRegistry::imagenet();
    let names: Vec<String> = (0..spec.superclasses)
        .map(|s| match (spec.superclasses == known.len(), known.get(SuperclassId(s as u32))) {
            (true, Some(sc)) => sc.name.clone(),
            _ => format!("group {s}"),
        })
        .collect();
    let registry = SuperclassRegistry::new(
        names
            .iter()
            .map(|n| Superclass { name: n.clone(), expected_count: Some(spec.classes_per_superclass) })
            .collect(),
    );
    let mut entries = Vec::new();
    let mut edges = Vec::new();
    for s in 0..spec.superclasses {
        edges.push(("r0000000".to_owned(), format!("g{s:07}")));
        edges.push((format!("g{s:07}"), format!("f{s:07}")));
        for c in 0..spec.classes_per_superclass {
            let id = s * spec.classes_per_superclass + c;
            let wnid = format!("n{id:08}");
            edges.push((format!("f{s:07}"), wnid.clone()));
            entries.push(ClassEntry {
                wnid,
                names: vec![format!("class {id}")],
                wiki_url: String::new(),
                superclass: SuperclassId(s as u32),
            });
        }
    }
    let classes = ClassTable::new(entries, registry)?;
    let hierarchy = Hierarchy::from_edges(edges)?;
    let sc = |c: ClassId| c.index() / spec.classes_per_superclass;

    let mut rng = stream(spec.seed, &[b"world"]);
    let mut records = Vec::new();
    let mut world = Vec::new();
    let mut hidden: BTreeMap<ImageId, ClassId> = BTreeMap::new();
    for i in 0..spec.images {
        let image = format!("img{i:05}");
        let label = ClassId((i % n_classes) as u32);
        let roll: f64 = rng.gen();
        let n_obj = (if roll < 0.55 { 1 } else if roll < 0.85 { 2 } else { 3 }).min(spec.max_objects);
        let mut objects = vec![label];
        while objects.len() < n_obj {
            let c = ClassId(rng.gen_range(0..n_classes) as u32);
            if !objects.contains(&c) {
                objects.push(c);
            }
        }
        let main = if n_obj > 1 && rng.gen_bool(spec.main_disagreement) {
            objects[rng.gen_range(1..n_obj)]
        } else {
            label
        };
        if n_obj > 1 && rng.gen_bool(spec.pool_miss) {
            let h = objects[rng.gen_range(1..n_obj)];
            if h != main {
                hidden.insert(image.clone(), h);
            }
        }
        records.push(DatasetRecord { image: image.clone(), dataset_label: label, url: None });
        world.push(WorldImage { image, objects, main });
    }

    let mut predictions = Vec::new();
    for m in 0..spec.models {
        let model_id = format!("model{m}");
        let mut set = PredictionSet::new(model_id.clone());
        for w in &world {
            let mut rng = stream(spec.seed, &[b"predict", model_id.as_bytes(), w.image.as_bytes()]);
            let skip = hidden.get(&w.image);
            let mut ranked: Vec<ClassId> = Vec::new();
            // better models put the main object first more often
            if rng.gen_bool(0.9 - 0.15 * m as f64) {
                ranked.push(w.main);
            }
            let mut rest: Vec<ClassId> = w.objects.iter().copied().filter(|o| Some(o) != skip).collect();
            rest.shuffle(&mut rng);
            let mut near: Vec<ClassId> = (0..n_classes as u32)
                .map(ClassId)
                .filter(|c| !w.objects.contains(c) && w.objects.iter().any(|o| sc(*o) == sc(*c)))
                .collect();
            near.shuffle(&mut rng);
            if rng.gen_bool(0.2) {
                if let Some(&c) = near.first() {
                    ranked.insert(0, c);
                }
            }
            let mut far: Vec<ClassId> = (0..n_classes as u32).map(ClassId).collect();
            far.shuffle(&mut rng);
            for c in rest.into_iter().chain(near).chain(far) {
                if ranked.len() == RANK_LEN {
                    break;
                }
                if Some(&c) != skip && !ranked.contains(&c) {
                    ranked.push(c);
                }
            }
            set.ranked.insert(w.image.clone(), ranked);
        }
        predictions.push(set);
    }

    Ok(SyntheticDataset {
        index: DatasetIndex::new(records, classes.len())?,
        classes,
        hierarchy,
        predictions,
        world: GroundTruthWorld::new(world)?,
    })
}
