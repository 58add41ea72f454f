//! File names inside a data directory and loaders for the inputs.
//!
//! ```text
//! classes.tsv  superclasses.tsv  hierarchy.tsv  dataset.jsonl  predictions/*.jsonl
//! pool.jsonl -> grids.jsonl -> responses_contains.jsonl
//! -> qc_contains.json, retained_contains.jsonl -> sf.jsonl
//! -> candidates.jsonl, eligibility.jsonl
//! -> classify_tasks.jsonl, auto_annotations.jsonl -> responses_classify.jsonl
//! -> qc_classify.json, retained_classify.jsonl -> annotations.jsonl
//! -> metrics.json, figures/, analysis/
//! ```

use std::path::{Path, PathBuf};

use crate::ingest::{
    load_class_table, load_dataset, load_declared_accuracy, load_predictions, ClassTable, Coverage, DatasetIndex,
    Hierarchy, PredictionSet, SuperclassRegistry,
};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

macro_rules! files {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(pub fn $name(&self) -> PathBuf { self.root.join($file) })*
    };
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    files! {
        classes => "classes.tsv",
        superclasses => "superclasses.tsv",
        hierarchy => "hierarchy.tsv",
        dataset => "dataset.jsonl",
        predictions_dir => "predictions",
        declared_accuracy => "declared_accuracy.jsonl",
        world => "world.jsonl",
        pool => "pool.jsonl",
        ingest_report => "ingest_report.json",
        grids => "grids.jsonl",
        responses_contains => "responses_contains.jsonl",
        qc_contains => "qc_contains.json",
        retained_contains => "retained_contains.jsonl",
        sf => "sf.jsonl",
        sf_report => "sf_report.json",
        candidates => "candidates.jsonl",
        eligibility => "eligibility.jsonl",
        classify_tasks => "classify_tasks.jsonl",
        auto_annotations => "auto_annotations.jsonl",
        responses_classify => "responses_classify.jsonl",
        qc_classify => "qc_classify.json",
        retained_classify => "retained_classify.jsonl",
        import_summary => "import_summary.json",
        annotations => "annotations.jsonl",
        metrics => "metrics.json",
        figures => "figures",
        analysis => "analysis",
        manifests => "manifests",
    }

    /// Fails with a message naming the stage that produces `path`.
    pub fn require(&self, path: &Path, stage: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::MissingStage {
                path: path.to_owned(),
                stage: stage.to_owned(),
            })
        }
    }

    pub fn registry(&self) -> Result<SuperclassRegistry> {
        let p = self.superclasses();
        if p.exists() {
            SuperclassRegistry::load(p)
        } else {
            Ok(SuperclassRegistry::imagenet())
        }
    }

    pub fn load_classes(&self) -> Result<ClassTable> {
        self.require(&self.classes(), "ingest inputs")?;
        load_class_table(self.classes(), self.registry()?)
    }

    pub fn load_hierarchy(&self) -> Result<Hierarchy> {
        self.require(&self.hierarchy(), "ingest inputs")?;
        Hierarchy::load(self.hierarchy())
    }

    pub fn load_index(&self, num_classes: usize) -> Result<DatasetIndex> {
        self.require(&self.dataset(), "ingest inputs")?;
        load_dataset(self.dataset(), num_classes)
    }

    /// Prediction files in name order.
    pub fn prediction_files(&self) -> Result<Vec<PathBuf>> {
        let dir = self.predictions_dir();
        self.require(&dir, "ingest inputs")?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        Ok(files)
    }

    pub fn load_predictions(&self, index: &DatasetIndex, num_classes: usize, k_min: usize) -> Result<(Vec<PredictionSet>, Coverage)> {
        let (mut sets, cov) = load_predictions(&self.prediction_files()?, index, num_classes, k_min)?;
        if self.declared_accuracy().exists() {
            load_declared_accuracy(self.declared_accuracy(), &mut sets)?;
        }
        Ok((sets, cov))
    }
}
