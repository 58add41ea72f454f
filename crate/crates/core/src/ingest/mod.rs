//! Loading and validating external inputs: class metadata, the is-a
//! hierarchy, dataset labels and ranked model predictions.

mod classes;
mod dataset;
mod hierarchy;

pub use classes::{load_class_table, ClassEntry, ClassTable, Superclass, SuperclassRegistry};
pub use dataset::{
    build_potential_labels, load_dataset, load_declared_accuracy, load_predictions, Coverage,
    DatasetIndex, DatasetRecord, PotentialLabelSet, PoolRecord, PredictionRecord, PredictionSet,
};
pub use hierarchy::{hierarchy_distance, ClassDistances, Hierarchy};
