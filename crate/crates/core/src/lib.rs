//! INGNN: node classification from ego-node, aggregated-neighborhood and
//! graph-structure features with adaptive fusion and alternating
//! (bi-level) training, plus the tooling used to study it: 1-WL
//! refinement and strongly regular graphs, Gaussian misclassification
//! analysis across homophily, and homophily-controlled graph generators.

pub mod dataio;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod theory;
pub mod trainer;
pub mod wl;

pub use graph::{edge_homophily, DataSplit, Graph, Labels};
pub use linalg::{DenseMatrix, SparseMatrix};
pub use model::{FusionMode, IngnnConfig, IngnnModel};
pub use trainer::{RunRecord, Schedule, TrainConfig};
