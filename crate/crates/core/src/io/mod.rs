//! Files: labeled matrices, preprocessing, checkpoints and run configuration.

pub mod checkpoint;
pub mod config;
pub mod matrix;
pub mod preprocess;

pub use checkpoint::{load_checkpoint, load_samples, save_checkpoint, save_samples, SamplesFile, CHECKPOINT_VERSION};
pub use config::RunConfig;
pub use matrix::{load_matrix, save_matrix, write_labeled_csv, Delimiter, LabeledMatrix, MatrixFormat};
pub use preprocess::{biseq_to_beta, load_biseq, variance_filter, ReadCountPair};
