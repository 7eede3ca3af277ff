//! Synthetic fine-grained data, bit-exact PGM/PPM image files, deterministic
//! splits and batch iteration.

mod dataset;
mod pnm;

pub use dataset::{
    batch_iter, basic_transforms, generate_synthetic, load_dataset, save_dataset, Dataset,
    DatasetSpec, Sample, SplitManifest,
};
pub use pnm::{load_pnm, save_pnm};
