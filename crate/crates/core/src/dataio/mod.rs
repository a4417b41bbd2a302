//! On-disk formats, dataset loading, and the synthetic generator.

mod dataset;
mod features;
mod synthetic;

pub use dataset::{AnnotationFile, Dataset, Manifest, ManifestEntry, Split, Video};
pub use features::{
    decode_features, encode_features, read_features, write_features, HEADER_LEN, MAGIC, VERSION,
};
pub use synthetic::{generate_synthetic, synthesize, SyntheticSpec, SyntheticVideo};
