//! Alignment, semantic label encoding, dataset manifests and batching.

mod align;
mod batches;
mod manifest;
mod semantic;

pub use align::{align_face, align_labels, similarity_lstsq, Landmarks, TEMPLATE_128};
pub use batches::{iterate_batches, Augmentation, Batch, Batches, EpochCursor};
pub use manifest::{synthesize_dataset, Dataset, DatasetManifest, ManifestEntry, Sample, SynthesizeOptions};
pub use semantic::{
    encode_labels, resample_semantic, SemanticMap, CLASS_NAMES, NUM_CLASSES, STRUCTURAL_CLASSES,
};
