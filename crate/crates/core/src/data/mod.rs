//! Image and volume records, preprocessing, augmentation, patch sampling
//! and a synthetic vessel generator.

mod augment;
mod preprocess;
mod record;
mod sampling;
mod synth;

pub use augment::{augment, Dihedral};
pub use preprocess::{clahe, gamma_adjust, green_channel, hu_normalize, preprocess, Preprocess, CLAHE_BINS};
pub use record::{
    load_image, load_records, read_pgm, save_record, write_pgm, ImageRecord, Manifest, ManifestEntry, Modality,
};
pub use sampling::{
    sample_patches_2d, sample_patches_3d, PatchKind, SampleOrigin, SampleSet, StratifiedPlan,
};
pub(crate) use synth::stream_seed;
pub use synth::{foreground_fraction, synth_dataset, synth_vessels, SynthParams};
