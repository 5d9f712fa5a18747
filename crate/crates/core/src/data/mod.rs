//! Synthetic volumes, offline augmentation, splitting and file I/O.

mod augment;
mod io;
mod split;
mod synthetic;

pub use augment::{affine_resample, augment_offline, augment_volume, flip_axis, swap_patches, Affine, AugmentationSpec};
pub use io::{load_dataset, load_volume, read_manifest, save_volume, write_manifest, VolumeHeader, DTYPE, ORDER};
pub use split::{split_by_source, split_indices, SplitSpec};
pub use synthetic::{generate_synthetic, linear_probe_accuracy, SyntheticSpec};
