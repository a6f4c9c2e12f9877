//! Volumes, the SVOL container, preprocessing, augmentation, triplets and
//! synthetic phantoms.

mod augment;
mod manifest;
mod preprocess;
mod svol;
mod synth;
mod triplet;
mod volume;

pub use augment::{apply as apply_augment, augment, flip_horizontal, translate, AugmentParams};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use preprocess::{
    clahe, normalize_percentile, percentile_bounds, preprocess, resize_bilinear, resize_labels,
    resize_nearest, resize_volume,
};
pub use svol::{decode as decode_svol, encode as encode_svol, read_image, read_labels, read_volume, write_volume, SvolVolume};
pub use synth::{
    class_level, generate_synthetic, rasterize, Ellipsoid, SyntheticCase, SyntheticMode, SyntheticSet,
    CENTER_NOISE_SIGMA, SYNTH_SPACING,
};
pub use triplet::{extract_triplets, image_triplets, SliceTriplet};
pub use volume::{LabelVolume, Spacing, Volume};
