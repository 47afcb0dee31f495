//! PreserveTask: procedurally rendered images carrying five labels each
//! (shape, color, size, location, background), perfectly class balanced.

mod decode;
mod generate;
mod image;
mod manifest;
pub mod palette;
mod render;

pub use decode::decode_label_oracle;
pub use generate::{generate_dataset, plan_manifest, render_variation, sample_path};
pub use image::RgbImage;
pub use manifest::{DatasetManifest, ManifestHeader, ManifestRow, Split, MANIFEST_FILE, MANIFEST_FORMAT_VERSION};
pub use render::{
    polygon_vertices, quadrant_center, rasterize, render_sample, sample_layout, GenConfig, Placement,
    VariationLabel, SIZE_BANDS, SIZE_JITTER,
};
