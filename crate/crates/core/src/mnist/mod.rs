//! Colored MNIST: digits recolored with a random foreground and a
//! different random background, giving three 10-class tasks per image.

mod colorize;
mod idx;

pub use colorize::{
    assign_colors, colorize, colorize_dir, colorize_image, find_source, sha256_hex, verify_checksums,
    ColorMnistConfig, MnistSplit, PALETTE, PALETTE_NAMES, SOURCE_FILES,
};
pub use idx::{encode_idx, parse_idx, read_idx_file, IdxFile, IMAGES_MAGIC, LABELS_MAGIC};
