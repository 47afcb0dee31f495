use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::idx::{read_idx_file, IdxFile};
use crate::dataset::palette::Rgb;
use crate::dataset::{DatasetManifest, ManifestHeader, ManifestRow, RgbImage, Split, MANIFEST_FILE, MANIFEST_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tasks::TaskRegistry;

pub const PALETTE_NAMES: [&str; 10] = [
    "black", "white", "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple",
];

pub const PALETTE: [Rgb; 10] = [
    [0, 0, 0],
    [255, 255, 255],
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [255, 128, 0],
    [128, 0, 128],
];

pub const SOURCE_FILES: [(&str, Split, bool); 4] = [
    ("train-images-idx3-ubyte", Split::Train, true),
    ("train-labels-idx1-ubyte", Split::Train, false),
    ("t10k-images-idx3-ubyte", Split::Test, true),
    ("t10k-labels-idx1-ubyte", Split::Test, false),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorMnistConfig {
    pub fg_palette: Vec<Rgb>,
    pub bg_palette: Vec<Rgb>,
    pub seed: u64,
    /// Grayscale intensity at or above which a pixel is foreground.
    pub threshold: u8,
}

impl ColorMnistConfig {
    pub fn new(seed: u64) -> Self {
        ColorMnistConfig {
            fg_palette: PALETTE.to_vec(),
            bg_palette: PALETTE.to_vec(),
            seed,
            threshold: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, pal) in [("fg", &self.fg_palette), ("bg", &self.bg_palette)] {
            if pal.len() != 10 {
                return Err(Error::InvalidConfig(format!(
                    "{name} palette needs 10 colors, has {}",
                    pal.len()
                )));
            }
            for i in 0..pal.len() {
                if pal[..i].contains(&pal[i]) {
                    return Err(Error::InvalidConfig(format!("{name} palette repeats {:?}", pal[i])));
                }
            }
        }
        Ok(())
    }
}

/// Foreground and background class for one source image. The foreground is
/// uniform; the background is redrawn until its color differs.
pub fn assign_colors(cfg: &ColorMnistConfig, split: Split, index: usize) -> (usize, usize) {
    let mut rng = stream(cfg.seed, Stream::Colorize, split as u64, index as u64, 0);
    let fg = rng.gen_range(0..cfg.fg_palette.len());
    loop {
        let bg = rng.gen_range(0..cfg.bg_palette.len());
        if cfg.bg_palette[bg] != cfg.fg_palette[fg] {
            return (fg, bg);
        }
    }
}

pub fn colorize_image(gray: &[u8], width: usize, height: usize, fg: Rgb, bg: Rgb, threshold: u8) -> RgbImage {
    let mut img = RgbImage::filled(width, height, bg);
    for (i, &v) in gray.iter().enumerate() {
        if v >= threshold {
            img.put(i % width, i / width, fg);
        }
    }
    img
}

pub struct MnistSplit<'a> {
    pub images: &'a IdxFile,
    pub labels: &'a IdxFile,
}

impl MnistSplit<'_> {
    fn validate(&self) -> Result<()> {
        if !self.images.is_images() || self.labels.is_images() {
            return Err(Error::InvalidConfig("expected an (images, labels) IDX pair".into()));
        }
        if self.images.count() != self.labels.count() {
            return Err(Error::InvalidConfig(format!(
                "{} images but {} labels",
                self.images.count(),
                self.labels.count()
            )));
        }
        if let Some(bad) = self.labels.payload.iter().find(|&&d| d > 9) {
            return Err(Error::InvalidConfig(format!("digit label {bad} out of range")));
        }
        Ok(())
    }
}

pub fn colorize(
    train: MnistSplit<'_>,
    test: MnistSplit<'_>,
    cfg: &ColorMnistConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    train.validate()?;
    test.validate()?;
    let mut rows = Vec::new();
    for (split, part) in [(Split::Train, &train), (Split::Test, &test)] {
        let dir = out_dir.join(split.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (h, w) = part.images.image_shape();
        for i in 0..part.images.count() {
            let (fg, bg) = assign_colors(cfg, split, i);
            let img = colorize_image(
                part.images.image(i),
                w,
                h,
                cfg.fg_palette[fg],
                cfg.bg_palette[bg],
                cfg.threshold,
            );
            let path = format!("{}/{i:05}.png", split.as_str());
            img.save(&out_dir.join(&path))?;
            rows.push(ManifestRow {
                path,
                split,
                labels: vec![part.labels.payload[i] as usize, fg, bg],
                instance: i,
            });
        }
    }
    let manifest = DatasetManifest {
        header: ManifestHeader {
            format_version: MANIFEST_FORMAT_VERSION,
            kind: "colored_mnist".into(),
            tasks: TaskRegistry::colored_mnist(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            palette: PALETTE_NAMES
                .iter()
                .zip(PALETTE)
                .map(|(n, c)| (n.to_string(), c))
                .collect(),
        },
        rows,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Locates a source file in `raw_dir`, with or without a `.gz` suffix.
pub fn find_source(raw_dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = raw_dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        raw_dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX source file not found"),
    ))
}

/// Reads the four standard IDX files from `raw_dir` and writes the colored set.
pub fn colorize_dir(raw_dir: &Path, cfg: &ColorMnistConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let load = |stem: &str| read_idx_file(&find_source(raw_dir, stem)?);
    let (tr_x, tr_y) = (load(SOURCE_FILES[0].0)?, load(SOURCE_FILES[1].0)?);
    let (te_x, te_y) = (load(SOURCE_FILES[2].0)?, load(SOURCE_FILES[3].0)?);
    colorize(
        MnistSplit { images: &tr_x, labels: &tr_y },
        MnistSplit { images: &te_x, labels: &te_y },
        cfg,
        out_dir,
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Checks files in `dir` against a `sha256sum`-style listing
/// (`<hex>  <file name>` per line).
pub fn verify_checksums(dir: &Path, listing: &str) -> Result<usize> {
    let mut checked = 0;
    for line in listing.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (hex, name) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::format("<checksums>", format!("bad line {line:?}")))?;
        let name = name.trim().trim_start_matches('*');
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let got = sha256_hex(&bytes);
        if !got.eq_ignore_ascii_case(hex) {
            return Err(Error::format(&path, format!("sha256 {got} does not match {hex}")));
        }
        checked += 1;
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palettes_valid() {
        ColorMnistConfig::new(0).validate().unwrap();
        let mut c = ColorMnistConfig::new(0);
        c.bg_palette[3] = c.bg_palette[4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn assignments_never_collide_and_are_seeded() {
        let cfg = ColorMnistConfig::new(5);
        for i in 0..2000 {
            let (fg, bg) = assign_colors(&cfg, Split::Train, i);
            assert_ne!(cfg.fg_palette[fg], cfg.bg_palette[bg]);
            assert_eq!((fg, bg), assign_colors(&cfg, Split::Train, i));
        }
    }

    #[test]
    fn foreground_frequencies_within_three_sigma() {
        // fg is uniform over 10 classes: binomial(60000, 0.1), sigma = sqrt(5400) ≈ 73.5
        let cfg = ColorMnistConfig::new(2024);
        let mut hist = [0usize; 10];
        for i in 0..60_000 {
            hist[assign_colors(&cfg, Split::Train, i).0] += 1;
        }
        let sigma = (60_000.0f64 * 0.1 * 0.9).sqrt();
        for h in hist {
            assert!((h as f64 - 6000.0).abs() <= 3.0 * sigma, "{hist:?}");
        }
    }

    #[test]
    fn colorized_mask_matches_threshold() {
        let gray: Vec<u8> = (0..28 * 28).map(|i| (i * 37 % 256) as u8).collect();
        let img = colorize_image(&gray, 28, 28, PALETTE[2], PALETTE[6], 128);
        for (i, &v) in gray.iter().enumerate() {
            let want = if v >= 128 { PALETTE[2] } else { PALETTE[6] };
            assert_eq!(img.get(i % 28, i / 28), want);
        }
    }

    #[test]
    fn checksum_listing() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.bin"), b"abc").unwrap();
        let good = format!("{}  a.bin\n", sha256_hex(b"abc"));
        assert_eq!(verify_checksums(dir.path(), &good).unwrap(), 1);
        let bad = format!("{}  a.bin\n", sha256_hex(b"abd"));
        assert!(verify_checksums(dir.path(), &bad).is_err());
    }
}
