use std::fs;
use std::path::Path;

use super::image::RgbImage;
use super::manifest::{DatasetManifest, ManifestHeader, ManifestRow, Split, MANIFEST_FILE, MANIFEST_FORMAT_VERSION};
use super::palette::VIBGYOR;
use super::render::{render_sample, GenConfig, VariationLabel};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tasks::{TaskRegistry, COLORS};

pub fn sample_path(split: Split, variation: usize, instance: usize) -> String {
    format!("{}/{variation:04}_{instance:03}.png", split.as_str())
}

/// Manifest rows in file order: every train row, then every test row,
/// each ordered by variation index then instance.
pub fn plan_manifest(cfg: &GenConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(
        VariationLabel::COUNT * (cfg.train_per_variation + cfg.test_per_variation),
    );
    for (split, per) in [
        (Split::Train, cfg.train_per_variation),
        (Split::Test, cfg.test_per_variation),
    ] {
        for label in VariationLabel::all() {
            let v = label.index();
            for instance in 0..per {
                rows.push(ManifestRow {
                    path: sample_path(split, v, instance),
                    split,
                    labels: label.classes().to_vec(),
                    instance,
                });
            }
        }
    }
    Ok(DatasetManifest {
        header: ManifestHeader {
            format_version: MANIFEST_FORMAT_VERSION,
            kind: "preserve_task".into(),
            tasks: TaskRegistry::preserve_task(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            palette: COLORS
                .iter()
                .zip(VIBGYOR)
                .map(|(n, c)| (n.to_string(), c))
                .collect(),
        },
        rows,
    })
}

/// Renders every instance of one variation: train instances first, then
/// test, all from the variation's own stream.
pub fn render_variation(label: &VariationLabel, cfg: &GenConfig) -> Vec<(Split, usize, RgbImage)> {
    let mut rng = stream(cfg.seed, Stream::Render, label.index() as u64, 0, 0);
    let mut out = Vec::with_capacity(cfg.train_per_variation + cfg.test_per_variation);
    for (split, per) in [
        (Split::Train, cfg.train_per_variation),
        (Split::Test, cfg.test_per_variation),
    ] {
        for i in 0..per {
            out.push((split, i, render_sample(label, cfg, &mut rng)));
        }
    }
    out
}

/// Renders the full set into `out_dir` and writes `manifest.csv`.
pub fn generate_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let manifest = plan_manifest(cfg)?;
    for split in [Split::Train, Split::Test] {
        let dir = out_dir.join(split.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let labels: Vec<VariationLabel> = VariationLabel::all().collect();
    let chunk = labels.len().div_ceil(workers);
    std::thread::scope(|s| -> Result<()> {
        let handles: Vec<_> = labels
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || -> Result<()> {
                    for label in part {
                        for (split, i, img) in render_variation(label, cfg) {
                            let path = out_dir.join(sample_path(split, label.index(), i));
                            img.save(&path)?;
                        }
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().expect("render worker panicked")?;
        }
        Ok(())
    })?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_counts_and_balance() {
        let cfg = GenConfig {
            train_per_variation: 1,
            test_per_variation: 1,
            ..GenConfig::desk_scale(0)
        };
        let m = plan_manifest(&cfg).unwrap();
        assert_eq!(m.count(Split::Train), 1260);
        assert_eq!(m.count(Split::Test), 1260);
        for t in 0..5 {
            let hist = m.class_histogram(t, Split::Train);
            assert!(hist.iter().all(|&h| h == 1260 / hist.len()));
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = GenConfig {
            image_side: 16,
            ..GenConfig::default()
        };
        assert!(matches!(plan_manifest(&cfg), Err(Error::InvalidConfig(_))));
    }
}
