use std::collections::HashSet;
use std::path::Path;

use overlearn_core::dataset::{
    decode_label_oracle, generate_dataset, render_sample, DatasetManifest, GenConfig, Split, VariationLabel,
};
use overlearn_core::rng::{stream, Stream};

/// Renders two instances of every variation at `side` px and decodes each
/// back to its label.
pub fn exhaustive(side: usize, seed: u64) {
    let cfg = GenConfig {
        image_side: side,
        seed,
        ..GenConfig::default()
    };
    let mut failures = Vec::new();
    let mut seen = 0;
    for label in VariationLabel::all() {
        for instance in 0..2 {
            let mut rng = stream(seed, Stream::Render, label.index() as u64, instance, 0);
            let img = render_sample(&label, &cfg, &mut rng);
            match decode_label_oracle(&img, &cfg) {
                Ok(got) if got == label => {}
                other => failures.push((label, other)),
            }
        }
        seen += 1;
    }
    assert_eq!(seen, 1260);
    assert!(failures.is_empty(), "{} failures at {side}px, first: {:?}", failures.len(), &failures[..failures.len().min(5)]);
}

/// Generates the default configuration into `dir` and checks the manifest
/// read back from disk: row counts, distinct variations, per-task class
/// balance, and that every listed image exists.
pub fn default_generation(dir: &Path) {
    let cfg = GenConfig::default();
    generate_dataset(&cfg, dir).unwrap();
    let m = DatasetManifest::load(&dir.join("manifest.csv")).unwrap();
    assert_eq!(m.count(Split::Train), 63_000);
    assert_eq!(m.count(Split::Test), 12_600);
    let variations: HashSet<&[usize]> = m.rows.iter().map(|r| r.labels.as_slice()).collect();
    assert_eq!(variations.len(), 1260);
    for (t, spec) in m.tasks().tasks().iter().enumerate() {
        for split in [Split::Train, Split::Test] {
            let hist = m.class_histogram(t, split);
            let expected = m.count(split) / spec.num_classes;
            assert!(hist.iter().all(|&c| c == expected), "{} {split:?}: {hist:?}", spec.name);
        }
    }
    let missing = m.rows.iter().filter(|r| !dir.join(&r.path).is_file()).count();
    assert_eq!(missing, 0, "{missing} images missing");
}
