use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use overlearn_core::mnist::{verify_checksums, SOURCE_FILES};

fn get(url: &str) -> Result<Vec<u8>> {
    let resp = ureq::get(url).call().with_context(|| format!("GET {url}"))?;
    let mut body = Vec::new();
    resp.into_reader()
        .read_to_end(&mut body)
        .with_context(|| format!("reading {url}"))?;
    Ok(body)
}

/// Downloads the gzipped IDX files from `base` into `raw_dir` and checks
/// them against a sha256 listing, either local or `<base>/SHA256SUMS`.
pub fn fetch_mnist(base: &str, raw_dir: &Path, checksums: Option<&Path>) -> Result<usize> {
    let base = base.trim_end_matches('/');
    let listing = match checksums {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::from_utf8(get(&format!("{base}/SHA256SUMS"))?).context("checksum listing is not UTF-8")?,
    };
    let wanted: Vec<String> = SOURCE_FILES.iter().map(|(stem, ..)| format!("{stem}.gz")).collect();
    let relevant: String = listing
        .lines()
        .filter(|l| {
            l.split_whitespace()
                .nth(1)
                .is_some_and(|n| wanted.iter().any(|w| w == n.trim_start_matches('*')))
        })
        .map(|l| format!("{l}\n"))
        .collect();
    for w in &wanted {
        if !relevant.lines().any(|l| l.split_whitespace().nth(1).map(|n| n.trim_start_matches('*')) == Some(w)) {
            bail!("checksum listing has no entry for {w}");
        }
    }
    fs::create_dir_all(raw_dir).with_context(|| format!("creating {}", raw_dir.display()))?;
    for w in &wanted {
        let bytes = get(&format!("{base}/{w}"))?;
        let path = raw_dir.join(w);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(verify_checksums(raw_dir, &relevant)?)
}
