use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::{DatasetManifest, RgbImage, Split};
use crate::error::{Error, Result};

/// Decoded images of one split as a `[n, 3, side, side]` float array in
/// `[0, 1]`, with the label row of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub side: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<Vec<usize>>,
}

pub const CHANNELS: usize = 3;

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        CHANNELS * self.side * self.side
    }

    /// Batch tensor for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * len..(i + 1) * len]);
        }
        Tensor::new(&[indices.len(), CHANNELS, self.side, self.side], data)
            .expect("batch length matches its shape")
    }

    pub fn task_labels(&self, task: usize, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i][task]).collect()
    }

    pub fn normalize(&mut self, norm: &Normalization) {
        let plane = self.side * self.side;
        for (k, chunk) in self.pixels.chunks_mut(plane).enumerate() {
            let c = k % CHANNELS;
            let (m, s) = (norm.mean[c], norm.std[c]);
            for v in chunk {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }
}

/// Per-channel statistics used for z-normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(set: &ImageSet) -> Normalization {
        let plane = set.side * set.side;
        let mut sum = [0f64; CHANNELS];
        let mut sq = [0f64; CHANNELS];
        for (k, chunk) in set.pixels.chunks(plane).enumerate() {
            let c = k % CHANNELS;
            for &v in chunk {
                sum[c] += v as f64;
                sq[c] += (v as f64) * (v as f64);
            }
        }
        let n = (set.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Normalization { mean, std }
    }
}

fn worker_count() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Decodes every image of `split`. `root` is the directory holding the
/// manifest; rows keep manifest order.
pub fn load_split(manifest: &DatasetManifest, root: &Path, split: Split) -> Result<ImageSet> {
    let rows: Vec<_> = manifest.split_rows(split).collect();
    if rows.is_empty() {
        return Err(Error::InvalidConfig(format!("split {} is empty", split.as_str())));
    }
    let first = RgbImage::load(&root.join(&rows[0].path))?;
    if first.width != first.height {
        return Err(Error::format(
            root.join(&rows[0].path),
            format!("image is {}x{}, expected square", first.width, first.height),
        ));
    }
    let side = first.width;
    let len = CHANNELS * side * side;
    let mut pixels = vec![0f32; rows.len() * len];
    let per = rows.len().div_ceil(worker_count());
    std::thread::scope(|s| -> Result<()> {
        let handles: Vec<_> = pixels
            .chunks_mut(per * len)
            .zip(rows.chunks(per))
            .map(|(out, rows)| {
                s.spawn(move || -> Result<()> {
                    for (dst, row) in out.chunks_mut(len).zip(rows) {
                        let path = root.join(&row.path);
                        let img = RgbImage::load(&path)?;
                        if img.width != side || img.height != side {
                            return Err(Error::format(
                                &path,
                                format!("image is {}x{}, expected {side}x{side}", img.width, img.height),
                            ));
                        }
                        let plane = side * side;
                        for (p, px) in img.pixels.chunks(3).enumerate() {
                            for c in 0..CHANNELS {
                                dst[c * plane + p] = px[c] as f32 / 255.0;
                            }
                        }
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().expect("image decoder thread panicked")?;
        }
        Ok(())
    })?;
    Ok(ImageSet {
        side,
        pixels,
        labels: rows.iter().map(|r| r.labels.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_centers_each_channel() {
        let mut set = ImageSet {
            side: 2,
            pixels: (0..24).map(|i| (i as f32) / 24.0).collect(),
            labels: vec![vec![0], vec![1]],
        };
        let norm = Normalization::fit(&set);
        set.normalize(&norm);
        let after = Normalization::fit(&set);
        for c in 0..CHANNELS {
            assert!(after.mean[c].abs() < 1e-6);
            assert!((after.std[c] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_keeps_unit_scale() {
        let set = ImageSet {
            side: 1,
            pixels: vec![0.5; 6],
            labels: vec![vec![0], vec![0]],
        };
        assert_eq!(Normalization::fit(&set).std, vec![1.0; 3]);
    }
}
