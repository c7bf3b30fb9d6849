//! Dataset loading: the standard 32x32 binary image formats (10-class and
//! 100-class layouts) plus a deterministic synthetic generator for smoke
//! tests and examples.
//!
//! Images are stored as raw `u8` HWC rows; `to_batch` converts a subset to
//! an `f32` tensor at `x / 255` scale. Channel statistics are computed from
//! the training split at that scale, ready for the fixed standardization
//! layer.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct DataSplit {
    /// One `h * w * 3` HWC byte row per image.
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<usize>,
}

impl DataSplit {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
    pub train: DataSplit,
    pub test: DataSplit,
    /// Per-channel mean of the training split at `x / 255` scale.
    pub channel_mean: Vec<f64>,
    /// Per-channel population std at the same scale.
    pub channel_std: Vec<f64>,
}

impl Dataset {
    /// Population mean/std per channel over every training pixel.
    fn compute_channel_stats(&mut self) {
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        let mut count = 0usize;
        for img in &self.train.images {
            for px in img.chunks_exact(3) {
                for c in 0..3 {
                    let v = px[c] as f64 / 255.0;
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += self.h * self.w;
        }
        let n = count.max(1) as f64;
        self.channel_mean = sum.iter().map(|s| s / n).collect();
        self.channel_std = sum
            .iter()
            .zip(&sum_sq)
            .map(|(&s, &sq)| {
                let mean = s / n;
                (sq / n - mean * mean).max(0.0).sqrt()
            })
            .collect();
    }

    /// Stack images (by index into `split`) into a `(K, H, W, 3)` tensor at
    /// `x / 255` scale. Augmented bytes can be substituted via `override_`.
    pub fn to_batch(&self, split: &DataSplit, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let rows: Vec<&[u8]> = indices.iter().map(|&i| split.images[i].as_slice()).collect();
        let labels = indices.iter().map(|&i| split.labels[i]).collect();
        (batch_from_rows(&rows, self.h, self.w), labels)
    }
}

/// Stack raw HWC byte rows into a `(K, H, W, 3)` float tensor at `x / 255`.
pub fn batch_from_rows(rows: &[&[u8]], h: usize, w: usize) -> Tensor<f32> {
    let per = h * w * 3;
    let mut data = Vec::with_capacity(rows.len() * per);
    for row in rows {
        assert_eq!(row.len(), per, "image byte length mismatch");
        data.extend(row.iter().map(|&b| b as f32 / 255.0));
    }
    Tensor::from_vec([rows.len(), h, w, 3], data)
}

const IMG_BYTES: usize = 32 * 32 * 3;

/// Parse one binary shard: each record is `label_bytes` label bytes (the
/// last is the fine label) followed by 3072 image bytes stored as three
/// 1024-byte channel planes.
fn parse_shard(
    bytes: &[u8],
    label_bytes: usize,
    num_classes: usize,
    split: &mut DataSplit,
    path: &Path,
) -> Result<()> {
    let record = label_bytes + IMG_BYTES;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::Dataset(format!(
            "{}: size {} is not a multiple of the {record}-byte record",
            path.display(),
            bytes.len()
        )));
    }
    for rec in bytes.chunks_exact(record) {
        let label = rec[label_bytes - 1] as usize;
        if label >= num_classes {
            return Err(Error::Dataset(format!(
                "{}: label {label} out of range for {num_classes} classes",
                path.display()
            )));
        }
        let planes = &rec[label_bytes..];
        let mut img = vec![0u8; IMG_BYTES];
        for c in 0..3 {
            let plane = &planes[c * 1024..(c + 1) * 1024];
            for (site, &v) in plane.iter().enumerate() {
                img[site * 3 + c] = v;
            }
        }
        split.images.push(img);
        split.labels.push(label);
    }
    Ok(())
}

/// Load a 32x32 binary dataset directory. The 10-class layout is detected
/// by `data_batch_1.bin`, the 100-class layout by `train.bin`.
pub fn load_dir(dir: &Path) -> Result<Dataset> {
    let ten = dir.join("data_batch_1.bin");
    let hundred = dir.join("train.bin");
    let (name, num_classes, label_bytes, train_files, test_file): (_, _, _, Vec<_>, _) =
        if ten.exists() {
            (
                "cifar10",
                10,
                1,
                (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
                dir.join("test_batch.bin"),
            )
        } else if hundred.exists() {
            ("cifar100", 100, 2, vec![hundred], dir.join("test.bin"))
        } else {
            return Err(Error::Dataset(format!(
                "{}: found neither data_batch_1.bin nor train.bin",
                dir.display()
            )));
        };

    let mut ds = Dataset {
        name: name.to_string(),
        h: 32,
        w: 32,
        num_classes,
        train: DataSplit::default(),
        test: DataSplit::default(),
        channel_mean: vec![],
        channel_std: vec![],
    };
    for f in &train_files {
        let bytes = fs::read(f)?;
        parse_shard(&bytes, label_bytes, num_classes, &mut ds.train, f)?;
    }
    let bytes = fs::read(&test_file)?;
    parse_shard(&bytes, label_bytes, num_classes, &mut ds.test, &test_file)?;
    ds.compute_channel_stats();
    Ok(ds)
}

/// Deterministic synthetic task: each class paints a soft blob at a
/// class-specific position with class-specific channel amplitudes, plus
/// uniform noise. Easy enough for tiny networks to overfit quickly, hard
/// enough that an untrained network is at chance.
pub fn synthetic_blobs(
    n_train: usize,
    n_test: usize,
    hw: usize,
    num_classes: usize,
    seed: u64,
) -> Dataset {
    assert!(num_classes >= 2, "need at least two classes");
    let mut rng = stream(seed, Purpose::Data);
    let sigma = hw as f64 / 5.0;

    let mut gen_split = |n: usize| -> DataSplit {
        let mut split = DataSplit::default();
        for i in 0..n {
            let class = i % num_classes;
            let angle = std::f64::consts::TAU * class as f64 / num_classes as f64;
            let cy = hw as f64 / 2.0 + hw as f64 / 4.0 * angle.sin();
            let cx = hw as f64 / 2.0 + hw as f64 / 4.0 * angle.cos();
            // Per-class channel amplitudes spread over [80, 235].
            let amps: Vec<f64> = (0..3)
                .map(|c| {
                    let t = ((class * 3 + c) as f64 * 0.618_033_988_75).fract();
                    80.0 + 155.0 * t
                })
                .collect();
            let jy: f64 = rng.gen_range(-1.5..1.5);
            let jx: f64 = rng.gen_range(-1.5..1.5);
            let mut img = vec![0u8; hw * hw * 3];
            for y in 0..hw {
                for x in 0..hw {
                    let d2 = ((y as f64 - cy - jy).powi(2) + (x as f64 - cx - jx).powi(2))
                        / (2.0 * sigma * sigma);
                    let bump = (-d2).exp();
                    for c in 0..3 {
                        let noise: f64 = rng.gen_range(0.0..40.0);
                        let v = amps[c] * bump + noise;
                        img[(y * hw + x) * 3 + c] = v.min(255.0) as u8;
                    }
                }
            }
            split.images.push(img);
            split.labels.push(class);
        }
        split
    };

    let mut ds = Dataset {
        name: format!("synthetic{num_classes}x{hw}"),
        h: hw,
        w: hw,
        num_classes,
        train: gen_split(n_train),
        test: gen_split(n_test),
        channel_mean: vec![],
        channel_std: vec![],
    };
    ds.compute_channel_stats();
    ds
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = synthetic_blobs(64, 16, 16, 2, 9);
        let b = synthetic_blobs(64, 16, 16, 2, 9);
        assert_eq!(a.train.images, b.train.images);
        assert_eq!(a.train.labels, b.train.labels);
        assert_eq!(a.train.len(), 64);
        assert_eq!(a.test.len(), 16);
        assert_eq!(a.train.labels.iter().filter(|&&l| l == 0).count(), 32);
        let c = synthetic_blobs(64, 16, 16, 2, 10);
        assert_ne!(a.train.images, c.train.images);
    }

    #[test]
    fn synthetic_classes_are_visually_distinct() {
        let ds = synthetic_blobs(32, 8, 16, 2, 3);
        // Mean image per class should differ substantially somewhere.
        let mean_img = |class: usize| -> Vec<f64> {
            let rows: Vec<_> = ds
                .train
                .images
                .iter()
                .zip(&ds.train.labels)
                .filter(|(_, &l)| l == class)
                .map(|(img, _)| img)
                .collect();
            let mut acc = vec![0.0; 16 * 16 * 3];
            for img in &rows {
                for (a, &v) in acc.iter_mut().zip(img.iter()) {
                    *a += v as f64;
                }
            }
            acc.iter().map(|v| v / rows.len() as f64).collect()
        };
        let m0 = mean_img(0);
        let m1 = mean_img(1);
        let max_gap = m0
            .iter()
            .zip(&m1)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_gap > 60.0, "classes too similar: max mean gap {max_gap}");
    }

    #[test]
    fn batch_scale_and_layout() {
        let ds = synthetic_blobs(4, 2, 8, 2, 1);
        let (batch, labels) = ds.to_batch(&ds.train, &[0, 2]);
        assert_eq!(batch.shape(), [2, 8, 8, 3]);
        assert_eq!(labels, vec![0, 0]);
        let raw = ds.train.images[2][5];
        assert_eq!(batch.at(1, 0, 1, 2), raw as f32 / 255.0);
    }

    #[test]
    fn ten_class_shards_parse_with_plane_deinterleave() {
        let dir = tempfile::tempdir().unwrap();
        // Two records per shard; first record: label 7, R plane all 10,
        // G all 20, B all 30 except pixel 0 overridden below.
        let mut rec = vec![7u8];
        rec.extend(vec![10u8; 1024]);
        rec.extend(vec![20u8; 1024]);
        rec.extend(vec![30u8; 1024]);
        rec[1] = 255; // R value of pixel (0, 0)
        let mut shard = rec.clone();
        shard[0] = 3;
        let mut file = rec;
        file.extend(shard);
        for i in 1..=5 {
            fs::write(dir.path().join(format!("data_batch_{i}.bin")), &file).unwrap();
        }
        fs::write(dir.path().join("test_batch.bin"), &file).unwrap();

        let ds = load_dir(dir.path()).unwrap();
        assert_eq!(ds.num_classes, 10);
        assert_eq!(ds.train.len(), 10);
        assert_eq!(ds.test.len(), 2);
        assert_eq!(ds.train.labels[0], 7);
        assert_eq!(ds.train.labels[1], 3);
        let img = &ds.train.images[0];
        assert_eq!(&img[0..3], &[255, 20, 30]);
        assert_eq!(&img[3..6], &[10, 20, 30]);
    }

    #[test]
    fn hundred_class_layout_reads_fine_label() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![9u8, 42u8]; // coarse 9, fine 42
        rec.extend(vec![0u8; 3072]);
        fs::write(dir.path().join("train.bin"), &rec).unwrap();
        fs::write(dir.path().join("test.bin"), &rec).unwrap();
        let ds = load_dir(dir.path()).unwrap();
        assert_eq!(ds.num_classes, 100);
        assert_eq!(ds.train.labels[0], 42);
    }

    #[test]
    fn malformed_shards_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("data_batch_1.bin"), vec![0u8; 3072]).unwrap(); // truncated
        for i in 2..=5 {
            fs::write(dir.path().join(format!("data_batch_{i}.bin")), vec![0u8; 3073]).unwrap();
        }
        fs::write(dir.path().join("test_batch.bin"), vec![0u8; 3073]).unwrap();
        assert!(matches!(load_dir(dir.path()), Err(Error::Dataset(_))));

        // Out-of-range label.
        let mut rec = vec![10u8];
        rec.extend(vec![0u8; 3072]);
        fs::write(dir.path().join("data_batch_1.bin"), &rec).unwrap();
        assert!(matches!(load_dir(dir.path()), Err(Error::Dataset(_))));

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_dir(empty.path()), Err(Error::Dataset(_))));
    }

    #[test]
    fn channel_stats_match_hand_computation() {
        let dir = tempfile::tempdir().unwrap();
        // All pixels: R=51, G=102, B=204 -> means 0.2, 0.4, 0.8, std 0.
        let mut rec = vec![0u8];
        rec.extend(vec![51u8; 1024]);
        rec.extend(vec![102u8; 1024]);
        rec.extend(vec![204u8; 1024]);
        for i in 1..=5 {
            fs::write(dir.path().join(format!("data_batch_{i}.bin")), &rec).unwrap();
        }
        fs::write(dir.path().join("test_batch.bin"), &rec).unwrap();
        let ds = load_dir(dir.path()).unwrap();
        for (got, want) in ds.channel_mean.iter().zip([0.2, 0.4, 0.8]) {
            assert!((got - want).abs() < 1e-9);
        }
        for &s in &ds.channel_std {
            assert!(s.abs() < 1e-9);
        }
    }
}
