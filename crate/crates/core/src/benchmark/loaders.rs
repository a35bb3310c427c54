//! Readers for the standard binary distributions of CIFAR-10, CIFAR-100
//! (coarse labels) and Fashion-MNIST. Only needed for full-scale runs.

use std::fs;
use std::path::Path;

use ndarray::Array4;

use super::datasets::Dataset;
use crate::backbone::ImageBatch;
use crate::error::{Error, Result};

const CIFAR_PIXELS: usize = 32 * 32 * 3;

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

pub const CIFAR100_COARSE_CLASSES: [&str; 20] = [
    "aquatic_mammals", "fish", "flowers", "food_containers", "fruit_and_vegetables",
    "household_electrical_devices", "household_furniture", "insects", "large_carnivores",
    "large_man-made_outdoor_things", "large_natural_outdoor_scenes", "large_omnivores_and_herbivores",
    "medium_mammals", "non-insect_invertebrates", "people", "reptiles", "small_mammals", "trees",
    "vehicles_1", "vehicles_2",
];

pub const FMNIST_CLASSES: [&str; 10] = [
    "t-shirt", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag", "ankle_boot",
];

/// Keeps at most `limit` samples per class (first come, first kept).
fn cap_per_class(labels: &[usize], num_classes: usize, limit: Option<usize>) -> Vec<usize> {
    let mut seen = vec![0; num_classes];
    (0..labels.len())
        .filter(|&i| {
            let ok = limit.is_none_or(|l| seen[labels[i]] < l);
            if ok {
                seen[labels[i]] += 1;
            }
            ok
        })
        .collect()
}

/// Parses CIFAR binary records: `label_bytes` leading bytes, of which the one
/// at `label_at` is used, followed by 3072 planar RGB bytes.
fn read_cifar_records(
    files: &[&Path],
    label_bytes: usize,
    label_at: usize,
    num_classes: usize,
    limit: Option<usize>,
    prefix: &str,
) -> Result<ImageBatch> {
    let record = label_bytes + CIFAR_PIXELS;
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let bytes = fs::read(f).map_err(|e| Error::invalid(format!("{}: {e}", f.display())))?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::invalid(format!("{} is not a CIFAR binary file", f.display())));
        }
        for chunk in bytes.chunks_exact(record) {
            labels.push(chunk[label_at] as usize);
            raw.push(chunk[label_bytes..].to_vec());
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{num_classes}")));
    }
    let keep = cap_per_class(&labels, num_classes, limit);
    let mut px = Array4::zeros((keep.len(), 32, 32, 3));
    for (o, &i) in keep.iter().enumerate() {
        for c in 0..3 {
            for p in 0..1024 {
                px[[o, p / 32, p % 32, c]] = f64::from(raw[i][c * 1024 + p]) / 255.0;
            }
        }
    }
    let ids = keep.iter().map(|i| format!("{prefix}{i}")).collect();
    ImageBatch::new(px, Some(keep.iter().map(|&i| labels[i]).collect()), ids)
}

/// `dir` holds `data_batch_{1..5}.bin` and `test_batch.bin`.
pub fn load_cifar10(dir: &Path, limit_per_class: Option<usize>) -> Result<Dataset> {
    let train: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let train_refs: Vec<&Path> = train.iter().map(|p| p.as_path()).collect();
    let test = dir.join("test_batch.bin");
    Dataset::new(
        "cifar10",
        CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(),
        read_cifar_records(&train_refs, 1, 0, 10, limit_per_class, "cifar10/train-")?,
        read_cifar_records(&[&test], 1, 0, 10, limit_per_class, "cifar10/test-")?,
    )
}

/// `dir` holds `train.bin` and `test.bin`; the coarse (20-class) label is used.
pub fn load_cifar100_coarse(dir: &Path, limit_per_class: Option<usize>) -> Result<Dataset> {
    Dataset::new(
        "cifar100",
        CIFAR100_COARSE_CLASSES.iter().map(|s| s.to_string()).collect(),
        read_cifar_records(&[&dir.join("train.bin")], 2, 0, 20, limit_per_class, "cifar100/train-")?,
        read_cifar_records(&[&dir.join("test.bin")], 2, 0, 20, limit_per_class, "cifar100/test-")?,
    )
}

fn be_u32(b: &[u8], at: usize) -> Result<usize> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]) as usize)
        .ok_or_else(|| Error::invalid("truncated idx header"))
}

fn read_idx_pair(images: &Path, labels: &Path, limit: Option<usize>, prefix: &str) -> Result<ImageBatch> {
    let ib = fs::read(images).map_err(|e| Error::invalid(format!("{}: {e}", images.display())))?;
    let lb = fs::read(labels).map_err(|e| Error::invalid(format!("{}: {e}", labels.display())))?;
    if be_u32(&ib, 0)? != 0x0803 || be_u32(&lb, 0)? != 0x0801 {
        return Err(Error::invalid("bad idx magic number"));
    }
    let (n, h, w) = (be_u32(&ib, 4)?, be_u32(&ib, 8)?, be_u32(&ib, 12)?);
    if be_u32(&lb, 4)? != n || ib.len() != 16 + n * h * w || lb.len() != 8 + n {
        return Err(Error::invalid("idx image and label files disagree"));
    }
    let all: Vec<usize> = lb[8..].iter().map(|&b| b as usize).collect();
    if let Some(&bad) = all.iter().find(|&&l| l >= 10) {
        return Err(Error::invalid(format!("label {bad} outside 0..10")));
    }
    let keep = cap_per_class(&all, 10, limit);
    let mut px = Array4::zeros((keep.len(), h, w, 1));
    for (o, &i) in keep.iter().enumerate() {
        for p in 0..h * w {
            px[[o, p / w, p % w, 0]] = f64::from(ib[16 + i * h * w + p]) / 255.0;
        }
    }
    let ids = keep.iter().map(|i| format!("{prefix}{i}")).collect();
    ImageBatch::new(px, Some(keep.iter().map(|&i| all[i]).collect()), ids)
}

/// `dir` holds the four uncompressed `*-ubyte` files.
pub fn load_fmnist(dir: &Path, limit_per_class: Option<usize>) -> Result<Dataset> {
    Dataset::new(
        "fmnist",
        FMNIST_CLASSES.iter().map(|s| s.to_string()).collect(),
        read_idx_pair(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
            limit_per_class,
            "fmnist/train-",
        )?,
        read_idx_pair(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
            limit_per_class,
            "fmnist/test-",
        )?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cifar_record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, CIFAR_PIXELS));
        r
    }

    #[test]
    fn cifar10_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            let mut bytes = cifar_record(i as u8 % 10, 255);
            bytes.extend(cifar_record(3, 0));
            fs::write(dir.path().join(format!("data_batch_{i}.bin")), bytes).unwrap();
        }
        fs::write(dir.path().join("test_batch.bin"), cifar_record(7, 51)).unwrap();
        let ds = load_cifar10(dir.path(), Some(2)).unwrap();
        assert_eq!(ds.train_counts()[3], 2);
        assert_eq!(ds.test_labels(), &[7]);
        assert!((ds.test.pixels()[[0, 5, 5, 2]] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let write = |img: &str, lab: &str, labels: &[u8]| {
            let mut ib = vec![0, 0, 8, 3];
            for v in [labels.len() as u32, 2, 2] {
                ib.extend(v.to_be_bytes());
            }
            for (k, _) in labels.iter().enumerate() {
                ib.extend([k as u8 * 10; 4]);
            }
            let mut lb = vec![0, 0, 8, 1];
            lb.extend((labels.len() as u32).to_be_bytes());
            lb.extend(labels);
            fs::write(dir.path().join(img), ib).unwrap();
            fs::write(dir.path().join(lab), lb).unwrap();
        };
        write("train-images-idx3-ubyte", "train-labels-idx1-ubyte", &[0, 1, 2]);
        write("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", &[9]);
        let ds = load_fmnist(dir.path(), None).unwrap();
        assert_eq!(ds.train.image_shape(), (2, 2, 1));
        assert_eq!(ds.train_labels(), &[0, 1, 2]);
        assert!((ds.train.pixels()[[2, 1, 1, 0]] - 20.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_cifar_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("train.bin"), [1u8, 2, 3]).unwrap();
        fs::write(dir.path().join("test.bin"), [1u8, 2, 3]).unwrap();
        assert!(load_cifar100_coarse(dir.path(), None).is_err());
    }
}
