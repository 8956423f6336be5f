use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decode_bitmap_named, preprocess};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

pub const CLASSES: usize = 10;

/// Size of the full corpus and its per-class share.
const EXPECTED_TOTAL: usize = 3000;
const EXPECTED_PER_CLASS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `1 × 32 × 32`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: u8,
    pub source: PathBuf,
}

/// How each class's files are divided between train and test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "seed")]
pub enum SplitRule {
    /// Files sorted by name; the first two thirds of each class train.
    #[default]
    Lexicographic,
    /// Files sorted by name, then permuted per class with this seed.
    Shuffled(u64),
}

#[derive(Clone, Debug, Default)]
pub struct SplitDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SplitDataset {
    pub fn histogram(samples: &[Sample]) -> [usize; CLASSES] {
        let mut h = [0; CLASSES];
        for s in samples {
            h[s.label as usize] += 1;
        }
        h
    }

    pub fn train_histogram(&self) -> [usize; CLASSES] {
        Self::histogram(&self.train)
    }

    pub fn test_histogram(&self) -> [usize; CLASSES] {
        Self::histogram(&self.test)
    }
}

pub fn one_hot<T: Scalar>(label: usize) -> Result<Tensor<T>> {
    if label >= CLASSES {
        return Err(Error::Data(format!("label {label} outside 0..{CLASSES}")));
    }
    let mut t = Tensor::zeros(&[CLASSES])?;
    t.data_mut()[label] = T::one();
    Ok(t)
}

fn is_bitmap(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("bmp"))
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(entries)
}

fn flat_label(path: &Path) -> Result<u8> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let prefix = name.split('_').next().unwrap_or_default();
    match prefix.parse::<u8>() {
        Ok(l) if (l as usize) < CLASSES && name.contains('_') => Ok(l),
        _ => Err(Error::Dataset(format!(
            "cannot derive a label from {}: expected `<digit>_...bmp`",
            path.display()
        ))),
    }
}

/// Lists labelled bitmap paths per class, each class sorted by file name.
///
/// Accepts `<root>/<0..9>/*.bmp` or a flat `<root>/<label>_*.bmp`.
fn discover(root: &Path) -> Result<[Vec<PathBuf>; CLASSES]> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut per_class: [Vec<PathBuf>; CLASSES] = Default::default();
    let entries = read_dir_sorted(root)?;
    let class_dirs: Vec<(usize, &PathBuf)> = entries
        .iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let label = name.parse::<usize>().ok().filter(|&l| l < CLASSES)?;
            (name.len() == 1).then_some((label, p))
        })
        .collect();

    if class_dirs.is_empty() {
        for path in entries.iter().filter(|p| is_bitmap(p)) {
            per_class[flat_label(path)? as usize].push(path.clone());
        }
    } else {
        for (label, dir) in class_dirs {
            per_class[label].extend(read_dir_sorted(dir)?.into_iter().filter(|p| is_bitmap(p)));
        }
    }
    Ok(per_class)
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_bitmap_named(&bytes, &path.display().to_string())?;
    Ok(preprocess(&raw))
}

/// Loads every labelled bitmap under `root` and splits each class two
/// thirds train, one third test.
///
/// A corpus that is not exactly 3000 images with 300 per class is still
/// split (proportionally, rounding the train share to nearest) but logs a
/// warning.
pub fn load_dataset(root: &Path, rule: SplitRule) -> Result<SplitDataset> {
    let mut per_class = discover(root)?;
    let total: usize = per_class.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Dataset(format!("no labelled .bmp files under {}", root.display())));
    }
    if total != EXPECTED_TOTAL || per_class.iter().any(|c| c.len() != EXPECTED_PER_CLASS) {
        let counts: Vec<usize> = per_class.iter().map(Vec::len).collect();
        log::warn!(
            "expected {EXPECTED_TOTAL} images ({EXPECTED_PER_CLASS} per class), found {total} {counts:?}; splitting proportionally"
        );
    }

    if let SplitRule::Shuffled(s) = rule {
        for (label, files) in per_class.iter_mut().enumerate() {
            files.shuffle(&mut seed::rng(seed::derive(s, &[label as u64])));
        }
    }

    let mut plan: Vec<(PathBuf, u8, bool)> = Vec::with_capacity(total);
    for (label, files) in per_class.iter().enumerate() {
        let n_train = (2 * files.len() + 1) / 3;
        for (i, path) in files.iter().enumerate() {
            plan.push((path.clone(), label as u8, i < n_train));
        }
    }

    let decoded = plan
        .par_iter()
        .map(|(path, label, _)| {
            Ok(Sample {
                image: load_image(path)?,
                label: *label,
                source: path.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut split = SplitDataset::default();
    for (sample, (_, _, is_train)) in decoded.into_iter().zip(&plan) {
        if *is_train {
            split.train.push(sample);
        } else {
            split.test.push(sample);
        }
    }
    log::info!(
        "loaded {} train / {} test samples; train per class {:?}, test per class {:?}",
        split.train.len(),
        split.test.len(),
        split.train_histogram(),
        split.test_histogram()
    );
    Ok(split)
}

/// A mini-batch: images `N × C × H × W`, one-hot targets `N × 10`.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub targets: Tensor<T>,
    pub labels: Vec<u8>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `N × (C·H·W)` view for consumers without a leading flatten layer.
    pub fn flattened(&self) -> Tensor<T> {
        let n = self.len();
        let width = self.images.numel() / n;
        self.images
            .clone()
            .reshape(&[n, width])
            .expect("same element count")
    }
}

pub fn collate<T: Scalar>(samples: &[&Sample]) -> Result<Batch<T>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("cannot collate an empty batch".into()))?;
    let sample_dims = first.image.dims().to_vec();
    let mut images = Vec::with_capacity(samples.len() * first.image.numel());
    let mut targets = Vec::with_capacity(samples.len() * CLASSES);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        if s.image.dims() != sample_dims.as_slice() {
            return Err(Error::Data(format!(
                "sample {} has shape {}, expected {sample_dims:?}",
                s.source.display(),
                s.image.shape()
            )));
        }
        images.extend(s.image.data().iter().map(|&v| T::from_f64_lossy(f64::from(v))));
        targets.extend_from_slice(one_hot::<T>(s.label as usize)?.data());
        labels.push(s.label);
    }
    let mut dims = vec![samples.len()];
    dims.extend_from_slice(&sample_dims);
    Ok(Batch {
        images: Tensor::from_vec(&dims, images)?,
        targets: Tensor::from_vec(&[samples.len(), CLASSES], targets)?,
        labels,
    })
}

/// Seeded permutation of `0..n`.
pub fn epoch_order(n: usize, epoch_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(epoch_seed));
    order
}

/// Shuffled mini-batches over `samples`; the final batch may be short.
pub fn batches<'a, T: Scalar>(
    samples: &'a [Sample],
    batch_size: usize,
    epoch_seed: u64,
) -> Result<impl Iterator<Item = Result<Batch<T>>> + 'a> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let order = epoch_order(samples.len(), epoch_seed);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |idx| {
        let picked: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        collate(&picked)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                image: Tensor::full(&[1, 2, 2], i as f32).unwrap(),
                label: (i % CLASSES) as u8,
                source: PathBuf::from(format!("{i}.bmp")),
            })
            .collect()
    }

    #[test]
    fn one_hot_cases() {
        let t = one_hot::<f32>(3).unwrap();
        assert_eq!(t.data(), &[0., 0., 0., 1., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(one_hot::<f32>(0).unwrap().data()[0], 1.0);
        assert!(matches!(one_hot::<f32>(10), Err(Error::Data(_))));
    }

    #[test]
    fn batch_sizes_for_training_split() {
        let samples = fake_samples(2000);
        let sizes: Vec<usize> = batches::<f32>(&samples, 128, 1)
            .unwrap()
            .map(|b| b.unwrap().len())
            .collect();
        assert_eq!(sizes.len(), 16);
        assert!(sizes[..15].iter().all(|&s| s == 128));
        assert_eq!(sizes[15], 80);
        assert_eq!(batches::<f32>(&samples, 2000, 1).unwrap().count(), 1);
    }

    #[test]
    fn same_seed_same_order() {
        assert_eq!(epoch_order(100, 9), epoch_order(100, 9));
        assert_ne!(epoch_order(100, 9), epoch_order(100, 10));
    }

    #[test]
    fn batches_cover_split_exactly_once() {
        let samples = fake_samples(53);
        let mut seen: Vec<u32> = batches::<f64>(&samples, 8, 4)
            .unwrap()
            .flat_map(|b| {
                let b = b.unwrap();
                b.images.data().chunks(4).map(|c| c[0] as u32).collect::<Vec<_>>()
            })
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..53).collect::<Vec<_>>());
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(batches::<f32>(&fake_samples(3), 0, 0).is_err());
    }

    #[test]
    fn flattened_view() {
        let samples = fake_samples(3);
        let refs: Vec<&Sample> = samples.iter().collect();
        let b = collate::<f32>(&refs).unwrap();
        assert_eq!(b.images.dims(), &[3, 1, 2, 2]);
        assert_eq!(b.flattened().dims(), &[3, 4]);
    }
}
