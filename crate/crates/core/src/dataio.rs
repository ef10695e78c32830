//! Dataset ingestion: IDX container files (the MNIST format), split
//! management, and synthetic cluster datasets for fast tests.
//!
//! Image files carry big-endian magic 0x00000803 and dims [N, rows, cols]
//! of unsigned bytes, scaled to [0, 1] by /255. Label files carry magic
//! 0x00000801 and N label bytes. Gzip-compressed inputs are detected by
//! their 1F 8B leading bytes.

use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Contiguous row ranges partitioning a dataset, in train/val/test order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitBounds {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitBounds {
    pub fn all_train(n: usize) -> Self {
        Self {
            train: 0..n,
            val: n..n,
            test: n..n,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.train.start != 0
            || self.train.end != self.val.start
            || self.val.end != self.test.start
            || self.test.end != n
        {
            return Err(Error::InvalidConfig(format!(
                "splits {:?}/{:?}/{:?} do not partition 0..{n}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

/// Feature matrix plus integer labels with class count and split ranges.
/// Immutable after construction apart from re-drawing the split
/// boundaries.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    splits: SplitBounds,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        splits: SplitBounds,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature at flat index {bad}"
            )));
        }
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::InvalidLabel {
                    label: y,
                    classes: num_classes,
                });
            }
        }
        splits.validate(n)?;
        Ok(Self {
            features,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &SplitBounds {
        &self.splits
    }

    pub fn split_features(&self, range: &Range<usize>) -> ArrayView2<'_, f64> {
        self.features.slice(s![range.clone(), ..])
    }

    pub fn split_labels(&self, range: &Range<usize>) -> &[usize] {
        &self.labels[range.clone()]
    }

    /// Carves a validation split from the end of the current train range,
    /// in file order with no shuffling. Any previous validation range is
    /// folded back into train first.
    pub fn split_train_val(&mut self, val_size: usize) -> Result<()> {
        let merged_end = self.splits.val.end;
        let train_len = merged_end - self.splits.train.start;
        if val_size >= train_len {
            return Err(Error::InvalidConfig(format!(
                "validation size {val_size} must be smaller than the train size {train_len}"
            )));
        }
        self.splits.train = 0..merged_end - val_size;
        self.splits.val = merged_end - val_size..merged_end;
        Ok(())
    }

    /// Undoes [`Self::split_train_val`]: validation rows rejoin the train range
    /// in their original file order.
    pub fn merge_train_val(&mut self) {
        self.splits.train = 0..self.splits.val.end;
        self.splits.val = self.splits.val.end..self.splits.val.end;
    }

    /// Sets val/test to the last `val_size + test_size` rows (test at the
    /// very end), train to everything before them.
    pub fn split_tail(&mut self, val_size: usize, test_size: usize) -> Result<()> {
        let n = self.len();
        if val_size + test_size >= n {
            return Err(Error::InvalidConfig(format!(
                "val {val_size} + test {test_size} leave no training rows out of {n}"
            )));
        }
        self.splits = SplitBounds {
            train: 0..n - val_size - test_size,
            val: n - val_size - test_size..n - test_size,
            test: n - test_size..n,
        };
        Ok(())
    }
}

struct IdxReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> IdxReader<R> {
    fn err(&self, message: String) -> Error {
        Error::Format {
            offset: self.offset,
            message,
        }
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(self.err(format!("truncated while reading {what}")))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn read_u32_be(&mut self, what: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf, what)?;
        Ok(u32::from_be_bytes(buf))
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut byte = [0u8; 1];
        if self.inner.read(&mut byte)? != 0 {
            return Err(self.err("trailing bytes after payload".to_string()));
        }
        Ok(())
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let head: Vec<u8> = magic[..n].to_vec();
    let file = File::open(path)?;
    if head == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

/// Reads an IDX image file into an (N, rows·cols) matrix of pixels scaled
/// to [0, 1]. Returns the matrix with the original row/col dims.
pub fn load_idx_images<P: AsRef<Path>>(path: P) -> Result<(Array2<f64>, usize, usize)> {
    let mut r = IdxReader {
        inner: open_maybe_gz(path.as_ref())?,
        offset: 0,
    };
    let magic = r.read_u32_be("magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = r.read_u32_be("image count")? as usize;
    let rows = r.read_u32_be("row count")? as usize;
    let cols = r.read_u32_be("column count")? as usize;
    let dim = rows
        .checked_mul(cols)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Format {
            offset: 8,
            message: format!("bad image dims {rows}x{cols}"),
        })?;
    let mut bytes = vec![0u8; n * dim];
    r.read_exact(&mut bytes, "pixel data")?;
    r.expect_end()?;
    let values: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    let features = Array2::from_shape_vec((n, dim), values)
        .expect("shape matches byte count");
    Ok((features, rows, cols))
}

/// Reads an IDX label file into a label vector.
pub fn load_idx_labels<P: AsRef<Path>>(path: P) -> Result<Vec<usize>> {
    let mut r = IdxReader {
        inner: open_maybe_gz(path.as_ref())?,
        offset: 0,
    };
    let magic = r.read_u32_be("magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let n = r.read_u32_be("label count")? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes, "label data")?;
    r.expect_end()?;
    Ok(bytes.into_iter().map(|b| b as usize).collect())
}

/// Loads one image/label file pair; the two item counts must agree.
pub fn load_idx<P: AsRef<Path>>(path_images: P, path_labels: P) -> Result<(Array2<f64>, Vec<usize>)> {
    let (features, _, _) = load_idx_images(&path_images)?;
    let labels = load_idx_labels(&path_labels)?;
    if features.nrows() != labels.len() {
        return Err(Error::Format {
            offset: 4,
            message: format!(
                "{} images but {} labels",
                features.nrows(),
                labels.len()
            ),
        });
    }
    Ok((features, labels))
}

/// Writes an IDX image file from raw pixel bytes.
pub fn write_idx_images<P: AsRef<Path>>(
    path: P,
    pixels: &[u8],
    n: usize,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if pixels.len() != n * rows * cols {
        return Err(Error::InvalidInput(format!(
            "{} pixel bytes do not match {n}x{rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes an IDX label file from raw label bytes.
pub fn write_idx_labels<P: AsRef<Path>>(path: P, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

fn find_idx_file(root: &Path, stem: &str) -> Result<std::path::PathBuf> {
    let plain = root.join(stem);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = root.join(format!("{stem}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{stem}[.gz] not found under {}", root.display()),
    )))
}

/// Loads the four standard MNIST files from `root` (optionally gzipped)
/// into one dataset: train rows first, then the test rows, with the
/// validation range left empty. Use
/// [`LabeledDataset::split_train_val`] to carve the held-out set.
pub fn load_mnist<P: AsRef<Path>>(root: P) -> Result<LabeledDataset> {
    let root = root.as_ref();
    let (train_x, train_y) = load_idx(
        find_idx_file(root, "train-images-idx3-ubyte")?,
        find_idx_file(root, "train-labels-idx1-ubyte")?,
    )?;
    let (test_x, test_y) = load_idx(
        find_idx_file(root, "t10k-images-idx3-ubyte")?,
        find_idx_file(root, "t10k-labels-idx1-ubyte")?,
    )?;
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::Format {
            offset: 8,
            message: format!(
                "train images are {}-dimensional but test images are {}-dimensional",
                train_x.ncols(),
                test_x.ncols()
            ),
        });
    }
    let n_train = train_x.nrows();
    let n_total = n_train + test_x.nrows();
    let mut features = Array2::zeros((n_total, train_x.ncols()));
    features.slice_mut(s![..n_train, ..]).assign(&train_x);
    features.slice_mut(s![n_train.., ..]).assign(&test_x);
    let mut labels = train_y;
    labels.extend_from_slice(&test_y);
    LabeledDataset::new(
        features,
        labels,
        10,
        SplitBounds {
            train: 0..n_train,
            val: n_train..n_train,
            test: n_train..n_total,
        },
    )
}

/// Gaussian clusters with unit noise, centers `separation` apart, one
/// per class with the given per-class counts. Rows are emitted in a
/// seeded random order so tail splits stay class-balanced. Everything is
/// deterministic in the seed.
pub fn synthetic_blobs_with_counts(
    counts: &[usize],
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let k = counts.len();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    if counts.contains(&0) {
        return Err(Error::InvalidInput(
            "every class needs at least one example".to_string(),
        ));
    }
    if dim == 0 {
        return Err(Error::InvalidInput("dimension must be positive".to_string()));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::InvalidInput(format!(
            "separation must be finite and nonnegative, got {separation}"
        )));
    }

    let centers = class_centers(k, dim, separation);
    let n: usize = counts.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid std");

    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for d in 0..dim {
                features[[row, d]] = centers[class][d] + normal.sample(&mut rng);
            }
            labels.push(class);
            row += 1;
        }
    }

    // Permute rows so that file-order tail splits see all classes.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut shuffled = Array2::zeros((n, dim));
    let mut shuffled_labels = vec![0usize; n];
    for (dst, &src) in order.iter().enumerate() {
        shuffled.row_mut(dst).assign(&features.row(src));
        shuffled_labels[dst] = labels[src];
    }

    LabeledDataset::new(shuffled, shuffled_labels, k, SplitBounds::all_train(n))
}

/// [`synthetic_blobs_with_counts`] with the same count for every class.
pub fn synthetic_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    synthetic_blobs_with_counts(&vec![per_class; classes], dim, separation, seed)
}

fn class_centers(k: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut centers = vec![vec![0.0; dim]; k];
    if dim >= k {
        // Scaled one-hot corners: pairwise distance is exactly `separation`.
        let scale = separation / std::f64::consts::SQRT_2;
        for (c, center) in centers.iter_mut().enumerate() {
            center[c] = scale;
        }
    } else if dim == 1 {
        for (c, center) in centers.iter_mut().enumerate() {
            center[0] = c as f64 * separation;
        }
    } else {
        // Circle in the first two dims; adjacent chord length `separation`.
        let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
        for (c, center) in centers.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
            center[0] = radius * angle.cos();
            center[1] = radius * angle.sin();
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    #[test]
    fn idx_header_decodes_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images");
        // magic 0x00000803, N = 0x0000EA60 = 60000 declared, but truncate payload
        let mut bytes = vec![0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0xea, 0x60];
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_idx_images(&path) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 16);
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn idx_pixel_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images");
        write_idx_images(&path, &[255, 0, 128, 64], 1, 2, 2).unwrap();
        let (features, rows, cols) = load_idx_images(&path).unwrap();
        assert_eq!((rows, cols), (2, 2));
        assert_eq!(features[[0, 0]], 1.0);
        assert_eq!(features[[0, 1]], 0.0);
        assert_eq!(features[[0, 2]], 128.0 / 255.0);
    }

    #[test]
    fn idx_wrong_magic_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        let labels = dir.path().join("labels");
        write_idx_images(&images, &[0, 1, 2, 3], 1, 2, 2).unwrap();
        write_idx_labels(&labels, &[1, 2]).unwrap();

        // labels file offered where images are expected
        assert!(matches!(
            load_idx_images(&labels),
            Err(Error::Format { offset: 0, .. })
        ));
        // image/label count mismatch
        assert!(matches!(
            load_idx(&images, &labels),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn idx_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..4 * 9).map(|i| (i * 7 % 256) as u8).collect();
        let label_bytes: Vec<u8> = vec![0, 1, 2, 1];
        let images = dir.path().join("images");
        let labels = dir.path().join("labels");
        write_idx_images(&images, &pixels, 4, 3, 3).unwrap();
        write_idx_labels(&labels, &label_bytes).unwrap();

        let (features, _, _) = load_idx_images(&images).unwrap();
        let loaded_labels = load_idx_labels(&labels).unwrap();

        // Re-quantize and re-write: files must be byte-identical.
        let requantized: Vec<u8> = features.iter().map(|&v| (v * 255.0).round() as u8).collect();
        assert_eq!(requantized, pixels);
        let images2 = dir.path().join("images2");
        let labels2 = dir.path().join("labels2");
        write_idx_images(&images2, &requantized, 4, 3, 3).unwrap();
        write_idx_labels(
            &labels2,
            &loaded_labels.iter().map(|&l| l as u8).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(std::fs::read(images).unwrap(), std::fs::read(images2).unwrap());
        assert_eq!(std::fs::read(labels).unwrap(), std::fs::read(labels2).unwrap());
    }

    #[test]
    fn gzip_detected_by_magic() {
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("labels");
        write_idx_labels(&plain, &[3, 1, 4, 1, 5]).unwrap();
        let gz_path = dir.path().join("labels.gz");
        let mut enc = GzEncoder::new(File::create(&gz_path).unwrap(), Compression::default());
        enc.write_all(&std::fs::read(&plain).unwrap()).unwrap();
        enc.finish().unwrap();

        assert_eq!(load_idx_labels(&gz_path).unwrap(), vec![3, 1, 4, 1, 5]);
    }

    #[test]
    fn split_train_val_takes_tail_in_file_order() {
        let ds = synthetic_blobs(3, 20, 2, 6.0, 9).unwrap();
        let mut ds = ds;
        ds.split_train_val(10).unwrap();
        assert_eq!(ds.splits().train, 0..50);
        assert_eq!(ds.splits().val, 50..60);
        assert_eq!(ds.splits().test, 60..60);

        // merge restores the original ordering and bounds
        let before: Vec<usize> = ds.labels().to_vec();
        ds.merge_train_val();
        assert_eq!(ds.splits().train, 0..60);
        assert_eq!(ds.labels(), &before[..]);

        // zero-size validation: everything stays in train
        ds.split_train_val(0).unwrap();
        assert_eq!(ds.splits().train, 0..60);
        assert_eq!(ds.splits().val, 60..60);

        assert!(ds.split_train_val(60).is_err());
    }

    #[test]
    fn synthetic_blobs_deterministic_and_counted() {
        let a = synthetic_blobs_with_counts(&[50, 25, 25], 4, 8.0, 3).unwrap();
        let b = synthetic_blobs_with_counts(&[50, 25, 25], 4, 8.0, 3).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.labels(), b.labels());

        let mut counts = [0usize; 3];
        for &y in a.labels() {
            counts[y] += 1;
        }
        assert_eq!(counts, [50, 25, 25]);

        let (prior, mask) = crate::regularizers::unigram_prior(a.labels(), 3).unwrap();
        assert_eq!(prior.values(), &[0.5, 0.25, 0.25]);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn separable_blobs_admit_a_perfect_linear_rule() {
        // With separation 10 and unit noise, nearest-center classification
        // (a linear rule) should label every point correctly.
        let ds = synthetic_blobs(2, 100, 2, 10.0, 5).unwrap();
        let centers = class_centers(2, 2, 10.0);
        let mut correct = 0;
        for (row, &y) in ds.features().outer_iter().zip(ds.labels()) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d: f64 = row
                    .iter()
                    .zip(center)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if best == y {
                correct += 1;
            }
        }
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn dataset_validation() {
        let features = Array2::zeros((4, 2));
        assert!(LabeledDataset::new(
            features.clone(),
            vec![0, 1, 0],
            2,
            SplitBounds::all_train(4)
        )
        .is_err());
        assert!(LabeledDataset::new(
            features.clone(),
            vec![0, 1, 0, 5],
            2,
            SplitBounds::all_train(4)
        )
        .is_err());
        let bad_splits = SplitBounds {
            train: 0..2,
            val: 3..4,
            test: 4..4,
        };
        assert!(LabeledDataset::new(features, vec![0, 1, 0, 1], 2, bad_splits).is_err());
    }

    #[test]
    #[ignore = "needs MNIST IDX files under OUTREG_DATA_ROOT"]
    fn mnist_loads_and_unigram_prior_is_near_uniform() {
        let root = std::env::var("OUTREG_DATA_ROOT").expect("set OUTREG_DATA_ROOT");
        let mut ds = load_mnist(root).unwrap();
        assert_eq!(ds.len(), 70_000);
        assert_eq!(ds.dim(), 784);
        assert!(ds.features().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(ds.labels().iter().all(|&y| y < 10));

        ds.split_train_val(10_000).unwrap();
        assert_eq!(ds.splits().train, 0..50_000);
        assert_eq!(ds.splits().val, 50_000..60_000);
        assert_eq!(ds.splits().test, 60_000..70_000);

        let full_train = 0..60_000;
        let (prior, mask) =
            crate::regularizers::unigram_prior(ds.split_labels(&full_train), 10).unwrap();
        for &p in prior.values() {
            assert!((p - 0.1).abs() < 0.02, "class frequency {p}");
        }
        assert!(mask.iter().all(|&m| m));
    }
}
