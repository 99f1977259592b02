//! Datasets: synthetic desk-scale corpora and the IDX image-file format.
//!
//! Three sources feed the training harness:
//!
//! * [`synth_dataset`] — low-dimensional synthetic tasks (`blobs`,
//!   `two_rings`) for fast invariance and smoke experiments;
//! * [`synth_digits`] — a procedurally generated 28×28 ten-class digit
//!   corpus (seven-segment glyphs with random shifts, brightness jitter and
//!   pixel noise) sized like a small MNIST subset;
//! * [`load_mnist_idx`] — a reader for the big-endian IDX format used by the
//!   original MNIST distribution, paired with writers so fixtures and the
//!   synthetic digit corpus travel through the exact same file path.
//!
//! All image-valued features live in `[0, 1]`; labels are `0..num_classes`.

use crate::cli::atomic_write;
use crate::matrix::Matrix;
use crate::rng::RngState;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fraction of samples routed to the test split: one in five (80/20).
const TEST_DENOM: usize = 5;

/// A supervised classification dataset with a fixed train/test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Human-readable source tag, e.g. `"blobs"` or `"mnist"`.
    pub name: String,
    /// Number of distinct label values; labels lie in `[0, num_classes)`.
    pub num_classes: usize,
    /// Training inputs, samples × features (images scaled into `[0, 1]`).
    pub x_train: Matrix,
    /// Training labels, one per row of `x_train`.
    pub y_train: Vec<usize>,
    /// Held-out inputs, samples × features.
    pub x_test: Matrix,
    /// Held-out labels, one per row of `x_test`.
    pub y_test: Vec<usize>,
}

impl Dataset {
    /// Number of input features per sample.
    pub fn input_dim(&self) -> usize {
        self.x_train.cols()
    }

    /// Number of training samples.
    pub fn train_len(&self) -> usize {
        self.x_train.rows()
    }

    /// Number of held-out samples.
    pub fn test_len(&self) -> usize {
        self.x_test.rows()
    }

    /// Checks the structural invariants: matching sample/label counts,
    /// consistent feature width, and every label inside `[0, num_classes)`.
    pub fn validate(&self) -> Result<()> {
        if self.x_train.rows() != self.y_train.len() {
            return Err(Error::Contract {
                what: format!(
                    "train split has {} rows but {} labels",
                    self.x_train.rows(),
                    self.y_train.len()
                ),
            });
        }
        if self.x_test.rows() != self.y_test.len() {
            return Err(Error::Contract {
                what: format!(
                    "test split has {} rows but {} labels",
                    self.x_test.rows(),
                    self.y_test.len()
                ),
            });
        }
        if self.x_train.cols() != self.x_test.cols() {
            return Err(Error::Contract {
                what: format!(
                    "train has {} features, test has {}",
                    self.x_train.cols(),
                    self.x_test.cols()
                ),
            });
        }
        for (&y, side) in self
            .y_train
            .iter()
            .zip(std::iter::repeat("train"))
            .chain(self.y_test.iter().zip(std::iter::repeat("test")))
        {
            if y >= self.num_classes {
                return Err(Error::Contract {
                    what: format!(
                        "{side} label {y} out of range for {} classes",
                        self.num_classes
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Synthetic task family for [`synth_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Four Gaussian clusters with well-separated means in 32 dimensions.
    Blobs,
    /// Two concentric annuli in the plane — not linearly separable.
    TwoRings,
}

/// Feature dimension of the `blobs` task.
pub const BLOBS_DIM: usize = 32;
/// Class count of the `blobs` task.
pub const BLOBS_CLASSES: usize = 4;
/// Per-coordinate magnitude of each blob center's active block.
const BLOBS_CENTER: f64 = 2.0;
/// Inner and outer radii of the `two_rings` task.
const RING_RADII: [f64; 2] = [1.0, 2.0];

/// Returns the mean of the `blobs` class `k`: coordinates `8k..8k+8` hold
/// [`BLOBS_CENTER`], the rest are zero, so centers sit `8.0` apart.
fn blob_center(k: usize) -> Vec<f64> {
    let mut c = vec![0.0; BLOBS_DIM];
    let w = BLOBS_DIM / BLOBS_CLASSES;
    for j in k * w..(k + 1) * w {
        c[j] = BLOBS_CENTER;
    }
    c
}

/// Generates a seeded synthetic dataset with an 80/20 train/test split.
///
/// `blobs` draws `n` points round-robin from [`BLOBS_CLASSES`] Gaussian
/// clusters (`center + noise·g` per coordinate) in [`BLOBS_DIM`] dimensions;
/// `two_rings` draws planar points at radius `r_class + noise·g` and uniform
/// angle, with the two radii interleaved. Samples are shuffled once and the
/// last fifth becomes the test split, so the splits are disjoint by
/// construction. Identical `(kind, n, noise)` and an identically seeded
/// `rng` reproduce the dataset bit for bit.
pub fn synth_dataset(kind: SynthKind, n: usize, noise: f64, rng: &mut RngState) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Contract {
            what: format!("synthetic dataset needs n >= 10, got {n}"),
        });
    }
    let (dim, classes, name) = match kind {
        SynthKind::Blobs => (BLOBS_DIM, BLOBS_CLASSES, "blobs"),
        SynthKind::TwoRings => (2, 2, "two_rings"),
    };
    let mut x = Matrix::zeros(n, dim);
    let mut y = vec![0usize; n];
    match kind {
        SynthKind::Blobs => {
            let centers: Vec<Vec<f64>> = (0..classes).map(blob_center).collect();
            for i in 0..n {
                let k = i % classes;
                y[i] = k;
                let row = x.row_mut(i);
                for (j, r) in row.iter_mut().enumerate() {
                    *r = centers[k][j] + noise * rng.next_gaussian();
                }
            }
        }
        SynthKind::TwoRings => {
            for i in 0..n {
                let k = i % classes;
                y[i] = k;
                let theta = rng.next_range(0.0, std::f64::consts::TAU);
                let r = RING_RADII[k] + noise * rng.next_gaussian();
                x.set(i, 0, r * theta.cos());
                x.set(i, 1, r * theta.sin());
            }
        }
    }
    split_dataset(name, classes, x, y, rng)
}

/// Shuffles sample indices once and splits off the trailing fifth as test.
fn split_dataset(
    name: &str,
    num_classes: usize,
    x: Matrix,
    y: Vec<usize>,
    rng: &mut RngState,
) -> Result<Dataset> {
    let n = x.rows();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let n_test = n / TEST_DENOM;
    let n_train = n - n_test;
    let (train_idx, test_idx) = order.split_at(n_train);
    let ds = Dataset {
        name: name.to_string(),
        num_classes,
        x_train: x.gather_rows(train_idx)?,
        y_train: train_idx.iter().map(|&i| y[i]).collect(),
        x_test: x.gather_rows(test_idx)?,
        y_test: test_idx.iter().map(|&i| y[i]).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

// --------------------------------------------------------------------------
// Procedural digit corpus
// --------------------------------------------------------------------------

/// Image side length of the synthetic digit corpus (and of MNIST).
pub const DIGIT_SIDE: usize = 28;
/// Number of digit classes.
pub const DIGIT_CLASSES: usize = 10;
/// Maximum absolute glyph shift, in pixels, along each axis.
const DIGIT_MAX_SHIFT: i64 = 2;
/// Brightness jitter range: glyph intensity is drawn from `[0.7, 1.0]`.
const DIGIT_MIN_BRIGHTNESS: f64 = 0.7;

/// Segment bitmasks for a seven-segment rendering of each digit. Order:
/// A=top, B=top-right, C=bottom-right, D=bottom, E=bottom-left, F=top-left,
/// G=middle.
const SEGMENTS: [[bool; 7]; 10] = [
    // A      B      C      D      E      F      G
    [true, true, true, true, true, true, false],   // 0
    [false, true, true, false, false, false, false], // 1
    [true, true, false, true, true, false, true],  // 2
    [true, true, true, true, false, false, true],  // 3
    [false, true, true, false, false, true, true], // 4
    [true, false, true, true, false, true, true],  // 5
    [true, false, true, true, true, true, true],   // 6
    [true, true, true, false, false, false, false], // 7
    [true, true, true, true, true, true, true],    // 8
    [true, true, true, true, false, true, true],   // 9
];

/// Renders the centered prototype glyph for `digit` as a 28×28 bitmap.
fn digit_glyph(digit: usize) -> Vec<f64> {
    let mut img = vec![0.0; DIGIT_SIDE * DIGIT_SIDE];
    // Glyph bounding box: rows 4..24, cols 8..20, strokes two pixels thick.
    let (top, mid, bot) = (4usize, 13usize, 22usize);
    let (left, right) = (8usize, 18usize);
    let mut fill = |r0: usize, r1: usize, c0: usize, c1: usize| {
        for r in r0..r1 {
            for c in c0..c1 {
                img[r * DIGIT_SIDE + c] = 1.0;
            }
        }
    };
    let seg = SEGMENTS[digit];
    if seg[0] {
        fill(top, top + 2, left, right + 2); // A
    }
    if seg[1] {
        fill(top, mid + 2, right, right + 2); // B
    }
    if seg[2] {
        fill(mid, bot + 2, right, right + 2); // C
    }
    if seg[3] {
        fill(bot, bot + 2, left, right + 2); // D
    }
    if seg[4] {
        fill(mid, bot + 2, left, left + 2); // E
    }
    if seg[5] {
        fill(top, mid + 2, left, left + 2); // F
    }
    if seg[6] {
        fill(mid, mid + 2, left, right + 2); // G
    }
    img
}

/// Generates the synthetic ten-class digit corpus with an 80/20 split.
///
/// Each sample is a seven-segment prototype glyph shifted by up to
/// ±[`DIGIT_MAX_SHIFT`] pixels per axis, scaled by a brightness factor in
/// `[0.7, 1.0]`, corrupted by per-pixel Gaussian noise of standard deviation
/// `noise`, clamped to `[0, 1]`, and quantized to the 8-bit grid `k/255` —
/// so a sample written to an IDX file and read back is bit-identical.
pub fn synth_digits(n: usize, noise: f64, rng: &mut RngState) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Contract {
            what: format!("digit corpus needs n >= 10, got {n}"),
        });
    }
    let glyphs: Vec<Vec<f64>> = (0..DIGIT_CLASSES).map(digit_glyph).collect();
    let side = DIGIT_SIDE as i64;
    let mut x = Matrix::zeros(n, DIGIT_SIDE * DIGIT_SIDE);
    let mut y = vec![0usize; n];
    for i in 0..n {
        let k = i % DIGIT_CLASSES;
        y[i] = k;
        let dx = rng.next_index(2 * DIGIT_MAX_SHIFT as usize + 1) as i64 - DIGIT_MAX_SHIFT;
        let dy = rng.next_index(2 * DIGIT_MAX_SHIFT as usize + 1) as i64 - DIGIT_MAX_SHIFT;
        let brightness =
            DIGIT_MIN_BRIGHTNESS + (1.0 - DIGIT_MIN_BRIGHTNESS) * rng.next_f64();
        let row = x.row_mut(i);
        for r in 0..side {
            for c in 0..side {
                let (sr, sc) = (r - dy, c - dx);
                let base = if sr >= 0 && sr < side && sc >= 0 && sc < side {
                    glyphs[k][(sr * side + sc) as usize]
                } else {
                    0.0
                };
                let v = brightness * base + noise * rng.next_gaussian();
                row[(r * side + c) as usize] = quantize_pixel(v);
            }
        }
    }
    split_dataset("digits", DIGIT_CLASSES, x, y, rng)
}

/// Clamps to `[0, 1]` and snaps onto the 8-bit grid `k/255`.
fn quantize_pixel(v: f64) -> f64 {
    let b = (v.clamp(0.0, 1.0) * 255.0).round();
    b / 255.0
}

// --------------------------------------------------------------------------
// IDX file format
// --------------------------------------------------------------------------

/// IDX magic for a rank-3 unsigned-byte tensor (image files).
const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
/// IDX magic for a rank-1 unsigned-byte tensor (label files).
const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

/// Reads a big-endian `u32` at `*off`, advancing the cursor.
fn read_u32_be(buf: &[u8], off: &mut usize, what: &str) -> Result<u32> {
    let end = *off + 4;
    if end > buf.len() {
        return Err(truncated(what));
    }
    let v = u32::from_be_bytes(buf[*off..end].try_into().unwrap());
    *off = end;
    Ok(v)
}

/// Maps a short read onto an IO error, as a truncation of the file.
fn truncated(what: &str) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::UnexpectedEof,
        format!("IDX file truncated while reading {what}"),
    ))
}

/// Parses an IDX image file: magic `0x00000803`, then big-endian counts
/// (images, rows, cols), then one unsigned byte per pixel. Returns the
/// flattened samples × (rows·cols) matrix with pixels scaled by `1/255`,
/// plus the image grid shape.
pub fn read_idx_images(path: &Path) -> Result<(Matrix, usize, usize)> {
    let buf = std::fs::read(path)?;
    let mut off = 0usize;
    let magic = read_u32_be(&buf, &mut off, "image magic")?;
    if magic != IDX_MAGIC_IMAGES {
        return Err(Error::Format {
            what: format!("bad IDX image magic {magic:#010x}, expected {IDX_MAGIC_IMAGES:#010x}"),
        });
    }
    let count = read_u32_be(&buf, &mut off, "image count")? as usize;
    let rows = read_u32_be(&buf, &mut off, "image rows")? as usize;
    let cols = read_u32_be(&buf, &mut off, "image cols")? as usize;
    let pixels = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format {
            what: format!("IDX image header overflows: {count} x {rows} x {cols}"),
        })?;
    if buf.len() < off + pixels {
        return Err(truncated("pixel data"));
    }
    let data: Vec<f64> = buf[off..off + pixels]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok((Matrix::from_vec(count, rows * cols, data)?, rows, cols))
}

/// Parses an IDX label file: magic `0x00000801`, a big-endian count, then
/// one unsigned byte per label.
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let buf = std::fs::read(path)?;
    let mut off = 0usize;
    let magic = read_u32_be(&buf, &mut off, "label magic")?;
    if magic != IDX_MAGIC_LABELS {
        return Err(Error::Format {
            what: format!("bad IDX label magic {magic:#010x}, expected {IDX_MAGIC_LABELS:#010x}"),
        });
    }
    let count = read_u32_be(&buf, &mut off, "label count")? as usize;
    if buf.len() < off + count {
        return Err(truncated("label data"));
    }
    Ok(buf[off..off + count].iter().map(|&b| b as usize).collect())
}

/// Loads one (images, labels) IDX pair — one half of a dataset. The counts
/// in the two files must agree.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<(Matrix, Vec<usize>)> {
    let (x, _, _) = read_idx_images(images_path)?;
    let y = read_idx_labels(labels_path)?;
    if x.rows() != y.len() {
        return Err(Error::Format {
            what: format!(
                "IDX pair mismatch: {} images vs {} labels",
                x.rows(),
                y.len()
            ),
        });
    }
    Ok((x, y))
}

/// Writes `images` (samples × rows·cols, values in `[0,1]`) as an IDX image
/// file, quantizing each pixel to its nearest byte. Atomic: the file appears
/// complete or not at all.
pub fn write_idx_images(path: &Path, images: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if images.cols() != rows * cols {
        return Err(Error::Shape {
            op: "write_idx_images",
            lhs: images.shape(),
            rhs: (rows, cols),
        });
    }
    let mut buf = Vec::with_capacity(16 + images.rows() * images.cols());
    buf.extend_from_slice(&IDX_MAGIC_IMAGES.to_be_bytes());
    buf.extend_from_slice(&(images.rows() as u32).to_be_bytes());
    buf.extend_from_slice(&(rows as u32).to_be_bytes());
    buf.extend_from_slice(&(cols as u32).to_be_bytes());
    buf.extend(
        images
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    atomic_write(path, &buf)
}

/// Writes labels as an IDX label file. Labels must fit in a byte.
pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&IDX_MAGIC_LABELS.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &y in labels {
        if y > u8::MAX as usize {
            return Err(Error::Contract {
                what: format!("label {y} does not fit in an IDX byte"),
            });
        }
        buf.push(y as u8);
    }
    atomic_write(path, &buf)
}

/// Standard MNIST-style file names inside a dataset directory.
const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Loads a full dataset from a directory holding the four conventional IDX
/// files (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
/// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`). `train_cap` /
/// `test_cap` keep only the first N samples of each split when set.
pub fn mnist_dataset(
    dir: &Path,
    train_cap: Option<usize>,
    test_cap: Option<usize>,
) -> Result<Dataset> {
    let (x_train, y_train) = load_mnist_idx(&dir.join(MNIST_FILES[0]), &dir.join(MNIST_FILES[1]))?;
    let (x_test, y_test) = load_mnist_idx(&dir.join(MNIST_FILES[2]), &dir.join(MNIST_FILES[3]))?;
    let (x_train, y_train) = cap_split(x_train, y_train, train_cap)?;
    let (x_test, y_test) = cap_split(x_test, y_test, test_cap)?;
    let num_classes = 1 + y_train
        .iter()
        .chain(y_test.iter())
        .copied()
        .max()
        .unwrap_or(0);
    let ds = Dataset {
        name: "mnist".to_string(),
        num_classes,
        x_train,
        y_train,
        x_test,
        y_test,
    };
    ds.validate()?;
    Ok(ds)
}

/// Truncates a split to its first `cap` samples when a cap is given.
fn cap_split(x: Matrix, y: Vec<usize>, cap: Option<usize>) -> Result<(Matrix, Vec<usize>)> {
    match cap {
        Some(c) if c < x.rows() => {
            let idx: Vec<usize> = (0..c).collect();
            Ok((x.gather_rows(&idx)?, y[..c].to_vec()))
        }
        _ => Ok((x, y)),
    }
}

/// Writes `ds` into `dir` as the four conventional IDX files, so the
/// synthetic digit corpus is consumed through the exact same loader as real
/// MNIST. Image rows must be `side × side` pixels.
pub fn write_dataset_idx(dir: &Path, ds: &Dataset, side: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_idx_images(&dir.join(MNIST_FILES[0]), &ds.x_train, side, side)?;
    write_idx_labels(&dir.join(MNIST_FILES[1]), &ds.y_train)?;
    write_idx_images(&dir.join(MNIST_FILES[2]), &ds.x_test, side, side)?;
    write_idx_labels(&dir.join(MNIST_FILES[3]), &ds.y_test)?;
    Ok(())
}

// --------------------------------------------------------------------------
// Config-side dataset reference
// --------------------------------------------------------------------------

/// Dataset families a training config can reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// Synthetic Gaussian clusters ([`SynthKind::Blobs`]).
    Blobs,
    /// Synthetic concentric annuli ([`SynthKind::TwoRings`]).
    TwoRings,
    /// The procedural digit corpus ([`synth_digits`]).
    Digits,
    /// IDX files in a directory (MNIST layout).
    Mnist,
}

/// Declarative dataset reference used by training configs. Synthetic kinds
/// need `n` and `noise`; `mnist` needs `dir` and optionally per-split caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Which family to load.
    pub kind: DataKind,
    /// Total synthetic sample count (split 80/20).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Synthetic noise level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// Directory holding the four IDX files (`mnist` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<std::path::PathBuf>,
    /// Keep only the first N training samples (`mnist` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_cap: Option<usize>,
    /// Keep only the first N test samples (`mnist` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_cap: Option<usize>,
}

impl DatasetSpec {
    /// Shorthand for a synthetic reference.
    pub fn synthetic(kind: DataKind, n: usize, noise: f64) -> Self {
        DatasetSpec {
            kind,
            n: Some(n),
            noise: Some(noise),
            dir: None,
            train_cap: None,
            test_cap: None,
        }
    }

    /// Materializes the dataset. Synthetic kinds draw from a child stream of
    /// `seed`, so the same `(spec, seed)` pair always yields the same bytes.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        let mut rng = RngState::new(seed).split(crate::rng::STREAM_DATA);
        let need = |field: Option<f64>, name: &str| {
            field.ok_or_else(|| Error::Config {
                what: format!("dataset kind {:?} requires `{name}`", self.kind),
            })
        };
        match self.kind {
            DataKind::Blobs | DataKind::TwoRings => {
                let n = self.n.ok_or_else(|| Error::Config {
                    what: "synthetic dataset requires `n`".into(),
                })?;
                let noise = need(self.noise, "noise")?;
                let kind = if self.kind == DataKind::Blobs {
                    SynthKind::Blobs
                } else {
                    SynthKind::TwoRings
                };
                synth_dataset(kind, n, noise, &mut rng)
            }
            DataKind::Digits => {
                let n = self.n.ok_or_else(|| Error::Config {
                    what: "digit corpus requires `n`".into(),
                })?;
                let noise = need(self.noise, "noise")?;
                synth_digits(n, noise, &mut rng)
            }
            DataKind::Mnist => {
                let dir = self.dir.as_ref().ok_or_else(|| Error::Config {
                    what: "mnist dataset requires `dir`".into(),
                })?;
                mnist_dataset(dir, self.train_cap, self.test_cap)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LuFactors;

    /// Nearest-centroid classifier accuracy: fit per-class means on the
    /// train split, classify the test split by closest mean.
    fn centroid_accuracy(ds: &Dataset) -> f64 {
        let d = ds.input_dim();
        let mut means = vec![vec![0.0; d]; ds.num_classes];
        let mut counts = vec![0usize; ds.num_classes];
        for (i, &y) in ds.y_train.iter().enumerate() {
            counts[y] += 1;
            for (m, &v) in means[y].iter_mut().zip(ds.x_train.row(i)) {
                *m += v;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= c.max(1) as f64;
            }
        }
        let mut hits = 0usize;
        for (i, &y) in ds.y_test.iter().enumerate() {
            let row = ds.x_test.row(i);
            let best = (0..ds.num_classes)
                .min_by(|&a, &b| {
                    let da: f64 = row
                        .iter()
                        .zip(&means[a])
                        .map(|(&x, &m)| (x - m) * (x - m))
                        .sum();
                    let db: f64 = row
                        .iter()
                        .zip(&means[b])
                        .map(|(&x, &m)| (x - m) * (x - m))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best == y {
                hits += 1;
            }
        }
        hits as f64 / ds.y_test.len() as f64
    }

    /// Ridge-regression linear classifier (bias included, targets ±1),
    /// solved exactly by normal equations; returns test accuracy. Serves as
    /// the "trained to convergence" linear baseline for two-class tasks.
    fn linear_accuracy(ds: &Dataset) -> f64 {
        assert_eq!(ds.num_classes, 2);
        let n = ds.train_len();
        let d = ds.input_dim() + 1; // bias column
        let mut x = Matrix::zeros(n, d);
        for i in 0..n {
            let row = x.row_mut(i);
            row[..d - 1].copy_from_slice(ds.x_train.row(i));
            row[d - 1] = 1.0;
        }
        let targets: Vec<f64> = ds.y_train.iter().map(|&y| 2.0 * y as f64 - 1.0).collect();
        // A = XᵀX + λI, b = Xᵀt
        let mut a = x.matmul_tn(&x).unwrap();
        for j in 0..d {
            a.set(j, j, a.get(j, j) + 1e-8);
        }
        let t = Matrix::from_vec(n, 1, targets).unwrap();
        let b = x.matmul_tn(&t).unwrap();
        let w = LuFactors::factor(&a).unwrap().solve_matrix(&b).unwrap();
        let mut hits = 0usize;
        for (i, &y) in ds.y_test.iter().enumerate() {
            let row = ds.x_test.row(i);
            let score: f64 = row
                .iter()
                .zip(w.data().iter())
                .map(|(&xi, &wi)| xi * wi)
                .sum::<f64>()
                + w.get(d - 1, 0);
            let pred = usize::from(score > 0.0);
            if pred == y {
                hits += 1;
            }
        }
        hits as f64 / ds.y_test.len() as f64
    }

    #[test]
    fn blobs_shapes_and_split() {
        let mut rng = RngState::new(11);
        let ds = synth_dataset(SynthKind::Blobs, 200, 0.8, &mut rng).unwrap();
        assert_eq!(ds.train_len(), 160);
        assert_eq!(ds.test_len(), 40);
        assert_eq!(ds.input_dim(), BLOBS_DIM);
        assert_eq!(ds.num_classes, BLOBS_CLASSES);
        ds.validate().unwrap();
        // splits are disjoint: no test row equals any train row
        for i in 0..ds.test_len() {
            for j in 0..ds.train_len() {
                assert_ne!(ds.x_test.row(i), ds.x_train.row(j));
            }
        }
    }

    #[test]
    fn blobs_noise_zero_centroid_oracle() {
        let mut rng = RngState::new(3);
        let ds = synth_dataset(SynthKind::Blobs, 200, 0.0, &mut rng).unwrap();
        assert_eq!(centroid_accuracy(&ds), 1.0);
    }

    #[test]
    fn blobs_moderate_noise_still_separable() {
        let mut rng = RngState::new(5);
        let ds = synth_dataset(SynthKind::Blobs, 500, 1.0, &mut rng).unwrap();
        // centers sit 8σ apart at noise 1.0: centroids stay near-perfect
        assert!(centroid_accuracy(&ds) > 0.99);
    }

    #[test]
    fn same_seed_identical_datasets() {
        for kind in [SynthKind::Blobs, SynthKind::TwoRings] {
            let a = synth_dataset(kind, 120, 0.3, &mut RngState::new(42)).unwrap();
            let b = synth_dataset(kind, 120, 0.3, &mut RngState::new(42)).unwrap();
            assert_eq!(a.x_train.byte_hash(), b.x_train.byte_hash());
            assert_eq!(a.x_test.byte_hash(), b.x_test.byte_hash());
            assert_eq!(a.y_train, b.y_train);
            assert_eq!(a.y_test, b.y_test);
        }
    }

    #[test]
    fn two_rings_radii_match_labels() {
        let mut rng = RngState::new(9);
        let ds = synth_dataset(SynthKind::TwoRings, 100, 0.0, &mut rng).unwrap();
        for (i, &y) in ds.y_train.iter().enumerate() {
            let r = ds.x_train.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let expect = RING_RADII[y];
            assert!((r - expect).abs() < 1e-12, "radius {r} vs label {y}");
        }
    }

    #[test]
    fn two_rings_defeat_linear_classifier() {
        let mut rng = RngState::new(17);
        let ds = synth_dataset(SynthKind::TwoRings, 500, 0.05, &mut rng).unwrap();
        let acc = linear_accuracy(&ds);
        assert!(acc < 0.75, "linear classifier reached {acc}");
    }

    #[test]
    fn min_size_enforced() {
        let mut rng = RngState::new(1);
        assert!(synth_dataset(SynthKind::Blobs, 9, 0.1, &mut rng).is_err());
        assert!(synth_digits(9, 0.1, &mut rng).is_err());
    }

    #[test]
    fn digits_deterministic_and_quantized() {
        let a = synth_digits(60, 0.25, &mut RngState::new(8)).unwrap();
        let b = synth_digits(60, 0.25, &mut RngState::new(8)).unwrap();
        assert_eq!(a.x_train.byte_hash(), b.x_train.byte_hash());
        assert_eq!(a.y_train, b.y_train);
        assert_eq!(a.input_dim(), DIGIT_SIDE * DIGIT_SIDE);
        assert_eq!(a.num_classes, DIGIT_CLASSES);
        for &v in a.x_train.data() {
            assert!((0.0..=1.0).contains(&v));
            let scaled = v * 255.0;
            assert!(
                (scaled - scaled.round()).abs() < 1e-9,
                "pixel {v} off the byte grid"
            );
        }
    }

    #[test]
    fn digits_noiseless_corpus_is_learnable() {
        // Pixel-space centroids are blurred by the ±2px shifts, so they only
        // need to beat chance (0.1) decisively; a 1-nearest-neighbor lookup
        // finds the matching glyph+shift template and should be near-perfect.
        // 2000 samples cover the 10×25 glyph-shift combinations densely
        let ds = synth_digits(2000, 0.0, &mut RngState::new(21)).unwrap();
        assert!(centroid_accuracy(&ds) > 0.4);
        let mut hits = 0usize;
        for (i, &y) in ds.y_test.iter().enumerate() {
            let row = ds.x_test.row(i);
            let nearest = (0..ds.train_len())
                .min_by(|&a, &b| {
                    let da: f64 = row
                        .iter()
                        .zip(ds.x_train.row(a))
                        .map(|(&p, &q)| (p - q) * (p - q))
                        .sum();
                    let db: f64 = row
                        .iter()
                        .zip(ds.x_train.row(b))
                        .map(|(&p, &q)| (p - q) * (p - q))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if ds.y_train[nearest] == y {
                hits += 1;
            }
        }
        let acc = hits as f64 / ds.test_len() as f64;
        assert!(acc > 0.95, "1-NN accuracy {acc}");
    }

    #[test]
    fn idx_label_fixture_hand_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels-idx1-ubyte");
        let bytes = [0u8, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1];
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(read_idx_labels(&path).unwrap(), vec![7, 2, 1]);
    }

    #[test]
    fn idx_zero_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images-idx3-ubyte");
        let mut bytes = vec![0u8, 0, 8, 3];
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend(std::iter::repeat_n(0u8, 2 * 4 * 3));
        std::fs::write(&path, bytes).unwrap();
        let (x, r, c) = read_idx_images(&path).unwrap();
        assert_eq!((x.rows(), x.cols(), r, c), (2, 12, 4, 3));
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idx_wrong_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad");
        std::fs::write(&path, [0u8, 0, 8, 2, 0, 0, 0, 1, 5]).unwrap();
        match read_idx_labels(&path) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
        match read_idx_images(&path) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn idx_truncated_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short");
        // header promises 3 labels, provides 2
        std::fs::write(&path, [0u8, 0, 8, 1, 0, 0, 0, 3, 7, 2]).unwrap();
        match read_idx_labels(&path) {
            Err(Error::Io(e)) => assert_eq!(e.kind(), std::io::ErrorKind::UnexpectedEof),
            other => panic!("expected io error, got {other:?}"),
        }
        // header cut mid-count
        std::fs::write(&path, [0u8, 0, 8, 1, 0, 0]).unwrap();
        assert!(matches!(read_idx_labels(&path), Err(Error::Io(_))));
    }

    #[test]
    fn idx_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngState::new(33);
        // random byte-grid image set
        let mut imgs = Matrix::zeros(5, 16);
        for v in imgs.data_mut() {
            *v = rng.next_index(256) as f64 / 255.0;
        }
        let labels = vec![0usize, 3, 9, 1, 7];
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("lbls");
        write_idx_images(&ip, &imgs, 4, 4).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        let (back, y) = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(back.byte_hash(), imgs.byte_hash());
        assert_eq!(y, labels);
    }

    #[test]
    fn idx_pair_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = Matrix::zeros(3, 4);
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("lbls");
        write_idx_images(&ip, &imgs, 2, 2).unwrap();
        write_idx_labels(&lp, &[1, 0]).unwrap();
        assert!(matches!(
            load_mnist_idx(&ip, &lp),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn dataset_directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_digits(50, 0.2, &mut RngState::new(4)).unwrap();
        write_dataset_idx(dir.path(), &ds, DIGIT_SIDE).unwrap();
        let back = mnist_dataset(dir.path(), None, None).unwrap();
        assert_eq!(back.x_train.byte_hash(), ds.x_train.byte_hash());
        assert_eq!(back.x_test.byte_hash(), ds.x_test.byte_hash());
        assert_eq!(back.y_train, ds.y_train);
        assert_eq!(back.y_test, ds.y_test);
        // caps keep prefixes
        let capped = mnist_dataset(dir.path(), Some(7), Some(3)).unwrap();
        assert_eq!(capped.train_len(), 7);
        assert_eq!(capped.test_len(), 3);
        assert_eq!(capped.y_train[..], ds.y_train[..7]);
    }
}
