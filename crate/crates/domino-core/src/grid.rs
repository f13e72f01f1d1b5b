//! Core grid types: label maps, probability maps, dense matrices, class sets.
//!
//! All grids are row-major with `y` as the slow axis. Class indices are dense
//! `0..N` and stored as `u8`, which caps `N` at 256 — plenty for this tool
//! and what the on-disk format stores anyway.

use crate::error::{Error, Result};

/// Hard per-pixel tolerance on a probability vector's deviation from sum 1.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Slack above 1.0 tolerated on individual probabilities, mirroring the sum
/// tolerance (regrouped softmax outputs can exceed 1 by a few ulps).
const PROB_ENTRY_SLACK: f64 = 1e-9;

/// Largest representable class count (dense u8 indices).
pub const MAX_CLASSES: usize = 256;

/// Dense per-pixel class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    num_classes: usize,
    data: Vec<u8>,
}

impl LabelMap {
    /// Build from row-major class indices; every index must be `< num_classes`.
    pub fn new(width: usize, height: usize, num_classes: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "label map dimensions must be positive, got {}x{}",
                width, height
            )));
        }
        if !(1..=MAX_CLASSES).contains(&num_classes) {
            return Err(Error::Argument(format!(
                "num_classes must be in 1..={}, got {}",
                MAX_CLASSES, num_classes
            )));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "label data has {} entries, expected {}x{} = {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if let Some(bad) = data.iter().find(|&&c| (c as usize) >= num_classes) {
            return Err(Error::Index(format!(
                "label {} out of range for {} classes",
                bad, num_classes
            )));
        }
        Ok(LabelMap {
            width,
            height,
            num_classes,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Class index at (x, y).
    pub fn class_at(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] as usize
    }

    /// Row-major raw labels.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Count of pixels labeled `class`.
    pub fn class_count(&self, class: usize) -> usize {
        self.data.iter().filter(|&&c| c as usize == class).count()
    }
}

/// Dense per-pixel probability vectors (row-major, `num_classes` channels
/// per pixel, innermost).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ProbMap {
    /// Build and validate: entries in [0, 1], every pixel sums to 1 within
    /// `PROB_SUM_TOL`.
    pub fn new(width: usize, height: usize, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || !(1..=MAX_CLASSES).contains(&num_classes) {
            return Err(Error::Argument(format!(
                "bad probability map dimensions {}x{}x{}",
                width, height, num_classes
            )));
        }
        if data.len() != width * height * num_classes {
            return Err(Error::Shape(format!(
                "probability data has {} entries, expected {}",
                data.len(),
                width * height * num_classes
            )));
        }
        for (p, pixel) in data.chunks_exact(num_classes).enumerate() {
            let mut sum = 0.0;
            for &v in pixel {
                if !v.is_finite() || !(0.0..=1.0 + PROB_ENTRY_SLACK).contains(&v) {
                    return Err(Error::Validation(format!(
                        "probability {} at pixel {} outside [0, 1]",
                        v, p
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::Validation(format!(
                    "pixel {} probabilities sum to {}, expected 1 within {}",
                    p, sum, PROB_SUM_TOL
                )));
            }
        }
        Ok(ProbMap {
            width,
            height,
            num_classes,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Probability vector of the pixel at (x, y).
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        debug_assert!(x < self.width && y < self.height);
        let start = (y * self.width + x) * self.num_classes;
        &self.data[start..start + self.num_classes]
    }

    /// Probability vector of the pixel at flat row-major index `p`.
    pub fn pixel_flat(&self, p: usize) -> &[f64] {
        let start = p * self.num_classes;
        &self.data[start..start + self.num_classes]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Plain row-major f64 matrix; houses confusion/penalty matrices, images,
/// and classifier weight blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Argument(format!(
                "matrix dimensions must be positive, got {}x{}",
                rows, cols
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data has {} entries, expected {}x{} = {}",
                data.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Ordered, unique class names; index in the vector is the class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Argument(format!(
                "a class set needs at least 2 classes, got {}",
                names.len()
            )));
        }
        if names.len() > MAX_CLASSES {
            return Err(Error::Argument(format!(
                "a class set holds at most {} classes, got {}",
                MAX_CLASSES,
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Validation(format!("class {} has an empty name", i)));
            }
            if names[..i].contains(name) {
                return Err(Error::Validation(format!("duplicate class name '{}'", name)));
            }
        }
        Ok(ClassSet { names })
    }

    /// The default 11-tissue head class set.
    pub fn head11() -> Self {
        ClassSet::new(
            [
                "muscle",
                "fat",
                "skin",
                "cortical_bone",
                "cancellous_bone",
                "blood",
                "air",
                "csf",
                "eyes",
                "gm",
                "wm",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
        .expect("built-in class set is valid")
    }

    /// Placeholder names `class_0 .. class_{n-1}` for data without a naming.
    pub fn numbered(n: usize) -> Result<Self> {
        ClassSet::new((0..n).map(|i| format!("class_{}", i)).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// One-hot probability vector for `label` out of `n` classes.
pub fn one_hot(label: usize, n: usize) -> Result<Vec<f64>> {
    if label >= n {
        return Err(Error::Index(format!(
            "label {} out of range for {} classes",
            label, n
        )));
    }
    let mut v = vec![0.0; n];
    v[label] = 1.0;
    Ok(v)
}

/// Per-pixel argmax of a probability map; ties go to the lowest class index.
pub fn argmax_map(p: &ProbMap) -> LabelMap {
    let mut data = Vec::with_capacity(p.pixels());
    for pix in 0..p.pixels() {
        let probs = p.pixel_flat(pix);
        let mut best = 0usize;
        for (k, &v) in probs.iter().enumerate().skip(1) {
            if v > probs[best] {
                best = k;
            }
        }
        data.push(best as u8);
    }
    LabelMap::new(p.width(), p.height(), p.num_classes(), data)
        .expect("argmax of a valid probability map is a valid label map")
}

/// Pixel coordinates (x, y) labeled `class`, in row-major scan order.
///
/// Precondition: `class < l.num_classes()`.
pub fn binary_mask(l: &LabelMap, class: usize) -> Vec<(usize, usize)> {
    assert!(
        class < l.num_classes(),
        "class {} out of range for {} classes",
        class,
        l.num_classes()
    );
    let mut pts = Vec::new();
    for y in 0..l.height() {
        for x in 0..l.width() {
            if l.class_at(x, y) == class {
                pts.push((x, y));
            }
        }
    }
    pts
}
