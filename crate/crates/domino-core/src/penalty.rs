//! Penalty matrices and the two ways to build them.
//!
//! A penalty matrix W scores how bad it is to put probability mass on class
//! j when the truth is class i. The diagonal is exactly zero (the correct
//! class is never penalized) and off-diagonal entries live in [0, S].
//!
//! Two constructions:
//! - confusion-derived: w[i][j] = s * (1 - normalized_confusion[i][j]),
//!   so classes a model already mixes up stay cheap and distinct classes
//!   cost the full scale;
//! - hierarchy-derived: classes sharing a semantic group cost `p_within`,
//!   classes in unrelated groups cost `s_max`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DenseMatrix, LabelMap};
use crate::io;

/// Row-normalized confusion tallies; rows index the true class, columns the
/// predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
    normalized: DenseMatrix,
}

impl ConfusionMatrix {
    /// Build from raw counts (row-major, true class by predicted class).
    /// Rows with no support become identity rows in the normalized matrix:
    /// an unseen class is treated as perfectly predicted, which makes its
    /// derived penalties maximally conservative.
    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("confusion matrix needs at least 1 class".into()));
        }
        if counts.len() != n * n {
            return Err(Error::Shape(format!(
                "confusion counts have {} entries, expected {}x{} = {}",
                counts.len(),
                n,
                n,
                n * n
            )));
        }
        let mut normalized = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let row = &counts[i * n..(i + 1) * n];
            let total: u64 = row.iter().sum();
            if total == 0 {
                normalized.set(i, i, 1.0);
            } else {
                for (j, &c) in row.iter().enumerate() {
                    normalized.set(i, j, c as f64 / total as f64);
                }
            }
        }
        Ok(ConfusionMatrix {
            n,
            counts,
            normalized,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Row-normalized view; every supported row sums to 1.
    pub fn normalized(&self) -> &DenseMatrix {
        &self.normalized
    }

    /// Total true pixels of `class` that contributed to the tally.
    pub fn row_support(&self, class: usize) -> u64 {
        self.counts[class * self.n..(class + 1) * self.n].iter().sum()
    }
}

/// Tally a confusion matrix from paired truth/prediction label maps.
pub fn confusion_from_predictions(
    truth: &[LabelMap],
    predicted: &[LabelMap],
) -> Result<ConfusionMatrix> {
    if truth.is_empty() {
        return Err(Error::Argument(
            "confusion tally needs at least one truth/prediction pair".into(),
        ));
    }
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} truth maps but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let n = truth[0].num_classes();
    let mut counts = vec![0u64; n * n];
    for (idx, (t, p)) in truth.iter().zip(predicted).enumerate() {
        if t.num_classes() != n || p.num_classes() != n {
            return Err(Error::Shape(format!(
                "pair {}: class counts differ ({} truth, {} predicted, {} expected)",
                idx,
                t.num_classes(),
                p.num_classes(),
                n
            )));
        }
        if t.width() != p.width() || t.height() != p.height() {
            return Err(Error::Shape(format!(
                "pair {}: truth is {}x{}, prediction is {}x{}",
                idx,
                t.width(),
                t.height(),
                p.width(),
                p.height()
            )));
        }
        for (tc, pc) in t.data().iter().zip(p.data()) {
            counts[*tc as usize * n + *pc as usize] += 1;
        }
    }
    ConfusionMatrix::from_counts(n, counts)
}

/// Zero-diagonal penalty matrix with off-diagonal entries in [0, scale].
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    w: DenseMatrix,
    scale: f64,
}

impl PenaltyMatrix {
    /// Wrap and validate an explicit matrix. The scale is taken as the
    /// largest off-diagonal entry.
    pub fn from_matrix(w: DenseMatrix) -> Result<Self> {
        let scale = validate_penalty(&w)?;
        Ok(PenaltyMatrix { w, scale })
    }

    /// All-zero penalties (no regularization pressure).
    pub fn zeros(n: usize) -> Self {
        PenaltyMatrix {
            w: DenseMatrix::zeros(n, n),
            scale: 0.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w.rows()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> f64 {
        self.w.at(truth, predicted)
    }

    /// Row of penalties for a given true class.
    pub fn row(&self, truth: usize) -> &[f64] {
        self.w.row(truth)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.w
    }

    /// Upper bound on the off-diagonal entries.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Largest off-diagonal entry actually present.
    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.w.rows();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.w.at(i, j));
                }
            }
        }
        m
    }
}

fn validate_penalty(w: &DenseMatrix) -> Result<f64> {
    if w.rows() != w.cols() {
        return Err(Error::Validation(format!(
            "penalty matrix must be square, got {}x{}",
            w.rows(),
            w.cols()
        )));
    }
    let mut max_off = 0.0f64;
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let v = w.at(i, j);
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "penalty [{}][{}] = {} is not finite",
                    i, j, v
                )));
            }
            if i == j {
                if v != 0.0 {
                    return Err(Error::Validation(format!(
                        "penalty diagonal [{}][{}] = {} must be exactly 0",
                        i, j, v
                    )));
                }
            } else {
                if v < 0.0 {
                    return Err(Error::Validation(format!(
                        "penalty [{}][{}] = {} is negative",
                        i, j, v
                    )));
                }
                max_off = max_off.max(v);
            }
        }
    }
    Ok(max_off)
}

/// Penalty from a confusion matrix: off-diagonal w[i][j] = s * (1 - c̃[i][j])
/// where c̃ is the row-normalized confusion; diagonal 0.
pub fn build_cm_penalty(c: &ConfusionMatrix, s: f64) -> Result<PenaltyMatrix> {
    if !s.is_finite() || s <= 0.0 {
        return Err(Error::Argument(format!("scale must be positive, got {}", s)));
    }
    let n = c.num_classes();
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w.set(i, j, s * (1.0 - c.normalized().at(i, j)));
            }
        }
    }
    Ok(PenaltyMatrix { w, scale: s })
}

/// Named class groups; a class may belong to one or two groups.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchySpec {
    n: usize,
    groups: Vec<(String, Vec<usize>)>,
}

impl HierarchySpec {
    pub fn new(n: usize, groups: Vec<(String, Vec<usize>)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("hierarchy needs at least 1 class".into()));
        }
        let mut membership = vec![0usize; n];
        for (gi, (name, members)) in groups.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Validation(format!("group {} has an empty name", gi)));
            }
            if groups[..gi].iter().any(|(other, _)| other == name) {
                return Err(Error::Validation(format!("duplicate group name '{}'", name)));
            }
            if members.is_empty() {
                return Err(Error::Validation(format!("group '{}' is empty", name)));
            }
            let mut seen = vec![false; n];
            for &m in members {
                if m >= n {
                    return Err(Error::Index(format!(
                        "group '{}' references class {} but there are {} classes",
                        name, m, n
                    )));
                }
                if seen[m] {
                    return Err(Error::Validation(format!(
                        "group '{}' lists class {} twice",
                        name, m
                    )));
                }
                seen[m] = true;
                membership[m] += 1;
            }
        }
        for (class, &count) in membership.iter().enumerate() {
            if count == 0 {
                return Err(Error::Validation(format!(
                    "class {} belongs to no group",
                    class
                )));
            }
            if count > 2 {
                return Err(Error::Validation(format!(
                    "class {} belongs to {} groups, at most 2 allowed",
                    class, count
                )));
            }
        }
        Ok(HierarchySpec { n, groups })
    }

    /// The default head-tissue hierarchy over [`crate::grid::ClassSet::head11`]:
    /// wm and gm alone, csf grouped with the eyes, the two bone compartments
    /// together, skin/fat/muscle/eyes as soft tissue, air and blood alone.
    /// The eyes carry the one dual membership (aqueous and fibrous parts).
    pub fn head11() -> Self {
        const MUSCLE: usize = 0;
        const FAT: usize = 1;
        const SKIN: usize = 2;
        const CORTICAL: usize = 3;
        const CANCELLOUS: usize = 4;
        const BLOOD: usize = 5;
        const AIR: usize = 6;
        const CSF: usize = 7;
        const EYES: usize = 8;
        const GM: usize = 9;
        const WM: usize = 10;
        HierarchySpec::new(
            11,
            vec![
                ("wm".into(), vec![WM]),
                ("gm".into(), vec![GM]),
                ("csf".into(), vec![CSF, EYES]),
                ("bone".into(), vec![CORTICAL, CANCELLOUS]),
                ("soft_tissue".into(), vec![MUSCLE, FAT, SKIN, EYES]),
                ("air".into(), vec![AIR]),
                ("blood".into(), vec![BLOOD]),
            ],
        )
        .expect("built-in hierarchy is valid")
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn groups(&self) -> &[(String, Vec<usize>)] {
        &self.groups
    }

    /// True if classes i and j appear together in at least one group.
    pub fn share_group(&self, i: usize, j: usize) -> bool {
        self.groups
            .iter()
            .any(|(_, members)| members.contains(&i) && members.contains(&j))
    }
}

/// Penalty from a hierarchy: within-group confusion costs `p_within`,
/// cross-group confusion costs `s_max`; diagonal 0.
pub fn build_hc_penalty(h: &HierarchySpec, s_max: f64, p_within: f64) -> Result<PenaltyMatrix> {
    if !s_max.is_finite() || s_max <= 0.0 {
        return Err(Error::Argument(format!(
            "maximum penalty must be positive, got {}",
            s_max
        )));
    }
    if !(0.0..=s_max).contains(&p_within) {
        return Err(Error::Argument(format!(
            "within-group penalty {} must lie in [0, {}]",
            p_within, s_max
        )));
    }
    let n = h.num_classes();
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = if h.share_group(i, j) { p_within } else { s_max };
                w.set(i, j, v);
            }
        }
    }
    Ok(PenaltyMatrix { w, scale: s_max })
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

/// Save a penalty matrix; `.csv` paths get headerless CSV, everything else
/// a DOM1 f64 tensor. Both round-trip bit-exactly.
pub fn save_penalty(path: &Path, w: &PenaltyMatrix) -> Result<()> {
    if is_csv(path) {
        io::save_csv_matrix(path, w.matrix())
    } else {
        io::save_matrix(path, w.matrix())
    }
}

/// Load and validate a penalty matrix (see [`save_penalty`] for formats).
pub fn load_penalty(path: &Path) -> Result<PenaltyMatrix> {
    let m = if is_csv(path) {
        io::load_csv_matrix(path)?
    } else {
        io::load_matrix(path)?
    };
    PenaltyMatrix::from_matrix(m)
}

/// Save confusion counts (as f64; counts are exact below 2^53).
pub fn save_confusion(path: &Path, c: &ConfusionMatrix) -> Result<()> {
    let n = c.num_classes();
    let data: Vec<f64> = c.counts().iter().map(|&x| x as f64).collect();
    let m = DenseMatrix::new(n, n, data)?;
    if is_csv(path) {
        io::save_csv_matrix(path, &m)
    } else {
        io::save_matrix(path, &m)
    }
}

/// Load confusion counts saved by [`save_confusion`]. Entries must be
/// non-negative integers.
pub fn load_confusion(path: &Path) -> Result<ConfusionMatrix> {
    let m = if is_csv(path) {
        io::load_csv_matrix(path)?
    } else {
        io::load_matrix(path)?
    };
    if m.rows() != m.cols() {
        return Err(Error::Validation(format!(
            "confusion matrix must be square, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let mut counts = Vec::with_capacity(m.rows() * m.cols());
    for (idx, &v) in m.data().iter().enumerate() {
        if !v.is_finite() || v < 0.0 || v.fract() != 0.0 || v > (1u64 << 53) as f64 {
            return Err(Error::Validation(format!(
                "confusion entry {} ({}) is not a non-negative integer count",
                idx, v
            )));
        }
        counts.push(v as u64);
    }
    ConfusionMatrix::from_counts(m.rows(), counts)
}
