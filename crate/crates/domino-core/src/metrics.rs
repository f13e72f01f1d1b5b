//! Segmentation and calibration metrics: hard Dice, standard and modified
//! Hausdorff distances, top-N accuracy, reliability curves with expected
//! calibration error, and label/probability merging into coarser groups —
//! everything needed to compare a calibrated model against its baseline at
//! two granularities.

use crate::error::{Error, Result};
use crate::grid::{argmax_map, binary_mask, ClassSet, LabelMap, ProbMap};
use crate::report::{
    ClassReport, GranularityReport, MetricsReport, ReliabilityBin, ReliabilityCurve,
};

fn check_pair(p: &LabelMap, t: &LabelMap) -> Result<()> {
    if p.width() != t.width() || p.height() != t.height() || p.num_classes() != t.num_classes() {
        return Err(Error::Shape(format!(
            "label maps disagree: {}x{} with {} classes vs {}x{} with {} classes",
            p.width(),
            p.height(),
            p.num_classes(),
            t.width(),
            t.height(),
            t.num_classes()
        )));
    }
    Ok(())
}

/// Hard Dice overlap of one class between two label maps:
/// `2|P∩T| / (|P|+|T|)`. Both sides empty scores 1 (perfect agreement on
/// absence); exactly one side empty scores 0.
pub fn dice(pred: &LabelMap, truth: &LabelMap, class: usize) -> Result<f64> {
    check_pair(pred, truth)?;
    if class >= pred.num_classes() {
        return Err(Error::Index(format!(
            "class {} out of range for {} classes",
            class,
            pred.num_classes()
        )));
    }
    let c = class as u8;
    let mut inter = 0usize;
    let mut pn = 0usize;
    let mut tn = 0usize;
    for (a, b) in pred.data().iter().zip(truth.data()) {
        let pa = *a == c;
        let tb = *b == c;
        pn += pa as usize;
        tn += tb as usize;
        inter += (pa && tb) as usize;
    }
    if pn + tn == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (pn + tn) as f64)
}

/// Largest squared distance from a point of `from` to its nearest point of
/// `to`.
fn directed_sq(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    let mut worst = 0.0f64;
    for &(ax, ay) in from {
        let mut best = f64::INFINITY;
        for &(bx, by) in to {
            let dx = ax as f64 - bx as f64;
            let dy = ay as f64 - by as f64;
            let d = dx * dx + dy * dy;
            if d < best {
                best = d;
            }
        }
        if best > worst {
            worst = best;
        }
    }
    worst
}

fn check_nonempty(a: &[(usize, usize)], b: &[(usize, usize)]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Undefined(
            "Hausdorff distance is undefined for an empty point set".into(),
        ));
    }
    Ok(())
}

/// Symmetric Hausdorff distance between two point sets (pixel coordinates):
/// the largest nearest-neighbour distance in either direction. Undefined
/// (an error) when a side is empty.
pub fn hausdorff(a: &[(usize, usize)], b: &[(usize, usize)]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(directed_sq(a, b).max(directed_sq(b, a)).sqrt())
}

/// Mean distance from each point of `from` to its nearest point of `to`.
fn directed_mean(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    let mut sum = 0.0;
    for &(ax, ay) in from {
        let mut best = f64::INFINITY;
        for &(bx, by) in to {
            let dx = ax as f64 - bx as f64;
            let dy = ay as f64 - by as f64;
            let d = dx * dx + dy * dy;
            if d < best {
                best = d;
            }
        }
        sum += best.sqrt();
    }
    sum / from.len() as f64
}

/// Modified Hausdorff distance: replaces the worst-case nearest-neighbour
/// distance of each direction by the mean, then takes the larger direction.
/// Less outlier-sensitive; never exceeds [`hausdorff`].
pub fn modified_hausdorff(a: &[(usize, usize)], b: &[(usize, usize)]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(directed_mean(a, b).max(directed_mean(b, a)))
}

fn check_eval_inputs(probs: &[ProbMap], truths: &[LabelMap]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    if probs.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} probability maps but {} truth maps",
            probs.len(),
            truths.len()
        )));
    }
    for (i, (p, t)) in probs.iter().zip(truths).enumerate() {
        if p.width() != t.width()
            || p.height() != t.height()
            || p.num_classes() != t.num_classes()
        {
            return Err(Error::Shape(format!(
                "sample {}: probabilities {}x{}x{} do not match truth {}x{} with {} classes",
                i,
                p.width(),
                p.height(),
                p.num_classes(),
                t.width(),
                t.height(),
                t.num_classes()
            )));
        }
    }
    Ok(())
}

/// Number of classes ranked strictly ahead of `class` at one pixel
/// (ties broken toward the lower index).
fn rank_of(probs: &[f64], class: usize) -> usize {
    let pc = probs[class];
    probs
        .iter()
        .enumerate()
        .filter(|&(k, &p)| p > pc || (p == pc && k < class))
        .count()
}

/// Fraction of pixels whose true class is among the `n` highest-probability
/// classes (deterministic tie-break toward lower indices), pooled over all
/// samples.
pub fn top_n_accuracy(probs: &[ProbMap], truths: &[LabelMap], n: usize) -> Result<f64> {
    check_eval_inputs(probs, truths)?;
    let classes = probs[0].num_classes();
    if n == 0 || n > classes {
        return Err(Error::Argument(format!(
            "top-N needs 1 <= N <= {}, got {}",
            classes, n
        )));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, t) in probs.iter().zip(truths) {
        let pixels = t.width() * t.height();
        for px in 0..pixels {
            let truth = t.data()[px] as usize;
            if rank_of(p.pixel_flat(px), truth) < n {
                hits += 1;
            }
        }
        total += pixels;
    }
    Ok(hits as f64 / total as f64)
}

/// Reliability curve for one class: pixels are binned by the predicted
/// probability of that class into `bins` equal-width bins over [0, 1];
/// each occupied bin records its mean confidence and the fraction of its
/// pixels whose true class matches.
pub fn reliability_curve(
    probs: &[ProbMap],
    truths: &[LabelMap],
    class: usize,
    bins: usize,
) -> Result<ReliabilityCurve> {
    check_eval_inputs(probs, truths)?;
    if bins == 0 {
        return Err(Error::Argument("need at least one reliability bin".into()));
    }
    if class >= probs[0].num_classes() {
        return Err(Error::Index(format!(
            "class {} out of range for {} classes",
            class,
            probs[0].num_classes()
        )));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hit_sum = vec![0usize; bins];
    let mut total = 0usize;
    for (p, t) in probs.iter().zip(truths) {
        let pixels = t.width() * t.height();
        for px in 0..pixels {
            let conf = p.pixel_flat(px)[class].clamp(0.0, 1.0);
            let b = ((conf * bins as f64) as usize).min(bins - 1);
            count[b] += 1;
            conf_sum[b] += conf;
            hit_sum[b] += (t.data()[px] as usize == class) as usize;
        }
        total += pixels;
    }
    let width = 1.0 / bins as f64;
    let bins = (0..bins)
        .map(|b| ReliabilityBin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            mean_confidence: if count[b] > 0 {
                conf_sum[b] / count[b] as f64
            } else {
                0.0
            },
            observed_frequency: if count[b] > 0 {
                hit_sum[b] as f64 / count[b] as f64
            } else {
                0.0
            },
            count: count[b],
        })
        .collect();
    Ok(ReliabilityCurve { bins, total })
}

/// Expected calibration error of one class (see [`ReliabilityCurve::ece`]).
pub fn expected_calibration_error(
    probs: &[ProbMap],
    truths: &[LabelMap],
    class: usize,
    bins: usize,
) -> Result<f64> {
    Ok(reliability_curve(probs, truths, class, bins)?.ece())
}

/// A total, disjoint assignment of fine classes to coarser groups, used to
/// evaluate a model at a merged granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMap {
    names: Vec<String>,
    /// `assignment[fine] = coarse`.
    assignment: Vec<usize>,
}

impl GroupMap {
    pub fn new(names: Vec<String>, assignment: Vec<usize>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Argument(format!(
                "a group map needs at least 2 groups, got {}",
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Validation(format!("group {} has an empty name", i)));
            }
            if names[..i].contains(name) {
                return Err(Error::Validation(format!("duplicate group name '{}'", name)));
            }
        }
        if assignment.len() < names.len() {
            return Err(Error::Validation(format!(
                "{} fine classes cannot cover {} groups",
                assignment.len(),
                names.len()
            )));
        }
        let mut used = vec![false; names.len()];
        for (fine, &coarse) in assignment.iter().enumerate() {
            if coarse >= names.len() {
                return Err(Error::Index(format!(
                    "class {} is assigned to group {} but there are {} groups",
                    fine,
                    coarse,
                    names.len()
                )));
            }
            used[coarse] = true;
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(Error::Validation(format!(
                "group '{}' has no classes",
                names[empty]
            )));
        }
        Ok(GroupMap { names, assignment })
    }

    /// The six-group merge of [`ClassSet::head11`]: white matter, grey
    /// matter, csf, bone (both compartments) and air keep their identity;
    /// everything else — muscle, fat, skin, blood and the eyes — counts as
    /// soft tissue.
    pub fn head6() -> Self {
        let names = ["wm", "gm", "csf", "bone", "soft_tissue", "air"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        // Fine order: muscle, fat, skin, cortical_bone, cancellous_bone,
        // blood, air, csf, eyes, gm, wm.
        let assignment = vec![4, 4, 4, 3, 3, 4, 5, 2, 4, 1, 0];
        GroupMap::new(names, assignment).expect("built-in group map is valid")
    }

    pub fn num_fine(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_coarse(&self) -> usize {
        self.names.len()
    }

    pub fn coarse_of(&self, fine: usize) -> usize {
        self.assignment[fine]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn class_set(&self) -> Result<ClassSet> {
        ClassSet::new(self.names.clone())
    }

    /// Relabel every pixel with its group.
    pub fn merge_labels(&self, l: &LabelMap) -> Result<LabelMap> {
        if l.num_classes() != self.num_fine() {
            return Err(Error::Shape(format!(
                "label map has {} classes, group map covers {}",
                l.num_classes(),
                self.num_fine()
            )));
        }
        let data = l
            .data()
            .iter()
            .map(|&c| self.assignment[c as usize] as u8)
            .collect();
        LabelMap::new(l.width(), l.height(), self.num_coarse(), data)
    }

    /// Sum each pixel's probabilities over the classes of every group.
    /// Probability mass is conserved per pixel.
    pub fn merge_prob(&self, p: &ProbMap) -> Result<ProbMap> {
        if p.num_classes() != self.num_fine() {
            return Err(Error::Shape(format!(
                "probability map has {} classes, group map covers {}",
                p.num_classes(),
                self.num_fine()
            )));
        }
        let pixels = p.width() * p.height();
        let m = self.num_coarse();
        let mut data = vec![0.0; pixels * m];
        for px in 0..pixels {
            let src = p.pixel_flat(px);
            let dst = &mut data[px * m..(px + 1) * m];
            for (fine, &v) in src.iter().enumerate() {
                dst[self.assignment[fine]] += v;
            }
        }
        ProbMap::new(p.width(), p.height(), m, data)
    }
}

/// Top-N accuracy at the merged granularity, computed from the *fine*
/// probabilities: classes are ranked as usual, the ranking is scanned in
/// order, and the true group counts as hit if it appears among the first
/// `n` distinct groups. Merged top-1 therefore can never fall below fine
/// top-1, and the measure is monotone in `n`.
pub fn merged_top_n_accuracy(
    probs: &[ProbMap],
    truths: &[LabelMap],
    gm: &GroupMap,
    n: usize,
) -> Result<f64> {
    check_eval_inputs(probs, truths)?;
    let classes = probs[0].num_classes();
    if classes != gm.num_fine() {
        return Err(Error::Shape(format!(
            "probability maps have {} classes, group map covers {}",
            classes,
            gm.num_fine()
        )));
    }
    if n == 0 || n > gm.num_coarse() {
        return Err(Error::Argument(format!(
            "merged top-N needs 1 <= N <= {}, got {}",
            gm.num_coarse(),
            n
        )));
    }
    let mut order: Vec<usize> = (0..classes).collect();
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, t) in probs.iter().zip(truths) {
        let pixels = t.width() * t.height();
        for px in 0..pixels {
            let pv = p.pixel_flat(px);
            order.sort_by(|&a, &b| {
                pv[b].partial_cmp(&pv[a]).unwrap().then(a.cmp(&b))
            });
            let want = gm.coarse_of(t.data()[px] as usize);
            let mut seen: Vec<usize> = Vec::with_capacity(n);
            let mut hit = false;
            for &k in &order {
                let g = gm.coarse_of(k);
                if !seen.contains(&g) {
                    if g == want {
                        hit = true;
                        break;
                    }
                    seen.push(g);
                    if seen.len() == n {
                        break;
                    }
                }
            }
            hits += hit as usize;
        }
        total += pixels;
    }
    Ok(hits as f64 / total as f64)
}

/// Fine-ranking context for merged top-N, threaded through the shared
/// per-granularity evaluator.
enum TopNSource<'a> {
    Direct,
    MergedFrom(&'a [ProbMap], &'a [LabelMap], &'a GroupMap),
}

fn granularity_report(
    name: &str,
    probs: &[ProbMap],
    truths: &[LabelMap],
    classes: &ClassSet,
    bins: usize,
    topn: TopNSource<'_>,
) -> Result<GranularityReport> {
    let n = classes.len();
    let preds: Vec<LabelMap> = probs.iter().map(argmax_map).collect();
    let mut class_reports = Vec::with_capacity(n);
    let mut curves = Vec::with_capacity(n);
    for k in 0..n {
        let mut dice_sum = 0.0;
        let mut hd_sum = 0.0;
        let mut mhd_sum = 0.0;
        let mut defined = 0usize;
        let mut support = 0usize;
        for (pred, truth) in preds.iter().zip(truths) {
            dice_sum += dice(pred, truth, k)?;
            support += truth.class_count(k);
            let pm = binary_mask(pred, k);
            let tm = binary_mask(truth, k);
            if !pm.is_empty() && !tm.is_empty() {
                hd_sum += hausdorff(&pm, &tm)?;
                mhd_sum += modified_hausdorff(&pm, &tm)?;
                defined += 1;
            }
        }
        let curve = reliability_curve(probs, truths, k, bins)?;
        class_reports.push(ClassReport {
            name: classes.name(k).to_string(),
            support,
            dice: dice_sum / preds.len() as f64,
            hausdorff: (defined > 0).then(|| hd_sum / defined as f64),
            modified_hausdorff: (defined > 0).then(|| mhd_sum / defined as f64),
            ece: curve.ece(),
        });
        curves.push(curve);
    }
    let mut top_n = Vec::new();
    for rank in 1..=3.min(n) {
        top_n.push(match &topn {
            TopNSource::Direct => top_n_accuracy(probs, truths, rank)?,
            TopNSource::MergedFrom(fp, ft, gm) => merged_top_n_accuracy(fp, ft, gm, rank)?,
        });
    }
    let macro_dice = class_reports.iter().map(|c| c.dice).sum::<f64>() / n as f64;
    let macro_ece = class_reports.iter().map(|c| c.ece).sum::<f64>() / n as f64;
    let pixels = truths.iter().map(|t| t.width() * t.height()).sum();
    Ok(GranularityReport {
        name: name.to_string(),
        pixels,
        classes: class_reports,
        curves,
        top_n,
        macro_dice,
        macro_ece,
    })
}

/// Run the full battery — per-class Dice, both Hausdorff variants, top-N
/// accuracy, reliability curves and calibration error — at the fine
/// granularity, and again over merged groups when a group map is given.
pub fn evaluate(
    probs: &[ProbMap],
    truths: &[LabelMap],
    classes: &ClassSet,
    group_map: Option<&GroupMap>,
    bins: usize,
) -> Result<MetricsReport> {
    check_eval_inputs(probs, truths)?;
    if probs[0].num_classes() != classes.len() {
        return Err(Error::Shape(format!(
            "data has {} classes but {} names were given",
            probs[0].num_classes(),
            classes.len()
        )));
    }
    let fine = granularity_report("fine", probs, truths, classes, bins, TopNSource::Direct)?;
    let merged = match group_map {
        Some(gm) => {
            if gm.num_fine() != classes.len() {
                return Err(Error::Shape(format!(
                    "group map covers {} classes but the data has {}",
                    gm.num_fine(),
                    classes.len()
                )));
            }
            let mprobs: Vec<ProbMap> = probs
                .iter()
                .map(|p| gm.merge_prob(p))
                .collect::<Result<_>>()?;
            let mtruths: Vec<LabelMap> = truths
                .iter()
                .map(|t| gm.merge_labels(t))
                .collect::<Result<_>>()?;
            Some(granularity_report(
                "merged",
                &mprobs,
                &mtruths,
                &gm.class_set()?,
                bins,
                TopNSource::MergedFrom(probs, truths, gm),
            )?)
        }
        None => None,
    };
    Ok(MetricsReport { fine, merged })
}
