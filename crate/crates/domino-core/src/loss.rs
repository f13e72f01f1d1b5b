//! Training objective: cross-entropy + soft Dice, plus the penalty-matrix
//! regularizer, with an analytic gradient with respect to the logits.
//!
//! For one image with pixels p (P total), softmax probabilities y, one-hot
//! truth t and penalty matrix W, the total loss is
//!
//!   L = lambda_ce * CE + lambda_dice * SoftDice + beta * mean_p( W[c_p] . y_p )
//!
//! where CE = mean_p( -ln(y_p[c_p] + eps) ) and SoftDice is one minus the
//! class-mean of (2*A_k + eps) / (B_k + eps) with A_k = sum_p y_pk t_pk and
//! B_k = sum_p (y_pk + t_pk), computed per image.
//!
//! The gradient accumulates dL/dy per pixel and then applies the softmax
//! Jacobian once: dL/dz_k = y_k * (g_k - sum_j g_j y_j). For the penalty
//! term alone this reduces to y_k * (W[c][k] - W[c].y), which sums to zero
//! across classes at every pixel.

use crate::error::{Error, Result};
use crate::grid::{LabelMap, ProbMap};
use crate::penalty::PenaltyMatrix;

/// Weights of the loss terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Regularizer strength, in [0, 1].
    pub beta: f64,
    /// Cross-entropy weight, >= 0.
    pub lambda_ce: f64,
    /// Soft-Dice weight, >= 0 (not both weights zero).
    pub lambda_dice: f64,
    /// Smoothing added inside the Dice ratio and the CE logarithm, > 0.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.5,
            lambda_ce: 1.0,
            lambda_dice: 1.0,
            epsilon: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Argument(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if !self.lambda_ce.is_finite() || self.lambda_ce < 0.0 {
            return Err(Error::Argument(format!(
                "lambda_ce must be >= 0, got {}",
                self.lambda_ce
            )));
        }
        if !self.lambda_dice.is_finite() || self.lambda_dice < 0.0 {
            return Err(Error::Argument(format!(
                "lambda_dice must be >= 0, got {}",
                self.lambda_dice
            )));
        }
        if self.lambda_ce == 0.0 && self.lambda_dice == 0.0 {
            return Err(Error::Argument(
                "lambda_ce and lambda_dice cannot both be zero".into(),
            ));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::Argument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-pixel class scores before the softmax; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    width: usize,
    height: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl LogitMap {
    pub fn new(width: usize, height: usize, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || num_classes == 0 {
            return Err(Error::Argument(format!(
                "bad logit map dimensions {}x{}x{}",
                width, height, num_classes
            )));
        }
        if data.len() != width * height * num_classes {
            return Err(Error::Shape(format!(
                "logit data has {} entries, expected {}",
                data.len(),
                width * height * num_classes
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite logit {}", bad)));
        }
        Ok(LogitMap {
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

    pub fn pixel_flat(&self, p: usize) -> &[f64] {
        let start = p * self.num_classes;
        &self.data[start..start + self.num_classes]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

fn softmax_pixel(z: &[f64], out: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-pixel softmax with max subtraction (overflow-safe).
pub fn softmax_map(z: &LogitMap) -> ProbMap {
    let n = z.num_classes();
    let mut data = vec![0.0; z.data().len()];
    for p in 0..z.pixels() {
        softmax_pixel(z.pixel_flat(p), &mut data[p * n..(p + 1) * n]);
    }
    ProbMap::new(z.width(), z.height(), n, data)
        .expect("softmax of finite logits is a valid probability map")
}

fn check_pair(p: &ProbMap, t: &LabelMap) -> Result<()> {
    if p.width() != t.width() || p.height() != t.height() {
        return Err(Error::Shape(format!(
            "probability map is {}x{}, labels are {}x{}",
            p.width(),
            p.height(),
            t.width(),
            t.height()
        )));
    }
    if p.num_classes() != t.num_classes() {
        return Err(Error::Shape(format!(
            "probability map has {} classes, labels have {}",
            p.num_classes(),
            t.num_classes()
        )));
    }
    Ok(())
}

/// Mean over pixels of -ln(p[true] + epsilon).
pub fn cross_entropy(p: &ProbMap, t: &LabelMap, epsilon: f64) -> Result<f64> {
    check_pair(p, t)?;
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Argument(format!("epsilon must be >= 0, got {}", epsilon)));
    }
    let mut sum = 0.0;
    for (pix, &c) in t.data().iter().enumerate() {
        sum += -(p.pixel_flat(pix)[c as usize] + epsilon).ln();
    }
    let ce = sum / t.pixels() as f64;
    if !ce.is_finite() {
        return Err(Error::Numeric(format!(
            "cross-entropy is {} (zero probability with epsilon = {})",
            ce, epsilon
        )));
    }
    Ok(ce)
}

/// One minus the class-mean soft Dice coefficient, computed over the whole
/// image (every class counts toward the mean, present in truth or not).
pub fn soft_dice_loss(p: &ProbMap, t: &LabelMap, epsilon: f64) -> Result<f64> {
    check_pair(p, t)?;
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Argument(format!("epsilon must be >= 0, got {}", epsilon)));
    }
    let n = p.num_classes();
    let (inter, total) = dice_sums(p, t);
    let mut mean = 0.0;
    for k in 0..n {
        let d = (2.0 * inter[k] + epsilon) / (total[k] + epsilon);
        if !d.is_finite() {
            return Err(Error::Numeric(format!(
                "soft Dice for class {} is {} (empty class with epsilon = {})",
                k, d, epsilon
            )));
        }
        mean += d;
    }
    Ok(1.0 - mean / n as f64)
}

/// Per-class (sum_p y_pk t_pk, sum_p y_pk + t_pk).
fn dice_sums(p: &ProbMap, t: &LabelMap) -> (Vec<f64>, Vec<f64>) {
    let n = p.num_classes();
    let mut inter = vec![0.0; n];
    let mut total = vec![0.0; n];
    for (pix, &c) in t.data().iter().enumerate() {
        let probs = p.pixel_flat(pix);
        for (k, &v) in probs.iter().enumerate() {
            total[k] += v;
        }
        inter[c as usize] += probs[c as usize];
        total[c as usize] += 1.0;
    }
    (inter, total)
}

/// Mean over pixels of the penalty row of the true class dotted with the
/// predicted probabilities: mean_p( sum_j W[c_p][j] * y_pj ).
pub fn domino_penalty(p: &ProbMap, t: &LabelMap, w: &PenaltyMatrix) -> Result<f64> {
    check_pair(p, t)?;
    if w.num_classes() != p.num_classes() {
        return Err(Error::Shape(format!(
            "penalty matrix has {} classes, probability map has {}",
            w.num_classes(),
            p.num_classes()
        )));
    }
    let mut sum = 0.0;
    for (pix, &c) in t.data().iter().enumerate() {
        let probs = p.pixel_flat(pix);
        let row = w.row(c as usize);
        let mut dot = 0.0;
        for (wj, yj) in row.iter().zip(probs) {
            dot += wj * yj;
        }
        sum += dot;
    }
    Ok(sum / t.pixels() as f64)
}

fn check_logits(z: &LogitMap, t: &LabelMap, w: Option<&PenaltyMatrix>, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if z.width() != t.width() || z.height() != t.height() || z.num_classes() != t.num_classes() {
        return Err(Error::Shape(format!(
            "logits are {}x{}x{}, labels are {}x{} with {} classes",
            z.width(),
            z.height(),
            z.num_classes(),
            t.width(),
            t.height(),
            t.num_classes()
        )));
    }
    if let Some(w) = w {
        if w.num_classes() != z.num_classes() {
            return Err(Error::Shape(format!(
                "penalty matrix has {} classes, logits have {}",
                w.num_classes(),
                z.num_classes()
            )));
        }
    }
    Ok(())
}

/// Total loss only (no gradient). With `beta == 0` or no penalty matrix the
/// result is exactly `lambda_ce * CE + lambda_dice * SoftDice`.
pub fn total_loss(
    z: &LogitMap,
    t: &LabelMap,
    w: Option<&PenaltyMatrix>,
    cfg: &LossConfig,
) -> Result<f64> {
    check_logits(z, t, w, cfg)?;
    let p = softmax_map(z);
    let mut loss = 0.0;
    if cfg.lambda_ce > 0.0 {
        loss += cfg.lambda_ce * cross_entropy(&p, t, cfg.epsilon)?;
    }
    if cfg.lambda_dice > 0.0 {
        loss += cfg.lambda_dice * soft_dice_loss(&p, t, cfg.epsilon)?;
    }
    if let Some(w) = w {
        if cfg.beta > 0.0 {
            loss += cfg.beta * domino_penalty(&p, t, w)?;
        }
    }
    Ok(loss)
}

/// Total loss and its analytic gradient with respect to every logit,
/// returned in a grid of the same shape.
pub fn total_loss_and_grad(
    z: &LogitMap,
    t: &LabelMap,
    w: Option<&PenaltyMatrix>,
    cfg: &LossConfig,
) -> Result<(f64, LogitMap)> {
    check_logits(z, t, w, cfg)?;
    let n = z.num_classes();
    let pixels = z.pixels();
    let inv_p = 1.0 / pixels as f64;
    let p = softmax_map(z);

    let mut loss = 0.0;
    if cfg.lambda_ce > 0.0 {
        loss += cfg.lambda_ce * cross_entropy(&p, t, cfg.epsilon)?;
    }
    if cfg.lambda_dice > 0.0 {
        loss += cfg.lambda_dice * soft_dice_loss(&p, t, cfg.epsilon)?;
    }
    let use_pen = w.is_some() && cfg.beta > 0.0;
    if let Some(w) = w {
        if use_pen {
            loss += cfg.beta * domino_penalty(&p, t, w)?;
        }
    }

    // Per-class Dice sums feed every pixel's gradient, so hoist them.
    let dice_terms = if cfg.lambda_dice > 0.0 {
        let (inter, total) = dice_sums(&p, t);
        Some((inter, total))
    } else {
        None
    };

    let mut grad = vec![0.0; pixels * n];
    let mut g = vec![0.0; n];
    for (pix, &c) in t.data().iter().enumerate() {
        let c = c as usize;
        let probs = p.pixel_flat(pix);
        g.iter_mut().for_each(|v| *v = 0.0);

        if cfg.lambda_ce > 0.0 {
            g[c] -= cfg.lambda_ce * inv_p / (probs[c] + cfg.epsilon);
        }
        if let Some((inter, total)) = &dice_terms {
            let scale = -cfg.lambda_dice / n as f64;
            for k in 0..n {
                let b = total[k] + cfg.epsilon;
                let num = if k == c { 2.0 * b - (2.0 * inter[k] + cfg.epsilon) } else { -(2.0 * inter[k] + cfg.epsilon) };
                g[k] += scale * num / (b * b);
            }
        }
        if use_pen {
            let row = w.unwrap().row(c);
            let scale = cfg.beta * inv_p;
            for k in 0..n {
                g[k] += scale * row[k];
            }
        }

        // Softmax Jacobian: dz_k = y_k (g_k - <g, y>).
        let mut dot = 0.0;
        for k in 0..n {
            dot += g[k] * probs[k];
        }
        let out = &mut grad[pix * n..(pix + 1) * n];
        for k in 0..n {
            out[k] = probs[k] * (g[k] - dot);
        }
    }

    if !loss.is_finite() {
        return Err(Error::Numeric(format!("total loss is {}", loss)));
    }
    let grad = LogitMap::new(z.width(), z.height(), n, grad)?;
    Ok((loss, grad))
}
