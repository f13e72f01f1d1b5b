//! A small pixel classifier: for every pixel, a square intensity patch
//! (edge-clamped at borders) feeds one tanh hidden layer and a linear
//! output layer producing per-class logits. Gradients are derived by hand
//! and checked against finite differences in the test suite; training uses
//! Adam with round-robin sampling over the dataset.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{argmax_map, ClassSet, DenseMatrix, LabelMap, ProbMap, MAX_CLASSES};
use crate::io::{encode_dom1, Dom1Reader, Dom1Tensor};
use crate::loss::{softmax_map, total_loss, total_loss_and_grad, LogitMap, LossConfig};
use crate::metrics::evaluate;
use crate::penalty::{build_cm_penalty, confusion_from_predictions, ConfusionMatrix, PenaltyMatrix};
use crate::phantom::PhantomSample;
use crate::report::MetricsReport;
use crate::rng::SplitMix64;

const MODEL_MAGIC: &str = "DOM1-MODEL";
const MODEL_VERSION: u64 = 1;

/// Per-pixel patch classifier with one hidden layer.
///
/// Parameter layout (also the serialization and flat-vector order):
/// `w1` is features x hidden (row-major), `b1` hidden, `w2` hidden x
/// classes (row-major), `b2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchClassifier {
    patch_radius: usize,
    hidden_units: usize,
    num_classes: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Gradients of the loss with respect to every parameter, in the same
/// layout as [`PatchClassifier`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl PatchClassifier {
    /// Random initialization: every weight and bias is uniform in
    /// +-1/sqrt(fan_in) of its layer, drawn in layout order from one
    /// SplitMix64 stream.
    pub fn init(
        patch_radius: usize,
        hidden_units: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if patch_radius > 32 {
            return Err(Error::Argument(format!(
                "patch radius {} is unreasonably large (max 32)",
                patch_radius
            )));
        }
        if hidden_units == 0 || hidden_units > 4096 {
            return Err(Error::Argument(format!(
                "hidden units must be in 1..=4096, got {}",
                hidden_units
            )));
        }
        if !(2..=MAX_CLASSES).contains(&num_classes) {
            return Err(Error::Argument(format!(
                "classifier needs 2..={} classes, got {}",
                MAX_CLASSES, num_classes
            )));
        }
        let side = 2 * patch_radius + 1;
        let features = side * side;
        let mut rng = SplitMix64::new(seed);
        let bound1 = 1.0 / (features as f64).sqrt();
        let w1 = (0..features * hidden_units)
            .map(|_| rng.uniform_in(-bound1, bound1))
            .collect();
        let b1 = (0..hidden_units)
            .map(|_| rng.uniform_in(-bound1, bound1))
            .collect();
        let bound2 = 1.0 / (hidden_units as f64).sqrt();
        let w2 = (0..hidden_units * num_classes)
            .map(|_| rng.uniform_in(-bound2, bound2))
            .collect();
        let b2 = (0..num_classes)
            .map(|_| rng.uniform_in(-bound2, bound2))
            .collect();
        Ok(PatchClassifier {
            patch_radius,
            hidden_units,
            num_classes,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn patch_radius(&self) -> usize {
        self.patch_radius
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_units
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of inputs per pixel: the full square patch.
    pub fn features(&self) -> usize {
        let side = 2 * self.patch_radius + 1;
        side * side
    }

    /// All parameters flattened in layout order (w1, b1, w2, b2).
    pub fn params_vec(&self) -> Vec<f64> {
        let mut v =
            Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    /// Replace all parameters from a flat vector in layout order.
    pub fn set_params_vec(&mut self, flat: &[f64]) -> Result<()> {
        let want = self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len();
        if flat.len() != want {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                want,
                flat.len()
            )));
        }
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    fn check_image(&self, image: &DenseMatrix) -> Result<()> {
        let side = 2 * self.patch_radius + 1;
        if image.cols() < side || image.rows() < side {
            return Err(Error::Argument(format!(
                "image {}x{} is smaller than the {}x{} patch; refusing to pad",
                image.cols(),
                image.rows(),
                side,
                side
            )));
        }
        Ok(())
    }

    /// Copy the edge-clamped patch centred on (x, y) into `buf`
    /// (row-major over the patch).
    fn patch_into(&self, image: &DenseMatrix, x: usize, y: usize, buf: &mut [f64]) {
        let r = self.patch_radius as isize;
        let w = image.cols() as isize;
        let h = image.rows() as isize;
        let mut i = 0;
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, h - 1) as usize;
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, w - 1) as usize;
                buf[i] = image.at(yy, xx);
                i += 1;
            }
        }
    }

    fn forward_cached(&self, image: &DenseMatrix) -> Result<(LogitMap, Vec<f64>)> {
        self.check_image(image)?;
        let (width, height) = (image.cols(), image.rows());
        let (nh, nc) = (self.hidden_units, self.num_classes);
        let pixels = width * height;
        let mut logits = vec![0.0; pixels * nc];
        let mut hidden = vec![0.0; pixels * nh];
        let mut patch = vec![0.0; self.features()];
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                self.patch_into(image, x, y, &mut patch);
                let h = &mut hidden[p * nh..(p + 1) * nh];
                h.copy_from_slice(&self.b1);
                for (i, &xi) in patch.iter().enumerate() {
                    let row = &self.w1[i * nh..(i + 1) * nh];
                    for (hj, wj) in h.iter_mut().zip(row) {
                        *hj += xi * wj;
                    }
                }
                for hj in h.iter_mut() {
                    *hj = hj.tanh();
                }
                let z = &mut logits[p * nc..(p + 1) * nc];
                z.copy_from_slice(&self.b2);
                for (j, &hj) in h.iter().enumerate() {
                    let row = &self.w2[j * nc..(j + 1) * nc];
                    for (zk, wk) in z.iter_mut().zip(row) {
                        *zk += hj * wk;
                    }
                }
            }
        }
        Ok((LogitMap::new(width, height, nc, logits)?, hidden))
    }

    /// Per-pixel logits for a whole image.
    pub fn forward(&self, image: &DenseMatrix) -> Result<LogitMap> {
        Ok(self.forward_cached(image)?.0)
    }

    /// Loss on one image and its gradient with respect to every parameter.
    pub fn backward(
        &self,
        image: &DenseMatrix,
        truth: &LabelMap,
        w: Option<&PenaltyMatrix>,
        cfg: &LossConfig,
    ) -> Result<(f64, ParamGrads)> {
        let (logits, hidden) = self.forward_cached(image)?;
        let (loss, dz) = total_loss_and_grad(&logits, truth, w, cfg)?;
        let (width, height) = (image.cols(), image.rows());
        let (nh, nc) = (self.hidden_units, self.num_classes);
        let mut grads = ParamGrads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        };
        let mut patch = vec![0.0; self.features()];
        let mut da = vec![0.0; nh];
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                let dzp = dz.pixel_flat(p);
                let h = &hidden[p * nh..(p + 1) * nh];
                for (gb, d) in grads.b2.iter_mut().zip(dzp) {
                    *gb += d;
                }
                for (j, &hj) in h.iter().enumerate() {
                    let wrow = &self.w2[j * nc..(j + 1) * nc];
                    let grow = &mut grads.w2[j * nc..(j + 1) * nc];
                    let mut dh = 0.0;
                    for k in 0..nc {
                        grow[k] += hj * dzp[k];
                        dh += wrow[k] * dzp[k];
                    }
                    da[j] = dh * (1.0 - hj * hj);
                }
                for (gb, d) in grads.b1.iter_mut().zip(&da) {
                    *gb += d;
                }
                self.patch_into(image, x, y, &mut patch);
                for (i, &xi) in patch.iter().enumerate() {
                    let grow = &mut grads.w1[i * nh..(i + 1) * nh];
                    for (g, d) in grow.iter_mut().zip(&da) {
                        *g += xi * d;
                    }
                }
            }
        }
        Ok((loss, grads))
    }
}

/// Class probabilities for every pixel of an image.
pub fn predict_prob(model: &PatchClassifier, image: &DenseMatrix) -> Result<ProbMap> {
    Ok(softmax_map(&model.forward(image)?))
}

/// Hard labels (argmax, ties to the lowest index) for every pixel.
pub fn predict_labels(model: &PatchClassifier, image: &DenseMatrix) -> Result<LabelMap> {
    Ok(argmax_map(&predict_prob(model, image)?))
}

/// Training hyperparameters. `loss.beta` only takes effect when a penalty
/// matrix is supplied; without one the regularizer is off.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Penalty scale used when a workflow builds a confusion penalty.
    pub scale: f64,
    /// Record the mean training-set loss every this many iterations.
    pub eval_interval: usize,
    pub moment_decay: f64,
    pub second_moment_decay: f64,
    pub stability_epsilon: f64,
    pub patch_radius: usize,
    pub hidden_units: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 600,
            learning_rate: 3e-3,
            seed: 42,
            scale: 3.0,
            eval_interval: 20,
            moment_decay: 0.9,
            second_moment_decay: 0.999,
            stability_epsilon: 1e-8,
            patch_radius: 2,
            hidden_units: 16,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::Config(format!(
                "penalty scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval interval must be at least 1".into()));
        }
        for (name, v) in [
            ("moment decay", self.moment_decay),
            ("second moment decay", self.second_moment_decay),
        ] {
            if !v.is_finite() || !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "{} must be in [0, 1), got {}",
                    name, v
                )));
            }
        }
        if !self.stability_epsilon.is_finite() || self.stability_epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "stability epsilon must be positive, got {}",
                self.stability_epsilon
            )));
        }
        self.loss.validate()
    }
}

/// One entry of the training trace: mean loss over the whole training set
/// after `iteration` update steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub loss: f64,
}

fn check_dataset(data: &[PhantomSample], cfg: &TrainConfig) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let n = data[0].truth.num_classes();
    let side = 2 * cfg.patch_radius + 1;
    for (i, s) in data.iter().enumerate() {
        if s.truth.num_classes() != n {
            return Err(Error::Shape(format!(
                "sample {} has {} classes, sample 0 has {}",
                i,
                s.truth.num_classes(),
                n
            )));
        }
        if s.image.cols() != s.truth.width() || s.image.rows() != s.truth.height() {
            return Err(Error::Shape(format!(
                "sample {}: image {}x{} does not match truth {}x{}",
                i,
                s.image.cols(),
                s.image.rows(),
                s.truth.width(),
                s.truth.height()
            )));
        }
        if s.image.cols() < side || s.image.rows() < side {
            return Err(Error::Argument(format!(
                "sample {}: image {}x{} is smaller than the {}x{} patch",
                i,
                s.image.cols(),
                s.image.rows(),
                side,
                side
            )));
        }
    }
    Ok(n)
}

/// Mean loss over a dataset with fixed parameters (no updates).
pub fn mean_loss(
    model: &PatchClassifier,
    data: &[PhantomSample],
    w: Option<&PenaltyMatrix>,
    cfg: &LossConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Argument("cannot average loss over an empty set".into()));
    }
    let mut sum = 0.0;
    for s in data {
        let z = model.forward(&s.image)?;
        sum += total_loss(&z, &s.truth, w, cfg)?;
    }
    Ok(sum / data.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig, t: usize) {
        let b1 = cfg.moment_decay;
        let b2 = cfg.second_moment_decay;
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.stability_epsilon);
        }
    }
}

/// Train a fresh classifier on `data`. Samples are visited round-robin, one
/// image per update step. Supplying a penalty matrix turns on the
/// regularizer at weight `cfg.loss.beta`; with `None` the beta weight is
/// ignored. Returns the model and the loss trace. A non-finite loss stops
/// training with an error naming the iteration.
pub fn train(
    data: &[PhantomSample],
    cfg: &TrainConfig,
    w: Option<&PenaltyMatrix>,
) -> Result<(PatchClassifier, Vec<TracePoint>)> {
    cfg.validate()?;
    let n = check_dataset(data, cfg)?;
    if let Some(p) = w {
        if p.num_classes() != n {
            return Err(Error::Shape(format!(
                "penalty matrix is {0}x{0} but the data has {1} classes",
                p.num_classes(),
                n
            )));
        }
    }
    let mut loss_cfg = cfg.loss.clone();
    if w.is_none() {
        loss_cfg.beta = 0.0;
    }
    let mut model = PatchClassifier::init(cfg.patch_radius, cfg.hidden_units, n, cfg.seed)?;
    let mut adam = [
        Adam::new(model.w1.len()),
        Adam::new(model.b1.len()),
        Adam::new(model.w2.len()),
        Adam::new(model.b2.len()),
    ];
    let mut trace = Vec::new();
    for i in 0..cfg.iterations {
        let t = i + 1;
        let sample = &data[i % data.len()];
        let (loss, grads) = match model.backward(&sample.image, &sample.truth, w, &loss_cfg) {
            Ok(r) => r,
            Err(Error::Numeric(message)) => {
                return Err(Error::Train { iteration: t, message })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Train {
                iteration: t,
                message: format!("loss became {}", loss),
            });
        }
        adam[0].step(&mut model.w1, &grads.w1, cfg, t);
        adam[1].step(&mut model.b1, &grads.b1, cfg, t);
        adam[2].step(&mut model.w2, &grads.w2, cfg, t);
        adam[3].step(&mut model.b2, &grads.b2, cfg, t);
        if t % cfg.eval_interval == 0 {
            let loss = match mean_loss(&model, data, w, &loss_cfg) {
                Ok(l) => l,
                Err(Error::Numeric(message)) => {
                    return Err(Error::Train { iteration: t, message })
                }
                Err(e) => return Err(e),
            };
            trace.push(TracePoint { iteration: t, loss });
        }
    }
    Ok((model, trace))
}

/// A model together with the fingerprint of the dataset it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: PatchClassifier,
    pub train_fingerprint: u64,
}

/// Serialize a model to bytes: one text manifest line, then the four
/// parameter tensors as DOM1 blocks.
pub fn model_bytes(model: &PatchClassifier, train_fingerprint: u64) -> Vec<u8> {
    let mut out = Vec::new();
    let mut header = format!(
        "{} {} {} {} {} {:016x} 4 w1 b1 w2 b2",
        MODEL_MAGIC,
        MODEL_VERSION,
        model.patch_radius,
        model.hidden_units,
        model.num_classes,
        train_fingerprint
    );
    header.push('\n');
    out.extend_from_slice(header.as_bytes());
    let f = model.features();
    let tensor = |dims: Vec<usize>, data: Vec<f64>| {
        Dom1Tensor::f64(dims, data).expect("parameter block dims always match")
    };
    encode_dom1(&mut out, &tensor(vec![f, model.hidden_units], model.w1.clone()));
    encode_dom1(&mut out, &tensor(vec![model.hidden_units], model.b1.clone()));
    encode_dom1(
        &mut out,
        &tensor(vec![model.hidden_units, model.num_classes], model.w2.clone()),
    );
    encode_dom1(&mut out, &tensor(vec![model.num_classes], model.b2.clone()));
    out
}

/// Write a model to disk (see [`model_bytes`] for the format).
pub fn save_model(path: &Path, model: &PatchClassifier, train_fingerprint: u64) -> Result<()> {
    std::fs::write(path, model_bytes(model, train_fingerprint))?;
    Ok(())
}

/// Load a model saved by [`save_model`]. An unknown container version is
/// reported as such, not as a parse failure.
pub fn load_model(path: &Path) -> Result<SavedModel> {
    let bytes = std::fs::read(path)?;
    let mut rd = Dom1Reader::new(&bytes, path);
    let perr = |message: String| Error::Parse {
        path: path.to_path_buf(),
        locus: "manifest line".into(),
        message,
    };
    let header = rd.line()?.to_string();
    let mut parts = header.split_ascii_whitespace();
    match parts.next() {
        Some(MODEL_MAGIC) => {}
        other => {
            return Err(perr(format!(
                "expected {} magic, found {:?}",
                MODEL_MAGIC,
                other.unwrap_or("")
            )))
        }
    }
    let version: u64 = parts
        .next()
        .ok_or_else(|| perr("missing version".into()))?
        .parse()
        .map_err(|_| perr("version is not an integer".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "model container",
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let mut usize_field = |what: &str| -> Result<usize> {
        parts
            .next()
            .ok_or_else(|| perr(format!("missing {}", what)))?
            .parse()
            .map_err(|_| perr(format!("{} is not an integer", what)))
    };
    let patch_radius = usize_field("patch radius")?;
    let hidden_units = usize_field("hidden units")?;
    let num_classes = usize_field("class count")?;
    let fp_text = parts
        .next()
        .ok_or_else(|| perr("missing dataset fingerprint".into()))?;
    let train_fingerprint = u64::from_str_radix(fp_text, 16)
        .map_err(|_| perr(format!("fingerprint '{}' is not hexadecimal", fp_text)))?;
    let nblocks: u64 = parts
        .next()
        .ok_or_else(|| perr("missing block count".into()))?
        .parse()
        .map_err(|_| perr("block count is not an integer".into()))?;
    if nblocks != 4 {
        return Err(perr(format!("expected 4 parameter blocks, found {}", nblocks)));
    }
    let names: Vec<&str> = parts.collect();
    if names != ["w1", "b1", "w2", "b2"] {
        return Err(perr(format!(
            "expected blocks 'w1 b1 w2 b2', found '{}'",
            names.join(" ")
        )));
    }

    let mut model = PatchClassifier::init(patch_radius, hidden_units, num_classes, 0)
        .map_err(|e| perr(format!("invalid geometry: {}", e)))?;
    let features = model.features();
    let mut block = |name: &str, dims: Vec<usize>| -> Result<Vec<f64>> {
        let t = rd.tensor()?;
        if t.dims != dims {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                locus: format!("block {}", name),
                message: format!("expected dims {:?}, found {:?}", dims, t.dims),
            });
        }
        let data = t.as_f64().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            locus: format!("block {}", name),
            message: "expected f64 data".into(),
        })?;
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "model block {} contains non-finite value {}",
                name, bad
            )));
        }
        Ok(data.to_vec())
    };
    model.w1 = block("w1", vec![features, hidden_units])?;
    model.b1 = block("b1", vec![hidden_units])?;
    model.w2 = block("w2", vec![hidden_units, num_classes])?;
    model.b2 = block("b2", vec![num_classes])?;
    rd.finish()?;
    Ok(SavedModel {
        model,
        train_fingerprint,
    })
}

/// Everything produced by the two-phase confusion-penalty workflow.
#[derive(Debug, Clone)]
pub struct CmWorkflow {
    pub base: PatchClassifier,
    pub base_trace: Vec<TracePoint>,
    /// Confusion of the base model on the held-out set.
    pub confusion: ConfusionMatrix,
    /// Penalty built from that confusion.
    pub penalty: PenaltyMatrix,
    pub calibrated: PatchClassifier,
    pub calibrated_trace: Vec<TracePoint>,
    /// Test-set metrics for both models, when a test set was supplied.
    pub base_report: Option<MetricsReport>,
    pub calibrated_report: Option<MetricsReport>,
    pub warnings: Vec<String>,
}

/// Two-phase training: fit a base model, estimate its confusion on a
/// held-out set, build the penalty from that confusion, and retrain with
/// the regularizer on. When a test set is given, both models are evaluated
/// on it.
pub fn domino_cm_workflow(
    train_set: &[PhantomSample],
    heldout: &[PhantomSample],
    test: Option<&[PhantomSample]>,
    cfg: &TrainConfig,
) -> Result<CmWorkflow> {
    if heldout.is_empty() {
        return Err(Error::Argument("held-out set is empty".into()));
    }
    let (base, base_trace) = train(train_set, cfg, None)?;
    let n = base.num_classes();

    let mut warnings = Vec::new();
    let shared = heldout.iter().filter(|s| train_set.contains(s)).count();
    if shared > 0 {
        warnings.push(format!(
            "{} of {} held-out samples also appear in the training set; the confusion estimate is optimistic",
            shared,
            heldout.len()
        ));
    }

    let mut predictions = Vec::with_capacity(heldout.len());
    let mut truths = Vec::with_capacity(heldout.len());
    for s in heldout {
        predictions.push(predict_labels(&base, &s.image)?);
        truths.push(s.truth.clone());
    }
    let confusion = confusion_from_predictions(&truths, &predictions)?;
    let penalty = build_cm_penalty(&confusion, cfg.scale)?;
    let (calibrated, calibrated_trace) = train(train_set, cfg, Some(&penalty))?;

    let (base_report, calibrated_report) = match test {
        Some(test_set) if !test_set.is_empty() => {
            let classes = if n == ClassSet::head11().len() {
                ClassSet::head11()
            } else {
                ClassSet::numbered(n)?
            };
            let test_truths: Vec<LabelMap> = test_set.iter().map(|s| s.truth.clone()).collect();
            let mut base_probs = Vec::with_capacity(test_set.len());
            let mut cal_probs = Vec::with_capacity(test_set.len());
            for s in test_set {
                base_probs.push(predict_prob(&base, &s.image)?);
                cal_probs.push(predict_prob(&calibrated, &s.image)?);
            }
            (
                Some(evaluate(&base_probs, &test_truths, &classes, None, 10)?),
                Some(evaluate(&cal_probs, &test_truths, &classes, None, 10)?),
            )
        }
        _ => (None, None),
    };

    Ok(CmWorkflow {
        base,
        base_trace,
        confusion,
        penalty,
        calibrated,
        calibrated_trace,
        base_report,
        calibrated_report,
        warnings,
    })
}

/// Write a loss trace as a two-column CSV.
pub fn trace_to_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from("iteration,loss\n");
    for p in trace {
        let _ = writeln!(out, "{},{}", p.iteration, p.loss);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::{build_hc_penalty, HierarchySpec};

    fn toy_sample(width: usize, height: usize, n: usize, seed: u64) -> PhantomSample {
        let mut rng = SplitMix64::new(seed);
        let image = DenseMatrix::new(
            height,
            width,
            (0..width * height).map(|_| rng.uniform()).collect(),
        )
        .unwrap();
        let labels: Vec<u8> = (0..width * height).map(|p| (p % n) as u8).collect();
        let truth = LabelMap::new(width, height, n, labels).unwrap();
        PhantomSample { image, truth }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = PatchClassifier::init(2, 16, 11, 9).unwrap();
        let b = PatchClassifier::init(2, 16, 11, 9).unwrap();
        assert_eq!(a, b);
        let c = PatchClassifier::init(2, 16, 11, 10).unwrap();
        assert_ne!(a, c);
        let bound1 = 1.0 / (a.features() as f64).sqrt();
        assert!(a.w1.iter().chain(&a.b1).all(|v| v.abs() <= bound1));
        let bound2 = 1.0 / 16f64.sqrt();
        assert!(a.w2.iter().chain(&a.b2).all(|v| v.abs() <= bound2));
    }

    #[test]
    fn zero_parameters_give_uniform_probabilities() {
        let mut m = PatchClassifier::init(1, 3, 4, 0).unwrap();
        let zeros = vec![0.0; m.params_vec().len()];
        m.set_params_vec(&zeros).unwrap();
        let s = toy_sample(5, 5, 4, 1);
        let p = predict_prob(&m, &s.image).unwrap();
        for px in 0..25 {
            for &v in p.pixel_flat(px) {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_image_gives_identical_logits_everywhere() {
        let m = PatchClassifier::init(2, 8, 5, 3).unwrap();
        let image = DenseMatrix::new(7, 9, vec![0.6; 63]).unwrap();
        let z = m.forward(&image).unwrap();
        let first = z.pixel_flat(0).to_vec();
        for p in 1..63 {
            assert_eq!(z.pixel_flat(p), &first[..]);
        }
    }

    #[test]
    fn single_hidden_unit_matches_hand_computation() {
        let mut m = PatchClassifier::init(0, 1, 2, 0).unwrap();
        m.set_params_vec(&[2.0, -1.0, 0.5, -0.5, 0.1, 0.2]).unwrap();
        let image = DenseMatrix::new(1, 1, vec![0.75]).unwrap();
        let z = m.forward(&image).unwrap();
        let h = (0.75f64 * 2.0 - 1.0).tanh();
        assert_eq!(z.pixel_flat(0), &[h * 0.5 + 0.1, h * -0.5 + 0.2]);
    }

    #[test]
    fn image_smaller_than_patch_is_rejected() {
        let m = PatchClassifier::init(2, 4, 3, 0).unwrap();
        let image = DenseMatrix::new(4, 4, vec![0.5; 16]).unwrap();
        assert!(matches!(m.forward(&image), Err(Error::Argument(_))));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let m = PatchClassifier::init(1, 4, 3, 5).unwrap();
        let s = toy_sample(6, 6, 3, 6);
        let hierarchy =
            HierarchySpec::new(3, vec![("pair".into(), vec![0, 1]), ("solo".into(), vec![2])])
                .unwrap();
        let w = build_hc_penalty(&hierarchy, 3.0, 1.0).unwrap();
        let cfg = LossConfig {
            beta: 0.4,
            ..LossConfig::default()
        };
        let (_, grads) = m.backward(&s.image, &s.truth, Some(&w), &cfg).unwrap();
        let analytic: Vec<f64> = [&grads.w1, &grads.b1, &grads.w2, &grads.b2]
            .iter()
            .flat_map(|g| g.iter().copied())
            .collect();

        let params = m.params_vec();
        let loss_at = |flat: &[f64]| -> f64 {
            let mut probe = m.clone();
            probe.set_params_vec(flat).unwrap();
            let z = probe.forward(&s.image).unwrap();
            total_loss(&z, &s.truth, Some(&w), &cfg).unwrap()
        };
        let mut worst = 0.0f64;
        for i in 0..params.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let step = 1e-6;
            plus[i] += step;
            minus[i] -= step;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-4);
            worst = worst.max((analytic[i] - fd).abs() / denom);
        }
        assert!(worst < 1e-4, "worst relative error {}", worst);
    }

    #[test]
    fn wrong_parameter_count_is_rejected() {
        let mut m = PatchClassifier::init(0, 1, 2, 0).unwrap();
        assert!(matches!(
            m.set_params_vec(&[0.0; 5]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data: Vec<PhantomSample> = (0..2).map(|i| toy_sample(8, 8, 3, 20 + i)).collect();
        let cfg = TrainConfig {
            iterations: 120,
            eval_interval: 30,
            patch_radius: 1,
            hidden_units: 8,
            ..TrainConfig::default()
        };
        let (m1, trace1) = train(&data, &cfg, None).unwrap();
        let (m2, trace2) = train(&data, &cfg, None).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(trace1, trace2);
        assert_eq!(trace1.len(), 4);
        assert_eq!(trace1[0].iteration, 30);
        assert!(
            trace1.last().unwrap().loss < trace1[0].loss,
            "loss did not improve: {:?}",
            trace1
        );
    }

    #[test]
    fn penalty_changes_the_learned_parameters() {
        let data = vec![toy_sample(8, 8, 3, 31)];
        let cfg = TrainConfig {
            iterations: 40,
            eval_interval: 40,
            patch_radius: 1,
            hidden_units: 8,
            ..TrainConfig::default()
        };
        let hierarchy =
            HierarchySpec::new(3, vec![("pair".into(), vec![0, 1]), ("solo".into(), vec![2])])
                .unwrap();
        let w = build_hc_penalty(&hierarchy, 3.0, 1.0).unwrap();
        let (base, _) = train(&data, &cfg, None).unwrap();
        let (reg, _) = train(&data, &cfg, Some(&w)).unwrap();
        assert_ne!(base, reg);
    }

    #[test]
    fn non_finite_input_stops_training_with_the_iteration() {
        let mut s = toy_sample(6, 6, 3, 40);
        s.image = DenseMatrix::new(6, 6, vec![f64::NAN; 36]).unwrap();
        let cfg = TrainConfig {
            iterations: 10,
            eval_interval: 5,
            patch_radius: 1,
            hidden_units: 4,
            ..TrainConfig::default()
        };
        match train(&[s], &cfg, None) {
            Err(Error::Train { iteration, .. }) => assert_eq!(iteration, 1),
            other => panic!("expected a training error, got {:?}", other),
        }
    }

    #[test]
    fn penalty_class_count_mismatch_is_rejected() {
        let data = vec![toy_sample(6, 6, 3, 50)];
        let cfg = TrainConfig {
            iterations: 5,
            eval_interval: 5,
            patch_radius: 1,
            hidden_units: 4,
            ..TrainConfig::default()
        };
        let hierarchy = HierarchySpec::new(
            4,
            vec![("a".into(), vec![0, 1]), ("b".into(), vec![2, 3])],
        )
        .unwrap();
        let w = build_hc_penalty(&hierarchy, 3.0, 1.0).unwrap();
        assert!(matches!(
            train(&data, &cfg, Some(&w)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn model_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dom1");
        let m = PatchClassifier::init(2, 16, 11, 77).unwrap();
        save_model(&path, &m, 0xDEAD_BEEF_0BAD_F00D).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.model, m);
        assert_eq!(loaded.train_fingerprint, 0xDEAD_BEEF_0BAD_F00D);
    }

    #[test]
    fn unknown_container_version_is_reported_as_such() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dom1");
        let m = PatchClassifier::init(1, 4, 3, 0).unwrap();
        save_model(&path, &m, 1).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes[..20]).into_owned();
        assert!(text.starts_with("DOM1-MODEL 1 "));
        bytes[11] = b'2';
        std::fs::write(&path, &bytes).unwrap();
        match load_model(&path) {
            Err(Error::UnsupportedVersion { found, expected, .. }) => {
                assert_eq!(found, 2);
                assert_eq!(expected, 1);
            }
            other => panic!("expected version error, got {:?}", other),
        }
    }

    #[test]
    fn truncated_model_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dom1");
        let m = PatchClassifier::init(1, 4, 3, 0).unwrap();
        save_model(&path, &m, 1).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn trailing_bytes_after_model_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dom1");
        let m = PatchClassifier::init(1, 4, 3, 0).unwrap();
        save_model(&path, &m, 1).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn mean_loss_rejects_empty_sets() {
        let m = PatchClassifier::init(1, 4, 3, 0).unwrap();
        assert!(matches!(
            mean_loss(&m, &[], None, &LossConfig::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let csv = trace_to_csv(&[
            TracePoint { iteration: 10, loss: 1.5 },
            TracePoint { iteration: 20, loss: 1.25 },
        ]);
        assert_eq!(csv, "iteration,loss\n10,1.5\n20,1.25\n");
    }
}
