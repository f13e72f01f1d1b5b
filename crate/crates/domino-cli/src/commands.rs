//! Command implementations. Every command computes all of its artifacts in
//! memory first and writes them in one pass at the end, so a failure
//! leaves no partial outputs behind. Inputs are never modified.

use std::path::{Path, PathBuf};

use domino_core::io::matrix_to_csv;
use domino_core::*;

use crate::config::RunConfig;
use crate::parallel::parallel_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainMode {
    /// Plain DiceCE training, no regularizer.
    Base,
    /// Two-phase confusion-penalty workflow (needs --heldout).
    Cm,
    /// Hierarchy-penalty training from the configured class groups.
    Hc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PenaltyMode {
    /// Build from a confusion-count CSV (needs --confusion).
    Cm,
    /// Build from the configured class hierarchy.
    Hc,
}

/// Scalar flag overrides applied on top of the config file.
#[derive(Debug, Default, Clone, Copy)]
pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub scale: Option<f64>,
}

/// Pending output files, written together once a command has fully
/// succeeded.
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Outputs { files: Vec::new() }
    }

    fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    fn add_text(&mut self, path: PathBuf, text: String) {
        self.add(path, text.into_bytes());
    }

    fn write(self) -> Result<()> {
        for (path, bytes) in &self.files {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, bytes)?;
        }
        Ok(())
    }
}

/// Class names become file-name tokens: anything outside `[A-Za-z0-9_-]`
/// is replaced by an underscore.
fn file_token(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn confusion_csv(c: &ConfusionMatrix) -> Result<String> {
    let n = c.num_classes();
    let data = c.counts().iter().map(|&v| v as f64).collect();
    Ok(matrix_to_csv(&DenseMatrix::new(n, n, data)?))
}

/// Generate `count` phantom samples into `out_dir`.
pub fn cmd_phantom(
    cfg: &RunConfig,
    count: usize,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<String> {
    let mut pcfg = cfg.phantom_config()?;
    if let Some(s) = seed {
        pcfg.seed = s;
    }
    let samples = parallel_map(count, |i| generate(&pcfg, i as u64))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    save_dataset(out_dir, &samples)?;
    Ok(format!(
        "wrote {} phantom samples (seed {}) to {}",
        count,
        pcfg.seed,
        out_dir.display()
    ))
}

/// Train a model in one of the three modes and write it with its loss
/// trace (plus confusion/penalty artifacts where the mode produces them).
pub fn cmd_train(
    cfg: &RunConfig,
    mode: TrainMode,
    data_dir: &Path,
    heldout: Option<&Path>,
    out_dir: &Path,
    ov: TrainOverrides,
) -> Result<String> {
    let mut tcfg = cfg.train_config()?;
    if let Some(s) = ov.seed {
        tcfg.seed = s;
    }
    if let Some(b) = ov.beta {
        tcfg.loss.beta = b;
    }
    if let Some(s) = ov.scale {
        tcfg.scale = s;
    }
    tcfg.validate().map_err(|e| match e {
        // A flag value out of range is a usage problem, not a numeric one.
        Error::Config(m) => Error::Config(m),
        other => other,
    })?;
    let n = cfg.classes.len();
    let data = load_dataset(data_dir, n)?;
    let fp = dataset_fingerprint(&data);
    let mut out = Outputs::new();
    let summary = match mode {
        TrainMode::Base => {
            let (model, trace) = train(&data, &tcfg, None)?;
            out.add(out_dir.join("model.dom1"), model_bytes(&model, fp));
            out.add_text(out_dir.join("trace.csv"), trace_to_csv(&trace));
            format!(
                "trained base model on {} samples ({} iterations) -> {}",
                data.len(),
                tcfg.iterations,
                out_dir.display()
            )
        }
        TrainMode::Cm => {
            let heldout_dir = heldout.ok_or_else(|| {
                Error::Config("--heldout is required for --mode cm".into())
            })?;
            let held = load_dataset(heldout_dir, n)?;
            let flow = domino_cm_workflow(&data, &held, None, &tcfg)?;
            for w in &flow.warnings {
                eprintln!("warning: {}", w);
            }
            out.add(out_dir.join("base_model.dom1"), model_bytes(&flow.base, fp));
            out.add_text(out_dir.join("trace_base.csv"), trace_to_csv(&flow.base_trace));
            out.add(out_dir.join("model.dom1"), model_bytes(&flow.calibrated, fp));
            out.add_text(out_dir.join("trace.csv"), trace_to_csv(&flow.calibrated_trace));
            out.add_text(out_dir.join("confusion.csv"), confusion_csv(&flow.confusion)?);
            out.add_text(
                out_dir.join("penalty.csv"),
                matrix_to_csv(flow.penalty.matrix()),
            );
            format!(
                "trained base + confusion-calibrated models on {} samples -> {}",
                data.len(),
                out_dir.display()
            )
        }
        TrainMode::Hc => {
            let hierarchy = cfg.hierarchy()?;
            let w = build_hc_penalty(&hierarchy, tcfg.scale, cfg.hierarchy.p_within)?;
            let (model, trace) = train(&data, &tcfg, Some(&w))?;
            out.add(out_dir.join("model.dom1"), model_bytes(&model, fp));
            out.add_text(out_dir.join("trace.csv"), trace_to_csv(&trace));
            out.add_text(out_dir.join("penalty.csv"), matrix_to_csv(w.matrix()));
            format!(
                "trained hierarchy-calibrated model on {} samples -> {}",
                data.len(),
                out_dir.display()
            )
        }
    };
    out.write()?;
    Ok(summary)
}

/// Evaluate a saved model on a dataset; write the metrics report, the
/// per-class CSV table, and reliability curves (CSV + SVG) per
/// granularity.
pub fn cmd_eval(
    cfg: &RunConfig,
    model_path: &Path,
    data_dir: &Path,
    out_dir: &Path,
    merged: bool,
) -> Result<String> {
    let classes = cfg.class_set()?;
    let saved = load_model(model_path)?;
    if saved.model.num_classes() != classes.len() {
        return Err(Error::Config(format!(
            "model predicts {} classes but the configuration defines {}",
            saved.model.num_classes(),
            classes.len()
        )));
    }
    let data = load_dataset(data_dir, classes.len())?;
    let mut warnings = Vec::new();
    if dataset_fingerprint(&data) == saved.train_fingerprint {
        warnings.push(
            "dataset fingerprint matches the model's training set; metrics are optimistic"
                .to_string(),
        );
    }
    let probs = parallel_map(data.len(), |i| predict_prob(&saved.model, &data[i].image))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<LabelMap> = data.iter().map(|s| s.truth.clone()).collect();
    let gm = if merged { Some(cfg.group_map()?) } else { None };
    let report = evaluate(&probs, &truths, &classes, gm.as_ref(), cfg.bins)?;

    let mut out = Outputs::new();
    let mut text = String::new();
    for w in &warnings {
        eprintln!("warning: {}", w);
        text.push_str("warning=");
        text.push_str(w);
        text.push('\n');
    }
    text.push_str(&render_text(&report));
    out.add_text(out_dir.join("report.txt"), text);
    out.add_text(out_dir.join("metrics.csv"), render_metrics_csv(&report));
    for g in report.granularities() {
        for (c, curve) in g.classes.iter().zip(&g.curves) {
            out.add_text(
                out_dir.join(format!("reliability_{}_{}.csv", g.name, file_token(&c.name))),
                reliability_csv(curve),
            );
        }
        out.add_text(
            out_dir.join(format!("reliability_{}.svg", g.name)),
            render_reliability_svg(g),
        );
    }
    out.write()?;
    Ok(format!(
        "evaluated {} samples at {} granularit{} -> {}",
        data.len(),
        if merged { 2 } else { 1 },
        if merged { "ies" } else { "y" },
        out_dir.display()
    ))
}

/// Build a penalty matrix without training: from a confusion-count CSV, or
/// from the configured hierarchy.
pub fn cmd_penalty(
    cfg: &RunConfig,
    mode: PenaltyMode,
    confusion: Option<&Path>,
    out_dir: &Path,
    scale: Option<f64>,
) -> Result<String> {
    let s = scale.unwrap_or(cfg.train.scale);
    let w = match mode {
        PenaltyMode::Cm => {
            let path = confusion.ok_or_else(|| {
                Error::Config("--confusion is required for --mode cm".into())
            })?;
            let c = load_confusion(path)?;
            if c.num_classes() != cfg.classes.len() {
                return Err(Error::Config(format!(
                    "confusion matrix covers {} classes but the configuration defines {}",
                    c.num_classes(),
                    cfg.classes.len()
                )));
            }
            build_cm_penalty(&c, s)?
        }
        PenaltyMode::Hc => {
            build_hc_penalty(&cfg.hierarchy()?, s, cfg.hierarchy.p_within)?
        }
    };
    let mut out = Outputs::new();
    out.add_text(out_dir.join("penalty.csv"), matrix_to_csv(w.matrix()));
    out.write()?;
    Ok(format!(
        "wrote {0}x{0} penalty matrix (scale {1}) to {2}",
        w.num_classes(),
        w.scale(),
        out_dir.join("penalty.csv").display()
    ))
}

fn parse_reliability_csv(path: &Path) -> Result<ReliabilityCurve> {
    let text = std::fs::read_to_string(path)?;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        locus: format!("line {}", line),
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "bin_center,mean_confidence,observed_frequency,count")) => {}
        Some((_, other)) => {
            return Err(perr(1, format!("unexpected header '{}'", other)));
        }
        None => return Err(perr(1, "empty file".into())),
    }
    let mut bins = Vec::new();
    let mut total = 0usize;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(perr(i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let center: f64 = fields[0]
            .parse()
            .map_err(|_| perr(i + 1, "bin_center is not a number".into()))?;
        let mean_confidence: f64 = fields[1]
            .parse()
            .map_err(|_| perr(i + 1, "mean_confidence is not a number".into()))?;
        let observed_frequency: f64 = fields[2]
            .parse()
            .map_err(|_| perr(i + 1, "observed_frequency is not a number".into()))?;
        let count: usize = fields[3]
            .parse()
            .map_err(|_| perr(i + 1, "count is not an integer".into()))?;
        total += count;
        bins.push(ReliabilityBin {
            lo: center,
            hi: center,
            mean_confidence,
            observed_frequency,
            count,
        });
    }
    Ok(ReliabilityCurve { bins, total })
}

/// Re-render reliability CSVs written by a previous `eval` into SVG plots.
/// Only the class names and curve files feed the renderer, so the other
/// report fields stay at their empty defaults.
pub fn cmd_report(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    merged: bool,
) -> Result<String> {
    let mut granularities: Vec<(String, Vec<String>)> =
        vec![("fine".into(), cfg.classes.clone())];
    if merged {
        let gm = cfg.group_map()?;
        granularities.push(("merged".into(), gm.names().to_vec()));
    }
    let mut out = Outputs::new();
    let mut rendered = 0usize;
    for (gran, names) in &granularities {
        let mut classes = Vec::new();
        let mut curves = Vec::new();
        for name in names {
            let path = data_dir.join(format!("reliability_{}_{}.csv", gran, file_token(name)));
            if !path.is_file() {
                continue;
            }
            let curve = parse_reliability_csv(&path)?;
            classes.push(ClassReport {
                name: name.clone(),
                support: 0,
                dice: 0.0,
                hausdorff: None,
                modified_hausdorff: None,
                ece: curve.ece(),
            });
            curves.push(curve);
        }
        if curves.is_empty() {
            return Err(Error::Config(format!(
                "no reliability CSVs for granularity '{}' found in {}",
                gran,
                data_dir.display()
            )));
        }
        let pixels = curves.first().map(|c| c.total).unwrap_or(0);
        let macro_ece =
            classes.iter().map(|c| c.ece).sum::<f64>() / classes.len() as f64;
        let g = GranularityReport {
            name: gran.clone(),
            pixels,
            classes,
            curves,
            top_n: Vec::new(),
            macro_dice: 0.0,
            macro_ece,
        };
        out.add_text(
            out_dir.join(format!("reliability_{}.svg", gran)),
            render_reliability_svg(&g),
        );
        rendered += 1;
    }
    out.write()?;
    Ok(format!(
        "re-rendered {} reliability plot{} -> {}",
        rendered,
        if rendered == 1 { "" } else { "s" },
        out_dir.display()
    ))
}
