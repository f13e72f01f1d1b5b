//! Evaluation report structures and their renderings: structured text,
//! CSV tables, and a self-contained reliability-diagram SVG.

use std::fmt::Write as _;

/// One confidence bin of a reliability curve. `mean_confidence` and
/// `observed_frequency` are only meaningful when `count > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_confidence: f64,
    pub observed_frequency: f64,
    pub count: usize,
}

impl ReliabilityBin {
    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Reliability curve for one class: equal-width confidence bins over [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityCurve {
    pub bins: Vec<ReliabilityBin>,
    /// Total pixels binned; equals the sum of all bin counts.
    pub total: usize,
}

impl ReliabilityCurve {
    /// Expected calibration error: the count-weighted mean absolute gap
    /// between confidence and observed frequency.
    pub fn ece(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| {
                (b.count as f64 / self.total as f64)
                    * (b.observed_frequency - b.mean_confidence).abs()
            })
            .sum()
    }
}

/// Per-class metrics over an evaluation set. Hausdorff distances are `None`
/// when undefined on every sample (a side with no pixels of the class).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub name: String,
    /// True pixels of this class pooled over the set.
    pub support: usize,
    pub dice: f64,
    pub hausdorff: Option<f64>,
    pub modified_hausdorff: Option<f64>,
    pub ece: f64,
}

/// Metrics at one label granularity (original classes, or merged groups).
#[derive(Debug, Clone, PartialEq)]
pub struct GranularityReport {
    pub name: String,
    pub pixels: usize,
    pub classes: Vec<ClassReport>,
    /// Reliability curves parallel to `classes`.
    pub curves: Vec<ReliabilityCurve>,
    /// `top_n[i]` is the top-(i+1) accuracy; up to three entries.
    pub top_n: Vec<f64>,
    pub macro_dice: f64,
    pub macro_ece: f64,
}

/// Full evaluation: the original classes plus, optionally, merged groups.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub fine: GranularityReport,
    pub merged: Option<GranularityReport>,
}

impl MetricsReport {
    pub fn granularities(&self) -> Vec<&GranularityReport> {
        let mut v = vec![&self.fine];
        if let Some(m) = &self.merged {
            v.push(m);
        }
        v
    }
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{}", x),
        None => "undefined".into(),
    }
}

/// Render the full report as structured `key=value` text, one record per
/// line. Every value uses the shortest exact decimal form.
pub fn render_text(r: &MetricsReport) -> String {
    let mut out = String::new();
    for g in r.granularities() {
        let _ = writeln!(out, "[granularity {}]", g.name);
        let _ = writeln!(out, "classes={}", g.classes.len());
        let _ = writeln!(out, "pixels={}", g.pixels);
        for (i, acc) in g.top_n.iter().enumerate() {
            let _ = writeln!(out, "top_{}={}", i + 1, acc);
        }
        let _ = writeln!(out, "macro_dice={}", g.macro_dice);
        let _ = writeln!(out, "macro_ece={}", g.macro_ece);
        for c in &g.classes {
            let _ = writeln!(
                out,
                "class={} support={} dice={} hausdorff={} modified_hausdorff={} ece={}",
                c.name,
                c.support,
                c.dice,
                opt(c.hausdorff),
                opt(c.modified_hausdorff),
                c.ece
            );
        }
        out.push('\n');
    }
    out
}

/// Per-class metrics as one CSV table; undefined distances are empty cells.
pub fn render_metrics_csv(r: &MetricsReport) -> String {
    let mut out =
        String::from("granularity,class,support,dice,hausdorff,modified_hausdorff,ece\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{}", x)).unwrap_or_default();
    for g in r.granularities() {
        for c in &g.classes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                g.name,
                c.name,
                c.support,
                c.dice,
                cell(c.hausdorff),
                cell(c.modified_hausdorff),
                c.ece
            );
        }
    }
    out
}

/// One reliability curve as CSV, occupied bins only.
pub fn reliability_csv(curve: &ReliabilityCurve) -> String {
    let mut out = String::from("bin_center,mean_confidence,observed_frequency,count\n");
    for b in curve.bins.iter().filter(|b| b.count > 0) {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            b.center(),
            b.mean_confidence,
            b.observed_frequency,
            b.count
        );
    }
    out
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Distinguishable line colors; cycles past eleven classes.
const PALETTE: [&str; 11] = [
    "#4363d8", "#e6194b", "#3cb44b", "#b8a000", "#911eb4", "#f58231", "#0fb0b0", "#f032e6",
    "#7a9e00", "#008080", "#9a6324",
];

/// Render all reliability curves of one granularity as a self-contained
/// SVG: identity diagonal, one polyline per class over its occupied bins,
/// and a legend.
pub fn render_reliability_svg(g: &GranularityReport) -> String {
    const W: f64 = 660.0;
    const H: f64 = 460.0;
    const X0: f64 = 70.0;
    const X1: f64 = 450.0;
    const Y0: f64 = 410.0; // value 0 (bottom)
    const Y1: f64 = 30.0; // value 1 (top)
    let px = |v: f64| X0 + v * (X1 - X0);
    let py = |v: f64| Y0 + v * (Y1 - Y0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" width=\"{}\" height=\"{}\">",
        W, H, W, H
    );
    let _ = writeln!(s, "<rect width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>", W, H);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">reliability ({})</text>",
        (X0 + X1) / 2.0,
        xml_escape(&g.name)
    );
    // Axes and ticks.
    let _ = writeln!(
        s,
        "<line x1=\"{X0}\" y1=\"{Y0}\" x2=\"{X1}\" y2=\"{Y0}\" stroke=\"#000\"/>"
    );
    let _ = writeln!(
        s,
        "<line x1=\"{X0}\" y1=\"{Y0}\" x2=\"{X0}\" y2=\"{Y1}\" stroke=\"#000\"/>"
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{Y0}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#000\"/>",
            px(v),
            px(v),
            Y0 + 5.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            px(v),
            Y0 + 18.0,
            v
        );
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{X0}\" y2=\"{:.1}\" stroke=\"#000\"/>",
            X0 - 5.0,
            py(v),
            py(v)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            X0 - 8.0,
            py(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">mean predicted probability</text>",
        (X0 + X1) / 2.0,
        Y0 + 36.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">observed frequency</text>",
        (Y0 + Y1) / 2.0,
        (Y0 + Y1) / 2.0
    );
    // Identity diagonal.
    let _ = writeln!(
        s,
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#888\" stroke-dasharray=\"5,4\"/>",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    // One curve per class, occupied bins only.
    for (i, (c, curve)) in g.classes.iter().zip(&g.curves).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = curve
            .bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| (px(b.mean_confidence), py(b.observed_frequency)))
            .collect();
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", x, y)).collect();
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
                path.join(" "),
                color
            );
        }
        for (x, y) in &pts {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>",
                x, y, color
            );
        }
        // Legend row.
        let ly = 40.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"470\" y1=\"{:.1}\" x2=\"494\" y2=\"{:.1}\" stroke=\"{}\" stroke-width=\"2\"/>",
            ly - 4.0,
            ly - 4.0,
            color
        );
        let _ = writeln!(
            s,
            "<text x=\"500\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            ly,
            xml_escape(&c.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
