//! Synthetic phantom images: nested jittered ellipses rasterized to a truth
//! map, then rendered to an intensity image via per-class means, Gaussian
//! blur (partial-volume mixing at boundaries) and additive Gaussian noise.
//!
//! Generation is a pure function of (config, sample index): each sample
//! draws from its own SplitMix64 stream, so datasets are reproducible and
//! order-independent.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DenseMatrix, LabelMap, MAX_CLASSES};
use crate::io;
use crate::rng::SplitMix64;

/// Center jitter amplitude, as a fraction of the image size.
const CENTER_JITTER: f64 = 0.006;
/// Relative radius jitter amplitude.
const RADIUS_JITTER: f64 = 0.01;

/// An ellipse painted with one class. Coordinates and radii are fractions
/// of the image size; regions are painted in order, later ones on top.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipseRegion {
    pub class: usize,
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl EllipseRegion {
    pub fn new(class: usize, cx: f64, cy: f64, rx: f64, ry: f64) -> Self {
        EllipseRegion { class, cx, cy, rx, ry }
    }
}

/// Configuration of the phantom family.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    /// Image side length in pixels.
    pub size: usize,
    /// Mean intensity per class, in [0, 1]; the length defines the class count.
    pub class_means: Vec<f64>,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Gaussian blur standard deviation in pixels (0 disables blurring).
    pub blur_radius: f64,
    /// Painted back to front; pixels outside every ellipse take the first
    /// region's class.
    pub layout: Vec<EllipseRegion>,
    /// Base seed; combined with the sample index per sample.
    pub seed: u64,
}

impl Default for PhantomConfig {
    /// The 11-class head phantom: concentric rings (air background, then
    /// skin / fat / muscle / cortical bone / cancellous bone / csf / gm /
    /// wm), two eyes up front and two small vessels inside the wm core.
    /// Ring widths and jitter amplitudes are chosen so every class keeps
    /// at least one pixel at size 64.
    fn default() -> Self {
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
        PhantomConfig {
            size: 64,
            // Within-group tissues get nearby means (the two bone
            // compartments differ by 0.05) so the classifier's confusion
            // concentrates inside groups.
            class_means: vec![
                0.40, // muscle
                0.50, // fat
                0.45, // skin
                0.70, // cortical bone
                0.75, // cancellous bone
                0.55, // blood
                0.05, // air
                0.20, // csf
                0.25, // eyes
                0.60, // gm
                0.85, // wm
            ],
            noise_sigma: 0.05,
            blur_radius: 1.0,
            layout: vec![
                EllipseRegion::new(AIR, 0.5, 0.5, 10.0, 10.0),
                EllipseRegion::new(SKIN, 0.5, 0.5, 0.46, 0.44),
                EllipseRegion::new(FAT, 0.5, 0.5, 0.43, 0.41),
                EllipseRegion::new(MUSCLE, 0.5, 0.5, 0.40, 0.38),
                EllipseRegion::new(CORTICAL, 0.5, 0.5, 0.36, 0.34),
                EllipseRegion::new(CANCELLOUS, 0.5, 0.5, 0.33, 0.31),
                EllipseRegion::new(CSF, 0.5, 0.5, 0.29, 0.27),
                EllipseRegion::new(GM, 0.5, 0.5, 0.26, 0.24),
                EllipseRegion::new(WM, 0.5, 0.5, 0.20, 0.18),
                EllipseRegion::new(EYES, 0.36, 0.28, 0.040, 0.040),
                EllipseRegion::new(EYES, 0.64, 0.28, 0.040, 0.040),
                EllipseRegion::new(BLOOD, 0.45, 0.62, 0.025, 0.025),
                EllipseRegion::new(BLOOD, 0.55, 0.62, 0.025, 0.025),
            ],
            seed: 7,
        }
    }
}

impl PhantomConfig {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::Config(format!(
                "phantom size must be at least 16, got {}",
                self.size
            )));
        }
        let n = self.num_classes();
        if !(2..=MAX_CLASSES).contains(&n) {
            return Err(Error::Config(format!(
                "phantom needs 2..={} classes, got {}",
                MAX_CLASSES, n
            )));
        }
        for (i, &m) in self.class_means.iter().enumerate() {
            if !m.is_finite() || !(0.0..=1.0).contains(&m) {
                return Err(Error::Config(format!(
                    "class mean {} for class {} outside [0, 1]",
                    m, i
                )));
            }
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !self.blur_radius.is_finite() || self.blur_radius < 0.0 {
            return Err(Error::Config(format!(
                "blur radius must be >= 0, got {}",
                self.blur_radius
            )));
        }
        if self.layout.is_empty() {
            return Err(Error::Config("phantom layout is empty".into()));
        }
        for (i, region) in self.layout.iter().enumerate() {
            if region.class >= n {
                return Err(Error::Config(format!(
                    "layout region {} references class {} but there are {} classes",
                    i, region.class, n
                )));
            }
            let radii_ok = region.rx.is_finite()
                && region.ry.is_finite()
                && region.rx > 0.0
                && region.ry > 0.0;
            if !radii_ok {
                return Err(Error::Config(format!(
                    "layout region {} needs positive finite radii",
                    i
                )));
            }
        }
        Ok(())
    }
}

/// One generated sample: intensity image (rows = y) and its truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub image: DenseMatrix,
    pub truth: LabelMap,
}

/// Generate sample `index` of the family described by `cfg`.
pub fn generate(cfg: &PhantomConfig, index: u64) -> Result<PhantomSample> {
    cfg.validate()?;
    let size = cfg.size;
    let mut rng = SplitMix64::for_index(cfg.seed, index);

    // Jitter every region (fixed draw order: cx, cy, rx, ry per region).
    let regions: Vec<EllipseRegion> = cfg
        .layout
        .iter()
        .map(|r| EllipseRegion {
            class: r.class,
            cx: r.cx + rng.uniform_in(-CENTER_JITTER, CENTER_JITTER),
            cy: r.cy + rng.uniform_in(-CENTER_JITTER, CENTER_JITTER),
            rx: r.rx * (1.0 + rng.uniform_in(-RADIUS_JITTER, RADIUS_JITTER)),
            ry: r.ry * (1.0 + rng.uniform_in(-RADIUS_JITTER, RADIUS_JITTER)),
        })
        .collect();

    // Rasterize: painter's order, pixel centers, uncovered pixels take the
    // first region's class.
    let mut labels = vec![regions[0].class as u8; size * size];
    let scale = size as f64;
    for region in &regions {
        let (cx, cy) = (region.cx * scale, region.cy * scale);
        let (rx, ry) = (region.rx * scale, region.ry * scale);
        for y in 0..size {
            let py = y as f64 + 0.5;
            let dy = (py - cy) / ry;
            for x in 0..size {
                let px = x as f64 + 0.5;
                let dx = (px - cx) / rx;
                if dx * dx + dy * dy <= 1.0 {
                    labels[y * size + x] = region.class as u8;
                }
            }
        }
    }
    let truth = LabelMap::new(size, size, cfg.num_classes(), labels)?;

    // Intensity: class means, then blur, then noise, clamped to [0, 1].
    let mut img: Vec<f64> = truth
        .data()
        .iter()
        .map(|&c| cfg.class_means[c as usize])
        .collect();
    if cfg.blur_radius > 0.0 {
        img = gaussian_blur(&img, size, cfg.blur_radius);
    }
    if cfg.noise_sigma > 0.0 {
        for v in img.iter_mut() {
            *v += cfg.noise_sigma * rng.normal();
        }
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(PhantomSample {
        image: DenseMatrix::new(size, size, img)?,
        truth,
    })
}

/// Separable Gaussian blur with edge clamping; kernel truncated at 3 sigma.
fn gaussian_blur(img: &[f64], size: usize, sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * half as usize + 1);
    let mut sum = 0.0;
    for d in -half..=half {
        let w = (-(d * d) as f64 / (2.0 * sigma * sigma)).exp();
        kernel.push(w);
        sum += w;
    }
    for w in kernel.iter_mut() {
        *w /= sum;
    }
    let clamp = |v: isize| v.clamp(0, size as isize - 1) as usize;
    let mut horiz = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (ki, d) in (-half..=half).enumerate() {
                acc += kernel[ki] * img[y * size + clamp(x as isize + d)];
            }
            horiz[y * size + x] = acc;
        }
    }
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (ki, d) in (-half..=half).enumerate() {
                acc += kernel[ki] * horiz[clamp(y as isize + d) * size + x];
            }
            out[y * size + x] = acc;
        }
    }
    out
}

/// FNV-1a 64 over the raw bytes of every sample, in order. Ties a trained
/// model to the exact dataset it saw.
pub fn dataset_fingerprint(samples: &[PhantomSample]) -> u64 {
    const OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for s in samples {
        eat(&(s.image.rows() as u64).to_le_bytes());
        eat(&(s.image.cols() as u64).to_le_bytes());
        for v in s.image.data() {
            eat(&v.to_le_bytes());
        }
        eat(&(s.truth.num_classes() as u64).to_le_bytes());
        eat(s.truth.data());
    }
    h
}

/// Write samples to a directory: `manifest.txt` plus one image and one
/// truth tensor per sample.
pub fn save_dataset(dir: &Path, samples: &[PhantomSample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let image_name = format!("sample-{:04}-image.dom1", i);
        let truth_name = format!("sample-{:04}-truth.dom1", i);
        io::save_matrix(&dir.join(&image_name), &s.image)?;
        io::save_label_map(&dir.join(&truth_name), &s.truth)?;
        let _ = writeln!(manifest, "{:04} {} {}", i, image_name, truth_name);
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Load a dataset directory written by [`save_dataset`]. The caller names
/// the class count (the on-disk truth stores bare indices).
pub fn load_dataset(dir: &Path, num_classes: usize) -> Result<Vec<PhantomSample>> {
    let manifest_path = dir.join("manifest.txt");
    let manifest = std::fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Dataset(format!("cannot read {}: {}", manifest_path.display(), e))
    })?;
    let mut samples = Vec::new();
    for (lineno, raw) in manifest.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_ascii_whitespace();
        let (id, image_name, truth_name) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Parse {
                    path: manifest_path.clone(),
                    locus: format!("line {}", lineno + 1),
                    message: "expected '<id> <image-file> <truth-file>'".into(),
                })
            }
        };
        let image_path = dir.join(image_name);
        if !image_path.is_file() {
            return Err(Error::Dataset(format!(
                "sample {}: missing image file {}",
                id,
                image_path.display()
            )));
        }
        let truth_path = dir.join(truth_name);
        if !truth_path.is_file() {
            return Err(Error::Dataset(format!(
                "sample {}: missing truth file {}",
                id,
                truth_path.display()
            )));
        }
        let image = io::load_matrix(&image_path)?;
        let truth = io::load_label_map(&truth_path, num_classes)?;
        if image.rows() != truth.height() || image.cols() != truth.width() {
            return Err(Error::Dataset(format!(
                "sample {}: image is {}x{} but truth is {}x{}",
                id,
                image.cols(),
                image.rows(),
                truth.width(),
                truth.height()
            )));
        }
        if let Some(bad) = image.data().iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Dataset(format!(
                "sample {}: image intensity {} outside [0, 1]",
                id, bad
            )));
        }
        samples.push(PhantomSample { image, truth });
    }
    Ok(samples)
}
