//! Acceptance battery for the calibration-regularization stack.
//!
//! Each test checks one release criterion end to end and prints a single
//! `acceptance N: PASS` line with the measured numbers. Criteria with a
//! runtime budget assert it. The heavyweight phantom study behind criteria
//! 5 and 6 runs once and is shared.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use domino_core::*;

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

/// Floor for relative-error denominators: gradient components this small are
/// dominated by cancellation noise in the finite difference itself.
const GRAD_FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(GRAD_FLOOR)
}

fn random_penalty(rng: &mut SplitMix64, n: usize, scale: f64) -> PenaltyMatrix {
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w.set(i, j, rng.uniform_in(0.0, scale));
            }
        }
    }
    PenaltyMatrix::from_matrix(w).unwrap()
}

fn random_labels(rng: &mut SplitMix64, w: usize, h: usize, n: usize) -> LabelMap {
    let data: Vec<u8> = (0..w * h).map(|_| (rng.next_u64() as usize % n) as u8).collect();
    LabelMap::new(w, h, n, data).unwrap()
}

fn random_probs(rng: &mut SplitMix64, w: usize, h: usize, n: usize) -> ProbMap {
    let mut data = Vec::with_capacity(w * h * n);
    for _ in 0..w * h {
        let raw: Vec<f64> = (0..n).map(|_| rng.uniform_open()).collect();
        let total: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / total));
    }
    ProbMap::new(w, h, n, data).unwrap()
}

// ---------------------------------------------------------------------------
// 1. gradient correctness against central finite differences
// ---------------------------------------------------------------------------

#[test]
fn acceptance_1_gradient_correctness() {
    let started = Instant::now();
    let step = 1e-5;
    let mut rng = SplitMix64::new(0xACCE_0001);
    let mut instances = 0usize;
    let mut worst_logit = 0.0f64;
    let mut worst_param = 0.0f64;

    for idx in 0..27u64 {
        let n = [3usize, 4, 11][(idx % 3) as usize];
        let beta = [0.0, 0.3, 1.0][((idx / 3) % 3) as usize];
        let w = 3 + (rng.next_u64() % 6) as usize; // 3..=8
        let h = 3 + (rng.next_u64() % 6) as usize;
        let penalty = random_penalty(&mut rng, n, 3.0);
        let cfg = LossConfig { beta, ..LossConfig::default() };
        let truth = random_labels(&mut rng, w, h, n);

        // Logit gradients.
        let mut zdata: Vec<f64> = (0..w * h * n).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let z = LogitMap::new(w, h, n, zdata.clone()).unwrap();
        let (_, grad) = total_loss_and_grad(&z, &truth, Some(&penalty), &cfg).unwrap();
        for i in 0..zdata.len() {
            let orig = zdata[i];
            zdata[i] = orig + step;
            let up = total_loss(
                &LogitMap::new(w, h, n, zdata.clone()).unwrap(),
                &truth,
                Some(&penalty),
                &cfg,
            )
            .unwrap();
            zdata[i] = orig - step;
            let down = total_loss(
                &LogitMap::new(w, h, n, zdata.clone()).unwrap(),
                &truth,
                Some(&penalty),
                &cfg,
            )
            .unwrap();
            zdata[i] = orig;
            let fd = (up - down) / (2.0 * step);
            let err = rel_err(grad.data()[i], fd);
            assert!(
                err < 1e-4,
                "logit grad {} off by {} (instance {}, N={}, beta={})",
                i,
                err,
                idx,
                n,
                beta
            );
            worst_logit = worst_logit.max(err);
        }

        // Parameter gradients through the classifier.
        let radius = (idx % 2) as usize;
        let hidden = [2usize, 4][((idx / 2) % 2) as usize];
        let model = PatchClassifier::init(radius, hidden, n, 5000 + idx).unwrap();
        let image = DenseMatrix::new(
            h,
            w,
            (0..w * h).map(|_| rng.uniform()).collect(),
        )
        .unwrap();
        let (_, grads) = model.backward(&image, &truth, Some(&penalty), &cfg).unwrap();
        let analytic: Vec<f64> = grads
            .w1
            .iter()
            .chain(&grads.b1)
            .chain(&grads.w2)
            .chain(&grads.b2)
            .copied()
            .collect();
        let mut params = model.params_vec();
        assert_eq!(analytic.len(), params.len());
        let loss_at = |flat: &[f64]| -> f64 {
            let mut probe = model.clone();
            probe.set_params_vec(flat).unwrap();
            let logits = probe.forward(&image).unwrap();
            total_loss(&logits, &truth, Some(&penalty), &cfg).unwrap()
        };
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + step;
            let up = loss_at(&params);
            params[i] = orig - step;
            let down = loss_at(&params);
            params[i] = orig;
            let fd = (up - down) / (2.0 * step);
            let err = rel_err(analytic[i], fd);
            assert!(
                err < 1e-4,
                "param grad {} off by {} (instance {}, N={}, beta={})",
                i,
                err,
                idx,
                n,
                beta
            );
            worst_param = worst_param.max(err);
        }
        instances += 1;
    }

    let secs = started.elapsed().as_secs_f64();
    assert!(instances >= 20);
    assert!(secs < 30.0, "gradient check took {:.1} s (budget 30 s)", secs);
    println!(
        "acceptance 1: PASS — {} instances, max rel err logits {:.2e}, params {:.2e}, {:.1} s",
        instances, worst_logit, worst_param, secs
    );
}

// ---------------------------------------------------------------------------
// 2. penalty-matrix invariants
// ---------------------------------------------------------------------------

#[test]
fn acceptance_2_penalty_invariants() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0xACCE_0002);

    // Random confusion matrices.
    for case in 0..100 {
        let n = 2 + (rng.next_u64() % 11) as usize; // 2..=12
        let scale = [1.0, 3.0, 7.5][case % 3];
        let mut counts = vec![0u64; n * n];
        for i in 0..n {
            if rng.uniform() < 0.2 {
                continue; // leave an all-zero row
            }
            for j in 0..n {
                counts[i * n + j] = rng.next_u64() % 50;
            }
        }
        let confusion = ConfusionMatrix::from_counts(n, counts.clone()).unwrap();
        let w = build_cm_penalty(&confusion, scale).unwrap();
        for i in 0..n {
            assert_eq!(w.get(i, i), 0.0, "diagonal must be exactly zero");
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = w.get(i, j);
                assert!(
                    (0.0..=scale).contains(&v),
                    "off-diagonal {} outside [0, {}]",
                    v,
                    scale
                );
                // More-frequent confusions never cost more than rarer ones.
                for j2 in 0..n {
                    if j2 == i || j2 == j {
                        continue;
                    }
                    if counts[i * n + j] >= counts[i * n + j2] {
                        assert!(
                            w.get(i, j) <= w.get(i, j2),
                            "penalty not monotone in confusion at row {}",
                            i
                        );
                    }
                }
            }
        }
    }

    // Random hierarchies.
    for case in 0..20u64 {
        let n = 2 + (rng.next_u64() % 11) as usize;
        let num_groups = 1 + (rng.next_u64() as usize % n);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_groups];
        for class in 0..n {
            members[rng.next_u64() as usize % num_groups].push(class);
        }
        if rng.uniform() < 0.3 {
            // occasional overlap: one class sits in two groups
            members[rng.next_u64() as usize % num_groups]
                .push(rng.next_u64() as usize % n);
        }
        let groups: Vec<(String, Vec<usize>)> = members
            .into_iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(gi, mut m)| {
                m.sort_unstable();
                m.dedup();
                (format!("group_{}_{}", case, gi), m)
            })
            .collect();
        let spec = HierarchySpec::new(n, groups).unwrap();
        let w = build_hc_penalty(&spec, 3.0, 1.0).unwrap();
        for i in 0..n {
            assert_eq!(w.get(i, i), 0.0);
            for j in 0..n {
                let v = w.get(i, j);
                assert!((0.0..=3.0).contains(&v));
                assert_eq!(v, w.get(j, i), "hierarchy penalty must be symmetric");
            }
        }
    }

    // A confusion matrix that never confuses and a hierarchy that never
    // groups must agree: every mistake costs the full scale.
    for n in [2usize, 5, 11] {
        for s in [3.0, 7.5] {
            let mut counts = vec![0u64; n * n];
            for i in 0..n {
                counts[i * n + i] = 1;
            }
            let from_confusion =
                build_cm_penalty(&ConfusionMatrix::from_counts(n, counts).unwrap(), s).unwrap();
            let singletons: Vec<(String, Vec<usize>)> =
                (0..n).map(|i| (format!("solo_{}", i), vec![i])).collect();
            let from_hierarchy =
                build_hc_penalty(&HierarchySpec::new(n, singletons).unwrap(), s, 1.0).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(
                        from_confusion.get(i, j),
                        from_hierarchy.get(i, j),
                        "identity confusion and singleton hierarchy disagree at ({}, {})",
                        i,
                        j
                    );
                }
            }
        }
    }

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 5.0, "penalty invariants took {:.1} s (budget 5 s)", secs);
    println!(
        "acceptance 2: PASS — 100 confusion matrices, 20 hierarchies, 6 coincidence cases, {:.2} s",
        secs
    );
}

// ---------------------------------------------------------------------------
// 3. Hausdorff distance equals a brute-force oracle
// ---------------------------------------------------------------------------

/// Independent oracle: square root taken per point pair, max/min over the
/// already-rooted distances.
fn oracle_directed(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    from.iter()
        .map(|&(ax, ay)| {
            to.iter()
                .map(|&(bx, by)| {
                    let dx = ax as f64 - bx as f64;
                    let dy = ay as f64 - by as f64;
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[test]
fn acceptance_3_hausdorff_oracle() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0xACCE_0003);
    for pair in 0..200 {
        let mut sets = Vec::new();
        for _ in 0..2 {
            let len = 1 + (rng.next_u64() % 30) as usize;
            let pts: Vec<(usize, usize)> = (0..len)
                .map(|_| {
                    (
                        (rng.next_u64() % 40) as usize,
                        (rng.next_u64() % 40) as usize,
                    )
                })
                .collect();
            sets.push(pts);
        }
        let (a, b) = (&sets[0], &sets[1]);
        let got = hausdorff(a, b).unwrap();
        let expected = oracle_directed(a, b).max(oracle_directed(b, a));
        assert_eq!(
            got.to_bits(),
            expected.to_bits(),
            "pair {}: hausdorff {} != oracle {}",
            pair,
            got,
            expected
        );
        let modified = modified_hausdorff(a, b).unwrap();
        assert!(
            modified <= got + 1e-9 * got.max(1.0),
            "pair {}: modified {} exceeds standard {}",
            pair,
            modified,
            got
        );
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 10.0, "hausdorff oracle took {:.1} s (budget 10 s)", secs);
    println!("acceptance 3: PASS — 200 pairs bit-identical to the oracle, {:.2} s", secs);
}

// ---------------------------------------------------------------------------
// 4. metric identities
// ---------------------------------------------------------------------------

#[test]
fn acceptance_4_metric_identities() {
    let mut rng = SplitMix64::new(0xACCE_0004);
    let n = 11;
    let (w, h) = (16, 16);
    let gm = GroupMap::head6();

    // Perfect one-hot predictions: every headline metric is exact.
    let truth = random_labels(&mut rng, w, h, n);
    let mut onehot = vec![0.0; w * h * n];
    for (p, &label) in truth.data().iter().enumerate() {
        onehot[p * n + label as usize] = 1.0;
    }
    let probs = ProbMap::new(w, h, n, onehot).unwrap();
    let report = evaluate(
        std::slice::from_ref(&probs),
        std::slice::from_ref(&truth),
        &ClassSet::head11(),
        Some(&gm),
        10,
    )
    .unwrap();
    for g in report.granularities() {
        for acc in &g.top_n {
            assert_eq!(*acc, 1.0, "perfect prediction must have Top-N 1");
        }
        assert_eq!(g.macro_ece, 0.0, "perfect prediction must have ECE 0");
        for c in &g.classes {
            assert_eq!(c.dice, 1.0, "perfect prediction must have Dice 1");
            assert_eq!(c.ece, 0.0);
            if c.support > 0 {
                assert_eq!(c.hausdorff, Some(0.0));
                assert_eq!(c.modified_hausdorff, Some(0.0));
            }
        }
    }

    // Top-N accuracy is monotone in N and saturates at 1.
    let probs = random_probs(&mut rng, w, h, n);
    let mut last = 0.0;
    for k in 1..=n {
        let acc = top_n_accuracy(std::slice::from_ref(&probs), std::slice::from_ref(&truth), k).unwrap();
        assert!(acc >= last, "top-{} {} below top-{} {}", k, acc, k - 1, last);
        last = acc;
    }
    assert_eq!(last, 1.0, "top-N at N must be exact");

    // Merging conserves probability mass per pixel and per group.
    let merged = gm.merge_prob(&probs).unwrap();
    for p in 0..w * h {
        let fine: &[f64] = &probs.data()[p * n..(p + 1) * n];
        let coarse: &[f64] = &merged.data()[p * gm.num_coarse()..(p + 1) * gm.num_coarse()];
        let fine_sum: f64 = fine.iter().sum();
        let coarse_sum: f64 = coarse.iter().sum();
        assert!(
            (fine_sum - coarse_sum).abs() < 1e-12,
            "pixel {} lost probability mass in merging",
            p
        );
        for (group, &got) in coarse.iter().enumerate() {
            let want: f64 = (0..n).filter(|&c| gm.coarse_of(c) == group).map(|c| fine[c]).sum();
            assert!(
                (got - want).abs() < 1e-12,
                "pixel {} group {} mass mismatch",
                p,
                group
            );
        }
    }

    println!("acceptance 4: PASS — exact identities, Top-N monotone, merge mass conserved < 1e-12");
}

// ---------------------------------------------------------------------------
// shared phantom study for criteria 5 and 6
// ---------------------------------------------------------------------------

struct StudyRun {
    test_set: Vec<PhantomSample>,
    models: Vec<(&'static str, PatchClassifier)>,
    /// Fine-granularity reports parallel to `models`.
    reports: Vec<MetricsReport>,
}

struct Study {
    runs: Vec<StudyRun>,
    seconds: f64,
}

/// Mean per-class ECE over classes that appear in the truth, plus Top-1.
fn summary(report: &MetricsReport) -> (f64, f64) {
    let supported: Vec<&ClassReport> =
        report.fine.classes.iter().filter(|c| c.support > 0).collect();
    assert!(!supported.is_empty());
    let ece = supported.iter().map(|c| c.ece).sum::<f64>() / supported.len() as f64;
    (ece, report.fine.top_n[0])
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let started = Instant::now();
        let mut runs = Vec::new();
        for run in 0..5u64 {
            let phantom_cfg = PhantomConfig { seed: 100 + run, ..PhantomConfig::default() };
            let train_set: Vec<PhantomSample> =
                (0..20).map(|i| generate(&phantom_cfg, i).unwrap()).collect();
            let heldout: Vec<PhantomSample> =
                (20..25).map(|i| generate(&phantom_cfg, i).unwrap()).collect();
            let test_set: Vec<PhantomSample> =
                (25..30).map(|i| generate(&phantom_cfg, i).unwrap()).collect();
            let train_cfg = TrainConfig { seed: 9000 + run, ..TrainConfig::default() };

            let flow =
                domino_cm_workflow(&train_set, &heldout, Some(&test_set), &train_cfg).unwrap();
            assert!(flow.warnings.is_empty(), "disjoint splits must not warn");

            let hierarchy_penalty =
                build_hc_penalty(&HierarchySpec::head11(), train_cfg.scale, 1.0).unwrap();
            let (hc_model, _) = train(&train_set, &train_cfg, Some(&hierarchy_penalty)).unwrap();
            let truths: Vec<LabelMap> = test_set.iter().map(|s| s.truth.clone()).collect();
            let hc_probs: Vec<ProbMap> = test_set
                .iter()
                .map(|s| predict_prob(&hc_model, &s.image).unwrap())
                .collect();
            let hc_report =
                evaluate(&hc_probs, &truths, &ClassSet::head11(), None, 10).unwrap();

            runs.push(StudyRun {
                test_set,
                models: vec![
                    ("base", flow.base),
                    ("cm", flow.calibrated),
                    ("hc", hc_model),
                ],
                reports: vec![
                    flow.base_report.unwrap(),
                    flow.calibrated_report.unwrap(),
                    hc_report,
                ],
            });
        }
        Study { runs, seconds: started.elapsed().as_secs_f64() }
    })
}

// ---------------------------------------------------------------------------
// 5. directional calibration claim
// ---------------------------------------------------------------------------

#[test]
fn acceptance_5_directional_calibration() {
    let study = study();
    let mut means = [[0.0f64; 2]; 3]; // [base, cm, hc] x [ece, top1]
    for run in &study.runs {
        for (slot, report) in run.reports.iter().enumerate() {
            let (ece, top1) = summary(report);
            means[slot][0] += ece / study.runs.len() as f64;
            means[slot][1] += top1 / study.runs.len() as f64;
        }
    }
    let [[base_ece, base_top1], [cm_ece, cm_top1], [hc_ece, hc_top1]] = means;

    assert!(
        cm_ece <= base_ece,
        "confusion-regularized ECE {:.4} exceeds base {:.4}",
        cm_ece,
        base_ece
    );
    assert!(
        hc_ece <= base_ece,
        "hierarchy-regularized ECE {:.4} exceeds base {:.4}",
        hc_ece,
        base_ece
    );
    assert!(
        cm_top1 >= base_top1 - 0.02,
        "confusion-regularized Top-1 {:.4} more than 0.02 below base {:.4}",
        cm_top1,
        base_top1
    );
    assert!(
        hc_top1 >= base_top1 - 0.02,
        "hierarchy-regularized Top-1 {:.4} more than 0.02 below base {:.4}",
        hc_top1,
        base_top1
    );
    assert!(
        study.seconds < 600.0,
        "study took {:.0} s (budget 600 s)",
        study.seconds
    );
    println!(
        "acceptance 5: PASS — mean ECE base {:.4} / cm {:.4} / hc {:.4}, mean Top-1 base {:.4} / cm {:.4} / hc {:.4}, study {:.0} s",
        base_ece, cm_ece, hc_ece, base_top1, cm_top1, hc_top1, study.seconds
    );
}

// ---------------------------------------------------------------------------
// 6. merged evaluation without retraining
// ---------------------------------------------------------------------------

#[test]
fn acceptance_6_merged_evaluation() {
    let study = study();
    let gm = GroupMap::head6();
    let mut checked = 0usize;
    for (run_idx, run) in study.runs.iter().enumerate() {
        let truths: Vec<LabelMap> = run.test_set.iter().map(|s| s.truth.clone()).collect();
        for (name, model) in &run.models {
            let probs: Vec<ProbMap> = run
                .test_set
                .iter()
                .map(|s| predict_prob(model, &s.image).unwrap())
                .collect();
            let report =
                evaluate(&probs, &truths, &ClassSet::head11(), Some(&gm), 10).unwrap();
            let merged = report.merged.as_ref().expect("merged report requested");
            assert_eq!(merged.classes.len(), 6);
            assert_eq!(merged.pixels, report.fine.pixels);
            for (c, want) in merged.classes.iter().zip(gm.names()) {
                assert_eq!(&c.name, want);
                assert!((0.0..=1.0).contains(&c.dice));
            }
            assert!(
                merged.top_n[0] >= report.fine.top_n[0],
                "run {} model {}: merged Top-1 {} below fine Top-1 {}",
                run_idx,
                name,
                merged.top_n[0],
                report.fine.top_n[0]
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 15);
    println!(
        "acceptance 6: PASS — 15 models produce valid 6-class reports with merged Top-1 >= fine Top-1"
    );
}

// ---------------------------------------------------------------------------
// 7. byte-identical pipeline reruns
// ---------------------------------------------------------------------------

fn run_ok(config: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_domino"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs");
    assert_eq!(
        out.status.code(),
        Some(0),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn acceptance_7_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(
        &config,
        r#"{
          "phantom": {"size": 32},
          "train": {"iterations": 120, "eval_interval": 30}
        }"#,
    )
    .unwrap();
    let pipeline = |root: &Path| {
        let data = root.join("data");
        let held = root.join("held");
        let model = root.join("model");
        let eval = root.join("eval");
        run_ok(&config, &["phantom", "--count", "3", "--out", data.to_str().unwrap()]);
        run_ok(
            &config,
            &[
                "phantom",
                "--count",
                "2",
                "--seed",
                "77",
                "--out",
                held.to_str().unwrap(),
            ],
        );
        run_ok(
            &config,
            &[
                "train",
                "--mode",
                "cm",
                "--data",
                data.to_str().unwrap(),
                "--heldout",
                held.to_str().unwrap(),
                "--out",
                model.to_str().unwrap(),
            ],
        );
        run_ok(
            &config,
            &[
                "eval",
                "--model",
                model.join("model.dom1").to_str().unwrap(),
                "--data",
                held.to_str().unwrap(),
                "--out",
                eval.to_str().unwrap(),
                "--merged",
            ],
        );
        tree_bytes(root)
    };
    let first = pipeline(&tmp.path().join("first"));
    let second = pipeline(&tmp.path().join("second"));
    assert_eq!(first.len(), second.len());
    let mut compared = 0usize;
    for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "artifact {} differs between reruns", name_a);
        compared += 1;
    }
    println!(
        "acceptance 7: PASS — phantom+train+eval reruns byte-identical across {} artifacts",
        compared
    );
}

// ---------------------------------------------------------------------------
// 8. default-value anchors and the shipped config fixture
// ---------------------------------------------------------------------------

#[test]
fn acceptance_8_default_anchors() {
    // Penalty scale defaults to 3 and the regularizer weight is confined to
    // [0, 1].
    assert_eq!(TrainConfig::default().scale, 3.0);
    assert_eq!(LossConfig::default().beta, 0.5);
    assert!(LossConfig { beta: 1.5, ..LossConfig::default() }.validate().is_err());
    assert!(LossConfig { beta: -0.1, ..LossConfig::default() }.validate().is_err());
    assert!(LossConfig { beta: 0.0, ..LossConfig::default() }.validate().is_ok());
    assert!(LossConfig { beta: 1.0, ..LossConfig::default() }.validate().is_ok());

    // The hierarchy penalty tops out at exactly 3 on the default taxonomy.
    let w = build_hc_penalty(&HierarchySpec::head11(), 3.0, 1.0).unwrap();
    let mut max_off = 0.0f64;
    for i in 0..11 {
        for j in 0..11 {
            if i != j {
                max_off = max_off.max(w.get(i, j));
            }
        }
    }
    assert_eq!(max_off, 3.0);

    // Default fine classes and their coarse grouping.
    let classes = ClassSet::head11();
    assert_eq!(
        classes.names(),
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
            "wm"
        ]
    );
    let gm = GroupMap::head6();
    assert_eq!(gm.names(), ["wm", "gm", "csf", "bone", "soft_tissue", "air"]);
    let assignment: Vec<usize> = (0..11).map(|c| gm.coarse_of(c)).collect();
    assert_eq!(assignment, [4, 4, 4, 3, 3, 4, 5, 2, 4, 1, 0]);

    // The shipped config fixture spells out exactly the built-in defaults:
    // every command must behave identically with and without it.
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/head11.json");
    assert!(fixture.exists(), "configs/head11.json missing");
    let tmp = tempfile::tempdir().unwrap();
    let with_cfg = tmp.path().join("with");
    let without_cfg = tmp.path().join("without");
    for (root, config) in [(&with_cfg, Some(&fixture)), (&without_cfg, None)] {
        let data = root.join("data");
        let model = root.join("model");
        let eval = root.join("eval");
        let penalty = root.join("penalty");
        let invoke = |args: &[&str]| {
            let mut cmd = Command::new(env!("CARGO_BIN_EXE_domino"));
            if let Some(cfg) = config {
                cmd.arg("--config").arg(cfg);
            }
            let out = cmd.args(args).output().unwrap();
            assert_eq!(
                out.status.code(),
                Some(0),
                "{:?}: {}",
                args,
                String::from_utf8_lossy(&out.stderr)
            );
        };
        invoke(&["phantom", "--count", "3", "--out", data.to_str().unwrap()]);
        invoke(&[
            "train",
            "--mode",
            "hc",
            "--data",
            data.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ]);
        invoke(&[
            "eval",
            "--model",
            model.join("model.dom1").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            eval.to_str().unwrap(),
            "--merged",
        ]);
        invoke(&["penalty", "--mode", "hc", "--out", penalty.to_str().unwrap()]);
    }
    let a = tree_bytes(&with_cfg);
    let b = tree_bytes(&without_cfg);
    assert_eq!(a.len(), b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(
            bytes_a, bytes_b,
            "config fixture diverges from defaults at {}",
            name_a
        );
    }
    println!(
        "acceptance 8: PASS — scale 3, beta in [0,1], hierarchy max 3, 11 tissue classes, 6 merge groups, fixture == defaults"
    );
}
