//! The run configuration: one JSON file describing the class universe,
//! phantom family, training hyperparameters, loss weights, class hierarchy
//! and merge groups. Unknown keys are rejected so typos fail loudly, and
//! every section defaults to the built-in head-tissue setup, so an empty
//! `{}` file (or no file at all) reproduces the defaults exactly.

use std::collections::BTreeMap;
use std::path::Path;

use domino_core::{
    ClassSet, EllipseRegion, Error, GroupMap, HierarchySpec, LossConfig, PhantomConfig, Result,
    TrainConfig,
};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// The class universe; every other section refers to classes by name.
    pub classes: Vec<String>,
    pub phantom: PhantomSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub hierarchy: HierarchySection,
    /// Disjoint merge groups for coarse-granularity evaluation.
    pub group_map: Vec<GroupSpec>,
    /// Reliability-curve bins.
    pub bins: usize,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub size: usize,
    pub noise_sigma: f64,
    pub blur_radius: f64,
    pub seed: u64,
    /// Mean intensity per class name; must cover every class exactly.
    pub class_means: BTreeMap<String, f64>,
    /// Ellipses painted in order; classes by name.
    pub layout: Vec<LayoutSpec>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub class: String,
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Maximum penalty: the CM scale and the HC cross-group cost.
    pub scale: f64,
    pub eval_interval: usize,
    pub moment_decay: f64,
    pub second_moment_decay: f64,
    pub stability_epsilon: f64,
    pub patch_radius: usize,
    pub hidden_units: usize,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub beta: f64,
    pub lambda_ce: f64,
    pub lambda_dice: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySection {
    /// Penalty for confusing two classes that share a group.
    pub p_within: f64,
    pub groups: Vec<GroupSpec>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub members: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            classes: ClassSet::head11().names().to_vec(),
            phantom: PhantomSection::default(),
            train: TrainSection::default(),
            loss: LossSection::default(),
            hierarchy: HierarchySection::default(),
            group_map: default_group_map(),
            bins: 10,
        }
    }
}

impl Default for PhantomSection {
    fn default() -> Self {
        let classes = ClassSet::head11();
        let core = PhantomConfig::default();
        PhantomSection {
            size: core.size,
            noise_sigma: core.noise_sigma,
            blur_radius: core.blur_radius,
            seed: core.seed,
            class_means: classes
                .names()
                .iter()
                .cloned()
                .zip(core.class_means.iter().copied())
                .collect(),
            layout: core
                .layout
                .iter()
                .map(|r| LayoutSpec {
                    class: classes.name(r.class).to_string(),
                    cx: r.cx,
                    cy: r.cy,
                    rx: r.rx,
                    ry: r.ry,
                })
                .collect(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let core = TrainConfig::default();
        TrainSection {
            iterations: core.iterations,
            learning_rate: core.learning_rate,
            seed: core.seed,
            scale: core.scale,
            eval_interval: core.eval_interval,
            moment_decay: core.moment_decay,
            second_moment_decay: core.second_moment_decay,
            stability_epsilon: core.stability_epsilon,
            patch_radius: core.patch_radius,
            hidden_units: core.hidden_units,
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let core = LossConfig::default();
        LossSection {
            beta: core.beta,
            lambda_ce: core.lambda_ce,
            lambda_dice: core.lambda_dice,
            epsilon: core.epsilon,
        }
    }
}

impl Default for HierarchySection {
    fn default() -> Self {
        let classes = ClassSet::head11();
        HierarchySection {
            p_within: 1.0,
            groups: HierarchySpec::head11()
                .groups()
                .iter()
                .map(|(name, members)| GroupSpec {
                    name: name.clone(),
                    members: members
                        .iter()
                        .map(|&c| classes.name(c).to_string())
                        .collect(),
                })
                .collect(),
        }
    }
}

fn default_group_map() -> Vec<GroupSpec> {
    let classes = ClassSet::head11();
    let gm = GroupMap::head6();
    (0..gm.num_coarse())
        .map(|g| GroupSpec {
            name: gm.names()[g].clone(),
            members: (0..gm.num_fine())
                .filter(|&f| gm.coarse_of(f) == g)
                .map(|f| classes.name(f).to_string())
                .collect(),
        })
        .collect()
}

impl RunConfig {
    /// Load from a JSON file, or produce the defaults when no path is
    /// given. Unknown keys and malformed values are configuration errors.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {}", path.display(), e))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        cfg.class_set()?;
        Ok(cfg)
    }

    pub fn class_set(&self) -> Result<ClassSet> {
        ClassSet::new(self.classes.clone())
    }

    fn class_index(&self, name: &str, context: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| {
                Error::Config(format!("{} references unknown class '{}'", context, name))
            })
    }

    pub fn phantom_config(&self) -> Result<PhantomConfig> {
        for key in self.phantom.class_means.keys() {
            self.class_index(key, "phantom.class_means")?;
        }
        let class_means = self
            .classes
            .iter()
            .map(|name| {
                self.phantom.class_means.get(name).copied().ok_or_else(|| {
                    Error::Config(format!("phantom.class_means is missing class '{}'", name))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let layout = self
            .phantom
            .layout
            .iter()
            .map(|r| {
                Ok(EllipseRegion::new(
                    self.class_index(&r.class, "phantom.layout")?,
                    r.cx,
                    r.cy,
                    r.rx,
                    r.ry,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = PhantomConfig {
            size: self.phantom.size,
            class_means,
            noise_sigma: self.phantom.noise_sigma,
            blur_radius: self.phantom.blur_radius,
            layout,
            seed: self.phantom.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let cfg = LossConfig {
            beta: self.loss.beta,
            lambda_ce: self.loss.lambda_ce,
            lambda_dice: self.loss.lambda_dice,
            epsilon: self.loss.epsilon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            iterations: self.train.iterations,
            learning_rate: self.train.learning_rate,
            seed: self.train.seed,
            scale: self.train.scale,
            eval_interval: self.train.eval_interval,
            moment_decay: self.train.moment_decay,
            second_moment_decay: self.train.second_moment_decay,
            stability_epsilon: self.train.stability_epsilon,
            patch_radius: self.train.patch_radius,
            hidden_units: self.train.hidden_units,
            loss: self.loss_config()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hierarchy(&self) -> Result<HierarchySpec> {
        let groups = self
            .hierarchy
            .groups
            .iter()
            .map(|g| {
                let members = g
                    .members
                    .iter()
                    .map(|m| self.class_index(m, &format!("hierarchy group '{}'", g.name)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((g.name.clone(), members))
            })
            .collect::<Result<Vec<_>>>()?;
        HierarchySpec::new(self.classes.len(), groups)
    }

    pub fn group_map(&self) -> Result<GroupMap> {
        let names: Vec<String> = self.group_map.iter().map(|g| g.name.clone()).collect();
        let mut assignment = vec![usize::MAX; self.classes.len()];
        for (gi, g) in self.group_map.iter().enumerate() {
            for m in &g.members {
                let fine = self.class_index(m, &format!("merge group '{}'", g.name))?;
                if assignment[fine] != usize::MAX {
                    return Err(Error::Config(format!(
                        "class '{}' appears in two merge groups",
                        m
                    )));
                }
                assignment[fine] = gi;
            }
        }
        if let Some(missing) = assignment.iter().position(|&a| a == usize::MAX) {
            return Err(Error::Config(format!(
                "class '{}' belongs to no merge group",
                self.classes[missing]
            )));
        }
        GroupMap::new(names, assignment)
    }
}
