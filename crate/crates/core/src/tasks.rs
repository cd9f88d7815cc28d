//! The downstream task suite.
//!
//! Every task is rendered procedurally from a class bank that never overlaps
//! the pre-training bank. Families differ in which image property carries the
//! class signal and which properties are nuisance, so different pre-training
//! invariances help or hurt different families.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::shapes::{hsv, Material, Part, Pattern, Shape};
use crate::scenegen::{BackgroundDraw, DataSource, ImageDraw, LabeledImageSet, ObjectClass, Param};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ColorSensitive,
    PoseSensitive,
    TextureSensitive,
    BlurRobust,
    BackgroundRobust,
    ShadingSensitive,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::ColorSensitive,
        Family::PoseSensitive,
        Family::TextureSensitive,
        Family::BlurRobust,
        Family::BackgroundRobust,
        Family::ShadingSensitive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::ColorSensitive => "color-sensitive",
            Family::PoseSensitive => "pose-sensitive",
            Family::TextureSensitive => "texture-sensitive",
            Family::BlurRobust => "blur-robust",
            Family::BackgroundRobust => "background-robust",
            Family::ShadingSensitive => "shading-sensitive",
        }
    }

    /// The simulation parameter whose invariance matters most for the family.
    pub fn signature(self) -> Param {
        match self {
            Family::ColorSensitive => Param::LightColor,
            Family::PoseSensitive => Param::Rotation,
            Family::TextureSensitive => Param::Materials,
            Family::BlurRobust => Param::FocusBlur,
            Family::BackgroundRobust => Param::Background,
            Family::ShadingSensitive => Param::LightDirection,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Seen,
    Unseen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub family: Family,
    /// Which class bank of the family the task draws from.
    pub variant: usize,
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub image_size: usize,
    pub seed: u64,
    pub role: SplitRole,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
}

impl TaskData {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Checksum over the spec and both splits; keys reward cache entries.
    pub fn checksum(&self) -> Result<String> {
        let mut bytes = serde_json::to_vec(&self.spec)?;
        bytes.extend(self.train.to_bytes()?);
        bytes.extend(self.test.to_bytes()?);
        Ok(seed::checksum(&bytes))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io::write_json(&dir.join("task.json"), &self.spec)?;
        self.train.save(&dir.join("train.s2tds"))?;
        self.test.save(&dir.join("test.s2tds"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(TaskData {
            spec: crate::io::read_json(&dir.join("task.json"))?,
            train: LabeledImageSet::load(&dir.join("train.s2tds"))?,
            test: LabeledImageSet::load(&dir.join("test.s2tds"))?,
        })
    }
}

/// Sizes shared by every task of a suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub image_size: usize,
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seen: Vec<Family>,
    pub unseen: Vec<Family>,
}

impl SuiteConfig {
    pub fn new(seed: u64) -> Self {
        SuiteConfig {
            seed,
            image_size: 16,
            num_classes: 5,
            train_size: 500,
            test_size: 200,
            seen: Family::ALL.to_vec(),
            unseen: vec![
                Family::ColorSensitive,
                Family::PoseSensitive,
                Family::TextureSensitive,
                Family::BackgroundRobust,
            ],
        }
    }
}

/// Task-only shapes, disjoint from the pre-training and reference banks.
/// Indices 0..5, 5..10 and 10..15 are the pose, blur and background groups.
fn task_shape(k: usize) -> Shape {
    [
        Shape::Polygon { sides: 7 },
        Shape::Star {
            points: 6,
            inner: 0.55,
        },
        Shape::Ellipse { aspect: 0.55 },
        Shape::Cross { thickness: 0.2 },
        Shape::Star {
            points: 3,
            inner: 0.3,
        },
        Shape::Rect { aspect: 0.7 },
        Shape::Ring { inner: 0.35 },
        Shape::Polygon { sides: 8 },
        Shape::Star {
            points: 10,
            inner: 0.75,
        },
        Shape::Ellipse { aspect: 0.3 },
        Shape::Star {
            points: 4,
            inner: 0.5,
        },
        Shape::Cross { thickness: 0.45 },
        Shape::Ring { inner: 0.7 },
        Shape::Rect { aspect: 0.2 },
        Shape::Star {
            points: 7,
            inner: 0.45,
        },
    ][k % 15]
}

fn shape_group(family: Family) -> usize {
    match family {
        Family::BlurRobust => 5,
        Family::BackgroundRobust => 10,
        _ => 0,
    }
}

/// Class definitions for `family`, bank `variant`.
pub fn family_classes(family: Family, variant: usize, n: usize) -> Vec<ObjectClass> {
    let v = variant as f64;
    let neutral = Material::solid([0.75, 0.72, 0.68]);
    (0..n)
        .map(|k| {
            let kf = k as f64;
            match family {
                Family::ColorSensitive => {
                    // neighbouring classes sit about 7 degrees apart on the hue circle
                    let hue = 0.05 + 0.45 * v + 0.02 * kf;
                    ObjectClass {
                        name: format!("hue{:03}", ((hue.rem_euclid(1.0)) * 360.0).round() as u32),
                        parts: vec![Part::new(
                            task_shape(2 + 3 * variant),
                            Material::solid(hsv(hue, 0.5, 0.85)),
                        )],
                    }
                }
                Family::TextureSensitive => {
                    let pattern = Pattern::ALL[(k + variant) % Pattern::ALL.len()];
                    ObjectClass {
                        name: format!("{pattern:?}").to_lowercase(),
                        parts: vec![Part::new(
                            task_shape(7 + variant),
                            Material {
                                color: [0.85, 0.8, 0.55],
                                pattern,
                            },
                        )],
                    }
                }
                Family::ShadingSensitive => ObjectClass {
                    name: format!(
                        "lit{:03}",
                        ((kf + 0.5 * v) * 360.0 / n as f64).round() as u32
                    ),
                    parts: vec![Part::new(task_shape(5 + variant), neutral)],
                },
                Family::PoseSensitive | Family::BlurRobust | Family::BackgroundRobust => {
                    let index = shape_group(family) + (k + 2 * variant) % 5;
                    let base_hue = match family {
                        Family::PoseSensitive => 0.58,
                        Family::BlurRobust => 0.02,
                        _ => 0.3,
                    };
                    let color = hsv(base_hue + 0.06 * v + 0.02 * kf, 0.55, 0.85);
                    ObjectClass {
                        name: format!("shape{index}"),
                        parts: vec![Part::new(task_shape(index), Material::solid(color))],
                    }
                }
            }
        })
        .collect()
}

/// Renders the task images of one split. `first_index` keeps train and test draws disjoint.
///
/// Robustness-style families see a mild version of their nuisance in the
/// train split and a strong one in the test split.
fn family_draws(
    spec: &TaskSpec,
    classes: &[ObjectClass],
    count: usize,
    first_index: u64,
    test: bool,
) -> Vec<ImageDraw> {
    let n = classes.len();
    (0..count)
        .map(|i| {
            let class = i % n;
            let index = first_index + i as u64;
            let mut r = seed::stream(spec.seed, "task-draw", index);
            let mut d = ImageDraw::canonical(class);
            d.scale = r.gen_range(0.55..0.85);
            d.offset = [r.gen_range(-0.12..0.12), r.gen_range(-0.12..0.12)];
            if matches!(
                spec.family,
                Family::PoseSensitive | Family::BlurRobust | Family::BackgroundRobust
            ) {
                // colour carries no class information in the shape families
                d.tint = [0, 1, 2].map(|_| r.gen_range(0.85..1.15));
            }
            match spec.family {
                Family::ColorSensitive => {
                    d.rotation_deg = r.gen_range(0.0..360.0);
                    d.intensity = r.gen_range(0.8..1.2);
                    d.light_angle_deg = r.gen_range(0.0..360.0);
                }
                Family::PoseSensitive => {
                    d.rotation_deg = if test {
                        r.gen_range(0.0..360.0)
                    } else {
                        r.gen_range(-30.0..30.0)
                    };
                }
                Family::TextureSensitive => {
                    // free rotation would map horizontal stripes onto vertical ones
                    d.rotation_deg = r.gen_range(-15.0..15.0);
                    d.intensity = r.gen_range(0.85..1.15);
                }
                Family::BlurRobust => {
                    d.blur_sigma = if test {
                        r.gen_range(1.0..1.8)
                    } else {
                        r.gen_range(0.3..0.7)
                    };
                    d.rotation_deg = r.gen_range(-20.0..20.0);
                }
                Family::BackgroundRobust => {
                    let pattern = r.gen_range(0..crate::scenegen::shapes::BACKGROUND_COUNT);
                    let contrast = if test { 0.7 } else { 0.25 };
                    let mut color = || [0, 1, 2].map(|_| 0.5 + contrast * (r.gen::<f64>() - 0.5));
                    let colors = [color(), color()];
                    d.background = Some(BackgroundDraw {
                        pattern,
                        colors,
                        phase: r.gen(),
                    });
                    d.rotation_deg = r.gen_range(-20.0..20.0);
                }
                Family::ShadingSensitive => {
                    let base = (class as f64 + 0.5 * spec.variant as f64) * 360.0 / n as f64;
                    d.light_angle_deg = base + r.gen_range(-15.0..15.0);
                    d.intensity = r.gen_range(0.8..1.2);
                    d.rotation_deg = r.gen_range(0.0..360.0);
                }
            }
            d
        })
        .collect()
}

/// Renders one task.
pub fn build_task(spec: TaskSpec) -> Result<TaskData> {
    if spec.num_classes < 2 || spec.train_size < spec.num_classes || spec.test_size < 1 {
        return Err(Error::InvalidArgument(format!(
            "degenerate task spec {spec:?}"
        )));
    }
    let classes = family_classes(spec.family, spec.variant, spec.num_classes);
    let render = |count: usize, first: u64, split: &str| {
        LabeledImageSet::render(
            classes.clone(),
            family_draws(&spec, &classes, count, first, split == "test"),
            spec.image_size,
            DataSource::External {
                tag: format!("task:{}:{split}", spec.name),
            },
        )
    };
    let train = render(spec.train_size, 0, "train")?;
    let test = render(spec.test_size, spec.train_size as u64, "test")?;
    Ok(TaskData { spec, train, test })
}

/// The task specs of a suite, seen tasks first.
pub fn suite_specs(cfg: &SuiteConfig) -> Vec<TaskSpec> {
    let mut specs = Vec::new();
    let mut used: BTreeMap<Family, usize> = BTreeMap::new();
    let roles = cfg
        .seen
        .iter()
        .map(|&f| (f, SplitRole::Seen))
        .chain(cfg.unseen.iter().map(|&f| (f, SplitRole::Unseen)));
    for (i, (family, role)) in roles.enumerate() {
        let variant = *used.entry(family).and_modify(|v| *v += 1).or_insert(0);
        let tag = match role {
            SplitRole::Seen => "seen",
            SplitRole::Unseen => "unseen",
        };
        specs.push(TaskSpec {
            name: format!("{}-{tag}{variant}", family.name()),
            family,
            variant,
            num_classes: cfg.num_classes,
            train_size: cfg.train_size,
            test_size: cfg.test_size,
            image_size: cfg.image_size,
            seed: seed::derive(cfg.seed, "task", i as u64),
            role,
        });
    }
    specs
}

/// A built suite: seen tasks train the policy, unseen tasks test it.
#[derive(Clone, Debug, PartialEq)]
pub struct Suite {
    pub config: SuiteConfig,
    pub seen: Vec<TaskData>,
    pub unseen: Vec<TaskData>,
}

impl Suite {
    pub fn tasks(&self) -> impl Iterator<Item = &TaskData> {
        self.seen.iter().chain(self.unseen.iter())
    }

    pub fn find(&self, name: &str) -> Option<&TaskData> {
        self.tasks().find(|t| t.name() == name)
    }
}

pub fn build_suite_with(cfg: &SuiteConfig) -> Result<Suite> {
    let (mut seen, mut unseen) = (Vec::new(), Vec::new());
    for spec in suite_specs(cfg) {
        let role = spec.role;
        let task = build_task(spec)?;
        match role {
            SplitRole::Seen => seen.push(task),
            SplitRole::Unseen => unseen.push(task),
        }
    }
    Ok(Suite {
        config: cfg.clone(),
        seen,
        unseen,
    })
}

/// The default suite: six seen tasks (one per family) and four unseen ones.
pub fn build_suite(suite_seed: u64) -> Result<(Vec<TaskData>, Vec<TaskData>)> {
    let s = build_suite_with(&SuiteConfig::new(suite_seed))?;
    Ok((s.seen, s.unseen))
}

/// Keeps `ceil(fraction * N)` training examples with per-class counts within one of each other.
pub fn subsample_task(t: &TaskData, fraction: f64, seed: u64) -> Result<TaskData> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(t.clone());
    }
    let n = t.train.len();
    let keep = ((fraction * n as f64).ceil() as usize).min(n);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); t.num_classes()];
    for (i, &l) in t.train.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = seed::stream(seed, "subsample", 0);
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
    }
    let mut chosen = Vec::with_capacity(keep);
    let mut round = 0;
    while chosen.len() < keep {
        for idx in &by_class {
            if chosen.len() < keep {
                if let Some(&i) = idx.get(round) {
                    chosen.push(i);
                }
            }
        }
        round += 1;
    }
    chosen.sort_unstable();
    Ok(TaskData {
        spec: t.spec.clone(),
        train: t.train.subset(&chosen),
        test: t.test.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub spec: TaskSpec,
    pub dir: PathBuf,
    pub checksum: String,
}

/// `suite.json`: every task's spec, directory (relative to the suite root), and split role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub config: SuiteConfig,
    pub tasks: Vec<SuiteEntry>,
}

pub fn save_suite(suite: &Suite, dir: &Path) -> Result<SuiteManifest> {
    let mut tasks = Vec::new();
    for t in suite.tasks() {
        let rel = PathBuf::from("tasks").join(t.name());
        t.save(&dir.join(&rel))?;
        tasks.push(SuiteEntry {
            spec: t.spec.clone(),
            dir: rel,
            checksum: t.checksum()?,
        });
    }
    let manifest = SuiteManifest {
        config: suite.config.clone(),
        tasks,
    };
    crate::io::write_json(&dir.join("suite.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_suite(dir: &Path) -> Result<Suite> {
    let manifest: SuiteManifest = crate::io::read_json(&dir.join("suite.json"))?;
    let (mut seen, mut unseen) = (Vec::new(), Vec::new());
    for e in &manifest.tasks {
        let t = TaskData::load(&dir.join(&e.dir))?;
        if t.checksum()? != e.checksum {
            return Err(Error::format(
                "suite",
                format!("checksum mismatch for {}", e.spec.name),
            ));
        }
        match e.spec.role {
            SplitRole::Seen => seen.push(t),
            SplitRole::Unseen => unseen.push(t),
        }
    }
    Ok(Suite {
        config: manifest.config,
        seen,
        unseen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SuiteConfig {
        SuiteConfig {
            train_size: 40,
            test_size: 15,
            ..SuiteConfig::new(3)
        }
    }

    #[test]
    fn default_suite_has_six_seen_four_unseen() {
        let specs = suite_specs(&SuiteConfig::new(1));
        assert_eq!(
            specs.iter().filter(|s| s.role == SplitRole::Seen).count(),
            6
        );
        assert_eq!(
            specs.iter().filter(|s| s.role == SplitRole::Unseen).count(),
            4
        );
        let names: std::collections::HashSet<_> = specs.iter().map(|s| &s.name).collect();
        assert_eq!(names.len(), 10);
    }

    #[test]
    fn suite_is_deterministic() {
        let a = build_suite_with(&small()).unwrap();
        let b = build_suite_with(&small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn color_classes_differ_only_by_hue() {
        let s = build_suite_with(&small()).unwrap();
        for t in s
            .tasks()
            .filter(|t| t.spec.family == Family::ColorSensitive)
        {
            let classes = &t.train.manifest.classes;
            let shape = classes[0].parts[0].shape;
            assert!(classes
                .iter()
                .all(|c| c.parts.len() == 1 && c.parts[0].shape == shape));
            let colors: Vec<_> = classes.iter().map(|c| c.parts[0].material.color).collect();
            for i in 0..colors.len() {
                for j in 0..i {
                    assert_ne!(colors[i], colors[j]);
                }
            }
        }
    }

    #[test]
    fn splits_are_balanced_and_disjoint() {
        let s = build_suite_with(&small()).unwrap();
        for t in s.tasks() {
            for c in 0..t.num_classes() {
                assert_eq!(t.train.labels.iter().filter(|&&l| l == c).count(), 8);
            }
            for i in 0..t.train.len() {
                for j in 0..t.test.len() {
                    assert_ne!(t.train.images.row(i), t.test.images.row(j));
                }
            }
        }
    }

    #[test]
    fn subsample_keeps_balance() {
        let s = build_suite_with(&SuiteConfig {
            train_size: 500,
            test_size: 10,
            seen: vec![Family::PoseSensitive],
            unseen: vec![],
            ..SuiteConfig::new(5)
        })
        .unwrap();
        let t = &s.seen[0];
        assert_eq!(subsample_task(t, 1.0, 0).unwrap(), *t);
        let sub = subsample_task(t, 0.1, 0).unwrap();
        assert_eq!(sub.train.len(), 50);
        assert_eq!(sub.test, t.test);
        let sub = subsample_task(t, 0.013, 9).unwrap();
        assert_eq!(sub.train.len(), 7);
        let counts: Vec<usize> = (0..5)
            .map(|c| sub.train.labels.iter().filter(|&&l| l == c).count())
            .collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert!(subsample_task(t, 0.0, 0).is_err());
        assert!(subsample_task(t, 1.5, 0).is_err());
    }
}
