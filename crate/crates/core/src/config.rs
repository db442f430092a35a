//! TOML experiment description: where the data comes from, the shape of the
//! super-network, search settings, and one schedule per training phase.
//! A parsed config validates eagerly, hashes canonically (whitespace, key
//! order and comments do not matter), and resolves into
//! [`crate::transfer::PipelineInputs`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::CostSpec;
use crate::data::{
    self, load_idx, synth_task, ClassDef, DomainKind, DomainSpec, ShiftParams, TaskSpec,
};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_seed};
use crate::supernet::{Allocation, BlockFamily, BlockKind};
use crate::tensor::TrainSchedule;
use crate::transfer::{PipelineInputs, ScheduleSet};

/// Per-class holdout fraction when the config does not set one.
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

fn default_val_fraction() -> f64 {
    DEFAULT_VAL_FRACTION
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

fn default_channels() -> usize {
    1
}

/// Root of the experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every phase derives its own stream from it.
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub supernet: SupernetConfig,
    pub search: SearchConfig,
    pub schedules: SchedulesConfig,
}

/// Either a named preset or an explicit source/target pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// One of `default`, `covariate-shift`, `stage-biased`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<DomainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<DomainConfig>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

/// One side of the data pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DomainConfig {
    SyntheticShapes {
        image_extent: usize,
        #[serde(default = "default_channels")]
        channels: usize,
        n_classes: usize,
        n_samples: usize,
        /// Domain seed; derived from the experiment seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default)]
        shift: ShiftParams,
        classes: Vec<ClassDef>,
    },
    IdxFile {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupernetConfig {
    /// Per-stage block bounds of the super-network.
    pub allocation: Vec<usize>,
    #[serde(default)]
    pub family: BlockFamily,
    /// Stem width; the family default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_width: Option<usize>,
    /// Inner-width ratio; the family default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<f64>,
}

impl SupernetConfig {
    pub fn kind(&self) -> BlockKind {
        let mut kind = match self.family {
            BlockFamily::Bottleneck => BlockKind::bottleneck(),
            BlockFamily::Inverted => BlockKind::inverted(),
        };
        if let Some(w) = self.base_width {
            kind.base_width = w;
        }
        if let Some(e) = self.expansion {
            kind.expansion = e;
        }
        kind
    }

    pub fn allocation(&self) -> Result<Allocation> {
        Allocation::new(self.allocation.clone())
    }
}

/// How candidate sizes are denominated during search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// Every block counts 1, in any stage.
    #[default]
    Unit,
    /// Each stage's block counts its compute relative to the cheapest
    /// stage's block.
    Flops,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Largest admissible weighted size.
    pub budget: f64,
    #[serde(default)]
    pub weights: WeightRule,
    /// Fixed architecture trained from scratch for comparison; must match
    /// the searched allocation's size at run time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<usize>>,
    /// Train chain children from scratch instead of inheriting.
    #[serde(default)]
    pub from_scratch: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulesConfig {
    pub supernet_source: TrainSchedule,
    pub supernet_target: TrainSchedule,
    pub child_source: TrainSchedule,
    pub child_target: TrainSchedule,
    /// Source schedule for the from-scratch baseline. When absent it is the
    /// child-source schedule with `supernet_source.epochs` added, so the
    /// baseline sees as much source data as supernet training plus child
    /// fine-tuning combined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_source: Option<TrainSchedule>,
}

impl SchedulesConfig {
    pub fn to_set(&self) -> ScheduleSet {
        let baseline_source = self.baseline_source.clone().unwrap_or_else(|| {
            let mut s = self.child_source.clone();
            s.epochs += self.supernet_source.epochs;
            s
        });
        ScheduleSet {
            supernet_source: self.supernet_source.clone(),
            supernet_target: self.supernet_target.clone(),
            child_source: self.child_source.clone(),
            child_target: self.child_target.clone(),
            baseline_source,
        }
    }
}

pub const PRESET_NAMES: [&str; 3] = ["default", "covariate-shift", "stage-biased"];

/// Resolves a preset name to its source/target domain pair.
pub fn preset_pair(name: &str, seed: u64) -> Result<(DomainSpec, DomainSpec)> {
    match name {
        "default" => Ok(data::default_pair(seed)),
        "covariate-shift" => Ok(data::covariate_shift_pair(seed)),
        "stage-biased" => Ok(data::stage_biased_pair(seed)),
        other => Err(Error::config(format!(
            "unknown preset {other:?}; expected one of {PRESET_NAMES:?}"
        ))),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses and validates the file. Relative data paths inside are
    /// interpreted against the file's directory when resolving inputs.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.preset, &self.data.source, &self.data.target) {
            (Some(name), None, None) => {
                preset_pair(name, 0)?;
            }
            (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => {
                return Err(Error::config(
                    "data.preset excludes explicit data.source/data.target",
                ));
            }
            _ => {
                return Err(Error::config(
                    "set either data.preset or both data.source and data.target",
                ));
            }
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction <= 0.5) {
            return Err(Error::config(format!(
                "val_fraction {} outside (0, 0.5]",
                self.data.val_fraction
            )));
        }
        for side in [&self.data.source, &self.data.target].into_iter().flatten() {
            if let DomainConfig::SyntheticShapes {
                n_classes, classes, ..
            } = side
            {
                if classes.len() != *n_classes {
                    return Err(Error::config(format!(
                        "{} class definitions for n_classes = {n_classes}",
                        classes.len()
                    )));
                }
            }
        }
        let bounds = self
            .supernet
            .allocation()
            .map_err(|e| Error::config(e.to_string()))?;
        let kind = self.supernet.kind();
        kind.validate().map_err(|e| Error::config(e.to_string()))?;
        if !self.search.budget.is_finite() {
            return Err(Error::config(format!(
                "budget {} is not finite",
                self.search.budget
            )));
        }
        if let Some(baseline) = &self.search.baseline {
            let b = Allocation::new(baseline.clone())
                .map_err(|e| Error::config(e.to_string()))?;
            if b.stages() != bounds.stages() {
                return Err(Error::config(format!(
                    "baseline {b} has {} stages, super-network has {}",
                    b.stages(),
                    bounds.stages()
                )));
            }
        }
        self.schedules
            .to_set()
            .validate()
            .map_err(|e| Error::config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical (parsed, re-serialized) form. Formatting and
    /// comments do not affect it; any semantic field does. The output
    /// directory is excluded: it says where results land, not what they are.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let canon = serde_json::to_string(&canonical).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Renders both tasks and assembles everything the pipeline needs.
    /// `base_dir` anchors relative data paths (normally the config file's
    /// directory).
    pub fn resolve(&self, base_dir: &Path) -> Result<PipelineInputs> {
        self.validate()?;
        let (source, target) = match &self.data.preset {
            Some(name) => {
                let (src_spec, tgt_spec) = preset_pair(name, self.seed)?;
                (
                    self.render_side(&src_spec, "source")?,
                    self.render_side(&tgt_spec, "target")?,
                )
            }
            None => {
                let src = self.data.source.as_ref().expect("validated");
                let tgt = self.data.target.as_ref().expect("validated");
                (
                    self.resolve_side(src, base_dir, "source")?,
                    self.resolve_side(tgt, base_dir, "target")?,
                )
            }
        };
        let src_shape = source.images.shape();
        if src_shape[1..] != target.images.shape()[1..] {
            return Err(Error::config(format!(
                "source images {:?} and target images {:?} disagree on shape",
                src_shape,
                target.images.shape()
            )));
        }
        let kind = self.supernet.kind();
        let super_alloc = self.supernet.allocation()?;
        let weights = match self.search.weights {
            WeightRule::Unit => vec![1.0; super_alloc.stages()],
            WeightRule::Flops => CostSpec::for_desk(
                &kind,
                super_alloc.stages(),
                src_shape[1],
                src_shape[2],
                source.classes,
            )?
            .derive_weights(),
        };
        let baseline_alloc = match &self.search.baseline {
            Some(b) => Some(Allocation::new(b.clone())?),
            None => None,
        };
        Ok(PipelineInputs {
            source,
            target,
            kind,
            super_alloc,
            budget: self.search.budget,
            weights,
            baseline_alloc,
            schedules: self.schedules.to_set(),
            seed: self.seed,
            from_scratch: self.search.from_scratch,
        })
    }

    fn render_side(&self, spec: &DomainSpec, side: &str) -> Result<TaskSpec> {
        let task = synth_task(spec)?;
        let mut rng = derive_rng(self.seed, &format!("config/split/{side}"));
        data::split(task, self.data.val_fraction, &mut rng)
    }

    fn resolve_side(
        &self,
        config: &DomainConfig,
        base_dir: &Path,
        side: &str,
    ) -> Result<TaskSpec> {
        let task = match config {
            DomainConfig::SyntheticShapes {
                image_extent,
                channels,
                n_classes,
                n_samples,
                seed,
                shift,
                classes,
            } => {
                let spec = DomainSpec {
                    kind: DomainKind::SyntheticShapes,
                    image_extent: *image_extent,
                    channels: *channels,
                    n_classes: *n_classes,
                    n_samples: *n_samples,
                    seed: seed
                        .unwrap_or_else(|| derive_seed(self.seed, &format!("config/domain/{side}"))),
                    shift: *shift,
                    classes: classes.clone(),
                };
                synth_task(&spec)?
            }
            DomainConfig::IdxFile { images, labels } => {
                let resolve = |p: &Path| {
                    if p.is_absolute() {
                        p.to_path_buf()
                    } else {
                        base_dir.join(p)
                    }
                };
                load_idx(&resolve(images), &resolve(labels))?
            }
        };
        let mut rng = derive_rng(self.seed, &format!("config/split/{side}"));
        data::split(task, self.data.val_fraction, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{save_idx, ShapeKind};

    const MINIMAL: &str = r#"
        seed = 7

        [data]
        preset = "covariate-shift"

        [supernet]
        allocation = [2, 2]

        [search]
        budget = 3.0

        [schedules.supernet_source]
        epochs = 1
        batch_size = 16
        base_lr = 0.05

        [schedules.supernet_target]
        epochs = 1
        batch_size = 16
        base_lr = 0.05

        [schedules.child_source]
        epochs = 1
        batch_size = 16
        base_lr = 0.05

        [schedules.child_target]
        epochs = 1
        batch_size = 16
        base_lr = 0.05
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.out_dir, PathBuf::from("runs/out"));
        assert_eq!(config.data.val_fraction, DEFAULT_VAL_FRACTION);
        assert_eq!(config.search.weights, WeightRule::Unit);
        assert!(!config.search.from_scratch);
        assert_eq!(config.supernet.kind(), BlockKind::bottleneck());
        assert_eq!(config.schedules.supernet_source.momentum, 0.9);
        // composed baseline: child (1) + supernet (1) source epochs
        assert_eq!(config.schedules.to_set().baseline_source.epochs, 2);
    }

    #[test]
    fn preset_and_explicit_domains_are_exclusive() {
        let both = MINIMAL.replace(
            "preset = \"covariate-shift\"",
            "preset = \"covariate-shift\"\n\
             [data.source]\n\
             kind = \"idx-file\"\n\
             images = \"a\"\n\
             labels = \"b\"\n\
             [data.target]\n\
             kind = \"idx-file\"\n\
             images = \"c\"\n\
             labels = \"d\"",
        );
        let err = ExperimentConfig::from_toml_str(&both).unwrap_err();
        assert!(err.to_string().contains("excludes"), "{err}");
        assert!(err.is_usage());

        let neither = MINIMAL.replace("preset = \"covariate-shift\"", "");
        let err = ExperimentConfig::from_toml_str(&neither).unwrap_err();
        assert!(err.to_string().contains("either"), "{err}");
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let bad_preset = MINIMAL.replace("covariate-shift", "nope");
        assert!(ExperimentConfig::from_toml_str(&bad_preset).is_err());

        let bad_fraction = MINIMAL.replace(
            "[supernet]",
            "val_fraction = 0.9\n[supernet]",
        );
        let err = ExperimentConfig::from_toml_str(&bad_fraction).unwrap_err();
        assert!(err.to_string().contains("val_fraction"), "{err}");

        let bad_baseline = MINIMAL.replace(
            "budget = 3.0",
            "budget = 3.0\nbaseline = [1, 1, 1]",
        );
        let err = ExperimentConfig::from_toml_str(&bad_baseline).unwrap_err();
        assert!(err.to_string().contains("stages"), "{err}");

        let unknown_key = MINIMAL.replace("budget = 3.0", "budget = 3.0\nbudgett = 1");
        assert!(ExperimentConfig::from_toml_str(&unknown_key).is_err());
    }

    #[test]
    fn hash_ignores_formatting_but_tracks_values() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let reformatted = MINIMAL.replace("budget = 3.0", "# picked by hand\nbudget   = 3.00");
        let b = ExperimentConfig::from_toml_str(&reformatted).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);

        let changed = MINIMAL.replace("budget = 3.0", "budget = 4.0");
        let c = ExperimentConfig::from_toml_str(&changed).unwrap();
        assert_ne!(a.hash(), c.hash());

        // where the output goes is not part of the experiment identity
        let moved = MINIMAL.replace("seed = 7", "seed = 7\nout_dir = \"elsewhere\"");
        let d = ExperimentConfig::from_toml_str(&moved).unwrap();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn resolve_renders_preset_tasks() {
        let config = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let inputs = config.resolve(Path::new(".")).unwrap();
        assert_eq!(inputs.weights, vec![1.0, 1.0]);
        assert_eq!(inputs.seed, 7);
        assert!(inputs.source.n() > inputs.target.n());
        assert!(!inputs.source.val.is_empty());
        assert!(!inputs.target.val.is_empty());
        // same seed, same bytes
        let again = config.resolve(Path::new(".")).unwrap();
        assert_eq!(inputs.source.images, again.source.images);
    }

    #[test]
    fn flops_weights_follow_family() {
        // desk bottleneck: S^2 C^2 and S^2 W^2 are both constant across
        // stages, so every stage's block costs the same
        let flops = MINIMAL.replace("budget = 3.0", "budget = 3.0\nweights = \"flops\"");
        let config = ExperimentConfig::from_toml_str(&flops).unwrap();
        let inputs = config.resolve(Path::new(".")).unwrap();
        assert_eq!(inputs.weights, vec![1.0, 1.0]);

        // inverted blocks have a depthwise term that shrinks with extent,
        // so earlier stages cost more per block
        let inv = flops.replace("allocation = [2, 2]", "allocation = [2, 2]\nfamily = \"inverted\"");
        let config = ExperimentConfig::from_toml_str(&inv).unwrap();
        let inputs = config.resolve(Path::new(".")).unwrap();
        assert!(inputs.weights[0] > 1.0, "{:?}", inputs.weights);
        assert_eq!(inputs.weights[1], 1.0);
    }

    #[test]
    fn explicit_synthetic_and_idx_domains_resolve() {
        let dir = tempfile::tempdir().unwrap();
        // build a small idx pair on disk for the target
        let shapes = [ShapeKind::Disk, ShapeKind::Square];
        let spec = DomainSpec {
            kind: DomainKind::SyntheticShapes,
            image_extent: 16,
            channels: 1,
            n_classes: 2,
            n_samples: 24,
            seed: 5,
            shift: ShiftParams::default(),
            classes: shapes
                .iter()
                .map(|&shape| ClassDef { shape, freq_band: 0.0 })
                .collect(),
        };
        let task = synth_task(&spec).unwrap();
        save_idx(
            &task,
            &dir.path().join("imgs.idx"),
            &dir.path().join("lbls.idx"),
        )
        .unwrap();

        let text = r#"
            seed = 3

            [data]
            val_fraction = 0.25

            [data.source]
            kind = "synthetic-shapes"
            image_extent = 16
            n_classes = 2
            n_samples = 20
            classes = [
                { shape = "disk", freq_band = 0.0 },
                { shape = "square", freq_band = 0.0 },
            ]

            [data.target]
            kind = "idx-file"
            images = "imgs.idx"
            labels = "lbls.idx"

            [supernet]
            allocation = [2, 2]

            [search]
            budget = 3.0

            [schedules.supernet_source]
            epochs = 1
            batch_size = 8
            base_lr = 0.05

            [schedules.supernet_target]
            epochs = 1
            batch_size = 8
            base_lr = 0.05

            [schedules.child_source]
            epochs = 1
            batch_size = 8
            base_lr = 0.05

            [schedules.child_target]
            epochs = 1
            batch_size = 8
            base_lr = 0.05
        "#;
        let config = ExperimentConfig::from_toml_str(text).unwrap();
        let inputs = config.resolve(dir.path()).unwrap();
        assert_eq!(inputs.source.n(), 20);
        assert_eq!(inputs.target.n(), 24);
        assert_eq!(inputs.target.classes, 2);
        assert_eq!(inputs.target.val.len(), 6); // 25% of 24, stratified

        // a missing idx file is an error naming the path
        let missing = text.replace("imgs.idx", "absent.idx");
        let config = ExperimentConfig::from_toml_str(&missing).unwrap();
        let err = config.resolve(dir.path()).unwrap_err();
        assert!(err.to_string().contains("absent.idx"), "{err}");
    }

    #[test]
    fn toml_roundtrip_preserves_hash() {
        let config = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let text = toml::to_string_pretty(&config).unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(config.hash(), back.hash());
    }
}
