//! Source/target task pairs at desk scale: synthetic shape-and-texture
//! domains with controllable shift, an IDX loader for external data, and
//! deterministic stratified splits.
//!
//! Every generator is a pure function of its spec; the spec carries the
//! seed. Two calls with equal specs produce bit-identical datasets.

pub mod idx;
pub mod presets;
mod shapes;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use idx::{load_idx, save_idx};
pub use presets::{covariate_shift_pair, default_pair, stage_biased_pair};
pub use shapes::ShapeKind;

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::tensor::Tensor;

/// Where a task's images come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    SyntheticShapes,
    IdxFile,
}

/// One class of a synthetic domain: a shape filled with a sinusoidal
/// grating of the given frequency band (cycles per object diameter;
/// 0 = solid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub shape: ShapeKind,
    pub freq_band: f32,
}

/// Domain-shift knobs: nuisance ranges applied per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftParams {
    /// Object rotation range in radians (lo, hi).
    pub rotation: (f32, f32),
    /// Object radius range as a fraction of the half-extent.
    pub scale: (f32, f32),
    /// Multiplier on every class's texture frequency.
    pub freq_scale: f32,
    /// Center offset range, +- in normalized units.
    pub center_jitter: f32,
    /// Additive Gaussian pixel noise.
    pub noise_std: f32,
}

impl Default for ShiftParams {
    fn default() -> Self {
        ShiftParams {
            rotation: (-std::f32::consts::FRAC_PI_6, std::f32::consts::FRAC_PI_6),
            scale: (0.5, 0.75),
            freq_scale: 1.0,
            center_jitter: 0.1,
            noise_std: 0.02,
        }
    }
}

impl ShiftParams {
    pub fn validate(&self) -> Result<()> {
        let fin = |v: f32| v.is_finite();
        if !fin(self.rotation.0) || !fin(self.rotation.1) || self.rotation.0 > self.rotation.1 {
            return Err(Error::contract(format!(
                "rotation range {:?} invalid",
                self.rotation
            )));
        }
        if !fin(self.scale.0)
            || !fin(self.scale.1)
            || self.scale.0 <= 0.0
            || self.scale.0 > self.scale.1
            || self.scale.1 > 1.5
        {
            return Err(Error::contract(format!(
                "scale range {:?} outside (0, 1.5]",
                self.scale
            )));
        }
        if !(self.freq_scale > 0.0) || !fin(self.freq_scale) {
            return Err(Error::contract("freq_scale must be positive"));
        }
        if !(0.0..=0.5).contains(&self.center_jitter) {
            return Err(Error::contract("center_jitter outside [0, 0.5]"));
        }
        if !(0.0..=1.0).contains(&self.noise_std) {
            return Err(Error::contract("noise_std outside [0, 1]"));
        }
        Ok(())
    }
}

/// Full recipe for one dataset. For `SyntheticShapes`, `classes` defines the
/// label space; for `IdxFile` the images come from disk and `classes` stays
/// empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub image_extent: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub shift: ShiftParams,
    pub classes: Vec<ClassDef>,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_extent < 8 {
            return Err(Error::contract(format!(
                "image_extent {} < 8",
                self.image_extent
            )));
        }
        if self.channels < 1 || self.n_samples < 1 || self.n_classes < 1 {
            return Err(Error::contract(
                "channels, n_samples and n_classes must be >= 1",
            ));
        }
        self.shift.validate()?;
        match self.kind {
            DomainKind::SyntheticShapes => {
                if self.classes.len() != self.n_classes {
                    return Err(Error::contract(format!(
                        "{} class defs for {} classes",
                        self.classes.len(),
                        self.n_classes
                    )));
                }
                for c in &self.classes {
                    if !c.freq_band.is_finite() || c.freq_band < 0.0 {
                        return Err(Error::contract(format!(
                            "freq_band {} must be finite and >= 0",
                            c.freq_band
                        )));
                    }
                }
            }
            DomainKind::IdxFile => {
                if !self.classes.is_empty() {
                    return Err(Error::contract("idx-file domains carry no class defs"));
                }
            }
        }
        Ok(())
    }
}

/// A materialized task: images, labels and a train/val partition.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub domain: DomainSpec,
    /// Number of classes in the label space.
    pub classes: usize,
    /// `[N, C, E, E]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl TaskSpec {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.images.shape();
        if shape.len() != 4 {
            return Err(Error::shape("task", format!("images rank {}", shape.len())));
        }
        if shape[0] != self.labels.len() {
            return Err(Error::shape(
                "task",
                format!("{} images but {} labels", shape[0], self.labels.len()),
            ));
        }
        if self.classes < 1 {
            return Err(Error::contract("label space must have >= 1 class"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::contract(format!(
                "label {bad} outside [0, {})",
                self.classes
            )));
        }
        let n = self.n();
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val) {
            if i >= n {
                return Err(Error::contract(format!("split index {i} >= {n}")));
            }
            if seen[i] {
                return Err(Error::contract(format!(
                    "index {i} appears in both splits or twice"
                )));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// Gathers a minibatch: images `[B, C, E, E]` plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let shape = self.images.shape();
        let row = shape[1] * shape[2] * shape[3];
        let mut data = Vec::with_capacity(indices.len() * row);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n() {
                return Err(Error::contract(format!("batch index {i} >= {}", self.n())));
            }
            data.extend_from_slice(&self.images.data()[i * row..(i + 1) * row]);
            labels.push(self.labels[i]);
        }
        let images = Tensor::new(&[indices.len(), shape[1], shape[2], shape[3]], data)?;
        Ok((images, labels))
    }

    /// Per-class sample counts over the whole task.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Renders a synthetic task from its spec. Labels cycle through the classes
/// (`i % n_classes`), so the dataset is balanced up to remainder. The whole
/// task lands in the train split; use [`split`] to carve out validation.
pub fn synth_task(spec: &DomainSpec) -> Result<TaskSpec> {
    spec.validate()?;
    if spec.kind != DomainKind::SyntheticShapes {
        return Err(Error::contract(
            "synth_task requires a synthetic-shapes domain; use load_idx for idx-file",
        ));
    }
    let mut rng = derive_rng(spec.seed, "data/synth");
    let (n, c, e) = (spec.n_samples, spec.channels, spec.image_extent);
    let mut data = vec![0.0f32; n * c * e * e];
    let mut labels = Vec::with_capacity(n);
    let mut plane = vec![0.0f32; e * e];
    for i in 0..n {
        let label = i % spec.n_classes;
        labels.push(label);
        let class = &spec.classes[label];
        let draw = shapes::draw_sample_params(&spec.shift, &mut rng);
        shapes::render_into(
            &mut plane,
            e,
            class.shape,
            class.freq_band,
            spec.shift.freq_scale,
            &draw,
        );
        if spec.shift.noise_std > 0.0 {
            let mut noise = Tensor::zeros(&[e * e]);
            noise.fill_normal(spec.shift.noise_std, &mut rng);
            for (p, nz) in plane.iter_mut().zip(noise.data()) {
                *p = (*p + nz).clamp(0.0, 1.0);
            }
        }
        let base = i * c * e * e;
        for ch in 0..c {
            data[base + ch * e * e..base + (ch + 1) * e * e].copy_from_slice(&plane);
        }
    }
    let images = Tensor::new(&[n, c, e, e], data)?;
    let task = TaskSpec {
        domain: spec.clone(),
        classes: spec.n_classes,
        images,
        labels,
        train: (0..n).collect(),
        val: Vec::new(),
    };
    task.validate()?;
    Ok(task)
}

/// Re-partitions a task into stratified train/val splits covering the union
/// of its current splits. Per class, `round(count * val_fraction)` samples
/// (at least 1, at most count-1) go to validation.
pub fn split(task: TaskSpec, val_fraction: f64, rng: &mut impl Rng) -> Result<TaskSpec> {
    if !(0.0 < val_fraction && val_fraction < 1.0) {
        return Err(Error::contract(format!(
            "val_fraction {val_fraction} outside (0, 1)"
        )));
    }
    task.validate()?;
    let mut pool: Vec<usize> = task.train.iter().chain(&task.val).copied().collect();
    pool.sort_unstable();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); task.classes];
    for &i in &pool {
        by_class[task.labels[i]].push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::contract(format!(
                "class {class} has {} sample(s); need >= 2 to split",
                members.len()
            )));
        }
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        let n_val = ((members.len() as f64 * val_fraction).round() as usize)
            .clamp(1, members.len() - 1);
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    let out = TaskSpec {
        train,
        val,
        ..task
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn tiny_spec(seed: u64) -> DomainSpec {
        DomainSpec {
            kind: DomainKind::SyntheticShapes,
            image_extent: 16,
            channels: 1,
            n_classes: 3,
            n_samples: 30,
            seed,
            shift: ShiftParams::default(),
            classes: vec![
                ClassDef { shape: ShapeKind::Disk, freq_band: 0.0 },
                ClassDef { shape: ShapeKind::Square, freq_band: 3.0 },
                ClassDef { shape: ShapeKind::Cross, freq_band: 0.0 },
            ],
        }
    }

    #[test]
    fn same_spec_is_bit_identical() {
        let a = synth_task(&tiny_spec(11)).unwrap();
        let b = synth_task(&tiny_spec(11)).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
        let c = synth_task(&tiny_spec(12)).unwrap();
        assert_ne!(a.images.data(), c.images.data());
    }

    #[test]
    fn labels_cycle_and_balance() {
        let task = synth_task(&tiny_spec(1)).unwrap();
        assert_eq!(task.labels[..6], [0, 1, 2, 0, 1, 2]);
        assert_eq!(task.class_counts(), vec![10, 10, 10]);
        assert_eq!(task.train.len(), 30);
        assert!(task.val.is_empty());
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let mut spec = tiny_spec(2);
        spec.shift.noise_std = 0.3;
        let task = synth_task(&spec).unwrap();
        assert!(task
            .images
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn multichannel_replicates_planes() {
        let mut spec = tiny_spec(3);
        spec.channels = 3;
        let task = synth_task(&spec).unwrap();
        let e = spec.image_extent;
        let row = 3 * e * e;
        let img = &task.images.data()[..row];
        assert_eq!(img[..e * e], img[e * e..2 * e * e]);
        assert_eq!(img[..e * e], img[2 * e * e..]);
    }

    #[test]
    fn split_is_stratified_and_exhaustive() {
        let mut spec = tiny_spec(4);
        spec.n_samples = 100;
        spec.n_classes = 5;
        spec.classes = vec![
            ClassDef { shape: ShapeKind::Disk, freq_band: 0.0 },
            ClassDef { shape: ShapeKind::Square, freq_band: 0.0 },
            ClassDef { shape: ShapeKind::Diamond, freq_band: 0.0 },
            ClassDef { shape: ShapeKind::Triangle, freq_band: 0.0 },
            ClassDef { shape: ShapeKind::Annulus, freq_band: 0.0 },
        ];
        let task = synth_task(&spec).unwrap();
        let mut rng = derive_rng(4, "split-test");
        let task = split(task, 0.2, &mut rng).unwrap();
        assert_eq!(task.val.len(), 20);
        assert_eq!(task.train.len(), 80);
        for class in 0..5 {
            let in_val = task.val.iter().filter(|&&i| task.labels[i] == class).count();
            assert_eq!(in_val, 4, "class {class}");
        }
        let mut union: Vec<usize> = task.train.iter().chain(&task.val).copied().collect();
        union.sort_unstable();
        assert_eq!(union, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_same_seed_is_identical() {
        let task = synth_task(&tiny_spec(5)).unwrap();
        let a = split(task.clone(), 0.25, &mut derive_rng(7, "s")).unwrap();
        let b = split(task.clone(), 0.25, &mut derive_rng(7, "s")).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        let c = split(task, 0.25, &mut derive_rng(8, "s")).unwrap();
        assert_ne!(a.val, c.val);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let task = synth_task(&tiny_spec(6)).unwrap();
        assert!(split(task.clone(), 0.0, &mut derive_rng(1, "s")).is_err());
        assert!(split(task.clone(), 1.0, &mut derive_rng(1, "s")).is_err());
        let mut tiny = tiny_spec(6);
        tiny.n_samples = 4; // class 0 gets 2 samples, classes 1/2 get 1 each
        let task = synth_task(&tiny).unwrap();
        assert!(split(task, 0.5, &mut derive_rng(1, "s")).is_err());
    }

    #[test]
    fn batch_gathers_rows() {
        let task = synth_task(&tiny_spec(7)).unwrap();
        let (images, labels) = task.batch(&[3, 0]).unwrap();
        assert_eq!(images.shape(), &[2, 1, 16, 16]);
        assert_eq!(labels, vec![0, 0]);
        let row = 16 * 16;
        assert_eq!(images.data()[..row], task.images.data()[3 * row..4 * row]);
        assert!(task.batch(&[]).is_err());
        assert!(task.batch(&[99]).is_err());
    }

    #[test]
    fn spec_validation_rejects_bad_shift() {
        let mut spec = tiny_spec(8);
        spec.shift.scale = (0.8, 0.5);
        assert!(synth_task(&spec).is_err());
        let mut spec = tiny_spec(8);
        spec.shift.rotation = (1.0, -1.0);
        assert!(synth_task(&spec).is_err());
        let mut spec = tiny_spec(8);
        spec.classes.pop();
        assert!(synth_task(&spec).is_err());
    }
}
