//! Canned source/target domain pairs. Sources are always at least 10x the
//! target size; targets differ from their source in label space, nuisance
//! distribution, or both.

use super::{ClassDef, DomainKind, DomainSpec, ShapeKind, ShiftParams};
use crate::rng::derive_seed;

const EXTENT: usize = 32;
const PI: f32 = std::f32::consts::PI;

fn synthetic(
    n_samples: usize,
    seed: u64,
    shift: ShiftParams,
    classes: Vec<ClassDef>,
) -> DomainSpec {
    DomainSpec {
        kind: DomainKind::SyntheticShapes,
        image_extent: EXTENT,
        channels: 1,
        n_classes: classes.len(),
        n_samples,
        seed,
        shift,
        classes,
    }
}

fn grid(shapes: &[ShapeKind], bands: &[f32]) -> Vec<ClassDef> {
    shapes
        .iter()
        .flat_map(|&shape| bands.iter().map(move |&freq_band| ClassDef { shape, freq_band }))
        .collect()
}

/// Full-size reference pair: 20,000-sample / 8-class source, 1,000-sample /
/// 4-class target on disjoint shapes with rotated, shrunken, noisier
/// renderings (label-space plus covariate shift).
pub fn default_pair(seed: u64) -> (DomainSpec, DomainSpec) {
    let source = synthetic(
        20_000,
        derive_seed(seed, "preset/default/source"),
        ShiftParams {
            rotation: (-PI / 6.0, PI / 6.0),
            scale: (0.5, 0.75),
            freq_scale: 1.0,
            center_jitter: 0.1,
            noise_std: 0.02,
        },
        grid(
            &[ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Diamond],
            &[0.0, 3.0],
        ),
    );
    let target = synthetic(
        1_000,
        derive_seed(seed, "preset/default/target"),
        ShiftParams {
            rotation: (PI / 6.0, PI / 2.0),
            scale: (0.35, 0.55),
            freq_scale: 1.25,
            center_jitter: 0.15,
            noise_std: 0.05,
        },
        grid(&[ShapeKind::Annulus, ShapeKind::Cross], &[0.0, 4.0]),
    );
    (source, target)
}

/// Same label space on both sides, shifted nuisances only: rotated further,
/// smaller and noisier on the target. A source-only model should degrade on
/// the target validation set.
pub fn covariate_shift_pair(seed: u64) -> (DomainSpec, DomainSpec) {
    let classes = || {
        grid(
            &[ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Cross],
            &[0.0],
        )
    };
    let source = synthetic(
        1_500,
        derive_seed(seed, "preset/covariate/source"),
        ShiftParams {
            rotation: (-PI / 8.0, PI / 8.0),
            scale: (0.55, 0.75),
            freq_scale: 1.0,
            center_jitter: 0.08,
            noise_std: 0.02,
        },
        classes(),
    );
    let target = synthetic(
        150,
        derive_seed(seed, "preset/covariate/target"),
        ShiftParams {
            rotation: (PI / 4.0, 3.0 * PI / 4.0),
            scale: (0.35, 0.5),
            freq_scale: 1.0,
            center_jitter: 0.15,
            noise_std: 0.08,
        },
        classes(),
    );
    (source, target)
}

/// Desk-scale pair whose source and target reward different stages: the
/// source separates by global shape (with coarse textures mixed in), while
/// the target's classes share one shape and differ only in texture
/// frequency, which demands early-stage (high-resolution) capacity.
pub fn stage_biased_pair(seed: u64) -> (DomainSpec, DomainSpec) {
    let source = synthetic(
        2_000,
        derive_seed(seed, "preset/stage-biased/source"),
        ShiftParams {
            rotation: (-PI / 6.0, PI / 6.0),
            scale: (0.5, 0.7),
            freq_scale: 1.0,
            center_jitter: 0.08,
            noise_std: 0.02,
        },
        grid(
            &[ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Cross],
            &[0.0, 3.0],
        ),
    );
    let target = synthetic(
        200,
        derive_seed(seed, "preset/stage-biased/target"),
        ShiftParams {
            rotation: (-PI, PI),
            scale: (0.55, 0.65),
            freq_scale: 1.0,
            center_jitter: 0.06,
            noise_std: 0.03,
        },
        grid(&[ShapeKind::Disk], &[1.5, 3.0, 4.5, 6.0]),
    );
    (source, target)
}
