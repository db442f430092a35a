//! Parametric shape rendering. Classes are (shape, texture band) pairs;
//! images are soft-edged signed-distance-field rasterizations with a
//! sinusoidal grating applied inside the shape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ShiftParams;

/// Unit-radius shapes in object space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Disk,
    Square,
    Diamond,
    Triangle,
    Annulus,
    Cross,
}

/// Signed distance to the shape boundary at object-space point (x, y);
/// negative inside. Shapes have circumradius ~1.
fn sdf(kind: ShapeKind, x: f32, y: f32) -> f32 {
    match kind {
        ShapeKind::Disk => (x * x + y * y).sqrt() - 1.0,
        ShapeKind::Square => x.abs().max(y.abs()) - 0.82,
        ShapeKind::Diamond => (x.abs() + y.abs() - 1.0) * std::f32::consts::FRAC_1_SQRT_2,
        ShapeKind::Triangle => {
            // equilateral, apex up: intersection of three half-planes with
            // inradius 0.5 (outward normals at 270, 30 and 150 degrees)
            let e0 = -y - 0.5;
            let e1 = 0.866_025_4 * x + 0.5 * y - 0.5;
            let e2 = -0.866_025_4 * x + 0.5 * y - 0.5;
            e0.max(e1).max(e2)
        }
        ShapeKind::Annulus => ((x * x + y * y).sqrt() - 0.7).abs() - 0.3,
        ShapeKind::Cross => {
            // union of a horizontal and a vertical bar
            let (ax, ay) = (x.abs(), y.abs());
            let bar_h = (ay - 0.35).max(ax - 1.0);
            let bar_v = (ax - 0.35).max(ay - 1.0);
            bar_h.min(bar_v)
        }
    }
}

/// Per-sample nuisance parameters, all drawn from the dataset stream in a
/// fixed order so datasets are pure functions of their spec.
pub(crate) struct SampleDraw {
    pub rotation: f32,
    pub scale: f32,
    pub cx: f32,
    pub cy: f32,
    pub tex_theta: f32,
    pub tex_phase: f32,
}

pub(crate) fn draw_sample_params(shift: &ShiftParams, rng: &mut impl Rng) -> SampleDraw {
    let j = shift.center_jitter;
    SampleDraw {
        rotation: rng.gen_range(shift.rotation.0..=shift.rotation.1),
        scale: rng.gen_range(shift.scale.0..=shift.scale.1),
        cx: rng.gen_range(-j..=j),
        cy: rng.gen_range(-j..=j),
        tex_theta: rng.gen_range(0.0..=std::f32::consts::TAU),
        tex_phase: rng.gen_range(0.0..=std::f32::consts::TAU),
    }
}

/// Rasterizes one channel plane of `extent * extent` pixels. `freq_band` is
/// in texture cycles per object diameter (0 = solid fill); the background
/// stays 0.
pub(crate) fn render_into(
    out: &mut [f32],
    extent: usize,
    shape: ShapeKind,
    freq_band: f32,
    freq_scale: f32,
    draw: &SampleDraw,
) {
    debug_assert_eq!(out.len(), extent * extent);
    let e = extent as f32;
    let (sin_r, cos_r) = draw.rotation.sin_cos();
    let (sin_t, cos_t) = draw.tex_theta.sin_cos();
    let freq = freq_band * freq_scale;
    let edge = 2.0 / e; // ~one pixel of soft edge
    for yi in 0..extent {
        let py = (yi as f32 + 0.5) * 2.0 / e - 1.0 - draw.cy;
        for xi in 0..extent {
            let px = (xi as f32 + 0.5) * 2.0 / e - 1.0 - draw.cx;
            // rotate into object space and normalize by object scale
            let rx = (px * cos_r + py * sin_r) / draw.scale;
            let ry = (-px * sin_r + py * cos_r) / draw.scale;
            let d = sdf(shape, rx, ry) * draw.scale;
            let coverage = (0.5 - d / edge).clamp(0.0, 1.0);
            let value = if coverage == 0.0 {
                0.0
            } else if freq <= 0.0 {
                coverage
            } else {
                let t = rx * cos_t + ry * sin_t;
                let tex = 0.55
                    + 0.45 * (std::f32::consts::PI * freq * t + draw.tex_phase).sin();
                coverage * tex
            };
            out[yi * extent + xi] = value;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered_draw(scale: f32) -> SampleDraw {
        SampleDraw {
            rotation: 0.0,
            scale,
            cx: 0.0,
            cy: 0.0,
            tex_theta: 0.0,
            tex_phase: 0.0,
        }
    }

    #[test]
    fn sdf_signs_at_center_and_far_field() {
        for kind in [
            ShapeKind::Disk,
            ShapeKind::Square,
            ShapeKind::Diamond,
            ShapeKind::Triangle,
            ShapeKind::Annulus,
            ShapeKind::Cross,
        ] {
            // annulus center is a hole; everything else contains the origin
            let origin = sdf(kind, 0.0, 0.0);
            if kind == ShapeKind::Annulus {
                assert!(origin > 0.0, "{kind:?} center should be outside");
                assert!(sdf(kind, 0.7, 0.0) < 0.0);
            } else {
                assert!(origin < 0.0, "{kind:?} center should be inside");
            }
            assert!(sdf(kind, 3.0, 3.0) > 0.0, "{kind:?} far field");
        }
    }

    #[test]
    fn disk_area_fraction_matches_geometry() {
        let e = 64;
        let mut img = vec![0.0; e * e];
        render_into(&mut img, e, ShapeKind::Disk, 0.0, 1.0, &centered_draw(0.6));
        let mean: f32 = img.iter().sum::<f32>() / (e * e) as f32;
        // disk of radius 0.6 in a [-1,1] frame covers pi*0.36/4 of the image
        let want = std::f32::consts::PI * 0.36 / 4.0;
        assert!((mean - want).abs() < 0.01, "mean {mean} want {want}");
        // solid fill: interior is exactly 1
        assert_eq!(img[e / 2 * e + e / 2], 1.0);
        assert_eq!(img[0], 0.0);
    }

    #[test]
    fn texture_modulates_interior() {
        let e = 32;
        let mut solid = vec![0.0; e * e];
        let mut banded = vec![0.0; e * e];
        render_into(&mut solid, e, ShapeKind::Disk, 0.0, 1.0, &centered_draw(0.7));
        render_into(&mut banded, e, ShapeKind::Disk, 4.0, 1.0, &centered_draw(0.7));
        let interior: Vec<usize> = (0..e * e)
            .filter(|i| {
                let (y, x) = (i / e, i % e);
                let py = (y as f32 + 0.5) * 2.0 / e as f32 - 1.0;
                let px = (x as f32 + 0.5) * 2.0 / e as f32 - 1.0;
                (px * px + py * py).sqrt() < 0.5
            })
            .collect();
        assert!(interior.iter().all(|&i| solid[i] == 1.0));
        let lo = interior.iter().map(|&i| banded[i]).fold(f32::MAX, f32::min);
        let hi = interior.iter().map(|&i| banded[i]).fold(f32::MIN, f32::max);
        assert!(lo < 0.25, "banded interior should dip low, min {lo}");
        assert!(hi > 0.9, "banded interior should peak high, max {hi}");
        // frequency scale shifts the pattern
        let mut scaled = vec![0.0; e * e];
        render_into(&mut scaled, e, ShapeKind::Disk, 4.0, 1.5, &centered_draw(0.7));
        assert_ne!(banded, scaled);
    }

    #[test]
    fn rotation_moves_anisotropic_shapes_only() {
        let e = 32;
        let rotated = SampleDraw {
            rotation: 0.7,
            ..centered_draw(0.6)
        };
        let mut a = vec![0.0; e * e];
        let mut b = vec![0.0; e * e];
        render_into(&mut a, e, ShapeKind::Triangle, 0.0, 1.0, &centered_draw(0.6));
        render_into(&mut b, e, ShapeKind::Triangle, 0.0, 1.0, &rotated);
        assert_ne!(a, b);
        render_into(&mut a, e, ShapeKind::Disk, 0.0, 1.0, &centered_draw(0.6));
        render_into(&mut b, e, ShapeKind::Disk, 0.0, 1.0, &rotated);
        let max_diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        // soft-edge coverage divides by one pixel width, amplifying f32
        // rounding of the rotated coordinates
        assert!(max_diff < 1e-5, "disk is rotation invariant, diff {max_diff}");
    }
}
