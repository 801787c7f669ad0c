//! One parameterized corruption per artifact category. Every injector writes
//! only inside the mask it returns.

use std::f32::consts::PI;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mask::RegionMask;
use super::scene::{check_size, dist, to_rgb, Limb, Point, SceneLayout, SynthFrame};
use crate::error::{Error, Result};
use crate::labels::ArtifactLabel;

fn check_intensity(intensity: f32) -> Result<()> {
    if !(intensity.is_finite() && intensity > 0.0 && intensity <= 1.0) {
        return Err(Error::Parameter(format!("intensity must lie in (0, 1], got {intensity}")));
    }
    Ok(())
}

fn check_inputs(frame: &SynthFrame, intensity: f32) -> Result<()> {
    check_intensity(intensity)?;
    check_size(frame.image.width(), frame.image.height())?;
    if frame.image.dimensions() != (frame.layout.width, frame.layout.height) {
        return Err(Error::Parameter("image and layout dimensions disagree".into()));
    }
    Ok(())
}

fn center(x: u32, y: u32) -> Point {
    (x as f32 + 0.5, y as f32 + 0.5)
}

fn changed_inside(before: &RgbImage, after: &RgbImage, mask: &RegionMask) -> bool {
    before
        .enumerate_pixels()
        .any(|(x, y, p)| mask.get(x, y) && after.get_pixel(x, y) != p)
}

/// Replaces masked pixels with a fresh render of `layout`.
fn rerender_inside(image: &RgbImage, layout: &SceneLayout, mask: &RegionMask) -> RgbImage {
    let mut out = image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if mask.get(x, y) {
            *p = layout.pixel(x, y);
        }
    }
    out
}

fn no_effect(label: ArtifactLabel) -> Error {
    Error::Parameter(format!("{label} injection produced no visible change"))
}

/// Blurs or stair-steps an arc of the foreground outline.
pub fn inject_boundary_defect(frame: &SynthFrame, intensity: f32, seed: u64) -> Result<(SynthFrame, RegionMask)> {
    check_inputs(frame, intensity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = &frame.layout;
    let s = layout.scale();
    let object = &layout.object;
    let band = (1.5 + 2.5 * intensity) * s;
    let start = rng.random_range(0.0..2.0 * PI);
    let span = (0.5 + intensity) * PI;
    let blur_first = rng.random_bool(0.5);

    let (w, h) = frame.image.dimensions();
    let mask = RegionMask::from_fn(w, h, ArtifactLabel::BoundaryEdge, |x, y| {
        let p = center(x, y);
        if object.boundary_distance(p).abs() > band {
            return false;
        }
        let angle = (p.1 - object.center.1).atan2(p.0 - object.center.0);
        (angle - start).rem_euclid(2.0 * PI) <= span
    });

    let src = &frame.image;
    let blur = |radius: i64| {
        let mut out = src.clone();
        for (x, y, px) in out.enumerate_pixels_mut() {
            if !mask.get(x, y) {
                continue;
            }
            let mut acc = [0u32; 3];
            let mut n = 0u32;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                        let q = src.get_pixel(nx as u32, ny as u32);
                        for c in 0..3 {
                            acc[c] += q[c] as u32;
                        }
                        n += 1;
                    }
                }
            }
            *px = Rgb(acc.map(|a| ((a + n / 2) / n) as u8));
        }
        out
    };
    let stair = |block: u32| {
        let mut out = src.clone();
        for (x, y, px) in out.enumerate_pixels_mut() {
            if mask.get(x, y) {
                *px = *src.get_pixel(x - x % block, y - y % block);
            }
        }
        out
    };
    let radius = 1 + (2.0 * intensity).round() as i64;
    let block = 2 + (3.0 * intensity).round() as u32;
    let (first, second) = if blur_first {
        (blur(radius), stair(block))
    } else {
        (stair(block), blur(radius))
    };
    let image = if changed_inside(src, &first, &mask) {
        first
    } else if changed_inside(src, &second, &mask) {
        second
    } else {
        return Err(no_effect(ArtifactLabel::BoundaryEdge));
    };
    Ok((
        SynthFrame {
            image,
            layout: layout.clone(),
        },
        mask,
    ))
}

/// Replaces a square background patch with a flat fill or with strong noise.
pub fn inject_texture_noise(frame: &SynthFrame, intensity: f32, seed: u64) -> Result<(SynthFrame, RegionMask)> {
    check_inputs(frame, intensity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = &frame.layout;
    let (w, h) = frame.image.dimensions();
    let size = (((0.14 + 0.16 * intensity) * w.min(h) as f32).round() as u32).max(4);

    let (fx0, fy0, fx1, fy1) = layout.figure.bounds();
    let clear = |x0: u32, y0: u32| {
        let (ax0, ay0) = (x0 as f32 - 1.0, y0 as f32 - 1.0);
        let (ax1, ay1) = (ax0 + size as f32 + 2.0, ay0 + size as f32 + 2.0);
        let hits_figure = ax0 < fx1 && ax1 > fx0 && ay0 < fy1 && ay1 > fy0;
        let o = &layout.object;
        let nx = o.center.0.clamp(ax0, ax1);
        let ny = o.center.1.clamp(ay0, ay1);
        let hits_object = dist((nx, ny), o.center) <= o.radius;
        !hits_figure && !hits_object
    };
    let mut candidates = Vec::with_capacity(64);
    for _ in 0..64 {
        candidates.push((rng.random_range(0..=w - size), rng.random_range(0..=h - size)));
    }
    let (x0, y0) = candidates
        .iter()
        .copied()
        .find(|&(x, y)| clear(x, y))
        .unwrap_or(candidates[0]);
    let flat = rng.random_bool(0.5);
    let amplitude = 50.0 + 70.0 * intensity;

    let mask = RegionMask::from_fn(w, h, ArtifactLabel::TextureNoise, |x, y| {
        x >= x0 && x < x0 + size && y >= y0 && y < y0 + size
    });
    let mut mean = [0f32; 3];
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            let p = frame.image.get_pixel(x, y);
            for c in 0..3 {
                mean[c] += p[c] as f32;
            }
        }
    }
    let mean = mean.map(|m| m / (size * size) as f32 / 255.0);

    let fill_flat = || {
        let mut out = frame.image.clone();
        for (x, y, p) in out.enumerate_pixels_mut() {
            if mask.get(x, y) {
                *p = to_rgb(mean);
            }
        }
        out
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut fill_noise = || {
        let mut out = frame.image.clone();
        for (x, y, p) in out.enumerate_pixels_mut() {
            if mask.get(x, y) {
                *p = to_rgb(mean.map(|m| m + noise_rng.random_range(-amplitude..=amplitude) / 255.0));
            }
        }
        out
    };
    let mut image = if flat { fill_flat() } else { fill_noise() };
    if !changed_inside(&frame.image, &image, &mask) {
        image = fill_noise();
        if !changed_inside(&frame.image, &image, &mask) {
            return Err(no_effect(ArtifactLabel::TextureNoise));
        }
    }
    Ok((
        SynthFrame {
            image,
            layout: layout.clone(),
        },
        mask,
    ))
}

fn limb_mask(w: u32, h: u32, label: ArtifactLabel, limbs: &[&Limb], reach: f32) -> RegionMask {
    RegionMask::from_fn(w, h, label, |x, y| {
        let p = center(x, y);
        limbs.iter().any(|l| l.distance(p) <= reach)
    })
}

fn rotate(v: Point, angle: f32) -> Point {
    let (s, c) = angle.sin_cos();
    (v.0 * c - v.1 * s, v.0 * s + v.1 * c)
}

/// Redraws the distal segment of one limb folded back at an impossible angle.
pub fn inject_joint_anomaly(frame: &SynthFrame, intensity: f32, seed: u64) -> Result<(SynthFrame, RegionMask)> {
    check_inputs(frame, intensity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layout = frame.layout.clone();
    let visible: Vec<usize> = (0..4).filter(|&i| layout.figure.limbs[i].visible).collect();
    if visible.is_empty() {
        return Err(Error::Parameter("figure has no visible limb to bend".into()));
    }
    let idx = visible[rng.random_range(0..visible.len())];
    let old = layout.figure.limbs[idx].clone();

    let upper = (old.joint.0 - old.root.0, old.joint.1 - old.root.1);
    let upper_len = dist(old.root, old.joint).max(1e-3);
    let lower_len = dist(old.joint, old.tip);
    let dir = (upper.0 / upper_len, upper.1 / upper_len);
    let bend = (110.0 + 60.0 * intensity).to_radians();
    let tips = [bend, -bend].map(|a| {
        let d = rotate(dir, a);
        (old.joint.0 + lower_len * d.0, old.joint.1 + lower_len * d.1)
    });
    // Fold toward the upper side so the segment points back up.
    let tip = if tips[0].1 <= tips[1].1 { tips[0] } else { tips[1] };
    let new = Limb { tip, ..old.clone() };
    layout.figure.limbs[idx] = new.clone();

    let (w, h) = frame.image.dimensions();
    let reach = layout.figure.thickness / 2.0 + 1.5 * layout.scale();
    let mask = limb_mask(w, h, ArtifactLabel::MovementJoint, &[&old, &new], reach);
    let image = rerender_inside(&frame.image, &layout, &mask);
    if !changed_inside(&frame.image, &image, &mask) {
        return Err(no_effect(ArtifactLabel::MovementJoint));
    }
    Ok((SynthFrame { image, layout }, mask))
}

/// Erases the head, erases a whole limb, or pastes a duplicate head somewhere
/// it does not belong. Erased parts are in-painted with the scene behind them.
pub fn inject_object_mismatch(frame: &SynthFrame, intensity: f32, seed: u64) -> Result<(SynthFrame, RegionMask)> {
    check_inputs(frame, intensity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layout = frame.layout.clone();
    let (w, h) = frame.image.dimensions();
    let s = layout.scale();
    let label = ArtifactLabel::ObjectMismatch;
    let pad = 1.5 * s;

    let visible_limbs: Vec<usize> = (0..4).filter(|&i| layout.figure.limbs[i].visible).collect();
    let head_intact = layout.figure.head_erased == 0.0;
    let mode = rng.random_range(0..3u32);
    let mask = match mode {
        0 if head_intact => {
            let fig = &mut layout.figure;
            let frac = 0.3 + 0.7 * intensity;
            fig.head_erased = frac;
            let (c, r) = (fig.head_center, fig.head_radius);
            let cut = c.1 - r + frac * 2.0 * r + pad;
            RegionMask::from_fn(w, h, label, |x, y| {
                let p = center(x, y);
                dist(p, c) <= r + pad && p.1 <= cut
            })
        }
        2 if !visible_limbs.is_empty() => {
            let idx = visible_limbs[rng.random_range(0..visible_limbs.len())];
            let old = layout.figure.limbs[idx].clone();
            layout.figure.limbs[idx].visible = false;
            let reach = layout.figure.thickness / 2.0 + pad;
            limb_mask(w, h, label, &[&old], reach)
        }
        _ => {
            let fig = &layout.figure;
            let r = fig.head_radius * (0.7 + 0.3 * intensity);
            let margin = r + pad + 1.0;
            let (fx0, fy0, fx1, fy1) = fig.bounds();
            let mut best: Option<(Point, f32)> = None;
            for _ in 0..64 {
                let p = (
                    rng.random_range(margin..w as f32 - margin),
                    rng.random_range(margin..h as f32 - margin),
                );
                let nx = p.0.clamp(fx0, fx1);
                let ny = p.1.clamp(fy0, fy1);
                let clearance = dist(p, (nx, ny)).min(dist(p, layout.object.center) - layout.object.radius);
                if best.is_none_or(|(_, c)| clearance > c) {
                    best = Some((p, clearance));
                }
                if clearance > 2.0 * r {
                    break;
                }
            }
            let (pos, _) = best.expect("at least one candidate");
            layout.figure.extra_heads.push((pos, r));
            RegionMask::from_fn(w, h, label, |x, y| dist(center(x, y), pos) <= r + pad)
        }
    };
    let image = rerender_inside(&frame.image, &layout, &mask);
    if !changed_inside(&frame.image, &image, &mask) {
        return Err(no_effect(label));
    }
    Ok((SynthFrame { image, layout }, mask))
}

/// Applies the injector for `label`.
pub fn inject(label: ArtifactLabel, frame: &SynthFrame, intensity: f32, seed: u64) -> Result<(SynthFrame, RegionMask)> {
    match label {
        ArtifactLabel::BoundaryEdge => inject_boundary_defect(frame, intensity, seed),
        ArtifactLabel::TextureNoise => inject_texture_noise(frame, intensity, seed),
        ArtifactLabel::MovementJoint => inject_joint_anomaly(frame, intensity, seed),
        ArtifactLabel::ObjectMismatch => inject_object_mismatch(frame, intensity, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::scene::{generate_base_frame, SceneKind};

    fn base(seed: u64) -> SynthFrame {
        generate_base_frame(SceneKind::Striped, seed, 64, 64).unwrap()
    }

    /// Brute-force check: every differing pixel lies inside the mask and at
    /// least one pixel differs.
    fn assert_local(before: &RgbImage, after: &RgbImage, mask: &RegionMask) {
        assert!(!mask.is_empty());
        let mut changed = 0;
        for y in 0..before.height() {
            for x in 0..before.width() {
                if before.get_pixel(x, y) != after.get_pixel(x, y) {
                    assert!(mask.get(x, y), "pixel ({x},{y}) changed outside the mask");
                    changed += 1;
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn locality_exhaustive() {
        for seed in 0..40u64 {
            let frame = base(seed);
            for label in ArtifactLabel::ALL {
                for intensity in [1e-6f32, 0.5, 1.0] {
                    let (out, mask) = inject(label, &frame, intensity, seed * 7 + 1).unwrap();
                    assert_eq!(mask.label, label);
                    assert_eq!(mask.dimensions(), (64, 64));
                    assert_local(&frame.image, &out.image, &mask);
                }
            }
        }
    }

    #[test]
    fn smallest_positive_intensity_still_has_effect() {
        let frame = base(5);
        for label in ArtifactLabel::ALL {
            let (out, mask) = inject(label, &frame, f32::MIN_POSITIVE, 3).unwrap();
            assert_local(&frame.image, &out.image, &mask);
        }
    }

    #[test]
    fn deterministic() {
        let frame = base(8);
        for label in ArtifactLabel::ALL {
            let a = inject(label, &frame, 0.7, 11).unwrap();
            let b = inject(label, &frame, 0.7, 11).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn intensity_range_enforced() {
        let frame = base(1);
        for bad in [0.0f32, -0.2, 1.5, f32::NAN] {
            for label in ArtifactLabel::ALL {
                assert!(matches!(inject(label, &frame, bad, 0), Err(Error::Parameter(_))));
            }
        }
    }

    #[test]
    fn joint_anomaly_points_back_up() {
        let frame = base(21);
        let (out, _) = inject_joint_anomaly(&frame, 1.0, 4).unwrap();
        let changed: Vec<_> = (0..4)
            .filter(|&i| out.layout.figure.limbs[i] != frame.layout.figure.limbs[i])
            .collect();
        assert_eq!(changed.len(), 1);
        let l = &out.layout.figure.limbs[changed[0]];
        assert!(l.tip.1 < l.joint.1, "distal segment should point upward");
    }

    #[test]
    fn chained_injections_stay_local() {
        let frame = base(13);
        let (a, ma) = inject_object_mismatch(&frame, 1.0, 1).unwrap();
        let (b, mb) = inject_joint_anomaly(&a, 1.0, 2).unwrap();
        assert_local(&a.image, &b.image, &mb);
        let mut union = ma.clone();
        union.union_with(&mb);
        for (x, y, p) in frame.image.enumerate_pixels() {
            if !union.get(x, y) {
                assert_eq!(p, b.image.get_pixel(x, y));
            }
        }
    }
}
