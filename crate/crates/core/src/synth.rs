//! Longitudinal ultrasound-like phantom exams with known probe poses.
//!
//! Each leg has a fixed anatomy: a subcutaneous band, the rectus femoris
//! cross-section as an elliptical region with a bright fascia rim, a second
//! muscle beneath it, and the femur echo with its acoustic shadow. A probe
//! sweep moves along the thigh: translation shifts both muscles laterally (in
//! opposite directions) and tapers the rectus femoris, while tilt rotates the
//! scene. Exams at T2/T3 shrink the rectus femoris by the atrophy factors.

use std::f32::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_json, Dataset, ExamId, ExamSequence, ExamTime, GroundTruth, Leg, Pose};
use crate::error::{Error, Result};
use crate::frame::{Frame, FRAME_SIZE};
use crate::rng::Rng;

pub const TRANSLATION_WEIGHT: f32 = 1.0;
pub const ROTATION_WEIGHT: f32 = 2.0;
pub const POSE_BUCKET_WIDTH_PX: f32 = 4.0;
/// Consecutive frames annotated as the reference view.
pub const VIEWS_PER_EXAM: usize = 3;

/// Lateral shift of the rectus femoris per pixel of probe translation.
const RF_SHIFT: f32 = 1.0;
/// Lateral shift of the deeper muscle per pixel of probe translation.
const VI_SHIFT: f32 = -0.6;
/// Relative change of the rectus femoris area per pixel of translation.
const RF_TAPER: f32 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub patients: usize,
    pub frames_per_exam: usize,
    /// Rectus femoris area at T1 (cm^2), drawn uniformly per leg from this
    /// closed range.
    pub base_area_cm2: [f32; 2],
    /// Major/minor axis ratio range of the rectus femoris ellipse.
    pub aspect_ratio: [f32; 2],
    /// Area multipliers at T2 and T3.
    pub atrophy: [f32; 2],
    /// Half-range of the probe translation sweep (pixels).
    pub sweep_translation_px: f32,
    /// Half-range of the probe tilt (degrees).
    pub sweep_rotation_deg: f32,
    /// Amplitude of the multiplicative speckle in [0, 1).
    pub speckle: f32,
    /// Per-exam gain drawn from `1 +- gain_jitter`.
    pub gain_jitter: f32,
    pub pixel_spacing_cm: f64,
    /// Set from the run-level seed, not read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            patients: 40,
            frames_per_exam: 60,
            base_area_cm2: [7.0, 10.0],
            aspect_ratio: [1.4, 1.9],
            atrophy: [0.85, 0.7],
            sweep_translation_px: 20.0,
            sweep_rotation_deg: 3.0,
            speckle: 0.3,
            gain_jitter: 0.1,
            pixel_spacing_cm: 0.1,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.patients == 0 {
            return bad("patients must be at least 1".into());
        }
        if self.frames_per_exam < VIEWS_PER_EXAM {
            return bad(format!("frames_per_exam must be at least {VIEWS_PER_EXAM}"));
        }
        let [lo, hi] = self.base_area_cm2;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("base_area_cm2 must be a positive range, got {:?}", self.base_area_cm2));
        }
        let [alo, ahi] = self.aspect_ratio;
        if !(alo >= 1.0 && alo <= ahi) {
            return bad(format!("aspect_ratio must be a range >= 1, got {:?}", self.aspect_ratio));
        }
        let [t2, t3] = self.atrophy;
        if !(t2 > 0.0 && t2 <= 1.0 && t3 > 0.0 && t3 <= t2) {
            return bad(format!("atrophy needs 0 < T3 <= T2 <= 1, got {:?}", self.atrophy));
        }
        if !(self.sweep_translation_px >= 0.0 && self.sweep_rotation_deg >= 0.0) {
            return bad("sweep ranges must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.speckle) || !(0.0..1.0).contains(&self.gain_jitter) {
            return bad("speckle and gain_jitter must be in [0, 1)".into());
        }
        if !(self.pixel_spacing_cm > 0.0) {
            return bad("pixel_spacing_cm must be positive".into());
        }
        // The major axis of the largest ellipse must span under 80% of the frame.
        let side_cm = FRAME_SIZE as f32 * self.pixel_spacing_cm as f32;
        let semi_major = (hi * ahi / PI).sqrt();
        if 2.0 * semi_major > 0.8 * side_cm {
            return bad("base_area_cm2 too large for the frame".into());
        }
        Ok(())
    }

    pub fn area_multiplier(&self, time: ExamTime) -> f32 {
        match time {
            ExamTime::T1 => 1.0,
            ExamTime::T2 => self.atrophy[0],
            ExamTime::T3 => self.atrophy[1],
        }
    }
}

const ANATOMY_STREAM: u64 = 0x414e_4154;
const EXAM_STREAM: u64 = 0x4558_414d;

/// Fixed per-leg anatomy, in pixels relative to the frame center.
#[derive(Clone, Copy, Debug)]
struct Anatomy {
    area_px: f32,
    aspect: f32,
    rf_x: f32,
    rf_y: f32,
    rf_tilt: f32,
    vi_x: f32,
    vi_y: f32,
    vi_a: f32,
    vi_b: f32,
    skin: f32,
    femur_y: f32,
    femur_curve: f32,
}

impl Anatomy {
    fn draw(cfg: &PhantomConfig, patient: u32, leg: Leg) -> Self {
        let mut rng = Rng::stream(cfg.seed, &[ANATOMY_STREAM, patient as u64, leg as u64]);
        let [lo, hi] = cfg.base_area_cm2;
        let area_cm2 = if hi > lo { rng.uniform_range(lo, hi) } else { lo };
        let [alo, ahi] = cfg.aspect_ratio;
        let aspect = if ahi > alo { rng.uniform_range(alo, ahi) } else { alo };
        let px_area = (cfg.pixel_spacing_cm * cfg.pixel_spacing_cm) as f32;
        Self {
            area_px: area_cm2 / px_area,
            aspect,
            rf_x: rng.uniform_range(-3.0, 3.0),
            rf_y: rng.uniform_range(-7.0, -4.0),
            rf_tilt: rng.uniform_range(-0.15, 0.15),
            vi_x: rng.uniform_range(-4.0, 4.0),
            vi_y: rng.uniform_range(14.0, 16.0),
            vi_a: rng.uniform_range(14.0, 18.0),
            vi_b: rng.uniform_range(4.0, 5.0),
            skin: rng.uniform_range(-27.0, -24.0),
            femur_y: rng.uniform_range(22.0, 25.0),
            femur_curve: rng.uniform_range(0.004, 0.012),
        }
    }
}

/// Rectus femoris ellipse at a given translation and exam time:
/// center, semi-axes and tilt.
#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f32,
    cy: f32,
    a: f32,
    b: f32,
    tilt: f32,
}

impl Ellipse {
    /// Implicit value: < 1 inside, 1 on the boundary.
    fn level(&self, x: f32, y: f32) -> f32 {
        let (s, c) = self.tilt.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

fn rf_ellipse(anat: &Anatomy, multiplier: f32, t: f32) -> Ellipse {
    let area = anat.area_px * multiplier * (1.0 - RF_TAPER * t).max(0.2);
    let b = (area / (PI * anat.aspect)).sqrt();
    Ellipse {
        cx: anat.rf_x + RF_SHIFT * t,
        cy: anat.rf_y,
        a: b * anat.aspect,
        b,
        tilt: anat.rf_tilt,
    }
}

/// Clean echo intensity at anatomy coordinates `(x, y)`.
fn intensity(anat: &Anatomy, rf: &Ellipse, vi: &Ellipse, x: f32, y: f32) -> f32 {
    let femur_top = anat.femur_y + anat.femur_curve * x * x;
    if y > femur_top + 2.0 {
        return 0.04;
    }
    if y > femur_top {
        return 0.95;
    }
    if y < anat.skin {
        return 0.45;
    }
    if y < anat.skin + 1.5 {
        return 0.8;
    }
    let rim = |e: &Ellipse| {
        let l = e.level(x, y).sqrt();
        (l - 1.0).abs() * e.b < 1.0
    };
    if rim(rf) {
        return 0.85;
    }
    if rf.level(x, y) < 1.0 {
        return 0.32;
    }
    if rim(vi) {
        return 0.7;
    }
    if vi.level(x, y) < 1.0 {
        return 0.22;
    }
    0.5
}

fn pose_distance(p: &Pose) -> f32 {
    TRANSLATION_WEIGHT * p.translation_px.abs() + ROTATION_WEIGHT * p.angle_deg.abs()
}

/// Index of the pose closest to the canonical pose (first on ties).
pub fn reference_index(poses: &[Pose]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, p) in poses.iter().enumerate() {
        let d = pose_distance(p);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// The annotated window of consecutive frames centered on `reference`.
pub fn view_window(reference: usize, frames: usize) -> Vec<usize> {
    let n = VIEWS_PER_EXAM.min(frames);
    let start = reference.saturating_sub(n / 2).min(frames - n);
    (start..start + n).collect()
}

/// Translation-only bucket index. The annotated window stays inside one
/// bucket while `2.5 * 2 * sweep_translation_px / (frames_per_exam - 1)` is
/// below half the bucket width, which the default sweep satisfies.
pub fn pose_bucket(p: &Pose, width_px: f32) -> i64 {
    (p.translation_px / width_px).round() as i64
}

fn render(
    anat: &Anatomy,
    multiplier: f32,
    pose: &Pose,
    speckle: f32,
    gain: f32,
    noise: &mut Rng,
) -> Result<(Frame, Frame)> {
    let n = FRAME_SIZE;
    let center = (n as f32 - 1.0) / 2.0;
    let rf = rf_ellipse(anat, multiplier, pose.translation_px);
    let vi = Ellipse {
        cx: anat.vi_x + VI_SHIFT * pose.translation_px,
        cy: anat.vi_y,
        a: anat.vi_a,
        b: anat.vi_b,
        tilt: 0.0,
    };
    let (s, c) = pose.angle_deg.to_radians().sin_cos();
    // Image point -> anatomy point: rotate by -angle about the center.
    let to_anat = |x: f32, y: f32| {
        let (dx, dy) = (x - center, y - center);
        (c * dx + s * dy, -s * dx + c * dy)
    };
    let mut clean = vec![0.0f32; n * n];
    let mut mask = vec![0.0f32; n * n];
    const SUB: [f32; 2] = [-0.25, 0.25];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for oy in SUB {
                for ox in SUB {
                    let (ax, ay) = to_anat(x as f32 + ox, y as f32 + oy);
                    acc += intensity(anat, &rf, &vi, ax, ay);
                }
            }
            clean[y * n + x] = acc / 4.0;
            let (ax, ay) = to_anat(x as f32, y as f32);
            if rf.level(ax, ay) < 1.0 {
                mask[y * n + x] = 1.0;
            }
        }
    }
    let pixels = if speckle > 0.0 {
        let m = n + 2;
        let field: Vec<f32> = (0..m * m).map(|_| noise.uniform()).collect();
        let mut out = vec![0.0f32; n * n];
        for y in 0..n {
            for x in 0..n {
                let mut s = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += field[(y + dy) * m + x + dx];
                    }
                }
                // Box-smoothed uniform noise has mean 0.5 and std ~0.096;
                // rescale to unit spread before applying the amplitude.
                let z = (s / 9.0 - 0.5) / 0.0962;
                let factor = 1.0 + speckle * z;
                out[y * n + x] = (gain * clean[y * n + x] * factor).clamp(0.0, 1.0);
            }
        }
        out
    } else {
        clean.iter().map(|v| (gain * v).clamp(0.0, 1.0)).collect()
    };
    let frame = Frame::new(n, n, pixels)?.quantized();
    Ok((frame, Frame::new(n, n, mask)?))
}

/// Generates one exam with its masks, annotations and ground truth.
pub fn generate_exam(patient: u32, leg: Leg, time: ExamTime, cfg: &PhantomConfig) -> Result<ExamSequence> {
    cfg.validate()?;
    let anat = Anatomy::draw(cfg, patient, leg);
    let mut rng = Rng::stream(
        cfg.seed,
        &[EXAM_STREAM, patient as u64, leg as u64, time as u64],
    );
    let f = cfg.frames_per_exam;
    let r = cfg.sweep_translation_px;
    let q = cfg.sweep_rotation_deg;
    let t_offset = rng.uniform_range(-0.25, 0.25) * r;
    let a_offset = rng.uniform_range(-0.5, 0.5) * q;
    let a_slope = rng.uniform_range(-0.5, 0.5) * q;
    let direction = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
    let gain = 1.0 + rng.uniform_range(-1.0, 1.0) * cfg.gain_jitter;
    let poses: Vec<Pose> = (0..f)
        .map(|k| {
            let s = if f > 1 { 2.0 * k as f32 / (f - 1) as f32 - 1.0 } else { 0.0 };
            Pose {
                translation_px: t_offset + direction * r * s,
                angle_deg: a_offset + a_slope * s,
            }
        })
        .collect();
    let reference = reference_index(&poses).expect("at least one frame");
    let multiplier = cfg.area_multiplier(time);
    let mut frames = Vec::with_capacity(f);
    let mut masks = Vec::with_capacity(f);
    for p in &poses {
        let (fr, m) = render(&anat, multiplier, p, cfg.speckle, gain, &mut rng)?;
        frames.push(fr);
        masks.push(m);
    }
    Ok(ExamSequence {
        id: ExamId { patient, leg, time },
        frames,
        masks,
        annotated_view_indices: view_window(reference, f),
        pixel_spacing_cm: [cfg.pixel_spacing_cm; 2],
        gain,
        ground_truth: Some(GroundTruth {
            poses,
            reference_index: reference,
            translation_weight: TRANSLATION_WEIGHT,
            rotation_weight: ROTATION_WEIGHT,
            pose_bucket_width_px: POSE_BUCKET_WIDTH_PX,
        }),
    })
}

/// Analytic rectus femoris area (cm^2) of a leg at a pose and exam time.
pub fn analytic_area_cm2(cfg: &PhantomConfig, patient: u32, leg: Leg, time: ExamTime, pose: &Pose) -> f64 {
    let anat = Anatomy::draw(cfg, patient, leg);
    let e = rf_ellipse(&anat, cfg.area_multiplier(time), pose.translation_px);
    (PI * e.a * e.b) as f64 * cfg.pixel_spacing_cm * cfg.pixel_spacing_cm
}

/// All exams of all patients, generated in parallel (output does not depend
/// on the worker count).
pub fn generate_in_memory(cfg: &PhantomConfig) -> Result<Dataset> {
    cfg.validate()?;
    let ids: Vec<ExamId> = (0..cfg.patients as u32)
        .flat_map(|patient| {
            Leg::ALL.into_iter().flat_map(move |leg| {
                ExamTime::ALL
                    .into_iter()
                    .map(move |time| ExamId { patient, leg, time })
            })
        })
        .collect();
    let exams = ids
        .par_iter()
        .map(|id| generate_exam(id.patient, id.leg, id.time, cfg))
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_exams(exams)
}

/// Generates the dataset and writes it under `root`, with the effective
/// configuration in `root/dataset.json`.
pub fn generate_dataset(cfg: &PhantomConfig, root: &Path) -> Result<Dataset> {
    let data = generate_in_memory(cfg)?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    data.write(root)?;
    #[derive(Serialize)]
    struct Echo<'a> {
        seed: u64,
        phantom: &'a PhantomConfig,
    }
    write_json(
        &root.join("dataset.json"),
        &Echo {
            seed: cfg.seed,
            phantom: cfg,
        },
    )?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_window_clamps() {
        assert_eq!(view_window(0, 60), vec![0, 1, 2]);
        assert_eq!(view_window(30, 60), vec![29, 30, 31]);
        assert_eq!(view_window(59, 60), vec![57, 58, 59]);
    }

    #[test]
    fn reference_first_on_ties() {
        let p = |t| Pose {
            translation_px: t,
            angle_deg: 0.0,
        };
        assert_eq!(reference_index(&[p(2.0), p(-1.0), p(1.0)]), Some(1));
    }

    #[test]
    fn validation() {
        let mut c = PhantomConfig::default();
        assert!(c.validate().is_ok());
        c.atrophy = [0.7, 0.8];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
