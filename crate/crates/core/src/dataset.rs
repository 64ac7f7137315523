//! Exam sequences and the on-disk dataset layout.
//!
//! ```text
//! root/patient_NNN/leg_{L|R}/exam_{T1|T2|T3}/
//!     frames/frame_%04d.pgm   8-bit P5 frames
//!     masks/frame_%04d.pgm    binary cross-section masks (0 / 255)
//!     annotations.json        annotated reference-view frame indices
//!     meta.json               pixel spacing, gain, frame count
//!     ground_truth.json       probe poses and reference index (synthetic data)
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::pgm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Leg {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Leg {
    pub const ALL: [Leg; 2] = [Leg::Left, Leg::Right];

    pub fn code(self) -> &'static str {
        match self {
            Leg::Left => "L",
            Leg::Right => "R",
        }
    }
}

/// Exam label: ICU admission, mid-stay, discharge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExamTime {
    T1,
    T2,
    T3,
}

impl ExamTime {
    pub const ALL: [ExamTime; 3] = [ExamTime::T1, ExamTime::T2, ExamTime::T3];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ExamTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExamId {
    pub patient: u32,
    pub leg: Leg,
    pub time: ExamTime,
}

impl ExamId {
    pub fn relative_dir(&self) -> PathBuf {
        PathBuf::from(format!("patient_{:03}", self.patient))
            .join(format!("leg_{}", self.leg.code()))
            .join(format!("exam_{}", self.time))
    }
}

/// A single frame within the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub exam: ExamId,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation_px: f32,
    pub angle_deg: f32,
}

/// Synthetic ground truth for one exam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub poses: Vec<Pose>,
    pub reference_index: usize,
    pub translation_weight: f32,
    pub rotation_weight: f32,
    pub pose_bucket_width_px: f32,
}

/// Ordered frames of one patient/leg/exam-time with annotated view indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ExamSequence {
    pub id: ExamId,
    pub frames: Vec<Frame>,
    pub masks: Vec<Frame>,
    pub annotated_view_indices: Vec<usize>,
    pub pixel_spacing_cm: [f64; 2],
    pub gain: f32,
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationsFile {
    annotated_view_indices: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    patient: u32,
    leg: Leg,
    time: ExamTime,
    frame_count: usize,
    pixel_spacing_cm: [f64; 2],
    gain: f32,
}

impl ExamSequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Input(format!("exam {:?} has no frames", self.id)));
        }
        if !self.masks.is_empty() && self.masks.len() != self.frames.len() {
            return Err(Error::Input(format!(
                "exam {:?}: {} masks for {} frames",
                self.id,
                self.masks.len(),
                self.frames.len()
            )));
        }
        if let Some(&i) = self.annotated_view_indices.iter().find(|&&i| i >= self.frames.len()) {
            return Err(Error::Input(format!(
                "exam {:?}: annotated index {i} beyond {} frames",
                self.id,
                self.frames.len()
            )));
        }
        if let Some(gt) = &self.ground_truth {
            if gt.poses.len() != self.frames.len() || gt.reference_index >= self.frames.len() {
                return Err(Error::Input(format!("exam {:?}: inconsistent ground truth", self.id)));
            }
        }
        Ok(())
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let dir = root.join(self.id.relative_dir());
        let frames_dir = dir.join("frames");
        let masks_dir = dir.join("masks");
        create_dir(&frames_dir)?;
        for (i, f) in self.frames.iter().enumerate() {
            write_file(&frames_dir.join(format!("frame_{i:04}.pgm")), &pgm::encode(f))?;
        }
        if !self.masks.is_empty() {
            create_dir(&masks_dir)?;
            for (i, m) in self.masks.iter().enumerate() {
                write_file(&masks_dir.join(format!("frame_{i:04}.pgm")), &pgm::encode(m))?;
            }
        }
        write_json(
            &dir.join("annotations.json"),
            &AnnotationsFile {
                annotated_view_indices: self.annotated_view_indices.clone(),
            },
        )?;
        write_json(
            &dir.join("meta.json"),
            &MetaFile {
                patient: self.id.patient,
                leg: self.id.leg,
                time: self.id.time,
                frame_count: self.frames.len(),
                pixel_spacing_cm: self.pixel_spacing_cm,
                gain: self.gain,
            },
        )?;
        if let Some(gt) = &self.ground_truth {
            write_json(&dir.join("ground_truth.json"), gt)?;
        }
        Ok(())
    }

    /// Reads one exam directory. Masks and ground truth are optional.
    pub fn read(dir: &Path) -> Result<Self> {
        let meta: MetaFile = read_json(&dir.join("meta.json"))?;
        let ann: AnnotationsFile = read_json(&dir.join("annotations.json"))?;
        let frames = read_frames(&dir.join("frames"), meta.frame_count)?;
        let masks_dir = dir.join("masks");
        let masks = if masks_dir.is_dir() {
            read_frames(&masks_dir, meta.frame_count)?
        } else {
            Vec::new()
        };
        let gt_path = dir.join("ground_truth.json");
        let ground_truth = if gt_path.is_file() {
            Some(read_json(&gt_path)?)
        } else {
            None
        };
        let exam = ExamSequence {
            id: ExamId {
                patient: meta.patient,
                leg: meta.leg,
                time: meta.time,
            },
            frames,
            masks,
            annotated_view_indices: ann.annotated_view_indices,
            pixel_spacing_cm: meta.pixel_spacing_cm,
            gain: meta.gain,
            ground_truth,
        };
        exam.validate()?;
        Ok(exam)
    }

    /// Frames only, for a directory that may hold just `frame_*.pgm` files
    /// (either directly or under `frames/`).
    pub fn read_frames_only(dir: &Path) -> Result<Vec<Frame>> {
        let frames_dir = if dir.join("frames").is_dir() {
            dir.join("frames")
        } else {
            dir.to_path_buf()
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(&frames_dir)
            .map_err(|e| Error::io(&frames_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Input(format!("no .pgm frames in {}", frames_dir.display())));
        }
        paths.iter().map(|p| read_pgm(p)).collect()
    }
}

fn read_frames(dir: &Path, count: usize) -> Result<Vec<Frame>> {
    (0..count)
        .map(|i| read_pgm(&dir.join(format!("frame_{i:04}.pgm"))))
        .collect()
}

pub fn read_pgm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    pgm::decode(&bytes).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// All exams of a dataset, ordered by (patient, leg, time).
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    exams: BTreeMap<ExamId, ExamSequence>,
}

impl Dataset {
    pub fn from_exams(exams: impl IntoIterator<Item = ExamSequence>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in exams {
            e.validate()?;
            if map.insert(e.id, e).is_some() {
                return Err(Error::Input("duplicate exam id".into()));
            }
        }
        Ok(Self { exams: map })
    }

    pub fn exams(&self) -> impl Iterator<Item = &ExamSequence> {
        self.exams.values()
    }

    pub fn exam(&self, id: &ExamId) -> Option<&ExamSequence> {
        self.exams.get(id)
    }

    pub fn len(&self) -> usize {
        self.exams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exams.is_empty()
    }

    pub fn frame(&self, r: &FrameRef) -> Result<&Frame> {
        self.exams
            .get(&r.exam)
            .and_then(|e| e.frames.get(r.index))
            .ok_or_else(|| Error::Input(format!("no frame {r:?} in dataset")))
    }

    pub fn mask(&self, r: &FrameRef) -> Result<&Frame> {
        self.exams
            .get(&r.exam)
            .and_then(|e| e.masks.get(r.index))
            .ok_or_else(|| Error::Input(format!("no mask for {r:?} in dataset")))
    }

    /// Sorted, de-duplicated patient ids.
    pub fn patients(&self) -> Vec<u32> {
        let mut p: Vec<u32> = self.exams.keys().map(|k| k.patient).collect();
        p.dedup();
        p
    }

    /// Exams of one patient and leg in time order.
    pub fn leg_exams(&self, patient: u32, leg: Leg) -> Vec<&ExamSequence> {
        self.exams
            .values()
            .filter(|e| e.id.patient == patient && e.id.leg == leg)
            .collect()
    }

    /// Every frame of the given patients, in dataset order.
    pub fn frame_refs(&self, patients: &[u32]) -> Vec<FrameRef> {
        self.exams
            .values()
            .filter(|e| patients.contains(&e.id.patient))
            .flat_map(|e| (0..e.frames.len()).map(move |index| FrameRef { exam: e.id, index }))
            .collect()
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        for e in self.exams.values() {
            e.write(root)?;
        }
        Ok(())
    }

    /// Loads every `patient_*/leg_*/exam_*` directory under `root`.
    pub fn load(root: &Path) -> Result<Self> {
        let mut exams = Vec::new();
        for p in sorted_subdirs(root, "patient_")? {
            for l in sorted_subdirs(&p, "leg_")? {
                for e in sorted_subdirs(&l, "exam_")? {
                    exams.push(ExamSequence::read(&e)?);
                }
            }
        }
        if exams.is_empty() {
            return Err(Error::Input(format!("no exams found under {}", root.display())));
        }
        Self::from_exams(exams)
    }
}

fn sorted_subdirs(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(prefix))
        })
        .collect();
    out.sort();
    Ok(out)
}
