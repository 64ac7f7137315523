//! Positive/negative frame-pair labeling and patient-level data splits.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ExamId, ExamSequence, ExamTime, FrameRef, Leg};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Negative,
    Positive,
}

impl PairLabel {
    /// Class index used by the classifiers (`1` = positive).
    pub fn class(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    WithinExam,
    CrossExam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairExample {
    pub a: FrameRef,
    pub b: FrameRef,
    pub label: PairLabel,
    pub provenance: Provenance,
}

impl PairExample {
    fn new(a: FrameRef, b: FrameRef, label: PairLabel) -> Self {
        let provenance = if a.exam == b.exam {
            Provenance::WithinExam
        } else {
            Provenance::CrossExam
        };
        Self {
            a,
            b,
            label,
            provenance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    /// Negatives sampled per positive pair.
    pub negatives_per_positive: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            negatives_per_positive: 1.0,
        }
    }
}

fn key(a: FrameRef, b: FrameRef) -> (FrameRef, FrameRef) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Labels frame pairs of one patient and leg.
///
/// Positives join annotated views within an exam and across exams. Negatives
/// are drawn half as (annotated, non-annotated) and half as (non-annotated,
/// non-annotated) pairs, anywhere within the leg's exams.
pub fn build_pairs(exams: &[&ExamSequence], cfg: &PairConfig, rng: &mut Rng) -> Result<Vec<PairExample>> {
    let Some(first) = exams.first() else {
        return Ok(Vec::new());
    };
    if let Some(e) = exams
        .iter()
        .find(|e| e.id.patient != first.id.patient || e.id.leg != first.id.leg)
    {
        return Err(Error::Input(format!(
            "build_pairs mixes {:?} with {:?}",
            first.id, e.id
        )));
    }
    if !(cfg.negatives_per_positive >= 0.0 && cfg.negatives_per_positive.is_finite()) {
        return Err(Error::config("negatives_per_positive must be a non-negative number"));
    }
    let mut annotated: Vec<(ExamId, Vec<usize>)> = Vec::new();
    for e in exams {
        let idx: BTreeSet<usize> = e.annotated_view_indices.iter().copied().collect();
        if idx.is_empty() {
            warn!("exam {:?} has no annotated views, skipping", e.id);
            continue;
        }
        annotated.push((e.id, idx.into_iter().collect()));
    }
    annotated.sort_by_key(|(id, _)| *id);

    let fr = |exam: ExamId, index: usize| FrameRef { exam, index };
    let mut out = Vec::new();
    for (id, idx) in &annotated {
        for (n, &i) in idx.iter().enumerate() {
            for &j in &idx[n + 1..] {
                out.push(PairExample::new(fr(*id, i), fr(*id, j), PairLabel::Positive));
            }
        }
    }
    for (n, (ia, xa)) in annotated.iter().enumerate() {
        for (ib, xb) in &annotated[n + 1..] {
            for &i in xa {
                for &j in xb {
                    out.push(PairExample::new(fr(*ia, i), fr(*ib, j), PairLabel::Positive));
                }
            }
        }
    }

    // Non-annotated frames of the usable exams.
    let usable: Vec<&ExamSequence> = exams
        .iter()
        .copied()
        .filter(|e| annotated.iter().any(|(id, _)| *id == e.id))
        .collect();
    let mut plain: Vec<FrameRef> = Vec::new();
    let mut views: Vec<FrameRef> = Vec::new();
    for e in &usable {
        for i in 0..e.frames.len() {
            if e.annotated_view_indices.contains(&i) {
                views.push(fr(e.id, i));
            } else {
                plain.push(fr(e.id, i));
            }
        }
    }
    views.sort();
    plain.sort();

    let wanted = (out.len() as f64 * cfg.negatives_per_positive).round() as usize;
    let mut seen: BTreeSet<(FrameRef, FrameRef)> = BTreeSet::new();
    let mut negatives = Vec::with_capacity(wanted);
    let mut attempts = 0usize;
    let max_attempts = 100 * wanted + 100;
    while negatives.len() < wanted && attempts < max_attempts && !plain.is_empty() {
        attempts += 1;
        let b = plain[rng.below(plain.len())];
        let a = if negatives.len() % 2 == 0 {
            views[rng.below(views.len())]
        } else {
            plain[rng.below(plain.len())]
        };
        if a == b || !seen.insert(key(a, b)) {
            continue;
        }
        negatives.push(PairExample::new(a, b, PairLabel::Negative));
    }
    if negatives.len() < wanted {
        warn!(
            "patient {} leg {}: only {} of {wanted} negatives available",
            first.id.patient,
            first.id.leg.code(),
            negatives.len()
        );
    }
    out.extend(negatives);
    Ok(out)
}

/// Pairs for every patient/leg of `patients`, in dataset order. Each leg
/// draws its negatives from its own random stream.
pub fn build_dataset_pairs(data: &Dataset, patients: &[u32], cfg: &PairConfig, seed: u64) -> Result<Vec<PairExample>> {
    let mut out = Vec::new();
    for &p in patients {
        for leg in Leg::ALL {
            let exams = data.leg_exams(p, leg);
            let mut rng = Rng::stream(seed, &[PAIR_STREAM, p as u64, leg as u64]);
            out.extend(build_pairs(&exams, cfg, &mut rng)?);
        }
    }
    Ok(out)
}

const PAIR_STREAM: u64 = 0x5041_4952;
const SPLIT_STREAM: u64 = 0x5350_4c54;

pub const MIN_PATIENTS: usize = 10;

/// Patient-level partition into the contrastive-pretraining slice (80%) and
/// the classifier slice (the rest).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientSplit {
    pub ssl: Vec<u32>,
    pub clf: Vec<u32>,
}

pub fn split_patients(patients: &[u32], seed: u64) -> Result<PatientSplit> {
    let mut ids: Vec<u32> = patients.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < MIN_PATIENTS {
        return Err(Error::config(format!(
            "need at least {MIN_PATIENTS} patients for a non-empty test slice, got {}",
            ids.len()
        )));
    }
    Rng::stream(seed, &[SPLIT_STREAM, 0]).shuffle(&mut ids);
    let n_ssl = ids.len() * 4 / 5;
    let mut clf = ids.split_off(n_ssl);
    ids.sort_unstable();
    clf.sort_unstable();
    Ok(PatientSplit { ssl: ids, clf })
}

/// Train/validation/test split of the classifier slice's pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSplit {
    pub train: Vec<PairExample>,
    pub val: Vec<PairExample>,
    pub test: Vec<PairExample>,
}

/// 80/10/10 split of `pairs`, applied to each label separately so every
/// slice keeps the class balance.
pub fn split_pairs(pairs: &[PairExample], seed: u64) -> PairSplit {
    let mut out = PairSplit::default();
    for (n, label) in [PairLabel::Positive, PairLabel::Negative].into_iter().enumerate() {
        let mut part: Vec<PairExample> = pairs.iter().copied().filter(|p| p.label == label).collect();
        Rng::stream(seed, &[SPLIT_STREAM, 1, n as u64]).shuffle(&mut part);
        let n_train = part.len() * 8 / 10;
        let n_val = part.len() / 10;
        out.test.extend_from_slice(&part[n_train + n_val..]);
        out.val.extend_from_slice(&part[n_train..n_train + n_val]);
        out.train.extend_from_slice(&part[..n_train]);
    }
    let mut rng = Rng::stream(seed, &[SPLIT_STREAM, 2]);
    rng.shuffle(&mut out.train);
    rng.shuffle(&mut out.val);
    rng.shuffle(&mut out.test);
    out
}

/// Both slices of [`split_patients`] plus the pair split of the classifier
/// slice.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSplit {
    pub patients: PatientSplit,
    pub pairs: PairSplit,
}

pub fn split_dataset(data: &Dataset, cfg: &PairConfig, seed: u64) -> Result<DataSplit> {
    let patients = split_patients(&data.patients(), seed)?;
    let all = build_dataset_pairs(data, &patients.clf, cfg, seed)?;
    let pairs = split_pairs(&all, seed);
    if pairs.test.is_empty() || pairs.train.is_empty() {
        return Err(Error::config("classifier slice yields no train or test pairs"));
    }
    Ok(DataSplit { patients, pairs })
}

/// One manifest line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub patient: u32,
    pub leg: Leg,
    pub exam_a: ExamTime,
    pub idx_a: usize,
    pub exam_b: ExamTime,
    pub idx_b: usize,
    pub label: PairLabel,
}

impl From<&PairExample> for ManifestRecord {
    fn from(p: &PairExample) -> Self {
        Self {
            patient: p.a.exam.patient,
            leg: p.a.exam.leg,
            exam_a: p.a.exam.time,
            idx_a: p.a.index,
            exam_b: p.b.exam.time,
            idx_b: p.b.index,
            label: p.label,
        }
    }
}

impl From<ManifestRecord> for PairExample {
    fn from(r: ManifestRecord) -> Self {
        let exam = |time| ExamId {
            patient: r.patient,
            leg: r.leg,
            time,
        };
        PairExample::new(
            FrameRef {
                exam: exam(r.exam_a),
                index: r.idx_a,
            },
            FrameRef {
                exam: exam(r.exam_b),
                index: r.idx_b,
            },
            r.label,
        )
    }
}

pub fn manifest_to_string(pairs: &[PairExample]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&serde_json::to_string(&ManifestRecord::from(p)).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<PairExample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str::<ManifestRecord>(l)
                .map(PairExample::from)
                .map_err(|e| Error::Input(format!("manifest line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn write_manifest(path: &Path, pairs: &[PairExample]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(manifest_to_string(pairs).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}
