//! Run configuration and the evaluation protocol shared by the command-line
//! tool and the end-to-end tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive::{supervised_scores, ClfTrainConfig, EmbeddingCache, SslTrainConfig};
use crate::dataset::{read_json, write_json, Dataset, ExamSequence, ExamTime, FrameRef, Leg};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::metrics::{area_error, evaluate_retrieval, mask_area, AreaSource, EvalReport, RetrievalOutcome, ScoredLabel};
use crate::model::{frames_to_batch, Classifier, Encoder, SupervisedModel};
use crate::ncc::{ncc, ncc_retrieve};
use crate::pairs::{ManifestRecord, PairConfig, PairExample, PairLabel, PatientSplit, DataSplit, split_dataset};
use crate::ranking::{rank, Ranked};
use crate::synth::PhantomConfig;

/// Everything one pipeline run needs. Unknown keys are rejected; missing keys
/// take the documented defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, splits, pair sampling and both training phases.
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub pairs: PairConfig,
    pub ssl: SslTrainConfig,
    pub clf: ClfTrainConfig,
    pub paths: PathsConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            phantom: PhantomConfig::default(),
            pairs: PairConfig::default(),
            ssl: SslTrainConfig::default(),
            clf: ClfTrainConfig::default(),
            paths: PathsConfig::default(),
        }
        .with_seed(0)
    }
}

impl RunConfig {
    /// The desk-scale schedule: 50 contrastive epochs of two steps with N = 32
    /// and 30 classifier epochs.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.ssl.epochs = 50;
        c.ssl.batch_size = 32;
        c.ssl.steps_per_epoch = Some(2);
        c.ssl.lr = 1e-3;
        c.clf.epochs = 30;
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.phantom.seed = seed;
        self.ssl.seed = seed;
        self.clf.seed = seed;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        let seed = c.seed;
        Ok(c.with_seed(seed))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        let seed = c.seed;
        Ok(c.with_seed(seed))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.ssl.validate()?;
        self.clf.validate()
    }
}

/// Frames of the contrastive-pretraining patients.
pub fn ssl_frames<'a>(data: &'a Dataset, split: &PatientSplit) -> Vec<&'a Frame> {
    data.exams()
        .filter(|e| split.ssl.contains(&e.id.patient))
        .flat_map(|e| e.frames.iter())
        .collect()
}

pub fn make_split(data: &Dataset, cfg: &RunConfig) -> Result<DataSplit> {
    split_dataset(data, &cfg.pairs, cfg.seed)
}

/// One raw pair score line, for independent re-aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScore {
    pub patient: u32,
    pub leg: Leg,
    pub exam_a: ExamTime,
    pub idx_a: usize,
    pub exam_b: ExamTime,
    pub idx_b: usize,
    pub label: PairLabel,
    pub score: f64,
}

impl RawScore {
    pub fn new(pair: &PairExample, score: f64) -> Self {
        let r = ManifestRecord::from(pair);
        Self {
            patient: r.patient,
            leg: r.leg,
            exam_a: r.exam_a,
            idx_a: r.idx_a,
            exam_b: r.exam_b,
            idx_b: r.idx_b,
            label: r.label,
            score,
        }
    }

    pub fn scored_label(&self) -> ScoredLabel {
        ScoredLabel {
            score: self.score,
            label: self.label.class() as u8,
        }
    }
}

pub fn raw_scores_to_jsonl(raw: &[RawScore]) -> String {
    raw.iter()
        .map(|r| serde_json::to_string(r).expect("score serializes") + "\n")
        .collect()
}

pub fn parse_raw_scores(text: &str) -> Result<Vec<RawScore>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Input(format!("score line {}: {e}", n + 1))))
        .collect()
}

/// The frame treated as the true view of an exam: the ground-truth reference
/// when known, else the middle annotated view.
pub fn truth_index(exam: &ExamSequence) -> Result<usize> {
    if let Some(gt) = &exam.ground_truth {
        return Ok(gt.reference_index);
    }
    let mut v = exam.annotated_view_indices.clone();
    v.sort_unstable();
    v.get(v.len() / 2)
        .copied()
        .ok_or_else(|| Error::Input(format!("exam {:?} has no annotated view", exam.id)))
}

/// Scores pairs and ranks candidate frames for one method.
pub trait Scorer {
    fn name(&self) -> &str;
    fn pair_scores(&self, data: &Dataset, pairs: &[PairExample]) -> Result<Vec<f64>>;
    fn rank(&self, data: &Dataset, reference: FrameRef, exam: &ExamSequence) -> Result<Vec<Ranked>>;
}

/// Frozen encoder and pair classifier over cached embeddings.
pub struct ModelScorer<'a> {
    pub classifier: &'a Classifier,
    pub cache: EmbeddingCache,
}

impl<'a> ModelScorer<'a> {
    /// Embeds every frame of `patients` once.
    pub fn new(encoder: &Encoder, classifier: &'a Classifier, data: &Dataset, patients: &[u32]) -> Result<Self> {
        let cache = EmbeddingCache::build(encoder, data, data.frame_refs(patients))?;
        Ok(Self { classifier, cache })
    }
}

impl Scorer for ModelScorer<'_> {
    fn name(&self) -> &str {
        "proposed"
    }

    fn pair_scores(&self, _data: &Dataset, pairs: &[PairExample]) -> Result<Vec<f64>> {
        self.cache.score(pairs, self.classifier)
    }

    fn rank(&self, _data: &Dataset, reference: FrameRef, exam: &ExamSequence) -> Result<Vec<Ranked>> {
        let pairs: Vec<PairExample> = (0..exam.frames.len())
            .map(|index| PairExample {
                a: reference,
                b: FrameRef { exam: exam.id, index },
                label: PairLabel::Negative,
                provenance: crate::pairs::Provenance::CrossExam,
            })
            .collect();
        rank(&self.cache.score(&pairs, self.classifier)?)
    }
}

pub struct NccScorer;

impl Scorer for NccScorer {
    fn name(&self) -> &str {
        "ncc"
    }

    fn pair_scores(&self, data: &Dataset, pairs: &[PairExample]) -> Result<Vec<f64>> {
        pairs.iter().map(|p| ncc(data.frame(&p.a)?, data.frame(&p.b)?)).collect()
    }

    fn rank(&self, data: &Dataset, reference: FrameRef, exam: &ExamSequence) -> Result<Vec<Ranked>> {
        ncc_retrieve(data.frame(&reference)?, &exam.frames)
    }
}

pub struct SupervisedScorer<'a>(pub &'a SupervisedModel);

impl Scorer for SupervisedScorer<'_> {
    fn name(&self) -> &str {
        "supervised"
    }

    fn pair_scores(&self, data: &Dataset, pairs: &[PairExample]) -> Result<Vec<f64>> {
        supervised_scores(self.0, data, pairs)
    }

    fn rank(&self, data: &Dataset, reference: FrameRef, exam: &ExamSequence) -> Result<Vec<Ranked>> {
        let r = data.frame(&reference)?;
        let mut scores = Vec::with_capacity(exam.frames.len());
        for chunk in exam.frames.chunks(32) {
            let frames: Vec<&Frame> = chunk.iter().flat_map(|c| [r, c]).collect();
            let p = self.0.predict(&frames_to_batch(&frames)?)?;
            scores.extend(p.data().chunks(2).map(|r| r[1] as f64));
        }
        rank(&scores)
    }
}

/// Retrieves each classifier-slice patient's T1 reference view within all
/// three exams of the same leg and measures the area error of the pick.
pub fn retrieval_outcomes(data: &Dataset, patients: &[u32], scorer: &dyn Scorer) -> Result<Vec<RetrievalOutcome>> {
    let mut out = Vec::new();
    for &patient in patients {
        for leg in Leg::ALL {
            let exams = data.leg_exams(patient, leg);
            let Some(t1) = exams.iter().find(|e| e.id.time == ExamTime::T1) else {
                continue;
            };
            let reference = FrameRef {
                exam: t1.id,
                index: truth_index(t1)?,
            };
            for exam in &exams {
                let ranking = scorer.rank(data, reference, exam)?;
                let truth = truth_index(exam)?;
                let top: Vec<usize> = ranking.iter().take(3).map(|r| r.index).collect();
                let is_view = |i: &usize| exam.annotated_view_indices.contains(i);
                let gt_mask = exam
                    .masks
                    .get(truth)
                    .ok_or_else(|| Error::Input(format!("exam {:?} has no masks", exam.id)))?;
                let gt = mask_area(gt_mask, exam.pixel_spacing_cm, AreaSource::GroundTruth)?;
                let pred = mask_area(&exam.masks[top[0]], exam.pixel_spacing_cm, AreaSource::Predicted)?;
                out.push(RetrievalOutcome {
                    patient,
                    leg,
                    time: exam.id.time,
                    truth_index: truth,
                    top1_hit: is_view(&top[0]),
                    top3_hit: top.iter().any(is_view),
                    top,
                    d: area_error(&gt, &pred)?,
                });
            }
        }
    }
    Ok(out)
}

/// Test-pair metrics plus retrieval area errors for one method, with the raw
/// pair scores behind the metrics.
pub fn evaluate(data: &Dataset, split: &DataSplit, scorer: &dyn Scorer) -> Result<(EvalReport, Vec<RawScore>)> {
    let test = &split.pairs.test;
    let scores = scorer.pair_scores(data, test)?;
    let raw: Vec<RawScore> = test.iter().zip(&scores).map(|(p, &s)| RawScore::new(p, s)).collect();
    let labeled: Vec<ScoredLabel> = raw.iter().map(RawScore::scored_label).collect();
    let outcomes = retrieval_outcomes(data, &split.patients.clf, scorer)?;
    let report = evaluate_retrieval(scorer.name(), &labeled, &outcomes)?;
    Ok((report, raw))
}

/// Writes `report.json`-style output with a trailing newline.
pub fn save_report(path: &Path, report: &EvalReport) -> Result<()> {
    write_json(path, report)
}
