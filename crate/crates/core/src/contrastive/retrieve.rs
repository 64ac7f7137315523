use crate::error::Result;
use crate::frame::Frame;
use crate::model::{encode, pair_batch, Classifier, Encoder};
use crate::ranking::{rank, Ranked};

const SCORE_CHUNK: usize = 64;

/// `p_pos` for each `(h_a, h_b)` pair.
pub fn score_pairs(pairs: &[(&[f32], &[f32])], classifier: &Classifier) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for part in pairs.chunks(SCORE_CHUNK) {
        let p = classifier.predict(&pair_batch(part)?)?;
        out.extend(p.data().chunks(2).map(|r| r[1] as f64));
    }
    Ok(out)
}

/// Ranks candidate embeddings against a reference embedding.
pub fn retrieve_embedded(reference: &[f32], candidates: &[&[f32]], classifier: &Classifier) -> Result<Vec<Ranked>> {
    let pairs: Vec<(&[f32], &[f32])> = candidates.iter().map(|c| (reference, *c)).collect();
    rank(&score_pairs(&pairs, classifier)?)
}

/// Ranks `candidates` by the classifier's match probability against
/// `reference`, best first; equal scores keep the lower index first.
pub fn retrieve(
    reference: &Frame,
    candidates: &[Frame],
    encoder: &Encoder,
    classifier: &Classifier,
) -> Result<Vec<Ranked>> {
    let h_ref = encode(reference, encoder)?;
    let refs: Vec<&Frame> = candidates.iter().collect();
    let h = encoder.embed_frames(&refs, SCORE_CHUNK)?;
    let rows: Vec<&[f32]> = h.iter().map(Vec::as_slice).collect();
    if rows.is_empty() {
        return rank(&[]);
    }
    retrieve_embedded(&h_ref, &rows, classifier)
}
