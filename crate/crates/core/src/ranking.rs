//! Ranked retrieval output shared by the learned model and the baselines.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub index: usize,
    pub score: f64,
}

/// Sorts candidate scores descending; equal scores keep the lower index first.
pub fn rank(scores: &[f64]) -> Result<Vec<Ranked>> {
    if scores.is_empty() {
        return Err(Error::Input("no candidates to rank".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("candidate {i} has a non-finite score")));
    }
    let mut out: Vec<Ranked> = scores
        .iter()
        .enumerate()
        .map(|(index, &score)| Ranked { index, score })
        .collect();
    out.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.index.cmp(&b.index),
        o => o,
    });
    Ok(out)
}

/// `ranking.json` document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    #[serde(rename = "ref")]
    pub reference: String,
    pub candidates: Vec<Ranked>,
}
