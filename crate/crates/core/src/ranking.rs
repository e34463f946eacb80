//! Entropy-based ranking of target images and the lambda-ratio split into
//! easy and hard subdomains.
//!
//! Ranking is purely rank-based: the split takes the `round(lambda * N)`
//! lowest-scoring images as the easy split, so rescaling all scores by a
//! positive constant never changes the assignment. Optional rare-class
//! normalization divides an image's mean entropy by the number of rare
//! classes its prediction contains, moving object-rich scenes toward the
//! easy split.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{EntropyMap, LabelMap};

/// Ranking entry for one target image. `score` is the mean entropy in nats;
/// `normalized_score` additionally divides by `max(rare_class_count, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub image_id: String,
    pub score: f64,
    pub normalized_score: f64,
    pub rare_class_count: usize,
}

/// Classes treated as rare plus the minimum pixel fraction for a class to
/// count as "predicted" in an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareClassSet {
    pub classes: BTreeSet<usize>,
    pub min_pixel_fraction: f64,
}

/// Default minimum pixel fraction: a single noisy pixel should not make a
/// rare class count as predicted.
pub const DEFAULT_RARE_PIXEL_FRACTION: f64 = 1e-3;

impl RareClassSet {
    pub fn new(classes: BTreeSet<usize>, min_pixel_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&min_pixel_fraction) {
            return Err(Error::Config(format!(
                "rare-class pixel fraction must be in [0,1), got {min_pixel_fraction}"
            )));
        }
        Ok(RareClassSet {
            classes,
            min_pixel_fraction,
        })
    }

    pub fn empty() -> Self {
        RareClassSet {
            classes: BTreeSet::new(),
            min_pixel_fraction: DEFAULT_RARE_PIXEL_FRACTION,
        }
    }

    /// The 19-class Cityscapes palette's rare classes: wall, fence, pole,
    /// traffic light, traffic sign, terrain, rider, truck, bus, train,
    /// motorcycle.
    pub fn cityscapes() -> Self {
        RareClassSet {
            classes: [3, 4, 5, 6, 7, 9, 12, 14, 15, 16, 17].into_iter().collect(),
            min_pixel_fraction: DEFAULT_RARE_PIXEL_FRACTION,
        }
    }
}

/// Mean entropy of a map: `(1/(H*W)) * sum I`.
pub fn rank_score(map: &EntropyMap) -> Result<f64> {
    let n = map.values().len();
    if n == 0 {
        return Err(Error::Dimension("rank_score of an empty entropy map".into()));
    }
    Ok(map.values().iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64)
}

/// Mean entropy divided by the number of predicted rare classes (floored at
/// one so the score is defined when no rare class shows up). Returns the
/// normalized score and the rare-class count.
pub fn normalized_rank_score(
    map: &EntropyMap,
    pred: &LabelMap,
    rare: &RareClassSet,
) -> Result<(f64, usize)> {
    if pred.height() != map.height() || pred.width() != map.width() {
        return Err(Error::Dimension(format!(
            "entropy map {}x{} vs prediction {}x{}",
            map.height(),
            map.width(),
            pred.height(),
            pred.width()
        )));
    }
    let k = rare
        .classes
        .iter()
        .filter(|&&c| c < pred.class_count() && pred.class_fraction(c) >= rare.min_pixel_fraction)
        .count();
    let score = rank_score(map)?;
    Ok((score / k.max(1) as f64, k))
}

/// The easy/hard partition of a target image set under a given lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub lambda: f64,
    /// Image ids in ascending score order; `|easy| = round(lambda * N)`.
    pub easy: Vec<String>,
    pub hard: Vec<String>,
}

impl SplitAssignment {
    pub fn is_easy(&self, id: &str) -> bool {
        self.easy.iter().any(|e| e == id)
    }
}

/// Sorts records ascending by the active score (low entropy = easy, ties
/// broken by image id) and assigns the first `round(lambda * N)` to the easy
/// split.
pub fn split(records: &[RankRecord], lambda: f64, use_normalized: bool) -> Result<SplitAssignment> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must be in [0,1], got {lambda}")));
    }
    let mut seen = BTreeSet::new();
    for r in records {
        let active = if use_normalized { r.normalized_score } else { r.score };
        if !active.is_finite() {
            return Err(Error::Input(format!(
                "non-finite score for image {:?}",
                r.image_id
            )));
        }
        if !seen.insert(r.image_id.as_str()) {
            return Err(Error::Input(format!(
                "duplicate image_id {:?}",
                r.image_id
            )));
        }
    }
    let mut order: Vec<&RankRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        let (sa, sb) = if use_normalized {
            (a.normalized_score, b.normalized_score)
        } else {
            (a.score, b.score)
        };
        sa.partial_cmp(&sb)
            .expect("scores checked finite")
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    // Round half up. The epsilon absorbs binary representation error of
    // decimal lambdas (0.7 * 2975 lands a hair below 2082.5 in f64 but must
    // round like the exact product).
    let n_easy = (lambda * records.len() as f64 + 0.5 + 1e-9).floor() as usize;
    let n_easy = n_easy.min(records.len());
    let easy = order[..n_easy].iter().map(|r| r.image_id.clone()).collect();
    let hard = order[n_easy..].iter().map(|r| r.image_id.clone()).collect();
    Ok(SplitAssignment { lambda, easy, hard })
}

/// Ranking manifest CSV: rows sorted ascending by the active score, floats
/// with six decimal digits.
pub const RANKING_CSV_HEADER: &str = "image_id,score,normalized_score,rare_class_count,split";

pub fn ranking_csv(
    records: &[RankRecord],
    assignment: &SplitAssignment,
    use_normalized: bool,
) -> String {
    let mut by_id: Vec<&RankRecord> = records.iter().collect();
    by_id.sort_by(|a, b| {
        let (sa, sb) = if use_normalized {
            (a.normalized_score, b.normalized_score)
        } else {
            (a.score, b.score)
        };
        sa.partial_cmp(&sb)
            .expect("scores checked finite")
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    let mut out = String::new();
    out.push_str(RANKING_CSV_HEADER);
    out.push('\n');
    for r in by_id {
        let tag = if assignment.is_easy(&r.image_id) { "easy" } else { "hard" };
        writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            r.image_id, r.score, r.normalized_score, r.rare_class_count, tag
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Parses a ranking manifest back into records and the recorded split.
pub fn parse_ranking_csv(text: &str) -> Result<(Vec<RankRecord>, Vec<String>, Vec<String>)> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RANKING_CSV_HEADER => {}
        other => {
            return Err(Error::Input(format!(
                "ranking csv header mismatch: {other:?}"
            )));
        }
    }
    let mut records = Vec::new();
    let mut easy = Vec::new();
    let mut hard = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [id, score, norm, rare, tag] = fields[..] else {
            return Err(Error::Input(format!(
                "ranking csv line {}: expected 5 fields",
                lineno + 2
            )));
        };
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Input(format!("ranking csv line {}: bad {what} {s:?}", lineno + 2)))
        };
        records.push(RankRecord {
            image_id: id.to_string(),
            score: parse_f(score, "score")?,
            normalized_score: parse_f(norm, "normalized_score")?,
            rare_class_count: rare.parse().map_err(|_| {
                Error::Input(format!(
                    "ranking csv line {}: bad rare_class_count {rare:?}",
                    lineno + 2
                ))
            })?,
        });
        match tag {
            "easy" => easy.push(id.to_string()),
            "hard" => hard.push(id.to_string()),
            other => {
                return Err(Error::Input(format!(
                    "ranking csv line {}: bad split tag {other:?}",
                    lineno + 2
                )));
            }
        }
    }
    Ok((records, easy, hard))
}

/// Scores a set of probability maps (model-agnostic path: the maps may come
/// from arbitrary external files).
pub fn rank_probmaps(
    maps: &[(String, crate::maps::ProbMap)],
    rare: &RareClassSet,
) -> Result<Vec<RankRecord>> {
    maps.iter()
        .map(|(id, p)| {
            let ent = crate::losses::entropy_map_of(p);
            let score = rank_score(&ent)?;
            let (normalized_score, rare_class_count) =
                normalized_rank_score(&ent, &p.argmax(), rare)?;
            Ok(RankRecord {
                image_id: id.clone(),
                score,
                normalized_score,
                rare_class_count,
            })
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Input(format!(
            "spearman needs two equal series of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..ra.len() {
        let (da, db) = (ra[i] - mean, rb[i] - mean);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Evaluation("spearman of a constant series".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}
