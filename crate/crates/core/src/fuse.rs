//! Merging the two per-side summaries of one passage.
//!
//! Both cameras see the wagons in the same temporal order, so equal counts
//! pair by index. When one side counted a wagon more or less, a global
//! alignment scored by code similarity puts the gap where it belongs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recognize::{WagonRecord, WagonStatus};
use crate::summary::{SummaryStats, TrainSummary};

pub const GAP_PENALTY: f64 = 0.4;
/// Largest count difference, as a fraction of the larger count, that
/// alignment will repair.
pub const MAX_COUNT_DRIFT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FuseError {
    #[error("sides counted {left} and {right} wagons; too far apart to align")]
    CountMismatchTooLarge { left: usize, right: usize },
}

/// Indices into the left and right wagon lists; `None` is a gap.
pub type Pair = (Option<usize>, Option<usize>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    LeftOnly,
    RightOnly,
    Agree,
    ConflictResolved,
    BothRejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedWagon {
    pub position: usize,
    pub left: Option<WagonRecord>,
    pub right: Option<WagonRecord>,
    pub merged: WagonRecord,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedTrain {
    pub train_id: String,
    pub left_train_id: String,
    pub right_train_id: String,
    pub left_camera: String,
    pub right_camera: String,
    pub started_ms: i64,
    pub ended_ms: i64,
    pub wagons: Vec<FusedWagon>,
}

fn accepted_code(w: &WagonRecord) -> Option<String> {
    w.status.is_accepted().then(|| w.code.as_ref().map(ToString::to_string)).flatten()
}

/// Similarity of two wagons for alignment: 1.0 for identical accepted
/// codes, 0 when either side has no accepted code.
pub fn pair_score(a: &WagonRecord, b: &WagonRecord) -> f64 {
    match (accepted_code(a), accepted_code(b)) {
        (Some(x), Some(y)) => strsim::normalized_levenshtein(&x, &y),
        _ => 0.0,
    }
}

/// Total score of a pairing: pair scores minus the gap penalty per gap.
pub fn alignment_score(left: &[WagonRecord], right: &[WagonRecord], pairs: &[Pair]) -> f64 {
    pairs
        .iter()
        .map(|p| match p {
            (Some(i), Some(j)) => pair_score(&left[*i], &right[*j]),
            _ => -GAP_PENALTY,
        })
        .sum()
}

pub fn align(left: &TrainSummary, right: &TrainSummary) -> Result<Vec<Pair>, FuseError> {
    let (n, m) = (left.wagons.len(), right.wagons.len());
    if n == m {
        return Ok((0..n).map(|i| (Some(i), Some(i))).collect());
    }
    if n.abs_diff(m) as f64 > MAX_COUNT_DRIFT * n.max(m) as f64 {
        return Err(FuseError::CountMismatchTooLarge { left: n, right: m });
    }
    Ok(align_records(&left.wagons, &right.wagons))
}

/// Needleman-Wunsch over the two wagon lists. Ties in the traceback prefer
/// a match, then a gap on the right side.
#[allow(clippy::needless_range_loop)]
pub fn align_records(left: &[WagonRecord], right: &[WagonRecord]) -> Vec<Pair> {
    let (n, m) = (left.len(), right.len());
    let mut score = vec![vec![0.0f64; m + 1]; n + 1];
    for i in 1..=n {
        score[i][0] = -GAP_PENALTY * i as f64;
    }
    for j in 1..=m {
        score[0][j] = -GAP_PENALTY * j as f64;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = score[i - 1][j - 1] + pair_score(&left[i - 1], &right[j - 1]);
            let up = score[i - 1][j] - GAP_PENALTY;
            let side = score[i][j - 1] - GAP_PENALTY;
            score[i][j] = diag.max(up).max(side);
        }
    }

    let mut pairs = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    const EPS: f64 = 1e-9;
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && (score[i][j] - (score[i - 1][j - 1] + pair_score(&left[i - 1], &right[j - 1]))).abs() < EPS
        {
            pairs.push((Some(i - 1), Some(j - 1)));
            i -= 1;
            j -= 1;
        } else if i > 0 && (j == 0 || (score[i][j] - (score[i - 1][j] - GAP_PENALTY)).abs() < EPS) {
            pairs.push((Some(i - 1), None));
            i -= 1;
        } else {
            pairs.push((None, Some(j - 1)));
            j -= 1;
        }
    }
    pairs.reverse();
    pairs
}

fn merge_pair(left: Option<&WagonRecord>, right: Option<&WagonRecord>) -> (WagonRecord, Provenance) {
    let l_ok = left.is_some_and(|w| w.status.is_accepted());
    let r_ok = right.is_some_and(|w| w.status.is_accepted());
    match (left, right) {
        (Some(l), Some(r)) if l_ok && r_ok => {
            if l.code == r.code {
                let mut merged = l.clone();
                if r.status == WagonStatus::Accepted {
                    merged.status = WagonStatus::Accepted;
                }
                (merged, Provenance::Agree)
            } else {
                let (lc, rc) = (l.mean_confidence(), r.mean_confidence());
                let left_wins = match lc.total_cmp(&rc) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => accepted_code(l) <= accepted_code(r),
                };
                let mut merged = if left_wins { l.clone() } else { r.clone() };
                merged.needs_review = true;
                (merged, Provenance::ConflictResolved)
            }
        }
        (Some(l), _) if l_ok => (l.clone(), Provenance::LeftOnly),
        (_, Some(r)) if r_ok => (r.clone(), Provenance::RightOnly),
        _ => {
            // prefer the side that at least located the code
            let located = [left, right].into_iter().flatten().find(|w| w.status == WagonStatus::Rejected);
            let merged = located.or(left).or(right).expect("a pair has at least one side").clone();
            (merged, Provenance::BothRejected)
        }
    }
}

pub fn merge(left: &TrainSummary, right: &TrainSummary, pairs: &[Pair]) -> FusedTrain {
    let wagons = pairs
        .iter()
        .enumerate()
        .map(|(k, (i, j))| {
            let l = i.map(|i| &left.wagons[i]);
            let r = j.map(|j| &right.wagons[j]);
            let (mut merged, provenance) = merge_pair(l, r);
            merged.position = k + 1;
            FusedWagon { position: k + 1, left: l.cloned(), right: r.cloned(), merged, provenance }
        })
        .collect();
    FusedTrain {
        train_id: format!("{}+{}", left.train_id, right.camera),
        left_train_id: left.train_id.clone(),
        right_train_id: right.train_id.clone(),
        left_camera: left.camera.clone(),
        right_camera: right.camera.clone(),
        started_ms: left.started_ms.min(right.started_ms),
        ended_ms: left.ended_ms.max(right.ended_ms),
        wagons,
    }
}

pub fn fuse(left: &TrainSummary, right: &TrainSummary) -> Result<FusedTrain, FuseError> {
    let pairs = align(left, right)?;
    Ok(merge(left, right, &pairs))
}

impl FusedTrain {
    pub fn unresolved(&self) -> usize {
        self.wagons.iter().filter(|w| w.provenance == Provenance::BothRejected).count()
    }

    /// The merged wagons as a regular train summary.
    pub fn summary(&self) -> TrainSummary {
        let wagons: Vec<WagonRecord> = self.wagons.iter().map(|w| w.merged.clone()).collect();
        TrainSummary {
            train_id: self.train_id.clone(),
            camera: format!("{}+{}", self.left_camera, self.right_camera),
            started_ms: self.started_ms,
            ended_ms: self.ended_ms,
            wagon_count: wagons.len(),
            stats: SummaryStats::compute(&wagons),
            wagons,
        }
    }
}
