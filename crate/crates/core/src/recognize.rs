//! From a track's character detections to an accepted or rejected code.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::grammar::{classify_length, parse, pattern_correct, CheckDigitScheme, RawReading, ReadChar, RollingStockId};
use crate::track::{CharBox, FinalizedTrain, Track, WagonSlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WagonStatus {
    Accepted,
    AcceptedDamaged,
    Rejected,
    NotLocated,
}

impl WagonStatus {
    pub fn is_accepted(self) -> bool {
        matches!(self, WagonStatus::Accepted | WagonStatus::AcceptedDamaged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    LowConfidence,
    CheckDigitMismatch,
    PatternViolation,
    NoReading,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecognizeError {
    #[error("track {0} has no character detections")]
    NoReading(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecognizeConfig {
    pub tau_conf: f64,
    pub max_low: usize,
}

impl Default for RecognizeConfig {
    fn default() -> Self {
        RecognizeConfig { tau_conf: 0.5, max_low: 1 }
    }
}

/// One wagon as reported for a train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WagonRecord {
    pub position: usize,
    pub status: WagonStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<RollingStockId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<RejectReason>,
    #[serde(default)]
    pub char_confidences: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_ref: Option<String>,
    pub camera: String,
    /// Pattern-corrected glyphs as read, whatever the outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reading: Option<String>,
    /// Code region in the representative frame; probable location for
    /// wagons that were never located.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u64>,
    #[serde(default)]
    pub needs_review: bool,
    #[serde(default)]
    pub operator_corrected: bool,
    #[serde(default)]
    pub maintenance: bool,
}

impl WagonRecord {
    pub fn not_located(position: usize, camera: &str) -> Self {
        WagonRecord {
            position,
            status: WagonStatus::NotLocated,
            code: None,
            reject_reason: None,
            char_confidences: Vec::new(),
            crop_ref: None,
            camera: camera.to_string(),
            reading: None,
            region: None,
            frame: None,
            needs_review: false,
            operator_corrected: false,
            maintenance: false,
        }
    }

    pub fn mean_confidence(&self) -> f64 {
        if self.char_confidences.is_empty() {
            0.0
        } else {
            self.char_confidences.iter().sum::<f64>() / self.char_confidences.len() as f64
        }
    }
}

/// Outcome of [`decide`] for a single reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub status: WagonStatus,
    pub code: Option<RollingStockId>,
    pub reject_reason: Option<RejectReason>,
    pub char_confidences: Vec<f64>,
    pub reading: String,
}

/// Splits a frame's characters into rows by vertical center, top row first,
/// each row ordered left to right.
fn order_chars(chars: &[CharBox]) -> Vec<CharBox> {
    let mut sorted = chars.to_vec();
    sorted.sort_by(|a, b| a.center().1.total_cmp(&b.center().1));
    let mut heights: Vec<f32> = sorted.iter().map(|c| c.h).collect();
    heights.sort_by(f32::total_cmp);
    let row_break = heights.get(heights.len() / 2).copied().unwrap_or(0.0) * 0.5;

    let mut rows: Vec<Vec<CharBox>> = Vec::new();
    for c in sorted {
        match rows.last_mut() {
            Some(row) if c.center().1 - row_mean_y(row) <= row_break => row.push(c),
            _ => rows.push(vec![c]),
        }
    }
    rows.into_iter()
        .flat_map(|mut row| {
            row.sort_by(|a, b| a.center().0.total_cmp(&b.center().0));
            row
        })
        .collect()
}

fn row_mean_y(row: &[CharBox]) -> f32 {
    row.iter().map(|c| c.center().1).sum::<f32>() / row.len() as f32
}

/// Votes the track's per-frame character sequences into one reading.
///
/// Only frames whose character count equals the modal count vote; ties in
/// the mode go to the longer count. Each slot's confidence is the winning
/// glyph's share of the slot's summed weight, except that a slot with a
/// single vote keeps the detector's own confidence.
pub fn aggregate_track(track: &Track) -> Result<RawReading, RecognizeError> {
    let frames: Vec<Vec<CharBox>> =
        track.char_frames.iter().filter(|f| !f.chars.is_empty()).map(|f| order_chars(&f.chars)).collect();
    if frames.is_empty() {
        return Err(RecognizeError::NoReading(track.id));
    }

    let mut counts: HashMap<usize, usize> = HashMap::new();
    for f in &frames {
        *counts.entry(f.len()).or_default() += 1;
    }
    let slots = counts.iter().max_by_key(|(len, n)| (**n, **len)).map(|(len, _)| *len).expect("non-empty");

    let mut votes: Vec<Vec<(char, f64, usize)>> = vec![Vec::new(); slots];
    for f in frames.iter().filter(|f| f.len() == slots) {
        for (slot, c) in f.iter().enumerate() {
            let tally = &mut votes[slot];
            match tally.iter_mut().find(|(g, _, _)| *g == c.glyph) {
                Some(entry) => {
                    entry.1 += f64::from(c.conf);
                    entry.2 += 1;
                }
                None => tally.push((c.glyph, f64::from(c.conf), 1)),
            }
        }
    }

    let chars = votes
        .into_iter()
        .map(|mut tally| {
            // heaviest first; glyph order breaks exact ties deterministically
            tally.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let total: f64 = tally.iter().map(|t| t.1).sum();
            let (glyph, weight, n) = tally[0];
            let confidence = if n == 1 && tally.len() == 1 {
                weight
            } else if total > 0.0 {
                weight / total
            } else {
                0.0
            };
            let alternatives = tally[1..].iter().map(|t| t.0).collect();
            ReadChar { glyph, confidence: confidence.clamp(0.0, 1.0), alternatives, inadmissible: false }
        })
        .collect();
    Ok(RawReading { chars, source_track: Some(track.id) })
}

/// Accepts or rejects a reading.
///
/// Checks run in order: pattern correction and shape, low-confidence slots,
/// then the check digit. An accepted reading that needed a tolerated
/// low-confidence slot or a glyph substitution is `AcceptedDamaged`.
pub fn decide(reading: &RawReading, scheme: &CheckDigitScheme, config: &RecognizeConfig) -> Decision {
    let corrected = pattern_correct(reading);
    let text = corrected.text();
    let char_confidences: Vec<f64> = corrected.chars.iter().map(|c| c.confidence).collect();
    let reject = |reason| Decision {
        status: WagonStatus::Rejected,
        code: None,
        reject_reason: Some(reason),
        char_confidences: char_confidences.clone(),
        reading: text.clone(),
    };

    if classify_length(corrected.len()).is_none() || corrected.chars.iter().any(|c| c.inadmissible) {
        return reject(RejectReason::PatternViolation);
    }
    let low = char_confidences.iter().filter(|c| **c < config.tau_conf).count();
    if low > config.max_low {
        return reject(RejectReason::LowConfidence);
    }
    let Ok(code) = parse(&text) else {
        return reject(RejectReason::PatternViolation);
    };
    if scheme.validate(&code).is_err() {
        return reject(RejectReason::CheckDigitMismatch);
    }
    let substituted = corrected.chars.iter().zip(&reading.chars).any(|(a, b)| a.glyph != b.glyph);
    let status = if low > 0 || substituted { WagonStatus::AcceptedDamaged } else { WagonStatus::Accepted };
    Decision { status, code: Some(code), reject_reason: None, char_confidences, reading: text }
}

/// Recognizes every wagon of a finalized train, in position order.
pub fn recognize_train(
    train: &FinalizedTrain,
    scheme: &CheckDigitScheme,
    config: &RecognizeConfig,
) -> Vec<WagonRecord> {
    let camera = train.meta.camera.as_str();
    train
        .wagons
        .iter()
        .map(|w| match &w.slot {
            WagonSlot::Placeholder(p) => WagonRecord {
                crop_ref: p.crop_ref.clone(),
                region: Some(p.bbox),
                frame: Some(p.frame.round().max(0.0) as u64),
                ..WagonRecord::not_located(w.position, camera)
            },
            WagonSlot::Tracked(track) => recognize_track(w.position, camera, track, scheme, config),
        })
        .collect()
}

fn recognize_track(
    position: usize,
    camera: &str,
    track: &Track,
    scheme: &CheckDigitScheme,
    config: &RecognizeConfig,
) -> WagonRecord {
    let view = track.best_view.as_ref();
    let mut record = WagonRecord {
        crop_ref: view.and_then(|v| v.crop_ref.clone()),
        region: view.map(|v| v.bbox),
        frame: view.map(|v| v.frame),
        status: WagonStatus::Rejected,
        reject_reason: Some(RejectReason::NoReading),
        ..WagonRecord::not_located(position, camera)
    };
    if let Ok(reading) = aggregate_track(track) {
        let d = decide(&reading, scheme, config);
        record.status = d.status;
        record.code = d.code;
        record.reject_reason = d.reject_reason;
        record.char_confidences = d.char_confidences;
        record.reading = Some(d.reading);
    }
    record
}
