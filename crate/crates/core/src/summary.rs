//! Per-train summaries and the mosaic manifest.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::grammar::CheckDigitScheme;
use crate::recognize::{WagonRecord, WagonStatus};
use crate::track::StreamMeta;

pub const MANIFEST_FILE: &str = "mosaic.json";
pub const PAGE_FILE: &str = "mosaic.html";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub accepted: usize,
    pub accepted_damaged: usize,
    pub rejected: usize,
    pub not_located: usize,
    pub rejection_rate: f64,
    /// Wagons flagged for review and not yet settled by an operator.
    #[serde(default)]
    pub conflicts: usize,
}

impl SummaryStats {
    pub fn compute(wagons: &[WagonRecord]) -> Self {
        let mut s = SummaryStats::default();
        for w in wagons {
            match w.status {
                WagonStatus::Accepted => s.accepted += 1,
                WagonStatus::AcceptedDamaged => s.accepted_damaged += 1,
                WagonStatus::Rejected => s.rejected += 1,
                WagonStatus::NotLocated => s.not_located += 1,
            }
            if w.needs_review && !w.operator_corrected {
                s.conflicts += 1;
            }
        }
        if !wagons.is_empty() {
            s.rejection_rate = (s.rejected + s.not_located) as f64 / wagons.len() as f64;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_id: String,
    pub camera: String,
    pub started_ms: i64,
    pub ended_ms: i64,
    pub wagon_count: usize,
    pub wagons: Vec<WagonRecord>,
    pub stats: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SummaryError {
    #[error("train_id is empty")]
    EmptyId,
    #[error("wagon_count {declared} but {actual} wagons listed")]
    CountMismatch { declared: usize, actual: usize },
    #[error("wagon at index {index} has position {position}")]
    BadPosition { index: usize, position: usize },
    #[error("wagon {position}: {message}")]
    InconsistentWagon { position: usize, message: String },
    #[error("stats do not match the wagon list")]
    StaleStats,
}

pub fn train_id(camera: &str, started_ms: i64) -> String {
    format!("{camera}-{started_ms}")
}

/// Assembles a summary, ordering wagons by position.
pub fn build_summary(mut wagons: Vec<WagonRecord>, meta: &StreamMeta) -> TrainSummary {
    wagons.sort_by_key(|w| w.position);
    TrainSummary {
        train_id: train_id(&meta.camera, meta.started_ms),
        camera: meta.camera.clone(),
        started_ms: meta.started_ms,
        ended_ms: meta.ended_ms,
        wagon_count: wagons.len(),
        stats: SummaryStats::compute(&wagons),
        wagons,
    }
}

impl TrainSummary {
    pub fn refresh_stats(&mut self) {
        self.wagon_count = self.wagons.len();
        self.stats = SummaryStats::compute(&self.wagons);
    }

    /// Checks the structural invariants a stored or received summary must hold.
    pub fn validate(&self, scheme: &CheckDigitScheme) -> Result<(), SummaryError> {
        if self.train_id.is_empty() {
            return Err(SummaryError::EmptyId);
        }
        if self.wagon_count != self.wagons.len() {
            return Err(SummaryError::CountMismatch { declared: self.wagon_count, actual: self.wagons.len() });
        }
        for (index, w) in self.wagons.iter().enumerate() {
            if w.position != index + 1 {
                return Err(SummaryError::BadPosition { index, position: w.position });
            }
            let bad = |message: &str| SummaryError::InconsistentWagon { position: w.position, message: message.into() };
            match w.status {
                WagonStatus::Accepted | WagonStatus::AcceptedDamaged => {
                    let code = w.code.as_ref().ok_or_else(|| bad("accepted without a code"))?;
                    scheme.validate(code).map_err(|e| bad(&e.to_string()))?;
                }
                WagonStatus::Rejected if w.reject_reason.is_none() => return Err(bad("rejected without a reason")),
                WagonStatus::NotLocated if w.code.is_some() || w.reading.is_some() => {
                    return Err(bad("not located but carries a reading"))
                }
                _ => {}
            }
        }
        if !stats_match(&self.stats, &SummaryStats::compute(&self.wagons)) {
            return Err(SummaryError::StaleStats);
        }
        Ok(())
    }
}

fn stats_match(a: &SummaryStats, b: &SummaryStats) -> bool {
    (a.accepted, a.accepted_damaged, a.rejected, a.not_located, a.conflicts)
        == (b.accepted, b.accepted_damaged, b.rejected, b.not_located, b.conflicts)
        && (a.rejection_rate - b.rejection_rate).abs() < 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Border {
    Red,
    Blue,
    Green,
    Gray,
}

impl From<WagonStatus> for Border {
    fn from(status: WagonStatus) -> Self {
        match status {
            WagonStatus::Accepted => Border::Green,
            WagonStatus::AcceptedDamaged => Border::Blue,
            WagonStatus::Rejected => Border::Red,
            WagonStatus::NotLocated => Border::Gray,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicCell {
    pub pos: usize,
    pub crop_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    pub status: WagonStatus,
    pub border: Border,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicManifest {
    pub train_id: String,
    pub cells: Vec<MosaicCell>,
}

impl MosaicManifest {
    pub fn from_summary(summary: &TrainSummary) -> Self {
        MosaicManifest {
            train_id: summary.train_id.clone(),
            cells: summary
                .wagons
                .iter()
                .map(|w| MosaicCell {
                    pos: w.position,
                    crop_ref: w.crop_ref.clone().unwrap_or_default(),
                    code: w.code.as_ref().map(ToString::to_string),
                    status: w.status,
                    border: w.status.into(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// A crop the page could not link to; the cell shows a placeholder instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingCrop {
    pub pos: usize,
    pub crop_ref: String,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub manifest: MosaicManifest,
    pub missing: Vec<MissingCrop>,
}

/// Writes `mosaic.json` and `mosaic.html` into `out_dir`.
///
/// With a `crop_dir`, each crop is checked for existence and linked by a
/// path relative to `out_dir`; without one, crop refs are linked as given.
pub fn render_manifest(
    summary: &TrainSummary,
    crop_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<RenderOutput, ReportError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let manifest = MosaicManifest::from_summary(summary);

    let mut missing = Vec::new();
    let mut sources = Vec::with_capacity(manifest.cells.len());
    for cell in &manifest.cells {
        let src = match crop_dir {
            _ if cell.crop_ref.is_empty() => None,
            None => Some(cell.crop_ref.clone()),
            Some(dir) => {
                let path = dir.join(&cell.crop_ref);
                if path.is_file() {
                    let abs_out = fs::canonicalize(out_dir).unwrap_or_else(|_| out_dir.to_path_buf());
                    let abs_crop = fs::canonicalize(&path).unwrap_or(path);
                    pathdiff::diff_paths(&abs_crop, &abs_out).map(|p| p.to_string_lossy().replace('\\', "/"))
                } else {
                    None
                }
            }
        };
        if src.is_none() {
            warn!(pos = cell.pos, crop_ref = %cell.crop_ref, "missing crop");
            missing.push(MissingCrop { pos: cell.pos, crop_ref: cell.crop_ref.clone() });
        }
        sources.push(src);
    }

    let json_path = out_dir.join(MANIFEST_FILE);
    fs::write(&json_path, manifest.to_json()).map_err(io_err(&json_path))?;
    let page_path = out_dir.join(PAGE_FILE);
    fs::write(&page_path, render_page(summary, &manifest, &sources)).map_err(io_err(&page_path))?;
    Ok(RenderOutput { manifest, missing })
}

fn render_page(summary: &TrainSummary, manifest: &MosaicManifest, sources: &[Option<String>]) -> String {
    use html_escape::{encode_double_quoted_attribute as attr, encode_text as text};

    let mut html = String::new();
    let title = text(&summary.train_id);
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n<style>\n\
         body {{ font-family: sans-serif; margin: 1rem; }}\n\
         .grid {{ display: grid; grid-template-columns: repeat(auto-fill, minmax(180px, 1fr)); gap: 8px; }}\n\
         .cell {{ border: 4px solid; padding: 4px; font-size: 12px; }}\n\
         .cell img, .cell .none {{ width: 100%; height: 60px; object-fit: contain; background: #ddd; display: block; }}\n\
         .red {{ border-color: #d22; }} .blue {{ border-color: #26d; }} .green {{ border-color: #2a2; }} .gray {{ border-color: #999; }}\n\
         </style>\n</head>\n<body>\n<h1>{title}</h1>\n<p>{} wagons, {} accepted, {} damaged, {} rejected, {} not located</p>\n<div class=\"grid\">\n",
        summary.wagon_count,
        summary.stats.accepted,
        summary.stats.accepted_damaged,
        summary.stats.rejected,
        summary.stats.not_located,
    );
    for (cell, src) in manifest.cells.iter().zip(sources) {
        let border = serde_json::to_value(cell.border).expect("border serializes");
        let border = border.as_str().unwrap_or_default();
        let status = serde_json::to_value(cell.status).expect("status serializes");
        let _ = writeln!(html, "<div class=\"cell {border}\" data-pos=\"{}\">", cell.pos);
        match src {
            Some(src) => {
                let _ = writeln!(html, "<img src=\"{}\" alt=\"wagon {}\">", attr(src), cell.pos);
            }
            None => {
                let _ = writeln!(html, "<div class=\"none\"></div>");
            }
        }
        let code = cell.code.as_deref().unwrap_or("-");
        let _ = writeln!(
            html,
            "<div>#{} {}</div>\n<div>{}</div>\n</div>",
            cell.pos,
            text(code),
            text(status.as_str().unwrap_or_default())
        );
    }
    html.push_str("</div>\n</body>\n</html>\n");
    html
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse;
    use crate::recognize::RejectReason;

    fn meta() -> StreamMeta {
        StreamMeta {
            camera: "cam-left".into(),
            started_ms: 1000,
            ended_ms: 9000,
            width: 1920,
            height: 1080,
            ..Default::default()
        }
    }

    fn accepted(position: usize, code: &str) -> WagonRecord {
        WagonRecord {
            status: WagonStatus::Accepted,
            code: Some(parse(code).unwrap()),
            reading: Some(code.replace('-', "")),
            crop_ref: Some(format!("cam-left/{position:06}.jpg")),
            char_confidences: vec![0.9; 10],
            ..WagonRecord::not_located(position, "cam-left")
        }
    }

    fn rejected(position: usize) -> WagonRecord {
        WagonRecord {
            status: WagonStatus::Rejected,
            reject_reason: Some(RejectReason::PatternViolation),
            reading: Some("HFE09406".into()),
            crop_ref: Some(format!("cam-left/{position:06}.jpg")),
            ..WagonRecord::not_located(position, "cam-left")
        }
    }

    #[test]
    fn all_accepted_has_zero_rejection() {
        let wagons = (1..=34).map(|p| accepted(p, "HFE-094063-1")).collect();
        let s = build_summary(wagons, &meta());
        assert_eq!(s.train_id, "cam-left-1000");
        assert_eq!(s.wagon_count, 34);
        assert_eq!(s.stats.rejection_rate, 0.0);
        assert_eq!(s.validate(&CheckDigitScheme::default()), Ok(()));
    }

    #[test]
    fn placeholder_counts_as_not_located() {
        let wagons = vec![accepted(2, "HFE-094063-1"), WagonRecord::not_located(3, "cam-left"), rejected(1)];
        let s = build_summary(wagons, &meta());
        assert_eq!(s.wagons.iter().map(|w| w.position).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(s.stats.not_located, 1);
        assert_eq!(s.stats.rejected, 1);
        assert!((s.stats.rejection_rate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn validate_catches_inconsistencies() {
        let scheme = CheckDigitScheme::default();
        let mut s = build_summary(vec![accepted(1, "HFE-094063-1"), rejected(2)], &meta());
        s.wagons[1].reject_reason = None;
        assert!(matches!(s.validate(&scheme), Err(SummaryError::InconsistentWagon { position: 2, .. })));
        let mut s = build_summary(vec![accepted(1, "HFE-094063-1")], &meta());
        s.stats.accepted = 0;
        assert_eq!(s.validate(&scheme), Err(SummaryError::StaleStats));
        s.refresh_stats();
        s.wagons[0].position = 2;
        assert!(matches!(s.validate(&scheme), Err(SummaryError::BadPosition { .. })));
    }

    #[test]
    fn borders_follow_status() {
        assert_eq!(Border::from(WagonStatus::Rejected), Border::Red);
        assert_eq!(Border::from(WagonStatus::AcceptedDamaged), Border::Blue);
        assert_eq!(Border::from(WagonStatus::Accepted), Border::Green);
        assert_eq!(Border::from(WagonStatus::NotLocated), Border::Gray);
    }

    #[test]
    fn manifest_schema_is_exact() {
        let s = build_summary(vec![accepted(1, "FHD-643258-1L"), WagonRecord::not_located(2, "cam-left")], &meta());
        let m = MosaicManifest::from_summary(&s);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "train_id": "cam-left-1000",
                "cells": [
                    {"pos": 1, "crop_ref": "cam-left/000001.jpg", "code": "FHD-643258-1L", "status": "Accepted", "border": "green"},
                    {"pos": 2, "crop_ref": "", "status": "NotLocated", "border": "gray"}
                ]
            })
        );
        assert_eq!(m.to_json(), MosaicManifest::from_summary(&s).to_json());
    }

    #[test]
    fn render_links_crops_and_reports_missing() {
        let dir = tempfile::tempdir().unwrap();
        let crops = dir.path().join("crops");
        fs::create_dir_all(crops.join("cam-left")).unwrap();
        fs::write(crops.join("cam-left/000001.jpg"), b"jpg").unwrap();
        let s = build_summary(vec![accepted(1, "HFE-094063-1"), rejected(2)], &meta());
        let out = dir.path().join("report");
        let r = render_manifest(&s, Some(&crops), &out).unwrap();
        assert_eq!(r.missing, vec![MissingCrop { pos: 2, crop_ref: "cam-left/000002.jpg".into() }]);
        let page = fs::read_to_string(out.join(PAGE_FILE)).unwrap();
        assert!(page.contains("src=\"../crops/cam-left/000001.jpg\""), "{page}");
        assert!(page.contains("class=\"cell red\""));
        assert_eq!(page.matches("class=\"cell ").count(), 2);
        let json: MosaicManifest = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(json, r.manifest);
    }
}
