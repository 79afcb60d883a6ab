//! Code-region tracking and wagon counting.
//!
//! Region detections are chained into tracks by greedy IoU association
//! against each open track's predicted box. A track is confirmed after a run
//! of consecutive hits and counts once, when its center crosses the counting
//! line in the direction of travel. Wagons whose code is never located are
//! recovered afterwards from the timing of the counts:
//!
//! * an inter-count gap well above the median gap hides `round(gap/median) - 1`
//!   wagons;
//! * at the head and tail of the train, the stream boundaries bound how much
//!   time the first and last located codes can account for. The stream is
//!   expected to span the passage: it starts when the head enters the
//!   picture and ends when the tail has left it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectionClass, FrameDetections};
use crate::geometry::{median, BBox};

/// Per-frame displacements kept for the velocity median; one spurious
/// association cannot swing the prediction.
const VELOCITY_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    pub confirm_frames: u32,
    pub close_after: u32,
    pub gap_factor: f64,
    pub min_region_conf: f64,
    /// Counting line; the frame's vertical center line when unset.
    #[serde(rename = "count_line")]
    pub count_line_x: Option<f64>,
    /// Tracked frames sampled before the travel direction is fixed.
    pub direction_window: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_threshold: 0.3,
            confirm_frames: 3,
            close_after: 10,
            gap_factor: 1.75,
            min_region_conf: 0.25,
            count_line_x: None,
            direction_window: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrackError {
    #[error("frame {frame} arrived after frame {previous}")]
    OutOfOrderFrame { previous: u64, frame: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackState {
    Tentative,
    Confirmed,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    Unknown,
}

impl Direction {
    fn from_velocity(v: f64) -> Self {
        if v > 0.0 {
            Direction::LeftToRight
        } else if v < 0.0 {
            Direction::RightToLeft
        } else {
            Direction::Unknown
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::LeftToRight => 1.0,
            Direction::RightToLeft => -1.0,
            Direction::Unknown => 0.0,
        }
    }
}

/// A glyph detection attached to a track. Stored compactly: long trains
/// accumulate millions of these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharBox {
    pub glyph: char,
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
    pub conf: f32,
}

impl CharBox {
    pub fn center(&self) -> (f32, f32) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharFrame {
    pub frame: u64,
    pub region: BBox,
    pub chars: Vec<CharBox>,
}

/// The frame in which a track's region box was largest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestView {
    pub frame: u64,
    pub bbox: BBox,
    pub crop_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub boxes: Vec<(u64, BBox)>,
    pub char_frames: Vec<CharFrame>,
    /// Horizontal center velocity, px/frame.
    pub velocity: f64,
    pub counted: bool,
    pub counted_frame: Option<u64>,
    pub best_view: Option<BestView>,
    hits_in_row: u32,
    misses: u32,
    count_velocity: f64,
    duplicate: bool,
    recent: VecDeque<f64>,
}

impl Track {
    fn new(id: u64, frame: u64, bbox: BBox) -> Self {
        Track {
            id,
            state: TrackState::Tentative,
            boxes: vec![(frame, bbox)],
            char_frames: Vec::new(),
            velocity: 0.0,
            counted: false,
            counted_frame: None,
            best_view: None,
            hits_in_row: 1,
            misses: 0,
            count_velocity: 0.0,
            duplicate: false,
            recent: VecDeque::with_capacity(VELOCITY_WINDOW),
        }
    }

    pub fn last_box(&self) -> (u64, BBox) {
        *self.boxes.last().expect("a track always has a box")
    }

    fn predicted(&self, frame: u64) -> BBox {
        let (at, b) = self.last_box();
        b.translate_x(self.velocity * (frame - at) as f64)
    }

    fn observe(&mut self, frame: u64, bbox: BBox) {
        let (at, prev) = self.last_box();
        let dt = (frame - at) as f64;
        if self.recent.len() == VELOCITY_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back((bbox.center().0 - prev.center().0) / dt);
        let mut window: Vec<f64> = self.recent.iter().copied().collect();
        self.velocity = median(&mut window).unwrap_or_default();
        self.boxes.push((frame, bbox));
        self.hits_in_row += 1;
        self.misses = 0;
    }

    fn note_view(&mut self, frame: u64, bbox: BBox, crop_ref: Option<&String>) {
        if self.best_view.as_ref().is_none_or(|v| bbox.area() > v.bbox.area()) {
            self.best_view = Some(BestView { frame, bbox, crop_ref: crop_ref.cloned() });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrackEvent {
    TrackStarted { track: u64, frame: u64 },
    WagonCounted { track: u64, frame: u64, count: usize },
    TrackClosed { track: u64, frame: u64 },
}

/// A wagon inferred from count timing; its code was never located.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceholderWagon {
    /// Estimated frame at which its code would have crossed the line.
    pub frame: f64,
    /// Probable location of the code in that frame.
    pub bbox: BBox,
    pub crop_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WagonSlot {
    Tracked(Track),
    Placeholder(PlaceholderWagon),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalizedWagon {
    pub position: usize,
    pub slot: WagonSlot,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub camera: String,
    pub started_ms: i64,
    pub ended_ms: i64,
    pub first_frame: u64,
    pub last_frame: u64,
    pub width: u32,
    pub height: u32,
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalizedTrain {
    pub meta: StreamMeta,
    pub direction: Direction,
    pub wagons: Vec<FinalizedWagon>,
}

/// Per-camera tracking and counting state.
#[derive(Debug, Clone)]
pub struct CountingState {
    config: TrackerConfig,
    open: Vec<Track>,
    finished: Vec<Track>,
    next_track_id: u64,
    wagons_counted: usize,
    count_line_x: Option<f64>,
    count_frames: Vec<u64>,
    gap_history: Vec<u64>,
    direction: Direction,
    direction_samples: Vec<f64>,
    tracked_frames: usize,
    meta: Option<StreamMeta>,
    crops: Vec<(u64, String)>,
}

impl CountingState {
    pub fn new(config: TrackerConfig) -> Self {
        CountingState {
            count_line_x: config.count_line_x,
            config,
            open: Vec::new(),
            finished: Vec::new(),
            next_track_id: 1,
            wagons_counted: 0,
            count_frames: Vec::new(),
            gap_history: Vec::new(),
            direction: Direction::Unknown,
            direction_samples: Vec::new(),
            tracked_frames: 0,
            meta: None,
            crops: Vec::new(),
        }
    }

    pub fn wagons_counted(&self) -> usize {
        self.wagons_counted
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn count_line_x(&self) -> Option<f64> {
        self.count_line_x
    }

    pub fn gap_history(&self) -> &[u64] {
        &self.gap_history
    }

    pub fn open_tracks(&self) -> &[Track] {
        &self.open
    }

    pub fn meta(&self) -> Option<&StreamMeta> {
        self.meta.as_ref()
    }

    pub fn update(&mut self, frame: &FrameDetections) -> Result<Vec<TrackEvent>, TrackError> {
        let (width, height) = (f64::from(frame.width), f64::from(frame.height));
        match &mut self.meta {
            Some(meta) => {
                if frame.frame <= meta.last_frame {
                    return Err(TrackError::OutOfOrderFrame { previous: meta.last_frame, frame: frame.frame });
                }
                meta.last_frame = frame.frame;
                meta.ended_ms = frame.ts_ms;
                meta.frames += 1;
            }
            None => {
                self.meta = Some(StreamMeta {
                    camera: frame.camera.clone(),
                    started_ms: frame.ts_ms,
                    ended_ms: frame.ts_ms,
                    first_frame: frame.frame,
                    last_frame: frame.frame,
                    width: frame.width,
                    height: frame.height,
                    frames: 1,
                });
                self.count_line_x.get_or_insert(width / 2.0);
            }
        }
        if let Some(c) = &frame.crop_ref {
            self.crops.push((frame.frame, c.clone()));
        }
        let now = frame.frame;
        let mut events = Vec::new();

        let regions: Vec<(BBox, f64)> =
            frame.regions().filter_map(|d| d.bbox().clamp_to(width, height).map(|b| (b, d.conf))).collect();
        let predicted: Vec<Option<BBox>> = self.open.iter().map(|t| t.predicted(now).clamp_to(width, height)).collect();

        // greedy: best IoU first, older track on ties
        let mut pairs = Vec::new();
        for (ti, pred) in predicted.iter().enumerate() {
            let Some(pred) = pred else { continue };
            for (di, (b, _)) in regions.iter().enumerate() {
                let iou = pred.iou(b);
                if iou >= self.config.iou_threshold {
                    pairs.push((iou, self.open[ti].id, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut track_hit = vec![None; self.open.len()];
        let mut det_used = vec![false; regions.len()];
        for (_, _, ti, di) in pairs {
            if track_hit[ti].is_none() && !det_used[di] {
                track_hit[ti] = Some(di);
                det_used[di] = true;
            }
        }

        let mut closing = Vec::new();
        for (ti, hit) in track_hit.iter().enumerate() {
            let track = &mut self.open[ti];
            match hit {
                Some(di) => {
                    let bbox = regions[*di].0;
                    track.observe(now, bbox);
                    track.note_view(now, bbox, frame.crop_ref.as_ref());
                    if track.state == TrackState::Tentative && track.hits_in_row >= self.config.confirm_frames {
                        track.state = TrackState::Confirmed;
                    }
                }
                None => {
                    track.hits_in_row = 0;
                    track.misses += 1;
                    let (cx, _) = track.predicted(now).center();
                    if track.misses >= self.config.close_after || cx < 0.0 || cx > width {
                        closing.push(ti);
                    }
                }
            }
        }

        let mut updated: Vec<usize> =
            track_hit.iter().enumerate().filter(|(_, h)| h.is_some()).map(|(i, _)| i).collect();
        for (di, (bbox, conf)) in regions.iter().enumerate() {
            if det_used[di] || *conf < self.config.min_region_conf {
                continue;
            }
            // a box on top of an existing track is a duplicate, not a new wagon
            if predicted.iter().flatten().any(|p| p.iou(bbox) >= self.config.iou_threshold) {
                continue;
            }
            let mut track = Track::new(self.next_track_id, now, *bbox);
            self.next_track_id += 1;
            track.note_view(now, *bbox, frame.crop_ref.as_ref());
            if track.hits_in_row >= self.config.confirm_frames {
                track.state = TrackState::Confirmed;
            }
            events.push(TrackEvent::TrackStarted { track: track.id, frame: now });
            updated.push(self.open.len());
            self.open.push(track);
        }

        self.attach_chars(frame, &updated);
        self.sample_direction(&updated);
        self.count_crossings(now, &updated, &mut events);

        for ti in closing.into_iter().rev() {
            let mut track = self.open.swap_remove(ti);
            track.state = TrackState::Closed;
            events.push(TrackEvent::TrackClosed { track: track.id, frame: now });
            if track.counted {
                self.finished.push(track);
            }
        }
        Ok(events)
    }

    fn attach_chars(&mut self, frame: &FrameDetections, updated: &[usize]) {
        for d in &frame.detections {
            let DetectionClass::Glyph(glyph) = d.cls else { continue };
            let (cx, cy) = d.bbox().center();
            // confirmed tracks first, then the tightest box
            let owner = updated.iter().copied().filter(|ti| self.open[*ti].last_box().1.contains_point(cx, cy)).min_by(
                |a, b| {
                    let (ta, tb) = (&self.open[*a], &self.open[*b]);
                    let rank = |t: &Track| u8::from(t.state != TrackState::Confirmed);
                    rank(ta).cmp(&rank(tb)).then(ta.last_box().1.area().total_cmp(&tb.last_box().1.area()))
                },
            );
            let Some(ti) = owner else { continue };
            let track = &mut self.open[ti];
            let region = track.last_box().1;
            if track.char_frames.last().is_none_or(|cf| cf.frame != frame.frame) {
                track.char_frames.push(CharFrame { frame: frame.frame, region, chars: Vec::new() });
            }
            let cf = track.char_frames.last_mut().expect("pushed above");
            cf.chars.push(CharBox {
                glyph,
                x: d.x as f32,
                y: d.y as f32,
                w: d.w as f32,
                h: d.h as f32,
                conf: d.conf as f32,
            });
        }
    }

    fn sample_direction(&mut self, updated: &[usize]) {
        if self.direction != Direction::Unknown {
            return;
        }
        let before = self.direction_samples.len();
        for ti in updated {
            let t = &self.open[*ti];
            if t.state == TrackState::Confirmed && t.velocity != 0.0 {
                self.direction_samples.push(t.velocity);
            }
        }
        if self.direction_samples.len() > before {
            self.tracked_frames += 1;
        }
        if self.tracked_frames >= self.config.direction_window {
            let mut samples = self.direction_samples.clone();
            self.direction = median(&mut samples).map_or(Direction::Unknown, Direction::from_velocity);
        }
    }

    fn count_crossings(&mut self, now: u64, updated: &[usize], events: &mut Vec<TrackEvent>) {
        let line = self.count_line_x.unwrap_or_default();
        let counted_boxes: Vec<(u64, BBox)> =
            self.open.iter().filter(|t| t.counted).map(|t| (t.id, t.predicted(now))).collect();
        for ti in updated {
            let track = &mut self.open[*ti];
            if track.counted || track.duplicate || track.state != TrackState::Confirmed || track.last_box().0 != now {
                continue;
            }
            let dir = match self.direction {
                Direction::Unknown => Direction::from_velocity(track.velocity),
                d => d,
            }
            .sign();
            if dir == 0.0 {
                continue;
            }
            let start = track.boxes[0].1.center().0;
            let current = track.last_box().1.center().0;
            if (start - line) * dir < 0.0 && (current - line) * dir >= 0.0 {
                let current_box = track.last_box().1;
                if counted_boxes
                    .iter()
                    .any(|(id, b)| *id != track.id && b.iou(&current_box) >= self.config.iou_threshold)
                {
                    track.duplicate = true;
                    continue;
                }
                track.counted = true;
                track.counted_frame = Some(now);
                track.count_velocity = track.velocity;
                if let Some(prev) = self.count_frames.last() {
                    self.gap_history.push(now - prev);
                }
                self.count_frames.push(now);
                self.wagons_counted += 1;
                events.push(TrackEvent::WagonCounted { track: track.id, frame: now, count: self.wagons_counted });
            }
        }
    }

    fn counted_tracks(&self) -> impl Iterator<Item = &Track> {
        self.finished.iter().chain(self.open.iter()).filter(|t| t.counted)
    }

    fn crop_near(&self, frame: f64) -> Option<String> {
        if self.crops.is_empty() {
            return None;
        }
        let target = frame.round().max(0.0) as u64;
        let i = self.crops.partition_point(|(f, _)| *f < target);
        let candidates = [i.checked_sub(1), (i < self.crops.len()).then_some(i)];
        candidates
            .into_iter()
            .flatten()
            .min_by_key(|j| self.crops[*j].0.abs_diff(target))
            .map(|j| self.crops[j].1.clone())
    }

    /// Wagons passed without a located code, inferred from count timing.
    ///
    /// Needs at least four counted wagons; returns nothing otherwise.
    pub fn infer_missed(&self) -> Vec<PlaceholderWagon> {
        let Some(meta) = &self.meta else { return Vec::new() };
        if self.count_frames.len() < 4 {
            return Vec::new();
        }
        let mut gaps: Vec<f64> = self.gap_history.iter().map(|g| *g as f64).collect();
        let Some(median_gap) = median(&mut gaps) else { return Vec::new() };
        if median_gap <= 0.0 {
            return Vec::new();
        }

        let mut frames = Vec::new();
        for pair in self.count_frames.windows(2) {
            let (a, b) = (pair[0] as f64, pair[1] as f64);
            let gap = b - a;
            if gap > self.config.gap_factor * median_gap {
                let missing = (gap / median_gap).round() as usize - 1;
                frames.extend((1..=missing).map(|j| a + j as f64 * gap / (missing + 1) as f64));
            }
        }

        let counted: Vec<&Track> = self.counted_tracks().collect();
        let mut speeds: Vec<f64> = counted.iter().map(|t| t.count_velocity.abs()).collect();
        let speed = median(&mut speeds).unwrap_or(0.0);
        let line = self.count_line_x.unwrap_or_default();
        let width = f64::from(meta.width);
        let travel_in = match self.direction {
            Direction::LeftToRight => Some(line),
            Direction::RightToLeft => Some(width - line),
            Direction::Unknown => None,
        };
        if let (Some(travel_in), true) = (travel_in, speed > 0.0) {
            let travel_out = width - travel_in;
            let first = self.count_frames[0] as f64;
            let last = *self.count_frames.last().expect("len checked") as f64;
            // A located code accounts for at most one body length of the
            // time between the stream edge and its crossing.
            let excess_in = first - meta.first_frame as f64 - travel_in / speed;
            let head = (excess_in / median_gap).floor().max(0.0) as usize;
            frames.extend((1..=head).map(|j| first - j as f64 * median_gap));
            let excess_out = meta.last_frame as f64 - last - travel_out / speed;
            let tail = (excess_out / median_gap).floor().max(0.0) as usize;
            frames.extend((1..=tail).map(|j| last + j as f64 * median_gap));
        }
        frames.sort_by(f64::total_cmp);

        let views: Vec<BBox> = counted.iter().filter_map(|t| t.best_view.as_ref().map(|v| v.bbox)).collect();
        let pick = |f: fn(&BBox) -> f64| {
            let mut v: Vec<f64> = views.iter().map(f).collect();
            median(&mut v).unwrap_or(0.0)
        };
        let (w, h, cy) = (pick(|b| b.w), pick(|b| b.h), pick(|b| b.center().1));
        let probable = BBox::from_center(line, cy, w, h);
        frames
            .into_iter()
            .map(|frame| PlaceholderWagon { frame, bbox: probable, crop_ref: self.crop_near(frame) })
            .collect()
    }

    /// Closes every open track and orders counted and inferred wagons by
    /// crossing time.
    pub fn finalize(mut self) -> FinalizedTrain {
        let placeholders = self.infer_missed();
        self.wagons_counted += placeholders.len();
        let mut tracks: Vec<Track> = self.finished.drain(..).chain(self.open.drain(..)).filter(|t| t.counted).collect();
        for t in &mut tracks {
            t.state = TrackState::Closed;
        }

        let mut slots: Vec<(f64, u64, WagonSlot)> = tracks
            .into_iter()
            .map(|t| (t.counted_frame.unwrap_or_default() as f64, t.id, WagonSlot::Tracked(t)))
            .chain(placeholders.into_iter().map(|p| (p.frame, u64::MAX, WagonSlot::Placeholder(p))))
            .collect();
        slots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        FinalizedTrain {
            meta: self.meta.unwrap_or_default(),
            direction: self.direction,
            wagons: slots
                .into_iter()
                .enumerate()
                .map(|(i, (_, _, slot))| FinalizedWagon { position: i + 1, slot })
                .collect(),
        }
    }
}
