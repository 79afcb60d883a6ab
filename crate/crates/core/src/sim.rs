//! Synthetic train passages with ground truth.
//!
//! A train of `wagons` units moves horizontally across a fixed camera at a
//! constant speed. Every unit has the same body length; couplings between
//! units vary by ±20%. The identification code sits at the middle of each
//! body. The stream starts on the frame the head enters the picture and ends
//! on the frame the tail has left it.
//!
//! Frames are produced lazily, so a thousand-wagon stream never lives in
//! memory at once.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{Detection, DetectionClass, FrameDetections};
use crate::geometry::BBox;
use crate::grammar::{CheckDigitScheme, LocomotiveCode, RawReading, ReadChar, RollingStockId, Serial, WagonCode};

const MIN_VISIBLE_REGION: f64 = 0.6;
const GAP_JITTER: f64 = 0.2;
const CLEAN_GLYPH_CONF: f64 = 0.92;
const REGION_LETTER_PROBABILITY: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub wagons: usize,
    /// Leading units that carry locomotive numbers instead of wagon codes.
    pub locomotives: usize,
    pub px_per_frame: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    /// Size of a ten-glyph code region; shorter codes scale the width down.
    pub code_region_width: f64,
    pub code_region_height: f64,
    pub wagon_length_px: f64,
    pub coupling_gap_px: f64,
    pub miss_rate: f64,
    /// Expected spurious code-region detections per frame.
    pub false_positive_rate: f64,
    pub char_confusion_rate: f64,
    pub confidence_noise: f64,
    /// Standard deviation of box position jitter, pixels.
    pub box_jitter_px: f64,
    pub damaged_fraction: f64,
    pub unlabeled_fraction: f64,
    /// Fraction of codes painted on two rows (letters above digits).
    pub two_line_fraction: f64,
    pub camera: String,
    /// Train moves right-to-left instead of left-to-right.
    pub mirror: bool,
    pub start_ts_ms: i64,
    pub fps: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            wagons: 34,
            locomotives: 0,
            px_per_frame: 12.0,
            frame_width: 1920,
            frame_height: 1080,
            code_region_width: 280.0,
            code_region_height: 56.0,
            wagon_length_px: 900.0,
            coupling_gap_px: 200.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            char_confusion_rate: 0.0,
            confidence_noise: 0.03,
            box_jitter_px: 1.0,
            damaged_fraction: 0.0,
            unlabeled_fraction: 0.0,
            two_line_fraction: 0.0,
            camera: "cam-left".to_string(),
            mirror: false,
            start_ts_ms: 1_600_000_000_000,
            fps: 30.0,
        }
    }
}

impl ScenarioConfig {
    /// All noise sources off.
    pub fn clean(wagons: usize, seed: u64) -> Self {
        ScenarioConfig { seed, wagons, confidence_noise: 0.0, box_jitter_px: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let probabilities = [
            ("miss_rate", self.miss_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("char_confusion_rate", self.char_confusion_rate),
            ("damaged_fraction", self.damaged_fraction),
            ("unlabeled_fraction", self.unlabeled_fraction),
            ("two_line_fraction", self.two_line_fraction),
        ];
        for (name, p) in probabilities {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("{name} must be within [0, 1]")));
            }
        }
        if self.wagons == 0 {
            return bad("wagons must be at least 1");
        }
        if self.locomotives > self.wagons {
            return bad("locomotives exceed wagons");
        }
        if !(self.px_per_frame.is_finite() && self.px_per_frame > 0.0) {
            return bad("px_per_frame must be > 0");
        }
        if !(self.confidence_noise >= 0.0 && self.box_jitter_px >= 0.0) {
            return bad("noise must be non-negative");
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad("fps must be > 0");
        }
        let (w, h) = (f64::from(self.frame_width), f64::from(self.frame_height));
        if !(self.code_region_width > 0.0 && self.code_region_width < w / 2.0) {
            return bad("code region must be narrower than half the frame");
        }
        if !(self.code_region_height > 0.0 && self.code_region_height * 2.0 < h / 2.0) {
            return bad("code region too tall for the frame");
        }
        if !(self.wagon_length_px > self.code_region_width && self.coupling_gap_px > 0.0) {
            return bad("wagon must be longer than its code region");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageMode {
    /// Trailing glyphs illegible.
    TruncateTail,
    /// First two glyphs hidden (graffiti).
    OccludeHead,
    /// Glyphs misread so the check digit no longer matches.
    Garble,
}

const DAMAGE_MODES: [DamageMode; 3] = [DamageMode::TruncateTail, DamageMode::OccludeHead, DamageMode::Garble];
const GARBLED_CONF: f64 = 0.6;

/// What remains legible of `code` after `mode` damage.
///
/// Truncation always leaves nine glyphs, so a code with a region letter
/// loses both the region letter and its check digit. Garbling bumps the
/// third serial digit, which the check digit always catches. A garbled
/// locomotive number shows an unreadable `X`.
pub fn apply_damage(code: &RollingStockId, mode: DamageMode) -> RawReading {
    let glyphs = code.glyphs();
    let mut chars: Vec<ReadChar> = glyphs.iter().map(|g| ReadChar::new(*g, 1.0)).collect();
    match mode {
        DamageMode::TruncateTail => {
            let keep = match code {
                RollingStockId::Wagon(_) => 9,
                RollingStockId::Locomotive(_) => 2,
            };
            chars.truncate(keep);
        }
        DamageMode::OccludeHead => {
            chars.drain(..2);
        }
        DamageMode::Garble => {
            let (at, replacement) = match code {
                RollingStockId::Wagon(_) => {
                    let d = glyphs[5].to_digit(10).unwrap_or(0);
                    (5, char::from_digit((d + 1) % 10, 10).unwrap_or('0'))
                }
                RollingStockId::Locomotive(_) => (1, 'X'),
            };
            chars[at] = ReadChar::new(replacement, GARBLED_CONF);
        }
    }
    RawReading { chars, source_track: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthWagon {
    pub position: usize,
    /// `None` for a unit whose code region is never visible.
    pub code: Option<RollingStockId>,
    pub damaged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damage: Option<DamageMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub camera: String,
    pub wagons: Vec<TruthWagon>,
    pub expected_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone)]
struct Unit {
    code: RollingStockId,
    /// Distance from the train head to this unit's front, pixels.
    offset: f64,
    region_y: f64,
    two_line: bool,
}

#[derive(Debug, Clone)]
struct Painted {
    glyphs: Vec<ReadChar>,
    /// Slot of the first legible glyph; non-zero when the head is occluded.
    first_slot: usize,
    visible: bool,
    /// Per-glyph horizontal placement jitter as a fraction of glyph pitch.
    spacing: Vec<f64>,
}

/// Lazily generated detection stream of one camera.
pub struct FrameStream {
    config: ScenarioConfig,
    units: Vec<Unit>,
    painted: Vec<Painted>,
    glyph_pitch: f64,
    rng: ChaCha8Rng,
    next_frame: u64,
    last_frame: u64,
    jitter: Option<Normal<f64>>,
    conf_noise: Option<Normal<f64>>,
    false_positives: Option<Poisson<f64>>,
}

fn random_wagon(rng: &mut ChaCha8Rng, scheme: &CheckDigitScheme) -> RollingStockId {
    let letters = [0; 3].map(|_| rng.random_range(b'A'..=b'Z'));
    let serial = loop {
        let s = Serial::new([0; 6].map(|_| rng.random_range(0..=9u8))).expect("digits in range");
        if scheme.is_assignable(&s) {
            break s;
        }
    };
    let check = scheme.compute(&serial).expect("assignable");
    let region = rng.random_bool(REGION_LETTER_PROBABILITY).then(|| rng.random_range(b'A'..=b'Z'));
    RollingStockId::Wagon(WagonCode::new(letters, serial, check, region).expect("valid parts"))
}

fn random_locomotive(rng: &mut ChaCha8Rng) -> RollingStockId {
    let len = rng.random_range(3..=4usize);
    let mut digits: Vec<u8> = (0..len).map(|_| rng.random_range(0..=9u8)).collect();
    digits[0] = rng.random_range(1..=9u8);
    RollingStockId::Locomotive(LocomotiveCode::new(&digits).expect("valid digits"))
}

fn confusable(glyph: char, rng: &mut ChaCha8Rng) -> char {
    let options: &[char] = match glyph {
        '0' => &['O', '8', 'D', 'Q'],
        '1' => &['I', '7', 'L'],
        '2' => &['Z', '7'],
        '3' => &['8', 'B'],
        '4' => &['A', '9'],
        '5' => &['S', '6'],
        '6' => &['G', '5', '8'],
        '7' => &['T', '1'],
        '8' => &['B', '3', '0'],
        '9' => &['4'],
        'B' => &['8', 'R'],
        'C' => &['G', 'O'],
        'D' => &['O', '0'],
        'E' => &['F', 'B'],
        'F' => &['E', 'P'],
        'G' => &['6', 'C'],
        'H' => &['N', 'M'],
        'I' => &['1', 'L'],
        'M' => &['N', 'H'],
        'N' => &['M', 'H'],
        'O' => &['0', 'D', 'Q'],
        'P' => &['R', 'F'],
        'Q' => &['O', '0'],
        'R' => &['P', 'B'],
        'S' => &['5'],
        'T' => &['7'],
        'U' => &['V'],
        'V' => &['U', 'Y'],
        'Z' => &['2'],
        _ => &[],
    };
    if options.is_empty() {
        let c = rng.random_range(b'A'..=b'Z');
        return char::from(if char::from(c) == glyph { b'X' } else { c });
    }
    options[rng.random_range(0..options.len())]
}

fn side_stream(side: Side) -> u64 {
    match side {
        Side::Left => 1,
        Side::Right => 2,
    }
}

/// Generates one camera's view of a passage.
pub fn generate(config: &ScenarioConfig) -> Result<(FrameStream, GroundTruth), ConfigError> {
    generate_side(config, Side::Left)
}

pub type SideOutput = (FrameStream, GroundTruth);

/// Both cameras of one passage: identical composition, independent damage,
/// occlusion and detector noise per side. The right camera sees the train
/// travel in the opposite direction.
pub fn generate_pair(config: &ScenarioConfig) -> Result<(SideOutput, SideOutput), ConfigError> {
    Ok((generate_side(config, Side::Left)?, generate_side(config, Side::Right)?))
}

pub fn generate_side(config: &ScenarioConfig, side: Side) -> Result<SideOutput, ConfigError> {
    config.validate()?;
    let scheme = CheckDigitScheme::default();

    let mut composition = ChaCha8Rng::seed_from_u64(config.seed);
    composition.set_stream(0);
    let mut units = Vec::with_capacity(config.wagons);
    let mut offset = 0.0;
    for i in 0..config.wagons {
        let code = if i < config.locomotives {
            random_locomotive(&mut composition)
        } else {
            random_wagon(&mut composition, &scheme)
        };
        let region_y = composition.random_range(0.42..0.6) * f64::from(config.frame_height);
        let two_line = composition.random_bool(config.two_line_fraction);
        units.push(Unit { code, offset, region_y, two_line });
        let gap = config.coupling_gap_px * composition.random_range(1.0 - GAP_JITTER..=1.0 + GAP_JITTER);
        offset += config.wagon_length_px + gap;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(side_stream(side));
    let mut painted = Vec::with_capacity(units.len());
    let mut truth = Vec::with_capacity(units.len());
    for (i, unit) in units.iter().enumerate() {
        let unlabeled = rng.random_bool(config.unlabeled_fraction);
        let damaged =
            !unlabeled && matches!(unit.code, RollingStockId::Wagon(_)) && rng.random_bool(config.damaged_fraction);
        let damage = damaged.then(|| DAMAGE_MODES[rng.random_range(0..DAMAGE_MODES.len())]);
        let reading = match damage {
            Some(mode) => apply_damage(&unit.code, mode),
            None => RawReading {
                chars: unit.code.glyphs().into_iter().map(|g| ReadChar::new(g, 1.0)).collect(),
                source_track: None,
            },
        };
        let spacing = (0..reading.chars.len()).map(|_| rng.random_range(-0.1..0.1)).collect();
        let first_slot = if damage == Some(DamageMode::OccludeHead) { 2 } else { 0 };
        painted.push(Painted { glyphs: reading.chars, first_slot, visible: !unlabeled, spacing });
        truth.push(TruthWagon { position: i + 1, code: (!unlabeled).then_some(unit.code), damaged, damage });
    }

    let mirror = config.mirror ^ (side == Side::Right);
    let camera = match side {
        Side::Left => config.camera.clone(),
        Side::Right => format!("{}-right", config.camera),
    };
    let total_length = units.last().map_or(0.0, |u| u.offset) + config.wagon_length_px;
    let last_frame = ((f64::from(config.frame_width) + total_length) / config.px_per_frame).ceil() as u64;
    let normal = |sd: f64| (sd > 0.0).then(|| Normal::new(0.0, sd).expect("positive std-dev"));

    let stream = FrameStream {
        config: ScenarioConfig { camera: camera.clone(), mirror, ..config.clone() },
        units,
        painted,
        glyph_pitch: config.code_region_width / 10.0,
        rng,
        next_frame: 0,
        last_frame,
        jitter: normal(config.box_jitter_px),
        conf_noise: normal(config.confidence_noise),
        false_positives: (config.false_positive_rate > 0.0)
            .then(|| Poisson::new(config.false_positive_rate).expect("positive rate")),
    };
    let expected_count = truth.len();
    Ok((stream, GroundTruth { camera, wagons: truth, expected_count }))
}

impl FrameStream {
    pub fn frame_count(&self) -> u64 {
        self.last_frame + 1
    }

    fn noisy_conf(&mut self, base: f64, floor: f64) -> f64 {
        let n = self.conf_noise.map_or(0.0, |d| d.sample(&mut self.rng));
        (base + n).clamp(floor, 1.0)
    }

    fn jitter(&mut self) -> f64 {
        self.jitter.map_or(0.0, |d| d.sample(&mut self.rng))
    }

    fn emit_unit(&mut self, idx: usize, head_x: f64, out: &mut FrameDetections) {
        let (fw, fh) = (f64::from(self.config.frame_width), f64::from(self.config.frame_height));
        let unit = &self.units[idx];
        let (offset, region_y, two_line) = (unit.offset, unit.region_y, unit.two_line);
        let full_len = unit.code.glyphs().len();
        let region_w = self.glyph_pitch * full_len as f64;
        let region_h = self.config.code_region_height * if two_line { 2.0 } else { 1.0 };
        let center_x = head_x - offset - self.config.wagon_length_px / 2.0;
        let mut region = BBox::from_center(center_x, region_y, region_w, region_h);
        if self.config.mirror {
            region = region.mirror_x(fw);
        }
        let Some(visible) = region.clamp_to(fw, fh) else { return };
        if visible.w < MIN_VISIBLE_REGION * region.w || !self.painted[idx].visible {
            return;
        }
        if self.rng.random_bool(self.config.miss_rate) {
            return;
        }
        let (jx, jy) = (self.jitter(), self.jitter());
        let region_conf = self.noisy_conf(0.9, 0.3);
        let boxed = BBox { x: visible.x + jx, y: visible.y + jy, ..visible }.clamp_to(fw, fh).unwrap_or(visible);
        out.detections.push(Detection::new(DetectionClass::CodeRegion, boxed, region_conf));

        if visible.w < region.w - 1e-9 {
            return;
        }
        let rows = if two_line { 2.0 } else { 1.0 };
        let row_h = region_h / rows;
        let first_slot = self.painted[idx].first_slot;
        for j in 0..self.painted[idx].glyphs.len() {
            // damage hides glyphs without moving the survivors
            let slot = j + first_slot;
            let painted = self.painted[idx].glyphs[j].clone();
            let spacing = self.painted[idx].spacing[j];
            let (col, row, per_row) = match (two_line, slot < 3) {
                (true, true) => (slot, 0, 3),
                (true, false) => (slot - 3, 1, full_len - 3),
                (false, _) => (slot, 0, full_len),
            };
            let row_pitch = region_w / per_row as f64;
            let glyph_w = 0.7 * row_pitch.min(self.glyph_pitch * 1.5);
            let cx = region.x + (col as f64 + 0.5 + spacing) * row_pitch + 0.3 * self.jitter();
            let cy = region.y + (row as f64 + 0.5) * row_h + 0.3 * self.jitter();
            let glyph_box = BBox::from_center(cx, cy, glyph_w, row_h * 0.8);
            let (glyph, conf) = if self.rng.random_bool(self.config.char_confusion_rate) {
                let g = confusable(painted.glyph, &mut self.rng);
                (g, self.rng.random_range(0.3..0.6))
            } else {
                (painted.glyph, self.noisy_conf(CLEAN_GLYPH_CONF * painted.confidence, 0.05))
            };
            if let Some(b) = glyph_box.clamp_to(fw, fh) {
                out.detections.push(Detection::new(DetectionClass::Glyph(glyph), b, conf));
            }
        }
    }
}

impl Iterator for FrameStream {
    type Item = FrameDetections;

    fn next(&mut self) -> Option<FrameDetections> {
        if self.next_frame > self.last_frame {
            return None;
        }
        let f = self.next_frame;
        self.next_frame += 1;
        let cfg = &self.config;
        let ts = cfg.start_ts_ms + (f as f64 * 1000.0 / cfg.fps).round() as i64;
        let mut frame = FrameDetections::new(f, ts, cfg.camera.clone(), cfg.frame_width, cfg.frame_height);
        frame.crop_ref = Some(format!("{}/{f:06}.jpg", cfg.camera));
        let head_x = f as f64 * cfg.px_per_frame;
        let fw = f64::from(cfg.frame_width);
        let wagon_len = cfg.wagon_length_px;
        // units whose body overlaps the frame
        let first = self.units.partition_point(|u| head_x - u.offset - wagon_len > fw);
        let last = self.units.partition_point(|u| head_x - u.offset >= 0.0);
        for idx in first..last {
            self.emit_unit(idx, head_x, &mut frame);
        }
        if let Some(fp) = self.false_positives {
            let count = fp.sample(&mut self.rng) as usize;
            let fh = f64::from(self.config.frame_height);
            for _ in 0..count {
                let w = self.rng.random_range(80.0..320.0);
                let h = self.rng.random_range(30.0..90.0);
                let x = self.rng.random_range(0.0..fw - w);
                let y = self.rng.random_range(0.0..fh - h);
                let conf = self.rng.random_range(0.05..0.6);
                frame.detections.push(Detection::new(DetectionClass::CodeRegion, BBox::new(x, y, w, h), conf));
            }
        }
        Some(frame)
    }
}
