//! Detection records: one JSON object per frame, one frame per line.
//!
//! ```text
//! {"v":1,"frame":12,"ts_ms":400,"camera":"cam-left","width":1920,"height":1080,
//!  "crop_ref":"cam-left/000012.jpg","detections":[{"cls":"code_region","x":..,"y":..,"w":..,"h":..,"conf":..}]}
//! ```
//!
//! Coordinates are absolute pixels with a top-left origin. `cls` is either
//! `code_region` or a single glyph `0`-`9`/`A`-`Z`.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::BBox;
use crate::grammar::is_glyph;

pub const SCHEMA_VERSION: u32 = 1;
const CODE_REGION: &str = "code_region";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectionClass {
    CodeRegion,
    Glyph(char),
}

impl Serialize for DetectionClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            DetectionClass::CodeRegion => serializer.serialize_str(CODE_REGION),
            DetectionClass::Glyph(c) => serializer.serialize_str(c.encode_utf8(&mut [0; 4])),
        }
    }
}

impl<'de> Deserialize<'de> for DetectionClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ClassVisitor;

        impl Visitor<'_> for ClassVisitor {
            type Value = DetectionClass;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"code_region\" or a single glyph 0-9/A-Z")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                if v == CODE_REGION {
                    return Ok(DetectionClass::CodeRegion);
                }
                let mut chars = v.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if is_glyph(c) => Ok(DetectionClass::Glyph(c)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }

        deserializer.deserialize_str(ClassVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub cls: DetectionClass,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
}

impl Detection {
    pub fn new(cls: DetectionClass, bbox: BBox, conf: f64) -> Self {
        Detection { cls, x: bbox.x, y: bbox.y, w: bbox.w, h: bbox.h, conf }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDetections {
    pub v: u32,
    pub frame: u64,
    pub ts_ms: i64,
    pub camera: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_ref: Option<String>,
    pub detections: Vec<Detection>,
}

/// A field-level violation inside one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FrameDetections {
    pub fn new(frame: u64, ts_ms: i64, camera: impl Into<String>, width: u32, height: u32) -> Self {
        FrameDetections {
            v: SCHEMA_VERSION,
            frame,
            ts_ms,
            camera: camera.into(),
            width,
            height,
            crop_ref: None,
            detections: Vec::new(),
        }
    }

    pub fn regions(&self) -> impl Iterator<Item = &Detection> {
        self.detections.iter().filter(|d| d.cls == DetectionClass::CodeRegion)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let fail = |field: String, message: &str| Err(FieldError { field, message: message.to_string() });
        if self.v != SCHEMA_VERSION {
            return fail("v".into(), "unsupported schema version");
        }
        if self.width == 0 || self.height == 0 {
            return fail("width".into(), "frame size must be positive");
        }
        for (i, d) in self.detections.iter().enumerate() {
            let at = |f: &str| format!("detections[{i}].{f}");
            if !d.x.is_finite() {
                return fail(at("x"), "not finite");
            }
            if !d.y.is_finite() {
                return fail(at("y"), "not finite");
            }
            if !(d.w.is_finite() && d.w > 0.0) {
                return fail(at("w"), "must be > 0");
            }
            if !(d.h.is_finite() && d.h > 0.0) {
                return fail(at("h"), "must be > 0");
            }
            if !(0.0..=1.0).contains(&d.conf) {
                return fail(at("conf"), "must be within [0, 1]");
            }
            if d.bbox().clamp_to(f64::from(self.width), f64::from(self.height)).is_none() {
                return fail(format!("detections[{i}]"), "box lies outside the frame");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: invalid `{field}`: {message}")]
    Schema { line: usize, field: String, message: String },
    #[error("line {line}: frame {frame} does not follow frame {previous}")]
    NonMonotonicFrame { line: usize, previous: u64, frame: u64 },
}

/// Parses and validates one JSON line.
pub fn parse_line(text: &str, line: usize) -> Result<FrameDetections, StreamError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let frame: FrameDetections = serde_path_to_error::deserialize(&mut de).map_err(|e| StreamError::Schema {
        line,
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| StreamError::Schema { line, field: ".".into(), message: e.to_string() })?;
    frame.validate().map_err(|e| StreamError::Schema { line, field: e.field, message: e.message })?;
    Ok(frame)
}

/// Streaming reader over a JSON Lines detection file.
///
/// Holds one line in memory at a time. Stops after the first error.
pub struct DetectionReader<R> {
    input: R,
    buf: String,
    line: usize,
    previous: Option<(u64, u32, u32)>,
    done: bool,
}

impl<R: BufRead> DetectionReader<R> {
    pub fn new(input: R) -> Self {
        DetectionReader { input, buf: String::new(), line: 0, previous: None, done: false }
    }

    fn next_record(&mut self) -> Option<Result<FrameDetections, StreamError>> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            let line = self.line;
            let record = match parse_line(text, line) {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            if let Some((prev, width, height)) = self.previous {
                if record.frame <= prev {
                    return Some(Err(StreamError::NonMonotonicFrame { line, previous: prev, frame: record.frame }));
                }
                if (record.width, record.height) != (width, height) {
                    return Some(Err(StreamError::Schema {
                        line,
                        field: "width".into(),
                        message: format!("frame size changed from {width}x{height}"),
                    }));
                }
            }
            self.previous = Some((record.frame, record.width, record.height));
            return Some(Ok(record));
        }
    }
}

impl<R: BufRead> Iterator for DetectionReader<R> {
    type Item = Result<FrameDetections, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.next_record();
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}

pub fn read_stream(path: impl AsRef<Path>) -> io::Result<DetectionReader<BufReader<File>>> {
    Ok(DetectionReader::new(BufReader::new(File::open(path)?)))
}

pub fn write_frame<W: Write>(out: &mut W, frame: &FrameDetections) -> io::Result<()> {
    serde_json::to_writer(&mut *out, frame)?;
    out.write_all(b"\n")
}

pub fn write_stream<'a, W: Write>(
    out: &mut W,
    frames: impl IntoIterator<Item = &'a FrameDetections>,
) -> io::Result<()> {
    for f in frames {
        write_frame(out, f)?;
    }
    Ok(())
}
