//! Rolling-stock identification codes.
//!
//! Wagons carry `LLL-DDDDDD-C` (three letters, six serial digits, one check
//! digit) with an optional trailing region letter, e.g. `FHD-643258-1L`.
//! Locomotives carry a bare three or four digit number.

mod check_digit;
mod correct;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use check_digit::{compute_check_digit, validate, CheckDigitScheme, RemainderTen, SchemeError, MODULUS};
pub use correct::{pattern_correct, slot_class, SlotClass};

pub const WAGON_LEN: usize = 10;
pub const WAGON_LEN_WITH_REGION: usize = 11;
pub const SERIAL_LEN: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("`{0}` matches neither the wagon nor the locomotive code pattern")]
    InvalidPattern(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("check digit mismatch: {}, found {found}", expected_text(*.expected))]
    CheckDigitMismatch { expected: Option<u8>, found: u8 },
}

fn expected_text(expected: Option<u8>) -> String {
    match expected {
        Some(d) => format!("expected {d}"),
        None => "serial has no assignable check digit".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollingStockKind {
    Wagon,
    Locomotive,
}

/// Six serial digits, stored as values 0..=9.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Serial([u8; SERIAL_LEN]);

impl Serial {
    pub fn new(digits: [u8; SERIAL_LEN]) -> Option<Self> {
        digits.iter().all(|d| *d <= 9).then_some(Serial(digits))
    }

    pub fn digits(&self) -> &[u8; SERIAL_LEN] {
        &self.0
    }
}

impl FromStr for Serial {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != SERIAL_LEN || !bytes.iter().all(u8::is_ascii_digit) {
            return Err(GrammarError::InvalidPattern(s.to_string()));
        }
        let mut digits = [0u8; SERIAL_LEN];
        for (d, b) in digits.iter_mut().zip(bytes) {
            *d = b - b'0';
        }
        Ok(Serial(digits))
    }
}

impl fmt::Display for Serial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WagonCode {
    letters: [u8; 3],
    serial: Serial,
    check: u8,
    region: Option<u8>,
}

impl WagonCode {
    /// Letters and region must be uppercase ASCII, `check` a digit value.
    pub fn new(letters: [u8; 3], serial: Serial, check: u8, region: Option<u8>) -> Option<Self> {
        let letters_ok = letters.iter().all(u8::is_ascii_uppercase);
        let region_ok = region.is_none_or(|r| r.is_ascii_uppercase());
        (letters_ok && region_ok && check <= 9).then_some(WagonCode { letters, serial, check, region })
    }

    pub fn letters(&self) -> &str {
        // constructor guarantees ASCII
        std::str::from_utf8(&self.letters).unwrap_or_default()
    }

    pub fn serial(&self) -> &Serial {
        &self.serial
    }

    pub fn check(&self) -> u8 {
        self.check
    }

    pub fn region(&self) -> Option<char> {
        self.region.map(char::from)
    }

    pub fn with_check(self, check: u8) -> Self {
        WagonCode { check: check % 10, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocomotiveCode {
    digits: [u8; 4],
    len: u8,
}

impl LocomotiveCode {
    pub fn new(digits: &[u8]) -> Option<Self> {
        if !(3..=4).contains(&digits.len()) || digits.iter().any(|d| *d > 9) {
            return None;
        }
        let mut buf = [0u8; 4];
        buf[..digits.len()].copy_from_slice(digits);
        Some(LocomotiveCode { digits: buf, len: digits.len() as u8 })
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits[..self.len as usize]
    }
}

/// A parsed wagon or locomotive identification code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RollingStockId {
    Wagon(WagonCode),
    Locomotive(LocomotiveCode),
}

impl RollingStockId {
    pub fn kind(&self) -> RollingStockKind {
        match self {
            RollingStockId::Wagon(_) => RollingStockKind::Wagon,
            RollingStockId::Locomotive(_) => RollingStockKind::Locomotive,
        }
    }

    /// Glyphs in reading order, without separators.
    pub fn glyphs(&self) -> Vec<char> {
        match self {
            RollingStockId::Wagon(w) => {
                let mut out: Vec<char> = w.letters.iter().map(|b| char::from(*b)).collect();
                out.extend(w.serial.0.iter().map(|d| char::from(b'0' + d)));
                out.push(char::from(b'0' + w.check));
                out.extend(w.region());
                out
            }
            RollingStockId::Locomotive(l) => l.digits().iter().map(|d| char::from(b'0' + d)).collect(),
        }
    }
}

impl fmt::Display for RollingStockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RollingStockId::Wagon(w) => {
                write!(f, "{}-{}-{}", w.letters(), w.serial, w.check)?;
                if let Some(r) = w.region() {
                    write!(f, "{r}")?;
                }
                Ok(())
            }
            RollingStockId::Locomotive(l) => {
                for d in l.digits() {
                    write!(f, "{d}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for RollingStockId {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl Serialize for RollingStockId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RollingStockId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Parses a code, ignoring hyphens, spaces and letter case.
pub fn parse(text: &str) -> Result<RollingStockId, GrammarError> {
    let invalid = || GrammarError::InvalidPattern(text.to_string());
    if !text.is_ascii() {
        return Err(invalid());
    }
    let compact: Vec<u8> =
        text.bytes().filter(|b| *b != b'-' && !b.is_ascii_whitespace()).map(|b| b.to_ascii_uppercase()).collect();

    match classify_length(compact.len()) {
        Some(RollingStockKind::Locomotive) => {
            if !compact.iter().all(u8::is_ascii_digit) {
                return Err(invalid());
            }
            let digits: Vec<u8> = compact.iter().map(|b| b - b'0').collect();
            LocomotiveCode::new(&digits).map(RollingStockId::Locomotive).ok_or_else(invalid)
        }
        Some(RollingStockKind::Wagon) => {
            let letters_ok = compact[..3].iter().all(u8::is_ascii_uppercase);
            let digits_ok = compact[3..WAGON_LEN].iter().all(u8::is_ascii_digit);
            let region_ok = compact.get(WAGON_LEN).is_none_or(u8::is_ascii_uppercase);
            if !(letters_ok && digits_ok && region_ok) {
                return Err(invalid());
            }
            let letters = [compact[0], compact[1], compact[2]];
            let mut serial = [0u8; SERIAL_LEN];
            for (d, b) in serial.iter_mut().zip(&compact[3..9]) {
                *d = b - b'0';
            }
            let check = compact[9] - b'0';
            let region = compact.get(WAGON_LEN).copied();
            WagonCode::new(letters, Serial(serial), check, region).map(RollingStockId::Wagon).ok_or_else(invalid)
        }
        None => Err(invalid()),
    }
}

/// Grammar admitted by a reading of `n` glyphs; the two grammars have
/// disjoint lengths, so at most one applies.
pub fn classify_length(n: usize) -> Option<RollingStockKind> {
    match n {
        WAGON_LEN | WAGON_LEN_WITH_REGION => Some(RollingStockKind::Wagon),
        3 | 4 => Some(RollingStockKind::Locomotive),
        _ => None,
    }
}

/// One OCR glyph prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadChar {
    pub glyph: char,
    pub confidence: f64,
    /// Ranked runner-up glyphs, best first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<char>,
    /// Set by [`pattern_correct`] when the glyph could not be coerced into
    /// the class its slot requires.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inadmissible: bool,
}

impl ReadChar {
    pub fn new(glyph: char, confidence: f64) -> Self {
        ReadChar { glyph, confidence, alternatives: Vec::new(), inadmissible: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReadingError {
    #[error("reading has no glyphs")]
    Empty,
    #[error("glyph {0:?} is not in 0-9/A-Z")]
    BadGlyph(char),
    #[error("confidence at slot {0} outside [0, 1]")]
    BadConfidence(usize),
}

/// Ordered per-slot glyph predictions for one code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReading {
    pub chars: Vec<ReadChar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_track: Option<u64>,
}

pub fn is_glyph(c: char) -> bool {
    c.is_ascii_digit() || c.is_ascii_uppercase()
}

impl RawReading {
    pub fn new(chars: Vec<ReadChar>, source_track: Option<u64>) -> Result<Self, ReadingError> {
        if chars.is_empty() {
            return Err(ReadingError::Empty);
        }
        for (i, c) in chars.iter().enumerate() {
            if !is_glyph(c.glyph) {
                return Err(ReadingError::BadGlyph(c.glyph));
            }
            if !(0.0..=1.0).contains(&c.confidence) {
                return Err(ReadingError::BadConfidence(i));
            }
        }
        Ok(RawReading { chars, source_track })
    }

    /// Reading with every glyph at full confidence.
    pub fn from_text(text: &str) -> Result<Self, ReadingError> {
        Self::new(text.chars().map(|g| ReadChar::new(g, 1.0)).collect(), None)
    }

    pub fn text(&self) -> String {
        self.chars.iter().map(|c| c.glyph).collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wagon(id: RollingStockId) -> WagonCode {
        match id {
            RollingStockId::Wagon(w) => w,
            other => panic!("expected wagon, got {other}"),
        }
    }

    #[test]
    fn parses_example_codes() {
        let w = wagon(parse("HFE-094063-1").unwrap());
        assert_eq!(w.letters(), "HFE");
        assert_eq!(w.serial().to_string(), "094063");
        assert_eq!(w.check(), 1);
        assert_eq!(w.region(), None);

        let w = wagon(parse("FHD-643258-1L").unwrap());
        assert_eq!(w.letters(), "FHD");
        assert_eq!(w.check(), 1);
        assert_eq!(w.region(), Some('L'));

        let loco = parse("8330").unwrap();
        assert_eq!(loco.kind(), RollingStockKind::Locomotive);
        assert_eq!(loco.to_string(), "8330");
        assert_eq!(parse("672").unwrap().kind(), RollingStockKind::Locomotive);
    }

    #[test]
    fn normalizes_case_and_separators() {
        let id = parse("hfe 094063 1").unwrap();
        assert_eq!(id.to_string(), "HFE-094063-1");
        assert_eq!(parse("FHD6432581l").unwrap().to_string(), "FHD-643258-1L");
    }

    #[test]
    fn rejects_bad_shapes() {
        for bad in ["HF-12", "", "HFE-09406-1", "HFE-094063-12", "67A", "12345", "1HE-094063-1", "HFE-094063-1Ä"] {
            assert!(matches!(parse(bad), Err(GrammarError::InvalidPattern(_))), "{bad}");
        }
    }

    #[test]
    fn classify_lengths() {
        assert_eq!(classify_length(10), Some(RollingStockKind::Wagon));
        assert_eq!(classify_length(11), Some(RollingStockKind::Wagon));
        assert_eq!(classify_length(4), Some(RollingStockKind::Locomotive));
        assert_eq!(classify_length(3), Some(RollingStockKind::Locomotive));
        for n in [0, 1, 2, 5, 6, 7, 8, 9, 12] {
            assert_eq!(classify_length(n), None, "{n}");
        }
    }

    #[test]
    fn serde_uses_canonical_text() {
        let id = parse("fhd-643258-1l").unwrap();
        let json = serde_json::to_string(&id).unwrap();
        assert_eq!(json, "\"FHD-643258-1L\"");
        assert_eq!(serde_json::from_str::<RollingStockId>(&json).unwrap(), id);
        assert!(serde_json::from_str::<RollingStockId>("\"HF-12\"").is_err());
    }

    #[test]
    fn reading_validation() {
        assert_eq!(RawReading::new(vec![], None), Err(ReadingError::Empty));
        assert_eq!(RawReading::from_text("ab"), Err(ReadingError::BadGlyph('a')));
        let bad = vec![ReadChar::new('A', 1.5)];
        assert_eq!(RawReading::new(bad, None), Err(ReadingError::BadConfidence(0)));
    }

    pub(crate) fn arb_id() -> impl Strategy<Value = RollingStockId> {
        let wagon = (
            proptest::array::uniform3(b'A'..=b'Z'),
            proptest::array::uniform6(0u8..=9),
            0u8..=9,
            proptest::option::of(b'A'..=b'Z'),
        )
            .prop_map(|(l, s, c, r)| RollingStockId::Wagon(WagonCode::new(l, Serial(s), c, r).unwrap()));
        let loco = proptest::collection::vec(0u8..=9, 3..=4)
            .prop_map(|d| RollingStockId::Locomotive(LocomotiveCode::new(&d).unwrap()));
        prop_oneof![wagon, loco]
    }

    proptest! {
        #[test]
        fn parse_format_round_trip(id in arb_id()) {
            prop_assert_eq!(parse(&id.to_string()).unwrap(), id);
            let compact: String = id.glyphs().into_iter().collect();
            prop_assert_eq!(parse(&compact).unwrap(), id);
        }
    }
}
