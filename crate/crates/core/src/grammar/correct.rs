use super::{RawReading, ReadChar, WAGON_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotClass {
    Letter,
    Digit,
}

impl SlotClass {
    fn admits(self, glyph: char) -> bool {
        match self {
            SlotClass::Letter => glyph.is_ascii_uppercase(),
            SlotClass::Digit => glyph.is_ascii_digit(),
        }
    }
}

/// Class required at `index` (0-based) in a reading of `len` glyphs.
///
/// Three or four glyphs read as a locomotive number, so every slot is a
/// digit. Any other length is laid out on the wagon pattern: letters in
/// slots 0..3, digits in 3..10, the region letter in slot 10. Slots past
/// the wagon pattern have no class.
pub fn slot_class(len: usize, index: usize) -> Option<SlotClass> {
    if (3..=4).contains(&len) {
        return Some(SlotClass::Digit);
    }
    match index {
        0..=2 => Some(SlotClass::Letter),
        3..WAGON_LEN => Some(SlotClass::Digit),
        WAGON_LEN => Some(SlotClass::Letter),
        _ => None,
    }
}

// Letter/digit look-alikes: O↔0, I↔1, Z↔2, S↔5, B↔8, G↔6, Q↔0, T↔7.
fn as_digit(glyph: char) -> Option<char> {
    Some(match glyph {
        'O' | 'Q' => '0',
        'I' => '1',
        'Z' => '2',
        'S' => '5',
        'G' => '6',
        'T' => '7',
        'B' => '8',
        _ => return None,
    })
}

fn as_letter(glyph: char) -> Option<char> {
    Some(match glyph {
        '0' => 'O',
        '1' => 'I',
        '2' => 'Z',
        '5' => 'S',
        '6' => 'G',
        '7' => 'T',
        '8' => 'B',
        _ => return None,
    })
}

fn coerce(c: &ReadChar, class: SlotClass) -> Option<char> {
    if let Some(alt) = c.alternatives.iter().find(|g| class.admits(**g)) {
        return Some(*alt);
    }
    match class {
        SlotClass::Digit => as_digit(c.glyph),
        SlotClass::Letter => as_letter(c.glyph),
    }
}

/// Coerces each glyph into the class its slot requires.
///
/// A glyph of the wrong class is replaced by its best-ranked alternative of
/// the right class, falling back to the look-alike table. When neither
/// yields a substitute the glyph is kept and flagged `inadmissible`.
pub fn pattern_correct(reading: &RawReading) -> RawReading {
    let len = reading.chars.len();
    let chars = reading
        .chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut out = c.clone();
            out.inadmissible = false;
            let Some(class) = slot_class(len, i) else {
                return out;
            };
            if class.admits(c.glyph) {
                return out;
            }
            match coerce(c, class) {
                Some(g) => out.glyph = g,
                None => out.inadmissible = true,
            }
            out
        })
        .collect();
    RawReading { chars, source_track: reading.source_track }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn glyph_at(r: &RawReading, i: usize) -> char {
        r.chars[i].glyph
    }

    #[test]
    fn digit_slots_take_digits() {
        // positions are 1-based in prose: 5th and 9th glyphs
        let r = RawReading::from_text("HFE0O4063S").unwrap();
        let c = pattern_correct(&r);
        assert_eq!(glyph_at(&c, 4), '0');
        assert_eq!(glyph_at(&c, 9), '5');
        let r = RawReading::from_text("HFE094O6S1").unwrap();
        let c = pattern_correct(&r);
        assert_eq!(c.text(), "HFE0940651");
    }

    #[test]
    fn letter_slots_take_letters() {
        let c = pattern_correct(&RawReading::from_text("8F5094063L").unwrap());
        assert_eq!(&c.text()[..3], "BFS");
    }

    #[test]
    fn eleventh_glyph_stays_a_letter() {
        let c = pattern_correct(&RawReading::from_text("FHD6432581L").unwrap());
        assert_eq!(c.text(), "FHD6432581L");
        assert!(c.chars.iter().all(|ch| !ch.inadmissible));
        let c = pattern_correct(&RawReading::from_text("FHD64325818").unwrap());
        assert_eq!(glyph_at(&c, 10), 'B');
    }

    #[test]
    fn locomotive_lengths_are_all_digits() {
        assert_eq!(pattern_correct(&RawReading::from_text("B33O").unwrap()).text(), "8330");
        assert_eq!(pattern_correct(&RawReading::from_text("G7Z").unwrap()).text(), "672");
    }

    #[test]
    fn unknown_glyph_is_flagged_not_guessed() {
        let c = pattern_correct(&RawReading::from_text("HFE09X0631").unwrap());
        assert_eq!(glyph_at(&c, 5), 'X');
        assert!(c.chars[5].inadmissible);
        assert_eq!(c.chars.iter().filter(|ch| ch.inadmissible).count(), 1);
        // digit 4 has no letter look-alike
        let c = pattern_correct(&RawReading::from_text("4FE0940631").unwrap());
        assert!(c.chars[0].inadmissible);
    }

    #[test]
    fn alternatives_win_over_table() {
        let mut r = RawReading::from_text("HFE094B631").unwrap();
        r.chars[6].alternatives = vec!['R', '3', '8'];
        assert_eq!(glyph_at(&pattern_correct(&r), 6), '3');
    }

    #[test]
    fn extra_slots_are_left_alone() {
        let c = pattern_correct(&RawReading::from_text("HFE0940631LX").unwrap());
        assert_eq!(c.text(), "HFE0940631LX");
        assert!(!c.chars[11].inadmissible);
    }

    fn arb_reading() -> impl Strategy<Value = RawReading> {
        let glyph = prop_oneof![(b'0'..=b'9').prop_map(char::from), (b'A'..=b'Z').prop_map(char::from)];
        let ch = (glyph.clone(), 0.0f64..=1.0, proptest::collection::vec(glyph, 0..3))
            .prop_map(|(g, c, alts)| ReadChar { glyph: g, confidence: c, alternatives: alts, inadmissible: false });
        proptest::collection::vec(ch, 1..=12).prop_map(|chars| RawReading { chars, source_track: None })
    }

    proptest! {
        #[test]
        fn idempotent(r in arb_reading()) {
            let once = pattern_correct(&r);
            prop_assert_eq!(pattern_correct(&once), once);
        }

        #[test]
        fn admissible_slots_match_class(r in arb_reading()) {
            let c = pattern_correct(&r);
            for (i, ch) in c.chars.iter().enumerate() {
                if let Some(class) = slot_class(c.len(), i) {
                    prop_assert_eq!(class.admits(ch.glyph), !ch.inadmissible);
                }
            }
        }
    }
}
