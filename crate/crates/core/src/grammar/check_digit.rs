//! Weighted modulo-11 check digit over the six serial digits.
//!
//! The raw value is `(11 - Σ wᵢ·dᵢ mod 11) mod 11`. Ten of the eleven raw
//! values are digits; what happens to the eleventh (raw value 10) is a
//! property of the scheme. Mapping it to `0` makes the function total but
//! merges two residue classes, which lets some single-digit substitutions
//! through. The default scheme instead treats such serials as unassignable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{RollingStockId, Serial, ValidationError, SERIAL_LEN};

pub const MODULUS: u32 = 11;

/// Treatment of serials whose raw check value is 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainderTen {
    /// No check digit exists; codes with such serials never validate.
    Unassignable,
    /// Check digit 0.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemeError {
    #[error("weight {0} outside 2..=10")]
    WeightOutOfRange(u32),
    #[error("weights must be pairwise distinct")]
    DuplicateWeight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckDigitScheme {
    name: String,
    weights: [u32; SERIAL_LEN],
    remainder_ten: RemainderTen,
}

impl CheckDigitScheme {
    pub fn new(
        name: impl Into<String>,
        weights: [u32; SERIAL_LEN],
        remainder_ten: RemainderTen,
    ) -> Result<Self, SchemeError> {
        for (i, w) in weights.iter().enumerate() {
            if !(2..=10).contains(w) {
                return Err(SchemeError::WeightOutOfRange(*w));
            }
            if weights[..i].contains(w) {
                return Err(SchemeError::DuplicateWeight);
            }
        }
        Ok(CheckDigitScheme { name: name.into(), weights, remainder_ten })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weights(&self) -> &[u32; SERIAL_LEN] {
        &self.weights
    }

    pub fn remainder_ten(&self) -> RemainderTen {
        self.remainder_ten
    }

    /// Check digit for `serial`, or `None` when the serial is unassignable
    /// under this scheme.
    pub fn compute(&self, serial: &Serial) -> Option<u8> {
        let sum: u32 = self.weights.iter().zip(serial.digits()).map(|(w, d)| w * u32::from(*d)).sum();
        match (MODULUS - sum % MODULUS) % MODULUS {
            10 => match self.remainder_ten {
                RemainderTen::Unassignable => None,
                RemainderTen::Zero => Some(0),
            },
            v => Some(v as u8),
        }
    }

    pub fn is_assignable(&self, serial: &Serial) -> bool {
        self.compute(serial).is_some()
    }

    /// Locomotive numbers carry no check digit and always pass.
    pub fn validate(&self, id: &RollingStockId) -> Result<(), ValidationError> {
        match id {
            RollingStockId::Locomotive(_) => Ok(()),
            RollingStockId::Wagon(w) => {
                let expected = self.compute(w.serial());
                if expected == Some(w.check()) {
                    Ok(())
                } else {
                    Err(ValidationError::CheckDigitMismatch { expected, found: w.check() })
                }
            }
        }
    }
}

impl Default for CheckDigitScheme {
    /// Weights 7,6,5,4,3,2 left to right.
    fn default() -> Self {
        CheckDigitScheme {
            name: "weighted-mod11".to_string(),
            weights: [7, 6, 5, 4, 3, 2],
            remainder_ten: RemainderTen::Unassignable,
        }
    }
}

pub fn compute_check_digit(serial: &Serial, scheme: &CheckDigitScheme) -> Option<u8> {
    scheme.compute(serial)
}

pub fn validate(id: &RollingStockId, scheme: &CheckDigitScheme) -> Result<(), ValidationError> {
    scheme.validate(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse;
    use proptest::prelude::*;

    fn serial(s: &str) -> Serial {
        s.parse().unwrap()
    }

    // Independent oracle: the weighted sum written out longhand.
    fn oracle(s: &str) -> u32 {
        let d: Vec<u32> = s.bytes().map(|b| u32::from(b - b'0')).collect();
        let sum = 7 * d[0] + 6 * d[1] + 5 * d[2] + 4 * d[3] + 3 * d[4] + 2 * d[5];
        (11 - sum % 11) % 11
    }

    #[test]
    fn frozen_values() {
        let scheme = CheckDigitScheme::default();
        // (serial, weighted sum, raw value) computed by hand / offline oracle
        let cases = [
            ("094063", 98, 1),
            ("643258", 120, 1),
            ("000000", 0, 0),
            ("123456", 77, 0),
            ("100000", 7, 4),
            ("000001", 2, 9),
            ("314159", 84, 4),
            ("271828", 115, 6),
            ("555555", 135, 8),
        ];
        for (s, _sum, raw) in cases {
            assert_eq!(oracle(s), raw, "{s}");
            assert_eq!(scheme.compute(&serial(s)), Some(raw as u8), "{s}");
        }
    }

    #[test]
    fn raw_ten_follows_policy() {
        // 999999: sum 243 ≡ 1 (mod 11) → raw 10
        assert_eq!(oracle("999999"), 10);
        assert_eq!(CheckDigitScheme::default().compute(&serial("999999")), None);
        let zero = CheckDigitScheme::new("zero", [7, 6, 5, 4, 3, 2], RemainderTen::Zero).unwrap();
        assert_eq!(zero.compute(&serial("999999")), Some(0));
    }

    #[test]
    fn validate_examples() {
        let scheme = CheckDigitScheme::default();
        assert_eq!(validate(&parse("HFE-094063-1").unwrap(), &scheme), Ok(()));
        assert_eq!(validate(&parse("FHD-643258-1L").unwrap(), &scheme), Ok(()));
        assert_eq!(validate(&parse("672").unwrap(), &scheme), Ok(()));
        assert_eq!(
            validate(&parse("HFE-094063-7").unwrap(), &scheme),
            Err(ValidationError::CheckDigitMismatch { expected: Some(1), found: 7 })
        );
        // unassignable serial never validates, whatever digit is painted
        for c in 0..=9 {
            let code = format!("ABC-999999-{c}");
            assert!(validate(&parse(&code).unwrap(), &scheme).is_err());
        }
    }

    #[test]
    fn scheme_rejects_bad_weights() {
        assert_eq!(
            CheckDigitScheme::new("x", [1, 6, 5, 4, 3, 2], RemainderTen::Zero),
            Err(SchemeError::WeightOutOfRange(1))
        );
        assert_eq!(
            CheckDigitScheme::new("x", [7, 7, 5, 4, 3, 2], RemainderTen::Zero),
            Err(SchemeError::DuplicateWeight)
        );
        assert!(CheckDigitScheme::new("x", [10, 9, 8, 7, 6, 5], RemainderTen::Zero).is_ok());
    }

    #[test]
    fn mapping_ten_to_zero_misses_substitutions() {
        // 123456 → raw 0; changing the first digit 1→9 adds 56 ≡ 1 → raw 10 → 0
        let zero = CheckDigitScheme::new("zero", [7, 6, 5, 4, 3, 2], RemainderTen::Zero).unwrap();
        assert_eq!(zero.compute(&serial("123456")), zero.compute(&serial("923456")));
        let default = CheckDigitScheme::default();
        assert_ne!(default.compute(&serial("123456")), default.compute(&serial("923456")));
    }

    #[test]
    fn single_substitution_detected_exhaustively_per_position() {
        let scheme = CheckDigitScheme::default();
        // every serial of the form d00000 .. 00000d plus a spread of others
        for base in ["000000", "094063", "643258", "123456", "314159", "870214"] {
            let s = serial(base);
            let Some(check) = scheme.compute(&s) else { continue };
            for pos in 0..SERIAL_LEN {
                for d in 0..=9u8 {
                    let mut digits = *s.digits();
                    if digits[pos] == d {
                        continue;
                    }
                    digits[pos] = d;
                    assert_ne!(scheme.compute(&Serial::new(digits).unwrap()), Some(check), "{base} pos {pos} → {d}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn matches_oracle(digits in proptest::array::uniform6(0u8..=9)) {
            let s = Serial::new(digits).unwrap();
            let raw = oracle(&s.to_string());
            let got = CheckDigitScheme::default().compute(&s);
            if raw == 10 {
                prop_assert_eq!(got, None);
            } else {
                prop_assert_eq!(got, Some(raw as u8));
            }
        }

        #[test]
        fn substitution_changes_check(digits in proptest::array::uniform6(0u8..=9), pos in 0usize..6, delta in 1u8..=9) {
            let scheme = CheckDigitScheme::default();
            let s = Serial::new(digits).unwrap();
            prop_assume!(scheme.is_assignable(&s));
            let mut other = digits;
            other[pos] = (other[pos] + delta) % 10;
            prop_assert_ne!(scheme.compute(&Serial::new(other).unwrap()), scheme.compute(&s));
        }
    }
}
