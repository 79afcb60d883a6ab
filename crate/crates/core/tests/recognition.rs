use proptest::prelude::*;

use wagonline_core::config::PipelineConfig;
use wagonline_core::grammar::{CheckDigitScheme, RawReading, ReadChar};
use wagonline_core::pipeline::run;
use wagonline_core::recognize::{decide, RecognizeConfig, RejectReason, WagonStatus};
use wagonline_core::sim::{generate, DamageMode, ScenarioConfig};
use wagonline_core::summary::TrainSummary;

fn summarize(config: &ScenarioConfig) -> (TrainSummary, wagonline_core::sim::GroundTruth) {
    let (stream, truth) = generate(config).unwrap();
    (run(stream.map(Ok), &PipelineConfig::default()).unwrap(), truth)
}

#[test]
fn clean_wagons_are_all_accepted_with_true_codes() {
    let (summary, truth) =
        summarize(&ScenarioConfig { two_line_fraction: 0.3, locomotives: 2, ..ScenarioConfig::clean(40, 21) });
    assert_eq!(summary.wagon_count, 40);
    for (w, t) in summary.wagons.iter().zip(&truth.wagons) {
        assert_eq!(w.status, WagonStatus::Accepted, "position {}", w.position);
        assert_eq!(w.code, t.code);
        assert!(w.crop_ref.is_some());
    }
    assert_eq!(summary.stats.rejection_rate, 0.0);
    assert_eq!(summary.validate(&CheckDigitScheme::default()), Ok(()));
}

#[test]
fn damage_modes_reject_for_the_right_reason() {
    let (summary, truth) = summarize(&ScenarioConfig { damaged_fraction: 0.3, ..ScenarioConfig::clean(60, 4) });
    let mut seen = 0;
    for (w, t) in summary.wagons.iter().zip(&truth.wagons) {
        let expected = match t.damage {
            None => None,
            Some(DamageMode::TruncateTail | DamageMode::OccludeHead) => Some(RejectReason::PatternViolation),
            Some(DamageMode::Garble) => Some(RejectReason::CheckDigitMismatch),
        };
        assert_eq!(w.reject_reason, expected, "position {}: {:?}", w.position, w.reading);
        seen += usize::from(expected.is_some());
    }
    assert!(seen > 5);
}

#[test]
fn unlabeled_wagons_are_not_located() {
    let (summary, truth) = summarize(&ScenarioConfig { unlabeled_fraction: 0.2, ..ScenarioConfig::clean(50, 9) });
    assert_eq!(summary.wagon_count, 50);
    for (w, t) in summary.wagons.iter().zip(&truth.wagons) {
        assert_eq!(w.status == WagonStatus::NotLocated, t.code.is_none());
    }
    assert_eq!(summary.stats.not_located, truth.wagons.iter().filter(|t| t.code.is_none()).count());
}

#[test]
fn confusions_are_outvoted() {
    let (summary, truth) = summarize(&ScenarioConfig { char_confusion_rate: 0.05, ..ScenarioConfig::clean(30, 2) });
    for (w, t) in summary.wagons.iter().zip(&truth.wagons) {
        assert!(w.status.is_accepted());
        assert_eq!(w.code, t.code);
    }
}

fn arb_reading() -> impl Strategy<Value = RawReading> {
    let glyph = prop_oneof![
        4 => (b'0'..=b'9').prop_map(char::from),
        3 => (b'A'..=b'Z').prop_map(char::from),
    ];
    let ch = (glyph.clone(), 0.0f64..=1.0, proptest::collection::vec(glyph, 0..2)).prop_map(|(g, c, alts)| ReadChar {
        glyph: g,
        confidence: c,
        alternatives: alts,
        inadmissible: false,
    });
    proptest::collection::vec(ch, 1..=12).prop_map(|chars| RawReading { chars, source_track: None })
}

proptest! {
    #[test]
    fn accepted_codes_always_validate(r in arb_reading()) {
        let scheme = CheckDigitScheme::default();
        let d = decide(&r, &scheme, &RecognizeConfig::default());
        if d.status.is_accepted() {
            let code = d.code.expect("accepted carries a code");
            prop_assert!(scheme.validate(&code).is_ok());
        } else {
            prop_assert!(d.reject_reason.is_some());
        }
    }

    #[test]
    fn lowering_tau_never_rejects_for_confidence(r in arb_reading(), hi in 0.0f64..=1.0, lo_frac in 0.0f64..=1.0) {
        let scheme = CheckDigitScheme::default();
        let strict = RecognizeConfig { tau_conf: hi, max_low: 1 };
        let loose = RecognizeConfig { tau_conf: hi * lo_frac, max_low: 1 };
        if decide(&r, &scheme, &strict).status.is_accepted() {
            prop_assert!(decide(&r, &scheme, &loose).status.is_accepted());
        }
    }

    #[test]
    fn single_clean_wagon_reads_its_code(seed in 0u64..1000) {
        let (summary, truth) = summarize(&ScenarioConfig::clean(1, seed));
        prop_assert_eq!(summary.wagons[0].status, WagonStatus::Accepted);
        prop_assert_eq!(&summary.wagons[0].code, &truth.wagons[0].code);
    }
}
