use proptest::prelude::*;

use wagonline_core::config::PipelineConfig;
use wagonline_core::pipeline::run;
use wagonline_core::sim::{generate, ScenarioConfig};
use wagonline_core::summary::TrainSummary;
use wagonline_service::store::{CorrectionRequest, TrainStore, MARK_DAMAGED};

const CODES: [&str; 4] = ["HFE-094063-1", "FHD-643258-1L", "HFE-094063-7", "ABC-12"];

fn trains() -> Vec<TrainSummary> {
    (0..3)
        .map(|i| {
            let config =
                ScenarioConfig { damaged_fraction: 0.4, start_ts_ms: 1_000 + i, ..ScenarioConfig::clean(8, i as u64) };
            let (stream, _) = generate(&config).unwrap();
            run(stream.map(Ok), &PipelineConfig::default()).unwrap()
        })
        .collect()
}

#[derive(Debug, Clone)]
enum Op {
    Ingest(usize),
    Correct { train: usize, position: usize, code: usize, damaged: bool },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..3).prop_map(Op::Ingest),
        (0usize..3, 0usize..10, 0..CODES.len(), any::<bool>())
            .prop_map(|(train, position, code, damaged)| Op::Correct { train, position, code, damaged }),
    ]
}

fn views(store: &TrainStore) -> Vec<u8> {
    let ids: Vec<String> = store.list().into_iter().map(|t| t.train_id).collect();
    let details: Vec<_> = ids.iter().map(|id| store.detail(id)).collect();
    serde_json::to_vec(&(store.list(), details)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn replay_reproduces_the_served_view(ops in proptest::collection::vec(op(), 1..30)) {
        let trains = trains();
        let dir = tempfile::tempdir().unwrap();
        let mut store = TrainStore::open(dir.path()).unwrap();
        let mut accepted_corrections = 0;
        for (t, op) in ops.into_iter().enumerate() {
            match op {
                Op::Ingest(i) => {
                    store.ingest(trains[i].clone()).unwrap();
                }
                Op::Correct { train, position, code, damaged } => {
                    let req = CorrectionRequest {
                        new_code: CODES[code].into(),
                        operator: "op".into(),
                        reason: if damaged { MARK_DAMAGED.into() } else { "misread".into() },
                        ..Default::default()
                    };
                    if store.correct(&trains[train].train_id, position, req, t as i64).is_ok() {
                        accepted_corrections += 1;
                    }
                }
            }
        }
        let served = views(&store);
        let audit: usize = store.list().iter().map(|t| store.corrections(&t.train_id).unwrap().len()).sum();
        prop_assert_eq!(audit, accepted_corrections);
        drop(store);
        let replayed = TrainStore::open(dir.path()).unwrap();
        prop_assert_eq!(views(&replayed), served);
    }
}
