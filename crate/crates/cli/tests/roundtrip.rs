use kcorr_cli::ingest::{dataset_to_records, read_records, records_to_dataset, write_records, InputRecord};
use proptest::prelude::*;

fn key(r: &InputRecord) -> (String, u64, u64) {
    (r.subject.clone(), r.unit_location.to_bits(), r.subunit.to_bits())
}

fn sorted(mut v: Vec<InputRecord>) -> Vec<InputRecord> {
    v.sort_by_key(key);
    v
}

/// Complete files: every unit carries the full subunit set, rows shuffled.
fn files() -> impl Strategy<Value = Vec<InputRecord>> {
    let grid = prop::collection::btree_set(0u32..=20, 1..5);
    let subjects = prop::collection::vec(prop::collection::btree_set(0u32..100_000, 1..8), 1..4);
    (grid, subjects, any::<u64>()).prop_flat_map(|(grid, subjects, order)| {
        let cells: Vec<(usize, f64, f64)> = subjects
            .iter()
            .enumerate()
            .flat_map(|(s, locs)| {
                let grid = grid.clone();
                locs.iter().flat_map(move |&l| {
                    grid.clone()
                        .into_iter()
                        .map(move |x| (s, l as f64 / 8.0, x as f64 / 20.0))
                })
            })
            .collect();
        let n = cells.len();
        prop::collection::vec(-1e6f64..1e6, n).prop_map(move |ys| {
            let mut recs: Vec<InputRecord> = cells
                .iter()
                .zip(ys)
                .map(|(&(s, l, x), y)| InputRecord {
                    subject: format!("s{s}"),
                    unit_location: l,
                    subunit: x,
                    response: y,
                })
                .collect();
            // deterministic shuffle keyed by `order`
            recs.sort_by_key(|r| {
                let k = key(r);
                (k.1 ^ k.2 ^ order).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            });
            recs
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn export_of_ingest_is_record_equal(recs in files()) {
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        let parsed = read_records(buf.as_slice()).unwrap();
        prop_assert_eq!(sorted(parsed.clone()), sorted(recs.clone()));

        let max = recs.iter().map(|r| r.unit_location).fold(0.0, f64::max);
        let data = records_to_dataset(&parsed, Some(max + 1.0)).unwrap();
        prop_assert_eq!(sorted(dataset_to_records(&data)), sorted(recs));
    }
}
