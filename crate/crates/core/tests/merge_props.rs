use std::collections::BTreeSet;

use proptest::prelude::*;

use skycat::archive::{Archive, ArchiveConfig};
use skycat::catalog::RowFilter;
use skycat::harness::{simulate_night, MetricsSink, SimConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Every staged row lands in the catalog exactly once and the ingest
    /// tables end empty.
    #[test]
    fn merge_conserves_rows(
        seed in any::<u64>(),
        ccds in 2u16..12,
        visits in 3u64..30,
        transient_rate in 0.0..1.0f64,
    ) {
        let mut cfg = ArchiveConfig::default();
        cfg.ingest.ccd_count = ccds;
        cfg.budget.ccd_count = ccds;
        let archive = Archive::new(cfg).unwrap();
        let sim = SimConfig {
            seed,
            ccd_count: ccds,
            visits_per_night: Some(visits),
            transient_rate,
            merge_at_end: false,
            ..SimConfig::default()
        };
        let report = simulate_night(&archive, &sim, &mut MetricsSink::null()).unwrap();
        prop_assert!(report.reconciled);

        let staged = archive.ingest.scan(&RowFilter::default());
        let ids: BTreeSet<_> = staged.iter().map(|r| r.identity()).collect();
        prop_assert_eq!(ids.len(), staged.len());

        let merged = archive.merge_night(true).unwrap();
        prop_assert!(merged.merge.complete);
        prop_assert_eq!(merged.merge.rows_merged, staged.len());
        prop_assert_eq!(archive.ingest.total_rows(), 0);

        let mut stored = Vec::new();
        for k in archive.catalog.keys() {
            stored.extend(archive.catalog.scan(&k, |_| true).unwrap());
        }
        let stored_ids: BTreeSet<_> = stored.iter().map(|r| r.identity()).collect();
        prop_assert_eq!(stored.len(), staged.len());
        prop_assert_eq!(stored_ids, ids);
    }
}
