use std::collections::BTreeMap;

use proptest::prelude::*;

use skycat::archive::{Archive, ArchiveConfig};
use skycat::catalog::PartitionKey;
use skycat::index::{ConeQuery, EpochRange};
use skycat::router::{Pool, Query};
use skycat::types::{Filter, SourceRecord};

fn haversine_deg(ra1: f64, dec1: f64, ra2: f64, dec2: f64) -> f64 {
    let (p1, p2) = (dec1.to_radians(), dec2.to_radians());
    let h = ((p2 - p1) / 2.0).sin().powi(2)
        + p1.cos() * p2.cos() * ((ra2 - ra1).to_radians() / 2.0).sin().powi(2);
    2.0 * h.sqrt().min(1.0).asin().to_degrees()
}

fn rows_strategy(n: usize) -> impl Strategy<Value = Vec<SourceRecord>> {
    prop::collection::vec((0.0..360.0f64, -1.0..1.0f64, 0.0..4e5f64), 1..n).prop_map(|pts| {
        pts.into_iter()
            .enumerate()
            .map(|(i, (ra, z, epoch))| SourceRecord {
                source_id: i as u64,
                visit_id: 1,
                ccd_id: 0,
                ra,
                dec: z.asin().to_degrees(),
                epoch,
                flux: 1.0 + i as f64,
                filter: Filter::I,
            })
            .collect()
    })
}

fn load(archive: &Archive, rows: &[SourceRecord]) {
    let mut by_key: BTreeMap<PartitionKey, Vec<SourceRecord>> = BTreeMap::new();
    for r in rows {
        let k = archive.catalog.index().partition_key(r.ra, r.dec, r.epoch).unwrap();
        by_key.entry(k).or_default().push(*r);
    }
    for (k, rs) in &by_key {
        archive.catalog.insert_routed(*k, rs).unwrap();
    }
}

fn brute(rows: &[SourceRecord], q: &Query) -> Vec<u64> {
    let mut ids: Vec<u64> = rows
        .iter()
        .filter(|r| {
            q.cone
                .is_none_or(|c| haversine_deg(c.center_ra, c.center_dec, r.ra, r.dec) <= c.radius)
                && q.epoch_range.is_none_or(|e| r.epoch >= e.start && r.epoch <= e.end)
        })
        .map(|r| r.source_id)
        .collect();
    ids.sort_unstable();
    ids
}

fn query_strategy() -> impl Strategy<Value = Query> {
    (
        0.0..360.0f64,
        -90.0..90.0f64,
        -2.0..1.5f64,
        prop::option::of((0.0..4e5f64, 0.0..2e5f64)),
    )
        .prop_map(|(ra, dec, log_r, epochs)| Query {
            cone: Some(ConeQuery::new(ra, dec, 10f64.powf(log_r)).unwrap()),
            epoch_range: epochs.map(|(a, w)| EpochRange::new(a, a + w).unwrap()),
            ..Query::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn router_matches_brute_force(
        level in 1u8..6,
        bucket_width in prop::sample::select(vec![3_600.0, 86_400.0, 1e6]),
        rows in rows_strategy(800),
        queries in prop::collection::vec(query_strategy(), 1..25),
    ) {
        let mut cfg = ArchiveConfig::default();
        cfg.catalog.index.partition_level = level;
        cfg.catalog.index.bucket_width = bucket_width;
        let archive = Archive::new(cfg).unwrap();
        load(&archive, &rows);
        for q in &queries {
            let mut got: Vec<u64> = archive.query(q).unwrap().rows.iter().map(|r| r.source_id).collect();
            got.sort_unstable();
            prop_assert_eq!(got, brute(&rows, q), "{:?}", q);
        }
    }

    /// Rows written after a release never show up in its pool.
    #[test]
    fn released_pool_is_isolated(
        before in rows_strategy(300),
        after in rows_strategy(300),
        queries in prop::collection::vec(query_strategy(), 1..15),
    ) {
        let archive = Archive::new(ArchiveConfig::default()).unwrap();
        load(&archive, &before);
        let rel = archive.create_release(None).unwrap();
        // Later rows go to buckets that did not exist at release time.
        let later: Vec<SourceRecord> = after
            .iter()
            .map(|r| SourceRecord { source_id: r.source_id + 1_000_000, epoch: r.epoch + 1e6, ..*r })
            .collect();
        load(&archive, &later);
        for q in &queries {
            let q = Query {
                pool: Pool::Released(rel.release_id),
                epoch_range: q.epoch_range.map(|e| EpochRange::new(e.start, e.end + 2e6).unwrap()),
                ..q.clone()
            };
            let mut got: Vec<u64> = archive.query(&q).unwrap().rows.iter().map(|r| r.source_id).collect();
            got.sort_unstable();
            prop_assert_eq!(got, brute(&before, &q));
        }
    }
}
