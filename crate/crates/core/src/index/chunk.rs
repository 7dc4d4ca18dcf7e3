use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trixel::TrixelId;

/// One partition-sized piece of a spatial index: every entry sits under `prefix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexChunk<L> {
    prefix: TrixelId,
    entries: BTreeMap<TrixelId, Vec<L>>,
    pub replicas: u32,
}

impl<L> IndexChunk<L> {
    pub fn new(prefix: TrixelId) -> Self {
        IndexChunk {
            prefix,
            entries: BTreeMap::new(),
            replicas: 1,
        }
    }

    pub fn prefix(&self) -> TrixelId {
        self.prefix
    }

    /// Adds a locator under `trixel`. Returns false (and stores nothing) when
    /// `trixel` is not a descendant of the chunk prefix.
    pub fn insert(&mut self, trixel: TrixelId, locator: L) -> bool {
        if !self.prefix.contains_id(trixel) {
            return false;
        }
        self.entries.entry(trixel).or_default().push(locator);
        true
    }

    /// Removes one locator equal to `locator` under `trixel`.
    pub fn remove(&mut self, trixel: TrixelId, locator: &L) -> bool
    where
        L: PartialEq,
    {
        let Some(list) = self.entries.get_mut(&trixel) else {
            return false;
        };
        let Some(pos) = list.iter().position(|l| l == locator) else {
            return false;
        };
        list.swap_remove(pos);
        if list.is_empty() {
            self.entries.remove(&trixel);
        }
        true
    }

    pub fn get(&self, trixel: TrixelId) -> &[L] {
        self.entries.get(&trixel).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Locators under `cell`, which may be coarser than the entry level.
    pub fn under(&self, cell: TrixelId) -> impl Iterator<Item = &L> {
        self.entries
            .range(cell..)
            .take_while(move |(t, _)| cell.contains_id(**t))
            .flat_map(|(_, v)| v.iter())
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TrixelId, &L)> {
        self.entries
            .iter()
            .flat_map(|(t, v)| v.iter().map(move |l| (*t, l)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::trixel_of;

    #[test]
    fn rejects_foreign_entries() {
        let prefix = trixel_of(10.0, 10.0, 3).unwrap();
        let mut chunk = IndexChunk::new(prefix);
        assert!(chunk.insert(trixel_of(10.0, 10.0, 10).unwrap(), 1u64));
        assert!(!chunk.insert(trixel_of(200.0, -10.0, 10).unwrap(), 2u64));
        assert_eq!(chunk.len(), 1);
        assert!(chunk.iter().all(|(t, _)| prefix.contains_id(t)));
    }

    #[test]
    fn under_walks_a_subtree() {
        let prefix = trixel_of(10.0, 10.0, 2).unwrap();
        let mut chunk = IndexChunk::new(prefix);
        for (i, d) in [0.0, 0.01, 0.02].iter().enumerate() {
            let t = trixel_of(10.0 + d, 10.0, 10).unwrap();
            chunk.insert(t, i);
        }
        assert_eq!(chunk.under(prefix).count(), 3);
        let leaf = trixel_of(10.0, 10.0, 10).unwrap();
        assert!(chunk.under(leaf).any(|&i| i == 0));
    }
}
