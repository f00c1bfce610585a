use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Signed multiset of flows: flow id to net frequency, never holding zeros.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Flowset {
    entries: BTreeMap<u64, i64>,
}

impl Flowset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `n` to the frequency of `flow` and returns the new frequency.
    /// An entry that reaches zero is removed.
    pub fn add(&mut self, flow: u64, n: i64) -> i64 {
        if n == 0 {
            return self.get(flow);
        }
        let slot = self.entries.entry(flow).or_insert(0);
        *slot += n;
        let v = *slot;
        if v == 0 {
            self.entries.remove(&flow);
        }
        v
    }

    pub fn get(&self, flow: u64) -> i64 {
        self.entries.get(&flow).copied().unwrap_or(0)
    }

    pub fn contains(&self, flow: u64) -> bool {
        self.entries.contains_key(&flow)
    }

    pub fn remove(&mut self, flow: u64) -> Option<i64> {
        self.entries.remove(&flow)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, i64)> + '_ {
        self.entries.iter().map(|(&f, &n)| (f, n))
    }

    pub fn flows(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    /// Sum of all frequencies.
    pub fn total(&self) -> i64 {
        self.entries.values().sum()
    }

    /// Merges `other` into `self`, entry by entry.
    pub fn absorb(&mut self, other: &Flowset) {
        for (f, n) in other.iter() {
            self.add(f, n);
        }
    }
}

impl FromIterator<(u64, i64)> for Flowset {
    fn from_iter<I: IntoIterator<Item = (u64, i64)>>(iter: I) -> Self {
        let mut s = Flowset::new();
        for (f, n) in iter {
            s.add(f, n);
        }
        s
    }
}

impl<'a> IntoIterator for &'a Flowset {
    type Item = (u64, i64);
    type IntoIter = std::iter::Map<std::collections::btree_map::Iter<'a, u64, i64>, fn((&u64, &i64)) -> (u64, i64)>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter().map(|(&f, &n)| (f, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_entries_vanish() {
        let mut s = Flowset::new();
        assert_eq!(s.add(5, 3), 3);
        assert_eq!(s.add(5, -3), 0);
        assert!(s.is_empty());
        s.add(7, 0);
        assert!(!s.contains(7));
    }

    #[test]
    fn collect_accumulates() {
        let s: Flowset = [(1, 2), (1, 3), (2, -1)].into_iter().collect();
        assert_eq!(s.get(1), 5);
        assert_eq!(s.get(2), -1);
        assert_eq!(s.total(), 4);
    }
}
