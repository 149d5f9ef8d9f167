//! Sorted set of disjoint half-open byte ranges.

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RangeSet {
    ranges: Vec<(u64, u64)>,
}

impl RangeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn clear(&mut self) {
        self.ranges.clear();
    }

    /// Adds `[start, end)`, merging with overlapping or adjacent ranges.
    pub fn insert(&mut self, start: u64, end: u64) {
        if start >= end {
            return;
        }
        let (mut s, mut e) = (start, end);
        let mut out = Vec::with_capacity(self.ranges.len() + 1);
        let mut placed = false;
        for &(a, b) in &self.ranges {
            if b < s {
                out.push((a, b));
            } else if a > e {
                if !placed {
                    out.push((s, e));
                    placed = true;
                }
                out.push((a, b));
            } else {
                s = s.min(a);
                e = e.max(b);
            }
        }
        if !placed {
            out.push((s, e));
        }
        self.ranges = out;
    }

    /// Drops every byte below `floor`.
    pub fn remove_below(&mut self, floor: u64) {
        self.ranges.retain(|&(_, b)| b > floor);
        if let Some(first) = self.ranges.first_mut() {
            first.0 = first.0.max(floor);
        }
    }

    /// Removes and returns the range starting exactly at `at`, if any.
    pub fn take_at(&mut self, at: u64) -> Option<(u64, u64)> {
        let first = *self.ranges.first()?;
        if first.0 == at {
            self.ranges.remove(0);
            Some(first)
        } else {
            None
        }
    }

    pub fn contains(&self, start: u64, end: u64) -> bool {
        self.ranges.iter().any(|&(a, b)| a <= start && end <= b)
    }

    /// Bytes of `[start, end)` already in the set.
    pub fn overlap(&self, start: u64, end: u64) -> u64 {
        self.ranges
            .iter()
            .map(|&(a, b)| b.min(end).saturating_sub(a.max(start)))
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.ranges.iter().map(|(a, b)| b - a).sum()
    }

    pub fn highest(&self) -> Option<u64> {
        self.ranges.last().map(|r| r.1)
    }

    /// Gaps between `base` and the highest range.
    pub fn holes(&self, base: u64) -> Vec<(u64, u64)> {
        let mut holes = Vec::new();
        let mut cursor = base;
        for &(a, b) in &self.ranges {
            if a > cursor {
                holes.push((cursor, a));
            }
            cursor = cursor.max(b);
        }
        holes
    }

    pub fn containing(&self, at: u64) -> Option<(u64, u64)> {
        self.ranges.iter().copied().find(|&(a, b)| a <= at && at < b)
    }
}
