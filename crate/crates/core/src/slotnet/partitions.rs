//! Multiset partitions for the higher-order chain rule.
//!
//! A slot differentiates `a` times along one coordinate axis and `b` times
//! along one direction. Applying the sigmoid to such a quantity expands into a
//! sum over set partitions of the `a + b` differentiation events; partitions
//! that produce the same multiset of block types are merged and carry their
//! count as multiplicity.

use std::collections::BTreeMap;

/// One block type: `(coordinate order, directional order)`.
pub type Block = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionType {
    /// Blocks sorted ascending; never empty unless the partitioned set is.
    pub blocks: Vec<Block>,
    pub multiplicity: u64,
}

#[derive(Debug, Clone)]
pub struct PartitionTable {
    max_a: usize,
    max_b: usize,
    entries: Vec<Vec<PartitionType>>,
}

impl PartitionTable {
    pub fn new(max_a: usize, max_b: usize) -> Self {
        let mut entries = Vec::with_capacity((max_a + 1) * (max_b + 1));
        for a in 0..=max_a {
            for b in 0..=max_b {
                entries.push(partitions_of(a, b));
            }
        }
        PartitionTable {
            max_a,
            max_b,
            entries,
        }
    }

    /// Table for coordinate order ≤ 2 and directional order ≤ 4.
    pub fn standard() -> Self {
        Self::new(2, 4)
    }

    pub fn get(&self, a: usize, b: usize) -> &[PartitionType] {
        assert!(a <= self.max_a && b <= self.max_b, "({a},{b}) outside table");
        &self.entries[a * (self.max_b + 1) + b]
    }

    pub fn total_multiplicity(&self, a: usize, b: usize) -> u64 {
        self.get(a, b).iter().map(|p| p.multiplicity).sum()
    }
}

/// Enumerates set partitions of `a` elements of kind 0 and `b` of kind 1 via
/// restricted growth strings, grouping by block-type multiset.
fn partitions_of(a: usize, b: usize) -> Vec<PartitionType> {
    let kinds: Vec<usize> = std::iter::repeat_n(0, a)
        .chain(std::iter::repeat_n(1, b))
        .collect();
    let len = kinds.len();
    let mut merged: BTreeMap<Vec<Block>, u64> = BTreeMap::new();
    if len == 0 {
        merged.insert(Vec::new(), 1);
    } else {
        let mut assign = vec![0usize; len];
        loop {
            let n_blocks = assign.iter().max().unwrap() + 1;
            let mut blocks = vec![(0usize, 0usize); n_blocks];
            for (i, &blk) in assign.iter().enumerate() {
                if kinds[i] == 0 {
                    blocks[blk].0 += 1;
                } else {
                    blocks[blk].1 += 1;
                }
            }
            blocks.sort_unstable();
            *merged.entry(blocks).or_insert(0) += 1;
            if !next_rgs(&mut assign) {
                break;
            }
        }
    }
    merged
        .into_iter()
        .map(|(blocks, multiplicity)| PartitionType {
            blocks,
            multiplicity,
        })
        .collect()
}

/// Advances a restricted growth string; false when exhausted.
fn next_rgs(s: &mut [usize]) -> bool {
    let n = s.len();
    for i in (1..n).rev() {
        let max_prefix = s[..i].iter().copied().max().unwrap_or(0);
        if s[i] <= max_prefix {
            s[i] += 1;
            for v in s[i + 1..].iter_mut() {
                *v = 0;
            }
            return true;
        }
    }
    false
}
