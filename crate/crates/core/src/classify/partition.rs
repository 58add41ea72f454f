//! Grouping selected labels into distinct objects.
//!
//! Two labels picked together by one annotator are, by that annotator's
//! account, different objects. The partition search therefore minimizes the
//! number of (response, label pair) incidents where a co-selected pair ends
//! up in the same block. Candidate lists are short, so enumerating every
//! partition into the requested number of blocks is cheap: a 6-label union
//! has at most 90 partitions for any fixed block count.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ClassId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectBlock {
    /// Most selected member (ties to the smaller class id).
    pub label: ClassId,
    /// Sorted ascending.
    pub members: Vec<ClassId>,
    /// Selection count of `label`.
    pub votes: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPartition {
    /// Sorted by smallest member.
    pub blocks: Vec<ObjectBlock>,
    pub violation_cost: u32,
    /// Fewer distinct labels than requested objects; one block per label.
    pub fallback: bool,
}

impl ObjectPartition {
    pub fn block_of(&self, label: ClassId) -> Option<&ObjectBlock> {
        self.blocks.iter().find(|b| b.members.contains(&label))
    }
}

/// Enumerates restricted growth strings of length `n` using exactly `k`
/// distinct values; `visit` receives block assignments per element.
fn for_each_partition(n: usize, k: usize, visit: &mut impl FnMut(&[usize])) {
    fn rec(i: usize, used: usize, n: usize, k: usize, a: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if i == n {
            if used == k {
                visit(a);
            }
            return;
        }
        // not enough elements left to open the remaining blocks
        if k - used > n - i {
            return;
        }
        for b in 0..used.min(k) {
            a[i] = b;
            rec(i + 1, used, n, k, a, visit);
        }
        if used < k {
            a[i] = used;
            rec(i + 1, used + 1, n, k, a, visit);
        }
    }
    if k == 0 || k > n {
        return;
    }
    let mut a = vec![0; n];
    rec(0, 0, n, k, &mut a, visit);
}

/// Minimum-violation partition of the union of `selections` into `k` blocks.
///
/// Ties are broken first by the larger sum of per-block maximum selection
/// counts, then by the lexicographically smallest block list.
pub fn partition_objects(selections: &[BTreeSet<ClassId>], k: usize) -> ObjectPartition {
    let mut counts: BTreeMap<ClassId, u32> = BTreeMap::new();
    for s in selections {
        for &l in s {
            *counts.entry(l).or_insert(0) += 1;
        }
    }
    let labels: Vec<ClassId> = counts.keys().copied().collect();
    let n = labels.len();
    if n == 0 {
        return ObjectPartition::default();
    }
    let pos: BTreeMap<ClassId, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut co = vec![vec![0u32; n]; n];
    for s in selections {
        let idx: Vec<usize> = s.iter().map(|l| pos[l]).collect();
        for (x, &i) in idx.iter().enumerate() {
            for &j in &idx[x + 1..] {
                co[i][j] += 1;
                co[j][i] += 1;
            }
        }
    }
    let count: Vec<u32> = labels.iter().map(|l| counts[l]).collect();

    let fallback = k == 0 || k > n;
    let k = k.clamp(1, n);

    let mut best: Option<(u32, u32, Vec<Vec<usize>>)> = None;
    for_each_partition(n, k, &mut |assign| {
        let mut cost = 0;
        for i in 0..n {
            for j in i + 1..n {
                if assign[i] == assign[j] {
                    cost += co[i][j];
                }
            }
        }
        if let Some((bc, _, _)) = &best {
            if cost > *bc {
                return;
            }
        }
        let mut blocks = vec![Vec::new(); k];
        for (i, &b) in assign.iter().enumerate() {
            blocks[b].push(i);
        }
        // labels are ascending and block ids follow first occurrence, so
        // `blocks` is already in canonical order
        let support: u32 = blocks
            .iter()
            .map(|b| b.iter().map(|&i| count[i]).max().unwrap_or(0))
            .sum();
        let better = match &best {
            None => true,
            Some((bc, bs, bb)) => cost < *bc || (cost == *bc && (support > *bs || (support == *bs && blocks < *bb))),
        };
        if better {
            best = Some((cost, support, blocks));
        }
    });

    let (violation_cost, _, blocks) = best.expect("k in 1..=n always has a partition");
    let blocks = blocks
        .into_iter()
        .map(|b| {
            let members: Vec<ClassId> = b.iter().map(|&i| labels[i]).collect();
            let &top = b
                .iter()
                .max_by(|&&x, &&y| count[x].cmp(&count[y]).then(y.cmp(&x)))
                .unwrap();
            ObjectBlock {
                label: labels[top],
                members,
                votes: count[top],
            }
        })
        .collect();
    ObjectPartition {
        blocks,
        violation_cost,
        fallback,
    }
}
