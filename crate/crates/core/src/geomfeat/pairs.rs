use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Mesh, SegmentationMap};

/// Ordered within-part vertex pairs `(part, i, j)` with `i < j` in member order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pairs: Vec<(usize, usize, usize)>,
}

impl PairSet {
    pub fn from_pairs(pairs: Vec<(usize, usize, usize)>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut a = 0;
    while k >= n - 1 - a {
        k -= n - 1 - a;
        a += 1;
    }
    (a, a + 1 + k)
}

/// Every within-part pair when a part has at most `cap_per_part` of them,
/// otherwise a seeded uniform sample of exactly `cap_per_part`.
pub fn build_pair_set(seg: &SegmentationMap, cap_per_part: usize, seed: u64) -> PairSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for part in 0..seg.part_count() {
        let members = seg.members(part);
        let n = members.len();
        let total = n * n.saturating_sub(1) / 2;
        if total <= cap_per_part {
            for a in 0..n {
                for b in a + 1..n {
                    pairs.push((part, members[a], members[b]));
                }
            }
        } else {
            let mut ranks = index::sample(&mut rng, total, cap_per_part).into_vec();
            ranks.sort_unstable();
            pairs.extend(ranks.into_iter().map(|k| {
                let (a, b) = unrank_pair(k, n);
                (part, members[a], members[b])
            }));
        }
    }
    PairSet { pairs }
}

pub fn intra_part_distances(mesh: &Mesh, pairs: &PairSet) -> Vec<f64> {
    pairs
        .pairs
        .iter()
        .map(|&(_, i, j)| (mesh.vertices[i] - mesh.vertices[j]).norm())
        .collect()
}
