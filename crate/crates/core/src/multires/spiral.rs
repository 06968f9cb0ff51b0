//! Spiral neighbourhood orderings.
//!
//! Each spiral starts at the vertex, then walks its 1-ring in the rotational
//! order given by face winding, then successive rings. The 1-ring walk
//! starts at the vertex following the centre in its first incident face (by
//! face index), so spirals depend on the face list only, never on vertex
//! labels.

use std::collections::HashMap;

use crate::mesh::Topology;

pub const PAD: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpiralTable {
    length: usize,
    indices: Vec<usize>,
}

impl SpiralTable {
    pub fn from_indices(length: usize, indices: Vec<usize>) -> Self {
        assert!(length > 0 && indices.len().is_multiple_of(length));
        Self { length, indices }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn vertex_count(&self) -> usize {
        self.indices.len() / self.length
    }

    pub fn spiral(&self, v: usize) -> &[usize] {
        &self.indices[v * self.length..(v + 1) * self.length]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Neighbours of `v` in rotational (winding) order.
pub fn rotational_ring(topology: &Topology, v: usize) -> Vec<usize> {
    let faces = topology.faces();
    let mut next: HashMap<usize, usize> = HashMap::new();
    let mut prev: HashMap<usize, usize> = HashMap::new();
    let mut seeds = Vec::new();
    for &fi in topology.vertex_faces(v) {
        let f = faces[fi];
        let k = f.iter().position(|&u| u == v).unwrap();
        let (a, b) = (f[(k + 1) % 3], f[(k + 2) % 3]);
        next.entry(a).or_insert(b);
        prev.entry(b).or_insert(a);
        seeds.push(a);
    }
    let degree = topology.degree(v);
    let mut ring = Vec::with_capacity(degree);
    let mut seen = std::collections::HashSet::with_capacity(degree);
    for seed in seeds {
        if seen.contains(&seed) {
            continue;
        }
        // Walk back to the head of an open fan; closed fans start at the seed.
        let mut head = seed;
        let mut closed = false;
        for _ in 0..degree {
            match prev.get(&head) {
                Some(&p) if p == seed => {
                    closed = true;
                    break;
                }
                Some(&p) if !seen.contains(&p) => head = p,
                _ => break,
            }
        }
        if closed {
            head = seed;
        }
        let mut cur = Some(head);
        while let Some(u) = cur {
            if !seen.insert(u) {
                break;
            }
            ring.push(u);
            cur = next.get(&u).copied();
        }
    }
    ring
}

pub fn build_spirals(topology: &Topology, length: usize) -> SpiralTable {
    assert!(length > 0, "spiral length must be positive");
    let n = topology.vertex_count();
    let rings: Vec<Vec<usize>> = (0..n).map(|v| rotational_ring(topology, v)).collect();
    let mut indices = Vec::with_capacity(n * length);
    let mut mark = vec![usize::MAX; n];
    for v in 0..n {
        let mut spiral = vec![v];
        mark[v] = v;
        let mut frontier = vec![v];
        while spiral.len() < length && !frontier.is_empty() {
            let mut next_frontier = Vec::new();
            for &u in &frontier {
                for &w in &rings[u] {
                    if mark[w] != v {
                        mark[w] = v;
                        next_frontier.push(w);
                    }
                }
            }
            spiral.extend(next_frontier.iter().copied());
            frontier = next_frontier;
        }
        spiral.resize(length, PAD);
        spiral.truncate(length);
        indices.extend(spiral);
    }
    SpiralTable { length, indices }
}
