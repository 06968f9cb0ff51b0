//! Plane-quadric edge collapse (Garland-Heckbert) with deterministic order.
//!
//! The collapse keeps one endpoint's index; the working position moves to
//! the quadric-optimal point (edge midpoint when the quadric is singular) so
//! later costs see the simplified geometry. Candidates are ordered by cost,
//! then by `(min, max)` vertex index.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::{Matrix3, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Vertices and faces (in original indices) alive when a target was reached.
#[derive(Debug, Clone)]
pub(crate) struct Snapshot {
    pub alive: Vec<usize>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // BinaryHeap is a max-heap: invert so the cheapest, lowest-index edge wins.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

struct Decimator {
    pos: Vec<Vec3>,
    quadric: Vec<Matrix4<f64>>,
    stamp: Vec<u32>,
    alive: Vec<bool>,
    alive_count: usize,
    faces: Vec<Option<[usize; 3]>>,
    vertex_faces: Vec<BTreeSet<usize>>,
}

fn plane_quadric(n: Vec3, p: Vec3, weight: f64) -> Matrix4<f64> {
    let plane = Vector4::new(n.x, n.y, n.z, -n.dot(&p));
    plane * plane.transpose() * weight
}

impl Decimator {
    fn new(positions: &[Vec3], faces: &[[usize; 3]]) -> Self {
        let n = positions.len();
        let mut quadric = vec![Matrix4::zeros(); n];
        let mut vertex_faces = vec![BTreeSet::new(); n];
        let mut edge_faces: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
        for (fi, f) in faces.iter().enumerate() {
            let [a, b, c] = f.map(|i| positions[i]);
            let cross = (b - a).cross(&(c - a));
            let area = cross.norm() / 2.0;
            if area > 0.0 {
                let q = plane_quadric(cross.normalize(), a, area);
                for &v in f {
                    quadric[v] += q;
                }
            }
            for k in 0..3 {
                vertex_faces[f[k]].insert(fi);
                let (u, w) = (f[k], f[(k + 1) % 3]);
                edge_faces.entry((u.min(w), u.max(w))).or_default().push(fi);
            }
        }
        // Boundary edges get a perpendicular constraint plane.
        for (&(u, w), fs) in &edge_faces {
            if fs.len() != 1 {
                continue;
            }
            let f = faces[fs[0]];
            let [a, b, c] = f.map(|i| positions[i]);
            let normal = (b - a).cross(&(c - a));
            let edge = positions[w] - positions[u];
            let perp = edge.cross(&normal);
            if perp.norm() > 0.0 {
                let q = plane_quadric(perp.normalize(), positions[u], 1e3 * edge.norm_squared());
                quadric[u] += q;
                quadric[w] += q;
            }
        }
        Self {
            pos: positions.to_vec(),
            quadric,
            stamp: vec![0; n],
            alive: vec![true; n],
            alive_count: n,
            faces: faces.iter().copied().map(Some).collect(),
            vertex_faces,
        }
    }

    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        self.vertex_faces[v]
            .iter()
            .flat_map(|&f| self.faces[f].unwrap())
            .filter(|&u| u != v)
            .collect()
    }

    fn placement(&self, a: usize, b: usize) -> (Vec3, f64) {
        let q = self.quadric[a] + self.quadric[b];
        let m: Matrix3<f64> = q.fixed_view::<3, 3>(0, 0).into();
        let rhs = -Vec3::new(q[(0, 3)], q[(1, 3)], q[(2, 3)]);
        let scale = (m.trace() / 3.0).abs();
        let p = match m.try_inverse() {
            Some(inv) if m.determinant().abs() > 1e-10 * scale.powi(3) && scale > 0.0 => inv * rhs,
            _ => (self.pos[a] + self.pos[b]) / 2.0,
        };
        let h = Vector4::new(p.x, p.y, p.z, 1.0);
        let cost = (h.transpose() * q * h)[(0, 0)].max(0.0);
        (p, cost)
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        let (_, cost) = self.placement(a, b);
        Candidate {
            cost,
            a,
            b,
            stamp_a: self.stamp[a],
            stamp_b: self.stamp[b],
        }
    }

    fn all_candidates(&self) -> BinaryHeap<Candidate> {
        let mut heap = BinaryHeap::new();
        for v in 0..self.pos.len() {
            if !self.alive[v] {
                continue;
            }
            for u in self.neighbors(v) {
                if v < u {
                    heap.push(self.candidate(v, u));
                }
            }
        }
        heap
    }

    /// Attempts the collapse; returns false when it would break manifoldness,
    /// empty a component below a tetrahedron, or flip a face.
    fn try_collapse(&mut self, a: usize, b: usize) -> bool {
        let (target, _) = self.placement(a, b);
        let (keep, remove) = {
            let da = (self.pos[a] - target).norm_squared();
            let db = (self.pos[b] - target).norm_squared();
            if db < da {
                (b, a)
            } else {
                (a, b)
            }
        };
        let shared: Vec<usize> = self.vertex_faces[keep]
            .intersection(&self.vertex_faces[remove])
            .copied()
            .collect();
        if shared.is_empty() {
            return false;
        }
        let nk = self.neighbors(keep);
        let nr = self.neighbors(remove);
        let common = nk.intersection(&nr).count();
        if common != shared.len() {
            return false;
        }
        // Faces of `remove` that survive must not duplicate faces of `keep`,
        // and every vertex of a deleted face must keep at least one face.
        let keep_sets: Vec<[usize; 3]> = self.vertex_faces[keep]
            .iter()
            .filter(|f| !shared.contains(f))
            .map(|&f| sorted(self.faces[f].unwrap()))
            .collect();
        for &f in &self.vertex_faces[remove] {
            if shared.contains(&f) {
                continue;
            }
            let moved = self.faces[f].unwrap().map(|v| if v == remove { keep } else { v });
            if keep_sets.contains(&sorted(moved)) {
                return false;
            }
        }
        for &f in &shared {
            for v in self.faces[f].unwrap() {
                if v == keep || v == remove {
                    continue;
                }
                if self.vertex_faces[v].iter().all(|g| shared.contains(g)) {
                    return false;
                }
            }
        }
        if self.vertex_faces[keep].len() + self.vertex_faces[remove].len() <= 2 * shared.len() {
            return false;
        }
        // Orientation check on every face touching either endpoint.
        for &f in self.vertex_faces[keep].union(&self.vertex_faces[remove]) {
            if shared.contains(&f) {
                continue;
            }
            let old = self.faces[f].unwrap();
            let before = self.face_normal(old, None);
            let after = self.face_normal(old.map(|v| if v == remove { keep } else { v }), Some((keep, target)));
            if before.dot(&after) <= 0.0 {
                return false;
            }
        }

        for &f in &shared {
            for v in self.faces[f].unwrap() {
                self.vertex_faces[v].remove(&f);
            }
            self.faces[f] = None;
        }
        let moved: Vec<usize> = self.vertex_faces[remove].iter().copied().collect();
        for f in moved {
            let face = self.faces[f].as_mut().unwrap();
            for v in face.iter_mut() {
                if *v == remove {
                    *v = keep;
                }
            }
            self.vertex_faces[keep].insert(f);
        }
        self.vertex_faces[remove].clear();
        self.alive[remove] = false;
        self.alive_count -= 1;
        self.pos[keep] = target;
        let q = self.quadric[remove];
        self.quadric[keep] += q;
        self.stamp[keep] += 1;
        self.stamp[remove] += 1;
        true
    }

    fn face_normal(&self, f: [usize; 3], moved: Option<(usize, Vec3)>) -> Vec3 {
        let p = |v: usize| match moved {
            Some((m, t)) if m == v => t,
            _ => self.pos[v],
        };
        (p(f[1]) - p(f[0])).cross(&(p(f[2]) - p(f[0])))
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            alive: (0..self.pos.len()).filter(|&v| self.alive[v]).collect(),
            faces: self.faces.iter().flatten().copied().collect(),
        }
    }
}

fn sorted(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

/// Collapses edges until each (strictly decreasing) target vertex count is
/// met, recording a snapshot at every target.
pub(crate) fn decimate(positions: &[Vec3], faces: &[[usize; 3]], targets: &[usize]) -> Result<Vec<Snapshot>> {
    let mut dec = Decimator::new(positions, faces);
    let mut snapshots = Vec::with_capacity(targets.len());
    let mut heap = dec.all_candidates();
    let mut progressed = false;
    for &target in targets {
        if target > dec.alive_count {
            return Err(Error::Invalid(format!(
                "target {target} exceeds current size {}",
                dec.alive_count
            )));
        }
        while dec.alive_count > target {
            let Some(c) = heap.pop() else {
                if !progressed {
                    return Err(Error::Unreachable {
                        requested: target,
                        achieved: dec.alive_count,
                    });
                }
                // Edges rejected earlier may be collapsible after the
                // neighbourhood changed: start a fresh round.
                heap = dec.all_candidates();
                progressed = false;
                continue;
            };
            if !dec.alive[c.a] || !dec.alive[c.b] || dec.stamp[c.a] != c.stamp_a || dec.stamp[c.b] != c.stamp_b {
                continue;
            }
            if dec.try_collapse(c.a, c.b) {
                progressed = true;
                let keep = if dec.alive[c.a] { c.a } else { c.b };
                for u in dec.neighbors(keep) {
                    heap.push(dec.candidate(keep, u));
                }
            }
        }
        snapshots.push(dec.snapshot());
    }
    Ok(snapshots)
}
