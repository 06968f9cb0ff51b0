//! Shared-topology meshes, uniform Laplacian and body-part segmentation.

mod io;

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub use io::{
    format_obj, load_manifest, load_mesh, load_segmentation, parse_obj, parse_segmentation, save_manifest, write_obj,
    write_obj_commented, write_segmentation, write_segmentation_commented, ManifestEntry,
};

pub type Vec3 = Vector3<f64>;

/// Connectivity shared by every mesh of a corpus.
#[derive(Debug, Clone)]
pub struct Topology {
    faces: Vec<[usize; 3]>,
    adjacency: Vec<Vec<usize>>,
    vertex_faces: Vec<Vec<usize>>,
    laplacian: CsrMatrix,
}

impl Topology {
    pub fn new(vertex_count: usize, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); vertex_count];
        let mut vertex_faces = vec![Vec::new(); vertex_count];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertex_count {
                    return Err(Error::Invalid(format!(
                        "face {fi} references vertex {v} of {vertex_count}"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Invalid(format!("face {fi} repeats a vertex")));
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                sets[a].insert(b);
                sets[b].insert(a);
                vertex_faces[f[k]].push(fi);
            }
        }
        let adjacency: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let laplacian = uniform_laplacian(&adjacency)?;
        Ok(Self {
            faces,
            adjacency,
            vertex_faces,
            laplacian,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Sorted unique neighbours of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    /// Indices of faces incident to `v`, ascending.
    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Applies the uniform Laplacian to positions: `x_i - mean(neighbours)`.
    pub fn apply_laplacian(&self, positions: &[Vec3]) -> Vec<Vec3> {
        (0..self.vertex_count())
            .map(|i| {
                let nb = &self.adjacency[i];
                let mean = nb.iter().map(|&j| positions[j]).sum::<Vec3>() / nb.len() as f64;
                positions[i] - mean
            })
            .collect()
    }

    /// Same connectivity (identical face list).
    pub fn same_faces(&self, other: &Topology) -> bool {
        self.faces == other.faces && self.vertex_count() == other.vertex_count()
    }
}

/// Degree-normalised uniform Laplacian `I - D⁻¹A`.
pub fn build_laplacian(topology: &Topology) -> Result<CsrMatrix> {
    uniform_laplacian(&topology.adjacency)
}

fn uniform_laplacian(adjacency: &[Vec<usize>]) -> Result<CsrMatrix> {
    let n = adjacency.len();
    let mut triplets = Vec::with_capacity(n + adjacency.iter().map(Vec::len).sum::<usize>());
    for (i, nb) in adjacency.iter().enumerate() {
        if nb.is_empty() {
            return Err(Error::IsolatedVertex(i));
        }
        triplets.push((i, i, 1.0));
        let w = -1.0 / nb.len() as f64;
        triplets.extend(nb.iter().map(|&j| (i, j, w)));
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub identity_label: Option<u32>,
    pub pose_label: Option<u32>,
    topology: Arc<Topology>,
}

impl Mesh {
    pub fn new(topology: Arc<Topology>, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != topology.vertex_count() {
            return Err(Error::CountMismatch {
                expected: topology.vertex_count(),
                found: vertices.len(),
            });
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("vertex {i}")));
        }
        Ok(Self {
            vertices,
            identity_label: None,
            pose_label: None,
            topology,
        })
    }

    pub fn with_labels(mut self, identity: Option<u32>, pose: Option<u32>) -> Self {
        self.identity_label = identity;
        self.pose_label = pose;
        self
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Copy sharing topology and labels with new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        Self {
            vertices,
            identity_label: self.identity_label,
            pose_label: self.pose_label,
            topology: Arc::clone(&self.topology),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    pub fn laplacian_coords(&self) -> Vec<Vec3> {
        self.topology.apply_laplacian(&self.vertices)
    }

    pub fn shares_topology(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.topology, &other.topology) || self.topology.same_faces(&other.topology)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }
}

/// Checks that every mesh has the topology and vertex count of the first one.
pub fn validate_corpus(meshes: &[Mesh]) -> Result<()> {
    let Some(first) = meshes.first() else {
        return Ok(());
    };
    for (index, m) in meshes.iter().enumerate().skip(1) {
        if m.vertex_count() != first.vertex_count() {
            return Err(Error::Corpus {
                index,
                reason: format!("{} vertices, expected {}", m.vertex_count(), first.vertex_count()),
            });
        }
        if !m.shares_topology(first) {
            return Err(Error::Corpus {
                index,
                reason: "face list differs".into(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    part_of: Vec<usize>,
    part_members: Vec<Vec<usize>>,
}

impl SegmentationMap {
    pub fn new(part_of: Vec<usize>) -> Result<Self> {
        let part_count = part_of.iter().max().map_or(0, |m| m + 1);
        let mut part_members = vec![Vec::new(); part_count];
        for (v, &p) in part_of.iter().enumerate() {
            part_members[p].push(v);
        }
        if let Some(p) = part_members.iter().position(Vec::is_empty) {
            return Err(Error::EmptyPart(p));
        }
        Ok(Self { part_of, part_members })
    }

    pub fn part_of(&self, v: usize) -> usize {
        self.part_of[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.part_of
    }

    pub fn part_count(&self) -> usize {
        self.part_members.len()
    }

    pub fn members(&self, part: usize) -> &[usize] {
        &self.part_members[part]
    }

    pub fn vertex_count(&self) -> usize {
        self.part_of.len()
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn tetrahedron_degrees_are_three() {
        let t = tetrahedron();
        assert_eq!(t.topology().degrees(), vec![3, 3, 3, 3]);
        assert_eq!(t.topology().euler_characteristic(), 2);
    }

    #[test]
    fn regular_tetrahedron_laplacian_is_four_thirds_position() {
        let t = tetrahedron();
        for (d, v) in t.laplacian_coords().iter().zip(&t.vertices) {
            assert!((d - v * (4.0 / 3.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn triangle_laplacian_is_vertex_minus_midpoint() {
        let topo = Arc::new(Topology::new(3, vec![[0, 1, 2]]).unwrap());
        let h = 3f64.sqrt() / 2.0;
        let m = Mesh::new(
            topo,
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, h, 0.0),
            ],
        )
        .unwrap();
        let d = m.laplacian_coords();
        assert!((d[0] - (m.vertices[0] - (m.vertices[1] + m.vertices[2]) / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn laplacian_matrix_matches_neighbor_averaging() {
        let g = grid(4);
        let lap = g.topology().laplacian();
        let x = g.flat();
        let lx = lap.mul_dense(&x, 3).unwrap();
        for (i, d) in g.laplacian_coords().iter().enumerate() {
            for k in 0..3 {
                assert!((lx[3 * i + k] - d[k]).abs() < 1e-12);
            }
            assert!(lap.row_sum(i).abs() < 1e-12);
            assert_eq!(lap.get(i, i), 1.0);
        }
    }

    #[test]
    fn constant_field_has_zero_laplacian() {
        let g = grid(3);
        let c = vec![Vec3::new(0.3, -2.0, 5.0); 9];
        assert!(g.topology().apply_laplacian(&c).iter().all(|d| d.norm() < 1e-14));
    }

    #[test]
    fn isolated_vertex_is_rejected() {
        assert!(matches!(
            Topology::new(4, vec![[0, 1, 2]]),
            Err(Error::IsolatedVertex(3))
        ));
    }

    #[test]
    fn adjacency_is_symmetric() {
        let g = grid(5);
        let t = g.topology();
        for i in 0..t.vertex_count() {
            for &j in t.neighbors(i) {
                assert!(t.neighbors(j).binary_search(&i).is_ok());
            }
        }
    }

    #[test]
    fn corpus_validation_reports_first_offender() {
        let t = tetrahedron();
        let tri = Mesh::new(
            Arc::new(Topology::new(3, vec![[0, 1, 2]]).unwrap()),
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
        )
        .unwrap();
        assert!(validate_corpus(&[t.clone(), t.clone()]).is_ok());
        match validate_corpus(&[tri, t]) {
            Err(Error::Corpus { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn segmentation_rejects_empty_part() {
        assert!(matches!(SegmentationMap::new(vec![0, 2, 2]), Err(Error::EmptyPart(1))));
        let s = SegmentationMap::new(vec![0; 4]).unwrap();
        assert_eq!(s.part_count(), 1);
        assert_eq!(s.members(0), &[0, 1, 2, 3]);
    }
}
