//! Mesh hierarchies: quadric-error coarsening, level transfer matrices,
//! spiral tables and the two-step detail-restoring upsampler.

mod qem;
mod spiral;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::{Container, Section};
use crate::error::{Error, Result};
use crate::geomfeat::{local_frames, local_laplacian_of};
use crate::mesh::{Mesh, SegmentationMap, Topology, Vec3};
use crate::sparse::{least_squares_cg, CsrMatrix};

pub use spiral::{build_spirals, rotational_ring, SpiralTable, PAD};

pub const DEFAULT_SPIRAL_LENGTH: usize = 9;

/// Fine-to-coarse levels built once on a reference mesh. Level 0 is the
/// reference topology; level `k + 1` keeps a subset of level `k`'s vertices.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    levels: Vec<Arc<Topology>>,
    retained: Vec<Vec<usize>>,
    down: Vec<CsrMatrix>,
    up: Vec<CsrMatrix>,
    spirals: Vec<SpiralTable>,
    reference: Vec<Vec3>,
    built_on: String,
}

pub fn build_hierarchy(reference: &Mesh, target_sizes: &[usize]) -> Result<Hierarchy> {
    build_hierarchy_with(reference, target_sizes, DEFAULT_SPIRAL_LENGTH, "reference")
}

pub fn build_hierarchy_with(
    reference: &Mesh,
    target_sizes: &[usize],
    spiral_length: usize,
    built_on: &str,
) -> Result<Hierarchy> {
    let v = reference.vertex_count();
    if let Some(&first) = target_sizes.first() {
        if first > v {
            return Err(Error::Invalid(format!(
                "first target {first} exceeds reference size {v}"
            )));
        }
    }
    if target_sizes.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid("target sizes must be strictly decreasing".into()));
    }
    if spiral_length == 0 {
        return Err(Error::Invalid("spiral length must be positive".into()));
    }
    let snapshots = qem::decimate(&reference.vertices, reference.topology().faces(), target_sizes)?;

    let mut levels = vec![Arc::clone(reference.topology())];
    let mut retained = Vec::new();
    let mut down = Vec::new();
    let mut up = Vec::new();
    // Original index of each vertex of the previous level.
    let mut prev_alive: Vec<usize> = (0..v).collect();
    for snap in snapshots {
        let mut local = vec![usize::MAX; v];
        for (i, &orig) in snap.alive.iter().enumerate() {
            local[orig] = i;
        }
        let faces = snap.faces.iter().map(|f| f.map(|o| local[o])).collect();
        let topo = Arc::new(Topology::new(snap.alive.len(), faces)?);
        // Positions of the kept vertices inside the previous level.
        let mut prev_index = BTreeMap::new();
        for (i, &orig) in prev_alive.iter().enumerate() {
            prev_index.insert(orig, i);
        }
        let kept: Vec<usize> = snap.alive.iter().map(|o| prev_index[o]).collect();
        let fine = levels.last().unwrap();
        down.push(CsrMatrix::from_triplets(
            kept.len(),
            fine.vertex_count(),
            kept.iter().enumerate().map(|(r, &c)| (r, c, 1.0)),
        )?);
        up.push(centroid_upsampling_matrix(fine, &kept)?);
        retained.push(kept);
        levels.push(topo);
        prev_alive = snap.alive;
    }
    let spirals = levels.iter().map(|t| build_spirals(t, spiral_length)).collect();
    Ok(Hierarchy {
        levels,
        retained,
        down,
        up,
        spirals,
        reference: reference.vertices.clone(),
        built_on: built_on.to_string(),
    })
}

/// Linear map placing retained vertices exactly and every other vertex at
/// the mean of its already-placed neighbours, breadth-first by layer.
fn centroid_upsampling_matrix(fine: &Topology, kept: &[usize]) -> Result<CsrMatrix> {
    let n = fine.vertex_count();
    let mut weights: Vec<Option<BTreeMap<usize, f64>>> = vec![None; n];
    for (c, &f) in kept.iter().enumerate() {
        weights[f] = Some(BTreeMap::from([(c, 1.0)]));
    }
    let mut remaining: Vec<usize> = (0..n).filter(|&i| weights[i].is_none()).collect();
    while !remaining.is_empty() {
        let layer: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| fine.neighbors(i).iter().any(|&j| weights[j].is_some()))
            .collect();
        if layer.is_empty() {
            return Err(Error::Degenerate(format!(
                "vertex {} is disconnected from every retained vertex",
                remaining[0]
            )));
        }
        let placed: Vec<(usize, BTreeMap<usize, f64>)> = layer
            .iter()
            .map(|&i| {
                let sources: Vec<&BTreeMap<usize, f64>> =
                    fine.neighbors(i).iter().filter_map(|&j| weights[j].as_ref()).collect();
                let share = 1.0 / sources.len() as f64;
                let mut acc = BTreeMap::new();
                for s in sources {
                    for (&c, &w) in s {
                        *acc.entry(c).or_insert(0.0) += w * share;
                    }
                }
                (i, acc)
            })
            .collect();
        for (i, acc) in placed {
            weights[i] = Some(acc);
        }
        remaining.retain(|&i| weights[i].is_none());
    }
    CsrMatrix::from_triplets(
        n,
        kept.len(),
        weights
            .into_iter()
            .enumerate()
            .flat_map(|(r, w)| w.unwrap().into_iter().map(move |(c, v)| (r, c, v))),
    )
}

impl Hierarchy {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> Result<&Arc<Topology>> {
        self.levels.get(k).ok_or(Error::LevelOutOfRange {
            level: k,
            levels: self.levels.len(),
        })
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|t| t.vertex_count()).collect()
    }

    /// Transfer from level `k` to `k + 1`.
    pub fn down_matrix(&self, k: usize) -> Result<&CsrMatrix> {
        self.down.get(k).ok_or(Error::LevelOutOfRange {
            level: k,
            levels: self.levels.len(),
        })
    }

    /// Transfer from level `k + 1` to `k`.
    pub fn up_matrix(&self, k: usize) -> Result<&CsrMatrix> {
        self.up.get(k).ok_or(Error::LevelOutOfRange {
            level: k,
            levels: self.levels.len(),
        })
    }

    /// Level-`k` indices of the vertices kept at level `k + 1`.
    pub fn retained_indices(&self, k: usize) -> Result<&[usize]> {
        self.retained.get(k).map(Vec::as_slice).ok_or(Error::LevelOutOfRange {
            level: k,
            levels: self.levels.len(),
        })
    }

    pub fn spirals(&self, k: usize) -> Result<&SpiralTable> {
        self.spirals.get(k).ok_or(Error::LevelOutOfRange {
            level: k,
            levels: self.levels.len(),
        })
    }

    pub fn spiral_length(&self) -> usize {
        self.spirals[0].length()
    }

    pub fn built_on(&self) -> &str {
        &self.built_on
    }

    /// The reference mesh restricted to level `k`.
    pub fn reference_at(&self, k: usize) -> Result<Mesh> {
        let mut pos = self.reference.clone();
        for j in 0..k {
            pos = apply_points(self.down_matrix(j)?, &pos)?;
        }
        Mesh::new(Arc::clone(self.level(k)?), pos)
    }

    /// Vertex index maps from level `k` into level 0.
    pub fn original_indices(&self, k: usize) -> Result<Vec<usize>> {
        self.level(k)?;
        let mut idx: Vec<usize> = (0..self.levels[0].vertex_count()).collect();
        for j in 0..k {
            idx = self.retained[j].iter().map(|&i| idx[i]).collect();
        }
        Ok(idx)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let meta = HierarchyMeta {
            level_sizes: self.level_sizes(),
            spiral_length: self.spiral_length(),
            built_on: self.built_on.clone(),
        };
        c.push(
            "meta",
            Section::Bytes(serde_json::to_vec(&meta).expect("meta serializes")),
        );
        c.push(
            "reference",
            Section::F64(self.reference.iter().flat_map(|v| [v.x, v.y, v.z]).collect()),
        );
        for (k, t) in self.levels.iter().enumerate() {
            c.push(
                format!("level{k}.faces"),
                Section::I32(t.faces().iter().flatten().map(|&i| i as i32).collect()),
            );
            c.push(
                format!("level{k}.spirals"),
                Section::I32(
                    self.spirals[k]
                        .indices()
                        .iter()
                        .map(|&i| if i == PAD { -1 } else { i as i32 })
                        .collect(),
                ),
            );
        }
        for (k, (d, u)) in self.down.iter().zip(&self.up).enumerate() {
            for (name, m) in [("down", d), ("up", u)] {
                let (idx, val): (Vec<[i32; 2]>, Vec<f64>) =
                    m.triplets().map(|(r, c, v)| ([r as i32, c as i32], v)).unzip();
                c.push(format!("{name}{k}.coo_index"), Section::I32(idx.concat()));
                c.push(format!("{name}{k}.coo_value"), Section::F64(val));
            }
            c.push(
                format!("retained{k}"),
                Section::I32(self.retained[k].iter().map(|&i| i as i32).collect()),
            );
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: HierarchyMeta =
            serde_json::from_slice(c.bytes("meta")?).map_err(|e| Error::Format(format!("hierarchy meta: {e}")))?;
        let sizes = &meta.level_sizes;
        if sizes.is_empty() {
            return Err(Error::Format("hierarchy without levels".into()));
        }
        let reference: Vec<Vec3> = c
            .f64s("reference")?
            .chunks_exact(3)
            .map(|p| Vec3::new(p[0], p[1], p[2]))
            .collect();
        let mut levels = Vec::new();
        let mut spirals = Vec::new();
        for (k, &n) in sizes.iter().enumerate() {
            let faces = c
                .i32s(&format!("level{k}.faces"))?
                .chunks_exact(3)
                .map(|f| [f[0] as usize, f[1] as usize, f[2] as usize])
                .collect();
            levels.push(Arc::new(Topology::new(n, faces)?));
            let idx = c
                .i32s(&format!("level{k}.spirals"))?
                .iter()
                .map(|&i| if i < 0 { PAD } else { i as usize })
                .collect();
            spirals.push(SpiralTable::from_indices(meta.spiral_length, idx));
        }
        let mut down = Vec::new();
        let mut up = Vec::new();
        let mut retained = Vec::new();
        for k in 0..sizes.len() - 1 {
            let read = |name: &str, rows: usize, cols: usize| -> Result<CsrMatrix> {
                let idx = c.i32s(&format!("{name}{k}.coo_index"))?;
                let val = c.f64s(&format!("{name}{k}.coo_value"))?;
                CsrMatrix::from_triplets(
                    rows,
                    cols,
                    idx.chunks_exact(2)
                        .zip(val)
                        .map(|(i, &v)| (i[0] as usize, i[1] as usize, v)),
                )
            };
            down.push(read("down", sizes[k + 1], sizes[k])?);
            up.push(read("up", sizes[k], sizes[k + 1])?);
            retained.push(c.i32s(&format!("retained{k}"))?.iter().map(|&i| i as usize).collect());
        }
        Ok(Self {
            levels,
            retained,
            down,
            up,
            spirals,
            reference,
            built_on: meta.built_on,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HierarchyMeta {
    level_sizes: Vec<usize>,
    spiral_length: usize,
    built_on: String,
}

fn apply_points(m: &CsrMatrix, points: &[Vec3]) -> Result<Vec<Vec3>> {
    let flat: Vec<f64> = points.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    Ok(m.mul_dense(&flat, 3)?
        .chunks_exact(3)
        .map(|p| Vec3::new(p[0], p[1], p[2]))
        .collect())
}

fn level_of(mesh: &Mesh, hierarchy: &Hierarchy) -> Result<usize> {
    hierarchy
        .levels
        .iter()
        .position(|t| Arc::ptr_eq(t, mesh.topology()) || t.same_faces(mesh.topology()))
        .ok_or_else(|| Error::Correspondence("mesh is not on any hierarchy level".into()))
}

/// Transfers a level-0 mesh down to `level`.
pub fn downsample(mesh: &Mesh, hierarchy: &Hierarchy, level: usize) -> Result<Mesh> {
    hierarchy.level(level)?;
    if level_of(mesh, hierarchy)? != 0 {
        return Err(Error::Correspondence("downsample expects a finest-level mesh".into()));
    }
    let mut pos = mesh.vertices.clone();
    for k in 0..level {
        pos = apply_points(hierarchy.down_matrix(k)?, &pos)?;
    }
    Ok(Mesh::new(Arc::clone(hierarchy.level(level)?), pos)?.with_labels(mesh.identity_label, mesh.pose_label))
}

/// Part labels of the vertices that survive to `level`.
pub fn downsample_segmentation(seg: &SegmentationMap, hierarchy: &Hierarchy, level: usize) -> Result<SegmentationMap> {
    let finest = hierarchy.level(0)?.vertex_count();
    if seg.vertex_count() != finest {
        return Err(Error::CountMismatch {
            expected: finest,
            found: seg.vertex_count(),
        });
    }
    let idx = hierarchy.original_indices(level)?;
    SegmentationMap::new(idx.into_iter().map(|i| seg.part_of(i)).collect())
}

/// One level up: retained vertices copied, new vertices at neighbour centroids.
pub fn upsample_centroid(coarse: &Mesh, hierarchy: &Hierarchy) -> Result<Mesh> {
    let level = level_of(coarse, hierarchy)?;
    if level == 0 {
        return Err(Error::LevelOutOfRange {
            level: 0,
            levels: hierarchy.level_count(),
        });
    }
    let pos = apply_points(hierarchy.up_matrix(level - 1)?, &coarse.vertices)?;
    Ok(Mesh::new(Arc::clone(hierarchy.level(level - 1)?), pos)?.with_labels(coarse.identity_label, coarse.pose_label))
}

#[derive(Debug, Clone)]
pub struct DetailRestore {
    pub mesh: Mesh,
    /// `Σ ‖Δ_loc − Δ_loc(source)‖²` with frames of the initial mesh, before and after.
    pub objective_before: f64,
    pub objective_after: f64,
    pub iterations: usize,
}

/// Moves non-retained vertices so their local Laplacian coordinates match
/// `detail_source`, holding `retained` fixed. Frames are taken from
/// `fine_init` and frozen, which makes the problem linear.
pub fn detail_restore(fine_init: &Mesh, detail_source: &Mesh, retained: &[usize]) -> Result<DetailRestore> {
    if !fine_init.shares_topology(detail_source) {
        return Err(Error::Correspondence("detail source topology differs".into()));
    }
    let topo = fine_init.topology();
    let n = topo.vertex_count();
    let frames = local_frames(fine_init);
    let (source_loc, _) = local_laplacian_of(detail_source);
    // Target differential coordinates in world space under the frozen frames.
    let target: Vec<Vec3> = source_loc
        .iter()
        .zip(frames.frames())
        .map(|(d, f)| f.transpose() * d)
        .collect();
    let objective = |m: &Mesh| -> f64 {
        m.laplacian_coords()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).norm_squared())
            .sum()
    };
    let mut is_fixed = vec![false; n];
    for &r in retained {
        if r >= n {
            return Err(Error::Invalid(format!("retained index {r} out of range")));
        }
        is_fixed[r] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();
    let objective_before = objective(fine_init);
    if free.is_empty() {
        return Ok(DetailRestore {
            mesh: fine_init.clone(),
            objective_before,
            objective_after: objective_before,
            iterations: 0,
        });
    }
    let lap = topo.laplacian();
    let a_free = lap.select_columns(&free);
    let fixed_only: Vec<Vec3> = (0..n)
        .map(|i| {
            if is_fixed[i] {
                fine_init.vertices[i]
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    let fixed_part = apply_points(lap, &fixed_only)?;
    let mut result = fine_init.vertices.clone();
    let mut iterations = 0;
    for axis in 0..3 {
        let b: Vec<f64> = (0..n).map(|i| target[i][axis] - fixed_part[i][axis]).collect();
        let x0: Vec<f64> = free.iter().map(|&i| fine_init.vertices[i][axis]).collect();
        let (x, it) = least_squares_cg(&a_free, &b, &x0, 1e-13, 20 * free.len() + 100)?;
        iterations += it;
        for (&i, v) in free.iter().zip(x) {
            result[i][axis] = v;
        }
    }
    let mesh = fine_init.with_vertices(result);
    let objective_after = objective(&mesh);
    Ok(DetailRestore {
        mesh,
        objective_before,
        objective_after,
        iterations,
    })
}

/// Centroid upsampling followed by detail restoration against a
/// full-resolution mesh carrying the wanted surface detail.
pub fn upsample_two_step(coarse: &Mesh, hierarchy: &Hierarchy, detail_source: &Mesh) -> Result<Mesh> {
    let level = level_of(coarse, hierarchy)?;
    let init = upsample_centroid(coarse, hierarchy)?;
    let retained = hierarchy.retained_indices(level - 1)?;
    Ok(detail_restore(&init, detail_source, retained)?.mesh)
}

#[cfg(test)]
mod tests;
