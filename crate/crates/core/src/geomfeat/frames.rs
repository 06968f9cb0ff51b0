//! Per-vertex local frames and rigid-invariant Laplacian coordinates.
//!
//! Frame rows are (tangent, bitangent, normal). The normal is the
//! area-weighted mean of incident face normals; the tangent is the edge to
//! the lowest-index neighbour projected onto the tangent plane.

use nalgebra::Matrix3;

use crate::mesh::{Mesh, Vec3};

const DEGENERATE_REL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LocalFrameField {
    frames: Vec<Matrix3<f64>>,
    degenerate: Vec<bool>,
}

impl LocalFrameField {
    pub fn frame(&self, v: usize) -> &Matrix3<f64> {
        &self.frames[v]
    }

    pub fn frames(&self) -> &[Matrix3<f64>] {
        &self.frames
    }

    /// True where the fallback global-axis frame was used.
    pub fn is_degenerate(&self, v: usize) -> bool {
        self.degenerate[v]
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Intermediate quantities of the frame construction, kept for backprop.
#[derive(Debug, Clone)]
struct FrameParts {
    normal_sum: Vec3,
    normal_len: f64,
    normal: Vec3,
    edge: Vec3,
    projected: Vec3,
    projected_len: f64,
    tangent: Vec3,
    bitangent: Vec3,
    degenerate: bool,
}

fn face_cross(x: &[Vec3], f: &[usize; 3]) -> Vec3 {
    (x[f[1]] - x[f[0]]).cross(&(x[f[2]] - x[f[0]]))
}

fn fallback_frame(normal: Option<Vec3>) -> (Vec3, Vec3, Vec3) {
    let n = normal.unwrap_or_else(Vec3::z);
    let axis = [Vec3::x(), Vec3::y(), Vec3::z()]
        .into_iter()
        .min_by(|a, b| a.dot(&n).abs().total_cmp(&b.dot(&n).abs()))
        .unwrap();
    let t = (axis - n * axis.dot(&n)).normalize();
    (t, n.cross(&t), n)
}

fn frame_parts(mesh: &Mesh) -> Vec<FrameParts> {
    let topo = mesh.topology();
    let x = &mesh.vertices;
    let crosses: Vec<Vec3> = topo.faces().iter().map(|f| face_cross(x, f)).collect();
    (0..mesh.vertex_count())
        .map(|i| {
            let mut normal_sum = Vec3::zeros();
            let mut magnitude = 0.0;
            for &f in topo.vertex_faces(i) {
                normal_sum += crosses[f];
                magnitude += crosses[f].norm();
            }
            let normal_len = normal_sum.norm();
            let edge = x[topo.neighbors(i)[0]] - x[i];
            let normal_ok = magnitude > 0.0 && normal_len > DEGENERATE_REL * magnitude;
            let normal = if normal_ok { normal_sum / normal_len } else { Vec3::z() };
            let projected = edge - normal * edge.dot(&normal);
            let projected_len = projected.norm();
            let tangent_ok = projected_len > DEGENERATE_REL * edge.norm() && projected_len > 0.0;
            let degenerate = !(normal_ok && tangent_ok);
            let (tangent, bitangent, normal) = if degenerate {
                fallback_frame(normal_ok.then_some(normal))
            } else {
                let t = projected / projected_len;
                (t, normal.cross(&t), normal)
            };
            FrameParts {
                normal_sum,
                normal_len,
                normal,
                edge,
                projected,
                projected_len,
                tangent,
                bitangent,
                degenerate,
            }
        })
        .collect()
}

pub fn local_frames(mesh: &Mesh) -> LocalFrameField {
    let parts = frame_parts(mesh);
    LocalFrameField {
        frames: parts
            .iter()
            .map(|p| Matrix3::from_rows(&[p.tangent.transpose(), p.bitangent.transpose(), p.normal.transpose()]))
            .collect(),
        degenerate: parts.iter().map(|p| p.degenerate).collect(),
    }
}

/// `Δ_loc,i = Frame_i · (L X)_i`.
pub fn local_laplacian(mesh: &Mesh, frames: &LocalFrameField) -> Vec<Vec3> {
    mesh.laplacian_coords()
        .iter()
        .zip(frames.frames())
        .map(|(d, f)| f * d)
        .collect()
}

/// Local Laplacian coordinates together with the frames they were built from.
pub fn local_laplacian_of(mesh: &Mesh) -> (Vec<Vec3>, LocalFrameField) {
    let frames = local_frames(mesh);
    (local_laplacian(mesh, &frames), frames)
}

/// Reverse-mode derivative of `Σ_i grad_i · Δ_loc,i` with respect to the
/// vertex positions, differentiating through the frames. Degenerate
/// vertices use constant fallback frames.
pub fn local_laplacian_backward(mesh: &Mesh, grad: &[Vec3]) -> Vec<Vec3> {
    let topo = mesh.topology();
    let x = &mesh.vertices;
    let parts = frame_parts(mesh);
    let delta = mesh.laplacian_coords();
    let mut gx = vec![Vec3::zeros(); x.len()];
    let mut g_normal_sum = vec![Vec3::zeros(); x.len()];

    for (i, (p, g)) in parts.iter().zip(grad).enumerate() {
        if g.iter().all(|&c| c == 0.0) {
            continue;
        }
        let d = delta[i];
        let g_delta = p.tangent * g.x + p.bitangent * g.y + p.normal * g.z;
        let nb = topo.neighbors(i);
        gx[i] += g_delta;
        let share = g_delta / nb.len() as f64;
        for &j in nb {
            gx[j] -= share;
        }
        if p.degenerate {
            continue;
        }
        let mut gt = d * g.x;
        let gb = d * g.y;
        let mut gn = d * g.z;
        // b = n × t
        gn += p.tangent.cross(&gb);
        gt += gb.cross(&p.normal);
        // t = u / |u|
        let gu = (gt - p.tangent * p.tangent.dot(&gt)) / p.projected_len;
        // u = e - (e·n) n
        let ndotgu = p.normal.dot(&gu);
        let ge = gu - p.normal * ndotgu;
        gn += -p.edge * ndotgu - gu * p.edge.dot(&p.normal);
        gx[nb[0]] += ge;
        gx[i] -= ge;
        // n = N / |N|
        g_normal_sum[i] = (gn - p.normal * p.normal.dot(&gn)) / p.normal_len;
        debug_assert!(p.projected.norm() > 0.0 && p.normal_sum.norm() > 0.0);
    }

    for f in topo.faces() {
        let g_n: Vec3 = f.iter().map(|&v| g_normal_sum[v]).sum();
        if g_n.iter().all(|&c| c == 0.0) {
            continue;
        }
        let pe = x[f[1]] - x[f[0]];
        let qe = x[f[2]] - x[f[0]];
        let gp = qe.cross(&g_n);
        let gq = g_n.cross(&pe);
        gx[f[1]] += gp;
        gx[f[2]] += gq;
        gx[f[0]] -= gp + gq;
    }
    gx
}
