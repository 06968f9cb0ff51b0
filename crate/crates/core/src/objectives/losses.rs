use crate::error::{Error, Result};
use crate::geomfeat::{local_laplacian_backward, local_laplacian_of, PairSet};
use crate::mesh::{Mesh, Vec3};
use crate::network::LatentCode;

fn check_pair(pred: &Mesh, other: &Mesh) -> Result<()> {
    if pred.vertex_count() != other.vertex_count() {
        return Err(Error::CountMismatch {
            expected: other.vertex_count(),
            found: pred.vertex_count(),
        });
    }
    if !pred.shares_topology(other) {
        return Err(Error::Correspondence("meshes do not share a face list".into()));
    }
    Ok(())
}

/// `‖a − b‖²`.
pub fn loss_lat(a: &LatentCode, b: &LatentCode) -> Result<f64> {
    Ok(loss_lat_grad(a, b)?.0)
}

/// Value and gradient with respect to `a` (the gradient for `b` is its negation).
pub fn loss_lat_grad(a: &LatentCode, b: &LatentCode) -> Result<(f64, Vec<f64>)> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("codes of length {} and {}", a.dim(), b.dim())));
    }
    let diff: Vec<f64> = a.0.iter().zip(&b.0).map(|(x, y)| x - y).collect();
    let value = diff.iter().map(|d| d * d).sum();
    Ok((value, diff.into_iter().map(|d| 2.0 * d).collect()))
}

/// Mean squared vertex distance.
pub fn loss_rec(pred: &Mesh, truth: &Mesh) -> Result<f64> {
    Ok(loss_rec_grad(pred, truth)?.0)
}

pub fn loss_rec_grad(pred: &Mesh, truth: &Mesh) -> Result<(f64, Vec<Vec3>)> {
    check_pair(pred, truth)?;
    let n = pred.vertex_count() as f64;
    let diff: Vec<Vec3> = pred.vertices.iter().zip(&truth.vertices).map(|(p, q)| p - q).collect();
    let value = diff.iter().map(|d| d.norm_squared()).sum::<f64>() / n;
    Ok((value, diff.into_iter().map(|d| d * (2.0 / n)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapLoss {
    pub value: f64,
    /// Vertices skipped because a frame was degenerate on either side.
    pub excluded: usize,
}

/// Local Laplacian coordinates and degeneracy flags of a fixed mesh.
#[derive(Debug, Clone)]
pub struct LapReference {
    coords: Vec<Vec3>,
    degenerate: Vec<bool>,
}

impl LapReference {
    pub fn new(mesh: &Mesh) -> Self {
        let (coords, frames) = local_laplacian_of(mesh);
        let degenerate = (0..coords.len()).map(|v| frames.is_degenerate(v)).collect();
        Self { coords, degenerate }
    }
}

/// Mean squared difference of local Laplacian coordinates over the vertices
/// whose frames are well defined on both meshes.
pub fn loss_lap(pred: &Mesh, reference: &Mesh) -> Result<LapLoss> {
    check_pair(pred, reference)?;
    Ok(lap_against(pred, &LapReference::new(reference), false)?.0)
}

/// Value and exact gradient, frames included.
pub fn loss_lap_grad(pred: &Mesh, reference: &Mesh) -> Result<(LapLoss, Vec<Vec3>)> {
    check_pair(pred, reference)?;
    let (loss, grad) = lap_against(pred, &LapReference::new(reference), true)?;
    Ok((loss, grad.expect("requested")))
}

pub(crate) fn lap_against(
    pred: &Mesh,
    reference: &LapReference,
    with_grad: bool,
) -> Result<(LapLoss, Option<Vec<Vec3>>)> {
    if reference.coords.len() != pred.vertex_count() {
        return Err(Error::CountMismatch {
            expected: reference.coords.len(),
            found: pred.vertex_count(),
        });
    }
    let (coords, frames) = local_laplacian_of(pred);
    let keep: Vec<bool> = (0..coords.len())
        .map(|v| !frames.is_degenerate(v) && !reference.degenerate[v])
        .collect();
    let used = keep.iter().filter(|&&k| k).count();
    if used == 0 {
        return Err(Error::Degenerate("every local frame is degenerate".into()));
    }
    let n = used as f64;
    let mut value = 0.0;
    let mut upstream = vec![Vec3::zeros(); coords.len()];
    for v in 0..coords.len() {
        if keep[v] {
            let d = coords[v] - reference.coords[v];
            value += d.norm_squared();
            upstream[v] = d * (2.0 / n);
        }
    }
    let loss = LapLoss {
        value: value / n,
        excluded: coords.len() - used,
    };
    Ok((loss, with_grad.then(|| local_laplacian_backward(pred, &upstream))))
}

/// Mean over pairs of squared differences of intra-part distances.
pub fn loss_rig(pred: &Mesh, reference: &Mesh, pairs: &PairSet) -> Result<f64> {
    check_pair(pred, reference)?;
    let d_ref = pair_lengths(reference, pairs)?;
    Ok(rig_against(pred, &d_ref, pairs, false)?.0)
}

pub fn loss_rig_grad(pred: &Mesh, reference: &Mesh, pairs: &PairSet) -> Result<(f64, Vec<Vec3>)> {
    check_pair(pred, reference)?;
    let d_ref = pair_lengths(reference, pairs)?;
    let (v, g) = rig_against(pred, &d_ref, pairs, true)?;
    Ok((v, g.expect("requested")))
}

pub(crate) fn pair_lengths(mesh: &Mesh, pairs: &PairSet) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::Invalid("rigidity loss needs at least one vertex pair".into()));
    }
    let n = mesh.vertex_count();
    pairs
        .pairs()
        .iter()
        .map(|&(_, i, j)| {
            if i >= n || j >= n {
                Err(Error::Invalid(format!("pair ({i}, {j}) outside a {n}-vertex mesh")))
            } else {
                Ok((mesh.vertices[i] - mesh.vertices[j]).norm())
            }
        })
        .collect()
}

pub(crate) fn rig_against(
    pred: &Mesh,
    d_ref: &[f64],
    pairs: &PairSet,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Vec3>>)> {
    let d_pred = pair_lengths(pred, pairs)?;
    let n = d_pred.len() as f64;
    let mut value = 0.0;
    let mut grad = with_grad.then(|| vec![Vec3::zeros(); pred.vertex_count()]);
    for ((&(_, i, j), &dp), &dr) in pairs.pairs().iter().zip(&d_pred).zip(d_ref) {
        let diff = dp - dr;
        value += diff * diff;
        if let Some(g) = grad.as_mut() {
            if dp > 0.0 {
                let dir = (pred.vertices[i] - pred.vertices[j]) * (2.0 * diff / (n * dp));
                g[i] += dir;
                g[j] -= dir;
            }
        }
    }
    Ok((value / n, grad))
}

/// Mean squared distance to a frozen mesh; the fine-tuning anchor.
pub fn loss_reg(current: &Mesh, init: &Mesh) -> Result<f64> {
    loss_rec(current, init)
}

pub fn loss_reg_grad(current: &Mesh, init: &Mesh) -> Result<(f64, Vec<Vec3>)> {
    loss_rec_grad(current, init)
}
