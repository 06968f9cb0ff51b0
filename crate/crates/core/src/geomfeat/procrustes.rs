use nalgebra::{Matrix3, SVD};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};

#[derive(Debug, Clone)]
pub struct RigidAlignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    /// `rotation · a + translation` for every vertex of the moving mesh.
    pub aligned: Mesh,
}

/// Least-squares rigid motion (proper rotation, no scale) taking `a` onto `b`.
pub fn procrustes_align(a: &Mesh, b: &Mesh) -> Result<RigidAlignment> {
    let (rotation, translation) = rigid_fit(&a.vertices, &b.vertices)?;
    let aligned = a.with_vertices(a.vertices.iter().map(|v| rotation * v + translation).collect());
    Ok(RigidAlignment {
        rotation,
        translation,
        aligned,
    })
}

pub fn rigid_fit(a: &[Vec3], b: &[Vec3]) -> Result<(Matrix3<f64>, Vec3)> {
    if a.len() != b.len() {
        return Err(Error::CountMismatch {
            expected: b.len(),
            found: a.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::Degenerate("Procrustes needs at least 3 points".into()));
    }
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vec3>() / n;
    let cb = b.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (p - ca) * (q - cb).transpose();
    }
    let svd = SVD::new(h, true, true);
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|x, y| y.total_cmp(x));
    if sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::Degenerate(
            "rank-deficient cross-covariance (collinear points)".into(),
        ));
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * fix * u.transpose();
    let translation = cb - rotation * ca;
    Ok((rotation, translation))
}
