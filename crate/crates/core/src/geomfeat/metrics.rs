use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Per-vertex Euclidean distances in millimetres (inputs in metres).
pub fn per_vertex_errors_mm(a: &Mesh, b: &Mesh) -> Result<Vec<f64>> {
    if a.vertex_count() != b.vertex_count() {
        return Err(Error::CountMismatch {
            expected: b.vertex_count(),
            found: a.vertex_count(),
        });
    }
    Ok(a.vertices
        .iter()
        .zip(&b.vertices)
        .map(|(p, q)| (p - q).norm() * 1000.0)
        .collect())
}

/// Mean vertex distance in millimetres. Callers align beforehand.
pub fn mean_vertex_error(a: &Mesh, b: &Mesh) -> Result<f64> {
    let e = per_vertex_errors_mm(a, b)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeCurve {
    pub points: Vec<(f64, f64)>,
}

impl CumulativeCurve {
    pub fn fraction_at(&self, x: f64) -> f64 {
        self.points.iter().take_while(|p| p.0 <= x).last().map_or(0.0, |p| p.1)
    }

    /// Two-column text: `error_mm fraction`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (x, y) in &self.points {
            let _ = writeln!(s, "{x:.6} {y:.6}");
        }
        s
    }
}

/// Fraction of errors at or below each edge. A closing point at the maximum
/// error is appended when the last edge falls short of it, so the curve
/// always ends at 1.
pub fn cumulative_error_curve(errors: &[f64], edges: &[f64]) -> Result<CumulativeCurve> {
    if errors.is_empty() {
        return Err(Error::Invalid("empty error list".into()));
    }
    if edges.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Invalid("bin edges must be sorted".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = edges
        .iter()
        .map(|&e| (e, sorted.partition_point(|&x| x <= e) as f64 / n))
        .collect();
    let max = *sorted.last().unwrap();
    if points.last().is_none_or(|p| p.0 < max) {
        points.push((max, 1.0));
    }
    Ok(CumulativeCurve { points })
}

/// Mean silhouette coefficient with Euclidean distance. Members of
/// singleton clusters score 0.
pub fn identity_separability(features: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(Error::CountMismatch {
            expected: labels.len(),
            found: features.len(),
        });
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Invalid("silhouette needs at least two identities".into()));
    }
    let n = features.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let class_index = |l: u32| classes.binary_search(&l).unwrap();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; classes.len()];
        let mut counts = vec![0usize; classes.len()];
        for j in 0..n {
            if j != i {
                let c = class_index(labels[j]);
                sums[c] += dist[i * n + j];
                counts[c] += 1;
            }
        }
        let own = class_index(labels[i]);
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}
