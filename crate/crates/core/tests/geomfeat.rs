use idtransfer::geomfeat::{
    build_pair_set, cumulative_error_curve, identity_separability, intra_part_distances, local_laplacian_of,
    mean_vertex_error, procrustes_align, procrustes_error,
};
use idtransfer::shapes::icosphere;
use idtransfer::{Mesh, SegmentationMap, Vec3};
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

fn rotation(axis: [f64; 3], angle: f64) -> Rotation3<f64> {
    let a = Vec3::new(axis[0], axis[1], axis[2]);
    let a = if a.norm() < 1e-3 { Vec3::z() } else { a };
    Rotation3::from_axis_angle(&Unit::new_normalize(a), angle)
}

fn moved(mesh: &Mesh, r: &Rotation3<f64>, t: Vec3) -> Mesh {
    mesh.with_vertices(mesh.vertices.iter().map(|p| r * p + t).collect())
}

/// Icosphere squashed along one axis so frames are well defined everywhere
/// and the shape has no rotational symmetry.
fn blob() -> Mesh {
    let s = icosphere(2);
    s.with_vertices(
        s.vertices
            .iter()
            .map(|p| Vec3::new(1.3 * p.x, 0.8 * p.y + 0.1 * p.x * p.x, p.z))
            .collect(),
    )
}

#[test]
fn mean_error_is_in_millimetres() {
    let a = icosphere(0);
    let b = a.with_vertices(a.vertices.iter().map(|p| p + Vec3::new(0.003, 0.004, 0.0)).collect());
    assert!((mean_vertex_error(&a, &b).unwrap() - 5.0).abs() < 1e-9);
}

#[test]
fn curve_on_hand_example() {
    let curve = cumulative_error_curve(&[0.5, 1.5, 1.5, 3.0], &[0.0, 1.0, 2.0]).unwrap();
    assert_eq!(curve.fraction_at(0.0), 0.0);
    assert_eq!(curve.fraction_at(1.0), 0.25);
    assert_eq!(curve.fraction_at(2.0), 0.75);
    assert_eq!(curve.points.last().unwrap(), &(3.0, 1.0));
    assert!(cumulative_error_curve(&[], &[1.0]).is_err());
}

#[test]
fn silhouette_on_hand_example() {
    // Class 0 at {0, 1}, class 1 at {4}: a = 1, b = 4 and 3 for the first
    // cluster, and the singleton scores 0.
    let f = vec![vec![0.0], vec![1.0], vec![4.0]];
    let s = identity_separability(&f, &[0, 0, 1]).unwrap();
    let want = ((1.0 - 1.0 / 4.0) + (1.0 - 1.0 / 3.0) + 0.0) / 3.0;
    assert!((s - want).abs() < 1e-12);
    assert!(identity_separability(&f, &[0, 0, 0]).is_err());
}

#[test]
fn pairs_stay_inside_their_part_and_respect_the_cap() {
    let mesh = icosphere(2);
    let part_of: Vec<usize> = mesh
        .vertices
        .iter()
        .map(|p| usize::from(p.z > 0.0) + usize::from(p.x > 0.5))
        .collect();
    let seg = SegmentationMap::new(part_of).unwrap();
    let pairs = build_pair_set(&seg, 50, 7);
    let mut per_part = vec![0; seg.part_count()];
    for &(part, i, j) in pairs.pairs() {
        assert_ne!(i, j);
        assert_eq!(seg.part_of(i), part);
        assert_eq!(seg.part_of(j), part);
        per_part[part] += 1;
    }
    for (p, &count) in per_part.iter().enumerate() {
        let m = seg.members(p).len();
        assert_eq!(count, (m * (m - 1) / 2).min(50));
    }
    assert_eq!(build_pair_set(&seg, 50, 7).pairs(), pairs.pairs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn procrustes_recovers_rigid_motion(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let a = blob();
        let r = rotation(axis, angle);
        let b = moved(&a, &r, Vec3::new(t[0], t[1], t[2]));
        let fit = procrustes_align(&a, &b).unwrap();
        prop_assert!((fit.rotation - r.matrix()).norm() < 1e-9);
        prop_assert!((fit.rotation.determinant() - 1.0).abs() < 1e-12);
        prop_assert!(procrustes_error(&a, &b).unwrap() < 1e-6);
    }

    #[test]
    fn local_laplacian_is_rigid_invariant(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let a = blob();
        let b = moved(&a, &rotation(axis, angle), Vec3::new(t[0], t[1], t[2]));
        let (la, fa) = local_laplacian_of(&a);
        let (lb, _) = local_laplacian_of(&b);
        prop_assert_eq!(fa.degenerate_count(), 0);
        for (x, y) in la.iter().zip(&lb) {
            prop_assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn pair_distances_survive_per_part_rigid_motion(
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let a = blob();
        let part_of: Vec<usize> = a.vertices.iter().map(|p| usize::from(p.z > 0.0)).collect();
        let seg = SegmentationMap::new(part_of.clone()).unwrap();
        let pairs = build_pair_set(&seg, 200, 1);
        let r = rotation([1.0, 0.2, 0.0], angle);
        let shift = Vec3::new(t[0], t[1], t[2]);
        let b = a.with_vertices(
            a.vertices.iter().zip(&part_of).map(|(p, &k)| if k == 1 { r * p + shift } else { *p }).collect(),
        );
        let da = intra_part_distances(&a, &pairs);
        let db = intra_part_distances(&b, &pairs);
        for (x, y) in da.iter().zip(&db) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_is_monotone_and_ends_at_one(errors in prop::collection::vec(0.0f64..150.0, 1..40)) {
        let edges: Vec<f64> = (0..=100).map(f64::from).collect();
        let curve = cumulative_error_curve(&errors, &edges).unwrap();
        prop_assert!(curve.points.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].0 <= w[1].0));
        prop_assert_eq!(curve.points.last().unwrap().1, 1.0);
        for &(x, y) in &curve.points {
            let direct = errors.iter().filter(|&&e| e <= x).count() as f64 / errors.len() as f64;
            prop_assert!((y - direct).abs() < 1e-15);
        }
    }
}
