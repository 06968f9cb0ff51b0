use super::*;
use crate::shapes::{grid, icosphere};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn icosphere_hierarchy_hits_sizes_and_stays_closed() {
    let s = icosphere(3);
    let h = build_hierarchy(&s, &[162]).unwrap();
    assert_eq!(h.level_sizes(), vec![642, 162]);
    assert_eq!(h.level(1).unwrap().euler_characteristic(), 2);
}

#[test]
fn multi_level_sizes_are_exact() {
    let s = icosphere(3);
    let h = build_hierarchy(&s, &[400, 200, 100, 50]).unwrap();
    assert_eq!(h.level_sizes(), vec![642, 400, 200, 100, 50]);
    for k in 0..4 {
        let d = h.down_matrix(k).unwrap();
        assert_eq!((d.rows(), d.cols()), (h.level_sizes()[k + 1], h.level_sizes()[k]));
        for r in 0..d.rows() {
            assert_eq!(d.row_sum(r), 1.0);
        }
        let u = h.up_matrix(k).unwrap();
        for r in 0..u.rows() {
            assert!((u.row_sum(r) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn equal_target_is_identity_level() {
    let s = icosphere(1);
    let h = build_hierarchy(&s, &[42]).unwrap();
    assert_eq!(h.down_matrix(0).unwrap(), &CsrMatrix::identity(42));
    assert_eq!(h.up_matrix(0).unwrap(), &CsrMatrix::identity(42));
}

#[test]
fn unreachable_target_reports_achieved_size() {
    let t = crate::mesh::fixtures::tetrahedron();
    match build_hierarchy(&t, &[3]) {
        Err(Error::Unreachable {
            requested: 3,
            achieved: 4,
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn downsample_properties() {
    let s = icosphere(2);
    let h = build_hierarchy(&s, &[80, 40]).unwrap();
    let constant = s.with_vertices(vec![Vec3::new(0.5, -1.0, 2.0); s.vertex_count()]);
    let c = downsample(&constant, &h, 2).unwrap();
    assert!(c.vertices.iter().all(|v| *v == Vec3::new(0.5, -1.0, 2.0)));
    let r = downsample(&s, &h, 2).unwrap();
    assert_eq!(r.vertices, h.reference_at(2).unwrap().vertices);
    let a = nalgebra::Matrix3::new(1.0, 2.0, 0.0, -1.0, 0.5, 3.0, 0.0, 0.0, 2.0);
    let lin = s.with_vertices(s.vertices.iter().map(|v| a * v).collect());
    let lc = downsample(&lin, &h, 2).unwrap();
    for (p, q) in lc.vertices.iter().zip(&r.vertices) {
        assert!((p - a * q).norm() < 1e-9);
    }
    assert!(matches!(downsample(&s, &h, 3), Err(Error::LevelOutOfRange { .. })));
}

#[test]
fn up_down_preserves_retained_exactly() {
    let s = icosphere(3);
    let h = build_hierarchy(&s, &[200]).unwrap();
    let coarse = downsample(&s, &h, 1).unwrap();
    let fine = upsample_centroid(&coarse, &h).unwrap();
    for &i in h.retained_indices(0).unwrap() {
        assert_eq!(fine.vertices[i], s.vertices[i]);
    }
}

#[test]
fn flat_grid_upsamples_in_plane() {
    let g = grid(9, 0.1);
    let h = build_hierarchy(&g, &[40]).unwrap();
    let coarse = downsample(&g, &h, 1).unwrap();
    assert!(coarse.vertices.iter().all(|v| v.z == 0.0));
    let fine = upsample_centroid(&coarse, &h).unwrap();
    assert!(fine.vertices.iter().all(|v| v.z.abs() < 1e-15));
}

#[test]
fn centroid_matrix_hand_example() {
    // Square fan: corners 0..3 kept, centre 4 new. Vertices 5 and 6 hang
    // off 4 only, so they land in the second layer at 4's position.
    let topo = Topology::new(7, vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4], [4, 5, 6]]).unwrap();
    let m = centroid_upsampling_matrix(&topo, &[0, 1, 2, 3]).unwrap();
    for c in 0..4 {
        assert!((m.get(4, c) - 0.25).abs() < 1e-15);
        assert!((m.get(5, c) - 0.25).abs() < 1e-15);
        assert!((m.get(6, c) - 0.25).abs() < 1e-15);
    }
    let k = centroid_upsampling_matrix(&topo, &[0, 5]).unwrap();
    // first layer: 1, 3, 4 (touch 0) and 6 (touches 5); 2 comes second.
    assert_eq!(k.get(4, 0), 0.5);
    assert_eq!(k.get(4, 1), 0.5);
    assert_eq!(k.get(1, 0), 1.0);
    assert_eq!(k.get(6, 1), 1.0);
    assert!((k.get(2, 0) - 5.0 / 6.0).abs() < 1e-15);
    assert!((k.get(2, 1) - 1.0 / 6.0).abs() < 1e-15);
}

#[test]
fn detail_restore_is_noop_on_own_detail() {
    let s = icosphere(3);
    let h = build_hierarchy(&s, &[200]).unwrap();
    let init = upsample_centroid(&downsample(&s, &h, 1).unwrap(), &h).unwrap();
    let r = detail_restore(&init, &init, h.retained_indices(0).unwrap()).unwrap();
    for (p, q) in r.mesh.vertices.iter().zip(&init.vertices) {
        assert!((p - q).norm() < 1e-8);
    }
}

#[test]
fn detail_restore_beats_centroid_upsampling_on_sphere() {
    let s = icosphere(3);
    let h = build_hierarchy(&s, &[162]).unwrap();
    let init = upsample_centroid(&downsample(&s, &h, 1).unwrap(), &h).unwrap();
    let retained = h.retained_indices(0).unwrap();
    let r = detail_restore(&init, &s, retained).unwrap();
    for &i in retained {
        assert_eq!(r.mesh.vertices[i], init.vertices[i]);
    }
    assert!(r.objective_after <= r.objective_before);
    let e_init = crate::geomfeat::mean_vertex_error(&init, &s).unwrap();
    let e_rest = crate::geomfeat::mean_vertex_error(&r.mesh, &s).unwrap();
    assert!(e_rest < e_init, "restored {e_rest} vs centroid {e_init}");
}

#[test]
fn spirals_are_permutation_equivariant() {
    let s = icosphere(2);
    let topo = s.topology();
    let base = build_spirals(topo, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..s.vertex_count()).collect();
        perm.shuffle(&mut rng);
        let faces = topo.faces().iter().map(|f| f.map(|i| perm[i])).collect();
        let relabeled = Topology::new(s.vertex_count(), faces).unwrap();
        let t = build_spirals(&relabeled, 9);
        for v in 0..s.vertex_count() {
            let mapped: Vec<usize> = base
                .spiral(v)
                .iter()
                .map(|&i| if i == PAD { PAD } else { perm[i] })
                .collect();
            assert_eq!(t.spiral(perm[v]), mapped.as_slice());
        }
    }
}

#[test]
fn hierarchy_container_round_trip() {
    let s = icosphere(2);
    let h = build_hierarchy(&s, &[100, 50]).unwrap();
    let back = Hierarchy::from_container(&Container::from_bytes(&h.to_container().to_bytes()).unwrap()).unwrap();
    assert_eq!(back.level_sizes(), h.level_sizes());
    assert_eq!(back.spirals(2).unwrap(), h.spirals(2).unwrap());
    assert_eq!(back.up_matrix(1).unwrap(), h.up_matrix(1).unwrap());
    assert_eq!(back.retained_indices(0).unwrap(), h.retained_indices(0).unwrap());
    assert_eq!(h.to_container().to_bytes(), back.to_container().to_bytes());
}
