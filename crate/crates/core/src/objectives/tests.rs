use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geomfeat::{build_pair_set, PairSet};
use crate::mesh::{Mesh, SegmentationMap, Vec3};
use crate::multires::{build_hierarchy, Hierarchy};
use crate::network::{ArchConfig, ModelParams};
use crate::shapes::icosphere;

struct Toy {
    meshes: Vec<Mesh>,
    seg: SegmentationMap,
    pairs: PairSet,
    hierarchy: Hierarchy,
    params: ModelParams,
}

/// Two identities (axis scalings) in two poses (rotations of the upper cap).
fn toy() -> Toy {
    let base = icosphere(1);
    let hierarchy = build_hierarchy(&base, &[20]).unwrap();
    let arch = ArchConfig {
        encoder_channels: vec![4, 5],
        latent_dim: 3,
        output_init_scale: 1.0,
        ..ArchConfig::default()
    };
    let params = ModelParams::init(arch, &hierarchy, 3).unwrap();
    let part_of: Vec<usize> = base.vertices.iter().map(|p| usize::from(p.z > 0.2)).collect();
    let seg = SegmentationMap::new(part_of.clone()).unwrap();
    let pairs = build_pair_set(&seg, 60, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut meshes = Vec::new();
    for id in 0..2u32 {
        let scale = Vec3::new(1.0 + 0.2 * id as f64, 1.0, 0.9 + 0.3 * id as f64);
        for pose in 0..2u32 {
            let angle = 0.4 * pose as f64;
            let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), angle);
            let v = base
                .vertices
                .iter()
                .zip(&part_of)
                .map(|(p, &part)| {
                    let s = p.component_mul(&scale);
                    let q = if part == 1 { rot * s } else { s };
                    q + Vec3::new(rng.gen_range(-0.01..0.01), 0.0, 0.0)
                })
                .collect();
            meshes.push(
                Mesh::new(Arc::clone(base.topology()), v)
                    .unwrap()
                    .with_labels(Some(id), Some(pose)),
            );
        }
    }
    Toy {
        meshes,
        seg,
        pairs,
        hierarchy,
        params,
    }
}

fn weights() -> LossWeights {
    TrainConfig::default().weights()
}

fn full_triplet() -> Triplet {
    Triplet {
        source: 0,
        identity_target: 3,
        same_identity_ref: 2,
        ground_truth: Some(2),
        mode: SupervisionMode::Full,
    }
}

fn weak_triplet() -> Triplet {
    Triplet {
        source: 1,
        identity_target: 2,
        same_identity_ref: 3,
        ground_truth: None,
        mode: SupervisionMode::Weak,
    }
}

fn fd_check(toy: &Toy, triplet: Triplet) {
    let w = weights();
    let mut grad = toy.params.zeros_like();
    accumulate_triplet_gradient(
        &toy.params,
        &toy.hierarchy,
        &triplet,
        &toy.meshes,
        &w,
        &toy.pairs,
        None,
        1.0,
        &mut grad,
    )
    .unwrap();
    let loss = |p: &ModelParams| {
        let out = triplet_outputs(p, &toy.hierarchy, &triplet, &toy.meshes).unwrap();
        combined_loss(&triplet, &toy.meshes, &out, &w, &toy.pairs)
            .unwrap()
            .total
    };
    let eps = 1e-5;
    for t in &toy.params.layout.tensors {
        for i in t.range().step_by((t.len() / 5).max(1)) {
            let mut p = toy.params.clone();
            p.values[i] += eps;
            let up = loss(&p);
            p.values[i] -= 2.0 * eps;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-4);
            assert!(
                rel < 1e-3,
                "{:?} {} [{}]: fd {fd} analytic {}",
                triplet.mode,
                t.name,
                i - t.offset,
                grad[i]
            );
        }
    }
}

#[test]
fn full_mode_gradient_matches_finite_differences() {
    fd_check(&toy(), full_triplet());
}

#[test]
fn weak_mode_gradient_matches_finite_differences() {
    fd_check(&toy(), weak_triplet());
}

#[test]
fn combined_loss_zero_cases() {
    let t = toy();
    let gt = t.meshes[2].clone();
    let z = crate::network::LatentCode(vec![0.3, -0.1, 2.0]);
    let out = TripletOutputs {
        prediction: gt,
        z_a: z.clone(),
        z_b: z.clone(),
    };
    assert_eq!(
        combined_loss(&full_triplet(), &t.meshes, &out, &weights(), &t.pairs)
            .unwrap()
            .total,
        0.0
    );

    let zero = LossWeights {
        lat: 0.0,
        rec: 0.0,
        lap: 0.0,
        rig: 0.0,
    };
    let out = triplet_outputs(&t.params, &t.hierarchy, &weak_triplet(), &t.meshes).unwrap();
    assert_eq!(
        combined_loss(&weak_triplet(), &t.meshes, &out, &zero, &t.pairs)
            .unwrap()
            .total,
        0.0
    );
}

#[test]
fn weak_loss_is_weighted_sum_of_terms() {
    let t = toy();
    let tr = weak_triplet();
    let out = triplet_outputs(&t.params, &t.hierarchy, &tr, &t.meshes).unwrap();
    let w = weights();
    let got = combined_loss(&tr, &t.meshes, &out, &w, &t.pairs).unwrap();
    let target = &t.meshes[tr.identity_target];
    let lat = loss_lat(&out.z_a, &out.z_b).unwrap();
    let lap = loss_lap(&out.prediction, target).unwrap().value;
    let rig = loss_rig(&out.prediction, target, &t.pairs).unwrap();
    let expect = w.lat * lat + w.lap * lap + w.rig * rig;
    assert!((got.total - expect).abs() <= 1e-9 * expect.max(1.0));
    assert_eq!(got.rec, None);
}

#[test]
fn inconsistent_mode_is_rejected() {
    let t = toy();
    let mut tr = full_triplet();
    tr.ground_truth = None;
    let out = triplet_outputs(&t.params, &t.hierarchy, &full_triplet(), &t.meshes).unwrap();
    assert!(combined_loss(&tr, &t.meshes, &out, &weights(), &t.pairs).is_err());
}

fn toy_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        seed: 3,
        hierarchy_sizes: vec![20],
        arch: toy().params.arch,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_initialisation() {
    let t = toy();
    let data = TrainData {
        meshes: &t.meshes,
        segmentation: &t.seg,
        hierarchy: &t.hierarchy,
    };
    let out = train(&toy_config(0), data).unwrap();
    assert_eq!(out.state.params, t.params);
    assert!(out.log.is_empty());
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let t = toy();
    let cfg = TrainConfig {
        alpha_lat: 0.0,
        alpha_rec: 0.0,
        alpha_lap: 0.0,
        alpha_rig: 0.0,
        ..toy_config(3)
    };
    let data = TrainData {
        meshes: &t.meshes,
        segmentation: &t.seg,
        hierarchy: &t.hierarchy,
    };
    let out = train(&cfg, data).unwrap();
    assert_eq!(out.state.params.values, t.params.values);
    assert_eq!(out.log.len(), 3);
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let t = toy();
    let data = TrainData {
        meshes: &t.meshes,
        segmentation: &t.seg,
        hierarchy: &t.hierarchy,
    };
    let cfg = toy_config(30);
    let a = train(&cfg, data).unwrap();
    let b = train(&cfg, data).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 30);
    assert!(a.log.last().unwrap().total < a.log[0].total);
    assert_eq!(a.log[0].lr, cfg.learning_rate);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let t = toy();
    let data = TrainData {
        meshes: &t.meshes,
        segmentation: &t.seg,
        hierarchy: &t.hierarchy,
    };
    let whole = train(&toy_config(8), data).unwrap();
    let half = train(&toy_config(4), data).unwrap();
    let rest = train_from(&toy_config(8), data, half.state, |_, _| Ok(())).unwrap();
    assert_eq!(rest.state.params, whole.state.params);
    assert_eq!(rest.log, whole.log[4..]);
}

#[test]
fn checkpoint_round_trip() {
    let t = toy();
    let ck = Checkpoint {
        params: t.params.clone(),
        adam: Some(AdamState::new(t.params.param_count())),
        epoch: 4,
        config: toy_config(4).to_toml(),
        config_hash: "abc".into(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.idxc");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.epoch, 4);
    assert_eq!(back.config, ck.config);
    assert_eq!(back, ck.quantized().unwrap());
    for (a, b) in back.params.values.iter().zip(&ck.params.values) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn config_defaults_and_round_trip() {
    let cfg = TrainConfig::default();
    assert_eq!(
        (cfg.alpha_rec, cfg.alpha_lap, cfg.alpha_rig, cfg.alpha_lat),
        (10.0, 1000.0, 1.0, 1000.0)
    );
    assert_eq!(
        (cfg.learning_rate, cfg.lr_decay, cfg.epochs, cfg.batch_size),
        (1e-3, 0.99, 500, 32)
    );
    assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(TrainConfig::from_toml("alpha_lap = -1.0").is_err());
    assert!(TrainConfig::from_toml("alpha_lapp = 1.0").is_err());
}
