use idtransfer::datagen::{generate_corpus, held_out_triplets, Corpus, CorpusConfig, Resolution};
use idtransfer::geomfeat::{build_pair_set, procrustes_error, PairSet};
use idtransfer::inference::{
    evaluate, finetune, infer, infer_full_resolution, interpolate_identity, upsample_to_finest, FinetuneConfig,
};
use idtransfer::multires::{build_hierarchy, downsample, downsample_segmentation, Hierarchy};
use idtransfer::network::{ArchConfig, ModelParams};
use idtransfer::Mesh;
use proptest::prelude::*;

struct Setup {
    corpus: Corpus,
    hierarchy: Hierarchy,
    params: ModelParams,
    pairs: PairSet,
}

fn setup(input_level: usize) -> Setup {
    let corpus = generate_corpus(&CorpusConfig {
        n_ids: 4,
        n_poses: 3,
        holdout_ids: 1,
        holdout_poses: 1,
        resolution: Resolution { around: 6, rings: 4 },
        ..CorpusConfig::default()
    })
    .unwrap();
    let n = corpus.meshes[0].vertex_count();
    let hierarchy = build_hierarchy(&corpus.meshes[0], &[n / 2, n / 3, n / 4]).unwrap();
    let arch = ArchConfig {
        input_level,
        encoder_channels: vec![6, 6],
        latent_dim: 4,
        output_init_scale: 0.5,
    };
    let params = ModelParams::init(arch, &hierarchy, 1).unwrap();
    let seg = downsample_segmentation(corpus.template.segmentation(), &hierarchy, input_level).unwrap();
    let pairs = build_pair_set(&seg, 200, 0);
    Setup {
        corpus,
        hierarchy,
        params,
        pairs,
    }
}

fn working(s: &Setup, i: usize) -> Mesh {
    downsample(&s.corpus.meshes[i], &s.hierarchy, s.params.arch.input_level).unwrap()
}

#[test]
fn prediction_carries_source_pose_and_target_identity() {
    let s = setup(0);
    let (src, tgt) = (&s.corpus.meshes[0], &s.corpus.meshes[4]);
    let out = infer(&s.params, &s.hierarchy, src, tgt).unwrap();
    assert_eq!(out.identity_label, tgt.identity_label);
    assert_eq!(out.pose_label, src.pose_label);
    assert!(out.shares_topology(src));
}

#[test]
fn finest_level_inputs_go_through_the_working_level() {
    let s = setup(0);
    let (src, tgt) = (&s.corpus.meshes[1], &s.corpus.meshes[5]);
    assert_eq!(
        infer_full_resolution(&s.params, &s.hierarchy, src, tgt)
            .unwrap()
            .vertices,
        infer(&s.params, &s.hierarchy, src, tgt).unwrap().vertices
    );
    let s = setup(1);
    assert!(infer(&s.params, &s.hierarchy, src, tgt).is_err());
    let full = infer_full_resolution(&s.params, &s.hierarchy, src, tgt).unwrap();
    assert_eq!(full.vertex_count(), src.vertex_count());
    let coarse = infer(&s.params, &s.hierarchy, &working(&s, 1), &working(&s, 5)).unwrap();
    for (k, &r) in s.hierarchy.retained_indices(0).unwrap().iter().enumerate() {
        assert_eq!(full.vertices[r], coarse.vertices[k]);
    }
    let same = upsample_to_finest(&src.clone(), &s.hierarchy, tgt, 0).unwrap();
    assert_eq!(same.vertices, src.vertices);
}

#[test]
fn zero_iterations_return_plain_inference() {
    let s = setup(1);
    let (src, tgt) = (working(&s, 0), working(&s, 7));
    let cfg = FinetuneConfig {
        iterations: 0,
        ..FinetuneConfig::default()
    };
    let r = finetune(&s.params, &s.hierarchy, &src, &tgt, &s.pairs, &cfg).unwrap();
    assert_eq!(
        r.mesh.vertices,
        infer(&s.params, &s.hierarchy, &src, &tgt).unwrap().vertices
    );
    assert!(r.losses.is_empty());
}

#[test]
fn finetuning_lowers_its_objective_and_leaves_weights_alone() {
    let s = setup(1);
    let (src, tgt) = (working(&s, 2), working(&s, 9));
    let before = s.params.clone();
    let cfg = FinetuneConfig {
        iterations: 30,
        learning_rate: 1e-3,
        ..FinetuneConfig::default()
    };
    let r = finetune(&s.params, &s.hierarchy, &src, &tgt, &s.pairs, &cfg).unwrap();
    assert!(r.warning.is_none());
    assert_eq!(r.losses.len(), 30);
    assert!(r.losses.last().unwrap() < &r.losses[0]);
    assert_eq!(s.params, before);
    assert!(finetune(
        &s.params,
        &s.hierarchy,
        &src,
        &tgt,
        &s.pairs,
        &FinetuneConfig {
            learning_rate: 0.0,
            ..cfg
        }
    )
    .is_err());
}

#[test]
fn evaluation_report_agrees_with_direct_scoring() {
    let s = setup(0);
    let triplets = held_out_triplets(&s.corpus, 4, 0).unwrap();
    let report = evaluate(&s.params, &s.hierarchy, &s.corpus.meshes, &triplets, None).unwrap();
    assert_eq!(report.rows.len(), 4);
    let mut sum = 0.0;
    for (row, t) in report.rows.iter().zip(&triplets) {
        let m = &s.corpus.meshes;
        let pred = infer(&s.params, &s.hierarchy, &m[t.source], &m[t.identity_target]).unwrap();
        let e = procrustes_error(&pred, &m[t.ground_truth.unwrap()]).unwrap();
        assert_eq!(row.before_mm, e);
        assert!(row.after_mm.is_none());
        sum += e;
    }
    assert!((report.mean_before_mm - sum / 4.0).abs() < 1e-9);
    assert_eq!(report.table().lines().count(), 6);
    assert_eq!(report.curve.points.last().unwrap().1, 1.0);
    assert!(evaluate(&s.params, &s.hierarchy, &s.corpus.meshes, &[], None).is_err());
}

#[test]
fn interpolation_rejects_parameters_outside_the_unit_interval() {
    let s = setup(0);
    let m = &s.corpus.meshes;
    assert!(interpolate_identity(&s.params, &s.hierarchy, &m[3], &m[6], &m[0], &[1.5]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn interpolation_endpoints_reproduce_plain_transfers(a in 3usize..12, b in 3usize..12, src in 0usize..3) {
        let s = setup(0);
        let m = &s.corpus.meshes;
        let out = interpolate_identity(&s.params, &s.hierarchy, &m[a], &m[b], &m[src], &[0.0, 0.5, 1.0]).unwrap();
        prop_assert_eq!(&out[0].vertices, &infer(&s.params, &s.hierarchy, &m[src], &m[a]).unwrap().vertices);
        prop_assert_eq!(&out[2].vertices, &infer(&s.params, &s.hierarchy, &m[src], &m[b]).unwrap().vertices);
        prop_assert_eq!(out[1].pose_label, m[src].pose_label);
    }
}
