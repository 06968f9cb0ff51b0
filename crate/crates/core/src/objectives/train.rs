use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::losses::{lap_against, loss_lat_grad, loss_rec_grad, pair_lengths, rig_against, LapReference};
use super::triplets::{
    resample_tick, sample_with_index, summarize, CorpusIndex, SamplingReport, SupervisionMode, Triplet,
};
use crate::error::{Error, Result};
use crate::geomfeat::{build_pair_set, PairSet};
use crate::mesh::{validate_corpus, Mesh, SegmentationMap, Vec3};
use crate::multires::Hierarchy;
use crate::network::{
    decode_backward, decode_traced, encode_backward, encode_traced, ArchConfig, LatentCode, ModelParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lat: f64,
    pub rec: f64,
    pub lap: f64,
    pub rig: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("lat", self.lat),
            ("rec", self.rec),
            ("lap", self.lap),
            ("rig", self.rig),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Invalid(format!(
                    "alpha_{name} must be a non-negative number, got {w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha_lat: f64,
    pub alpha_rec: f64,
    pub alpha_lap: f64,
    pub alpha_rig: f64,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Maximum number of vertex pairs per body part in the rigidity loss.
    pub pair_cap: usize,
    pub seed: u64,
    /// Vertex counts of the coarser hierarchy levels.
    pub hierarchy_sizes: Vec<usize>,
    /// Write a checkpoint every this many epochs; 0 writes only the last.
    pub checkpoint_every: usize,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_lat: 1000.0,
            alpha_rec: 10.0,
            alpha_lap: 1000.0,
            alpha_rig: 1.0,
            learning_rate: 1e-3,
            lr_decay: 0.99,
            epochs: 500,
            batch_size: 32,
            pair_cap: 2000,
            seed: 0,
            hierarchy_sizes: vec![600, 300, 150],
            checkpoint_every: 0,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lat: self.alpha_lat,
            rec: self.alpha_rec,
            lap: self.alpha_lap,
            rig: self.alpha_rig,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Invalid(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        if self.pair_cap == 0 {
            return Err(Error::Invalid("pair_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loss terms of one triplet; `None` for terms the mode does not use.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub lat: f64,
    pub rec: Option<f64>,
    pub lap: Option<f64>,
    pub rig: Option<f64>,
    pub lap_excluded: usize,
}

#[derive(Debug, Clone)]
pub struct TripletOutputs {
    pub prediction: Mesh,
    /// Code of the identity target.
    pub z_a: LatentCode,
    /// Code of the same-identity reference.
    pub z_b: LatentCode,
}

/// Precomputed pose-independent quantities of every corpus mesh.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    lap: Vec<LapReference>,
    lengths: Vec<Vec<f64>>,
}

impl ReferenceCache {
    pub fn new(meshes: &[Mesh], pairs: &PairSet) -> Result<Self> {
        Ok(Self {
            lap: meshes.iter().map(LapReference::new).collect(),
            lengths: meshes.iter().map(|m| pair_lengths(m, pairs)).collect::<Result<_>>()?,
        })
    }
}

fn check_triplet(t: &Triplet, n: usize) -> Result<()> {
    for i in [t.source, t.identity_target, t.same_identity_ref] {
        if i >= n {
            return Err(Error::Invalid(format!("triplet index {i} outside a corpus of {n}")));
        }
    }
    let consistent = match t.mode {
        SupervisionMode::Full => t.ground_truth == Some(t.same_identity_ref),
        SupervisionMode::Weak => t.ground_truth.is_none(),
    };
    if !consistent {
        return Err(Error::Invalid(format!(
            "{:?}-mode triplet with ground truth {:?}",
            t.mode, t.ground_truth
        )));
    }
    Ok(())
}

/// Gradients of a combined loss with respect to the prediction and `z_a`;
/// the gradient for `z_b` is the negation of the latter.
struct CombinedGrad {
    pred: Vec<Vec3>,
    z_a: Vec<f64>,
}

fn combined_terms(
    triplet: &Triplet,
    meshes: &[Mesh],
    outputs: &TripletOutputs,
    weights: &LossWeights,
    pairs: &PairSet,
    cache: Option<&ReferenceCache>,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<CombinedGrad>)> {
    check_triplet(triplet, meshes.len())?;
    let pred = &outputs.prediction;
    let (lat, g_lat) = loss_lat_grad(&outputs.z_a, &outputs.z_b)?;
    let mut out = LossBreakdown {
        lat,
        total: weights.lat * lat,
        ..LossBreakdown::default()
    };
    let mut g_pred = vec![Vec3::zeros(); pred.vertex_count()];
    let add = |g: &mut Vec<Vec3>, w: f64, term: Vec<Vec3>| {
        for (a, b) in g.iter_mut().zip(term) {
            *a += b * w;
        }
    };
    match triplet.mode {
        SupervisionMode::Full => {
            let gt = &meshes[triplet.same_identity_ref];
            let (rec, g) = loss_rec_grad(pred, gt)?;
            out.rec = Some(rec);
            out.total += weights.rec * rec;
            add(&mut g_pred, weights.rec, g);
        }
        SupervisionMode::Weak => {
            let target_index = triplet.identity_target;
            let target = &meshes[target_index];
            if pred.vertex_count() != target.vertex_count() || !pred.shares_topology(target) {
                return Err(Error::Correspondence(
                    "prediction and identity target differ in topology".into(),
                ));
            }
            let owned;
            let lap_ref = match cache {
                Some(c) => &c.lap[target_index],
                None => {
                    owned = LapReference::new(target);
                    &owned
                }
            };
            let (lap, g) = lap_against(pred, lap_ref, with_grad)?;
            out.lap = Some(lap.value);
            out.lap_excluded = lap.excluded;
            out.total += weights.lap * lap.value;
            if let Some(g) = g {
                add(&mut g_pred, weights.lap, g);
            }
            let owned_len;
            let lengths = match cache {
                Some(c) => &c.lengths[target_index],
                None => {
                    owned_len = pair_lengths(target, pairs)?;
                    &owned_len
                }
            };
            let (rig, g) = rig_against(pred, lengths, pairs, with_grad)?;
            out.rig = Some(rig);
            out.total += weights.rig * rig;
            if let Some(g) = g {
                add(&mut g_pred, weights.rig, g);
            }
        }
    }
    let grad = with_grad.then(|| CombinedGrad {
        pred: g_pred,
        z_a: g_lat.into_iter().map(|g| g * weights.lat).collect(),
    });
    Ok((out, grad))
}

/// Full mode: `α_lat·lat + α_rec·rec(pred, ground truth)`. Weak mode:
/// `α_lat·lat + α_lap·lap(pred, target) + α_rig·rig(pred, target)`.
pub fn combined_loss(
    triplet: &Triplet,
    meshes: &[Mesh],
    outputs: &TripletOutputs,
    weights: &LossWeights,
    pairs: &PairSet,
) -> Result<LossBreakdown> {
    Ok(combined_terms(triplet, meshes, outputs, weights, pairs, None, false)?.0)
}

/// Runs the network on one triplet.
pub fn triplet_outputs(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    triplet: &Triplet,
    meshes: &[Mesh],
) -> Result<TripletOutputs> {
    check_triplet(triplet, meshes.len())?;
    let source = &meshes[triplet.source];
    let (z_a, _) = encode_traced(params, hierarchy, &meshes[triplet.identity_target].vertices)?;
    let (z_b, _) = encode_traced(params, hierarchy, &meshes[triplet.same_identity_ref].vertices)?;
    let (pred, _) = decode_traced(params, hierarchy, &z_a, &source.vertices)?;
    Ok(TripletOutputs {
        prediction: source.with_vertices(pred),
        z_a,
        z_b,
    })
}

/// Combined loss of one triplet; adds `scale ×` its parameter gradient to `grad`.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_triplet_gradient(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    triplet: &Triplet,
    meshes: &[Mesh],
    weights: &LossWeights,
    pairs: &PairSet,
    cache: Option<&ReferenceCache>,
    scale: f64,
    grad: &mut [f64],
) -> Result<LossBreakdown> {
    check_triplet(triplet, meshes.len())?;
    let source = &meshes[triplet.source];
    let (z_a, enc_a) = encode_traced(params, hierarchy, &meshes[triplet.identity_target].vertices)?;
    let (z_b, enc_b) = encode_traced(params, hierarchy, &meshes[triplet.same_identity_ref].vertices)?;
    let (pred, dec) = decode_traced(params, hierarchy, &z_a, &source.vertices)?;
    let outputs = TripletOutputs {
        prediction: source.with_vertices(pred),
        z_a,
        z_b,
    };
    let (loss, g) = combined_terms(triplet, meshes, &outputs, weights, pairs, cache, true)?;
    let g = g.expect("requested");
    let g_pred: Vec<Vec3> = g.pred.iter().map(|v| v * scale).collect();
    let mut g_za = decode_backward(params, hierarchy, &dec, &g_pred, grad)?;
    for (a, l) in g_za.iter_mut().zip(&g.z_a) {
        *a += l * scale;
    }
    let g_zb: Vec<f64> = g.z_a.iter().map(|l| -l * scale).collect();
    encode_backward(params, hierarchy, &enc_a, &g_za, grad)?;
    encode_backward(params, hierarchy, &enc_b, &g_zb, grad)?;
    Ok(loss)
}

/// One line of the training log: per-term means over the triplets using them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub lat: f64,
    pub rec: f64,
    pub lap: f64,
    pub rig: f64,
    pub full: usize,
    pub weak: usize,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} lr {:.6e} loss {:.9e} lat {:.9e} rec {:.9e} lap {:.9e} rig {:.9e} full {} weak {}",
            self.epoch, self.lr, self.total, self.lat, self.rec, self.lap, self.rig, self.full, self.weak
        )
    }
}

#[derive(Default)]
struct Means {
    total: (f64, usize),
    lat: (f64, usize),
    rec: (f64, usize),
    lap: (f64, usize),
    rig: (f64, usize),
}

impl Means {
    fn add(&mut self, l: &LossBreakdown) {
        fn push(slot: &mut (f64, usize), v: Option<f64>) {
            if let Some(v) = v {
                slot.0 += v;
                slot.1 += 1;
            }
        }
        push(&mut self.total, Some(l.total));
        push(&mut self.lat, Some(l.lat));
        push(&mut self.rec, l.rec);
        push(&mut self.lap, l.lap);
        push(&mut self.rig, l.rig);
    }

    fn mean(slot: (f64, usize)) -> f64 {
        if slot.1 == 0 {
            0.0
        } else {
            slot.0 / slot.1 as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn init(config: &TrainConfig, hierarchy: &Hierarchy) -> Result<Self> {
        let params = ModelParams::init(config.arch.clone(), hierarchy, config.seed)?;
        let adam = AdamState::new(params.param_count());
        Ok(Self { params, adam, epoch: 0 })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    pub initial_report: SamplingReport,
    /// Set when training stopped on a non-finite loss; `state` then holds
    /// the parameters from before the failing step.
    pub aborted: Option<String>,
}

/// Corpus meshes (at the network's input level), their segmentation, and the hierarchy.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub meshes: &'a [Mesh],
    pub segmentation: &'a SegmentationMap,
    pub hierarchy: &'a Hierarchy,
}

fn mix(seed: u64, salt: u64, epoch: usize) -> u64 {
    seed ^ salt.wrapping_mul(epoch as u64 + 1)
}

pub fn train(config: &TrainConfig, data: TrainData<'_>) -> Result<TrainOutcome> {
    let state = TrainState::init(config, data.hierarchy)?;
    train_from(config, data, state, |_, _| Ok(()))
}

/// Continues from `state` up to `config.epochs`, calling `on_epoch` after each one.
pub fn train_from(
    config: &TrainConfig,
    data: TrainData<'_>,
    mut state: TrainState,
    mut on_epoch: impl FnMut(&TrainState, &EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    validate_corpus(data.meshes)?;
    if data.segmentation.vertex_count() != data.hierarchy.level(config.arch.input_level)?.vertex_count() {
        return Err(Error::CountMismatch {
            expected: data.hierarchy.level(config.arch.input_level)?.vertex_count(),
            found: data.segmentation.vertex_count(),
        });
    }
    let weights = config.weights();
    let index = CorpusIndex::new(data.meshes)?;
    let pairs = build_pair_set(data.segmentation, config.pair_cap, config.seed);
    let cache = ReferenceCache::new(data.meshes, &pairs)?;
    let (mut triplets, initial_report) = sample_with_index(&index, config.seed);
    for e in 1..=state.epoch {
        resample_tick(&mut triplets, &index, e, config.seed);
    }
    let mut log = Vec::new();
    let mut grad = state.params.zeros_like();
    let mut aborted = None;

    'epochs: for epoch in state.epoch..config.epochs {
        resample_tick(&mut triplets, &index, epoch, config.seed);
        let lr = config.learning_rate * config.lr_decay.powi(epoch as i32);
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(
            config.seed,
            0xD1B5_4A32_D192_ED03,
            epoch,
        )));
        let mut means = Means::default();
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_losses = Vec::with_capacity(batch.len());
            for &k in batch {
                let loss = accumulate_triplet_gradient(
                    &state.params,
                    data.hierarchy,
                    &triplets[k],
                    data.meshes,
                    &weights,
                    &pairs,
                    Some(&cache),
                    scale,
                    &mut grad,
                )?;
                if !loss.total.is_finite() {
                    aborted = Some(format!("non-finite loss at epoch {epoch} on triplet {k}"));
                    break 'epochs;
                }
                batch_losses.push(loss);
            }
            match adam_step(&mut state.params.values, &grad, &mut state.adam, lr) {
                Ok(()) => {}
                Err(Error::NonFinite(msg)) => {
                    aborted = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            batch_losses.iter().for_each(|l| means.add(l));
        }
        let counts = summarize(&triplets);
        let entry = EpochLog {
            epoch,
            lr,
            total: Means::mean(means.total),
            lat: Means::mean(means.lat),
            rec: Means::mean(means.rec),
            lap: Means::mean(means.lap),
            rig: Means::mean(means.rig),
            full: counts.full,
            weak: counts.weak,
        };
        state.epoch = epoch + 1;
        log.push(entry);
        on_epoch(&state, &entry)?;
    }
    Ok(TrainOutcome {
        state,
        log,
        initial_report,
        aborted,
    })
}
