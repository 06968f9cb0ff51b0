//! Feed-forward transfer, per-pair fine-tuning, latent interpolation and
//! held-out evaluation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomfeat::{cumulative_error_curve, procrustes_error, CumulativeCurve, PairSet};
use crate::mesh::{Mesh, Vec3};
use crate::multires::{downsample, upsample_two_step, Hierarchy};
use crate::network::{
    decode, decode_backward, decode_traced, encode, encode_backward, encode_traced, LatentCode, ModelParams,
};
use crate::objectives::{
    adam_step, lap_against, loss_rec_grad, pair_lengths, rig_against, AdamState, LapReference, Triplet,
};

fn check_working_level(params: &ModelParams, hierarchy: &Hierarchy, meshes: &[&Mesh]) -> Result<()> {
    let topo = hierarchy.level(params.arch.input_level)?;
    for m in meshes {
        if m.vertex_count() != topo.vertex_count() {
            return Err(Error::CountMismatch {
                expected: topo.vertex_count(),
                found: m.vertex_count(),
            });
        }
        if !(std::sync::Arc::ptr_eq(m.topology(), topo) || m.topology().same_faces(topo)) {
            return Err(Error::Correspondence(
                "mesh is not on the model's working topology".into(),
            ));
        }
    }
    Ok(())
}

/// `source + Dec(Enc(target), source)`, labelled with the source pose and
/// the target identity.
pub fn infer(params: &ModelParams, hierarchy: &Hierarchy, source: &Mesh, target: &Mesh) -> Result<Mesh> {
    check_working_level(params, hierarchy, &[source, target])?;
    let code = encode(params, hierarchy, &target.vertices)?;
    let pred = decode(params, hierarchy, &code, &source.vertices)?;
    Ok(source
        .with_vertices(pred)
        .with_labels(target.identity_label, source.pose_label))
}

/// Restricts finest-level meshes to the working level, transfers, and brings
/// the result back up with detail taken from the target.
pub fn infer_full_resolution(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    source: &Mesh,
    target: &Mesh,
) -> Result<Mesh> {
    let level = params.arch.input_level;
    let s = downsample(source, hierarchy, level)?;
    let t = downsample(target, hierarchy, level)?;
    let pred = infer(params, hierarchy, &s, &t)?;
    upsample_to_finest(&pred, hierarchy, target, level)
}

/// Two-step upsampling from `level` to level 0, one level at a time.
pub fn upsample_to_finest(pred: &Mesh, hierarchy: &Hierarchy, detail_source: &Mesh, level: usize) -> Result<Mesh> {
    let mut mesh = pred.clone();
    for k in (0..level).rev() {
        let detail = downsample(detail_source, hierarchy, k)?;
        mesh = upsample_two_step(&mesh, hierarchy, &detail)?;
    }
    Ok(mesh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub alpha_lap: f64,
    pub alpha_rig: f64,
    pub alpha_reg: f64,
    /// Feed the latest prediction back as the pose input instead of the
    /// initial result.
    pub track_pose_input: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            learning_rate: 1e-4,
            alpha_lap: 10.0,
            alpha_rig: 1.0,
            alpha_reg: 0.1,
            track_pose_input: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha_lap", self.alpha_lap),
            ("alpha_rig", self.alpha_rig),
            ("alpha_reg", self.alpha_reg),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be a non-negative number, got {w}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub mesh: Mesh,
    /// Plain feed-forward result the run started from.
    pub init: Mesh,
    /// Fine-tuning objective at each iteration, before its update.
    pub losses: Vec<f64>,
    /// Set when a non-finite loss stopped the run early.
    pub warning: Option<String>,
}

/// Adapts a private copy of the weights to one `(source, target)` pair.
pub fn finetune(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    source: &Mesh,
    target: &Mesh,
    pairs: &PairSet,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    let init = infer(params, hierarchy, source, target)?;
    if cfg.iterations == 0 {
        return Ok(FinetuneResult {
            mesh: init.clone(),
            init,
            losses: Vec::new(),
            warning: None,
        });
    }
    let lap_ref = LapReference::new(target);
    let target_lengths = pair_lengths(target, pairs)?;
    let mut weights = params.clone();
    let mut adam = AdamState::new(weights.param_count());
    let mut grad = weights.zeros_like();
    let mut pose_input = init.vertices.clone();
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(f64, Mesh)> = None;
    let mut warning = None;
    for it in 0..cfg.iterations {
        let (code, enc) = encode_traced(&weights, hierarchy, &target.vertices)?;
        let (pred, dec) = decode_traced(&weights, hierarchy, &code, &pose_input)?;
        let pred = init.with_vertices(pred);
        let (lap, g_lap) = lap_against(&pred, &lap_ref, true)?;
        let (rig, g_rig) = rig_against(&pred, &target_lengths, pairs, true)?;
        let (reg, g_reg) = loss_rec_grad(&pred, &init)?;
        let loss = cfg.alpha_lap * lap.value + cfg.alpha_rig * rig + cfg.alpha_reg * reg;
        if !loss.is_finite() {
            warning = Some(format!("non-finite fine-tuning loss at iteration {it}"));
            break;
        }
        losses.push(loss);
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, pred.clone()));
        }
        let g_pred: Vec<Vec3> = g_lap
            .expect("requested")
            .iter()
            .zip(g_rig.expect("requested"))
            .zip(&g_reg)
            .map(|((a, b), c)| a * cfg.alpha_lap + b * cfg.alpha_rig + c * cfg.alpha_reg)
            .collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let g_code = decode_backward(&weights, hierarchy, &dec, &g_pred, &mut grad)?;
        encode_backward(&weights, hierarchy, &enc, &g_code, &mut grad)?;
        if let Err(e) = adam_step(&mut weights.values, &grad, &mut adam, cfg.learning_rate) {
            warning = Some(format!("optimizer stopped at iteration {it}: {e}"));
            break;
        }
        if cfg.track_pose_input {
            pose_input = pred.vertices;
        }
    }
    let mesh = if warning.is_some() {
        best.map_or_else(|| init.clone(), |(_, m)| m)
    } else {
        let code = encode(&weights, hierarchy, &target.vertices)?;
        init.with_vertices(decode(&weights, hierarchy, &code, &pose_input)?)
    };
    Ok(FinetuneResult {
        mesh,
        init,
        losses,
        warning,
    })
}

/// Decodes `(1 − t)·Enc(a) + t·Enc(b)` on the source pose for every `t`.
pub fn interpolate_identity(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    target_a: &Mesh,
    target_b: &Mesh,
    source: &Mesh,
    ts: &[f64],
) -> Result<Vec<Mesh>> {
    check_working_level(params, hierarchy, &[target_a, target_b, source])?;
    if let Some(t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Invalid(format!("interpolation parameter {t} outside [0, 1]")));
    }
    let za = encode(params, hierarchy, &target_a.vertices)?;
    let zb = encode(params, hierarchy, &target_b.vertices)?;
    ts.iter()
        .map(|&t| {
            let z: LatentCode = if t == 0.0 {
                za.clone()
            } else if t == 1.0 {
                zb.clone()
            } else {
                za.lerp(&zb, t)
            };
            let pred = decode(params, hierarchy, &z, &source.vertices)?;
            Ok(source.with_vertices(pred).with_labels(None, source.pose_label))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub triplet: usize,
    pub before_mm: f64,
    pub after_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_before_mm: f64,
    pub mean_after_mm: Option<f64>,
    /// Curve of the final errors (after fine-tuning when it ran).
    pub curve: CumulativeCurve,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::from("triplet error_mm_before error_mm_after_ft\n");
        for r in &self.rows {
            let after = r.after_mm.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
            let _ = writeln!(s, "{} {:.6} {after}", r.triplet, r.before_mm);
        }
        let after = self
            .mean_after_mm
            .map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
        let _ = writeln!(s, "mean {:.6} {after}", self.mean_before_mm);
        s
    }
}

/// Default cumulative-curve bin edges, 0 to 100 mm by 1 mm.
pub fn default_curve_edges() -> Vec<f64> {
    (0..=100).map(f64::from).collect()
}

/// Procrustes-aligned mean vertex error (mm) of each transfer against its
/// ground truth, optionally also after fine-tuning.
pub fn evaluate(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    meshes: &[Mesh],
    triplets: &[Triplet],
    finetuning: Option<(&FinetuneConfig, &PairSet)>,
) -> Result<EvalReport> {
    if triplets.is_empty() {
        return Err(Error::Invalid("no triplets to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(triplets.len());
    for (k, t) in triplets.iter().enumerate() {
        let gt = t
            .ground_truth
            .ok_or_else(|| Error::Invalid(format!("triplet {k} has no ground truth")))?;
        let (source, target, truth) = (&meshes[t.source], &meshes[t.identity_target], &meshes[gt]);
        let (before, after) = match finetuning {
            Some((cfg, pairs)) => {
                let r = finetune(params, hierarchy, source, target, pairs, cfg)?;
                (
                    procrustes_error(&r.init, truth)?,
                    Some(procrustes_error(&r.mesh, truth)?),
                )
            }
            None => (
                procrustes_error(&infer(params, hierarchy, source, target)?, truth)?,
                None,
            ),
        };
        rows.push(EvalRow {
            triplet: k,
            before_mm: before,
            after_mm: after,
        });
    }
    report_from_rows(rows)
}

pub fn report_from_rows(rows: Vec<EvalRow>) -> Result<EvalReport> {
    let n = rows.len() as f64;
    let mean_before_mm = rows.iter().map(|r| r.before_mm).sum::<f64>() / n;
    let mean_after_mm = rows
        .iter()
        .map(|r| r.after_mm)
        .collect::<Option<Vec<f64>>>()
        .map(|a| a.iter().sum::<f64>() / n);
    let finals: Vec<f64> = rows.iter().map(|r| r.after_mm.unwrap_or(r.before_mm)).collect();
    let curve = cumulative_error_curve(&finals, &default_curve_edges())?;
    Ok(EvalReport {
        rows,
        mean_before_mm,
        mean_after_mm,
        curve,
    })
}
