use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use idtransfer::container::{Container, Section};
use idtransfer::datagen::{generate_corpus, EvalEntry};
use idtransfer::geomfeat::{build_pair_set, cumulative_error_curve, procrustes_align, procrustes_error, PairSet};
use idtransfer::inference::{
    default_curve_edges, finetune, infer, infer_full_resolution, interpolate_identity, report_from_rows,
    upsample_to_finest, EvalRow,
};
use idtransfer::mesh::{
    load_mesh, load_segmentation, save_manifest, write_obj_commented, write_segmentation_commented,
};
use idtransfer::multires::{build_hierarchy, downsample, downsample_segmentation, Hierarchy};
use idtransfer::objectives::{train_from, Checkpoint, SupervisionMode, TrainData, TrainState, Triplet};
use idtransfer::{Mesh, SegmentationMap};

use crate::store::{io_error, load_corpus_dir, require, write_file, write_stamp, write_stamped_text};
use crate::{Cli, CliError, Command, RunConfig, TransferArgs};

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    threads: usize,
    quiet: bool,
}

impl Ctx {
    fn say(&self, args: std::fmt::Arguments<'_>) {
        if !self.quiet {
            println!("{args}");
        }
    }

    fn comment(&self) -> String {
        format!("config_hash {}", self.hash)
    }

    fn corpus_dir(&self) -> PathBuf {
        self.cfg.paths.corpus.clone().unwrap_or_else(|| self.out.join("corpus"))
    }

    fn aligned_dir(&self) -> PathBuf {
        self.out.join("aligned")
    }

    fn hierarchy_path(&self) -> PathBuf {
        self.out.join("hierarchy.bin")
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.cfg
            .paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.bin"))
    }

    fn level(&self) -> usize {
        self.cfg.train.arch.input_level
    }

    fn write_mesh(&self, path: &Path, mesh: &Mesh) -> Result<(), CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        Ok(write_obj_commented(path, mesh, Some(&self.comment()))?)
    }

    fn load_hierarchy(&self) -> Result<Hierarchy, CliError> {
        let path = require(&self.hierarchy_path(), "hierarchy (run preprocess first)")?;
        Ok(Hierarchy::load(path)?)
    }

    fn load_model(&self, h: &Hierarchy) -> Result<Checkpoint, CliError> {
        let path = require(&self.checkpoint_path(), "checkpoint (run train first)")?;
        let ck = Checkpoint::load(path)?;
        ck.params.arch.validate(h)?;
        if ck.params.spiral_length != h.spiral_length() {
            return Err(CliError::Runtime(
                "checkpoint was trained on a different hierarchy".into(),
            ));
        }
        Ok(ck)
    }

    /// Segmentation of the model's working level.
    fn working_segmentation(&self, h: &Hierarchy, level: usize) -> Result<SegmentationMap, CliError> {
        let candidates = [self.aligned_dir(), self.corpus_dir()].map(|d| d.join("segmentation.txt"));
        let path = candidates
            .iter()
            .find(|p| p.exists())
            .ok_or_else(|| CliError::Config("segmentation.txt not found next to the corpus".into()))?;
        let seg = load_segmentation(path, h.level(0)?)?;
        Ok(downsample_segmentation(&seg, h, level)?)
    }

    fn pairs(&self, h: &Hierarchy, level: usize) -> Result<PairSet, CliError> {
        let seg = self.working_segmentation(h, level)?;
        Ok(build_pair_set(&seg, self.cfg.train.pair_cap, self.cfg.seed))
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if g.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.apply_seed(seed);
    }
    cfg.validate()?;
    let ctx = Ctx {
        hash: cfg.hash(),
        cfg,
        out: g.out.clone(),
        threads: g.threads,
        quiet: g.quiet,
    };
    match &cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Preprocess => preprocess(&ctx),
        Command::Train => train(&ctx),
        Command::Infer(args) => transfer(&ctx, args, None),
        Command::Finetune {
            transfer: args,
            iterations,
        } => transfer(&ctx, args, Some(iterations.unwrap_or(ctx.cfg.finetune.iterations))),
        Command::Interpolate {
            source,
            target_a,
            target_b,
            steps,
        } => interpolate(&ctx, source, target_a, target_b, *steps),
        Command::Eval { no_finetune } => eval(&ctx, !no_finetune),
    }
}

fn gen_data(ctx: &Ctx) -> Result<(), CliError> {
    let corpus = generate_corpus(&ctx.cfg.corpus)?;
    let dir = ctx.out.join("corpus");
    corpus.write(&dir, ctx.cfg.heldout_count, Some(&ctx.comment()))?;
    write_stamp(&dir, &ctx.cfg)?;
    ctx.say(format_args!(
        "wrote {} meshes to {}",
        corpus.meshes.len(),
        dir.display()
    ));
    Ok(())
}

fn preprocess(ctx: &Ctx) -> Result<(), CliError> {
    let src = require(&ctx.corpus_dir(), "corpus directory")?;
    let corpus = load_corpus_dir(&src)?;
    let r = ctx.cfg.preprocess.reference;
    let reference = corpus.meshes.get(r).ok_or_else(|| {
        CliError::Config(format!(
            "preprocess.reference = {r}, but the corpus holds {} meshes",
            corpus.meshes.len()
        ))
    })?;
    let h = build_hierarchy(reference, &ctx.cfg.train.hierarchy_sizes)?;
    let mut container: Container = h.to_container();
    container.push("config_hash", Section::Bytes(ctx.hash.clone().into_bytes()));
    write_file(&ctx.hierarchy_path(), &container.to_bytes())?;

    let dst = ctx.aligned_dir();
    for (e, m) in corpus.entries.iter().zip(&corpus.meshes) {
        ctx.write_mesh(&dst.join(&e.file), &procrustes_align(m, reference)?.aligned)?;
    }
    save_manifest(dst.join("manifest.json"), &corpus.entries)?;
    write_segmentation_commented(dst.join("segmentation.txt"), &corpus.segmentation, Some(&ctx.comment()))?;
    let heldout = src.join("heldout.json");
    if heldout.exists() {
        let text = fs::read(&heldout).map_err(|e| io_error(&heldout, e))?;
        write_file(&dst.join("heldout.json"), &text)?;
    }
    write_stamp(&dst, &ctx.cfg)?;
    ctx.say(format_args!(
        "hierarchy levels {:?}; aligned {} meshes",
        h.level_sizes(),
        corpus.meshes.len()
    ));
    Ok(())
}

fn train(ctx: &Ctx) -> Result<(), CliError> {
    let h = ctx.load_hierarchy()?;
    let corpus = load_corpus_dir(&require(&ctx.aligned_dir(), "aligned corpus (run preprocess first)")?)?;
    let level = ctx.level();
    let meshes = corpus
        .entries
        .iter()
        .zip(&corpus.meshes)
        .filter(|(e, _)| e.split.as_deref() != Some("test"))
        .map(|(_, m)| downsample(m, &h, level))
        .collect::<idtransfer::Result<Vec<_>>>()?;
    let segmentation = downsample_segmentation(&corpus.segmentation, &h, level)?;
    let data = TrainData {
        meshes: &meshes,
        segmentation: &segmentation,
        hierarchy: &h,
    };
    let cfg = &ctx.cfg.train;
    let checkpoint = |state: &TrainState| Checkpoint {
        params: state.params.clone(),
        adam: Some(state.adam.clone()),
        epoch: state.epoch,
        config: ctx.cfg.canonical(),
        config_hash: ctx.hash.clone(),
    };
    let mut lines = Vec::new();
    let snapshots = ctx.out.join("checkpoints");
    let outcome = train_from(cfg, data, TrainState::init(cfg, &h)?, |state, entry| {
        ctx.say(format_args!("{entry}"));
        lines.push(entry.to_string());
        if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 && state.epoch < cfg.epochs {
            fs::create_dir_all(&snapshots)
                .map_err(|e| idtransfer::Error::Invalid(format!("{}: {e}", snapshots.display())))?;
            checkpoint(state).save(snapshots.join(format!("epoch_{:04}.bin", state.epoch)))?;
        }
        Ok(())
    })?;
    let mut log = lines.join("\n");
    if !log.is_empty() {
        log.push('\n');
    }
    write_stamped_text(&ctx.out.join("train_log.txt"), &ctx.hash, &log)?;
    let path = ctx.checkpoint_path();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    checkpoint(&outcome.state).save(&path)?;
    let r = outcome.initial_report;
    ctx.say(format_args!(
        "triplets: {} full, {} weak, {} fallbacks",
        r.full, r.weak, r.fallbacks
    ));
    match outcome.aborted {
        Some(msg) => Err(CliError::Runtime(format!(
            "training stopped ({msg}); last good parameters saved"
        ))),
        None => Ok(()),
    }
}

/// A mesh read from disk, placed on the working level or the finest level.
struct Placed {
    mesh: Mesh,
    finest: bool,
}

fn place(path: &Path, h: &Hierarchy, level: usize) -> Result<Placed, CliError> {
    let raw = load_mesh(require(path, "input mesh")?, None)?;
    for (k, finest) in [(level, false), (0, true)] {
        let topo = h.level(k)?;
        if raw.vertex_count() == topo.vertex_count() && raw.topology().same_faces(topo) {
            let mesh = Mesh::new(Arc::clone(topo), raw.vertices)?.with_labels(raw.identity_label, raw.pose_label);
            return Ok(Placed {
                mesh,
                finest: finest && level > 0,
            });
        }
    }
    Err(CliError::Runtime(format!(
        "{} matches neither the working level nor the finest level of the hierarchy",
        path.display()
    )))
}

fn transfer(ctx: &Ctx, args: &TransferArgs, iterations: Option<usize>) -> Result<(), CliError> {
    let h = ctx.load_hierarchy()?;
    let ck = ctx.load_model(&h)?;
    let level = ck.params.arch.input_level;
    let source = place(&args.source, &h, level)?;
    let target = place(&args.target, &h, level)?;
    if source.finest != target.finest {
        return Err(CliError::Runtime("source and target must share one resolution".into()));
    }
    let result = match iterations {
        None if source.finest => infer_full_resolution(&ck.params, &h, &source.mesh, &target.mesh)?,
        None => infer(&ck.params, &h, &source.mesh, &target.mesh)?,
        Some(n) => {
            let mut ft = ctx.cfg.finetune.clone();
            ft.iterations = n;
            let (s, t) = if source.finest {
                (
                    downsample(&source.mesh, &h, level)?,
                    downsample(&target.mesh, &h, level)?,
                )
            } else {
                (source.mesh.clone(), target.mesh.clone())
            };
            let r = finetune(&ck.params, &h, &s, &t, &ctx.pairs(&h, level)?, &ft)?;
            if let Some(w) = &r.warning {
                eprintln!("warning: {w}");
            }
            if source.finest {
                upsample_to_finest(&r.mesh, &h, &target.mesh, level)?
            } else {
                r.mesh
            }
        }
    };
    let default = if iterations.is_some() {
        "finetune.obj"
    } else {
        "infer.obj"
    };
    let path = args.output.clone().unwrap_or_else(|| ctx.out.join(default));
    ctx.write_mesh(&path, &result)?;
    ctx.say(format_args!("wrote {}", path.display()));
    Ok(())
}

fn interpolate(ctx: &Ctx, source: &Path, a: &Path, b: &Path, steps: usize) -> Result<(), CliError> {
    if steps < 2 {
        return Err(CliError::Config("--steps must be at least 2".into()));
    }
    let h = ctx.load_hierarchy()?;
    let ck = ctx.load_model(&h)?;
    let level = ck.params.arch.input_level;
    let working = |p: &Path| -> Result<Mesh, CliError> {
        let placed = place(p, &h, level)?;
        Ok(if placed.finest {
            downsample(&placed.mesh, &h, level)?
        } else {
            placed.mesh
        })
    };
    let (s, ta, tb) = (working(source)?, working(a)?, working(b)?);
    let ts: Vec<f64> = (0..steps).map(|i| i as f64 / (steps - 1) as f64).collect();
    let meshes = interpolate_identity(&ck.params, &h, &ta, &tb, &s, &ts)?;
    let dir = ctx.out.join("interpolate");
    for (i, m) in meshes.iter().enumerate() {
        ctx.write_mesh(&dir.join(format!("step_{i:03}.obj")), m)?;
    }
    ctx.say(format_args!("wrote {steps} meshes to {}", dir.display()));
    Ok(())
}

struct Scored {
    row: EvalRow,
    /// Error of the final prediction after upsampling to the finest level.
    finest_mm: Option<f64>,
}

fn eval(ctx: &Ctx, with_finetune: bool) -> Result<(), CliError> {
    let h = ctx.load_hierarchy()?;
    let ck = ctx.load_model(&h)?;
    let level = ck.params.arch.input_level;
    let dir = require(&ctx.aligned_dir(), "aligned corpus (run preprocess first)")?;
    let corpus = load_corpus_dir(&dir)?;
    let list = require(&dir.join("heldout.json"), "held-out list")?;
    let text = fs::read_to_string(&list).map_err(|e| io_error(&list, e))?;
    let entries: Vec<EvalEntry> =
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", list.display())))?;
    let lookup = |p: &Path| {
        corpus
            .index_of(p)
            .ok_or_else(|| CliError::Runtime(format!("{} is not in the manifest", p.display())))
    };
    let mut triplets = Vec::with_capacity(entries.len());
    for e in &entries {
        let truth = e
            .truth
            .as_deref()
            .ok_or_else(|| CliError::Runtime("held-out entry without ground truth".into()))?;
        let gt = lookup(truth)?;
        triplets.push(Triplet {
            source: lookup(&e.source)?,
            identity_target: lookup(&e.target)?,
            same_identity_ref: gt,
            ground_truth: Some(gt),
            mode: SupervisionMode::Full,
        });
    }
    if triplets.is_empty() {
        return Err(CliError::Runtime("held-out list is empty".into()));
    }
    let working = corpus
        .meshes
        .iter()
        .map(|m| downsample(m, &h, level))
        .collect::<idtransfer::Result<Vec<_>>>()?;
    let pairs = ctx.pairs(&h, level)?;

    let score = |k: usize, t: &Triplet| -> Result<Scored, CliError> {
        let gt = t.ground_truth.expect("set above");
        let (s, tg, truth) = (&working[t.source], &working[t.identity_target], &working[gt]);
        let (row, last) = if with_finetune {
            let r = finetune(&ck.params, &h, s, tg, &pairs, &ctx.cfg.finetune)?;
            let row = EvalRow {
                triplet: k,
                before_mm: procrustes_error(&r.init, truth)?,
                after_mm: Some(procrustes_error(&r.mesh, truth)?),
            };
            (row, r.mesh)
        } else {
            let pred = infer(&ck.params, &h, s, tg)?;
            let row = EvalRow {
                triplet: k,
                before_mm: procrustes_error(&pred, truth)?,
                after_mm: None,
            };
            (row, pred)
        };
        let finest_mm = if level > 0 {
            let up = upsample_to_finest(&last, &h, &corpus.meshes[t.identity_target], level)?;
            Some(procrustes_error(&up, &corpus.meshes[gt])?)
        } else {
            None
        };
        Ok(Scored { row, finest_mm })
    };

    let workers = ctx.threads.min(triplets.len());
    let chunk = triplets.len().div_ceil(workers);
    let scored: Vec<Scored> = std::thread::scope(|scope| {
        let handles: Vec<_> = triplets
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let score = &score;
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, t)| score(c * chunk + i, t))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect::<Result<Vec<Vec<_>>, _>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;

    let finest: Option<Vec<f64>> = scored.iter().map(|s| s.finest_mm).collect();
    let report = report_from_rows(scored.into_iter().map(|s| s.row).collect())?;
    let out = ctx.out.join("eval");
    write_stamped_text(&out.join("report.txt"), &ctx.hash, &report.table())?;
    write_stamped_text(&out.join("curve.txt"), &ctx.hash, &report.curve.to_text())?;
    if let Some(errs) = finest {
        let mut table = String::from("triplet error_mm_finest\n");
        for (k, e) in errs.iter().enumerate() {
            table.push_str(&format!("{k} {e:.6}\n"));
        }
        table.push_str(&format!("mean {:.6}\n", errs.iter().sum::<f64>() / errs.len() as f64));
        write_stamped_text(&out.join("report_finest.txt"), &ctx.hash, &table)?;
        let curve = cumulative_error_curve(&errs, &default_curve_edges())?;
        write_stamped_text(&out.join("curve_finest.txt"), &ctx.hash, &curve.to_text())?;
    }
    match report.mean_after_mm {
        Some(after) => ctx.say(format_args!(
            "{} transfers: mean {:.3} mm, {:.3} mm after fine-tuning",
            report.rows.len(),
            report.mean_before_mm,
            after
        )),
        None => ctx.say(format_args!(
            "{} transfers: mean {:.3} mm",
            report.rows.len(),
            report.mean_before_mm
        )),
    }
    Ok(())
}
