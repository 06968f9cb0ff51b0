use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_template, IdentityParams, PoseParams, Resolution, Skinning, Template};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::mesh::{save_manifest, write_obj_commented, write_segmentation_commented, ManifestEntry};
use crate::objectives::{SupervisionMode, Triplet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_ids: usize,
    pub n_poses: usize,
    /// Share of identities whose meshes keep their pose labels.
    pub labeled_fraction: f64,
    /// When set, only the first this-many poses of a labelled identity keep labels.
    pub labeled_poses: Option<usize>,
    /// The last this-many identities never appear in training.
    pub holdout_ids: usize,
    /// The last this-many poses never appear in training.
    pub holdout_poses: usize,
    pub seed: u64,
    pub resolution: Resolution,
    pub skinning: Skinning,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_ids: 10,
            n_poses: 12,
            labeled_fraction: 0.2,
            labeled_poses: Some(2),
            holdout_ids: 2,
            holdout_poses: 2,
            seed: 0,
            resolution: Resolution::default(),
            skinning: Skinning::Rigid,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ids < 2 || self.n_poses < 2 {
            return Err(Error::Invalid(format!(
                "n_ids and n_poses must be at least 2, got {} and {}",
                self.n_ids, self.n_poses
            )));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(Error::Invalid(format!(
                "labeled_fraction must lie in [0, 1], got {}",
                self.labeled_fraction
            )));
        }
        if self.holdout_ids >= self.n_ids || self.holdout_poses >= self.n_poses {
            return Err(Error::Invalid(
                "holdout_ids and holdout_poses must leave a training set".into(),
            ));
        }
        Ok(())
    }

    pub fn labeled_identity_count(&self) -> usize {
        (self.labeled_fraction * self.n_ids as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// The full identity × pose grid, identity-major.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub template: Template,
    pub identities: Vec<IdentityParams>,
    pub poses: Vec<PoseParams>,
    /// Meshes carrying the labels a learner may see.
    pub meshes: Vec<Mesh>,
    pub split: Vec<Split>,
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let template = make_template(config.resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let identities: Vec<IdentityParams> = (0..config.n_ids).map(|_| IdentityParams::sample(&mut rng)).collect();
    let poses: Vec<PoseParams> = (0..config.n_poses).map(|_| PoseParams::sample(&mut rng)).collect();
    let labeled_ids = config.labeled_identity_count();
    let labeled_poses = config.labeled_poses.unwrap_or(config.n_poses);
    let train_ids = config.n_ids - config.holdout_ids;
    let train_poses = config.n_poses - config.holdout_poses;
    let mut meshes = Vec::with_capacity(config.n_ids * config.n_poses);
    let mut split = Vec::with_capacity(meshes.capacity());
    for (i, id) in identities.iter().enumerate() {
        for (p, pose) in poses.iter().enumerate() {
            let labelled = i < labeled_ids && p < labeled_poses;
            let mesh = template
                .synthesize(id, pose, config.skinning)?
                .with_labels(Some(i as u32), labelled.then_some(p as u32));
            meshes.push(mesh);
            split.push(if i < train_ids && p < train_poses {
                Split::Train
            } else {
                Split::Test
            });
        }
    }
    Ok(Corpus {
        config: config.clone(),
        template,
        identities,
        poses,
        meshes,
        split,
    })
}

impl Corpus {
    pub fn index_of(&self, identity: usize, pose: usize) -> usize {
        identity * self.config.n_poses + pose
    }

    /// True `(identity, pose)` of a mesh, labelled or not.
    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.config.n_poses, index % self.config.n_poses)
    }

    pub fn training_indices(&self) -> Vec<usize> {
        (0..self.meshes.len())
            .filter(|&i| self.split[i] == Split::Train)
            .collect()
    }

    pub fn training_meshes(&self) -> Vec<Mesh> {
        self.training_indices()
            .into_iter()
            .map(|i| self.meshes[i].clone())
            .collect()
    }

    pub fn file_name(&self, index: usize) -> PathBuf {
        let (i, p) = self.cell(index);
        PathBuf::from(format!("meshes/id{i:03}_pose{p:03}.obj"))
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        (0..self.meshes.len())
            .map(|i| ManifestEntry {
                file: self.file_name(i),
                identity_label: self.meshes[i]
                    .identity_label
                    .expect("generated meshes carry identities"),
                pose_label: self.meshes[i].pose_label,
                split: Some(self.split[i].as_str().to_string()),
            })
            .collect()
    }

    /// Writes meshes, `segmentation.txt`, `manifest.json` and
    /// `heldout.json` (held-out transfers with ground truth). `comment`
    /// heads every mesh and the segmentation file.
    pub fn write(&self, dir: impl AsRef<Path>, heldout_count: usize, comment: Option<&str>) -> Result<()> {
        let dir = dir.as_ref();
        let meshes_dir = dir.join("meshes");
        fs::create_dir_all(&meshes_dir).map_err(|e| Error::io(&meshes_dir, e))?;
        for (i, m) in self.meshes.iter().enumerate() {
            write_obj_commented(dir.join(self.file_name(i)), m, comment)?;
        }
        write_segmentation_commented(dir.join("segmentation.txt"), self.template.segmentation(), comment)?;
        save_manifest(dir.join("manifest.json"), &self.manifest())?;
        let entries: Vec<EvalEntry> = held_out_triplets(self, heldout_count, self.config.seed)?
            .iter()
            .map(|t| EvalEntry {
                source: self.file_name(t.source),
                target: self.file_name(t.identity_target),
                truth: t.ground_truth.map(|g| self.file_name(g)),
            })
            .collect();
        let path = dir.join("heldout.json");
        let text = serde_json::to_string_pretty(&entries).expect("entries serialise");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// One transfer to evaluate; paths relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEntry {
    pub source: PathBuf,
    pub target: PathBuf,
    pub truth: Option<PathBuf>,
}

/// Transfers whose source pose and target identity are both held out:
/// source `(id1, p1)`, target `(id2, p2)`, truth `(id2, p1)`.
pub fn held_out_triplets(corpus: &Corpus, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let c = &corpus.config;
    let held_ids = c.n_ids - c.holdout_ids..c.n_ids;
    let held_poses = c.n_poses - c.holdout_poses..c.n_poses;
    let mut all = Vec::new();
    for p1 in held_poses {
        for id2 in held_ids.clone() {
            for id1 in (0..c.n_ids).filter(|&i| i != id2) {
                for p2 in (0..c.n_poses).filter(|&p| p != p1) {
                    all.push(Triplet {
                        source: corpus.index_of(id1, p1),
                        identity_target: corpus.index_of(id2, p2),
                        same_identity_ref: corpus.index_of(id2, p1),
                        ground_truth: Some(corpus.index_of(id2, p1)),
                        mode: SupervisionMode::Full,
                    });
                }
            }
        }
    }
    if count > all.len() {
        return Err(Error::Invalid(format!(
            "only {} held-out transfers exist, {count} requested",
            all.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, all.len(), count).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| all[i]).collect())
}
