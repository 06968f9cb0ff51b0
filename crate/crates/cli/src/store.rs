use std::fs;
use std::path::{Path, PathBuf};

use idtransfer::mesh::{load_manifest, load_mesh, load_segmentation, ManifestEntry};
use idtransfer::{Mesh, SegmentationMap};
use serde::{Deserialize, Serialize};

use crate::{CliError, RunConfig};

pub(crate) const STAMP: &str = "stamp.json";

/// Provenance written next to directory outputs whose formats have no
/// comment syntax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stamp {
    pub config_hash: String,
    pub config: String,
}

pub(crate) fn write_stamp(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let stamp = Stamp {
        config_hash: cfg.hash(),
        config: cfg.canonical(),
    };
    let text = serde_json::to_string_pretty(&stamp).expect("stamp serialises") + "\n";
    write_file(&dir.join(STAMP), text.as_bytes())
}

pub fn read_stamp(dir: &Path) -> Result<Stamp, CliError> {
    let path = dir.join(STAMP);
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// Text artifact headed by a `# config_hash` line.
pub(crate) fn write_stamped_text(path: &Path, hash: &str, body: &str) -> Result<(), CliError> {
    write_file(path, format!("# config_hash {hash}\n{body}").as_bytes())
}

pub(crate) fn require(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::Config(format!("{what} not found at {}", path.display())))
    }
}

/// A corpus directory: `manifest.json`, the meshes it lists and
/// `segmentation.txt`.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub entries: Vec<ManifestEntry>,
    /// Labelled from the manifest, sharing one topology.
    pub meshes: Vec<Mesh>,
    pub segmentation: SegmentationMap,
}

impl LoadedCorpus {
    pub fn index_of(&self, file: &Path) -> Option<usize> {
        self.entries.iter().position(|e| e.file == file)
    }
}

pub fn load_corpus_dir(dir: &Path) -> Result<LoadedCorpus, CliError> {
    let manifest = require(&dir.join("manifest.json"), "corpus manifest")?;
    let entries = load_manifest(manifest)?;
    if entries.is_empty() {
        return Err(CliError::Runtime(format!("{} lists no meshes", dir.display())));
    }
    let mut meshes = Vec::with_capacity(entries.len());
    for e in &entries {
        let topo = meshes.first().map(|m: &Mesh| m.topology().clone());
        let mesh = load_mesh(dir.join(&e.file), topo.as_ref())?;
        meshes.push(mesh.with_labels(Some(e.identity_label), e.pose_label));
    }
    let segmentation = load_segmentation(dir.join("segmentation.txt"), meshes[0].topology())?;
    Ok(LoadedCorpus {
        entries,
        meshes,
        segmentation,
    })
}
