use std::collections::{BTreeMap, HashMap};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SupervisionMode {
    Full,
    Weak,
}

/// Indices into the corpus. `source` is `M^{id1}_{p1}`, `identity_target`
/// is `M^{id2}_{p2}` and `same_identity_ref` shares the target's identity;
/// in full mode it is `M^{id2}_{p1}` and doubles as ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub source: usize,
    pub identity_target: usize,
    pub same_identity_ref: usize,
    pub ground_truth: Option<usize>,
    pub mode: SupervisionMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplingReport {
    pub full: usize,
    pub weak: usize,
    /// Labelled anchors that had to fall back to weak supervision.
    pub fallbacks: usize,
}

impl SamplingReport {
    pub fn full_fraction(&self) -> f64 {
        let n = self.full + self.weak;
        if n == 0 {
            0.0
        } else {
            self.full as f64 / n as f64
        }
    }

    fn count(&mut self, t: &Triplet) {
        match t.mode {
            SupervisionMode::Full => self.full += 1,
            SupervisionMode::Weak => self.weak += 1,
        }
    }
}

/// Label lookups over a corpus.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    identity: Vec<u32>,
    pose: Vec<Option<u32>>,
    by_identity: BTreeMap<u32, Vec<usize>>,
    labelled: HashMap<(u32, u32), usize>,
    /// Pose-labelled meshes, grouped by identity.
    labelled_by_identity: BTreeMap<u32, Vec<usize>>,
}

impl CorpusIndex {
    pub fn new(meshes: &[Mesh]) -> Result<Self> {
        let mut identity = Vec::with_capacity(meshes.len());
        let mut by_identity: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut labelled = HashMap::new();
        let mut labelled_by_identity: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, m) in meshes.iter().enumerate() {
            let id = m.identity_label.ok_or_else(|| Error::Corpus {
                index: i,
                reason: "missing identity label".into(),
            })?;
            identity.push(id);
            by_identity.entry(id).or_default().push(i);
            if let Some(p) = m.pose_label {
                if labelled.insert((id, p), i).is_some() {
                    return Err(Error::Corpus {
                        index: i,
                        reason: format!("duplicate (identity {id}, pose {p})"),
                    });
                }
                labelled_by_identity.entry(id).or_default().push(i);
            }
        }
        if by_identity.len() < 2 {
            return Err(Error::Invalid("triplets need at least two identities".into()));
        }
        if let Some((id, _)) = by_identity.iter().find(|(_, v)| v.len() < 2) {
            return Err(Error::Invalid(format!("identity {id} has fewer than two meshes")));
        }
        Ok(Self {
            identity,
            pose: meshes.iter().map(|m| m.pose_label).collect(),
            by_identity,
            labelled,
            labelled_by_identity,
        })
    }

    pub fn len(&self) -> usize {
        self.identity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identity.is_empty()
    }

    fn full_triplet(&self, anchor: usize, rng: &mut ChaCha8Rng) -> Option<Triplet> {
        let id1 = self.identity[anchor];
        let p1 = self.pose[anchor]?;
        let candidates: Vec<usize> = self
            .labelled_by_identity
            .iter()
            .filter(|(&id, _)| id != id1)
            .flat_map(|(_, v)| v.iter().copied())
            .filter(|&m| self.pose[m] != Some(p1) && self.labelled.contains_key(&(self.identity[m], p1)))
            .collect();
        let &m2 = candidates.choose(rng)?;
        let m3 = self.labelled[&(self.identity[m2], p1)];
        Some(Triplet {
            source: anchor,
            identity_target: m2,
            same_identity_ref: m3,
            ground_truth: Some(m3),
            mode: SupervisionMode::Full,
        })
    }

    fn weak_triplet(&self, anchor: usize, rng: &mut ChaCha8Rng) -> Triplet {
        let id1 = self.identity[anchor];
        let others: Vec<u32> = self.by_identity.keys().copied().filter(|&id| id != id1).collect();
        let id2 = others[rng.gen_range(0..others.len())];
        let pool = &self.by_identity[&id2];
        let picks = index::sample(rng, pool.len(), 2);
        Triplet {
            source: anchor,
            identity_target: pool[picks.index(0)],
            same_identity_ref: pool[picks.index(1)],
            ground_truth: None,
            mode: SupervisionMode::Weak,
        }
    }

    fn triplet_for(&self, anchor: usize, rng: &mut ChaCha8Rng, report: &mut SamplingReport) -> Triplet {
        let t = match self.pose[anchor] {
            Some(_) => self.full_triplet(anchor, rng).unwrap_or_else(|| {
                report.fallbacks += 1;
                self.weak_triplet(anchor, rng)
            }),
            None => self.weak_triplet(anchor, rng),
        };
        report.count(&t);
        t
    }
}

/// One triplet per mesh, anchored at that mesh.
pub fn sample_triplets(meshes: &[Mesh], seed: u64) -> Result<(Vec<Triplet>, SamplingReport)> {
    let index = CorpusIndex::new(meshes)?;
    Ok(sample_with_index(&index, seed))
}

pub fn sample_with_index(index: &CorpusIndex, seed: u64) -> (Vec<Triplet>, SamplingReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SamplingReport::default();
    let triplets = (0..index.len())
        .map(|a| index.triplet_for(a, &mut rng, &mut report))
        .collect();
    (triplets, report)
}

pub const RESAMPLE_PERIOD: usize = 5;

/// Every fifth epoch (after the first), redraws a tenth of the triplets,
/// keeping their anchors. Returns the replaced positions.
pub fn resample_tick(triplets: &mut [Triplet], index: &CorpusIndex, epoch: usize, seed: u64) -> Vec<usize> {
    if epoch == 0 || !epoch.is_multiple_of(RESAMPLE_PERIOD) {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = triplets.len();
    let mut chosen = index::sample(&mut rng, n, n / 10).into_vec();
    chosen.sort_unstable();
    let mut report = SamplingReport::default();
    for &k in &chosen {
        triplets[k] = index.triplet_for(triplets[k].source, &mut rng, &mut report);
    }
    chosen
}

pub fn summarize(triplets: &[Triplet]) -> SamplingReport {
    let mut r = SamplingReport::default();
    for t in triplets {
        r.count(t);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::icosphere;

    fn corpus(ids: u32, poses: u32, labelled: impl Fn(u32, u32) -> bool) -> Vec<Mesh> {
        let base = icosphere(0);
        let mut out = Vec::new();
        for i in 0..ids {
            for p in 0..poses {
                let m = base.clone().with_labels(Some(i), labelled(i, p).then_some(p));
                out.push(m);
            }
        }
        out
    }

    #[test]
    fn exhaustive_labelled_corpus_is_all_full() {
        let meshes = corpus(2, 2, |_, _| true);
        let (t, report) = sample_triplets(&meshes, 1).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(report.full, 4);
        for tr in &t {
            let (s, m2, m3) = (
                &meshes[tr.source],
                &meshes[tr.identity_target],
                &meshes[tr.same_identity_ref],
            );
            assert_ne!(s.identity_label, m2.identity_label);
            assert_eq!(m3.identity_label, m2.identity_label);
            assert_eq!(m3.pose_label, s.pose_label);
            assert_eq!(tr.ground_truth, Some(tr.same_identity_ref));
        }
    }

    #[test]
    fn unlabelled_corpus_is_all_weak() {
        let meshes = corpus(3, 3, |_, _| false);
        let (t, report) = sample_triplets(&meshes, 1).unwrap();
        assert_eq!(report.weak, 9);
        for tr in &t {
            assert_eq!(tr.mode, SupervisionMode::Weak);
            assert_ne!(tr.identity_target, tr.same_identity_ref);
            assert_eq!(
                meshes[tr.identity_target].identity_label,
                meshes[tr.same_identity_ref].identity_label
            );
            assert_ne!(
                meshes[tr.identity_target].identity_label,
                meshes[tr.source].identity_label
            );
        }
    }

    #[test]
    fn missing_counterpart_falls_back_to_weak() {
        // only identity 0 is labelled, so no labelled partner exists
        let meshes = corpus(3, 2, |i, _| i == 0);
        let (_, report) = sample_triplets(&meshes, 4).unwrap();
        assert_eq!(report.full, 0);
        assert_eq!(report.fallbacks, 2);
    }

    #[test]
    fn sampling_is_deterministic() {
        let meshes = corpus(4, 3, |i, p| (i + p) % 2 == 0);
        assert_eq!(
            sample_triplets(&meshes, 9).unwrap(),
            sample_triplets(&meshes, 9).unwrap()
        );
    }

    #[test]
    fn resample_schedule() {
        let meshes = corpus(10, 10, |_, _| false);
        let index = CorpusIndex::new(&meshes).unwrap();
        let (t0, _) = sample_with_index(&index, 0);
        let mut t = t0.clone();
        assert!(resample_tick(&mut t, &index, 3, 0).is_empty());
        assert!(resample_tick(&mut t, &index, 0, 0).is_empty());
        assert_eq!(t, t0);
        let replaced = resample_tick(&mut t, &index, 5, 0);
        assert_eq!(replaced.len(), 10);
        for (k, (a, b)) in t.iter().zip(&t0).enumerate() {
            assert_eq!(a.source, b.source);
            if !replaced.contains(&k) {
                assert_eq!(a, b);
            }
        }
        let mut again = t0.clone();
        assert_eq!(resample_tick(&mut again, &index, 5, 0), replaced);
        assert_eq!(again, t);
    }

    #[test]
    fn rejects_single_identity() {
        let meshes = corpus(1, 3, |_, _| true);
        assert!(sample_triplets(&meshes, 0).is_err());
    }
}
