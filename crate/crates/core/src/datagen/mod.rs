//! Procedural tube bodies with factorised identity and pose.
//!
//! Every body is nine closed capsules (torso, upper and lower limbs) on one
//! shared template connectivity. Identity scales the capsules; pose rotates
//! them about shoulder, elbow, hip and knee joints.

mod corpus;

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, SegmentationMap, Topology, Vec3};

pub use corpus::{generate_corpus, held_out_triplets, Corpus, CorpusConfig, EvalEntry, Split};

pub const SEGMENT_NAMES: [&str; 9] = [
    "torso",
    "left_upper_arm",
    "left_forearm",
    "right_upper_arm",
    "right_forearm",
    "left_thigh",
    "left_shin",
    "right_thigh",
    "right_shin",
];

const PARENT: [Option<usize>; 9] = [
    None,
    Some(0),
    Some(1),
    Some(0),
    Some(3),
    Some(0),
    Some(5),
    Some(0),
    Some(7),
];

/// Which pose angle drives each segment's joint.
const JOINT_OF: [Option<usize>; 9] = [
    None,
    Some(0),
    Some(2),
    Some(1),
    Some(3),
    Some(4),
    Some(6),
    Some(5),
    Some(7),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limb {
    pub radius: f64,
    pub length: f64,
}

/// Body proportions before scaling to `height` (metres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub torso: Limb,
    pub left_arm: Limb,
    pub right_arm: Limb,
    pub left_leg: Limb,
    pub right_leg: Limb,
    /// Relative radius change from the bottom to the top of the torso.
    pub torso_taper: f64,
    pub height: f64,
}

const TORSO_RADIUS: (f64, f64) = (0.10, 0.22);
const TORSO_LENGTH: (f64, f64) = (0.45, 0.75);
const ARM_RADIUS: (f64, f64) = (0.03, 0.07);
const ARM_LENGTH: (f64, f64) = (0.45, 0.75);
const LEG_RADIUS: (f64, f64) = (0.045, 0.10);
const LEG_LENGTH: (f64, f64) = (0.65, 1.0);
const TAPER: (f64, f64) = (-0.3, 0.5);
const HEIGHT: (f64, f64) = (1.4, 2.0);

fn within(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

impl IdentityParams {
    pub fn validate(&self) -> Result<()> {
        within("torso.radius", self.torso.radius, TORSO_RADIUS)?;
        within("torso.length", self.torso.length, TORSO_LENGTH)?;
        for (n, l) in [("left_arm", self.left_arm), ("right_arm", self.right_arm)] {
            within(&format!("{n}.radius"), l.radius, ARM_RADIUS)?;
            within(&format!("{n}.length"), l.length, ARM_LENGTH)?;
        }
        for (n, l) in [("left_leg", self.left_leg), ("right_leg", self.right_leg)] {
            within(&format!("{n}.radius"), l.radius, LEG_RADIUS)?;
            within(&format!("{n}.length"), l.length, LEG_LENGTH)?;
        }
        within("torso_taper", self.torso_taper, TAPER)?;
        within("height", self.height, HEIGHT)
    }

    /// Draws symmetric proportions with a slight left/right jitter.
    pub fn sample(rng: &mut impl Rng) -> Self {
        fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
            let pad = 0.1 * (hi - lo);
            rng.gen_range(lo + pad..hi - pad)
        }
        fn jitter(rng: &mut impl Rng, l: Limb) -> Limb {
            Limb {
                radius: l.radius * rng.gen_range(0.97..1.03),
                length: l.length * rng.gen_range(0.98..1.02),
            }
        }
        let torso = Limb {
            radius: draw(rng, TORSO_RADIUS),
            length: draw(rng, TORSO_LENGTH),
        };
        let arm = Limb {
            radius: draw(rng, ARM_RADIUS),
            length: draw(rng, ARM_LENGTH),
        };
        let leg = Limb {
            radius: draw(rng, LEG_RADIUS),
            length: draw(rng, LEG_LENGTH),
        };
        Self {
            torso,
            left_arm: jitter(rng, arm),
            right_arm: jitter(rng, arm),
            left_leg: jitter(rng, leg),
            right_leg: jitter(rng, leg),
            torso_taper: draw(rng, TAPER),
            height: draw(rng, HEIGHT),
        }
    }
}

/// Joint angles in radians: shoulders (abduction), elbows, hips and knees
/// (flexion), left before right.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseParams {
    pub angles: [f64; 8],
}

impl PoseParams {
    pub fn rest() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.angles.iter().enumerate() {
            if !(a.is_finite() && a.abs() <= FRAC_PI_2) {
                return Err(Error::Invalid(format!("joint angle {i} = {a} exceeds the ±π/2 limit")));
            }
        }
        Ok(())
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        let shoulder = (0.0, 1.3);
        let elbow = (0.0, 1.4);
        let hip = (-0.7, 0.9);
        let knee = (0.0, 1.3);
        let ranges = [shoulder, shoulder, elbow, elbow, hip, hip, knee, knee];
        let mut angles = [0.0; 8];
        for (a, (lo, hi)) in angles.iter_mut().zip(ranges) {
            *a = rng.gen_range(lo..hi);
        }
        Self { angles }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Resolution {
    /// Vertices around each ring.
    pub around: usize,
    /// Rings per capsule, poles excluded.
    pub rings: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { around: 12, rings: 11 }
    }
}

impl Resolution {
    pub fn vertices_per_segment(&self) -> usize {
        self.around * self.rings + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Skinning {
    /// Every vertex follows its own segment.
    #[default]
    Rigid,
    /// Vertices near a joint blend parent and child transforms.
    Smooth,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    segment: usize,
    /// Axial position in `[0, 1]` from the segment's joint end.
    u: f64,
    phi: f64,
}

/// Shared connectivity, segmentation and per-vertex capsule coordinates.
#[derive(Debug, Clone)]
pub struct Template {
    topology: Arc<Topology>,
    segmentation: SegmentationMap,
    resolution: Resolution,
    slots: Vec<Slot>,
}

pub fn make_template(resolution: Resolution) -> Result<Template> {
    let Resolution { around, rings } = resolution;
    if around < 3 || rings < 1 {
        return Err(Error::Invalid(format!(
            "template resolution needs around >= 3 and rings >= 1, got {around} and {rings}"
        )));
    }
    let per = resolution.vertices_per_segment();
    let mut slots = Vec::with_capacity(per * 9);
    let mut faces = Vec::new();
    for segment in 0..9 {
        let base = segment * per;
        slots.push(Slot {
            segment,
            u: 0.0,
            phi: 0.0,
        });
        for k in 0..rings {
            let u = (k + 1) as f64 / (rings + 1) as f64;
            for j in 0..around {
                slots.push(Slot {
                    segment,
                    u,
                    phi: 2.0 * PI * j as f64 / around as f64,
                });
            }
        }
        slots.push(Slot {
            segment,
            u: 1.0,
            phi: 0.0,
        });
        let ring = |k: usize, j: usize| base + 1 + k * around + j % around;
        let top = base + per - 1;
        for j in 0..around {
            faces.push([base, ring(0, j + 1), ring(0, j)]);
            faces.push([top, ring(rings - 1, j), ring(rings - 1, j + 1)]);
            for k in 0..rings - 1 {
                faces.push([ring(k, j), ring(k, j + 1), ring(k + 1, j + 1)]);
                faces.push([ring(k, j), ring(k + 1, j + 1), ring(k + 1, j)]);
            }
        }
    }
    let topology = Arc::new(Topology::new(slots.len(), faces)?);
    let segmentation = SegmentationMap::new(slots.iter().map(|s| s.segment).collect())?;
    Ok(Template {
        topology,
        segmentation,
        resolution,
        slots,
    })
}

/// Rest-pose capsule of one segment: joint end, unit axis, length, radii at
/// both ends.
#[derive(Debug, Clone, Copy)]
struct Capsule {
    start: Vec3,
    axis: Vec3,
    length: f64,
    r0: f64,
    r1: f64,
}

fn capsules(id: &IdentityParams) -> [Capsule; 9] {
    let down = -Vec3::z();
    let t = id.torso;
    let r_bottom = t.radius * (1.0 - 0.5 * id.torso_taper);
    let r_top = t.radius * (1.0 + 0.5 * id.torso_taper);
    let leg_len = id.left_leg.length.max(id.right_leg.length);
    let torso = Capsule {
        start: Vec3::new(0.0, 0.0, leg_len),
        axis: Vec3::z(),
        length: t.length,
        r0: r_bottom,
        r1: r_top,
    };
    let neck = leg_len + t.length;
    let arm = |side: f64, l: Limb| {
        let shoulder = Vec3::new(side * (r_top + l.radius + 0.01), 0.0, neck - 1.5 * l.radius);
        let half = 0.5 * l.length;
        [
            Capsule {
                start: shoulder,
                axis: down,
                length: half,
                r0: l.radius,
                r1: l.radius * 0.9,
            },
            Capsule {
                start: shoulder + down * half,
                axis: down,
                length: half,
                r0: l.radius * 0.9,
                r1: l.radius * 0.7,
            },
        ]
    };
    let leg = |side: f64, l: Limb| {
        let hip = Vec3::new(side * (0.45 * r_bottom + 0.5 * l.radius), 0.0, leg_len);
        let half = 0.5 * l.length;
        [
            Capsule {
                start: hip,
                axis: down,
                length: half,
                r0: l.radius,
                r1: l.radius * 0.85,
            },
            Capsule {
                start: hip + down * half,
                axis: down,
                length: half,
                r0: l.radius * 0.85,
                r1: l.radius * 0.65,
            },
        ]
    };
    let [lu, lf] = arm(1.0, id.left_arm);
    let [ru, rf] = arm(-1.0, id.right_arm);
    let [lt, ls] = leg(1.0, id.left_leg);
    let [rt, rs] = leg(-1.0, id.right_leg);
    [torso, lu, lf, ru, rf, lt, ls, rt, rs]
}

/// Rotation applied at each segment's joint for a given angle.
fn joint_rotation(segment: usize, angle: f64) -> Matrix3<f64> {
    let r = match segment {
        1 => Rotation3::from_axis_angle(&Vec3::y_axis(), -angle),
        3 => Rotation3::from_axis_angle(&Vec3::y_axis(), angle),
        2 | 4 | 5 | 7 => Rotation3::from_axis_angle(&Vec3::x_axis(), angle),
        6 | 8 => Rotation3::from_axis_angle(&Vec3::x_axis(), -angle),
        _ => Rotation3::identity(),
    };
    r.into_inner()
}

/// World transforms `p ↦ R p + t` of every segment.
fn segment_transforms(caps: &[Capsule; 9], pose: &PoseParams) -> [(Matrix3<f64>, Vec3); 9] {
    let mut out = [(Matrix3::identity(), Vec3::zeros()); 9];
    for s in 0..9 {
        if let (Some(parent), Some(joint)) = (PARENT[s], JOINT_OF[s]) {
            let (pr, pt) = out[parent];
            let local = joint_rotation(s, pose.angles[joint]);
            let c = caps[s].start;
            // parent ∘ (rotate about the rest joint)
            out[s] = (pr * local, pr * (c - local * c) + pt);
        }
    }
    out
}

const BLEND_BAND: f64 = 0.25;

impl Template {
    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn segmentation(&self) -> &SegmentationMap {
        &self.segmentation
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn vertex_count(&self) -> usize {
        self.slots.len()
    }

    /// Sparse skinning weights `(segment, weight)` per vertex.
    pub fn skinning_weights(&self, skinning: Skinning) -> Vec<Vec<(usize, f64)>> {
        self.slots
            .iter()
            .map(|s| match (skinning, PARENT[s.segment]) {
                (Skinning::Smooth, Some(parent)) if s.u < BLEND_BAND => {
                    let x = s.u / BLEND_BAND;
                    let w = 0.5 + 0.5 * x * x * (3.0 - 2.0 * x);
                    vec![(s.segment, w), (parent, 1.0 - w)]
                }
                _ => vec![(s.segment, 1.0)],
            })
            .collect()
    }

    fn rest_positions(&self, caps: &[Capsule; 9], scale: f64) -> Vec<Vec3> {
        self.slots
            .iter()
            .map(|s| {
                let c = caps[s.segment];
                let e1 = Vec3::x();
                let e2 = c.axis.cross(&e1);
                let profile = (PI * s.u).sin().powf(0.4);
                let r = (c.r0 + (c.r1 - c.r0) * s.u) * profile;
                (c.start + c.axis * (c.length * s.u) + (e1 * s.phi.cos() + e2 * s.phi.sin()) * r) * scale
            })
            .collect()
    }

    /// Builds the body for `identity` and poses it with linear blend skinning.
    pub fn synthesize(&self, identity: &IdentityParams, pose: &PoseParams, skinning: Skinning) -> Result<Mesh> {
        identity.validate()?;
        pose.validate()?;
        let caps = capsules(identity);
        let natural = caps[0].start.z + caps[0].length;
        let scale = identity.height / natural;
        let mut scaled = caps;
        for c in &mut scaled {
            c.start *= scale;
        }
        let transforms = segment_transforms(&scaled, pose);
        let rest = self.rest_positions(&caps, scale);
        let weights = self.skinning_weights(skinning);
        let posed = rest
            .iter()
            .zip(&weights)
            .map(|(p, w)| {
                w.iter()
                    .map(|&(s, wt)| {
                        let (r, t) = transforms[s];
                        (r * p + t) * wt
                    })
                    .sum()
            })
            .collect();
        Mesh::new(Arc::clone(&self.topology), posed)
    }
}
