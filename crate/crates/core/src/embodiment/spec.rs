use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{schema, EmbodimentError, Result};

const UNIT_TOL: f64 = 1e-9;

/// Body segment owning one latent subspace.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Segment {
    LA,
    RA,
    TK,
    LL,
    RL,
}

impl Segment {
    pub const ALL: [Segment; 5] = [Segment::LA, Segment::RA, Segment::TK, Segment::LL, Segment::RL];
    pub const ARMS: [Segment; 2] = [Segment::LA, Segment::RA];

    pub fn index(self) -> usize {
        match self {
            Segment::LA => 0,
            Segment::RA => 1,
            Segment::TK => 2,
            Segment::LL => 3,
            Segment::RL => 4,
        }
    }

    pub fn is_arm(self) -> bool {
        matches!(self, Segment::LA | Segment::RA)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::LA => "LA",
            Segment::RA => "RA",
            Segment::TK => "TK",
            Segment::LL => "LL",
            Segment::RL => "RL",
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "LA" => Ok(Segment::LA),
            "RA" => Ok(Segment::RA),
            "TK" => Ok(Segment::TK),
            "LL" => Ok(Segment::LL),
            "RL" => Ok(Segment::RL),
            other => Err(format!("unknown segment '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    /// One scalar angle about `axis`.
    #[serde(alias = "revolute-scalar")]
    Revolute,
    /// Free rotation given as a wxyz unit quaternion.
    #[serde(alias = "free-quaternion")]
    Quaternion,
    /// Rigid attachment, no degrees of freedom.
    Fixed,
}

impl JointKind {
    pub fn dof(self) -> usize {
        match self {
            JointKind::Revolute => 1,
            JointKind::Quaternion => 4,
            JointKind::Fixed => 0,
        }
    }
}

/// How an embodiment stores its joint values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Robots: one angle per joint.
    Scalar,
    /// Humans: one wxyz quaternion per joint.
    Quaternion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginDoc {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub quat: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn default_base() -> String {
    "base".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub name: String,
    pub parent_link: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_link: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<OriginDoc>,
    #[serde(default)]
    pub limits: Option<[f64; 2]>,
    pub kind: JointKind,
}

/// On-disk embodiment description (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbodimentDoc {
    pub name: String,
    #[serde(default = "default_base")]
    pub base_link: String,
    pub joints: Vec<JointDoc>,
    #[serde(default)]
    pub segments: BTreeMap<String, Segment>,
    #[serde(default)]
    pub ee_links: BTreeMap<Segment, String>,
    #[serde(default)]
    pub shoulders: BTreeMap<Segment, String>,
    /// Joints whose rotations are multiplied into one limb quaternion; lets
    /// robots with extra joints be compared against a two-bone human limb.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rotation_groups: BTreeMap<Segment, Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub parent_link: String,
    pub child_link: String,
    pub axis: Vector3<f64>,
    pub origin_translation: Vector3<f64>,
    pub origin_rotation: UnitQuaternion<f64>,
    pub limits: Option<(f64, f64)>,
    pub kind: JointKind,
}

/// A validated kinematic tree with segment annotations.
///
/// Joints are stored parent-before-child. Link `0` is the base link and link
/// `i + 1` is the child link of joint `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbodimentSpec {
    pub name: String,
    pub base_link: String,
    pub joints: Vec<JointSpec>,
    pub segment_map: BTreeMap<String, Segment>,
    pub segment_available: BTreeSet<Segment>,
    pub ee_links: BTreeMap<Segment, String>,
    pub shoulder_joints: BTreeMap<Segment, String>,
    pub arm_length: BTreeMap<Segment, f64>,
    pub pose_dim: usize,
    representation: Representation,
    links: Vec<String>,
    parent_link_index: Vec<usize>,
    dof_offset: Vec<Option<usize>>,
    rotation_groups: BTreeMap<Segment, Vec<Vec<usize>>>,
    arm_chains: BTreeMap<Segment, Vec<usize>>,
    segment_dofs: BTreeMap<Segment, Vec<usize>>,
}

/// Parses and validates an embodiment document.
pub fn parse_embodiment(text: &str) -> Result<EmbodimentSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: EmbodimentDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(if path.is_empty() { "$".into() } else { path }, e.inner().to_string())
    })?;
    EmbodimentSpec::from_doc(doc)
}

fn unit_quat_from_wxyz(q: [f64; 4], path: &str) -> Result<UnitQuaternion<f64>> {
    let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
    if (raw.norm() - 1.0).abs() > UNIT_TOL {
        return Err(schema(path, format!("quaternion norm {} is not 1", raw.norm())));
    }
    Ok(UnitQuaternion::new_normalize(raw))
}

impl EmbodimentSpec {
    pub fn from_doc(doc: EmbodimentDoc) -> Result<Self> {
        if doc.name.trim().is_empty() {
            return Err(schema("name", "empty embodiment name"));
        }
        if doc.joints.is_empty() {
            return Err(schema("joints", "at least one joint is required"));
        }

        let mut names = BTreeSet::new();
        let mut children: BTreeMap<String, usize> = BTreeMap::new();
        let mut specs = Vec::with_capacity(doc.joints.len());
        for (i, j) in doc.joints.iter().enumerate() {
            let path = format!("joints[{i}]");
            if j.name.trim().is_empty() {
                return Err(schema(format!("{path}.name"), "empty joint name"));
            }
            if !names.insert(j.name.clone()) {
                return Err(EmbodimentError::DuplicateJoint {
                    path: format!("{path}.name"),
                    name: j.name.clone(),
                });
            }
            let child = j.child_link.clone().unwrap_or_else(|| j.name.clone());
            if child == doc.base_link || children.insert(child.clone(), i).is_some() {
                return Err(schema(
                    format!("{path}.child_link"),
                    format!("link '{child}' already has a parent"),
                ));
            }
            let axis = Vector3::from(j.axis.unwrap_or([0.0, 0.0, 1.0]));
            if (axis.norm() - 1.0).abs() > UNIT_TOL {
                return Err(schema(format!("{path}.axis"), format!("axis norm {} is not 1", axis.norm())));
            }
            let origin = j.origin.clone().unwrap_or(OriginDoc {
                xyz: [0.0; 3],
                quat: identity_wxyz(),
            });
            let origin_rotation = unit_quat_from_wxyz(origin.quat, &format!("{path}.origin.quat"))?;
            let limits = match (j.kind, j.limits) {
                (JointKind::Revolute, Some([lo, hi])) => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(schema(format!("{path}.limits"), "expected finite lo < hi"));
                    }
                    Some((lo, hi))
                }
                (JointKind::Revolute, None) => {
                    return Err(schema(format!("{path}.limits"), "revolute joints need limits"))
                }
                (_, Some(_)) => {
                    return Err(schema(format!("{path}.limits"), "only revolute joints take limits"))
                }
                (_, None) => None,
            };
            specs.push(JointSpec {
                name: j.name.clone(),
                parent_link: j.parent_link.clone(),
                child_link: child,
                axis,
                origin_translation: Vector3::from(origin.xyz),
                origin_rotation,
                limits,
                kind: j.kind,
            });
        }

        for (i, j) in specs.iter().enumerate() {
            if j.parent_link != doc.base_link && !children.contains_key(&j.parent_link) {
                return Err(EmbodimentError::DanglingLink {
                    path: format!("joints[{i}].parent_link"),
                    link: j.parent_link.clone(),
                });
            }
        }

        // Stable topological order: parents before children.
        let mut ordered: Vec<JointSpec> = Vec::with_capacity(specs.len());
        let mut defined: BTreeSet<String> = BTreeSet::from([doc.base_link.clone()]);
        let mut remaining: Vec<(usize, JointSpec)> = specs.into_iter().enumerate().collect();
        while !remaining.is_empty() {
            let before = remaining.len();
            let mut rest = Vec::new();
            for (i, j) in remaining {
                if defined.contains(&j.parent_link) {
                    defined.insert(j.child_link.clone());
                    ordered.push(j);
                } else {
                    rest.push((i, j));
                }
            }
            if rest.len() == before {
                let (i, j) = &rest[0];
                return Err(schema(
                    format!("joints[{i}].parent_link"),
                    format!("link '{}' is not connected to base '{}'", j.parent_link, doc.base_link),
                ));
            }
            remaining = rest;
        }

        let mut links = vec![doc.base_link.clone()];
        links.extend(ordered.iter().map(|j| j.child_link.clone()));
        let link_index: BTreeMap<&str, usize> =
            links.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let parent_link_index: Vec<usize> =
            ordered.iter().map(|j| link_index[j.parent_link.as_str()]).collect();

        let mut reps = BTreeSet::new();
        let mut dof_offset = Vec::with_capacity(ordered.len());
        let mut pose_dim = 0;
        for j in &ordered {
            match j.kind {
                JointKind::Fixed => dof_offset.push(None),
                kind => {
                    reps.insert(kind == JointKind::Quaternion);
                    dof_offset.push(Some(pose_dim));
                    pose_dim += kind.dof();
                }
            }
        }
        let representation = match (reps.contains(&false), reps.contains(&true)) {
            (true, false) => Representation::Scalar,
            (false, true) => Representation::Quaternion,
            (true, true) => {
                return Err(schema("joints", "mixing revolute and quaternion joints is not supported"))
            }
            (false, false) => return Err(schema("joints", "no movable joints")),
        };

        let joint_index: BTreeMap<&str, usize> =
            ordered.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();

        for name in doc.segments.keys() {
            if !joint_index.contains_key(name.as_str()) {
                return Err(schema(format!("segments.{name}"), "unknown joint"));
            }
        }
        let mut segment_available = BTreeSet::new();
        let mut segment_dofs: BTreeMap<Segment, Vec<usize>> = BTreeMap::new();
        for (i, j) in ordered.iter().enumerate() {
            let Some(off) = dof_offset[i] else { continue };
            let Some(&seg) = doc.segments.get(&j.name) else {
                return Err(schema(
                    format!("segments.{}", j.name),
                    "every movable joint must be assigned to a segment",
                ));
            };
            segment_available.insert(seg);
            segment_dofs.entry(seg).or_default().extend(off..off + j.kind.dof());
        }

        let mut arm_length = BTreeMap::new();
        let mut arm_chains = BTreeMap::new();
        for seg in Segment::ARMS {
            if !segment_available.contains(&seg) {
                continue;
            }
            let ee = doc
                .ee_links
                .get(&seg)
                .ok_or_else(|| schema(format!("ee_links.{seg}"), "available arm needs an end-effector link"))?;
            let shoulder = doc
                .shoulders
                .get(&seg)
                .ok_or_else(|| schema(format!("shoulders.{seg}"), "available arm needs a shoulder joint"))?;
            let &ee_link = link_index.get(ee.as_str()).ok_or_else(|| EmbodimentError::DanglingLink {
                path: format!("ee_links.{seg}"),
                link: ee.clone(),
            })?;
            let &sh = joint_index
                .get(shoulder.as_str())
                .ok_or_else(|| schema(format!("shoulders.{seg}"), format!("unknown joint '{shoulder}'")))?;
            if doc.segments.get(shoulder) != Some(&seg) {
                return Err(schema(format!("shoulders.{seg}"), "shoulder joint belongs to another segment"));
            }
            // Walk from the end-effector link up to the shoulder joint.
            let mut chain = Vec::new();
            let mut length = 0.0;
            let mut link = ee_link;
            loop {
                if link == 0 {
                    return Err(schema(
                        format!("shoulders.{seg}"),
                        format!("'{shoulder}' is not an ancestor of '{ee}'"),
                    ));
                }
                let j = link - 1;
                chain.push(j);
                if j == sh {
                    break;
                }
                length += ordered[j].origin_translation.norm();
                link = parent_link_index[j];
            }
            chain.reverse();
            if !(length > 0.0) {
                return Err(schema(format!("ee_links.{seg}"), "arm length must be positive"));
            }
            arm_length.insert(seg, length);
            arm_chains.insert(seg, chain);
        }
        for seg in doc.ee_links.keys().chain(doc.shoulders.keys()) {
            if !seg.is_arm() {
                return Err(schema(format!("ee_links.{seg}"), "only arm segments have end-effectors"));
            }
        }

        let mut rotation_groups = BTreeMap::new();
        for &seg in &segment_available {
            let groups = match doc.rotation_groups.get(&seg) {
                Some(groups) => {
                    let mut out = Vec::new();
                    for (g, group) in groups.iter().enumerate() {
                        if group.is_empty() {
                            return Err(schema(format!("rotation_groups.{seg}[{g}]"), "empty group"));
                        }
                        let mut idx = Vec::new();
                        for name in group {
                            let &ji = joint_index.get(name.as_str()).ok_or_else(|| {
                                schema(format!("rotation_groups.{seg}[{g}]"), format!("unknown joint '{name}'"))
                            })?;
                            if doc.segments.get(name) != Some(&seg) || dof_offset[ji].is_none() {
                                return Err(schema(
                                    format!("rotation_groups.{seg}[{g}]"),
                                    format!("'{name}' is not a movable joint of {seg}"),
                                ));
                            }
                            idx.push(ji);
                        }
                        out.push(idx);
                    }
                    out
                }
                None => (0..ordered.len())
                    .filter(|&i| dof_offset[i].is_some() && doc.segments.get(&ordered[i].name) == Some(&seg))
                    .map(|i| vec![i])
                    .collect(),
            };
            rotation_groups.insert(seg, groups);
        }
        for seg in doc.rotation_groups.keys() {
            if !segment_available.contains(seg) {
                return Err(schema(format!("rotation_groups.{seg}"), "segment has no joints"));
            }
        }

        Ok(EmbodimentSpec {
            name: doc.name,
            base_link: doc.base_link,
            joints: ordered,
            segment_map: doc.segments,
            segment_available,
            ee_links: doc.ee_links,
            shoulder_joints: doc.shoulders,
            arm_length,
            pose_dim,
            representation,
            links,
            parent_link_index,
            dof_offset,
            rotation_groups,
            arm_chains,
            segment_dofs,
        })
    }

    /// Rebuilds the canonical document form.
    pub fn to_doc(&self) -> EmbodimentDoc {
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let q = j.origin_rotation.quaternion();
                JointDoc {
                    name: j.name.clone(),
                    parent_link: j.parent_link.clone(),
                    child_link: Some(j.child_link.clone()),
                    axis: Some([j.axis.x, j.axis.y, j.axis.z]),
                    origin: Some(OriginDoc {
                        xyz: [j.origin_translation.x, j.origin_translation.y, j.origin_translation.z],
                        quat: [q.w, q.i, q.j, q.k],
                    }),
                    limits: j.limits.map(|(lo, hi)| [lo, hi]),
                    kind: j.kind,
                }
            })
            .collect();
        let rotation_groups = self
            .rotation_groups
            .iter()
            .map(|(seg, groups)| {
                let named = groups
                    .iter()
                    .map(|g| g.iter().map(|&i| self.joints[i].name.clone()).collect())
                    .collect();
                (*seg, named)
            })
            .collect();
        EmbodimentDoc {
            name: self.name.clone(),
            base_link: self.base_link.clone(),
            joints,
            segments: self.segment_map.clone(),
            ee_links: self.ee_links.clone(),
            shoulders: self.shoulder_joints.clone(),
            rotation_groups,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("embodiment documents always serialize")
    }

    /// SHA-256 over the canonical document, hex encoded.
    pub fn spec_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_doc()).expect("embodiment documents always serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn is_human(&self) -> bool {
        self.representation == Representation::Quaternion
    }

    pub fn has_segment(&self, seg: Segment) -> bool {
        self.segment_available.contains(&seg)
    }

    pub fn links(&self) -> &[String] {
        &self.links
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub(crate) fn parent_link_index(&self, joint: usize) -> usize {
        self.parent_link_index[joint]
    }

    /// Offset of the joint's values in the flat pose vector (`None` for fixed joints).
    pub fn dof_offset(&self, joint: usize) -> Option<usize> {
        self.dof_offset[joint]
    }

    /// Indices of movable joints in pose order.
    pub fn movable_joints(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.joints.len()).filter(|&i| self.dof_offset[i].is_some())
    }

    /// Pose-vector indices driven by joints of `seg`.
    pub fn segment_dofs(&self, seg: Segment) -> &[usize] {
        self.segment_dofs.get(&seg).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Joint-index groups forming the limb rotations of `seg`.
    pub fn rotation_groups(&self, seg: Segment) -> &[Vec<usize>] {
        self.rotation_groups.get(&seg).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Joints from the shoulder (first) down to the end-effector link (last).
    pub fn arm_chain(&self, seg: Segment) -> Option<&[usize]> {
        self.arm_chains.get(&seg).map(Vec::as_slice)
    }

    pub fn ee_link_index(&self, seg: Segment) -> Option<usize> {
        self.ee_links.get(&seg).and_then(|l| self.link_index(l))
    }

    pub fn shoulder_index(&self, seg: Segment) -> Option<usize> {
        self.shoulder_joints.get(&seg).and_then(|j| self.joint_index(j))
    }

    /// Per-dof lower/upper bounds; quaternion components are bounded by [-1, 1].
    pub fn dof_bounds(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.pose_dim);
        for j in &self.joints {
            match (j.kind, j.limits) {
                (JointKind::Revolute, Some(l)) => out.push(l),
                (JointKind::Quaternion, _) => out.extend([(-1.0, 1.0); 4]),
                _ => {}
            }
        }
        out
    }

    /// Returns a copy with every origin translation scaled by `k`.
    pub fn scaled(&self, k: f64) -> Result<EmbodimentSpec> {
        let mut doc = self.to_doc();
        for j in &mut doc.joints {
            if let Some(o) = j.origin.as_mut() {
                for v in &mut o.xyz {
                    *v *= k;
                }
            }
        }
        EmbodimentSpec::from_doc(doc)
    }

    pub(crate) fn require_segment(&self, seg: Segment) -> Result<()> {
        if self.has_segment(seg) {
            Ok(())
        } else {
            Err(EmbodimentError::SegmentUnavailable(seg, self.name.clone()))
        }
    }
}

impl Serialize for EmbodimentSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EmbodimentSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = EmbodimentDoc::deserialize(d)?;
        EmbodimentSpec::from_doc(doc).map_err(serde::de::Error::custom)
    }
}
