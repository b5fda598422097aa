//! Minimal URDF importer: `revolute`, `continuous` and `fixed` joints only.
//!
//! URDF carries no segment information, so the importer returns a document
//! whose `segments`, `ee_links` and `shoulders` are left for the caller to
//! fill in before validation.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::UnitQuaternion;

use super::spec::{EmbodimentDoc, JointDoc, JointKind, OriginDoc};
use super::{schema, Result};

fn triple(text: Option<&str>, default: [f64; 3], path: &str) -> Result<[f64; 3]> {
    let Some(text) = text else { return Ok(default) };
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| schema(path, format!("bad number '{v}'"))))
        .collect::<Result<_>>()?;
    <[f64; 3]>::try_from(vals).map_err(|_| schema(path, "expected three numbers"))
}

pub fn import_urdf(xml: &str) -> Result<EmbodimentDoc> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| schema("$", e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(schema("$", "root element must be <robot>"));
    }
    let name = robot.attribute("name").unwrap_or("robot").to_string();

    let mut joints = Vec::new();
    let mut children = BTreeSet::new();
    let mut parents = Vec::new();
    for (i, j) in robot.children().filter(|n| n.has_tag_name("joint")).enumerate() {
        let path = format!("joint[{i}]");
        let jname = j.attribute("name").ok_or_else(|| schema(&path, "missing name"))?;
        let kind = match j.attribute("type") {
            Some("revolute") | Some("continuous") => JointKind::Revolute,
            Some("fixed") => JointKind::Fixed,
            other => return Err(schema(&path, format!("unsupported joint type {other:?}"))),
        };
        let link_of = |tag: &str| {
            j.children()
                .find(|n| n.has_tag_name(tag))
                .and_then(|n| n.attribute("link"))
                .map(str::to_string)
                .ok_or_else(|| schema(format!("{path}.{tag}"), "missing link"))
        };
        let parent = link_of("parent")?;
        let child = link_of("child")?;
        let origin = j.children().find(|n| n.has_tag_name("origin"));
        let xyz = triple(origin.and_then(|o| o.attribute("xyz")), [0.0; 3], &format!("{path}.origin.xyz"))?;
        let rpy = triple(origin.and_then(|o| o.attribute("rpy")), [0.0; 3], &format!("{path}.origin.rpy"))?;
        let q = UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        let axis = triple(
            j.children().find(|n| n.has_tag_name("axis")).and_then(|a| a.attribute("xyz")),
            [1.0, 0.0, 0.0],
            &format!("{path}.axis"),
        )?;
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let limits = match (kind, j.attribute("type")) {
            (JointKind::Revolute, Some("continuous")) => Some([-PI, PI]),
            (JointKind::Revolute, _) => {
                let limit = j
                    .children()
                    .find(|n| n.has_tag_name("limit"))
                    .ok_or_else(|| schema(format!("{path}.limit"), "revolute joint without <limit>"))?;
                let get = |a: &str| {
                    limit
                        .attribute(a)
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| schema(format!("{path}.limit.{a}"), "missing or invalid"))
                };
                Some([get("lower")?, get("upper")?])
            }
            _ => None,
        };
        children.insert(child.clone());
        parents.push(parent.clone());
        let quat = q.quaternion();
        joints.push(JointDoc {
            name: jname.to_string(),
            parent_link: parent,
            child_link: Some(child),
            axis: (kind == JointKind::Revolute && norm > 0.0)
                .then(|| [axis[0] / norm, axis[1] / norm, axis[2] / norm]),
            origin: Some(OriginDoc {
                xyz,
                quat: [quat.w, quat.i, quat.j, quat.k],
            }),
            limits,
            kind,
        });
    }
    let roots: BTreeSet<&String> = parents.iter().filter(|p| !children.contains(*p)).collect();
    let base_link = match roots.len() {
        1 => (*roots.iter().next().unwrap()).clone(),
        0 => return Err(schema("$", "no root link")),
        _ => return Err(schema("$", format!("multiple root links: {roots:?}"))),
    };
    Ok(EmbodimentDoc {
        name,
        base_link,
        joints,
        segments: Default::default(),
        ee_links: Default::default(),
        shoulders: Default::default(),
        rotation_groups: Default::default(),
    })
}
