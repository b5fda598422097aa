//! Versioned binary container for model parameters.
//!
//! Layout: the magic bytes `XEMB`, a little-endian `u32` version, a
//! little-endian `u64` header length, the JSON header, then every tensor as
//! little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::embodiment::{EmbodimentDoc, EmbodimentError, EmbodimentSpec};
use crate::latent::{LatentError, LatentModel, ModelConfig};
use crate::nn::Parameters;
use crate::policy::{PolicyConfig, PolicyModel};

pub const MAGIC: &[u8; 4] = b"XEMB";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("expected a {expected} checkpoint, found {found}")]
    WrongSection { expected: Section, found: Section },
    #[error("tensor '{0}' missing from checkpoint")]
    MissingTensor(String),
    #[error("checkpoint holds unknown tensor '{0}'")]
    UnexpectedTensor(String),
    #[error("tensor '{name}' has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("truncated tensor data")]
    Truncated,
    #[error("spec hash mismatch for '{name}': checkpoint has {stored}, got {given}")]
    SpecHashMismatch { name: String, stored: String, given: String },
    #[error("policy was trained on a different latent model")]
    LatentMismatch,
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Embodiment(#[from] EmbodimentError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Latent,
    Policy,
}

impl std::fmt::Display for Section {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Section::Latent => "latent",
            Section::Policy => "policy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecEntry {
    pub name: String,
    pub hash: String,
    pub doc: EmbodimentDoc,
}

impl SpecEntry {
    pub fn new(spec: &EmbodimentSpec) -> Self {
        SpecEntry {
            name: spec.name.clone(),
            hash: spec.spec_hash(),
            doc: spec.to_doc(),
        }
    }

    /// Rebuilds the spec and checks it against the stored hash.
    pub fn spec(&self) -> Result<EmbodimentSpec> {
        let spec = EmbodimentSpec::from_doc(self.doc.clone())?;
        let hash = spec.spec_hash();
        if hash != self.hash {
            return Err(CheckpointError::SpecHashMismatch {
                name: self.name.clone(),
                stored: self.hash.clone(),
                given: hash,
            });
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Start index in the data block, in values.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub section: Section,
    pub config: Value,
    /// Human spec first for latent checkpoints, then robots by name.
    pub specs: Vec<SpecEntry>,
    pub tensors: Vec<TensorEntry>,
    /// Free-form run information (experiment config, wall times).
    #[serde(default)]
    pub metadata: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub data: Vec<f64>,
}

fn io_err(path: &Path, e: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl Container {
    pub fn from_params<P: Parameters>(section: Section, config: Value, specs: Vec<SpecEntry>, params: &P, metadata: Value) -> Self {
        let mut tensors = Vec::new();
        let mut data = Vec::with_capacity(params.num_params());
        params.visit("", &mut |name, shape, d| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: shape.to_vec(),
                offset: data.len(),
            });
            data.extend_from_slice(d);
        });
        Container {
            header: Header {
                section,
                config,
                specs,
                tensors,
                metadata,
            },
            data,
        }
    }

    /// Copies every stored tensor into `params`; names and shapes must match
    /// exactly in both directions.
    pub fn fill_params<P: Parameters>(&self, params: &mut P) -> Result<()> {
        let index: std::collections::HashMap<&str, &TensorEntry> =
            self.header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut seen = 0usize;
        let mut err = None;
        params.visit_mut("", &mut |name, shape, d| {
            if err.is_some() {
                return;
            }
            let Some(t) = index.get(name) else {
                err = Some(CheckpointError::MissingTensor(name.to_string()));
                return;
            };
            if t.shape != shape {
                err = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    found: t.shape.clone(),
                });
                return;
            }
            match self.data.get(t.offset..t.offset + d.len()) {
                Some(src) => d.copy_from_slice(src),
                None => err = Some(CheckpointError::Truncated),
            }
            seen += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != self.header.tensors.len() {
            let mut names = Vec::new();
            params.visit("", &mut |n, _, _| names.push(n.to_string()));
            let extra = self
                .header
                .tensors
                .iter()
                .find(|t| !names.contains(&t.name))
                .map(|t| t.name.clone())
                .unwrap_or_default();
            return Err(CheckpointError::UnexpectedTensor(extra));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header).expect("headers serialize");
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| CheckpointError::Io {
            path: "<reader>".into(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(body).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let rest = &bytes[16 + len..];
        if !rest.len().is_multiple_of(8) {
            return Err(CheckpointError::Truncated);
        }
        let data: Vec<f64> = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let needed = header
            .tensors
            .iter()
            .map(|t| t.offset + t.shape.iter().product::<usize>())
            .max()
            .unwrap_or(0);
        if needed > data.len() {
            return Err(CheckpointError::Truncated);
        }
        Ok(Container { header, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_section(&self, section: Section) -> Result<()> {
        if self.header.section != section {
            return Err(CheckpointError::WrongSection {
                expected: section,
                found: self.header.section,
            });
        }
        Ok(())
    }

    /// Fails when any of `given` shares a name with a stored spec but hashes
    /// differently.
    pub fn check_specs(&self, given: &[&EmbodimentSpec]) -> Result<()> {
        for spec in given {
            if let Some(e) = self.header.specs.iter().find(|e| e.name == spec.name) {
                let hash = spec.spec_hash();
                if hash != e.hash {
                    return Err(CheckpointError::SpecHashMismatch {
                        name: spec.name.clone(),
                        stored: e.hash.clone(),
                        given: hash,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn latent_container(model: &LatentModel, metadata: Value) -> Container {
    let mut specs = vec![SpecEntry::new(&model.human)];
    specs.extend(model.robots.values().map(SpecEntry::new));
    Container::from_params(
        Section::Latent,
        serde_json::to_value(model.config).expect("config serializes"),
        specs,
        &model.params,
        metadata,
    )
}

pub fn latent_from_container(c: &Container) -> Result<LatentModel> {
    c.expect_section(Section::Latent)?;
    let config: ModelConfig =
        serde_json::from_value(c.header.config.clone()).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut specs = c.header.specs.iter();
    let human = specs
        .next()
        .ok_or_else(|| CheckpointError::Header("no human spec".into()))?
        .spec()?;
    let mut model = LatentModel::new(config, human, 0)?;
    for e in specs {
        model.register_robot(&e.spec()?, 0)?;
    }
    c.fill_params(&mut model.params)?;
    Ok(model)
}

pub fn save_latent(model: &LatentModel, path: &Path, metadata: Value) -> Result<()> {
    latent_container(model, metadata).save(path)
}

pub fn load_latent(path: &Path) -> Result<LatentModel> {
    latent_from_container(&Container::load(path)?)
}

/// Loads a latent checkpoint and rejects it when any of `specs` differs from
/// the spec of the same name it was trained with.
pub fn load_latent_expecting(path: &Path, specs: &[&EmbodimentSpec]) -> Result<LatentModel> {
    let c = Container::load(path)?;
    c.check_specs(specs)?;
    latent_from_container(&c)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyHeader {
    policy: PolicyConfig,
    fps: f64,
    /// Shared-network digest of the latent model the policy was trained on.
    latent_digest: String,
}

pub fn policy_container(policy: &PolicyModel, latent: &LatentModel, metadata: Value) -> Container {
    let header = PolicyHeader {
        policy: policy.config,
        fps: policy.fps,
        latent_digest: latent.shared_digest(),
    };
    Container::from_params(
        Section::Policy,
        serde_json::to_value(header).expect("config serializes"),
        vec![SpecEntry::new(&latent.human)],
        &policy.params,
        metadata,
    )
}

/// Rebuilds a policy and returns it with the shared-network digest of the
/// latent model it was trained against.
pub fn policy_from_container(c: &Container) -> Result<(PolicyModel, String)> {
    c.expect_section(Section::Policy)?;
    let h: PolicyHeader =
        serde_json::from_value(c.header.config.clone()).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut policy = PolicyModel::new(h.policy, h.fps, 0).map_err(|e| CheckpointError::Header(e.to_string()))?;
    c.fill_params(&mut policy.params)?;
    Ok((policy, h.latent_digest))
}

pub fn save_policy(policy: &PolicyModel, latent: &LatentModel, path: &Path, metadata: Value) -> Result<()> {
    policy_container(policy, latent, metadata).save(path)
}

/// Loads a policy and rejects it unless it was trained on `latent`'s shared
/// networks.
pub fn load_policy_for(path: &Path, latent: &LatentModel) -> Result<PolicyModel> {
    let c = Container::load(path)?;
    c.check_specs(&[&latent.human])?;
    let (policy, digest) = policy_from_container(&c)?;
    if digest != latent.shared_digest() {
        return Err(CheckpointError::LatentMismatch);
    }
    Ok(policy)
}
