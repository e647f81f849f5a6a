//! Binary model files: the magic `SPECNET1`, a single-line JSON header,
//! then the parameters as little-endian `f64` in declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParamSet;
use crate::cvae::{CvaeArch, CvaeModel};
use crate::dataset::io::atomic_write;
use crate::dataset::{Spectrum, VocClass, N_SLOTS};
use crate::discriminator::{DiscriminatorArch, DiscriminatorModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SPECNET1";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Discriminator,
    Cvae,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Which data a model saw, for leakage checks downstream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedOn {
    pub fold: Option<usize>,
    /// Digest of the training spectra, see [`spectra_digest`].
    pub train_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: ModelKind,
    pub architecture: serde_json::Value,
    pub architecture_hash: String,
    pub class_order: Vec<String>,
    pub regression_slots: usize,
    /// Latent parameterisation, present for CVAE checkpoints.
    pub latent_layout: Option<String>,
    pub params: Vec<ParamEntry>,
    pub trained_on: Option<TrainedOn>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the model kind and its architecture JSON.
pub fn architecture_hash(kind: ModelKind, architecture: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&kind).unwrap_or_default());
    h.update(serde_json::to_vec(architecture).unwrap_or_default());
    hex(&h.finalize())
}

/// Order-sensitive SHA-256 over labels and absorbance bits.
pub fn spectra_digest<'a>(spectra: impl IntoIterator<Item = &'a Spectrum>) -> String {
    let mut h = Sha256::new();
    for s in spectra {
        h.update([s.class().index() as u8]);
        h.update(s.concentration().to_le_bytes());
        for v in s.absorbance() {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn encode(kind: ModelKind, architecture: serde_json::Value, params: &ParamSet, trained_on: Option<TrainedOn>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind,
        architecture_hash: architecture_hash(kind, &architecture),
        architecture,
        class_order: VocClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        regression_slots: N_SLOTS,
        latent_layout: (kind == ModelKind::Cvae).then(|| "parallel mu and log_variance output layers".to_string()),
        params: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        trained_on,
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header)?);
    out.push(b'\n');
    for v in params.flat_values() {
        out.extend(v.to_le_bytes());
    }
    Ok(out)
}

/// Splits a checkpoint into its verified header and parameter values.
pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<f64>)> {
    let body = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| Error::Checkpoint("missing SPECNET1 magic".into()))?;
    let newline = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("header is not terminated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&body[..newline])
        .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", header.format_version)));
    }
    if header.architecture_hash != architecture_hash(header.kind, &header.architecture) {
        return Err(Error::Checkpoint("architecture hash mismatch".into()));
    }
    let expected: Vec<String> = VocClass::ALL.iter().map(|c| c.name().to_string()).collect();
    if header.class_order != expected || header.regression_slots != N_SLOTS {
        return Err(Error::Checkpoint("class order or regression layout differs from this build".into()));
    }
    let blob = &body[newline + 1..];
    let count: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != count * 8 {
        return Err(Error::Checkpoint(format!(
            "parameter blob holds {} bytes, header declares {} values",
            blob.len(),
            count
        )));
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
        .collect();
    Ok((header, values))
}

fn check_layout(header: &CheckpointHeader, params: &ParamSet) -> Result<()> {
    let same = header.params.len() == params.len()
        && header
            .params
            .iter()
            .zip(params.iter())
            .all(|(e, p)| e.name == p.name && e.shape == p.value.shape());
    if same {
        Ok(())
    } else {
        Err(Error::Checkpoint("parameter names or shapes do not match the architecture".into()))
    }
}

fn expect_kind(header: &CheckpointHeader, kind: ModelKind) -> Result<()> {
    if header.kind == kind {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", header.kind)))
    }
}

pub fn discriminator_to_bytes(model: &DiscriminatorModel, trained_on: Option<TrainedOn>) -> Result<Vec<u8>> {
    encode(ModelKind::Discriminator, serde_json::to_value(model.arch())?, model.params(), trained_on)
}

pub fn discriminator_from_bytes(bytes: &[u8]) -> Result<(DiscriminatorModel, CheckpointHeader)> {
    let (header, values) = decode(bytes)?;
    expect_kind(&header, ModelKind::Discriminator)?;
    let arch: DiscriminatorArch = serde_json::from_value(header.architecture.clone())?;
    let fresh = DiscriminatorModel::new(arch.clone(), 0)?;
    check_layout(&header, fresh.params())?;
    Ok((DiscriminatorModel::from_params(arch, &values)?, header))
}

pub fn cvae_to_bytes(model: &CvaeModel, trained_on: Option<TrainedOn>) -> Result<Vec<u8>> {
    encode(ModelKind::Cvae, serde_json::to_value(model.arch())?, model.params(), trained_on)
}

pub fn cvae_from_bytes(bytes: &[u8]) -> Result<(CvaeModel, CheckpointHeader)> {
    let (header, values) = decode(bytes)?;
    expect_kind(&header, ModelKind::Cvae)?;
    let arch: CvaeArch = serde_json::from_value(header.architecture.clone())?;
    let fresh = CvaeModel::new(arch.clone(), 0)?;
    check_layout(&header, fresh.params())?;
    Ok((CvaeModel::from_params(arch, &values)?, header))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_discriminator(path: &Path, model: &DiscriminatorModel, trained_on: Option<TrainedOn>) -> Result<()> {
    atomic_write(path, &discriminator_to_bytes(model, trained_on)?)
}

pub fn load_discriminator(path: &Path) -> Result<(DiscriminatorModel, CheckpointHeader)> {
    discriminator_from_bytes(&read(path)?).map_err(|e| annotate(path, e))
}

pub fn save_cvae(path: &Path, model: &CvaeModel, trained_on: Option<TrainedOn>) -> Result<()> {
    atomic_write(path, &cvae_to_bytes(model, trained_on)?)
}

pub fn load_cvae(path: &Path) -> Result<(CvaeModel, CheckpointHeader)> {
    cvae_from_bytes(&read(path)?).map_err(|e| annotate(path, e))
}

fn annotate(path: &Path, e: Error) -> Error {
    match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discriminator_round_trip_is_bitwise() {
        let m = DiscriminatorModel::new(DiscriminatorArch::standard(), 4).unwrap();
        let bytes = discriminator_to_bytes(&m, None).unwrap();
        assert!(bytes.starts_with(MAGIC));
        let (back, header) = discriminator_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.regression_slots, 9);
        let x: Vec<f64> = (0..622).map(|i| (i as f64).cos().abs()).collect();
        assert_eq!(m.forward(&x, None).unwrap(), back.forward(&x, None).unwrap());
    }

    #[test]
    fn cvae_round_trip() {
        let m = CvaeModel::new(CvaeArch::standard(), 4).unwrap();
        let (back, header) = cvae_from_bytes(&cvae_to_bytes(&m, None).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(header.latent_layout.is_some());
    }

    #[test]
    fn corruption_is_detected() {
        let m = DiscriminatorModel::new(DiscriminatorArch::standard(), 4).unwrap();
        let bytes = discriminator_to_bytes(&m, None).unwrap();
        assert!(discriminator_from_bytes(&bytes[1..]).is_err());
        assert!(discriminator_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(cvae_from_bytes(&bytes).is_err());
        let text = String::from_utf8_lossy(&bytes[..200]).replace("\"hidden\":[256", "\"hidden\":[255");
        let mut tampered = text.into_bytes();
        tampered.extend_from_slice(&bytes[200..]);
        assert!(matches!(discriminator_from_bytes(&tampered), Err(Error::Checkpoint(_))));
    }
}
