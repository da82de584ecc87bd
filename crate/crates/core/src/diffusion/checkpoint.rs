//! Checkpoint files: an 8-byte little-endian header length, a JSON header,
//! then the parameters as contiguous little-endian `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::model::DenoiserModel;
use crate::diffusion::nn::Arch;
use crate::diffusion::schedule::ScheduleParams;
use crate::diffusion::train::{OptimizerParams, TrainingConfig, OPTIMIZER};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch: Arch,
    pub schedule: ScheduleParams,
    pub training: Option<TrainingConfig>,
    pub optimizer: OptimizerParams,
    pub step: u64,
    pub seed: u64,
    pub param_count: usize,
}

impl CheckpointHeader {
    pub fn for_model(
        m: &DenoiserModel,
        schedule: ScheduleParams,
        training: Option<&TrainingConfig>,
    ) -> Self {
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            arch: m.arch().clone(),
            schedule,
            training: training.cloned(),
            optimizer: OPTIMIZER,
            step: m.step,
            seed: training.map_or(0, |t| t.seed),
            param_count: m.theta().len(),
        }
    }
}

pub fn encode(header: &CheckpointHeader, m: &DenoiserModel) -> Result<Vec<u8>> {
    if header.param_count != m.theta().len() {
        return Err(Error::shape(m.theta().len(), header.param_count));
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 4 * m.theta().len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in m.theta() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, DenoiserModel)> {
    let fmt = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < 8 {
        return Err(fmt(0, "missing header length prefix".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| {
            fmt(
                8,
                format!("header length {hlen} exceeds file size {}", bytes.len()),
            )
        })?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..body])
        .map_err(|e| fmt(8, format!("bad checkpoint header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(fmt(
            8,
            format!("unsupported checkpoint version {}", header.format_version),
        ));
    }
    let blob = &bytes[body..];
    if blob.len() != 4 * header.param_count {
        return Err(fmt(
            body,
            format!(
                "expected {} parameter bytes, found {}",
                4 * header.param_count,
                blob.len()
            ),
        ));
    }
    let theta = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let model =
        DenoiserModel::from_parts(&header.arch, &header.schedule.build()?, theta, header.step)?;
    Ok((header, model))
}

pub fn save(path: &Path, header: &CheckpointHeader, m: &DenoiserModel) -> Result<()> {
    std::fs::write(path, encode(header, m)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, DenoiserModel)> {
    decode(&std::fs::read(path)?)
}
