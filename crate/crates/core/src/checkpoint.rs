//! Versioned checkpoint files for trained denoisers.
//!
//! Layout: 4-byte magic, a little-endian u32 header length, a JSON header
//! {format_version, arch, seed}, then the parameter arrays as little-endian
//! f32 in declaration order (w1, b1, wc, w2, b2, w3, b3). Parameters are
//! stored at 32-bit precision, so save followed by load is a quantization;
//! loading and re-saving is then exact. Pipelines that want cached and
//! fresh models to agree bitwise should always round-trip through a file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::mlp::{ArchSpec, MLPDenoiser, Params};
use crate::vocab::TokenVocabulary;

const MAGIC: &[u8; 4] = b"FXCP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    arch: ArchSpec,
    seed: u64,
}

/// Serialize a model. `seed` records which training seed produced it.
pub fn save_checkpoint(model: &MLPDenoiser, seed: u64, path: &Path) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        arch: model.arch().clone(),
        seed,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CoreError::Checkpoint(format!("header encode: {e}")))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for view in model.params().flat_views() {
        for &x in view {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Load a model and the seed recorded at save time.
pub fn load_checkpoint(path: &Path) -> Result<(MLPDenoiser, u64)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(CoreError::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body_start = 8 + header_len;
    if bytes.len() < body_start {
        return Err(CoreError::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..body_start])
        .map_err(|e| CoreError::Checkpoint(format!("header decode: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header.arch.validate()?;

    let mut params = Params::zeros(&header.arch);
    let expected: usize = params.flat_len();
    let body = &bytes[body_start..];
    if body.len() != expected * 4 {
        return Err(CoreError::Checkpoint(format!(
            "parameter payload has {} bytes, expected {}",
            body.len(),
            expected * 4
        )));
    }
    let mut offset = 0;
    for view in params.flat_views_mut() {
        for x in view.iter_mut() {
            let raw: [u8; 4] = body[offset..offset + 4].try_into().unwrap();
            *x = f32::from_le_bytes(raw) as f64;
            offset += 4;
        }
    }
    let vocab = TokenVocabulary::generate(&header.arch.vocab)?;
    let model = MLPDenoiser::from_parts(header.arch, vocab, params)?;
    Ok((model, header.seed))
}
