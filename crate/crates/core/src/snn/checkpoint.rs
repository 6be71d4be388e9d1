//! `SNN1` checkpoint files.
//!
//! `"SNN1" | spec (u32-length JSON) | u32 n | n parameter tensors |
//! u32 m | m batch-norm buffers | u8 has_optimizer [| u64 step |
//! f64 beta1 | f64 beta2 | f64 eps | n first moments | n second moments]`.
//! Tensors are a u64 length followed by f32 values, little-endian.

use super::network::Network;
use super::spec::NetworkSpec;
use super::SnnError;
use crate::blob::{BlobError, BlobReader, BlobWriter};
use crate::nn::optim::{read_adam, write_adam};
use crate::nn::Adam;

pub const SNN_MAGIC: &[u8; 4] = b"SNN1";

impl From<BlobError> for SnnError {
    fn from(e: BlobError) -> Self {
        SnnError::Checkpoint(e.to_string())
    }
}

pub fn write_checkpoint(net: &Network, optimizer: Option<&Adam>) -> Vec<u8> {
    let mut w = BlobWriter::new(SNN_MAGIC);
    w.bytes(&serde_json::to_vec(net.spec()).expect("spec serialises"));
    let params = net.param_tensors();
    w.u32(params.len() as u32);
    for p in &params {
        w.f32_tensor(p);
    }
    let buffers = net.buffers();
    w.u32(buffers.len() as u32);
    for b in &buffers {
        w.f32_tensor(b);
    }
    write_adam(&mut w, optimizer);
    w.finish()
}

pub fn read_checkpoint(data: &[u8]) -> Result<(Network, Option<Adam>), SnnError> {
    let mut r = BlobReader::new(data, SNN_MAGIC)?;
    let spec: NetworkSpec = serde_json::from_slice(r.bytes()?)
        .map_err(|e| SnnError::Checkpoint(format!("spec: {e}")))?;
    let mut net = Network::new(spec, 0)?;
    let n = r.u32()? as usize;
    let mut params = net.params_mut();
    if n != params.len() {
        return Err(SnnError::Checkpoint(format!(
            "{n} parameter tensors stored, network has {}",
            params.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        r.f32_tensor_into(p, &format!("parameter {i}"))?;
    }
    let m = r.u32()? as usize;
    let mut buffers = net.buffers_mut();
    if m != buffers.len() {
        return Err(SnnError::Checkpoint(format!(
            "{m} buffers stored, network has {}",
            buffers.len()
        )));
    }
    for (i, b) in buffers.iter_mut().enumerate() {
        r.f32_tensor_into(b, &format!("buffer {i}"))?;
    }
    let shapes: Vec<usize> = net.param_tensors().iter().map(|p| p.len()).collect();
    let optimizer = read_adam(&mut r, &shapes)?;
    r.finish()?;
    Ok((net, optimizer))
}
