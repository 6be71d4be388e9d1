//! `CVA1` checkpoint files: `"CVA1" | config (u32-length JSON) | u32 n |
//! n parameter tensors | optimiser state`, laid out like `SNN1`.

use super::model::{Cvae, CvaeConfig, CvaeParams};
use super::CvaeError;
use crate::blob::{BlobError, BlobReader, BlobWriter};
use crate::nn::optim::{read_adam, write_adam};
use crate::nn::Adam;

pub const CVAE_MAGIC: &[u8; 4] = b"CVA1";

impl From<BlobError> for CvaeError {
    fn from(e: BlobError) -> Self {
        CvaeError::Checkpoint(e.to_string())
    }
}

pub fn write_cvae_checkpoint(model: &Cvae, optimizer: Option<&Adam>) -> Vec<u8> {
    let mut w = BlobWriter::new(CVAE_MAGIC);
    w.bytes(&serde_json::to_vec(model.config()).expect("config serialises"));
    let tensors = model.params.tensors();
    w.u32(tensors.len() as u32);
    for t in tensors {
        w.f32_tensor(t);
    }
    write_adam(&mut w, optimizer);
    w.finish()
}

pub fn read_cvae_checkpoint(data: &[u8]) -> Result<(Cvae, Option<Adam>), CvaeError> {
    let mut r = BlobReader::new(data, CVAE_MAGIC)?;
    let config: CvaeConfig = serde_json::from_slice(r.bytes()?)
        .map_err(|e| CvaeError::Checkpoint(format!("config: {e}")))?;
    config.validate()?;
    let mut params = CvaeParams::zeros(&config);
    let n = r.u32()? as usize;
    let mut tensors = params.tensors_mut();
    if n != tensors.len() {
        return Err(CvaeError::Checkpoint(format!("{n} tensors stored, expected {}", tensors.len())));
    }
    for (i, t) in tensors.iter_mut().enumerate() {
        r.f32_tensor_into(t, &format!("tensor {i}"))?;
    }
    let optimizer = read_adam(&mut r, &config.param_shapes())?;
    r.finish()?;
    Ok((Cvae::from_params(config, params)?, optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip() {
        let model = Cvae::new(CvaeConfig::default(), 9).unwrap();
        let mut adam = Adam::new(Default::default(), &model.config().param_shapes());
        adam.step = 2;
        let bytes = write_cvae_checkpoint(&model, Some(&adam));
        let (back, opt) = read_cvae_checkpoint(&bytes).unwrap();
        assert_eq!(write_cvae_checkpoint(&back, opt.as_ref()), bytes);
        assert!(read_cvae_checkpoint(&bytes[..100]).is_err());
        assert!(read_cvae_checkpoint(b"SNN1....").is_err());
    }
}
