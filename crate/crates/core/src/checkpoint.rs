//! Model checkpoints: named parameter blobs with architecture and dataset
//! digests.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic          4 bytes "DLLM"
//! version        u32     1
//! arch digest    u64
//! dataset digest u64
//! blob count     u32
//! per blob: name len u32, name bytes, ndim u32, dims u32 x ndim, f64 data
//! ```
//!
//! EMA shadows are stored as blobs named `ema::<param>`.

use crate::autodiff::ParamStore;
use crate::error::{CoreError, Result};
use crate::optim::EmaState;
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DLLM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch_digest: u64,
    pub dataset_digest: u64,
    pub blobs: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(
        store: &ParamStore,
        ema: Option<&EmaState>,
        arch_digest: u64,
        dataset_digest: u64,
    ) -> Self {
        let mut blobs: Vec<(String, Tensor)> =
            store.iter().map(|(name, t)| (name.to_string(), t.clone())).collect();
        if let Some(ema) = ema {
            for ((name, _), shadow) in store.iter().zip(ema.shadows()) {
                blobs.push((format!("ema::{name}"), shadow.clone()));
            }
        }
        Checkpoint { arch_digest, dataset_digest, blobs }
    }

    /// Copies parameter blobs into `store` by name; every store parameter
    /// must be present with a matching shape.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        for id in store.param_ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let blob = self
                .blobs
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| CoreError::config(format!("checkpoint missing parameter '{name}'")))?;
            if blob.1.shape() != store.get(id).shape() {
                return Err(CoreError::config(format!(
                    "checkpoint parameter '{name}' has shape {:?}, expected {:?}",
                    blob.1.shape(),
                    store.get(id).shape()
                )));
            }
            store.get_mut(id).data_mut().copy_from_slice(blob.1.data());
        }
        Ok(())
    }

    /// Loads EMA shadows (if present) into the store parameters, which is
    /// the inference-time weight selection for the generative head.
    pub fn load_ema_into(&self, store: &mut ParamStore) -> Result<()> {
        let has_ema = self.blobs.iter().any(|(n, _)| n.starts_with("ema::"));
        if !has_ema {
            return self.load_into(store);
        }
        for id in store.param_ids().collect::<Vec<_>>() {
            let name = format!("ema::{}", store.name(id));
            let blob = self
                .blobs
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| CoreError::config(format!("checkpoint missing blob '{name}'")))?;
            if blob.1.shape() != store.get(id).shape() {
                return Err(CoreError::config(format!("EMA blob '{name}' shape mismatch")));
            }
            store.get_mut(id).data_mut().copy_from_slice(blob.1.data());
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.arch_digest.to_le_bytes());
        buf.extend_from_slice(&self.dataset_digest.to_le_bytes());
        buf.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, tensor) in &self.blobs {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut at = 0usize;
        let take = |at: &mut usize, len: usize| -> Result<&[u8]> {
            if *at + len > bytes.len() {
                return Err(CoreError::config("truncated checkpoint file"));
            }
            let s = &bytes[*at..*at + len];
            *at += len;
            Ok(s)
        };
        if take(&mut at, 4)? != MAGIC {
            return Err(CoreError::config("not a DLLM checkpoint file"));
        }
        let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CoreError::config(format!("unsupported checkpoint version {version}")));
        }
        let arch_digest = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
        let dataset_digest = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
        let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let mut blobs = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut at, name_len)?.to_vec())
                .map_err(|_| CoreError::config("bad checkpoint blob name"))?;
            let ndim = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize);
            }
            let count: usize = shape.iter().product();
            let data = take(&mut at, count * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blobs.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { arch_digest, dataset_digest, blobs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::named_stream;

    #[test]
    fn roundtrip_with_ema_blobs() {
        let mut rng = named_stream(0, "ckpt-test", 0);
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::randn(vec![3, 4], 1.0, &mut rng));
        store.add("a.b", Tensor::randn(vec![4], 1.0, &mut rng));
        let mut ema = EmaState::new(&store, 0.999);
        let target = {
            let mut s = ParamStore::new();
            s.add("a.w", Tensor::zeros(vec![3, 4]));
            s.add("a.b", Tensor::zeros(vec![4]));
            s
        };
        ema.update(&target).unwrap();

        let ckpt = Checkpoint::from_store(&store, Some(&ema), 111, 222);
        let dir = std::env::temp_dir().join(format!("dllm-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.dllm");
        ckpt.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back.arch_digest, 111);
        assert_eq!(back.dataset_digest, 222);

        let mut raw = ParamStore::new();
        let wa = raw.add("a.w", Tensor::zeros(vec![3, 4]));
        raw.add("a.b", Tensor::zeros(vec![4]));
        back.load_into(&mut raw).unwrap();
        assert_eq!(raw.get(wa).data(), store.get(wa).data());

        let mut ema_store = ParamStore::new();
        let we = ema_store.add("a.w", Tensor::zeros(vec![3, 4]));
        ema_store.add("a.b", Tensor::zeros(vec![4]));
        back.load_ema_into(&mut ema_store).unwrap();
        assert_eq!(ema_store.get(we).data(), ema.shadow(0).data());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_parameter_is_a_config_error() {
        let ckpt = Checkpoint { arch_digest: 0, dataset_digest: 0, blobs: vec![] };
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(vec![2]));
        assert!(ckpt.load_into(&mut store).is_err());
    }
}
