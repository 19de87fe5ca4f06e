//! Minimal CPU neural-network toolkit: NCHW tensors, layers with explicit
//! backward passes, and the optimizers used by the GAN and the classifier.

pub mod conv;
pub mod layers;
pub mod optim;
pub mod sequential;
pub mod tensor;

use base64::Engine;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use conv::{Conv2d, ConvTranspose2d};
pub use layers::{sigmoid, soft_cross_entropy, softmax, softplus, ActKind, Activation, BatchNorm2d, BnStats, Linear, Mode};
pub use optim::{Adam, NesterovSgd};
pub use sequential::{Layer, Sequential};
pub use tensor::{Param, Tensor};

pub fn normal_vec<R: Rng>(rng: &mut R, len: usize, mean: f64, std: f64) -> Vec<f64> {
    let dist = Normal::new(mean, std).expect("finite std");
    (0..len).map(|_| dist.sample(rng)).collect()
}

/// A parameter set flattened to little-endian `f64` bytes, base64 encoded.
/// Bit-exact across save/load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub shapes: Vec<Vec<usize>>,
    pub data: String,
}

impl ParamBlob {
    pub fn from_params<'a>(params: impl IntoIterator<Item = &'a Param>) -> Self {
        let mut shapes = Vec::new();
        let mut bytes = Vec::new();
        for p in params {
            shapes.push(p.shape.clone());
            for v in &p.value {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        ParamBlob {
            shapes,
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    /// Writes the blob into `params`; fails on any shape mismatch.
    pub fn load_into(&self, params: &mut [&mut Param]) -> Result<(), String> {
        if params.len() != self.shapes.len() {
            return Err(format!(
                "blob holds {} tensors, model has {}",
                self.shapes.len(),
                params.len()
            ));
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.data)
            .map_err(|e| e.to_string())?;
        let total: usize = self.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if bytes.len() != total * 8 {
            return Err("blob byte length does not match its shapes".into());
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for (p, shape) in params.iter_mut().zip(&self.shapes) {
            if &p.shape != shape {
                return Err(format!("shape mismatch: blob {:?}, model {:?}", shape, p.shape));
            }
            for v in p.value.iter_mut() {
                *v = values.next().unwrap();
            }
        }
        Ok(())
    }
}

/// Short content fingerprint of a parameter set.
pub fn fingerprint<'a>(params: impl IntoIterator<Item = &'a Param>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for p in params {
        for v in &p.value {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(&hasher.finalize()[..6])
}
