use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const INIT_SCALE: f64 = 0.05;

/// Names of the parameter arrays, in storage order.
pub const PARAM_NAMES: [&str; 11] = [
    "embedding",
    "ctx1_w",
    "ctx1_b",
    "ctx2_w",
    "ctx2_b",
    "sim_q",
    "sim_p",
    "fuse_w",
    "fuse_b",
    "start_w",
    "end_w",
];

pub(crate) const EMBEDDING: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl ReaderDims {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden: usize) -> Result<Self> {
        if vocab_size < 2 || embed_dim == 0 || hidden == 0 {
            return Err(Error::Config(format!(
                "reader dimensions must be positive (vocab {vocab_size}, d {embed_dim}, h {hidden})"
            )));
        }
        Ok(Self {
            vocab_size,
            embed_dim,
            hidden,
        })
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let (v, d, h) = (self.vocab_size, self.embed_dim, self.hidden);
        vec![
            vec![v, d],
            vec![3 * d, h],
            vec![h],
            vec![3 * h, h],
            vec![h],
            vec![h, h],
            vec![h, h],
            vec![3 * h, h],
            vec![h],
            vec![3 * h, 1],
            vec![5 * h, 1],
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// All trainable arrays of one reader.
#[derive(Debug, Clone, PartialEq)]
pub struct ReaderParams {
    dims: ReaderDims,
    tensors: Vec<Tensor>,
}

impl ReaderParams {
    /// Seeded uniform initialization on `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init(dims: ReaderDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = dims
            .shapes()
            .into_iter()
            .map(|shape| {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE)).collect();
                Tensor::from_raw(shape, data)
            })
            .collect();
        Self { dims, tensors }
    }

    pub fn zeros(dims: ReaderDims) -> Self {
        let tensors = dims.shapes().into_iter().map(Tensor::zeros).collect();
        Self { dims, tensors }
    }

    pub fn from_tensors(dims: ReaderDims, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = dims.shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::Data(format!(
                "expected {} parameter arrays, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((t, s), name) in tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.shape() != s.as_slice() {
                return Err(Error::Data(format!(
                    "parameter {name} has shape {:?}, expected {s:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn dims(&self) -> ReaderDims {
        self.dims
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| &mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Content hash over shapes and exact values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            for &s in t.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Rounds every value through `f32`, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let dims = ReaderDims::new(20, 4, 3).unwrap();
        let a = ReaderParams::init(dims, 1);
        let b = ReaderParams::init(dims, 1);
        let c = ReaderParams::init(dims, 2);
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        for t in a.tensors() {
            assert!(t.data().iter().all(|v| v.abs() <= INIT_SCALE));
        }
        assert_eq!(a.parameter_count(), dims.parameter_count());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let dims = ReaderDims::new(5, 2, 2).unwrap();
        let mut ts = ReaderParams::zeros(dims).tensors().to_vec();
        assert!(ReaderParams::from_tensors(dims, ts.clone()).is_ok());
        ts[3] = Tensor::zeros(vec![1, 1]);
        assert!(matches!(ReaderParams::from_tensors(dims, ts), Err(Error::Data(_))));
        assert!(ReaderDims::new(5, 0, 2).is_err());
    }
}
