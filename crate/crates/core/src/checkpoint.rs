//! JSON checkpoint format shared by the annotator model and the triage network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, Mlp};
use crate::scalar::Scalar;

/// `{arch, dims, weights, biases, seed}` with each weight matrix flattened
/// row-major as `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub arch: String,
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
}

impl NetworkCheckpoint {
    pub fn from_mlp<T: Scalar>(arch: &str, net: &Mlp<T>, seed: u64) -> Self {
        NetworkCheckpoint {
            arch: arch.to_string(),
            dims: net.dims(),
            weights: net
                .layers
                .iter()
                .map(|l| l.weights.iter().map(|w| w.to_f64_lossy()).collect())
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| l.bias.iter().map(|b| b.to_f64_lossy()).collect())
                .collect(),
            seed,
        }
    }

    pub fn to_mlp<T: Scalar>(&self) -> Result<Mlp<T>> {
        let n = self.dims.len().saturating_sub(1);
        if n == 0 || self.weights.len() != n || self.biases.len() != n {
            return Err(Error::Config("checkpoint layer count mismatch".into()));
        }
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            if self.weights[l].len() != i * o || self.biases[l].len() != o {
                return Err(Error::DimensionMismatch {
                    expected: i * o,
                    got: self.weights[l].len(),
                });
            }
            layers.push(Dense {
                in_dim: i,
                out_dim: o,
                weights: self.weights[l].iter().map(|&w| T::lit(w)).collect(),
                bias: self.biases[l].iter().map(|&b| T::lit(b)).collect(),
            });
        }
        Ok(Mlp { layers })
    }
}

/// Snapshot of both trainable components after a number of human labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub human_labels: usize,
    pub model: NetworkCheckpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eat: Option<NetworkCheckpoint>,
}
