//! Binary (±1) weight matrices laid out like the topology's weight blocks.

use crate::error::{Error, Result};
use crate::topology::ConvergingTopology;

/// `sign` with the tie `sign(0) = +1` shared by every evaluator in the crate.
#[inline]
pub fn sign(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryWeights {
    topology: ConvergingTopology,
    layers: Vec<Vec<i8>>,
}

impl BinaryWeights {
    pub fn new(topology: ConvergingTopology, layers: Vec<Vec<i8>>) -> Result<Self> {
        if layers.len() != topology.depth() {
            return Err(Error::DimensionMismatch {
                what: "weight layers",
                expected: topology.depth(),
                actual: layers.len(),
            });
        }
        for (shape, layer) in topology.layers().zip(&layers) {
            if layer.len() != shape.weights() {
                return Err(Error::DimensionMismatch {
                    what: "weights in layer",
                    expected: shape.weights(),
                    actual: layer.len(),
                });
            }
            if layer.iter().any(|&w| w != 1 && w != -1) {
                return Err(Error::Format("binary weights must be exactly +1 or -1".into()));
            }
        }
        Ok(Self { topology, layers })
    }

    /// Elementwise `sign` of real-valued per-layer arrays.
    pub fn from_signs(topology: &ConvergingTopology, values: &[Vec<f64>]) -> Self {
        let layers = values
            .iter()
            .map(|layer| layer.iter().map(|&v| sign(v)).collect())
            .collect();
        Self {
            topology: topology.clone(),
            layers,
        }
    }

    pub fn topology(&self) -> &ConvergingTopology {
        &self.topology
    }

    /// Weights of layer `l` (1-based), row-major `V_l x K_l`.
    pub fn layer(&self, layer: usize) -> &[i8] {
        &self.layers[layer - 1]
    }

    pub fn layers(&self) -> &[Vec<i8>] {
        &self.layers
    }
}
