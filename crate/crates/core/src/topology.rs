//! Converging (fan-out 1) network architecture.
//!
//! Layer 1 is fully connected to the input. Every neuron of a deeper layer `l`
//! reads a contiguous, disjoint block of `K_l = V_{l-1} / V_l` neurons of layer
//! `l - 1`, so each hidden neuron feeds exactly one neuron above it.
//!
//! Per-layer weights are stored as `V_l x K_l` row-major blocks: row `i` holds
//! the fan-in of neuron `i`, and slot `r` of that row reads input
//! [`LayerShape::source`]`(i, r)`. For deep layers this makes the flat weight
//! index of layer `l` equal to the neuron index in layer `l - 1`.
//!
//! Public indices (`fan_in_set`, `child`) are 1-based. Everything else is 0-based.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvergingTopology {
    widths: Vec<usize>,
    fan_in: Vec<usize>,
}

/// Shape of one weight layer, enough to walk its slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub width: usize,
    pub fan_in: usize,
    pub dense: bool,
}

impl LayerShape {
    /// Index into the previous layer read by slot `r` of neuron `i`.
    #[inline]
    pub fn source(&self, i: usize, r: usize) -> usize {
        if self.dense {
            r
        } else {
            i * self.fan_in + r
        }
    }

    #[inline]
    pub fn weights(&self) -> usize {
        self.width * self.fan_in
    }
}

impl ConvergingTopology {
    pub fn new(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidTopology(format!(
                "need at least an input and one output layer, got {} width(s)",
                widths.len()
            )));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidTopology(format!("layer {pos} has zero width")));
        }
        let mut fan_in = Vec::with_capacity(widths.len() - 1);
        fan_in.push(widths[0]);
        for l in 2..widths.len() {
            let (prev, cur) = (widths[l - 1], widths[l]);
            if prev % cur != 0 {
                return Err(Error::InvalidTopology(format!(
                    "layer {} width {prev} is not divisible by layer {l} width {cur}",
                    l - 1
                )));
            }
            fan_in.push(prev / cur);
        }
        Ok(Self {
            widths: widths.to_vec(),
            fan_in,
        })
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.fan_in.len()
    }

    /// Widths `V_0..V_L`.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn width(&self, layer: usize) -> usize {
        self.widths[layer]
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    /// Constant fan-in `K_l` of weight layer `l` (1-based, `1..=L`).
    pub fn fan_in(&self, layer: usize) -> usize {
        self.fan_in[layer - 1]
    }

    /// Shape of weight layer `l` (1-based).
    pub fn layer(&self, layer: usize) -> LayerShape {
        LayerShape {
            inputs: self.widths[layer - 1],
            width: self.widths[layer],
            fan_in: self.fan_in[layer - 1],
            dense: layer == 1,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerShape> + '_ {
        (1..=self.depth()).map(|l| self.layer(l))
    }

    /// Total number of weights `|W|`.
    pub fn weight_count(&self) -> usize {
        self.layers().map(|s| s.weights()).sum()
    }

    /// `K(i, l)` as a 1-based inclusive range of neurons in layer `l - 1`.
    pub fn fan_in_set(&self, neuron: usize, layer: usize) -> Result<RangeInclusive<usize>> {
        self.check_layer(layer)?;
        let shape = self.layer(layer);
        if neuron == 0 || neuron > shape.width {
            return Err(Error::IndexOutOfRange(format!(
                "neuron {neuron} not in 1..={} of layer {layer}",
                shape.width
            )));
        }
        let first = shape.source(neuron - 1, 0) + 1;
        Ok(first..=first + shape.fan_in - 1)
    }

    /// The unique neuron of layer `l + 1` that neuron `j` of layer `l` feeds
    /// (1-based). Defined for hidden layers `1..L`.
    pub fn child(&self, neuron: usize, layer: usize) -> Result<usize> {
        if layer == 0 || layer >= self.depth() {
            return Err(Error::IndexOutOfRange(format!(
                "layer {layer} has no unique child map (hidden layers are 1..{})",
                self.depth()
            )));
        }
        if neuron == 0 || neuron > self.widths[layer] {
            return Err(Error::IndexOutOfRange(format!(
                "neuron {neuron} not in 1..={} of layer {layer}",
                self.widths[layer]
            )));
        }
        Ok((neuron - 1) / self.fan_in(layer + 1) + 1)
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.depth() {
            return Err(Error::IndexOutOfRange(format!(
                "weight layer {layer} not in 1..={}",
                self.depth()
            )));
        }
        Ok(())
    }
}

impl FromStr for ConvergingTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let widths = s
            .split(['x', 'X'])
            .map(|part| {
                part.trim().parse::<usize>().map_err(|_| {
                    Error::InvalidTopology(format!("cannot parse width {part:?} in {s:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&widths)
    }
}

impl fmt::Display for ConvergingTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, w) in self.widths.iter().enumerate() {
            if n > 0 {
                f.write_str("x")?;
            }
            write!(f, "{w}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnist_architecture() {
        let t = ConvergingTopology::new(&[785, 3010, 10]).unwrap();
        assert_eq!(t.fan_in(1), 785);
        assert_eq!(t.fan_in(2), 301);
        assert_eq!(t.child(1, 1).unwrap(), 1);
        assert_eq!(t.child(301, 1).unwrap(), 1);
        assert_eq!(t.child(302, 1).unwrap(), 2);
        assert_eq!(t.child(3010, 1).unwrap(), 10);
        assert_eq!(t.fan_in_set(2, 2).unwrap(), 302..=602);
        assert_eq!(t.weight_count(), 785 * 3010 + 3010);
    }

    #[test]
    fn teacher_architecture() {
        let t = ConvergingTopology::new(&[7, 7, 1]).unwrap();
        assert_eq!(t.fan_in(1), 7);
        assert_eq!(t.fan_in(2), 7);
        for j in 1..=7 {
            assert_eq!(t.child(j, 1).unwrap(), 1);
        }
        assert_eq!(t.fan_in_set(1, 2).unwrap(), 1..=7);
    }

    #[test]
    fn divisibility() {
        let t = ConvergingTopology::new(&[4, 6, 2]).unwrap();
        assert_eq!(t.fan_in(2), 3);
        assert!(matches!(
            ConvergingTopology::new(&[4, 5, 2]),
            Err(Error::InvalidTopology(_))
        ));
        assert!(ConvergingTopology::new(&[4, 0, 2]).is_err());
        assert!(ConvergingTopology::new(&[4]).is_err());
    }

    #[test]
    fn first_layer_fully_connected() {
        let t = ConvergingTopology::new(&[4, 4, 1]).unwrap();
        assert_eq!(t.fan_in_set(1, 1).unwrap(), 1..=4);
        assert_eq!(t.fan_in_set(4, 1).unwrap(), 1..=4);
    }

    #[test]
    fn out_of_range() {
        let t = ConvergingTopology::new(&[4, 4, 1]).unwrap();
        assert!(t.fan_in_set(0, 1).is_err());
        assert!(t.fan_in_set(5, 1).is_err());
        assert!(t.fan_in_set(1, 3).is_err());
        assert!(t.child(1, 2).is_err());
        assert!(t.child(5, 1).is_err());
    }

    #[test]
    fn parse_and_display() {
        let t: ConvergingTopology = "785x3010x10".parse().unwrap();
        assert_eq!(t.widths(), &[785, 3010, 10]);
        assert_eq!(t.to_string(), "785x3010x10");
        assert!("785x30a".parse::<ConvergingTopology>().is_err());
        assert!("7x5x2".parse::<ConvergingTopology>().is_err());
    }
}
