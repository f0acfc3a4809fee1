//! Bit-packed evaluation of the binary network.
//!
//! One bit per weight, set for `-1` and clear for `+1`. Each neuron's fan-in
//! row is padded to a whole number of 64-bit words. The first layer reads real
//! inputs and accumulates by sign-conditional add/subtract. Deeper layers see
//! ±1 activations packed with the same convention, so their dot product is
//! `K - 2 * popcount(w xor v)`.
//!
//! File layout (little-endian): magic `BMNN`, `u32` version, `u32` bit
//! convention, `u32` number of widths, the widths as `u32`, then every layer's
//! rows as `u64` words.

use std::io::{Read, Write};

use crate::binary::{sign, BinaryWeights};
use crate::error::{Error, Result};
use crate::topology::ConvergingTopology;

pub const MAGIC: &[u8; 4] = b"BMNN";
pub const VERSION: u32 = 1;
/// Bit convention recorded in the header: a set bit encodes `-1`.
pub const SET_BIT_IS_MINUS_ONE: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedLayer {
    width: usize,
    fan_in: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl PackedLayer {
    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    fn bit(&self, i: usize, r: usize) -> bool {
        self.row(i)[r / 64] >> (r % 64) & 1 == 1
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedNetwork {
    topology: ConvergingTopology,
    layers: Vec<PackedLayer>,
}

fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

pub fn pack(weights: &BinaryWeights) -> PackedNetwork {
    let topology = weights.topology().clone();
    let layers = topology
        .layers()
        .zip(weights.layers())
        .map(|(shape, w)| {
            let words_per_row = words_for(shape.fan_in);
            let mut bits = vec![0u64; shape.width * words_per_row];
            for i in 0..shape.width {
                for r in 0..shape.fan_in {
                    if w[i * shape.fan_in + r] < 0 {
                        bits[i * words_per_row + r / 64] |= 1 << (r % 64);
                    }
                }
            }
            PackedLayer {
                width: shape.width,
                fan_in: shape.fan_in,
                words_per_row,
                bits,
            }
        })
        .collect();
    PackedNetwork { topology, layers }
}

impl PackedNetwork {
    pub fn topology(&self) -> &ConvergingTopology {
        &self.topology
    }

    pub fn layer(&self, layer: usize) -> &PackedLayer {
        &self.layers[layer - 1]
    }

    pub fn unpack(&self) -> BinaryWeights {
        let layers = self
            .layers
            .iter()
            .map(|pl| {
                (0..pl.width)
                    .flat_map(|i| (0..pl.fan_in).map(move |r| (i, r)))
                    .map(|(i, r)| if pl.bit(i, r) { -1 } else { 1 })
                    .collect()
            })
            .collect();
        BinaryWeights::new(self.topology.clone(), layers).expect("packed shapes are valid")
    }

    /// Pre-sign sums of the output layer.
    pub fn output_sums(&self, x: &[f64]) -> Result<Vec<f64>> {
        let topology = &self.topology;
        if x.len() != topology.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: topology.input_dim(),
                actual: x.len(),
            });
        }
        let depth = topology.depth();
        let first = &self.layers[0];
        let sums: Vec<f64> = (0..first.width)
            .map(|i| {
                x.iter()
                    .enumerate()
                    .map(|(r, &xr)| if first.bit(i, r) { -xr } else { xr })
                    .sum()
            })
            .collect();
        if depth == 1 {
            return Ok(sums);
        }
        let mut act = pack_activations(sums.iter().map(|&s| s < 0.0), &self.layers[1]);
        for l in 2..=depth {
            let pl = &self.layers[l - 1];
            let sums: Vec<i64> = (0..pl.width)
                .map(|i| {
                    let ones: u32 = pl
                        .row(i)
                        .iter()
                        .zip(&act[i * pl.words_per_row..(i + 1) * pl.words_per_row])
                        .map(|(w, v)| (w ^ v).count_ones())
                        .sum();
                    pl.fan_in as i64 - 2 * i64::from(ones)
                })
                .collect();
            if l == depth {
                return Ok(sums.into_iter().map(|s| s as f64).collect());
            }
            act = pack_activations(sums.iter().map(|&s| s < 0), &self.layers[l]);
        }
        unreachable!("depth >= 2 returns inside the loop")
    }
}

/// Packs activations into the row layout of the layer that consumes them:
/// neuron `j` lands in row `j / K`, bit `j % K`.
fn pack_activations(negative: impl Iterator<Item = bool>, consumer: &PackedLayer) -> Vec<u64> {
    let mut out = vec![0u64; consumer.width * consumer.words_per_row];
    for (j, neg) in negative.enumerate() {
        if neg {
            let (row, r) = (j / consumer.fan_in, j % consumer.fan_in);
            out[row * consumer.words_per_row + r / 64] |= 1 << (r % 64);
        }
    }
    out
}

/// Output of the packed network, identical to [`crate::predictor::bmnn_eval`].
pub fn packed_eval(net: &PackedNetwork, x: &[f64]) -> Result<Vec<i8>> {
    Ok(net.output_sums(x)?.into_iter().map(sign).collect())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl PackedNetwork {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&SET_BIT_IS_MINUS_ONE.to_le_bytes())?;
        let widths = self.topology.widths();
        w.write_all(&(widths.len() as u32).to_le_bytes())?;
        for &width in widths {
            let width = u32::try_from(width)
                .map_err(|_| Error::Format(format!("width {width} does not fit in u32")))?;
            w.write_all(&width.to_le_bytes())?;
        }
        for layer in &self.layers {
            for word in &layer.bits {
                w.write_all(&word.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported packed version {version}")));
        }
        let convention = read_u32(r)?;
        if convention != SET_BIT_IS_MINUS_ONE {
            return Err(Error::Format(format!("unknown bit convention {convention}")));
        }
        let n = read_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        let widths = (0..n)
            .map(|_| read_u32(r).map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let topology = ConvergingTopology::new(&widths)?;
        let mut layers = Vec::with_capacity(topology.depth());
        for shape in topology.layers() {
            let words_per_row = words_for(shape.fan_in);
            let mut bits = vec![0u64; shape.width * words_per_row];
            let mut b = [0u8; 8];
            for word in bits.iter_mut() {
                r.read_exact(&mut b)?;
                *word = u64::from_le_bytes(b);
            }
            let pad = words_per_row * 64 - shape.fan_in;
            if pad > 0 {
                let mask = !0u64 << (64 - pad);
                for i in 0..shape.width {
                    if bits[(i + 1) * words_per_row - 1] & mask != 0 {
                        return Err(Error::Format("nonzero padding bits".into()));
                    }
                }
            }
            layers.push(PackedLayer {
                width: shape.width,
                fan_in: shape.fan_in,
                words_per_row,
                bits,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after packed layers".into()));
        }
        Ok(Self { topology, layers })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::bmnn_eval;

    fn net(widths: &[usize], layers: Vec<Vec<i8>>) -> BinaryWeights {
        BinaryWeights::new(ConvergingTopology::new(widths).unwrap(), layers).unwrap()
    }

    #[test]
    fn pack_convention() {
        let w = net(&[4, 1], vec![vec![1, -1, -1, 1]]);
        let p = pack(&w);
        assert_eq!(p.layer(1).words(), &[0b0110]);
        assert_eq!(p.unpack(), w);
    }

    #[test]
    fn all_plus_is_zero_bits() {
        let w = net(&[70, 2], vec![vec![1; 140]]);
        let p = pack(&w);
        assert!(p.layer(1).words().iter().all(|&b| b == 0));
        assert_eq!(p.layer(1).words().len(), 4);
    }

    #[test]
    fn zero_input_ties_to_plus() {
        let w = net(&[3, 1], vec![vec![1, -1, 1]]);
        let p = pack(&w);
        assert_eq!(packed_eval(&p, &[0.0; 3]).unwrap(), vec![1]);
        assert_eq!(bmnn_eval(&w, &[0.0; 3]).unwrap(), vec![1]);
    }

    #[test]
    fn file_round_trip_and_rejections() {
        let w = net(&[3, 4, 2], vec![vec![1, -1, 1, -1, -1, 1, 1, 1, -1, 1, -1, -1], vec![-1, 1, 1, -1]]);
        let p = pack(&w);
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"BMNN");
        assert_eq!(PackedNetwork::from_bytes(&bytes).unwrap(), p);
        assert_eq!(PackedNetwork::from_bytes(&bytes).unwrap().to_bytes(), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(PackedNetwork::from_bytes(&bad).is_err());
        assert!(PackedNetwork::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(PackedNetwork::from_bytes(&long).is_err());
        let mut padded = bytes.clone();
        let last = padded.len() - 1;
        padded[last] |= 0x80;
        assert!(PackedNetwork::from_bytes(&padded).is_err());
    }
}
