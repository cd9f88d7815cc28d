//! Binary network container.
//!
//! Layout (all integers `u32` little-endian, all values `f64` little-endian):
//!
//! ```text
//! magic           8 bytes ("S2T-NET1" for backbones, "S2T-POL1" for policies)
//! input_rank      u32, followed by input_rank u32 dims
//! feature_index   u32
//! layer_count     u32
//! per layer:
//!   kind          u8   (0 dense, 1 conv3x3, 2 avgpool2, 3 globalavgpool, 4 relu)
//!   stride        u32  (conv only, 0 otherwise)
//!   tensor_count  u32  (2 for dense/conv: weight then bias, 0 otherwise)
//!   per tensor:   rank u32, rank u32 dims, then prod(dims) f64 values
//! ```

use std::path::Path;

use super::layer::Layer;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const NETWORK_MAGIC: &[u8; 8] = b"S2T-NET1";
pub const POLICY_MAGIC: &[u8; 8] = b"S2T-POL1";

pub fn encode(net: &Network, magic: &[u8; 8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + net.num_params() * 8);
    out.extend_from_slice(magic);
    put_u32(&mut out, net.input_shape().len());
    for &d in net.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, net.feature_index());
    put_u32(&mut out, net.layers().len());
    for l in net.layers() {
        let (kind, stride) = match l {
            Layer::Dense { .. } => (0u8, 0),
            Layer::Conv3x3 { stride, .. } => (1, *stride),
            Layer::AvgPool2 => (2, 0),
            Layer::GlobalAvgPool => (3, 0),
            Layer::Relu => (4, 0),
        };
        out.push(kind);
        put_u32(&mut out, stride);
        let params = l.params();
        put_u32(&mut out, params.len());
        for t in params {
            put_u32(&mut out, t.shape().len());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8], magic: &[u8; 8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != magic {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let rank = r.u32()?;
    let input_shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let feature_index = r.u32()?;
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.take(1)?[0];
        let stride = r.u32()?;
        let n = r.u32()?;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::from_vec(&shape, data)?);
        }
        let layer = match (kind, tensors.len()) {
            (0, 2) => {
                let bias = tensors.pop().unwrap();
                Layer::Dense {
                    weight: tensors.pop().unwrap(),
                    bias,
                }
            }
            (1, 2) => {
                let bias = tensors.pop().unwrap();
                Layer::Conv3x3 {
                    weight: tensors.pop().unwrap(),
                    bias,
                    stride,
                }
            }
            (2, 0) => Layer::AvgPool2,
            (3, 0) => Layer::GlobalAvgPool,
            (4, 0) => Layer::Relu,
            _ => {
                return Err(Error::format(
                    "checkpoint",
                    format!("bad layer kind {kind}"),
                ))
            }
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Network::new(input_shape, layers, feature_index)
}

pub fn save(net: &Network, magic: &[u8; 8], path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &encode(net, magic))
}

pub fn load(path: &Path, magic: &[u8; 8]) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, magic)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}
