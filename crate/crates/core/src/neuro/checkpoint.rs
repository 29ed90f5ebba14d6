//! Binary model checkpoints.
//!
//! Layout, little-endian: magic `VXP1`, `u32` input channels, `u32` layer
//! count, one record per layer (`u8` tag then `u32` hyper-parameters), then
//! for each parametric layer its weights and biases as `u32` count plus
//! `f32` values, and finally a CRC-32 of everything before it.

use std::path::Path;

use crate::error::{Error, Result};

use super::network::{Conv1d, Dense, Layer, Network};

const MAGIC: &[u8; 4] = b"VXP1";
const WHAT: &str = "checkpoint";

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, net.input_channels);
    put_u32(&mut out, net.layers.len());
    for layer in &net.layers {
        match layer {
            Layer::Conv1d(c) => {
                out.push(1);
                for v in [c.in_channels, c.out_channels, c.kernel, c.stride] {
                    put_u32(&mut out, v);
                }
            }
            Layer::Relu => out.push(2),
            Layer::MaxPool { size } => {
                out.push(3);
                put_u32(&mut out, *size);
            }
            Layer::Dense(d) => {
                out.push(4);
                put_u32(&mut out, d.inputs);
                put_u32(&mut out, d.outputs);
            }
            Layer::GlobalAvgPool => out.push(5),
        }
    }
    for (w, b) in net.layers.iter().filter_map(Layer::params) {
        for blob in [w, b] {
            put_u32(&mut out, blob.len());
            for &v in blob {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::format(WHAT, "missing VXP1 header"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::format(WHAT, "checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let input_channels = r.u32()?;
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let layer = match r.u8()? {
            1 => {
                let (in_channels, out_channels, kernel, stride) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
                Layer::Conv1d(Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    weight: Vec::new(),
                    bias: Vec::new(),
                })
            }
            2 => Layer::Relu,
            3 => Layer::MaxPool { size: r.u32()? },
            4 => {
                let (inputs, outputs) = (r.u32()?, r.u32()?);
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weight: Vec::new(),
                    bias: Vec::new(),
                })
            }
            5 => Layer::GlobalAvgPool,
            tag => return Err(Error::format(WHAT, format!("unknown layer tag {tag}"))),
        };
        layers.push(layer);
    }
    for layer in &mut layers {
        let expected = match layer {
            Layer::Conv1d(c) => Some((c.out_channels * c.kernel * c.in_channels, c.out_channels)),
            Layer::Dense(d) => Some((d.outputs * d.inputs, d.outputs)),
            _ => None,
        };
        if let Some((nw, nb)) = expected {
            let weight = r.blob(nw)?;
            let bias = r.blob(nb)?;
            match layer {
                Layer::Conv1d(c) => {
                    c.weight = weight;
                    c.bias = bias;
                }
                Layer::Dense(d) => {
                    d.weight = weight;
                    d.bias = bias;
                }
                _ => unreachable!(),
            }
        }
    }
    if r.pos != body.len() {
        return Err(Error::format(WHAT, "trailing bytes"));
    }
    Ok(Network {
        input_channels,
        layers,
    })
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(WHAT, "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn blob(&mut self, expected: usize) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n != expected {
            return Err(Error::format(WHAT, format!("blob has {n} values, expected {expected}")));
        }
        Ok(self
            .take(n.checked_mul(4).ok_or_else(|| Error::format(WHAT, "oversized blob"))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}
