//! `G3DW` portable weights format, little-endian throughout:
//!
//! ```text
//! magic        4 bytes  "G3DW"
//! version      u32      1
//! d            u32      input channels of layer 1 (latent depth / 1)
//! leaky_slope  f32
//! bn_eps       f32
//! component    u8       0 = generator, 1 = discriminator
//! layer_count  u32
//! per layer, in network order:
//!   kind       u8       0 = conv3d, 1 = convtransp3d
//!   filters    u32
//!   kernel     u32      edge k of the cubic kernel
//!   stride     u32
//!   padding    u32
//!   flags      u8       bit 0 = batchnorm, bit 1 = bias
//!   activation u8       0 = leakyrelu, 1 = tanh, 2 = sigmoid
//!   kernel     f32[]    conv3d: (filters, in, k, k, k); convtransp3d: (in, filters, k, k, k)
//!   bias       f32[filters]                      if flags bit 1
//!   gamma, beta, running_mean, running_var  f32[filters] each, if flags bit 0
//! crc32        u32      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! `in` of layer 1 is `d`; every later layer takes the previous layer's
//! `filters`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::network::{Activation, BatchNorm, Component, Layer, LayerKind, LayerSpec, NetworkWeights};
use crate::nn::ops::Kernel;

pub const MAGIC: &[u8; 4] = b"G3DW";
pub const VERSION: u32 = 1;

const FLAG_BATCHNORM: u8 = 1;
const FLAG_BIAS: u8 = 2;

/// Upper bound on any single declared dimension, to reject garbage before
/// allocating.
const MAX_DIM: u32 = 1 << 16;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    out.reserve(vs.len() * 4);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

/// Serializes weights to the `G3DW` byte layout.
pub fn write_weights(w: &NetworkWeights) -> Result<Vec<u8>> {
    w.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, to_u32(w.input_channels, "input channels")?);
    out.extend_from_slice(&w.leaky_slope.to_le_bytes());
    out.extend_from_slice(&w.bn_eps.to_le_bytes());
    out.push(match w.component {
        Component::Generator => 0,
        Component::Discriminator => 1,
    });
    put_u32(&mut out, to_u32(w.layers.len(), "layer count")?);
    for layer in &w.layers {
        let s = &layer.spec;
        out.push(match s.kind {
            LayerKind::Conv3d => 0,
            LayerKind::ConvTranspose3d => 1,
        });
        put_u32(&mut out, to_u32(s.filters, "filters")?);
        put_u32(&mut out, to_u32(s.kernel, "kernel")?);
        put_u32(&mut out, to_u32(s.stride, "stride")?);
        put_u32(&mut out, to_u32(s.padding, "padding")?);
        let mut flags = 0;
        if s.batchnorm {
            flags |= FLAG_BATCHNORM;
        }
        if s.bias {
            flags |= FLAG_BIAS;
        }
        out.push(flags);
        out.push(match s.activation {
            Activation::LeakyRelu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
        });
        put_f32s(&mut out, &layer.kernel.data);
        if let Some(b) = &layer.bias {
            put_f32s(&mut out, b);
        }
        if let Some(bn) = &layer.batchnorm {
            put_f32s(&mut out, &bn.gamma);
            put_f32s(&mut out, &bn.beta);
            put_f32s(&mut out, &bn.running_mean);
            put_f32s(&mut out, &bn.running_var);
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated weights: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u32()?;
        if v > MAX_DIM {
            return Err(Error::Format(format!("{what} {v} exceeds {MAX_DIM}")));
        }
        Ok(v as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("array too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Parses and validates a `G3DW` byte buffer.
pub fn read_weights(bytes: &[u8]) -> Result<NetworkWeights> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected G3DW".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let input_channels = r.dim("input channels")?;
    let leaky_slope = r.f32()?;
    let bn_eps = r.f32()?;
    let component = match r.u8()? {
        0 => Component::Generator,
        1 => Component::Discriminator,
        c => return Err(Error::Format(format!("unknown component tag {c}"))),
    };
    let count = r.dim("layer count")?;
    let mut layers = Vec::with_capacity(count.min(64));
    let mut cin = input_channels;
    for _ in 0..count {
        let kind = match r.u8()? {
            0 => LayerKind::Conv3d,
            1 => LayerKind::ConvTranspose3d,
            t => return Err(Error::Format(format!("unknown layer kind {t}"))),
        };
        let filters = r.dim("filters")?;
        let kernel = r.dim("kernel")?;
        let stride = r.dim("stride")?;
        let padding = r.dim("padding")?;
        let flags = r.u8()?;
        if flags & !(FLAG_BATCHNORM | FLAG_BIAS) != 0 {
            return Err(Error::Format(format!("unknown layer flags {flags:#04x}")));
        }
        let activation = match r.u8()? {
            0 => Activation::LeakyRelu,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            a => return Err(Error::Format(format!("unknown activation {a}"))),
        };
        let dims = match kind {
            LayerKind::Conv3d => [filters, cin, kernel, kernel, kernel],
            LayerKind::ConvTranspose3d => [cin, filters, kernel, kernel, kernel],
        };
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Format("kernel too large".into()))?;
        let kernel_data = Kernel::new(dims, r.f32s(n)?)?;
        let bias = if flags & FLAG_BIAS != 0 { Some(r.f32s(filters)?) } else { None };
        let batchnorm = if flags & FLAG_BATCHNORM != 0 {
            Some(BatchNorm {
                gamma: r.f32s(filters)?,
                beta: r.f32s(filters)?,
                running_mean: r.f32s(filters)?,
                running_var: r.f32s(filters)?,
            })
        } else {
            None
        };
        layers.push(Layer {
            spec: LayerSpec {
                kind,
                filters,
                kernel,
                stride,
                padding,
                batchnorm: batchnorm.is_some(),
                bias: bias.is_some(),
                activation,
            },
            in_channels: cin,
            kernel: kernel_data,
            bias,
            batchnorm,
        });
        cin = filters;
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes before checksum",
            body.len() - r.pos
        )));
    }
    let w = NetworkWeights { component, input_channels, leaky_slope, bn_eps, layers };
    w.validate()?;
    Ok(w)
}

pub fn save_weights(w: &NetworkWeights, path: &Path) -> Result<()> {
    fs::write(path, write_weights(w)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights> {
    read_weights(&fs::read(path)?)
}
