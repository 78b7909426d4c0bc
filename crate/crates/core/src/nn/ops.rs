//! Convolution, transposed convolution, batch normalization and
//! activation functions for inference.
//!
//! `conv3d` is the sliding-window form of `y = W x` with `W` the unrolled
//! (Toeplitz-like) convolution matrix; `conv_transpose3d` computes
//! `x' = W^T y'` for the same kernel array, so the two are exact adjoints.
//! Accumulation order is fixed, results are bit-reproducible.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Kernel array, `(out, in, k, k, k)` for convolution and
/// `(in, out, k, k, k)` for transposed convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub dims: [usize; 5],
    pub data: Vec<f32>,
}

impl Kernel {
    pub fn new(dims: [usize; 5], data: Vec<f32>) -> Result<Self> {
        if dims[2] != dims[3] || dims[3] != dims[4] {
            return Err(Error::Shape(format!("kernel must be cubic, got {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!("kernel {dims:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn size(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    fn at(&self, a: usize, b: usize) -> &[f32] {
        let k3 = self.dims[2] * self.dims[3] * self.dims[4];
        let start = (a * self.dims[1] + b) * k3;
        &self.data[start..start + k3]
    }
}

/// Output edge of a convolution: `floor((s + 2p - k) / stride) + 1`.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output edge of a transposed convolution: `(s - 1) stride - 2p + k`.
pub fn conv_transpose_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if input == 0 || stride == 0 {
        return None;
    }
    ((input - 1) * stride + kernel).checked_sub(2 * padding).filter(|&n| n > 0)
}

/// Range of output indices `o` whose input index `o*stride + k - pad`
/// falls in `0..len`.
#[inline]
fn valid_range(out_len: usize, len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // o*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // o*stride + k - pad <= len - 1
    let hi = if len + pad > k { (len + pad - 1 - k) / stride + 1 } else { 0 };
    (lo.min(out_len), hi.min(out_len))
}

/// 3D convolution with optional per-output-channel bias.
pub fn conv3d(
    x: &Tensor,
    kernel: &Kernel,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [cin, d, h, w] = x.shape();
    let [cout, kin, k, _, _] = kernel.dims;
    if kin != cin {
        return Err(Error::Shape(format!(
            "conv3d expects {kin} input channels, got {cin}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::Shape(format!("bias has {} entries for {cout} channels", b.len())));
        }
    }
    let out_dim = |s: usize| {
        conv_output_size(s, k, stride, padding).ok_or_else(|| {
            Error::Shape(format!("spatial size {s} too small for kernel {k} with padding {padding}"))
        })
    };
    let (od, oh, ow) = (out_dim(d)?, out_dim(h)?, out_dim(w)?);
    let mut out = Tensor::zeros([cout, od, oh, ow]);
    let plane = oh * ow;
    let vol = od * plane;
    let in_plane = h * w;
    let in_vol = d * in_plane;
    let input = x.data();
    let out_data = out.data_mut();
    for oc in 0..cout {
        let dst = &mut out_data[oc * vol..(oc + 1) * vol];
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[oc]);
        }
        for ic in 0..cin {
            let src = &input[ic * in_vol..(ic + 1) * in_vol];
            let wk = kernel.at(oc, ic);
            for kz in 0..k {
                let (z0, z1) = valid_range(od, d, stride, kz, padding);
                for ky in 0..k {
                    let (y0, y1) = valid_range(oh, h, stride, ky, padding);
                    for kx in 0..k {
                        let (x0, x1) = valid_range(ow, w, stride, kx, padding);
                        if x0 >= x1 {
                            continue;
                        }
                        let wv = wk[(kz * k + ky) * k + kx];
                        for oz in z0..z1 {
                            let iz = oz * stride + kz - padding;
                            for oy in y0..y1 {
                                let iy = oy * stride + ky - padding;
                                let row = &src[iz * in_plane + iy * w..iz * in_plane + (iy + 1) * w];
                                let orow = &mut dst[oz * plane + oy * ow..oz * plane + (oy + 1) * ow];
                                let ix0 = x0 * stride + kx - padding;
                                if stride == 1 {
                                    let n = x1 - x0;
                                    for (o, &i) in orow[x0..x1].iter_mut().zip(&row[ix0..ix0 + n]) {
                                        *o += wv * i;
                                    }
                                } else {
                                    for (j, o) in orow[x0..x1].iter_mut().enumerate() {
                                        *o += wv * row[ix0 + j * stride];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 3D transposed convolution (adjoint of [`conv3d`]) with optional bias.
pub fn conv_transpose3d(
    x: &Tensor,
    kernel: &Kernel,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [cin, d, h, w] = x.shape();
    let [kin, cout, k, _, _] = kernel.dims;
    if kin != cin {
        return Err(Error::Shape(format!(
            "conv_transpose3d expects {kin} input channels, got {cin}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::Shape(format!("bias has {} entries for {cout} channels", b.len())));
        }
    }
    let out_dim = |s: usize| {
        conv_transpose_output_size(s, k, stride, padding)
            .ok_or_else(|| Error::Shape(format!("invalid transposed geometry for input {s}")))
    };
    let (od, oh, ow) = (out_dim(d)?, out_dim(h)?, out_dim(w)?);
    let mut out = Tensor::zeros([cout, od, oh, ow]);
    let plane = oh * ow;
    let vol = od * plane;
    let in_plane = h * w;
    let in_vol = d * in_plane;
    let input = x.data();
    let out_data = out.data_mut();
    for oc in 0..cout {
        let dst = &mut out_data[oc * vol..(oc + 1) * vol];
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[oc]);
        }
        for ic in 0..cin {
            let src = &input[ic * in_vol..(ic + 1) * in_vol];
            let wk = kernel.at(ic, oc);
            for kz in 0..k {
                // input positions i whose output i*stride + k - pad lies inside
                let (z0, z1) = valid_range(d, od, stride, kz, padding);
                for ky in 0..k {
                    let (y0, y1) = valid_range(h, oh, stride, ky, padding);
                    for kx in 0..k {
                        let (x0, x1) = valid_range(w, ow, stride, kx, padding);
                        if x0 >= x1 {
                            continue;
                        }
                        let wv = wk[(kz * k + ky) * k + kx];
                        for iz in z0..z1 {
                            let oz = iz * stride + kz - padding;
                            for iy in y0..y1 {
                                let oy = iy * stride + ky - padding;
                                let row = &src[iz * in_plane + iy * w..iz * in_plane + (iy + 1) * w];
                                let orow = &mut dst[oz * plane + oy * ow..oz * plane + (oy + 1) * ow];
                                let ox0 = x0 * stride + kx - padding;
                                if stride == 1 {
                                    let n = x1 - x0;
                                    for (o, &i) in orow[ox0..ox0 + n].iter_mut().zip(&row[x0..x1]) {
                                        *o += wv * i;
                                    }
                                } else {
                                    for (j, &i) in row[x0..x1].iter().enumerate() {
                                        orow[ox0 + j * stride] += wv * i;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inference batch normalization with running statistics:
/// `y = gamma (x - mean) / sqrt(var + eps) + beta` per channel.
pub fn batchnorm_infer(
    mut x: Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let c = x.channels();
    if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&n| n != c) {
        return Err(Error::Shape(format!("batchnorm parameters must have {c} entries")));
    }
    let per = x.len() / c.max(1);
    for ch in 0..c {
        let denom_sq = var[ch] + eps;
        if denom_sq.is_nan() || denom_sq <= 0.0 {
            return Err(Error::Numeric(format!(
                "channel {ch}: var + eps = {denom_sq} is not positive"
            )));
        }
        let denom = denom_sq.sqrt();
        let (g, b, m) = (gamma[ch], beta[ch], mean[ch]);
        for v in &mut x.data_mut()[ch * per..(ch + 1) * per] {
            *v = g * (*v - m) / denom + b;
        }
    }
    Ok(x)
}

pub fn leaky_relu(v: f32, slope: f32) -> f32 {
    v.max(slope * v)
}

/// Logistic function without overflow for large `|v|`.
pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn tanh(v: f32) -> f32 {
    v.tanh()
}
