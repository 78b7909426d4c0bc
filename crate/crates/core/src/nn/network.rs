//! Generator and discriminator of the fully convolutional 3D GAN.
//!
//! Layer table (filter counts scale with `ngf` / `ndf`, 64 in the
//! reference model):
//!
//! | # | generator              | k | s | p | BN  | act   |
//! |---|------------------------|---|---|---|-----|-------|
//! | 1 | ConvTransp3D `8 ngf`   | 4 | 1 | 0 | yes | leaky |
//! | 2 | ConvTransp3D `4 ngf`   | 4 | 2 | 1 | yes | leaky |
//! | 3 | ConvTransp3D `2 ngf`   | 4 | 2 | 1 | yes | leaky |
//! | 4 | ConvTransp3D `ngf`     | 4 | 2 | 1 | yes | leaky |
//! | 5 | Conv3D `ngf`           | 3 | 1 | 1 | yes | leaky |
//! | 6 | ConvTransp3D `1`       | 4 | 2 | 1 | no  | tanh  |
//!
//! | # | discriminator    | k | s | p | BN  | act     |
//! |---|------------------|---|---|---|-----|---------|
//! | 1 | Conv3D `ndf`     | 4 | 2 | 1 | no  | leaky   |
//! | 2 | Conv3D `2 ndf`   | 4 | 2 | 1 | yes | leaky   |
//! | 3 | Conv3D `4 ndf`   | 4 | 2 | 1 | yes | leaky   |
//! | 4 | Conv3D `8 ndf`   | 4 | 2 | 1 | yes | leaky   |
//! | 5 | Conv3D `1`       | 4 | 1 | 0 | no  | sigmoid |
//!
//! A latent grid of spatial edge `m` yields a generated edge of
//! `16 m + 48` (64 for `m = 1`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::latent::LatentVector;
use crate::nn::ops::{
    batchnorm_infer, conv3d, conv_transpose3d, conv_transpose_output_size, conv_output_size,
    leaky_relu, sigmoid, Kernel,
};
use crate::nn::tensor::{image_to_tensor, tensor_to_image, Tensor};
use crate::volume::{GrayImage3D, DEFAULT_VOXEL_SIZE};

/// Training / discriminator input edge.
pub const TILE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv3d,
    ConvTranspose3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Sigmoid,
}

/// Geometry and flags of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub batchnorm: bool,
    pub bias: bool,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

/// A convolution followed by optional batch normalization and an
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_channels: usize,
    pub kernel: Kernel,
    pub bias: Option<Vec<f32>>,
    pub batchnorm: Option<BatchNorm>,
}

impl Layer {
    pub fn parameter_count(&self) -> usize {
        self.kernel.data.len()
            + self.bias.as_ref().map_or(0, Vec::len)
            + self.batchnorm.as_ref().map_or(0, |b| b.gamma.len() + b.beta.len())
    }

    fn output_edge(&self, input: usize) -> Option<usize> {
        let s = &self.spec;
        match s.kind {
            LayerKind::Conv3d => conv_output_size(input, s.kernel, s.stride, s.padding),
            LayerKind::ConvTranspose3d => {
                conv_transpose_output_size(input, s.kernel, s.stride, s.padding)
            }
        }
    }

    fn forward(&self, x: &Tensor, leaky_slope: f32, bn_eps: f32) -> Result<Tensor> {
        let s = &self.spec;
        let bias = self.bias.as_deref();
        let mut y = match s.kind {
            LayerKind::Conv3d => conv3d(x, &self.kernel, bias, s.stride, s.padding)?,
            LayerKind::ConvTranspose3d => conv_transpose3d(x, &self.kernel, bias, s.stride, s.padding)?,
        };
        if let Some(bn) = &self.batchnorm {
            y = batchnorm_infer(y, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var, bn_eps)?;
        }
        Ok(match s.activation {
            Activation::LeakyRelu => y.map(|v| leaky_relu(v, leaky_slope)),
            Activation::Tanh => y.map(f32::tanh),
            Activation::Sigmoid => y.map(sigmoid),
        })
    }
}

/// Layer geometry of the reference architecture:
/// `(kind, filter multiplier, kernel, stride, padding, batchnorm, activation)`.
type Row = (LayerKind, usize, usize, usize, usize, bool, Activation);

const GENERATOR_ROWS: [Row; 6] = [
    (LayerKind::ConvTranspose3d, 8, 4, 1, 0, true, Activation::LeakyRelu),
    (LayerKind::ConvTranspose3d, 4, 4, 2, 1, true, Activation::LeakyRelu),
    (LayerKind::ConvTranspose3d, 2, 4, 2, 1, true, Activation::LeakyRelu),
    (LayerKind::ConvTranspose3d, 1, 4, 2, 1, true, Activation::LeakyRelu),
    (LayerKind::Conv3d, 1, 3, 1, 1, true, Activation::LeakyRelu),
    (LayerKind::ConvTranspose3d, 0, 4, 2, 1, false, Activation::Tanh),
];

const DISCRIMINATOR_ROWS: [Row; 5] = [
    (LayerKind::Conv3d, 1, 4, 2, 1, false, Activation::LeakyRelu),
    (LayerKind::Conv3d, 2, 4, 2, 1, true, Activation::LeakyRelu),
    (LayerKind::Conv3d, 4, 4, 2, 1, true, Activation::LeakyRelu),
    (LayerKind::Conv3d, 8, 4, 2, 1, true, Activation::LeakyRelu),
    (LayerKind::Conv3d, 0, 4, 1, 0, false, Activation::Sigmoid),
];

fn reference_rows(component: Component) -> &'static [Row] {
    match component {
        Component::Generator => &GENERATOR_ROWS,
        Component::Discriminator => &DISCRIMINATOR_ROWS,
    }
}

/// All parameters of one network plus the metadata needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub component: Component,
    /// Input channels of the first layer: the latent depth `d` for a
    /// generator, 1 for a discriminator.
    pub input_channels: usize,
    pub leaky_slope: f32,
    pub bn_eps: f32,
    pub layers: Vec<Layer>,
}

pub const DEFAULT_LEAKY_SLOPE: f32 = 0.2;
pub const DEFAULT_BN_EPS: f32 = 1e-5;
pub const DEFAULT_LATENT_DIM: usize = 512;

impl NetworkWeights {
    /// Reference generator with random weights (DCGAN-style `N(0, 0.02)`
    /// kernels, `N(1, 0.02)` batchnorm scale, unit running variance).
    /// Layers without batchnorm carry a bias.
    pub fn random_generator(latent_dim: usize, ngf: usize, seed: u64) -> Self {
        Self::random(Component::Generator, latent_dim, ngf, seed)
    }

    /// Reference discriminator with random weights.
    pub fn random_discriminator(ndf: usize, seed: u64) -> Self {
        Self::random(Component::Discriminator, 1, ndf, seed)
    }

    fn random(component: Component, input_channels: usize, base: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0f32, 0.02).expect("valid normal");
        let g = Normal::new(1.0f32, 0.02).expect("valid normal");
        let mut layers = Vec::new();
        let mut cin = input_channels;
        for &(kind, mult, k, stride, padding, bn, act) in reference_rows(component) {
            let filters = if mult == 0 { 1 } else { mult * base };
            let dims = match kind {
                LayerKind::Conv3d => [filters, cin, k, k, k],
                LayerKind::ConvTranspose3d => [cin, filters, k, k, k],
            };
            let n: usize = dims.iter().product();
            let kernel = Kernel::new(dims, (0..n).map(|_| w.sample(&mut rng)).collect()).expect("consistent dims");
            let batchnorm = bn.then(|| BatchNorm {
                gamma: (0..filters).map(|_| g.sample(&mut rng)).collect(),
                beta: vec![0.0; filters],
                running_mean: vec![0.0; filters],
                running_var: vec![1.0; filters],
            });
            let bias = (!bn).then(|| vec![0.0; filters]);
            layers.push(Layer {
                spec: LayerSpec {
                    kind,
                    filters,
                    kernel: k,
                    stride,
                    padding,
                    batchnorm: bn,
                    bias: !bn,
                    activation: act,
                },
                in_channels: cin,
                kernel,
                bias,
                batchnorm,
            });
            cin = filters;
        }
        Self {
            component,
            input_channels,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            bn_eps: DEFAULT_BN_EPS,
            layers,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Checks channel chaining, parameter shapes and the reference layer
    /// sequence (kinds, kernels, strides, paddings, batchnorm placement,
    /// activations, single output channel).
    pub fn validate(&self) -> Result<()> {
        let rows = reference_rows(self.component);
        if self.layers.len() != rows.len() {
            return Err(Error::Validation(format!(
                "{:?} needs {} layers, found {}",
                self.component,
                rows.len(),
                self.layers.len()
            )));
        }
        if self.component == Component::Discriminator && self.input_channels != 1 {
            return Err(Error::Validation("discriminator input must have one channel".into()));
        }
        if !(self.bn_eps >= 0.0) || !self.leaky_slope.is_finite() {
            return Err(Error::Validation("invalid network metadata".into()));
        }
        let mut cin = self.input_channels;
        for (i, (layer, &(kind, mult, k, stride, padding, bn, act))) in
            self.layers.iter().zip(rows).enumerate()
        {
            let s = &layer.spec;
            let row = i + 1;
            if s.kind != kind || s.kernel != k || s.stride != stride || s.padding != padding {
                return Err(Error::Validation(format!(
                    "layer {row}: expected {kind:?} k={k} s={stride} p={padding}, found {:?} k={} s={} p={}",
                    s.kind, s.kernel, s.stride, s.padding
                )));
            }
            if s.batchnorm != bn || s.activation != act {
                return Err(Error::Validation(format!(
                    "layer {row}: batchnorm/activation differ from the reference architecture"
                )));
            }
            if s.filters == 0 || (mult == 0 && s.filters != 1) {
                return Err(Error::Validation(format!("layer {row}: invalid filter count {}", s.filters)));
            }
            if layer.in_channels != cin {
                return Err(Error::Validation(format!(
                    "layer {row}: expects {} input channels, previous layer gives {cin}",
                    layer.in_channels
                )));
            }
            let dims = match kind {
                LayerKind::Conv3d => [s.filters, cin, k, k, k],
                LayerKind::ConvTranspose3d => [cin, s.filters, k, k, k],
            };
            if layer.kernel.dims != dims || layer.kernel.data.len() != dims.iter().product::<usize>() {
                return Err(Error::Validation(format!("layer {row}: kernel shape mismatch")));
            }
            if s.bias != layer.bias.is_some() || layer.bias.as_ref().is_some_and(|b| b.len() != s.filters) {
                return Err(Error::Validation(format!("layer {row}: bias mismatch")));
            }
            match &layer.batchnorm {
                Some(b) if s.batchnorm => {
                    if [&b.gamma, &b.beta, &b.running_mean, &b.running_var]
                        .iter()
                        .any(|v| v.len() != s.filters)
                    {
                        return Err(Error::Validation(format!("layer {row}: batchnorm shape mismatch")));
                    }
                }
                None if !s.batchnorm => {}
                _ => return Err(Error::Validation(format!("layer {row}: batchnorm flag mismatch"))),
            }
            cin = s.filters;
        }
        Ok(())
    }

    /// Spatial edge produced by each layer for an input edge.
    pub fn layer_edges(&self, input_edge: usize) -> Option<Vec<usize>> {
        let mut edge = input_edge;
        self.layers
            .iter()
            .map(|l| {
                edge = l.output_edge(edge)?;
                Some(edge)
            })
            .collect()
    }

    fn expect(&self, component: Component) -> Result<()> {
        if self.component != component {
            return Err(Error::Shape(format!(
                "expected {component:?} weights, got {:?}",
                self.component
            )));
        }
        Ok(())
    }

    /// Runs every layer and keeps each post-activation tensor.
    pub fn dump_activations(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        if input.channels() != self.input_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.input_channels,
                input.channels()
            )));
        }
        let mut out: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = out.last().unwrap_or(input);
            let y = layer.forward(x, self.leaky_slope, self.bn_eps)?;
            out.push(y);
        }
        Ok(out)
    }

    fn run(&self, input: &Tensor) -> Result<Tensor> {
        if input.channels() != self.input_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.input_channels,
                input.channels()
            )));
        }
        let mut x = std::borrow::Cow::Borrowed(input);
        for layer in &self.layers {
            x = std::borrow::Cow::Owned(layer.forward(&x, self.leaky_slope, self.bn_eps)?);
        }
        Ok(x.into_owned())
    }

    /// Raw generator output in `[-1, 1]`.
    pub fn generate_tensor(&self, z: &LatentVector) -> Result<Tensor> {
        self.expect(Component::Generator)?;
        self.run(z.tensor())
    }

    /// Generated gray volume, `v = round(255 (y + 1) / 2)`. The output edge
    /// is `16 m + 48` per latent spatial edge `m`.
    pub fn generate(&self, z: &LatentVector) -> Result<GrayImage3D> {
        tensor_to_image(&self.generate_tensor(z)?, DEFAULT_VOXEL_SIZE)
    }

    /// Probability that a 64^3 volume is real. Larger volumes are split
    /// into disjoint 64^3 tiles from the origin and the tile scores
    /// averaged; leftover voxels beyond the last full tile are ignored.
    pub fn score(&self, img: &GrayImage3D) -> Result<DiscriminatorScore> {
        self.expect(Component::Discriminator)?;
        let dims = img.dims();
        if dims.iter().any(|&d| d < TILE) {
            return Err(Error::Shape(format!(
                "discriminator needs at least {TILE}^3 voxels, got {dims:?}"
            )));
        }
        let counts = dims.map(|d| d / TILE);
        let mut scores = Vec::new();
        for tz in 0..counts[2] {
            for ty in 0..counts[1] {
                for tx in 0..counts[0] {
                    let tile = if dims == [TILE; 3] {
                        img.clone()
                    } else {
                        img.crop([tx * TILE, ty * TILE, tz * TILE], [TILE; 3])?
                    };
                    let y = self.run(&image_to_tensor(&tile))?;
                    if y.len() != 1 {
                        return Err(Error::Shape(format!("discriminator produced {} outputs", y.len())));
                    }
                    scores.push(y.data()[0] as f64);
                }
            }
        }
        let score = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(DiscriminatorScore {
            score,
            tiled: scores.len() > 1 || dims != [TILE; 3],
            tile_scores: scores,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorScore {
    pub score: f64,
    /// Set when the input was not a single 64^3 tile.
    pub tiled: bool,
    pub tile_scores: Vec<f64>,
}

/// Generator output edge for latent spatial edge `m`.
pub fn generated_edge(m: usize) -> usize {
    16 * m + 48
}

/// Smallest latent edge whose output covers `edge` voxels.
pub fn latent_edge_for(edge: usize) -> usize {
    edge.saturating_sub(48).div_ceil(16).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::latent::sample_noise;

    #[test]
    fn reference_parameter_counts() {
        // kernels only; batchnorm affine parameters add ~2k more
        let g = NetworkWeights::random_generator(512, 64, 0);
        let d = NetworkWeights::random_discriminator(64, 0);
        g.validate().unwrap();
        d.validate().unwrap();
        let gk: usize = g.layers.iter().map(|l| l.kernel.data.len()).sum();
        let dk: usize = d.layers.iter().map(|l| l.kernel.data.len()).sum();
        assert_eq!(gk, 27_901_952);
        assert_eq!(dk, 11_046_912);
        let filters: Vec<usize> = g.layers.iter().map(|l| l.spec.filters).collect();
        assert_eq!(filters, vec![512, 256, 128, 64, 64, 1]);
    }

    #[test]
    fn layer_edges_follow_size_law() {
        let g = NetworkWeights::random_generator(8, 2, 0);
        assert_eq!(g.layer_edges(1).unwrap(), vec![4, 8, 16, 32, 32, 64]);
        for m in [1, 2, 3, 10] {
            assert_eq!(*g.layer_edges(m).unwrap().last().unwrap(), generated_edge(m));
        }
        let d = NetworkWeights::random_discriminator(2, 0);
        assert_eq!(d.layer_edges(64).unwrap(), vec![32, 16, 8, 4, 1]);
        assert_eq!(latent_edge_for(200), 10);
        assert_eq!(latent_edge_for(64), 1);
        assert_eq!(latent_edge_for(65), 2);
    }

    #[test]
    fn generator_dump_matches_forward() {
        let g = NetworkWeights::random_generator(16, 2, 1);
        let z = sample_noise(16, 1, 1, 1, 5);
        let acts = g.dump_activations(z.tensor()).unwrap();
        let edges: Vec<usize> = acts.iter().map(|t| t.spatial()[0]).collect();
        assert_eq!(edges, vec![4, 8, 16, 32, 32, 64]);
        let out = g.generate_tensor(&z).unwrap();
        assert_eq!(acts.last().unwrap(), &out);
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let img = g.generate(&z).unwrap();
        assert_eq!(img.dims(), [64; 3]);
        assert_eq!(g.generate(&z).unwrap(), img);
    }

    #[test]
    fn generator_rejects_wrong_latent_depth() {
        let g = NetworkWeights::random_generator(16, 2, 1);
        assert!(matches!(g.generate(&sample_noise(8, 1, 1, 1, 0)), Err(Error::Shape(_))));
        let d = NetworkWeights::random_discriminator(2, 0);
        assert!(d.generate(&sample_noise(1, 1, 1, 1, 0)).is_err());
    }

    #[test]
    fn discriminator_scores() {
        let d = NetworkWeights::random_discriminator(2, 3);
        let img = GrayImage3D::from_fn([64; 3], 1.0, |x, y, z| ((x * 7 + y * 3 + z) % 256) as u8).unwrap();
        let s = d.score(&img).unwrap();
        assert!((0.0..=1.0).contains(&s.score));
        assert!(!s.tiled);
        let acts = d.dump_activations(&image_to_tensor(&img)).unwrap();
        let edges: Vec<usize> = acts.iter().map(|t| t.spatial()[0]).collect();
        assert_eq!(edges, vec![32, 16, 8, 4, 1]);
        assert_eq!(acts.last().unwrap().data()[0] as f64, s.score);

        // zero final kernel and bias -> sigmoid(0)
        let mut zero = d.clone();
        let last = zero.layers.last_mut().unwrap();
        last.kernel.data.iter_mut().for_each(|v| *v = 0.0);
        last.bias.as_mut().unwrap().iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(zero.score(&img).unwrap().score, 0.5);

        let small = GrayImage3D::filled([63, 64, 64], 1.0, 0).unwrap();
        assert!(matches!(d.score(&small), Err(Error::Shape(_))));
    }

    #[test]
    fn discriminator_tiles_larger_volumes() {
        let d = NetworkWeights::random_discriminator(1, 4);
        let img = GrayImage3D::from_fn([128; 3], 1.0, |x, y, z| ((x ^ y ^ z) & 0xff) as u8).unwrap();
        let s = d.score(&img).unwrap();
        assert_eq!(s.tile_scores.len(), 8);
        assert!(s.tiled);
        let mut expected = Vec::new();
        for tz in 0..2 {
            for ty in 0..2 {
                for tx in 0..2 {
                    let tile = img.crop([64 * tx, 64 * ty, 64 * tz], [64; 3]).unwrap();
                    expected.push(d.score(&tile).unwrap().score);
                }
            }
        }
        assert_eq!(s.tile_scores, expected);
        assert_eq!(s.score, expected.iter().sum::<f64>() / 8.0);
    }

    #[test]
    fn validation_catches_layer_order() {
        let mut g = NetworkWeights::random_generator(8, 2, 0);
        g.layers.swap(3, 4);
        assert!(matches!(g.validate(), Err(Error::Validation(_))));
        let mut g = NetworkWeights::random_generator(8, 2, 0);
        g.layers[2].in_channels += 1;
        assert!(g.validate().is_err());
        let mut g = NetworkWeights::random_generator(8, 2, 0);
        g.layers.pop();
        assert!(g.validate().is_err());
    }
}
