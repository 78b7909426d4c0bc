//! Deterministic inference of the 3D generator and discriminator.

pub mod latent;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod weights;

pub use latent::{interpolate_latent, sample_noise, LatentVector};
pub use network::{
    generated_edge, latent_edge_for, Activation, Component, DiscriminatorScore, Layer, LayerKind,
    LayerSpec, NetworkWeights,
};
pub use ops::{batchnorm_infer, conv3d, conv_transpose3d, leaky_relu, sigmoid, tanh, Kernel};
pub use tensor::Tensor;
pub use weights::{load_weights, read_weights, save_weights, write_weights};
