use crate::error::{Error, Result};
use crate::volume::GrayImage3D;

/// Dense `(channels, depth, height, width)` tensor, width fastest.
///
/// Spatial axes map onto volume axes as `width = x`, `height = y`,
/// `depth = z`, so a single-channel tensor has the same memory layout as a
/// raw volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[1], self.shape[2], self.shape[3]]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(mut self, f: impl Fn(f32) -> f32) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a as f64 * b as f64).sum()
    }
}

/// Gray `[0, 255]` to network range: `y = v / 127.5 - 1`.
pub fn gray_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Network range to gray: `v = round(255 (y + 1) / 2)`, half away from zero,
/// clamped to `[0, 255]`.
pub fn unit_to_gray(y: f32) -> u8 {
    (255.0 * (y + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
}

/// Single-channel tensor holding the mapped gray values of `img`.
pub fn image_to_tensor(img: &GrayImage3D) -> Tensor {
    let [nx, ny, nz] = img.dims();
    Tensor {
        shape: [1, nz, ny, nx],
        data: img.data().iter().map(|&v| gray_to_unit(v)).collect(),
    }
}

/// Gray volume from a single-channel tensor.
pub fn tensor_to_image(t: &Tensor, voxel_size: f64) -> Result<GrayImage3D> {
    if t.channels() != 1 {
        return Err(Error::Shape(format!("expected one channel, got {}", t.channels())));
    }
    let [_, d, h, w] = t.shape();
    GrayImage3D::new([w, h, d], voxel_size, t.data().iter().map(|&y| unit_to_gray(y)).collect())
}
