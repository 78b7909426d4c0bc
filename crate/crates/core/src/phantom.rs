//! Synthetic test geometries: overlapping-sphere grain packs, channels,
//! ducts, tubes, laminates and digitized balls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::volume::{BinaryImage3D, GrayImage3D, GRAIN, PORE};

/// Parameters of a Boolean model of overlapping grain spheres.
#[derive(Debug, Clone, Copy)]
pub struct SpherePack {
    pub edge: usize,
    /// Target pore fraction of the infinite-volume Boolean model.
    pub porosity: f64,
    pub radius: f64,
    /// Gray levels of the pore and grain phases (pore bright).
    pub pore_gray: f64,
    pub grain_gray: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SpherePack {
    fn default() -> Self {
        Self {
            edge: 64,
            porosity: 0.3,
            radius: 5.0,
            pore_gray: 190.0,
            grain_gray: 70.0,
            noise_sigma: 18.0,
            seed: 0,
        }
    }
}

impl SpherePack {
    /// Boolean-model intensity: `phi = exp(-lambda * 4/3 pi r^3)`.
    fn sphere_count(&self) -> usize {
        let vol = 4.0 / 3.0 * std::f64::consts::PI * self.radius.powi(3);
        let lambda = -self.porosity.clamp(1e-6, 1.0).ln() / vol;
        // centers are drawn in a box padded by one radius on every side
        let padded = self.edge as f64 + 2.0 * self.radius;
        (lambda * padded.powi(3)).round() as usize
    }

    /// Binary pack (grain inside any sphere).
    pub fn binary(&self, voxel_size: f64) -> Result<BinaryImage3D> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.edge;
        let mut data = vec![PORE; n * n * n];
        let r = self.radius;
        for _ in 0..self.sphere_count() {
            let c: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * (n as f64 + 2.0 * r) - r);
            let lo: [usize; 3] = std::array::from_fn(|a| (c[a] - r).floor().max(0.0) as usize);
            let hi: [usize; 3] =
                std::array::from_fn(|a| ((c[a] + r).ceil() as isize).clamp(0, n as isize - 1) as usize);
            if (c[0] + r) < 0.0 || (c[1] + r) < 0.0 || (c[2] + r) < 0.0 {
                continue;
            }
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let d2 = (x as f64 + 0.5 - c[0]).powi(2)
                            + (y as f64 + 0.5 - c[1]).powi(2)
                            + (z as f64 + 0.5 - c[2]).powi(2);
                        if d2 <= r * r {
                            data[x + n * (y + n * z)] = GRAIN;
                        }
                    }
                }
            }
        }
        BinaryImage3D::new([n; 3], voxel_size, data)
    }

    /// Gray rendering of [`SpherePack::binary`] with additive Gaussian noise.
    pub fn gray(&self, voxel_size: f64) -> Result<GrayImage3D> {
        let bin = self.binary(voxel_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let noise = Normal::new(0.0, self.noise_sigma.max(0.0)).expect("finite sigma");
        let data = bin
            .data()
            .iter()
            .map(|&l| {
                let base = if l == PORE { self.pore_gray } else { self.grain_gray };
                (base + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        GrayImage3D::new(bin.dims(), voxel_size, data)
    }
}

/// Independent Bernoulli voxels with pore probability `porosity`.
pub fn random_binary(dims: [usize; 3], porosity: f64, seed: u64) -> BinaryImage3D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryImage3D::from_fn(dims, 1.0, |_, _, _| rng.random::<f64>() < porosity)
        .expect("positive dims")
}

/// Pore slab of `height` voxels along `y`, bounded by one grain layer on
/// each side; open along `x` and `z`. Dims are `[len, height + 2, width]`.
pub fn plane_channel(len: usize, height: usize, width: usize) -> BinaryImage3D {
    BinaryImage3D::from_fn([len, height + 2, width], 1.0, |_, y, _| y >= 1 && y <= height)
        .expect("positive dims")
}

/// Rectangular duct along `x` with a one-voxel grain wall around it.
pub fn rect_duct(len: usize, ny: usize, nz: usize) -> BinaryImage3D {
    BinaryImage3D::from_fn([len, ny + 2, nz + 2], 1.0, |_, y, z| {
        (1..=ny).contains(&y) && (1..=nz).contains(&z)
    })
    .expect("positive dims")
}

/// Circular tube along `x`: cells whose center lies within `radius` of the
/// tube axis are pore.
pub fn capillary_tube(len: usize, radius: f64) -> BinaryImage3D {
    let edge = 2 * radius.ceil() as usize + 2;
    let c = edge as f64 / 2.0;
    BinaryImage3D::from_fn([len, edge, edge], 1.0, |_, y, z| {
        let dy = y as f64 + 0.5 - c;
        let dz = z as f64 + 0.5 - c;
        dy * dy + dz * dz < radius * radius
    })
    .expect("positive dims")
}

/// Periodic laminate: pore slabs of `thickness` voxels normal to `x`,
/// alternating with grain slabs of equal thickness.
pub fn laminate(dims: [usize; 3], thickness: usize) -> BinaryImage3D {
    BinaryImage3D::from_fn(dims, 1.0, |x, _, _| (x / thickness).is_multiple_of(2)).expect("positive dims")
}

/// Digitized ball: voxels whose center is within `radius` of the domain
/// center.
pub fn ball(edge: usize, radius: f64) -> BinaryImage3D {
    let c = edge as f64 / 2.0;
    BinaryImage3D::from_fn([edge; 3], 1.0, |x, y, z| {
        let d2 = (x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2) + (z as f64 + 0.5 - c).powi(2);
        d2 <= radius * radius
    })
    .expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_pack_hits_target_porosity() {
        let pack = SpherePack { edge: 64, porosity: 0.3, radius: 4.0, seed: 5, ..Default::default() };
        let b = pack.binary(1.0).unwrap();
        let phi = b.pore_count() as f64 / b.len() as f64;
        assert!((phi - 0.3).abs() < 0.03, "phi = {phi}");
        assert_eq!(pack.binary(1.0).unwrap(), b);
    }

    #[test]
    fn geometry_builders() {
        let ch = plane_channel(4, 20, 3);
        assert_eq!(ch.dims(), [4, 22, 3]);
        assert_eq!(ch.pore_count(), 4 * 20 * 3);
        let d = rect_duct(5, 20, 20);
        assert_eq!(d.pore_count(), 5 * 400);
        let t = capillary_tube(2, 15.0);
        let per_slice = t.pore_count() as f64 / 2.0;
        assert!((per_slice - std::f64::consts::PI * 225.0).abs() < 30.0);
        assert_eq!(laminate([8, 2, 2], 2).pore_count(), 16);
    }
}
