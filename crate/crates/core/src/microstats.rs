//! Two-point probability functions and ensemble statistics.
//!
//! `S2(r)` is estimated with the lattice-point method along a Cartesian
//! axis: every voxel pair `(p, p + r e)` that lies inside the image is
//! counted, pairs crossing the boundary are excluded from numerator and
//! denominator alike (no periodic wrap). The radial curve is the mean of
//! the three directional curves.
//!
//! The specific surface is taken from the forward difference
//! `S_V = -4 (S2(1) - S2(0)) / h`. On voxel data this slope carries a
//! first-order discretization bias; treat it as a shape descriptor.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{linear_index, Axis, BinaryImage3D};

/// Direction of a two-point function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    X,
    Y,
    Z,
    Radial,
}

impl From<Axis> for Direction {
    fn from(a: Axis) -> Self {
        match a {
            Axis::X => Direction::X,
            Axis::Y => Direction::Y,
            Axis::Z => Direction::Z,
        }
    }
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::X => "x",
            Direction::Y => "y",
            Direction::Z => "z",
            Direction::Radial => "radial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPointFunction {
    pub direction: Direction,
    pub voxel_size: f64,
    pub distances: Vec<usize>,
    pub values: Vec<f64>,
    /// Pore-pore pair counts per lag (directional curves only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pore_pairs: Vec<u64>,
    /// Valid in-domain pair counts per lag (directional curves only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub total_pairs: Vec<u64>,
}

impl TwoPointFunction {
    pub fn porosity(&self) -> f64 {
        self.values[0]
    }

    /// CSV body `lag_voxels,lag_m,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lag_voxels,lag_m,value\n");
        for (&r, &v) in self.distances.iter().zip(&self.values) {
            let _ = writeln!(s, "{r},{:e},{v}", r as f64 * self.voxel_size);
        }
        s
    }

    /// JSON header accompanying [`TwoPointFunction::to_csv`].
    pub fn csv_header(&self, image_id: &str) -> serde_json::Value {
        serde_json::json!({
            "direction": self.direction.name(),
            "voxel_size_m": self.voxel_size,
            "image_id": image_id,
        })
    }
}

/// Packs one line of labels into 64-bit words, bit `i` = voxel `i`.
fn pack_line(line: impl Iterator<Item = u8>, len: usize, out: &mut Vec<u64>) {
    out.clear();
    out.resize(len.div_ceil(64), 0);
    for (i, v) in line.enumerate() {
        if v != 0 {
            out[i / 64] |= 1u64 << (i % 64);
        }
    }
}

/// Number of positions `i` with bit `i` and bit `i + r` both set.
fn lagged_pairs(bits: &[u64], r: usize) -> u64 {
    let word = r / 64;
    let shift = r % 64;
    let mut count = 0u64;
    for i in 0..bits.len().saturating_sub(word) {
        let lo = bits[i + word] >> shift;
        let hi = if shift > 0 && i + word + 1 < bits.len() {
            bits[i + word + 1] << (64 - shift)
        } else {
            0
        };
        count += (bits[i] & (lo | hi)).count_ones() as u64;
    }
    count
}

/// Lattice-point `S2` along one axis for lags `0..=r_max`.
pub fn s2_directional(bin: &BinaryImage3D, axis: Axis, r_max: usize) -> Result<TwoPointFunction> {
    let dims = bin.dims();
    let a = axis.index();
    let len = dims[a];
    if r_max >= len {
        return Err(Error::Range(format!(
            "r_max {r_max} must be smaller than the extent {len} along {axis}"
        )));
    }
    let (b, c) = match a {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let data = bin.data();
    let mut pore_pairs = vec![0u64; r_max + 1];
    let mut bits = Vec::new();
    for j in 0..dims[c] {
        for i in 0..dims[b] {
            let voxel = |t: usize| {
                let mut p = [0; 3];
                p[a] = t;
                p[b] = i;
                p[c] = j;
                data[linear_index(dims, p[0], p[1], p[2])]
            };
            pack_line((0..len).map(voxel), len, &mut bits);
            for (r, slot) in pore_pairs.iter_mut().enumerate() {
                *slot += lagged_pairs(&bits, r);
            }
        }
    }
    let lines = (dims[b] * dims[c]) as u64;
    let total_pairs: Vec<u64> = (0..=r_max).map(|r| (len - r) as u64 * lines).collect();
    let values = pore_pairs
        .iter()
        .zip(&total_pairs)
        .map(|(&p, &t)| p as f64 / t as f64)
        .collect();
    Ok(TwoPointFunction {
        direction: axis.into(),
        voxel_size: bin.voxel_size(),
        distances: (0..=r_max).collect(),
        values,
        pore_pairs,
        total_pairs,
    })
}

/// Mean of the three directional curves.
pub fn s2_radial(bin: &BinaryImage3D, r_max: usize) -> Result<TwoPointFunction> {
    let curves = Axis::ALL
        .iter()
        .map(|&a| s2_directional(bin, a, r_max))
        .collect::<Result<Vec<_>>>()?;
    Ok(radial_from_directional(&curves))
}

/// Radial curve from already computed x, y, z curves.
pub fn radial_from_directional(curves: &[TwoPointFunction]) -> TwoPointFunction {
    let n = curves[0].values.len();
    let values = (0..n)
        .map(|r| curves.iter().map(|c| c.values[r]).sum::<f64>() / curves.len() as f64)
        .collect();
    TwoPointFunction {
        direction: Direction::Radial,
        voxel_size: curves[0].voxel_size,
        distances: curves[0].distances.clone(),
        values,
        pore_pairs: Vec::new(),
        total_pairs: Vec::new(),
    }
}

/// `-4 (S2(1) - S2(0)) / h`, per meter.
pub fn specific_surface_from_s2(s2: &TwoPointFunction) -> Result<f64> {
    if s2.values.len() < 2 {
        return Err(Error::Range("need at least two lags for the slope at the origin".into()));
    }
    Ok(-4.0 * (s2.values[1] - s2.values[0]) / s2.voxel_size)
}

/// Pointwise mean and population standard deviation of a set of curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCurve {
    pub direction: Direction,
    pub distances: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

impl EnsembleCurve {
    pub fn to_csv(&self, voxel_size: f64) -> String {
        let mut s = String::from("lag_voxels,lag_m,mean,std\n");
        for i in 0..self.distances.len() {
            let r = self.distances[i];
            let _ = writeln!(s, "{r},{:e},{},{}", r as f64 * voxel_size, self.mean[i], self.std[i]);
        }
        s
    }
}

/// Per-lag mean and population standard deviation.
pub fn mean_and_std(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let len = rows[0].len();
    let mut mean = vec![0.0; len];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for row in rows {
        for ((s, v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    (mean, std)
}

pub fn ensemble_stats(curves: &[TwoPointFunction]) -> Result<EnsembleCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Shape("ensemble needs at least one curve".into()))?;
    for c in curves {
        if c.distances != first.distances || c.direction != first.direction {
            return Err(Error::Shape("curves differ in lags or direction".into()));
        }
    }
    let rows: Vec<&[f64]> = curves.iter().map(|c| c.values.as_slice()).collect();
    let (mean, std) = mean_and_std(&rows);
    Ok(EnsembleCurve {
        direction: first.direction,
        distances: first.distances.clone(),
        mean,
        std,
        count: curves.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{laminate, random_binary};
    use proptest::prelude::*;

    /// Exhaustive pair enumeration over every voxel and lag.
    fn brute_force(bin: &BinaryImage3D, axis: Axis, r_max: usize) -> (Vec<u64>, Vec<u64>) {
        let d = bin.dims();
        let mut pp = vec![0u64; r_max + 1];
        let mut tot = vec![0u64; r_max + 1];
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    for r in 0..=r_max {
                        let mut q = [x, y, z];
                        q[axis.index()] += r;
                        if q[axis.index()] >= d[axis.index()] {
                            continue;
                        }
                        tot[r] += 1;
                        if bin.is_pore(x, y, z) && bin.is_pore(q[0], q[1], q[2]) {
                            pp[r] += 1;
                        }
                    }
                }
            }
        }
        (pp, tot)
    }

    #[test]
    fn all_pore_is_one() {
        let b = BinaryImage3D::filled([9, 9, 9], 1.0, 1).unwrap();
        let s = s2_directional(&b, Axis::Y, 8).unwrap();
        assert!(s.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn r_max_range_error() {
        let b = BinaryImage3D::filled([4, 8, 8], 1.0, 1).unwrap();
        assert!(matches!(s2_directional(&b, Axis::X, 4), Err(Error::Range(_))));
        assert!(s2_directional(&b, Axis::Y, 4).is_ok());
    }

    #[test]
    fn matches_pair_enumeration_long_lines() {
        // lines longer than one word exercise the cross-word shift
        let b = random_binary([150, 3, 2], 0.5, 8);
        let s = s2_directional(&b, Axis::X, 140).unwrap();
        let (pp, tot) = brute_force(&b, Axis::X, 140);
        assert_eq!(s.pore_pairs, pp);
        assert_eq!(s.total_pairs, tot);
    }

    #[test]
    fn laminate_radial_is_mean_of_axes() {
        let b = laminate([32, 16, 16], 4);
        let r = s2_radial(&b, 12).unwrap();
        // closed form: along x the laminate of period 8 gives a triangle
        // wave; y and z are flat at phi = 1/2
        for lag in 0..=12usize {
            let m = lag % 8;
            let overlap = m.abs_diff(4) as f64;
            // count valid pairs exactly on the finite domain
            let mut both = 0usize;
            for x in 0..32 - lag {
                if (x / 4) % 2 == 0 && ((x + lag) / 4) % 2 == 0 {
                    both += 1;
                }
            }
            let sx = both as f64 / (32 - lag) as f64;
            let expected = (sx + 0.5 + 0.5) / 3.0;
            assert!((r.values[lag] - expected).abs() < 1e-12);
            // finite-domain count stays near the infinite triangle wave
            assert!((sx - overlap / 8.0).abs() < 0.1);
        }
    }

    #[test]
    fn laminate_specific_surface() {
        for (a, h) in [(4usize, 1.0), (5, 2e-6)] {
            let b = laminate([20 * a, 4, 4], a).with_voxel_size(h);
            let s = s2_directional(&b, Axis::X, 2).unwrap();
            let sv = specific_surface_from_s2(&s).unwrap();
            let exact = 2.0 / (a as f64 * h);
            assert!((sv - exact).abs() / exact < 0.05, "a={a}: {sv} vs {exact}");
        }
    }

    #[test]
    fn cube_specific_surface_matches_face_count() {
        let b = BinaryImage3D::from_fn([32; 3], 1.0, |x, y, z| {
            (11..21).contains(&x) && (11..21).contains(&y) && (11..21).contains(&z)
        })
        .unwrap();
        let n = b.len() as f64;
        let faces = crate::minkowski::specific_surface(&b);
        // Each axis loses one pair per face on the +side only, so the
        // axis-sampled slope sees half of that axis' faces: with a common
        // normalization -4 dS2 = (2/3) * face count, for any image.
        let curves: Vec<_> = Axis::ALL.iter().map(|&a| s2_directional(&b, a, 1).unwrap()).collect();
        let lost: f64 = curves
            .iter()
            .map(|c| (c.pore_pairs[0] - c.pore_pairs[1]) as f64 / n)
            .sum::<f64>()
            / 3.0;
        assert!((4.0 * lost - 2.0 / 3.0 * faces).abs() < 1e-12);
        // the pair-exclusion estimator additionally renormalizes S2(1) by
        // the shorter lines, pulling it further below the face count
        let sv = specific_surface_from_s2(&radial_from_directional(&curves)).unwrap();
        assert!(sv > 0.4 * faces && sv < 2.0 / 3.0 * faces, "{sv} vs {faces}");
    }

    #[test]
    fn specific_surface_needs_two_lags() {
        let b = BinaryImage3D::filled([4, 4, 4], 1.0, 1).unwrap();
        let s = s2_directional(&b, Axis::X, 0).unwrap();
        assert!(specific_surface_from_s2(&s).is_err());
        let s = s2_directional(&b, Axis::X, 1).unwrap();
        assert_eq!(specific_surface_from_s2(&s).unwrap(), 0.0);
    }

    #[test]
    fn ensemble_examples() {
        let mk = |v: Vec<f64>| TwoPointFunction {
            direction: Direction::X,
            voxel_size: 1.0,
            distances: vec![0, 1],
            values: v,
            pore_pairs: vec![],
            total_pairs: vec![],
        };
        let one = ensemble_stats(&[mk(vec![0.3, 0.2])]).unwrap();
        assert_eq!(one.mean, vec![0.3, 0.2]);
        assert_eq!(one.std, vec![0.0, 0.0]);
        let two = ensemble_stats(&[mk(vec![0.2, 0.1]), mk(vec![0.4, 0.3])]).unwrap();
        assert!((two.mean[0] - 0.3).abs() < 1e-15 && (two.mean[1] - 0.2).abs() < 1e-15);
        assert!((two.std[0] - 0.1).abs() < 1e-12 && (two.std[1] - 0.1).abs() < 1e-12);
        let mut other = mk(vec![0.2, 0.1]);
        other.direction = Direction::Y;
        assert!(matches!(ensemble_stats(&[mk(vec![0.2, 0.1]), other]), Err(Error::Shape(_))));
        assert!(ensemble_stats(&[]).is_err());
    }

    #[test]
    fn ensemble_mean_porosity() {
        let curves: Vec<_> = (0..64)
            .map(|s| s2_directional(&random_binary([16; 3], 0.35, s), Axis::Z, 4).unwrap())
            .collect();
        let e = ensemble_stats(&curves).unwrap();
        let sigma = e.std[0];
        assert!((e.mean[0] - 0.35).abs() < 3.0 * sigma / 8.0 + 1e-12);
        assert_eq!(e.count, 64);
    }

    #[test]
    fn csv_format() {
        let b = BinaryImage3D::filled([4, 4, 4], 2.0, 1).unwrap();
        let s = s2_directional(&b, Axis::X, 1).unwrap();
        assert_eq!(s.to_csv(), "lag_voxels,lag_m,value\n0,0e0,1\n1,2e0,1\n");
        assert_eq!(s.csv_header("a")["direction"], "x");
    }

    proptest! {
        #[test]
        fn equals_pair_enumeration(
            bits in proptest::collection::vec(0u8..2, 7 * 6 * 5),
            axis in 0usize..3,
        ) {
            let b = BinaryImage3D::new([7, 6, 5], 1.0, bits).unwrap();
            let axis = Axis::ALL[axis];
            let r_max = b.dims()[axis.index()] - 1;
            let s = s2_directional(&b, axis, r_max).unwrap();
            let (pp, tot) = brute_force(&b, axis, r_max);
            prop_assert_eq!(&s.pore_pairs, &pp);
            prop_assert_eq!(&s.total_pairs, &tot);
            let phi = b.pore_count() as f64 / b.len() as f64;
            prop_assert_eq!(s.values[0], phi);
            prop_assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
