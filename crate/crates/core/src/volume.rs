//! Voxel volumes: raw I/O, gray-level preprocessing, Otsu segmentation,
//! sub-domain extraction and inlet/outlet connectivity.
//!
//! Raw volumes are headerless unsigned 8-bit files in x-fastest order
//! (then y, then z). Dimensions travel separately, usually in a JSON
//! sidecar next to the raw file (see [`Sidecar`]).
//!
//! **Phase polarity.** Internally the pore phase is always the *bright*
//! phase: a voxel is pore iff `value > t`. Micro-CT scans of limestone
//! show pore space dark, so volumes tagged [`Polarity::Dark`] are inverted
//! (`v -> 255 - v`) by [`GrayImage3D::canonicalize`] before any analysis.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default voxel edge length of the Ketton micro-CT scan, in meters.
pub const DEFAULT_VOXEL_SIZE: f64 = 27.8e-6;

/// Cartesian axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::Validation(format!("unknown axis '{other}'"))),
        }
    }
}

/// Which gray phase holds the pore space in the stored file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Bright,
    Dark,
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bright" => Ok(Polarity::Bright),
            "dark" => Ok(Polarity::Dark),
            other => Err(Error::Validation(format!("unknown pore polarity '{other}'"))),
        }
    }
}

/// JSON sidecar accompanying a raw volume file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    pub voxel_size_m: f64,
    pub pore_polarity: Polarity,
}

impl Sidecar {
    /// Conventional sidecar path: `volume.raw` -> `volume.raw.json`.
    pub fn path_for(raw: &Path) -> PathBuf {
        let mut name = raw.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn voxel_count(dims: [usize; 3]) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::Dimension(format!("dims must be positive, got {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Dimension(format!("dims {dims:?} overflow")))
}

#[inline]
pub(crate) fn linear_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

/// 8-bit gray-value volume.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage3D {
    dims: [usize; 3],
    voxel_size: f64,
    data: Vec<u8>,
}

impl GrayImage3D {
    pub fn new(dims: [usize; 3], voxel_size: f64, data: Vec<u8>) -> Result<Self> {
        let n = voxel_count(dims)?;
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} voxels for dims {dims:?}, got {}",
                data.len()
            )));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::Dimension(format!("voxel size must be positive, got {voxel_size}")));
        }
        Ok(Self { dims, voxel_size, data })
    }

    pub fn filled(dims: [usize; 3], voxel_size: f64, value: u8) -> Result<Self> {
        let n = voxel_count(dims)?;
        Self::new(dims, voxel_size, vec![value; n])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        voxel_size: f64,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let n = voxel_count(dims)?;
        let mut data = Vec::with_capacity(n);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, voxel_size, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn with_voxel_size(mut self, voxel_size: f64) -> Self {
        self.voxel_size = voxel_size;
        self
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    /// 256-bin gray-level histogram.
    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }

    /// `v -> 255 - v`.
    pub fn inverted(&self) -> Self {
        Self {
            dims: self.dims,
            voxel_size: self.voxel_size,
            data: self.data.iter().map(|&v| 255 - v).collect(),
        }
    }

    /// Brings a volume into the internal pore-bright form.
    pub fn canonicalize(self, polarity: Polarity) -> Self {
        match polarity {
            Polarity::Bright => self,
            Polarity::Dark => self.inverted(),
        }
    }

    /// Axis-aligned sub-volume starting at `origin` with edge lengths `size`.
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if size[a] == 0 || origin[a] + size[a] > self.dims[a] {
                return Err(Error::Dimension(format!(
                    "crop {size:?} at {origin:?} exceeds dims {:?}",
                    self.dims
                )));
            }
        }
        let mut data = Vec::with_capacity(size[0] * size[1] * size[2]);
        for z in origin[2]..origin[2] + size[2] {
            for y in origin[1]..origin[1] + size[1] {
                let start = linear_index(self.dims, origin[0], y, z);
                data.extend_from_slice(&self.data[start..start + size[0]]);
            }
        }
        Self::new(size, self.voxel_size, data)
    }

    /// Central crop to `size`; the extra voxels are split with the odd one
    /// going to the high side.
    pub fn center_crop(&self, size: [usize; 3]) -> Result<Self> {
        let mut origin = [0; 3];
        for a in 0..3 {
            if size[a] > self.dims[a] {
                return Err(Error::Dimension(format!(
                    "cannot center-crop {:?} to {size:?}",
                    self.dims
                )));
            }
            origin[a] = (self.dims[a] - size[a]) / 2;
        }
        self.crop(origin, size)
    }
}

/// Two-phase label volume, `1 = pore`, `0 = grain`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryImage3D {
    dims: [usize; 3],
    voxel_size: f64,
    data: Vec<u8>,
}

pub const GRAIN: u8 = 0;
pub const PORE: u8 = 1;

impl BinaryImage3D {
    pub fn new(dims: [usize; 3], voxel_size: f64, data: Vec<u8>) -> Result<Self> {
        let n = voxel_count(dims)?;
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} voxels for dims {dims:?}, got {}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Validation("binary labels must be 0 or 1".into()));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::Dimension(format!("voxel size must be positive, got {voxel_size}")));
        }
        Ok(Self { dims, voxel_size, data })
    }

    pub fn filled(dims: [usize; 3], voxel_size: f64, label: u8) -> Result<Self> {
        let n = voxel_count(dims)?;
        Self::new(dims, voxel_size, vec![label; n])
    }

    pub fn from_fn(
        dims: [usize; 3],
        voxel_size: f64,
        mut is_pore: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let n = voxel_count(dims)?;
        let mut data = Vec::with_capacity(n);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(is_pore(x, y, z) as u8);
                }
            }
        }
        Self::new(dims, voxel_size, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn with_voxel_size(mut self, voxel_size: f64) -> Self {
        self.voxel_size = voxel_size;
        self
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_pore(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[linear_index(self.dims, x, y, z)] == PORE
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u8) {
        let i = linear_index(self.dims, x, y, z);
        self.data[i] = label.min(1);
    }

    pub fn pore_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == PORE).count()
    }

    /// Exchanges the coordinate axes so that output axis `a` is input axis
    /// `perm[a]`.
    pub fn permute_axes(&self, perm: [usize; 3]) -> Self {
        let mut sorted = perm;
        sorted.sort_unstable();
        assert_eq!(sorted, [0, 1, 2], "invalid axis permutation {perm:?}");
        let dims = [self.dims[perm[0]], self.dims[perm[1]], self.dims[perm[2]]];
        let mut data = vec![0u8; self.data.len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let out = [x, y, z];
                    let mut src = [0; 3];
                    for a in 0..3 {
                        src[perm[a]] = out[a];
                    }
                    data[linear_index(dims, x, y, z)] =
                        self.data[linear_index(self.dims, src[0], src[1], src[2])];
                }
            }
        }
        Self { dims, voxel_size: self.voxel_size, data }
    }

    /// Gray rendering (`pore -> 255`), used for raw output.
    pub fn to_gray(&self) -> GrayImage3D {
        GrayImage3D {
            dims: self.dims,
            voxel_size: self.voxel_size,
            data: self.data.iter().map(|&v| v * 255).collect(),
        }
    }
}

/// Reads a headerless 8-bit volume.
pub fn load_volume(path: &Path, dims: [usize; 3], voxel_size: f64) -> Result<GrayImage3D> {
    let expected = voxel_count(dims)?;
    let bytes = fs::read(path)?;
    if bytes.len() != expected {
        return Err(Error::Dimension(format!(
            "{} has {} bytes, dims {dims:?} require {expected}",
            path.display(),
            bytes.len()
        )));
    }
    GrayImage3D::new(dims, voxel_size, bytes)
}

pub fn save_volume(img: &GrayImage3D, path: &Path) -> Result<()> {
    fs::write(path, img.data())?;
    Ok(())
}

/// Cumulative-histogram equalization.
///
/// `v' = round(255 * (cdf(v) - cdf_min) / (N - cdf_min))` where `cdf_min`
/// is the cumulative count of the lowest occupied gray level. A constant
/// image has `N == cdf_min` and maps to all zeros.
pub fn histogram_equalize(img: &GrayImage3D) -> GrayImage3D {
    let hist = img.histogram();
    let n = img.len() as u64;
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = hist
        .iter()
        .position(|&h| h > 0)
        .map(|i| cdf[i])
        .unwrap_or(0);
    let denom = n - cdf_min;
    let mut lut = [0u8; 256];
    if denom > 0 {
        for v in 0..256 {
            let num = cdf[v].saturating_sub(cdf_min) as f64;
            lut[v] = (255.0 * num / denom as f64).round().clamp(0.0, 255.0) as u8;
        }
    }
    GrayImage3D {
        dims: img.dims,
        voxel_size: img.voxel_size,
        data: img.data.iter().map(|&v| lut[v as usize]).collect(),
    }
}

/// Between-class variance `w0 * w1 * (mu0 - mu1)^2` of the split
/// `{v <= t} | {v > t}`; `None` when either class is empty.
pub fn between_class_variance(hist: &[u64; 256], t: u8) -> Option<f64> {
    let (mut n0, mut s0, mut n1, mut s1) = (0u64, 0u64, 0u64, 0u64);
    for (v, &h) in hist.iter().enumerate() {
        if v <= t as usize {
            n0 += h;
            s0 += h * v as u64;
        } else {
            n1 += h;
            s1 += h * v as u64;
        }
    }
    if n0 == 0 || n1 == 0 {
        return None;
    }
    let n = (n0 + n1) as f64;
    let (w0, w1) = (n0 as f64 / n, n1 as f64 / n);
    let (mu0, mu1) = (s0 as f64 / n0 as f64, s1 as f64 / n1 as f64);
    Some(w0 * w1 * (mu0 - mu1) * (mu0 - mu1))
}

/// Otsu threshold over the 256-bin histogram.
///
/// Voxels `<= t` are grain and `> t` are pore (pore-bright canonical form).
/// Ties resolve to the smallest maximizing `t`.
pub fn otsu_threshold(img: &GrayImage3D) -> Result<u8> {
    otsu_from_histogram(&img.histogram())
}

pub fn otsu_from_histogram(hist: &[u64; 256]) -> Result<u8> {
    // running sums: O(256)
    let total: u64 = hist.iter().sum();
    let sum_all: u64 = hist.iter().enumerate().map(|(v, &h)| v as u64 * h).sum();
    let occupied = hist.iter().filter(|&&h| h > 0).count();
    if occupied < 2 {
        return Err(Error::DegenerateHistogram(
            "Otsu threshold needs at least two distinct gray values".into(),
        ));
    }
    let n = total as f64;
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best: Option<(u8, f64)> = None;
    for t in 0..255usize {
        n0 += hist[t];
        s0 += hist[t] * t as u64;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let mu0 = s0 as f64 / n0 as f64;
        let mu1 = (sum_all - s0) as f64 / n1 as f64;
        let var = (n0 as f64 / n) * (n1 as f64 / n) * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((t as u8, var));
        }
    }
    best.map(|(t, _)| t)
        .ok_or_else(|| Error::DegenerateHistogram("no valid split".into()))
}

/// `pore iff value > t`.
pub fn segment(img: &GrayImage3D, t: u8) -> BinaryImage3D {
    BinaryImage3D {
        dims: img.dims,
        voxel_size: img.voxel_size,
        data: img.data.iter().map(|&v| (v > t) as u8).collect(),
    }
}

/// Sub-volume placement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum SubdomainMode {
    /// Cubes on the regular grid `0, size, 2*size, ...` per axis.
    NonoverlapGrid,
    /// Disjoint cubes whose grid gaps are randomized: the slack
    /// `dim - floor(dim/size)*size` of every axis is split at random
    /// between the gaps, then `count` cells are drawn.
    RandomNonoverlap,
    /// Overlapping cubes at `0, stride, 2*stride, ...`. A 900-voxel axis
    /// with size 64 and stride 49 holds 18 positions.
    Strided { stride: usize },
}

/// A cube cut out of a larger volume.
#[derive(Debug, Clone)]
pub struct SubVolume {
    pub origin: [usize; 3],
    pub image: GrayImage3D,
}

fn grid_positions(dim: usize, size: usize, step: usize) -> Vec<usize> {
    if size > dim {
        return Vec::new();
    }
    (0..=(dim - size) / step).map(|i| i * step).collect()
}

/// Random split of `slack` extra voxels into `gaps` non-negative parts.
fn random_gaps(rng: &mut ChaCha8Rng, slack: usize, gaps: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = (0..gaps - 1).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(gaps);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(slack - prev);
    out
}

fn jittered_positions(rng: &mut ChaCha8Rng, dim: usize, size: usize) -> Vec<usize> {
    let cells = dim / size;
    if cells == 0 {
        return Vec::new();
    }
    let gaps = random_gaps(rng, dim - cells * size, cells + 1);
    let mut pos = Vec::with_capacity(cells);
    let mut at = 0;
    for gap in gaps.iter().take(cells) {
        at += gap;
        pos.push(at);
        at += size;
    }
    pos
}

/// Maximum number of cubes [`extract_subdomains`] can return.
pub fn subdomain_capacity(dims: [usize; 3], size: usize, mode: SubdomainMode) -> usize {
    if size == 0 {
        return 0;
    }
    match mode {
        SubdomainMode::NonoverlapGrid | SubdomainMode::RandomNonoverlap => {
            dims.iter().map(|&d| d / size).product()
        }
        SubdomainMode::Strided { stride } => {
            if stride == 0 {
                return 0;
            }
            dims.iter().map(|&d| grid_positions(d, size, stride).len()).product()
        }
    }
}

/// Cuts `count` cubes of edge `size`. Deterministic given `seed`; for the
/// two non-overlapping modes the cubes are pairwise disjoint.
pub fn extract_subdomains(
    img: &GrayImage3D,
    size: usize,
    count: usize,
    mode: SubdomainMode,
    seed: u64,
) -> Result<Vec<SubVolume>> {
    let dims = img.dims();
    if size == 0 || dims.iter().any(|&d| size > d) {
        return Err(Error::Dimension(format!(
            "sub-volume size {size} does not fit in dims {dims:?}"
        )));
    }
    if let SubdomainMode::Strided { stride: 0 } = mode {
        return Err(Error::Validation("stride must be positive".into()));
    }
    let available = subdomain_capacity(dims, size, mode);
    if count > available {
        return Err(Error::Capacity { requested: count, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<Vec<usize>> = match mode {
        SubdomainMode::NonoverlapGrid => dims.iter().map(|&d| grid_positions(d, size, size)).collect(),
        SubdomainMode::Strided { stride } => {
            dims.iter().map(|&d| grid_positions(d, size, stride)).collect()
        }
        SubdomainMode::RandomNonoverlap => {
            dims.iter().map(|&d| jittered_positions(&mut rng, d, size)).collect()
        }
    };
    let mut cells: Vec<[usize; 3]> = Vec::with_capacity(available);
    for &z in &positions[2] {
        for &y in &positions[1] {
            for &x in &positions[0] {
                cells.push([x, y, z]);
            }
        }
    }
    if count < cells.len() {
        cells.shuffle(&mut rng);
        cells.truncate(count);
    }
    cells
        .into_iter()
        .map(|origin| {
            Ok(SubVolume {
                origin,
                image: img.crop(origin, [size; 3])?,
            })
        })
        .collect()
}

const NEIGHBORS6: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// 6-connected component labels of the pore phase (`0` = grain, components
/// numbered from 1 in scan order) and the number of components.
pub fn label_pore_components(bin: &BinaryImage3D) -> (Vec<u32>, usize) {
    let dims = bin.dims();
    let mut labels = vec![0u32; bin.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..bin.len() {
        if bin.data[start] != PORE || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let x = i % dims[0];
            let y = (i / dims[0]) % dims[1];
            let z = i / (dims[0] * dims[1]);
            for d in NEIGHBORS6 {
                let (nx, ny, nz) = (x as isize + d[0], y as isize + d[1], z as isize + d[2]);
                if nx < 0
                    || ny < 0
                    || nz < 0
                    || nx >= dims[0] as isize
                    || ny >= dims[1] as isize
                    || nz >= dims[2] as isize
                {
                    continue;
                }
                let j = linear_index(dims, nx as usize, ny as usize, nz as usize);
                if bin.data[j] == PORE && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Pore voxels whose 6-connected component touches both the inlet
/// (axis minimum) and the outlet (axis maximum) face.
pub fn connected_pore(bin: &BinaryImage3D, axis: Axis) -> BinaryImage3D {
    let dims = bin.dims();
    let (labels, count) = label_pore_components(bin);
    let mut at_inlet = vec![false; count + 1];
    let mut at_outlet = vec![false; count + 1];
    let a = axis.index();
    let last = dims[a] - 1;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let c = [x, y, z][a];
                if c != 0 && c != last {
                    continue;
                }
                let l = labels[linear_index(dims, x, y, z)] as usize;
                if l == 0 {
                    continue;
                }
                if c == 0 {
                    at_inlet[l] = true;
                }
                if c == last {
                    at_outlet[l] = true;
                }
            }
        }
    }
    let data = labels
        .iter()
        .map(|&l| (l != 0 && at_inlet[l as usize] && at_outlet[l as usize]) as u8)
        .collect();
    BinaryImage3D {
        dims,
        voxel_size: bin.voxel_size,
        data,
    }
}
