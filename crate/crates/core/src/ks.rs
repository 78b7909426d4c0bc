//! Two-sample Kolmogorov-Smirnov test on binned distributions.
//!
//! Binned densities are turned into piecewise-linear CDFs (uniform density
//! inside each bin). Mass below the first edge is a jump at the first
//! edge, mass above the last edge a jump at the last edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{EnsembleHistogram, HistogramPDF, HISTOGRAM_BINS};

/// Default sample size for binned inputs: the number of bins.
pub const DEFAULT_SAMPLE_SIZE: usize = HISTOGRAM_BINS;
const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Piecewise-linear CDF with jumps at its knots.
///
/// `left[i]` / `right[i]` are the limits from below / above at `knots[i]`;
/// the CDF is linear between `right[i]` and `left[i + 1]`, zero before the
/// first knot and `right[last]` after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    pub knots: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Ecdf {
    /// Builds the CDF of `below` mass under `edges[0]`, `densities` inside
    /// the bins and `above` mass over the last edge.
    pub fn from_binned(edges: &[f64], densities: &[f64], below: f64, above: f64) -> Result<Self> {
        if edges.len() < 2 || edges.len() != densities.len() + 1 {
            return Err(Error::Validation("empty or mismatched histogram support".into()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("histogram edges must increase".into()));
        }
        if densities.iter().chain([&below, &above]).any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Validation("negative or non-finite probability mass".into()));
        }
        let n = edges.len();
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        left.push(0.0);
        right.push(below);
        let mut acc = below;
        for i in 0..densities.len() {
            acc += densities[i] * (edges[i + 1] - edges[i]);
            left.push(acc);
            right.push(acc);
        }
        right[n - 1] = acc + above;
        let total = right[n - 1];
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Validation(format!(
                "histogram is not normalized: total mass {total}"
            )));
        }
        Ok(Self { knots: edges.to_vec(), left, right })
    }

    /// Cumulative value at each edge (right limits).
    pub fn values(&self) -> &[f64] {
        &self.right
    }

    /// `(F(x-), F(x+))`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let k = &self.knots;
        let last = k.len() - 1;
        if x < k[0] {
            return (0.0, 0.0);
        }
        if x > k[last] {
            return (self.right[last], self.right[last]);
        }
        // first knot >= x
        let j = k.partition_point(|&e| e < x);
        if k[j] == x {
            return (self.left[j], self.right[j]);
        }
        let (x0, x1) = (k[j - 1], k[j]);
        let t = (x - x0) / (x1 - x0);
        let v = self.right[j - 1] + t * (self.left[j] - self.right[j - 1]);
        (v, v)
    }
}

pub fn ecdf_from_histogram(h: &HistogramPDF) -> Result<Ecdf> {
    if h.count == 0 {
        return Err(Error::Validation("histogram has no samples".into()));
    }
    let n = h.count as f64;
    Ecdf::from_binned(&h.edges, &h.densities, h.underflow as f64 / n, h.overflow as f64 / n)
}

/// CDF of the per-bin mean density of an ensemble.
pub fn ecdf_from_ensemble(e: &EnsembleHistogram) -> Result<Ecdf> {
    Ecdf::from_binned(&e.edges, &e.mean, e.underflow, e.overflow)
}

/// `c(alpha) = sqrt(-ln(alpha / 2) / 2)`.
pub fn c_alpha(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

/// Rejection threshold `c(alpha) sqrt((n + m) / (n m))`.
pub fn ks_threshold(alpha: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    c_alpha(alpha) * ((n + m) / (n * m)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSResult {
    pub direction: String,
    pub d_nm: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
    pub reject: bool,
}

impl KSResult {
    pub fn from_statistic(direction: &str, d_nm: f64, alpha: f64, n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Validation("sample sizes must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Validation(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let threshold = ks_threshold(alpha, n, m);
        Ok(Self {
            direction: direction.into(),
            d_nm,
            threshold,
            alpha,
            n,
            m,
            reject: d_nm > threshold,
        })
    }
}

/// Supremum gap between two CDFs, evaluated at the union of their knots.
pub fn ks_statistic(f1: &Ecdf, f2: &Ecdf) -> Result<f64> {
    if f1.knots.is_empty() || f2.knots.is_empty() {
        return Err(Error::Validation("empty support".into()));
    }
    let mut xs: Vec<f64> = f1.knots.iter().chain(&f2.knots).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut d = 0.0f64;
    for x in xs {
        let (a0, a1) = f1.eval(x);
        let (b0, b1) = f2.eval(x);
        d = d.max((a0 - b0).abs()).max((a1 - b1).abs());
    }
    Ok(d.clamp(0.0, 1.0))
}

pub fn ks_two_sample(
    f1: &Ecdf,
    f2: &Ecdf,
    n: usize,
    m: usize,
    alpha: f64,
    direction: &str,
) -> Result<KSResult> {
    KSResult::from_statistic(direction, ks_statistic(f1, f2)?, alpha, n, m)
}
