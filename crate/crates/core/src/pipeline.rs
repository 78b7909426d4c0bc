//! The real-versus-synthetic comparison protocol.
//!
//! `count` disjoint cubes are cut from the real volume and `count`
//! generated volumes are center-cropped to the same edge. Every image is
//! segmented at its own Otsu threshold and measured (S2, Minkowski sweep,
//! Stokes flow along x, y and z). Ensembles are summarized per source and
//! the per-axis mean velocity distributions are compared with the
//! two-sample KS test.
//!
//! All randomness derives from one master seed via [`derive_seed`]; the
//! report carries every derived seed so each image can be reproduced with
//! the individual operations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    ensemble_histogram, permeability, stokes_solve, velocity_histogram, EnsembleHistogram,
    FlowResult, HistogramPDF,
};
use crate::ks::{ecdf_from_ensemble, ks_two_sample, KSResult, DEFAULT_SAMPLE_SIZE};
use crate::microstats::{mean_and_std, radial_from_directional, s2_directional, EnsembleCurve, Direction};
use crate::minkowski::{threshold_sweep, MinkowskiDensities};
use crate::nn::{generated_edge, latent_edge_for, sample_noise, Component, NetworkWeights};
use crate::volume::{
    extract_subdomains, otsu_threshold, segment, Axis, GrayImage3D, Polarity, SubdomainMode,
};

pub const REPORT_VERSION: u32 = 1;

/// Seed streams.
pub const STREAM_SUBDOMAINS: u64 = 0;
pub const STREAM_LATENT: u64 = 1;

/// Independent 64-bit seed for `(stream, index)` under `master`
/// (splitmix64 finalizer over a mixed key).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
    /// Largest S2 lag; defaults to `size / 2`.
    pub r_max: Option<usize>,
    pub alpha: f64,
    pub ks_n: usize,
    pub ks_m: usize,
    /// Polarity of the raw gray values of both sources.
    pub polarity: Polarity,
    pub flow: bool,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            count: 64,
            size: 200,
            seed: 0,
            jobs: 1,
            r_max: None,
            alpha: 0.05,
            ks_n: DEFAULT_SAMPLE_SIZE,
            ks_m: DEFAULT_SAMPLE_SIZE,
            polarity: Polarity::Bright,
            flow: true,
        }
    }
}

impl ValidateConfig {
    pub fn r_max(&self) -> usize {
        self.r_max.unwrap_or(self.size / 2).min(self.size.saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        Self { kind: e.kind().into(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOutcome {
    pub axis: Axis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<FlowResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramPDF>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

/// S2 values per lag, one curve per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S2Curves {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub radial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnalysis {
    pub threshold: u8,
    pub porosity: f64,
    pub s2: S2Curves,
    /// Densities at thresholds 0..=255.
    pub minkowski_sweep: Vec<MinkowskiDensities>,
    pub flow: Vec<FlowOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub source: Source,
    pub index: usize,
    /// Sub-volume origin in the real volume.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<[usize; 3]>,
    /// Latent seed of a generated volume.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<ImageAnalysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

/// Segment and measure one canonical gray image.
pub fn analyze_image(img: &GrayImage3D, r_max: usize, flow: bool) -> Result<ImageAnalysis> {
    let t = otsu_threshold(img)?;
    let bin = segment(img, t);
    let dirs = Axis::ALL
        .iter()
        .map(|&a| s2_directional(&bin, a, r_max))
        .collect::<Result<Vec<_>>>()?;
    let radial = radial_from_directional(&dirs);
    let sweep = threshold_sweep(img)?;
    let flow = if flow {
        Axis::ALL
            .iter()
            .map(|&axis| {
                let solved = stokes_solve(&bin, axis).and_then(|f| {
                    let h = velocity_histogram(&f)?;
                    Ok((permeability(&f), h))
                });
                match solved {
                    Ok((r, h)) => FlowOutcome { axis, result: Some(r), histogram: Some(h), error: None },
                    Err(e) => FlowOutcome { axis, result: None, histogram: None, error: Some((&e).into()) },
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(ImageAnalysis {
        threshold: t,
        porosity: bin.pore_count() as f64 / bin.len() as f64,
        s2: S2Curves {
            x: dirs[0].values.clone(),
            y: dirs[1].values.clone(),
            z: dirs[2].values.clone(),
            radial: radial.values,
        },
        minkowski_sweep: sweep.densities,
        flow,
    })
}

/// The real sub-volumes of the protocol, canonicalized.
pub fn real_images(real: &GrayImage3D, cfg: &ValidateConfig) -> Result<Vec<([usize; 3], GrayImage3D)>> {
    let seed = derive_seed(cfg.seed, STREAM_SUBDOMAINS, 0);
    let subs = extract_subdomains(real, cfg.size, cfg.count, SubdomainMode::RandomNonoverlap, seed)?;
    Ok(subs
        .into_iter()
        .map(|s| (s.origin, s.image.canonicalize(cfg.polarity)))
        .collect())
}

/// Generated volume `index` of the protocol, center-cropped and
/// canonicalized.
pub fn synthetic_image(
    generator: &NetworkWeights,
    cfg: &ValidateConfig,
    index: usize,
    voxel_size: f64,
) -> Result<(u64, GrayImage3D)> {
    let seed = derive_seed(cfg.seed, STREAM_LATENT, index as u64);
    let m = latent_edge_for(cfg.size);
    let z = sample_noise(generator.input_channels, m, m, m, seed);
    let img = generator.generate(&z)?.with_voxel_size(voxel_size);
    let img = img.center_crop([cfg.size; 3])?;
    Ok((seed, img.canonicalize(cfg.polarity)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEnsemble {
    pub phi: (Vec<f64>, Vec<f64>),
    pub sv: (Vec<f64>, Vec<f64>),
    pub kv: (Vec<f64>, Vec<f64>),
    pub chiv: (Vec<f64>, Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermeabilitySummary {
    pub axis: Axis,
    pub samples: usize,
    pub mean_m2: f64,
    pub std_m2: f64,
    pub mean_darcy: f64,
    pub std_darcy: f64,
    pub mean_phi_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source: Source,
    pub analyzed: usize,
    pub failed: usize,
    pub porosity_mean: f64,
    pub porosity_std: f64,
    pub s2: Vec<EnsembleCurve>,
    pub minkowski: Option<SweepEnsemble>,
    pub permeability: Vec<PermeabilitySummary>,
    pub velocity: Vec<(Axis, EnsembleHistogram)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub report_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub subdomain_seed: u64,
    pub count: usize,
    pub size: usize,
    pub r_max: usize,
    pub voxel_size_m: f64,
    pub real_dims: [usize; 3],
    pub polarity: Polarity,
    pub subdomain_mode: SubdomainMode,
    pub latent_dim: usize,
    pub latent_edge: usize,
    pub generated_edge: usize,
    pub generator_parameters: usize,
    pub alpha: f64,
    pub ks_n: usize,
    pub ks_m: usize,
    pub flow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub report_version: u32,
    pub metadata: Metadata,
    pub real: SourceSummary,
    pub synthetic: SourceSummary,
    pub ks: Vec<KSResult>,
    pub images: Vec<ImageReport>,
}

impl ValidationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn summarize(source: Source, images: &[ImageReport], r_max: usize) -> SourceSummary {
    let done: Vec<&ImageAnalysis> = images
        .iter()
        .filter(|i| i.source == source)
        .filter_map(|i| i.analysis.as_ref())
        .collect();
    let failed = images.iter().filter(|i| i.source == source && i.analysis.is_none()).count();
    let distances: Vec<usize> = (0..=r_max).collect();
    let mut s2 = Vec::new();
    let mut minkowski = None;
    let (mut porosity_mean, mut porosity_std) = (0.0, 0.0);
    if !done.is_empty() {
        let por: Vec<f64> = done.iter().map(|a| a.porosity).collect();
        porosity_mean = por.iter().sum::<f64>() / por.len() as f64;
        porosity_std = (por.iter().map(|p| (p - porosity_mean).powi(2)).sum::<f64>() / por.len() as f64).sqrt();
        for (dir, pick) in [
            (Direction::X, (|a: &ImageAnalysis| &a.s2.x) as fn(&ImageAnalysis) -> &Vec<f64>),
            (Direction::Y, |a| &a.s2.y),
            (Direction::Z, |a| &a.s2.z),
            (Direction::Radial, |a| &a.s2.radial),
        ] {
            let rows: Vec<&[f64]> = done.iter().map(|a| pick(a).as_slice()).collect();
            let (mean, std) = mean_and_std(&rows);
            s2.push(EnsembleCurve { direction: dir, distances: distances.clone(), mean, std, count: rows.len() });
        }
        let field = |f: fn(&MinkowskiDensities) -> f64| {
            let rows: Vec<Vec<f64>> = done.iter().map(|a| a.minkowski_sweep.iter().map(f).collect()).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            mean_and_std(&refs)
        };
        minkowski = Some(SweepEnsemble {
            phi: field(|d| d.phi),
            sv: field(|d| d.sv),
            kv: field(|d| d.kv),
            chiv: field(|d| d.chiv),
        });
    }
    let mut perm = Vec::new();
    let mut velocity = Vec::new();
    for axis in Axis::ALL {
        let ok: Vec<(&FlowResult, &HistogramPDF)> = done
            .iter()
            .flat_map(|a| a.flow.iter())
            .filter(|f| f.axis == axis)
            .filter_map(|f| Some((f.result.as_ref()?, f.histogram.as_ref()?)))
            .collect();
        if ok.is_empty() {
            continue;
        }
        let n = ok.len() as f64;
        let stat = |f: fn(&FlowResult) -> f64| {
            let m = ok.iter().map(|(r, _)| f(r)).sum::<f64>() / n;
            let s = (ok.iter().map(|(r, _)| (f(r) - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, s)
        };
        let (mean_m2, std_m2) = stat(|r| r.permeability_m2);
        let (mean_darcy, std_darcy) = stat(|r| r.permeability_darcy);
        let (mean_phi_eff, _) = stat(|r| r.phi_eff);
        perm.push(PermeabilitySummary {
            axis,
            samples: ok.len(),
            mean_m2,
            std_m2,
            mean_darcy,
            std_darcy,
            mean_phi_eff,
        });
        let hists: Vec<HistogramPDF> = ok.iter().map(|(_, h)| (*h).clone()).collect();
        if let Ok(e) = ensemble_histogram(&hists) {
            velocity.push((axis, e));
        }
    }
    SourceSummary {
        source,
        analyzed: done.len(),
        failed,
        porosity_mean,
        porosity_std,
        s2,
        minkowski,
        permeability: perm,
        velocity,
    }
}

/// Runs the full protocol. `real` holds raw gray values in
/// `cfg.polarity`; its voxel size is used for both sources.
pub fn validate(real: &GrayImage3D, generator: &NetworkWeights, cfg: &ValidateConfig) -> Result<ValidationReport> {
    if generator.component != Component::Generator {
        return Err(Error::Validation("validate needs generator weights".into()));
    }
    if cfg.count == 0 || cfg.size < 2 {
        return Err(Error::Validation("count must be positive and size at least 2".into()));
    }
    let r_max = cfg.r_max();
    let voxel_size = real.voxel_size();
    let reals = real_images(real, cfg)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Validation(format!("worker pool: {e}")))?;
    let jobs: Vec<(Source, usize)> = (0..cfg.count)
        .map(|i| (Source::Real, i))
        .chain((0..cfg.count).map(|i| (Source::Synthetic, i)))
        .collect();
    let images: Vec<ImageReport> = pool.install(|| {
        jobs.par_iter()
            .map(|&(source, index)| {
                let (origin, latent_seed, img) = match source {
                    Source::Real => (Some(reals[index].0), None, Ok(reals[index].1.clone())),
                    Source::Synthetic => match synthetic_image(generator, cfg, index, voxel_size) {
                        Ok((s, img)) => (None, Some(s), Ok(img)),
                        Err(e) => (None, Some(derive_seed(cfg.seed, STREAM_LATENT, index as u64)), Err(e)),
                    },
                };
                let analysis = img.and_then(|img| analyze_image(&img, r_max, cfg.flow));
                let (analysis, error) = match analysis {
                    Ok(a) => (Some(a), None),
                    Err(e) => (None, Some(ErrorRecord::from(&e))),
                };
                ImageReport { source, index, origin, latent_seed, analysis, error }
            })
            .collect()
    });

    let real_summary = summarize(Source::Real, &images, r_max);
    let synth_summary = summarize(Source::Synthetic, &images, r_max);
    let mut ks = Vec::new();
    for axis in Axis::ALL {
        let a = real_summary.velocity.iter().find(|(x, _)| *x == axis);
        let b = synth_summary.velocity.iter().find(|(x, _)| *x == axis);
        if let (Some((_, a)), Some((_, b))) = (a, b) {
            let fa = ecdf_from_ensemble(a)?;
            let fb = ecdf_from_ensemble(b)?;
            ks.push(ks_two_sample(&fa, &fb, cfg.ks_n, cfg.ks_m, cfg.alpha, axis.name())?);
        }
    }
    let m = latent_edge_for(cfg.size);
    Ok(ValidationReport {
        report_version: REPORT_VERSION,
        metadata: Metadata {
            report_version: REPORT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            subdomain_seed: derive_seed(cfg.seed, STREAM_SUBDOMAINS, 0),
            count: cfg.count,
            size: cfg.size,
            r_max,
            voxel_size_m: voxel_size,
            real_dims: real.dims(),
            polarity: cfg.polarity,
            subdomain_mode: SubdomainMode::RandomNonoverlap,
            latent_dim: generator.input_channels,
            latent_edge: m,
            generated_edge: generated_edge(m),
            generator_parameters: generator.parameter_count(),
            alpha: cfg.alpha,
            ks_n: cfg.ks_n,
            ks_m: cfg.ks_m,
            flow: cfg.flow,
        },
        real: real_summary,
        synthetic: synth_summary,
        ks,
        images,
    })
}
