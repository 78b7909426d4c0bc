//! `rockgan`: generate and validate 3D porous-media volumes.
//!
//! Every command writes its data files (raw volumes with JSON sidecars,
//! CSV curves, JSON reports) under `--out` and prints a JSON summary on
//! stdout. Failures print `{"error": {"kind", "message"}}` on stderr and
//! exit with status 1.

mod commands;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rockgan::{Axis, Polarity};

#[derive(Parser, Debug)]
#[command(name = "rockgan", version, about = "Reconstruct and validate 3D porous-media volumes")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Volume dimensions; overrides the `<file>.json` sidecar.
    #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"], global = true)]
    pub dims: Option<Vec<usize>>,
    /// Voxel edge length in meters; overrides the sidecar.
    #[arg(long, global = true)]
    pub voxel_size: Option<f64>,
    /// Gray phase holding the pore space in input files [default: sidecar, else dark].
    #[arg(long, value_enum, global = true)]
    pub pore: Option<PoreArg>,
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    /// Worker threads for `validate` (0 = all cores).
    #[arg(long, default_value_t = 1, global = true)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, default_value = ".", global = true)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum PoreArg {
    Bright,
    Dark,
}

impl From<PoreArg> for Polarity {
    fn from(p: PoreArg) -> Self {
        match p {
            PoreArg::Bright => Polarity::Bright,
            PoreArg::Dark => Polarity::Dark,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModeArg {
    Grid,
    Random,
    Strided,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentArg {
    Generator,
    Discriminator,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Otsu (or fixed) threshold segmentation to a binary volume.
    Segment {
        #[arg(long)]
        input: PathBuf,
        /// Fixed threshold; Otsu when omitted.
        #[arg(long)]
        threshold: Option<u8>,
        /// Histogram-equalize before thresholding.
        #[arg(long)]
        equalize: bool,
    },
    /// Cut cubic sub-volumes.
    Subdomains {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, value_enum, default_value = "random")]
        mode: ModeArg,
        #[arg(long, default_value_t = 49)]
        stride: usize,
    },
    /// Directional and radial two-point probability functions.
    S2 {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        threshold: Option<u8>,
        /// Largest lag in voxels [default: half the smallest edge].
        #[arg(long)]
        r_max: Option<usize>,
    },
    /// Minkowski densities for all 256 thresholds.
    MinkowskiSweep {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate volumes from generator weights.
    Generate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, num_args = 3, value_names = ["M", "N", "O"], default_values_t = [1, 1, 1])]
        latent: Vec<usize>,
        /// Center-crop the output to this edge.
        #[arg(long)]
        crop: Option<usize>,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Generate along a straight line between two latent samples.
    Interpolate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, num_args = 3, value_names = ["M", "N", "O"], default_values_t = [1, 1, 1])]
        latent: Vec<usize>,
        /// Seed of the end latent [default: --seed + 1].
        #[arg(long)]
        seed_end: Option<u64>,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long)]
        crop: Option<usize>,
    },
    /// Discriminator probability that volumes are real.
    Score {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Dump per-layer activations as raw f32 tensors.
    Activations {
        #[arg(long)]
        weights: PathBuf,
        /// Discriminator input volume; generators use a latent sample.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, num_args = 3, value_names = ["M", "N", "O"], default_values_t = [1, 1, 1])]
        latent: Vec<usize>,
    },
    /// Stokes solve and permeability along one axis.
    Flow {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "x")]
        axis: AxisArg,
        #[arg(long)]
        threshold: Option<u8>,
        /// Treat the input as an already segmented 0/1 volume.
        #[arg(long)]
        binary: bool,
        /// Write the face velocities as raw f32 volumes.
        #[arg(long)]
        dump_field: bool,
    },
    /// Normalized velocity-magnitude distribution along one axis.
    Vhist {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "x")]
        axis: AxisArg,
        #[arg(long)]
        threshold: Option<u8>,
        #[arg(long)]
        binary: bool,
    },
    /// Two-sample KS test between two velocity histograms (CSV).
    Ks {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = rockgan::ks::DEFAULT_SAMPLE_SIZE)]
        n: usize,
        #[arg(long, default_value_t = rockgan::ks::DEFAULT_SAMPLE_SIZE)]
        m: usize,
        #[arg(long, default_value = "x")]
        direction: String,
    },
    /// Full real-versus-synthetic comparison report.
    Validate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 200)]
        size: usize,
        #[arg(long)]
        r_max: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Skip the Stokes solves.
        #[arg(long)]
        no_flow: bool,
    },
    /// Write randomly initialized reference weights.
    InitWeights {
        #[arg(long, value_enum)]
        component: ComponentArg,
        /// Base filter count.
        #[arg(long, default_value_t = 64)]
        filters: usize,
        #[arg(long, default_value_t = rockgan::nn::network::DEFAULT_LATENT_DIM)]
        latent_dim: usize,
        /// Output file name inside --out.
        #[arg(long)]
        name: Option<String>,
    },
    /// Synthetic sphere-pack gray volume (pore bright).
    Phantom {
        #[arg(long, default_value_t = 64)]
        edge: usize,
        #[arg(long, default_value_t = 0.3)]
        porosity: f64,
        #[arg(long, default_value_t = 5.0)]
        radius: f64,
        #[arg(long, default_value = "phantom.raw")]
        name: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("serializable summary");
            // a closed stdout (e.g. piped into `head`) is not an error
            let _ = writeln!(io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let err = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
