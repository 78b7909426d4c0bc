use std::fs;
use std::path::{Path, PathBuf};

use rockgan::flow::{permeability, stokes_solve, velocity_histogram, HistogramPDF};
use rockgan::ks::{ecdf_from_histogram, ks_two_sample};
use rockgan::microstats::{radial_from_directional, s2_directional};
use rockgan::minkowski::threshold_sweep;
use rockgan::nn::{
    interpolate_latent, load_weights, sample_noise, save_weights, Component, LatentVector,
    NetworkWeights,
};
use rockgan::phantom::SpherePack;
use rockgan::pipeline::{derive_seed, validate, ValidateConfig, STREAM_LATENT, STREAM_SUBDOMAINS};
use rockgan::volume::{
    extract_subdomains, histogram_equalize, load_volume, otsu_threshold, save_volume, segment,
    Sidecar, SubdomainMode, DEFAULT_VOXEL_SIZE,
};
use rockgan::{Axis, BinaryImage3D, Error, GrayImage3D, Polarity, Result};
use serde_json::{json, Value};

use crate::{Cli, Command, ComponentArg, Global, ModeArg};

/// A volume as stored on disk plus the polarity it was stored in.
struct Input {
    image: GrayImage3D,
    polarity: Polarity,
}

impl Input {
    fn canonical(&self) -> GrayImage3D {
        self.image.clone().canonicalize(self.polarity)
    }
}

fn load_input(g: &Global, path: &Path) -> Result<Input> {
    let sidecar_path = Sidecar::path_for(path);
    let sidecar = if sidecar_path.exists() { Some(Sidecar::read(&sidecar_path)?) } else { None };
    let dims = match (&g.dims, &sidecar) {
        (Some(d), _) => [d[0], d[1], d[2]],
        (None, Some(s)) => s.dims,
        (None, None) => {
            return Err(Error::Validation(format!(
                "no --dims given and no sidecar {}",
                sidecar_path.display()
            )))
        }
    };
    let voxel_size = g
        .voxel_size
        .or(sidecar.as_ref().map(|s| s.voxel_size_m))
        .unwrap_or(DEFAULT_VOXEL_SIZE);
    let polarity = g
        .pore
        .map(Polarity::from)
        .or(sidecar.as_ref().map(|s| s.pore_polarity))
        .unwrap_or(Polarity::Dark);
    Ok(Input { image: load_volume(path, dims, voxel_size)?, polarity })
}

fn out_path(g: &Global, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&g.out)?;
    Ok(g.out.join(name))
}

fn write_volume(g: &Global, name: &str, img: &GrayImage3D, polarity: Polarity) -> Result<PathBuf> {
    let path = out_path(g, name)?;
    save_volume(img, &path)?;
    Sidecar { dims: img.dims(), voxel_size_m: img.voxel_size(), pore_polarity: polarity }
        .write(&Sidecar::path_for(&path))?;
    Ok(path)
}

fn write_text(g: &Global, name: &str, text: &str) -> Result<PathBuf> {
    let path = out_path(g, name)?;
    fs::write(&path, text)?;
    Ok(path)
}

fn write_json(g: &Global, name: &str, v: &Value) -> Result<PathBuf> {
    write_text(g, name, &(serde_json::to_string_pretty(v)? + "\n"))
}

/// Binary pore image of an input, from a fixed or Otsu threshold, or read
/// directly when the file already holds labels.
fn binarize(input: &Input, threshold: Option<u8>, binary: bool) -> Result<(Option<u8>, BinaryImage3D)> {
    if binary {
        let dark = input.polarity == Polarity::Dark;
        let img = &input.image;
        let data = img.data().iter().map(|&v| ((v != 0) != dark) as u8).collect();
        return Ok((None, BinaryImage3D::new(img.dims(), img.voxel_size(), data)?));
    }
    let img = input.canonical();
    let t = match threshold {
        Some(t) => t,
        None => otsu_threshold(&img)?,
    };
    Ok((Some(t), segment(&img, t)))
}

fn latent_dims(v: &[usize]) -> Result<[usize; 3]> {
    if v.len() != 3 || v.contains(&0) {
        return Err(Error::Validation("--latent needs three positive edges".into()));
    }
    Ok([v[0], v[1], v[2]])
}

fn load_component(path: &Path, want: Component) -> Result<NetworkWeights> {
    let w = load_weights(path)?;
    if w.component != want {
        return Err(Error::Validation(format!(
            "{} holds {:?} weights, expected {want:?}",
            path.display(),
            w.component
        )));
    }
    Ok(w)
}

fn maybe_crop(img: GrayImage3D, crop: Option<usize>) -> Result<GrayImage3D> {
    match crop {
        Some(c) => img.center_crop([c; 3]),
        None => Ok(img),
    }
}

fn output_polarity(g: &Global) -> Polarity {
    g.pore.map(Polarity::from).unwrap_or(Polarity::Dark)
}

pub fn run(cli: &Cli) -> Result<Value> {
    let g = &cli.global;
    match &cli.command {
        Command::Segment { input, threshold, equalize } => {
            let inp = load_input(g, input)?;
            let inp = if *equalize {
                Input { image: histogram_equalize(&inp.image), polarity: inp.polarity }
            } else {
                inp
            };
            let (t, bin) = binarize(&inp, *threshold, false)?;
            let path = write_volume(g, "segmented.raw", &bin.to_gray(), Polarity::Bright)?;
            Ok(json!({
                "threshold": t,
                "porosity": bin.pore_count() as f64 / bin.len() as f64,
                "output": path,
            }))
        }

        Command::Subdomains { input, size, count, mode, stride } => {
            let inp = load_input(g, input)?;
            let mode = match mode {
                ModeArg::Grid => SubdomainMode::NonoverlapGrid,
                ModeArg::Random => SubdomainMode::RandomNonoverlap,
                ModeArg::Strided => SubdomainMode::Strided { stride: *stride },
            };
            let seed = derive_seed(g.seed, STREAM_SUBDOMAINS, 0);
            let subs = extract_subdomains(&inp.image, *size, *count, mode, seed)?;
            let mut entries = Vec::new();
            for (i, s) in subs.iter().enumerate() {
                let name = format!("sub_{i:04}.raw");
                write_volume(g, &name, &s.image, inp.polarity)?;
                entries.push(json!({ "index": i, "file": name, "origin": s.origin }));
            }
            let index = json!({ "size": size, "mode": mode, "seed": seed, "subvolumes": entries });
            write_json(g, "subdomains.json", &index)?;
            Ok(index)
        }

        Command::S2 { input, threshold, r_max } => {
            let inp = load_input(g, input)?;
            let (t, bin) = binarize(&inp, *threshold, false)?;
            let r = r_max.unwrap_or(*bin.dims().iter().min().expect("3 dims") / 2);
            let curves = Axis::ALL
                .iter()
                .map(|&a| s2_directional(&bin, a, r))
                .collect::<Result<Vec<_>>>()?;
            let radial = radial_from_directional(&curves);
            let id = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let mut files = Vec::new();
            for c in curves.iter().chain(std::iter::once(&radial)) {
                let name = format!("s2_{}.csv", c.direction.name());
                write_text(g, &name, &c.to_csv())?;
                write_json(g, &format!("{name}.json"), &c.csv_header(&id))?;
                files.push(name);
            }
            Ok(json!({ "threshold": t, "porosity": radial.values[0], "r_max": r, "files": files }))
        }

        Command::MinkowskiSweep { input } => {
            let img = load_input(g, input)?.canonical();
            let sweep = threshold_sweep(&img)?;
            write_text(g, "minkowski_sweep.csv", &sweep.to_csv())?;
            write_json(g, "minkowski_sweep.csv.json", &sweep.csv_header())?;
            let at = sweep.otsu.map(|t| sweep.densities[t as usize]);
            Ok(json!({ "otsu_threshold": sweep.otsu, "at_otsu": at, "file": "minkowski_sweep.csv" }))
        }

        Command::Generate { weights, latent, crop, count } => {
            let w = load_component(weights, Component::Generator)?;
            let [m, n, o] = latent_dims(latent)?;
            let voxel = g.voxel_size.unwrap_or(DEFAULT_VOXEL_SIZE);
            let mut outputs = Vec::new();
            for i in 0..*count {
                let seed = derive_seed(g.seed, STREAM_LATENT, i as u64);
                let z = sample_noise(w.input_channels, m, n, o, seed);
                let img = maybe_crop(w.generate(&z)?.with_voxel_size(voxel), *crop)?;
                let name = format!("generated_{i:04}.raw");
                write_volume(g, &name, &img, output_polarity(g))?;
                outputs.push(json!({ "file": name, "latent_seed": seed, "dims": img.dims() }));
            }
            Ok(json!({ "latent": [m, n, o], "outputs": outputs }))
        }

        Command::Interpolate { weights, latent, seed_end, steps, crop } => {
            let w = load_component(weights, Component::Generator)?;
            let [m, n, o] = latent_dims(latent)?;
            let end_seed = seed_end.unwrap_or(g.seed.wrapping_add(1));
            let a = sample_noise(w.input_channels, m, n, o, g.seed);
            let b = sample_noise(w.input_channels, m, n, o, end_seed);
            let voxel = g.voxel_size.unwrap_or(DEFAULT_VOXEL_SIZE);
            let mut outputs = Vec::new();
            for (i, z) in interpolate_latent(&a, &b, *steps)?.iter().enumerate() {
                let img = maybe_crop(w.generate(z)?.with_voxel_size(voxel), *crop)?;
                let name = format!("interp_{i:03}.raw");
                write_volume(g, &name, &img, output_polarity(g))?;
                outputs.push(json!({ "file": name, "beta": 1.0 - i as f64 / (*steps - 1) as f64 }));
            }
            Ok(json!({ "seed_start": g.seed, "seed_end": end_seed, "outputs": outputs }))
        }

        Command::Score { weights, input } => {
            let w = load_component(weights, Component::Discriminator)?;
            let mut scores = Vec::new();
            for path in input {
                let img = load_input(g, path)?.image;
                let s = w.score(&img)?;
                scores.push(json!({ "file": path, "score": s.score, "tiled": s.tiled, "tiles": s.tile_scores.len() }));
            }
            let mut ranking: Vec<usize> = (0..scores.len()).collect();
            ranking.sort_by(|&i, &j| {
                let (a, b) = (scores[i]["score"].as_f64(), scores[j]["score"].as_f64());
                b.partial_cmp(&a).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
            });
            Ok(json!({ "scores": scores, "ranking": ranking }))
        }

        Command::Activations { weights, input, latent } => {
            let w = load_weights(weights)?;
            let x = match (w.component, input) {
                (Component::Discriminator, Some(p)) => {
                    rockgan::nn::tensor::image_to_tensor(&load_input(g, p)?.image)
                }
                (Component::Discriminator, None) => {
                    return Err(Error::Validation("discriminator activations need --input".into()))
                }
                (Component::Generator, _) => {
                    let [m, n, o] = latent_dims(latent)?;
                    let z: LatentVector = sample_noise(w.input_channels, m, n, o, g.seed);
                    z.tensor().clone()
                }
            };
            let acts = w.dump_activations(&x)?;
            let mut layers = Vec::new();
            for (i, t) in acts.iter().enumerate() {
                let name = format!("activation_{i:02}.f32");
                let mut bytes = Vec::with_capacity(t.len() * 4);
                for v in t.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                fs::write(out_path(g, &name)?, bytes)?;
                let (mut lo, mut hi, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
                for &v in t.data() {
                    lo = lo.min(v);
                    hi = hi.max(v);
                    sum += v as f64;
                }
                layers.push(json!({
                    "layer": i + 1,
                    "file": name,
                    "shape": t.shape(),
                    "min": lo,
                    "max": hi,
                    "mean": sum / t.len() as f64,
                }));
            }
            let header = json!({ "dtype": "f32le", "layout": "channel, z, y, x", "layers": layers });
            write_json(g, "activations.json", &header)?;
            Ok(header)
        }

        Command::Flow { input, axis, threshold, binary, dump_field } => {
            let inp = load_input(g, input)?;
            let (t, bin) = binarize(&inp, *threshold, *binary)?;
            let axis = Axis::from(*axis);
            let field = stokes_solve(&bin, axis)?;
            let result = permeability(&field);
            let hist = velocity_histogram(&field)?;
            let a = axis.name();
            write_text(g, &format!("flow_{a}.csv"), &format!("{}\n{}\n", rockgan::flow::FlowResult::csv_header(), result.csv_row()))?;
            write_json(g, &format!("flow_{a}.json"), &serde_json::to_value(&result)?)?;
            write_text(g, &format!("vhist_{a}.csv"), &hist.to_csv())?;
            if *dump_field {
                field.dump_raw(&g.out, &format!("velocity_{a}"))?;
            }
            Ok(json!({ "threshold": t, "result": result }))
        }

        Command::Vhist { input, axis, threshold, binary } => {
            let inp = load_input(g, input)?;
            let (_, bin) = binarize(&inp, *threshold, *binary)?;
            let axis = Axis::from(*axis);
            let hist = velocity_histogram(&stokes_solve(&bin, axis)?)?;
            let name = format!("vhist_{}.csv", axis.name());
            write_text(g, &name, &hist.to_csv())?;
            Ok(json!({
                "file": name,
                "count": hist.count,
                "underflow": hist.underflow,
                "overflow": hist.overflow,
                "mass": hist.mass(),
            }))
        }

        Command::Ks { a, b, alpha, n, m, direction } => {
            let ha = HistogramPDF::from_csv(&fs::read_to_string(a)?)?;
            let hb = HistogramPDF::from_csv(&fs::read_to_string(b)?)?;
            let r = ks_two_sample(&ecdf_from_histogram(&ha)?, &ecdf_from_histogram(&hb)?, *n, *m, *alpha, direction)?;
            Ok(serde_json::to_value(r)?)
        }

        Command::Validate { real, weights, count, size, r_max, alpha, no_flow } => {
            let inp = load_input(g, real)?;
            let w = load_component(weights, Component::Generator)?;
            let cfg = ValidateConfig {
                count: *count,
                size: *size,
                seed: g.seed,
                jobs: g.jobs,
                r_max: *r_max,
                alpha: *alpha,
                polarity: inp.polarity,
                flow: !no_flow,
                ..Default::default()
            };
            let report = validate(&inp.image, &w, &cfg)?;
            let path = write_text(g, "report.json", &report.to_json()?)?;
            let failed = report.real.failed + report.synthetic.failed;
            Ok(json!({
                "report": path,
                "images": report.images.len(),
                "failed": failed,
                "porosity": { "real": report.real.porosity_mean, "synthetic": report.synthetic.porosity_mean },
                "permeability": { "real": report.real.permeability, "synthetic": report.synthetic.permeability },
                "ks": report.ks,
            }))
        }

        Command::InitWeights { component, filters, latent_dim, name } => {
            let (w, default_name) = match component {
                ComponentArg::Generator => {
                    (NetworkWeights::random_generator(*latent_dim, *filters, g.seed), "generator.g3dw")
                }
                ComponentArg::Discriminator => {
                    (NetworkWeights::random_discriminator(*filters, g.seed), "discriminator.g3dw")
                }
            };
            let path = out_path(g, name.as_deref().unwrap_or(default_name))?;
            save_weights(&w, &path)?;
            Ok(json!({
                "file": path,
                "component": format!("{:?}", w.component).to_lowercase(),
                "parameters": w.parameter_count(),
                "layers": w.layers.len(),
            }))
        }

        Command::Phantom { edge, porosity, radius, name } => {
            let img = SpherePack {
                edge: *edge,
                porosity: *porosity,
                radius: *radius,
                seed: g.seed,
                ..Default::default()
            }
            .gray(g.voxel_size.unwrap_or(DEFAULT_VOXEL_SIZE))?;
            let path = write_volume(g, name, &img, Polarity::Bright)?;
            Ok(json!({ "file": path, "dims": img.dims() }))
        }
    }
}
