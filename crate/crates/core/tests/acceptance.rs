//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Oracles here are written independently of the library code.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rockgan::flow::{permeability, stokes_solve, velocity_histogram, FlowResult};
use rockgan::ks::{c_alpha, ecdf_from_histogram, ks_threshold, KSResult};
use rockgan::microstats::s2_directional;
use rockgan::minkowski::CellCounts;
use rockgan::nn::network::{generated_edge, NetworkWeights};
use rockgan::nn::latent::sample_noise;
use rockgan::nn::ops::{conv3d, conv_transpose3d, Kernel};
use rockgan::nn::tensor::Tensor;
use rockgan::phantom::{self, SpherePack};
use rockgan::pipeline::{validate, ValidateConfig};
use rockgan::{Axis, BinaryImage3D};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Dense matrix of a 3D convolution: rows `(oc, out voxel)`, columns
/// `(ic, in voxel)`, built entry by entry from the kernel.
fn unrolled(
    input: [usize; 3],
    cin: usize,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
    w: &[f32],
) -> (Vec<f64>, [usize; 3], usize) {
    let out = input.map(|n| (n + 2 * p - k) / s + 1);
    let in_n: usize = input.iter().product();
    let out_n: usize = out.iter().product();
    let cols = cin * in_n;
    let mut m = vec![0.0f64; cout * out_n * cols];
    for oc in 0..cout {
        for oz in 0..out[0] {
            for oy in 0..out[1] {
                for ox in 0..out[2] {
                    let row = oc * out_n + (oz * out[1] + oy) * out[2] + ox;
                    for ic in 0..cin {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iz = (oz * s + kz) as isize - p as isize;
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iz < 0 || iy < 0 || ix < 0 {
                                        continue;
                                    }
                                    let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                    if iz >= input[0] || iy >= input[1] || ix >= input[2] {
                                        continue;
                                    }
                                    let col = ic * in_n + (iz * input[1] + iy) * input[2] + ix;
                                    let wi = (((oc * cin + ic) * k + kz) * k + ky) * k + kx;
                                    m[row * cols + col] += w[wi] as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (m, out, cols)
}

fn rel_err(got: &[f32], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-30);
    got.iter().zip(want).fold(0.0f64, |a, (g, w)| a.max((*g as f64 - w).abs())) / scale
}

fn conv_oracle() -> Outcome {
    let t0 = Instant::now();
    let combos = [(4, 1, 0), (4, 2, 1), (3, 1, 1)];
    let (cin, cout) = (2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &(k, s, p) in &combos {
        for d in 1..=6 {
            for h in 1..=6 {
                for w in 1..=6 {
                    let shape = [d, h, w];
                    let wts = rand_vec(&mut rng, cout * cin * k * k * k);

                    // forward: y = W x
                    if shape.iter().all(|&n| n + 2 * p >= k) {
                        let x = rand_vec(&mut rng, cin * d * h * w);
                        let (m, out, cols) = unrolled(shape, cin, cout, k, s, p, &wts);
                        let want: Vec<f64> = m
                            .chunks(cols)
                            .map(|row| row.iter().zip(&x).map(|(a, b)| a * *b as f64).sum())
                            .collect();
                        let kern = Kernel::new([cout, cin, k, k, k], wts.clone()).unwrap();
                        let xt = Tensor::new([cin, d, h, w], x).unwrap();
                        let y = conv3d(&xt, &kern, None, s, p).unwrap();
                        assert_eq!(y.shape(), [cout, out[0], out[1], out[2]]);
                        worst = worst.max(rel_err(y.data(), &want));
                        cases += 1;
                    }

                    // transposed: input has `cout` channels, y = W^T x
                    let tout = shape.map(|n| (n - 1) * s + k - 2 * p);
                    let (m, back, cols) = unrolled(tout, cin, cout, k, s, p, &wts);
                    assert_eq!(back, shape);
                    let x = rand_vec(&mut rng, cout * d * h * w);
                    let mut want = vec![0.0f64; cols];
                    for (row, &xv) in m.chunks(cols).zip(&x) {
                        for (o, a) in want.iter_mut().zip(row) {
                            *o += a * xv as f64;
                        }
                    }
                    let kern = Kernel::new([cout, cin, k, k, k], wts).unwrap();
                    let xt = Tensor::new([cout, d, h, w], x).unwrap();
                    let y = conv_transpose3d(&xt, &kern, None, s, p).unwrap();
                    assert_eq!(y.shape(), [cin, tout[0], tout[1], tout[2]]);
                    worst = worst.max(rel_err(y.data(), &want));
                    cases += 1;
                }
            }
        }
    }
    let el = t0.elapsed();
    check(
        worst < 1e-5 && el < Duration::from_secs(10),
        format!("{cases} cases, max rel err {worst:.2e}, {:.2} s", el.as_secs_f64()),
    )
}

fn size_law() -> Outcome {
    let t0 = Instant::now();
    let g = NetworkWeights::random_generator(8, 1, 3);
    let mut edges = Vec::new();
    let mut ok = true;
    for m in [1, 2, 3, 10] {
        let img = g.generate(&sample_noise(8, m, m, m, m as u64)).unwrap();
        let e = 16 * m + 48;
        ok &= img.dims() == [e; 3] && generated_edge(m) == e;
        edges.push(format!("m={m}:{:?}", img.dims()));
    }
    let one = g.generate(&sample_noise(8, 1, 1, 1, 0)).unwrap();
    ok &= one.dims() == [64; 3];
    let el = t0.elapsed();
    check(ok && el < Duration::from_secs(60), format!("{} , {:.1} s", edges.join(" "), el.as_secs_f64()))
}

fn s2_oracle() -> Outcome {
    let t0 = Instant::now();
    let n = 16;
    let mut exact = true;
    let mut s0 = true;
    for seed in 0..50u64 {
        let phi = 0.1 + 0.8 * (seed as f64 / 49.0);
        let bin = phantom::random_binary([n; 3], phi, seed);
        // every ordered voxel pair, bucketed by its displacement
        let mut pore = [[0u64; 16]; 3];
        let mut total = [[0u64; 16]; 3];
        let coords: Vec<[usize; 3]> = (0..n * n * n).map(|i| [i % n, (i / n) % n, i / (n * n)]).collect();
        for a in &coords {
            let pa = bin.is_pore(a[0], a[1], a[2]);
            for b in &coords {
                let dd = [0, 1, 2].map(|i| b[i] as isize - a[i] as isize);
                let axes = match (dd[0] != 0, dd[1] != 0, dd[2] != 0) {
                    (false, false, false) => 0..3,
                    (true, false, false) if dd[0] > 0 => 0..1,
                    (false, true, false) if dd[1] > 0 => 1..2,
                    (false, false, true) if dd[2] > 0 => 2..3,
                    _ => continue,
                };
                let r = dd.iter().map(|v| v.unsigned_abs()).sum::<usize>();
                let both = pa && bin.is_pore(b[0], b[1], b[2]);
                for ax in axes {
                    total[ax][r] += 1;
                    pore[ax][r] += both as u64;
                }
            }
        }
        for (ax, axis) in Axis::ALL.into_iter().enumerate() {
            let c = s2_directional(&bin, axis, n - 1).unwrap();
            exact &= c.pore_pairs == pore[ax] && c.total_pairs == total[ax];
            for r in 0..n {
                exact &= c.values[r] == pore[ax][r] as f64 / total[ax][r] as f64;
            }
            s0 &= c.values[0] == bin.pore_count() as f64 / bin.len() as f64;
        }
    }
    let mut worst = 0.0f64;
    for (i, phi) in [0.2, 0.5, 0.7].into_iter().enumerate() {
        let bin = phantom::random_binary([64; 3], phi, 100 + i as u64);
        let p = bin.pore_count() as f64 / bin.len() as f64;
        for axis in Axis::ALL {
            let c = s2_directional(&bin, axis, 32).unwrap();
            worst = worst.max((c.values[32] - p * p).abs());
        }
    }
    let el = t0.elapsed();
    check(
        exact && s0 && worst < 0.02 && el < Duration::from_secs(60),
        format!(
            "pair counts exact on 50 images: {exact}, S2(0)=phi: {s0}, max |S2(32)-phi^2| = {worst:.4}, {:.1} s",
            el.as_secs_f64()
        ),
    )
}

fn euler(bin: &BinaryImage3D) -> i64 {
    CellCounts::of(bin).euler()
}

fn minkowski_oracles() -> Outcome {
    let t0 = Instant::now();
    let single = BinaryImage3D::from_fn([3; 3], 1.0, |x, y, z| (x, y, z) == (1, 1, 1)).unwrap();
    let corner = BinaryImage3D::from_fn([4; 3], 1.0, |x, y, z| (x, y, z) == (0, 0, 0)).unwrap();
    let torus = BinaryImage3D::from_fn([5, 5, 3], 1.0, |x, y, z| {
        z == 1 && (1..=3).contains(&x) && (1..=3).contains(&y) && (x, y) != (2, 2)
    })
    .unwrap();
    let chi_voxel = euler(&single) == 1 && euler(&corner) == 1;
    let chi_torus = euler(&torus);

    // two random blobs separated by a grain slab
    let mut additive = true;
    for seed in 0..10 {
        let r = phantom::random_binary([24, 16, 16], 0.6, seed);
        let left = BinaryImage3D::from_fn([24, 16, 16], 1.0, |x, y, z| x < 11 && r.is_pore(x, y, z)).unwrap();
        let right = BinaryImage3D::from_fn([24, 16, 16], 1.0, |x, y, z| x > 12 && r.is_pore(x, y, z)).unwrap();
        let both = BinaryImage3D::from_fn([24, 16, 16], 1.0, |x, y, z| left.is_pore(x, y, z) || right.is_pore(x, y, z)).unwrap();
        let (a, b, c) = (CellCounts::of(&left), CellCounts::of(&right), CellCounts::of(&both));
        additive &= c.vertices == a.vertices + b.vertices
            && (0..3).all(|i| {
                c.edges[i] == a.edges[i] + b.edges[i]
                    && c.squares[i] == a.squares[i] + b.squares[i]
                    && c.interface[i] == a.interface[i] + b.interface[i]
            })
            && c.cubes == a.cubes + b.cubes
            && c.euler() == a.euler() + b.euler();
    }

    let radius = 20.0;
    let ball = phantom::ball(48, radius);
    let counts = CellCounts::of(&ball);
    let d = counts.densities(1.0);
    let vol = ball.len() as f64;
    let surface_ratio = d.sv * vol / (4.0 * PI * radius * radius);
    let m_ratio = d.kv * vol / (4.0 * PI * radius);
    let chi_ball = counts.euler();
    let el = t0.elapsed();
    check(
        chi_voxel
            && chi_torus == 0
            && additive
            && (1.4..=1.6).contains(&surface_ratio)
            && (m_ratio - 1.0).abs() <= 0.2
            && chi_ball == 1
            && el < Duration::from_secs(120),
        format!(
            "voxel chi=1: {chi_voxel}, torus chi={chi_torus}, additive: {additive}, ball R=20: S/S_exact={surface_ratio:.3}, M/4piR={m_ratio:.3}, chi={chi_ball}, {:.1} s",
            el.as_secs_f64()
        ),
    )
}

fn timed_solve(bin: &BinaryImage3D, axis: Axis) -> (rockgan::flow::VelocityField, FlowResult, Duration) {
    let t0 = Instant::now();
    let f = stokes_solve(bin, axis).expect("solve");
    let r = permeability(&f);
    (f, r, t0.elapsed())
}

/// Flow rate of a square duct of side `a` per unit pressure gradient.
fn duct_series(a: f64) -> f64 {
    let b = a / 2.0;
    let sum: f64 = (0..200)
        .map(|i| {
            let n = (2 * i + 1) as f64;
            (n * PI / 2.0).tanh() / n.powi(5)
        })
        .sum();
    4.0 * b.powi(4) / 3.0 * (1.0 - 192.0 / PI.powi(5) * sum)
}

fn stokes_analytic() -> Outcome {
    let mut slowest = Duration::ZERO;
    let mut lines = Vec::new();
    let mut ok = true;

    let h = 20usize;
    let (_, r, t) = timed_solve(&phantom::plane_channel(6, h, 1), Axis::X);
    slowest = slowest.max(t);
    let exact = h as f64 / (h + 2) as f64 * (h * h) as f64 / 12.0;
    let ch = r.permeability_voxel / exact - 1.0;
    ok &= ch.abs() < 0.05;
    lines.push(format!("channel k/k_exact-1={ch:+.4}"));

    let a = 20usize;
    let (_, r, t) = timed_solve(&phantom::rect_duct(6, a, a), Axis::X);
    slowest = slowest.max(t);
    let exact = duct_series(a as f64) / ((a + 2) * (a + 2)) as f64;
    let du = r.permeability_voxel / exact - 1.0;
    ok &= du.abs() < 0.05;
    lines.push(format!("duct k/k_series-1={du:+.4}"));

    let pack = SpherePack { edge: 32, porosity: 0.35, radius: 4.0, ..Default::default() }.binary(1.0).unwrap();
    let mut mass = 0.0f64;
    for axis in Axis::ALL {
        let (_, r, t) = timed_solve(&pack, axis);
        slowest = slowest.max(t);
        mass = mass.max(((r.inlet_flux - r.outlet_flux) / r.outlet_flux).abs());
    }
    ok &= mass < 1e-6;
    lines.push(format!("mass imbalance {mass:.1e}"));

    let (f, _, t) = timed_solve(&phantom::capillary_tube(6, 15.0), Axis::X);
    slowest = slowest.max(t);
    let hist = velocity_histogram(&f).unwrap();
    let cdf = ecdf_from_histogram(&hist).unwrap();
    // uniform on (0, 2]: F(s) = s / 2
    let mut sup = 0.0f64;
    for &e in hist.edges.iter().filter(|&&e| e <= 2.0) {
        let (lo, hi) = cdf.eval(e);
        sup = sup.max((lo - e / 2.0).abs()).max((hi - e / 2.0).abs());
    }
    let above = 1.0 - cdf.eval(2.0).1;
    ok &= sup < 0.1;
    lines.push(format!("capillary CDF sup|F-s/2|={sup:.4} (mass above 2: {above:.1e})"));

    ok &= slowest < Duration::from_secs(300);
    lines.push(format!("slowest solve {:.1} s", slowest.as_secs_f64()));
    check(ok, lines.join(", "))
}

fn ks_closed_form() -> Outcome {
    let t0 = Instant::now();
    let c = c_alpha(0.05);
    let t = ks_threshold(0.05, 256, 256);
    let accepts: Vec<bool> = [0.09, 0.09, 0.07]
        .iter()
        .map(|&d| !KSResult::from_statistic("x", d, 0.05, 256, 256).unwrap().reject)
        .collect();
    let el = t0.elapsed();
    check(
        (c - 1.3581).abs() <= 1e-3 && (t - 0.1200).abs() <= 1e-3 && accepts.iter().all(|&a| a) && el < Duration::from_secs(1),
        format!("c(0.05)={c:.5}, D_0.05={t:.5}, accept x/y/z={accepts:?}"),
    )
}

fn determinism() -> Outcome {
    let real = SpherePack { edge: 48, porosity: 0.4, radius: 4.0, seed: 2, ..Default::default() }
        .gray(1e-5)
        .unwrap();
    let generator = NetworkWeights::random_generator(4, 1, 5);
    let cfg = ValidateConfig { count: 3, size: 16, seed: 42, ..Default::default() };
    let a = validate(&real, &generator, &cfg).unwrap().to_json().unwrap();
    let b = validate(&real, &generator, &cfg).unwrap().to_json().unwrap();
    let c = validate(&real, &generator, &ValidateConfig { jobs: 2, ..cfg.clone() }).unwrap().to_json().unwrap();
    check(
        a == b && a == c,
        format!("{} bytes, repeat identical: {}, 2 jobs identical: {}", a.len(), a == b, a == c),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("convolution oracle", conv_oracle),
        ("generator size law", size_law),
        ("S2 oracle", s2_oracle),
        ("Minkowski oracles", minkowski_oracles),
        ("Stokes analytic", stokes_analytic),
        ("KS closed form", ks_closed_form),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        failed += !o.pass as usize;
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
