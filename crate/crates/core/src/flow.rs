//! Single-phase Stokes flow on the segmented pore space: directional
//! permeability and normalized velocity-magnitude distributions.
//!
//! Discretization is the staggered MAC grid in solver units (`h = 1`,
//! `mu = 1`). Pressure is fixed to 1 on the inlet plane and 0 on the outlet
//! plane; lateral domain boundaries are impermeable (zero normal velocity,
//! zero shear) and every pore/grain face is no-slip. Only the pore space
//! connected to both inlet and outlet is solved; everything else counts as
//! grain.
//!
//! The saddle-point system
//!
//! ```text
//! A u - D^T p = b
//!     D u     = 0
//! ```
//!
//! is solved with block-preconditioned MINRES, starting from the linear
//! pressure profile and the velocity it drives (one Jacobi-preconditioned
//! CG solve with `A`).

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{connected_pore, linear_index, Axis, BinaryImage3D, PORE};

/// 1 darcy in m².
pub const DARCY_M2: f64 = 9.869233e-13;

pub const INLET_PRESSURE: f64 = 1.0;
pub const OUTLET_PRESSURE: f64 = 0.0;
pub const MAX_OUTER_ITERATIONS: usize = 50_000;
pub const FLUX_TOLERANCE: f64 = 1e-6;
pub const DIVERGENCE_TOLERANCE: f64 = 1e-8;
const INNER_TOLERANCE: f64 = 1e-12;
/// Preconditioned residual relative to the preconditioned right-hand side.
const RESIDUAL_TOLERANCE: f64 = 1e-9;

pub const HISTOGRAM_BINS: usize = 256;
pub const HISTOGRAM_MIN: f64 = 1e-4;
pub const HISTOGRAM_MAX: f64 = 1e2;

const NONE: u32 = u32::MAX;

/// Converged Stokes solution.
///
/// `faces[a]` holds the velocity component along axis `a` on the faces
/// normal to `a`, indexed x-fastest over dims with `dims[a] + 1` entries
/// along `a`. Faces not adjacent to two solved cells are exactly zero.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub axis: Axis,
    pub viscosity: f64,
    pub faces: [Vec<f64>; 3],
    /// Cell pressure, zero outside the solved pore space.
    pub pressure: Vec<f64>,
    /// Solved (inlet/outlet connected) pore cells.
    pub pore: BinaryImage3D,
    pub iterations: usize,
    pub max_divergence: f64,
}

pub fn face_dims(dims: [usize; 3], axis: usize) -> [usize; 3] {
    let mut d = dims;
    d[axis] += 1;
    d
}

impl VelocityField {
    fn face(&self, a: usize, x: usize, y: usize, z: usize) -> f64 {
        self.faces[a][linear_index(face_dims(self.dims, a), x, y, z)]
    }

    /// Net flux through the face plane at coordinate `c` along the flow axis.
    pub fn plane_flux(&self, c: usize) -> f64 {
        let a = self.axis.index();
        let fd = face_dims(self.dims, a);
        let mut q = 0.0;
        for z in 0..fd[2] {
            for y in 0..fd[1] {
                for x in 0..fd[0] {
                    if [x, y, z][a] == c {
                        q += self.faces[a][linear_index(fd, x, y, z)];
                    }
                }
            }
        }
        q
    }

    pub fn inlet_flux(&self) -> f64 {
        self.plane_flux(0)
    }

    pub fn outlet_flux(&self) -> f64 {
        self.plane_flux(self.dims[self.axis.index()])
    }

    /// Cell-centered velocity, averaging the two opposing faces per axis.
    pub fn cell_velocity(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (a, va) in v.iter_mut().enumerate() {
            let mut hi = [x, y, z];
            hi[a] += 1;
            *va = 0.5 * (self.face(a, x, y, z) + self.face(a, hi[0], hi[1], hi[2]));
        }
        v
    }

    /// Speeds of the solved pore cells in scan order.
    pub fn cell_speeds(&self) -> Vec<f64> {
        let d = self.dims;
        let mut out = Vec::with_capacity(self.pore.pore_count());
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    if self.pore.is_pore(x, y, z) {
                        let v = self.cell_velocity(x, y, z);
                        out.push((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
                    }
                }
            }
        }
        out
    }

    pub fn mean_speed(&self) -> f64 {
        let s = self.cell_speeds();
        if s.is_empty() {
            0.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    }

    /// Largest absolute cell divergence.
    pub fn divergence_max(&self) -> f64 {
        let d = self.dims;
        let mut m = 0.0f64;
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    if !self.pore.is_pore(x, y, z) {
                        continue;
                    }
                    let mut div = 0.0;
                    for a in 0..3 {
                        let mut hi = [x, y, z];
                        hi[a] += 1;
                        div += self.face(a, hi[0], hi[1], hi[2]) - self.face(a, x, y, z);
                    }
                    m = m.max(div.abs());
                }
            }
        }
        m
    }

    /// Writes `<stem>_u.raw`, `<stem>_v.raw`, `<stem>_w.raw` (little-endian
    /// f32 face velocities) and `<stem>.json` describing them.
    pub fn dump_raw(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (a, name) in ["u", "v", "w"].iter().enumerate() {
            let file = format!("{stem}_{name}.raw");
            let mut bytes = Vec::with_capacity(self.faces[a].len() * 4);
            for &v in &self.faces[a] {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            fs::write(dir.join(&file), bytes)?;
            files.push(serde_json::json!({
                "component": name,
                "file": file,
                "dims": face_dims(self.dims, a),
            }));
        }
        let header = serde_json::json!({
            "dims": self.dims,
            "voxel_size_m": self.voxel_size,
            "axis": self.axis.name(),
            "viscosity": self.viscosity,
            "dtype": "f32le",
            "layout": "x-fastest",
            "units": "solver (h = 1, mu = 1, dp = 1)",
            "components": files,
        });
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }
}

/// Free-face system for one solve.
struct System {
    /// `(axis, face grid index)` per unknown.
    faces: Vec<(u8, u32)>,
    /// Neighbor unknowns: two along the face normal, four transverse.
    nb: Vec<[u32; 6]>,
    diag: Vec<f64>,
    weight: Vec<f64>,
    /// Cell on the low / high side of each face (solved-cell index).
    cells: Vec<[u32; 2]>,
    rhs: Vec<f64>,
    n_cells: usize,
    outlet: Vec<u32>,
    /// Position of each solved cell along the flow axis.
    cell_pos: Vec<u32>,
}

impl System {
    fn build(pore: &BinaryImage3D, axis: usize) -> Result<Self> {
        let d = pore.dims();
        let mut cell_id = vec![NONE; pore.len()];
        let mut cell_pos = Vec::new();
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    let i = linear_index(d, x, y, z);
                    if pore.data()[i] == PORE {
                        cell_id[i] = cell_pos.len() as u32;
                        cell_pos.push([x, y, z][axis] as u32);
                    }
                }
            }
        }
        let cell_at = |p: [isize; 3]| -> u32 {
            if (0..3).any(|a| p[a] < 0 || p[a] >= d[a] as isize) {
                NONE
            } else {
                cell_id[linear_index(d, p[0] as usize, p[1] as usize, p[2] as usize)]
            }
        };

        // unknown ids per face grid
        let mut face_id: [Vec<u32>; 3] = Default::default();
        let mut faces = Vec::new();
        let mut cells = Vec::new();
        for a in 0..3 {
            let fd = face_dims(d, a);
            face_id[a] = vec![NONE; fd.iter().product()];
            for z in 0..fd[2] {
                for y in 0..fd[1] {
                    for x in 0..fd[0] {
                        let p = [x as isize, y as isize, z as isize];
                        let mut lo = p;
                        lo[a] -= 1;
                        let (cl, ch) = (cell_at(lo), cell_at(p));
                        let c = p[a] as usize;
                        let free = if c == 0 || c == d[a] {
                            a == axis && (cl != NONE || ch != NONE)
                        } else {
                            cl != NONE && ch != NONE
                        };
                        if free {
                            let i = linear_index(fd, x, y, z);
                            face_id[a][i] = faces.len() as u32;
                            faces.push((a as u8, i as u32));
                            cells.push([cl, ch]);
                        }
                    }
                }
            }
        }
        if faces.is_empty() {
            return Err(Error::NoFlow(["x", "y", "z"][axis].into()));
        }

        let n = faces.len();
        let mut nb = vec![[NONE; 6]; n];
        let mut diag = vec![0.0; n];
        let mut weight = vec![1.0; n];
        let mut rhs = vec![0.0; n];
        let mut anchored = vec![false; n];
        let mut outlet = Vec::new();
        for f in 0..n {
            let (a, i) = (faces[f].0 as usize, faces[f].1 as usize);
            let fd = face_dims(d, a);
            let pos = [i % fd[0], (i / fd[0]) % fd[1], i / (fd[0] * fd[1])];
            let boundary = pos[a] == 0 || pos[a] == d[a];
            let w = if boundary { 0.5 } else { 1.0 };
            weight[f] = w;
            if a == axis && pos[a] == 0 {
                rhs[f] = INLET_PRESSURE;
            } else if a == axis && pos[a] == d[a] {
                rhs[f] = -OUTLET_PRESSURE;
                outlet.push(f as u32);
            }
            let mut slot = 0;
            let mut dg = 0.0;
            for b in std::iter::once(a).chain((0..3).filter(|&b| b != a)) {
                let (coef, wall) = if b == a { (1.0, 1.0) } else { (w, 2.0 * w) };
                let extent = if b == a { d[b] + 1 } else { d[b] };
                for step in [-1isize, 1] {
                    let q = pos[b] as isize + step;
                    if q >= 0 && (q as usize) < extent {
                        let mut qp = pos;
                        qp[b] = q as usize;
                        let g = face_id[a][linear_index(fd, qp[0], qp[1], qp[2])];
                        if g != NONE {
                            nb[f][slot] = g;
                            dg += coef;
                        } else {
                            dg += wall;
                            anchored[f] = true;
                        }
                    }
                    slot += 1;
                }
            }
            diag[f] = dg;
        }

        // every coupled group of faces needs a wall, otherwise A is singular
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            queue.push_back(s);
            let mut ok = false;
            while let Some(f) = queue.pop_front() {
                ok |= anchored[f];
                for &g in &nb[f] {
                    if g != NONE && !seen[g as usize] {
                        seen[g as usize] = true;
                        queue.push_back(g as usize);
                    }
                }
            }
            if !ok {
                return Err(Error::Degenerate(
                    "pore space touches no grain; Stokes resistance is zero".into(),
                ));
            }
        }

        Ok(Self {
            faces,
            nb,
            diag,
            weight,
            cells,
            rhs,
            n_cells: cell_pos.len(),
            outlet,
            cell_pos,
        })
    }

    fn apply_a(&self, x: &[f64], y: &mut [f64]) {
        for f in 0..x.len() {
            let nb = &self.nb[f];
            let mut along = 0.0;
            for &g in &nb[..2] {
                if g != NONE {
                    along += x[g as usize];
                }
            }
            let mut trans = 0.0;
            for &g in &nb[2..] {
                if g != NONE {
                    trans += x[g as usize];
                }
            }
            y[f] = self.diag[f] * x[f] - along - self.weight[f] * trans;
        }
    }

    /// `out = D u` per solved cell.
    fn divergence(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (f, &[lo, hi]) in self.cells.iter().enumerate() {
            if lo != NONE {
                out[lo as usize] += u[f];
            }
            if hi != NONE {
                out[hi as usize] -= u[f];
            }
        }
    }

    /// `out = D^T p` per face.
    fn gradient_t(&self, p: &[f64], out: &mut [f64]) {
        for (f, &[lo, hi]) in self.cells.iter().enumerate() {
            let mut v = 0.0;
            if lo != NONE {
                v += p[lo as usize];
            }
            if hi != NONE {
                v -= p[hi as usize];
            }
            out[f] = v;
        }
    }

    /// Jacobi-preconditioned CG for `A x = b`, starting from zero.
    fn solve_a(&self, b: &[f64], x: &mut [f64], scratch: &mut CgScratch) -> usize {
        let n = b.len();
        x.iter_mut().for_each(|v| *v = 0.0);
        let bnorm = dot(b, b).sqrt();
        if bnorm == 0.0 {
            return 0;
        }
        let CgScratch { r, z, d, q } = scratch;
        r.copy_from_slice(b);
        for i in 0..n {
            z[i] = r[i] / self.diag[i];
        }
        d.copy_from_slice(z);
        let mut rz = dot(r, z);
        let cap = 20 * n + 1000;
        for it in 1..=cap {
            self.apply_a(d, q);
            let alpha = rz / dot(d, q);
            for i in 0..n {
                x[i] += alpha * d[i];
                r[i] -= alpha * q[i];
            }
            if dot(r, r).sqrt() <= INNER_TOLERANCE * bnorm {
                return it;
            }
            for i in 0..n {
                z[i] = r[i] / self.diag[i];
            }
            let rz_new = dot(r, z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                d[i] = z[i] + beta * d[i];
            }
        }
        cap
    }

    fn outlet_flux(&self, u: &[f64]) -> f64 {
        self.outlet.iter().map(|&f| u[f as usize]).sum()
    }
}

struct CgScratch {
    r: Vec<f64>,
    z: Vec<f64>,
    d: Vec<f64>,
    q: Vec<f64>,
}

impl CgScratch {
    fn new(n: usize) -> Self {
        Self { r: vec![0.0; n], z: vec![0.0; n], d: vec![0.0; n], q: vec![0.0; n] }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Preconditioned MINRES on the symmetric saddle-point system
/// `[A, -D^T; -D, 0] [u; p] = [b; 0]`, block-diagonal preconditioner
/// `diag(A)`, `diag(D diag(A)^-1 D^T)`.
///
/// Starts from the linear pressure profile and the velocity it drives.
/// Returns `(u, p, iterations, max |D u|)`.
fn minres(sys: &System, len: f64, max_iterations: usize) -> Result<(Vec<f64>, Vec<f64>, usize, f64)> {
    let nf = sys.faces.len();
    let nc = sys.n_cells;
    let n = nf + nc;
    let mut minv = vec![0.0; n];
    for (f, &[lo, hi]) in sys.cells.iter().enumerate() {
        minv[f] = 1.0 / sys.diag[f];
        for c in [lo, hi] {
            if c != NONE {
                minv[nf + c as usize] += 1.0 / sys.diag[f];
            }
        }
    }
    for m in &mut minv[nf..] {
        *m = 1.0 / *m;
    }
    let mut tmpf = vec![0.0; nf];
    let mut tmpc = vec![0.0; nc];
    let apply_k = |x: &[f64], y: &mut [f64], tmpf: &mut [f64], tmpc: &mut [f64]| {
        let (xu, xp) = x.split_at(nf);
        let (yu, yp) = y.split_at_mut(nf);
        sys.apply_a(xu, yu);
        sys.gradient_t(xp, tmpf);
        for (y, t) in yu.iter_mut().zip(tmpf.iter()) {
            *y -= t;
        }
        sys.divergence(xu, tmpc);
        for (y, t) in yp.iter_mut().zip(tmpc.iter()) {
            *y = -t;
        }
    };

    let mut x = vec![0.0; n];
    for (i, &c) in sys.cell_pos.iter().enumerate() {
        x[nf + i] = INLET_PRESSURE + (OUTLET_PRESSURE - INLET_PRESSURE) * (c as f64 + 0.5) / len;
    }
    sys.gradient_t(&x[nf..], &mut tmpf);
    for (t, b) in tmpf.iter_mut().zip(&sys.rhs) {
        *t += b;
    }
    let rhs_u = tmpf.clone();
    sys.solve_a(&rhs_u, &mut x[..nf], &mut CgScratch::new(nf));

    let mut div = vec![0.0; nc];
    sys.divergence(&x[..nf], &mut div);
    let mut max_div = max_abs(&div);
    let bnorm = sys.rhs.iter().zip(&minv).map(|(b, m)| b * b * m).sum::<f64>().sqrt();

    // Lanczos vectors and search directions
    let mut v = vec![0.0; n];
    let mut kx = vec![0.0; n];
    apply_k(&x, &mut kx, &mut tmpf, &mut tmpc);
    for i in 0..n {
        v[i] = if i < nf { sys.rhs[i] } else { 0.0 } - kx[i];
    }
    let mut v_old = vec![0.0; n];
    let mut z: Vec<f64> = v.iter().zip(&minv).map(|(v, m)| v * m).collect();
    let mut gamma = dot(&z, &v).sqrt();
    if gamma <= 1e-14 * bnorm {
        return Ok((x[..nf].to_vec(), x[nf..].to_vec(), 0, max_div));
    }
    let mut gamma_old = 1.0;
    let mut eta = gamma;
    let (mut s_old, mut s, mut c_old, mut c) = (0.0, 0.0, 1.0, 1.0);
    let mut w = vec![0.0; n];
    let mut w_old = vec![0.0; n];
    let mut kz = vec![0.0; n];
    let mut flux = sys.outlet_flux(&x[..nf]);
    let mut flux_change = f64::INFINITY;

    for it in 1..=max_iterations {
        let inv = 1.0 / gamma;
        z.iter_mut().for_each(|v| *v *= inv);
        apply_k(&z, &mut kz, &mut tmpf, &mut tmpc);
        let delta = dot(&kz, &z);
        let (ca, cb) = (delta / gamma, gamma / gamma_old);
        // v_old becomes v_{j+1}
        for i in 0..n {
            v_old[i] = kz[i] - ca * v[i] - cb * v_old[i];
        }
        std::mem::swap(&mut v, &mut v_old);
        let mut gamma_new = 0.0;
        let a0 = c * delta - c_old * s * gamma;
        let a2 = s * delta + c_old * c * gamma;
        let a3 = s_old * gamma;
        // z_{j+1} is built after w uses z_j, so stash it in kz
        for i in 0..n {
            kz[i] = v[i] * minv[i];
            gamma_new += kz[i] * v[i];
        }
        let gamma_new = gamma_new.max(0.0).sqrt();
        let a1 = (a0 * a0 + gamma_new * gamma_new).sqrt();
        let c_new = a0 / a1;
        let s_new = gamma_new / a1;
        let step = c_new * eta;
        for i in 0..n {
            let wn = (z[i] - a3 * w_old[i] - a2 * w[i]) / a1;
            w_old[i] = wn;
            x[i] += step * wn;
        }
        std::mem::swap(&mut w, &mut w_old);
        std::mem::swap(&mut z, &mut kz);
        eta *= -s_new;
        gamma_old = gamma;
        gamma = gamma_new;
        c_old = c;
        c = c_new;
        s_old = s;
        s = s_new;

        let q = sys.outlet_flux(&x[..nf]);
        flux_change = if q != 0.0 { ((q - flux) / q).abs() } else { f64::INFINITY };
        flux = q;
        sys.divergence(&x[..nf], &mut div);
        max_div = max_abs(&div);
        let residual_ok = eta.abs() <= RESIDUAL_TOLERANCE * bnorm;
        if flux_change < FLUX_TOLERANCE && max_div < DIVERGENCE_TOLERANCE && residual_ok {
            return Ok((x[..nf].to_vec(), x[nf..].to_vec(), it, max_div));
        }
        if gamma == 0.0 {
            // Krylov space exhausted: x is the exact solution up to rounding
            return Ok((x[..nf].to_vec(), x[nf..].to_vec(), it, max_div));
        }
    }
    Err(Error::Convergence {
        iterations: max_iterations,
        flux_change,
        max_divergence: max_div,
    })
}

/// Solves steady Stokes flow along `axis`.
pub fn stokes_solve(bin: &BinaryImage3D, axis: Axis) -> Result<VelocityField> {
    stokes_solve_capped(bin, axis, MAX_OUTER_ITERATIONS)
}

pub fn stokes_solve_capped(
    bin: &BinaryImage3D,
    axis: Axis,
    max_iterations: usize,
) -> Result<VelocityField> {
    let pore = connected_pore(bin, axis);
    if pore.pore_count() == 0 {
        return Err(Error::NoFlow(axis.name().into()));
    }
    let a = axis.index();
    let sys = System::build(&pore, a)?;
    let (u, p, iterations, max_div) = minres(&sys, pore.dims()[a] as f64, max_iterations)?;

    let d = pore.dims();
    let mut faces: [Vec<f64>; 3] = Default::default();
    for (b, fb) in faces.iter_mut().enumerate() {
        *fb = vec![0.0; face_dims(d, b).iter().product()];
    }
    for (f, &(b, i)) in sys.faces.iter().enumerate() {
        faces[b as usize][i as usize] = u[f];
    }
    let mut pressure = vec![0.0; pore.len()];
    let mut k = 0;
    for (i, &v) in pore.data().iter().enumerate() {
        if v == PORE {
            pressure[i] = p[k];
            k += 1;
        }
    }
    Ok(VelocityField {
        dims: d,
        voxel_size: bin.voxel_size(),
        axis,
        viscosity: 1.0,
        faces,
        pressure,
        pore,
        iterations,
        max_divergence: max_div,
    })
}

/// Directional permeability and related scalars of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub axis: Axis,
    pub permeability_m2: f64,
    pub permeability_darcy: f64,
    /// Permeability in voxel² units.
    pub permeability_voxel: f64,
    pub phi_eff: f64,
    /// Mean cell-centered speed over the solved pore cells, solver units.
    pub mean_speed: f64,
    pub inlet_flux: f64,
    pub outlet_flux: f64,
    pub iterations: usize,
    pub max_divergence: f64,
}

impl FlowResult {
    pub fn csv_header() -> &'static str {
        "axis,permeability_m2,permeability_darcy,permeability_voxel,phi_eff,mean_speed,inlet_flux,outlet_flux,iterations,max_divergence"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{},{:e},{:e},{:e},{},{:e}",
            self.axis.name(),
            self.permeability_m2,
            self.permeability_darcy,
            self.permeability_voxel,
            self.phi_eff,
            self.mean_speed,
            self.inlet_flux,
            self.outlet_flux,
            self.iterations,
            self.max_divergence
        )
    }
}

/// `k = Q mu L / (A dp)` with `A` the full cross-section.
pub fn permeability(field: &VelocityField) -> FlowResult {
    let a = field.axis.index();
    let d = field.dims;
    let len = d[a] as f64;
    let area = (d[0] * d[1] * d[2]) as f64 / len;
    let q = field.outlet_flux();
    let k_vox = q * field.viscosity * len / (area * (INLET_PRESSURE - OUTLET_PRESSURE));
    let k_m2 = k_vox * field.voxel_size * field.voxel_size;
    FlowResult {
        axis: field.axis,
        permeability_m2: k_m2,
        permeability_darcy: k_m2 / DARCY_M2,
        permeability_voxel: k_vox,
        phi_eff: field.pore.pore_count() as f64 / field.pore.len() as f64,
        mean_speed: field.mean_speed(),
        inlet_flux: field.inlet_flux(),
        outlet_flux: q,
        iterations: field.iterations,
        max_divergence: field.max_divergence,
    }
}

/// Volume fraction of pore connected to both faces along `axis`.
pub fn effective_porosity(bin: &BinaryImage3D, axis: Axis) -> f64 {
    connected_pore(bin, axis).pore_count() as f64 / bin.len() as f64
}

/// Log-binned probability density.
///
/// `densities[i] = count_i / (count * width_i)`, where `count` includes the
/// samples below the first edge (`underflow`) and at or above the last edge
/// (`overflow`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPDF {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub underflow: u64,
    pub overflow: u64,
    pub count: u64,
}

pub fn log_edges(bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..=bins)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == bins {
                hi
            } else {
                10f64.powf(a + (b - a) * i as f64 / bins as f64)
            }
        })
        .collect()
}

impl HistogramPDF {
    /// Bins `samples` over the given increasing edges.
    pub fn from_samples(samples: &[f64], edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("histogram edges must increase".into()));
        }
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        let (mut under, mut over) = (0u64, 0u64);
        for &s in samples {
            if !(s >= edges[0]) {
                under += 1;
            } else if s >= edges[bins] {
                over += 1;
            } else {
                // last edge <= s
                let i = edges.partition_point(|&e| e <= s) - 1;
                counts[i] += 1;
            }
        }
        let n = samples.len() as f64;
        let densities = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| if n > 0.0 { c as f64 / (n * (edges[i + 1] - edges[i])) } else { 0.0 })
            .collect();
        Ok(Self { edges, densities, underflow: under, overflow: over, count: samples.len() as u64 })
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `sum p_i * width_i`, the in-range probability mass.
    pub fn mass(&self) -> f64 {
        self.densities.iter().zip(self.widths()).map(|(p, w)| p * w).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# count={} underflow={} overflow={}\nbin_lo,bin_hi,density\n",
            self.count, self.underflow, self.overflow
        );
        for (i, p) in self.densities.iter().enumerate() {
            s.push_str(&format!("{:e},{:e},{:e}\n", self.edges[i], self.edges[i + 1], p));
        }
        s
    }

    /// Parses the output of [`HistogramPDF::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut densities = Vec::new();
        let (mut count, mut under, mut over) = (None, 0, 0);
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("bin_lo") {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                    let parse = || {
                        v.parse::<u64>()
                            .map_err(|_| Error::Format(format!("line {}: bad value {kv}", ln + 1)))
                    };
                    match k {
                        "count" => count = Some(parse()?),
                        "underflow" => under = parse()?,
                        "overflow" => over = parse()?,
                        _ => {}
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!("line {}: expected 3 columns", ln + 1)));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad number {s:?}", ln + 1)))
            };
            let (lo, hi, p) = (num(cols[0])?, num(cols[1])?, num(cols[2])?);
            match edges.last() {
                None => edges.push(lo),
                Some(&last) if (last - lo).abs() > 1e-12 * last.abs().max(1e-300) => {
                    return Err(Error::Format(format!("line {}: bins are not contiguous", ln + 1)))
                }
                _ => {}
            }
            edges.push(hi);
            densities.push(p);
        }
        if densities.is_empty() {
            return Err(Error::Format("histogram has no bins".into()));
        }
        let count = count.ok_or_else(|| Error::Format("missing '# count=' header".into()))?;
        Ok(Self { edges, densities, underflow: under, overflow: over, count })
    }
}

/// Speeds divided by their mean, binned on 256 log bins over `[1e-4, 1e2]`.
pub fn velocity_histogram(field: &VelocityField) -> Result<HistogramPDF> {
    let speeds = field.cell_speeds();
    normalized_speed_histogram(&speeds)
}

pub fn normalized_speed_histogram(speeds: &[f64]) -> Result<HistogramPDF> {
    let mean = if speeds.is_empty() { 0.0 } else { speeds.iter().sum::<f64>() / speeds.len() as f64 };
    if !(mean > 0.0) {
        return Err(Error::Degenerate("mean speed is zero".into()));
    }
    let norm: Vec<f64> = speeds.iter().map(|s| s / mean).collect();
    HistogramPDF::from_samples(&norm, log_edges(HISTOGRAM_BINS, HISTOGRAM_MIN, HISTOGRAM_MAX))
}

/// Per-bin mean and population standard deviation of densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHistogram {
    pub edges: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Mean fraction of samples below / above the binned range.
    pub underflow: f64,
    pub overflow: f64,
    pub members: usize,
}

impl EnsembleHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# members={} underflow={} overflow={}\nbin_lo,bin_hi,mean,std\n",
            self.members, self.underflow, self.overflow
        );
        for i in 0..self.mean.len() {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e}\n",
                self.edges[i],
                self.edges[i + 1],
                self.mean[i],
                self.std[i]
            ));
        }
        s
    }
}

pub fn ensemble_histogram(hists: &[HistogramPDF]) -> Result<EnsembleHistogram> {
    let first = hists
        .first()
        .ok_or_else(|| Error::Validation("empty histogram ensemble".into()))?;
    if hists.iter().any(|h| h.edges != first.edges) {
        return Err(Error::Shape("histograms have different bin edges".into()));
    }
    let rows: Vec<&[f64]> = hists.iter().map(|h| h.densities.as_slice()).collect();
    let (mean, std) = crate::microstats::mean_and_std(&rows);
    let frac = |f: fn(&HistogramPDF) -> u64| {
        hists
            .iter()
            .map(|h| if h.count > 0 { f(h) as f64 / h.count as f64 } else { 0.0 })
            .sum::<f64>()
            / hists.len() as f64
    };
    Ok(EnsembleHistogram {
        edges: first.edges.clone(),
        mean,
        std,
        underflow: frac(|h| h.underflow),
        overflow: frac(|h| h.overflow),
        members: hists.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom;

    #[test]
    fn blocked_and_unconnected_geometry() {
        let solid = BinaryImage3D::filled([6, 6, 6], 1.0, 0).unwrap();
        assert!(matches!(stokes_solve(&solid, Axis::X), Err(Error::NoFlow(_))));
        // a channel along x does not percolate along y
        let ch = phantom::plane_channel(8, 4, 3);
        assert!(matches!(stokes_solve(&ch, Axis::Y), Err(Error::NoFlow(_))));
        let open = BinaryImage3D::filled([4, 4, 4], 1.0, 1).unwrap();
        assert!(matches!(stokes_solve(&open, Axis::X), Err(Error::Degenerate(_))));
    }

    #[test]
    fn no_slip_faces_are_exactly_zero() {
        let bin = phantom::random_binary([10, 10, 10], 0.7, 3);
        let f = stokes_solve(&bin, Axis::X).unwrap();
        let d = f.dims;
        for a in 0..3 {
            let fd = face_dims(d, a);
            for z in 0..fd[2] {
                for y in 0..fd[1] {
                    for x in 0..fd[0] {
                        let p = [x, y, z];
                        let mut lo = p;
                        let lo_ok = lo[a] > 0;
                        if lo_ok {
                            lo[a] -= 1;
                        }
                        let side = |q: [usize; 3]| q[a] < d[a] && q[0] < d[0] && q[1] < d[1] && q[2] < d[2] && f.pore.is_pore(q[0], q[1], q[2]);
                        let touches_grain = (lo_ok && !side(lo)) || (p[a] < d[a] && !side(p));
                        let lateral = a != 0 && (p[a] == 0 || p[a] == d[a]);
                        if touches_grain || lateral {
                            assert_eq!(f.faces[a][linear_index(fd, x, y, z)], 0.0);
                        }
                    }
                }
            }
        }
        assert!(f.divergence_max() < DIVERGENCE_TOLERANCE);
    }

    #[test]
    fn plane_channel_profile_and_permeability() {
        let h = 20;
        let bin = phantom::plane_channel(6, h, 1);
        let f = stokes_solve(&bin, Axis::X).unwrap();
        let r = permeability(&f);
        let phi_ch = h as f64 / (h + 2) as f64;
        let exact = phi_ch * (h * h) as f64 / 12.0;
        assert!((r.permeability_voxel / exact - 1.0).abs() < 0.05, "{} vs {exact}", r.permeability_voxel);
        let speeds = f.cell_speeds();
        let max = speeds.iter().cloned().fold(0.0, f64::max);
        let ratio = max / f.mean_speed();
        assert!((ratio / 1.5 - 1.0).abs() < 0.03, "ratio {ratio}");
        assert!(((r.inlet_flux - r.outlet_flux) / r.outlet_flux).abs() < 1e-6);
    }

    #[test]
    fn plane_channel_speed_distribution() {
        // u / mean = 1.5 (1 - eta^2) across the slab, so
        // P(u / mean <= s) = 1 - sqrt(1 - s / 1.5)
        let bin = phantom::plane_channel(4, 40, 1);
        let h = velocity_histogram(&stokes_solve(&bin, Axis::X).unwrap()).unwrap();
        let f = crate::ks::ecdf_from_histogram(&h).unwrap();
        let mut sup = 0.0f64;
        for &e in h.edges.iter().filter(|&&e| e <= 1.5) {
            sup = sup.max((f.eval(e).1 - (1.0 - (1.0 - e / 1.5).sqrt())).abs());
        }
        assert!(sup < 0.03, "sup {sup}");
    }

    #[test]
    fn mass_is_conserved_in_random_media() {
        for seed in 0..3 {
            let bin = phantom::random_binary([12, 10, 10], 0.7, seed);
            let r = permeability(&stokes_solve(&bin, Axis::Y).unwrap());
            assert!(r.iterations > 0);
            assert!(((r.inlet_flux - r.outlet_flux) / r.outlet_flux).abs() < 1e-6);
            assert!(r.max_divergence < DIVERGENCE_TOLERANCE);
            assert!(r.permeability_voxel > 0.0 && r.phi_eff <= crate::minkowski::porosity(&bin));
        }
    }

    #[test]
    fn voxel_size_scales_permeability_quadratically() {
        let bin = phantom::rect_duct(4, 5, 5);
        let k1 = permeability(&stokes_solve(&bin, Axis::X).unwrap());
        let k2 = permeability(&stokes_solve(&bin.clone().with_voxel_size(2.0), Axis::X).unwrap());
        assert_eq!(k2.permeability_m2, 4.0 * k1.permeability_m2);
        assert_eq!(k1.permeability_voxel, k2.permeability_voxel);
    }

    #[test]
    fn axis_permutation_equivariance() {
        let bin = phantom::random_binary([9, 8, 7], 0.75, 11);
        let kx = permeability(&stokes_solve(&bin, Axis::X).unwrap()).permeability_voxel;
        // output axis z is input axis x
        let rot = bin.permute_axes([2, 1, 0]);
        let kz = permeability(&stokes_solve(&rot, Axis::Z).unwrap()).permeability_voxel;
        assert!((kx - kz).abs() <= 1e-6 * kx, "{kx} vs {kz}");
    }

    #[test]
    fn disconnected_pores_do_not_change_permeability() {
        let duct = |x: usize, y: usize, z: usize| (1..=4).contains(&y) && (1..=4).contains(&z) || (x == 3 && y == 7 && z == 3);
        let with_cavity = BinaryImage3D::from_fn([8, 9, 6], 1.0, duct).unwrap();
        let plain = BinaryImage3D::from_fn([8, 9, 6], 1.0, |x, y, z| duct(x, y, z) && y < 7).unwrap();
        let kc = permeability(&stokes_solve(&with_cavity, Axis::X).unwrap());
        let kp = permeability(&stokes_solve(&plain, Axis::X).unwrap());
        assert_eq!(kc, kp);
        // a blind branch off the duct belongs to the connected set; solving
        // on the pruned image is the same solve
        let mut branch = plain.clone();
        for y in 5..8 {
            branch.set(4, y, 2, 1);
        }
        let pruned = connected_pore(&branch, Axis::X);
        let kb = permeability(&stokes_solve(&branch, Axis::X).unwrap());
        let kq = permeability(&stokes_solve(&pruned, Axis::X).unwrap());
        assert_eq!(kb, kq);
        assert!((kb.permeability_voxel - kp.permeability_voxel).abs() < 0.05 * kp.permeability_voxel);
    }

    #[test]
    fn effective_porosity_examples() {
        // 10 voxel long, 10 voxel cross-section spanning channel in 10^3
        let bin = BinaryImage3D::from_fn([10, 10, 10], 1.0, |_, y, z| y < 2 && z < 5).unwrap();
        assert!((effective_porosity(&bin, Axis::X) - 0.1).abs() < 1e-12);
        let dead = BinaryImage3D::from_fn([10, 10, 10], 1.0, |x, y, z| x < 9 && y == 3 && z == 3).unwrap();
        assert_eq!(effective_porosity(&dead, Axis::X), 0.0);
    }

    #[test]
    fn plug_flow_lands_in_unit_bin() {
        let h = normalized_speed_histogram(&[3.5; 100]).unwrap();
        let i = h.edges.partition_point(|&e| e <= 1.0) - 1;
        assert!(h.edges[i] <= 1.0 && 1.0 < h.edges[i + 1]);
        let w = h.widths();
        assert!((h.densities[i] * w[i] - 1.0).abs() < 1e-12);
        assert!((h.mass() - 1.0).abs() < 1e-9);
        assert!(normalized_speed_histogram(&[0.0; 4]).is_err());
    }

    #[test]
    fn histogram_edges_and_csv_roundtrip() {
        let e = log_edges(HISTOGRAM_BINS, HISTOGRAM_MIN, HISTOGRAM_MAX);
        assert_eq!(e.len(), 257);
        assert_eq!(e[0], 1e-4);
        assert_eq!(e[256], 1e2);
        assert!((e[128] - 0.1).abs() < 1e-12);
        let h = HistogramPDF::from_samples(&[0.0, 0.5, 1.0, 2.0, 500.0], e).unwrap();
        assert_eq!((h.underflow, h.overflow, h.count), (1, 1, 5));
        assert!((h.mass() - 0.6).abs() < 1e-12);
        let back = HistogramPDF::from_csv(&h.to_csv()).unwrap();
        assert_eq!(back.count, 5);
        assert_eq!(back.densities.len(), 256);
        for (a, b) in back.densities.iter().zip(&h.densities) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn ensemble_of_histograms() {
        let e = log_edges(8, 0.1, 10.0);
        let a = HistogramPDF::from_samples(&[0.5, 1.0, 2.0], e.clone()).unwrap();
        let one = ensemble_histogram(std::slice::from_ref(&a)).unwrap();
        assert_eq!(one.mean, a.densities);
        assert!(one.std.iter().all(|&s| s == 0.0));
        let b = HistogramPDF::from_samples(&[0.5, 0.5, 5.0], e).unwrap();
        let two = ensemble_histogram(&[a.clone(), b.clone()]).unwrap();
        for i in 0..8 {
            let m = 0.5 * (a.densities[i] + b.densities[i]);
            assert!((two.mean[i] - m).abs() < 1e-12);
            assert!((two.std[i] - 0.5 * (a.densities[i] - b.densities[i]).abs()).abs() < 1e-12);
        }
        let c = HistogramPDF::from_samples(&[1.0], log_edges(4, 0.1, 10.0)).unwrap();
        assert!(matches!(ensemble_histogram(&[a, c]), Err(Error::Shape(_))));
        assert!(ensemble_histogram(&[]).is_err());
    }
}
