//! wasm-bindgen bindings behind `www/index.html`.
//!
//! A [`Sample`] holds one sphere-pack gray volume. The page thresholds it,
//! shows a slice with its Minkowski densities, plots S2 and runs a small
//! Stokes solve with the resulting velocity distribution.

use rockgan::flow::{permeability, stokes_solve, velocity_histogram};
use rockgan::microstats::{radial_from_directional, s2_directional};
use rockgan::minkowski::densities;
use rockgan::phantom::SpherePack;
use rockgan::volume::segment;
use rockgan::{Axis, BinaryImage3D, Error, GrayImage3D, Result};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Voxel edge of the demo volumes (m).
pub const VOXEL_SIZE: f64 = 3.0e-6;
/// Largest edge the page may request; flow cost grows quickly beyond it.
pub const MAX_EDGE: usize = 64;

#[wasm_bindgen]
pub struct Sample {
    gray: GrayImage3D,
}

impl Sample {
    pub fn build(edge: usize, porosity: f64, radius: f64, seed: u64) -> Result<Self> {
        if !(4..=MAX_EDGE).contains(&edge) {
            return Err(Error::Validation(format!("edge must be in 4..={MAX_EDGE}, got {edge}")));
        }
        if !(porosity > 0.0 && porosity < 1.0) || !(radius > 0.0) {
            return Err(Error::Validation("porosity must be in (0, 1) and radius positive".into()));
        }
        let pack = SpherePack { edge, porosity, radius, seed, ..SpherePack::default() };
        Ok(Self { gray: pack.gray(VOXEL_SIZE)? })
    }

    pub fn gray(&self) -> &GrayImage3D {
        &self.gray
    }

    fn binary(&self, threshold: u8) -> BinaryImage3D {
        segment(&self.gray, threshold)
    }

    /// RGBA pixels of slice `z`: gray value, pore voxels tinted blue.
    pub fn slice(&self, z: usize, threshold: u8) -> Result<Vec<u8>> {
        let [nx, ny, nz] = self.gray.dims();
        if z >= nz {
            return Err(Error::Validation(format!("slice {z} outside 0..{nz}")));
        }
        let mut px = Vec::with_capacity(nx * ny * 4);
        for y in 0..ny {
            for x in 0..nx {
                let v = self.gray.get(x, y, z);
                if v > threshold {
                    px.extend_from_slice(&[v / 3, v / 2, v, 255]);
                } else {
                    px.extend_from_slice(&[v, v, v, 255]);
                }
            }
        }
        Ok(px)
    }

    pub fn minkowski(&self, threshold: u8) -> serde_json::Value {
        let d = densities(&self.binary(threshold));
        json!({ "threshold": threshold, "phi": d.phi, "sv": d.sv, "kv": d.kv, "chiv": d.chiv })
    }

    pub fn s2(&self, threshold: u8) -> Result<serde_json::Value> {
        let bin = self.binary(threshold);
        let r = bin.dims()[0] / 2;
        let curves = Axis::ALL
            .iter()
            .map(|&a| s2_directional(&bin, a, r))
            .collect::<Result<Vec<_>>>()?;
        let radial = radial_from_directional(&curves);
        let mut out = serde_json::Map::new();
        for c in curves.iter().chain(std::iter::once(&radial)) {
            out.insert(c.direction.name().into(), json!(c.values));
        }
        Ok(json!({ "distances": radial.distances, "curves": out }))
    }

    pub fn flow(&self, threshold: u8, axis: Axis) -> Result<serde_json::Value> {
        let field = stokes_solve(&self.binary(threshold), axis)?;
        let result = permeability(&field);
        let hist = velocity_histogram(&field)?;
        Ok(json!({
            "axis": axis.name(),
            "permeability_darcy": result.permeability_darcy,
            "permeability_m2": result.permeability_m2,
            "phi_eff": result.phi_eff,
            "iterations": result.iterations,
            "edges": hist.edges,
            "densities": hist.densities,
        }))
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&format!("{}: {e}", e.kind()))
}

fn axis_from(name: &str) -> Result<Axis> {
    Axis::ALL
        .into_iter()
        .find(|a| a.name() == name)
        .ok_or_else(|| Error::Validation(format!("unknown axis {name:?}")))
}

#[wasm_bindgen]
impl Sample {
    #[wasm_bindgen(constructor)]
    pub fn new(edge: usize, porosity: f64, radius: f64, seed: u32) -> std::result::Result<Sample, JsError> {
        Self::build(edge, porosity, radius, seed as u64).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn edge(&self) -> usize {
        self.gray.dims()[0]
    }

    /// Otsu threshold of the gray volume.
    #[wasm_bindgen(js_name = otsu)]
    pub fn otsu_js(&self) -> std::result::Result<u8, JsError> {
        rockgan::volume::otsu_threshold(&self.gray).map_err(js)
    }

    #[wasm_bindgen(js_name = slice)]
    pub fn slice_js(&self, z: usize, threshold: u8) -> std::result::Result<Vec<u8>, JsError> {
        self.slice(z, threshold).map_err(js)
    }

    #[wasm_bindgen(js_name = minkowski)]
    pub fn minkowski_js(&self, threshold: u8) -> String {
        self.minkowski(threshold).to_string()
    }

    #[wasm_bindgen(js_name = s2)]
    pub fn s2_js(&self, threshold: u8) -> std::result::Result<String, JsError> {
        self.s2(threshold).map(|v| v.to_string()).map_err(js)
    }

    #[wasm_bindgen(js_name = flow)]
    pub fn flow_js(&self, threshold: u8, axis: &str) -> std::result::Result<String, JsError> {
        axis_from(axis)
            .and_then(|a| self.flow(threshold, a))
            .map(|v| v.to_string())
            .map_err(js)
    }
}
