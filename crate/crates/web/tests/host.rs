use rockgan::flow::{permeability, stokes_solve};
use rockgan::microstats::s2_directional;
use rockgan::minkowski::porosity;
use rockgan::volume::segment;
use rockgan::Axis;
use rockgan_web::Sample;

#[test]
fn bindings_match_core() {
    let s = Sample::build(20, 0.45, 3.0, 7).unwrap();
    let t = rockgan::volume::otsu_threshold(s.gray()).unwrap();
    let bin = segment(s.gray(), t);

    let m = s.minkowski(t);
    assert_eq!(m["phi"].as_f64().unwrap(), porosity(&bin));

    let s2 = s.s2(t).unwrap();
    let y = s2_directional(&bin, Axis::Y, 10).unwrap();
    let got: Vec<f64> = s2["curves"]["y"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(got.len(), y.values.len());
    for (a, b) in got.iter().zip(&y.values) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
    }

    let f = s.flow(t, Axis::Z).unwrap();
    let k = permeability(&stokes_solve(&bin, Axis::Z).unwrap()).permeability_darcy;
    assert!((f["permeability_darcy"].as_f64().unwrap() - k).abs() <= 1e-12 * k);
    assert_eq!(f["edges"].as_array().unwrap().len(), 257);
}

#[test]
fn solid_volume_reports_no_flow() {
    let s = Sample::build(12, 0.3, 3.0, 1).unwrap();
    let e = s.flow(255, Axis::X).unwrap_err();
    assert_eq!(e.kind(), "no_flow");
}
