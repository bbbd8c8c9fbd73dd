//! End-to-end checks of the path-level mechanical driver on real thermal
//! histories: birth coverage, convergence, axis-swap symmetry, determinism.

use pathstress::capl::{run_thermal, ThermalParams};
use pathstress::geom::Polygon;
use pathstress::material::MaterialModel;
use pathstress::pathmech::{run_path_mechanical, stress_report, PathMechConfig};
use pathstress::toolpath::{ScanPath, Segment, SegmentKind};
use pathstress::voxelfem::von_mises;

const HATCH: f64 = 100e-6;
const SIDE: f64 = 0.8e-3;

/// Unidirectional fill of the SIDE x SIDE square, lines along `axis`
/// (0 = x, 1 = y), stacked in the other coordinate.
fn unidirectional(axis: usize) -> ScanPath {
    let n = (SIDE / HATCH).round() as usize;
    let mut segs = Vec::new();
    for j in 0..n {
        let c = (j as f64 + 0.5) * HATCH;
        let (a, b) = if axis == 0 {
            ([0.0, c], [SIDE, c])
        } else {
            ([c, 0.0], [c, SIDE])
        };
        segs.push(Segment::new(a, b, 80.0, 1.0, SegmentKind::Hatch).unwrap());
    }
    ScanPath::new(segs, 40e-6, HATCH).unwrap()
}

fn mech_config() -> PathMechConfig {
    PathMechConfig { hatch_space: HATCH, r: 0.22, ..PathMechConfig::default() }
}

#[test]
fn hatched_square_births_everything_and_ends_tensile_along_scan() {
    let mat = MaterialModel::ti6al4v();
    let dom = Polygon::rect(0.0, 0.0, SIDE, SIDE);
    let history = run_thermal(&unidirectional(0), Some(&dom), &mat, &ThermalParams::default())
        .unwrap();
    let cfg = mech_config();
    let field = run_path_mechanical(&history, &dom, &cfg, &mat).unwrap();

    // Every cell sits on a scanned line, so the whole layer is born.
    assert_eq!(field.n_born(), field.layout.n_layer());
    // Final solve converged against its own reference force scale.
    let tol = (cfg.solver.tol_rel * field.reference).max(cfg.solver.tol_abs);
    assert!(field.residual <= tol * 1.01);

    let rep = stress_report(&field);
    assert_eq!(rep.layer.n_active, field.n_born());
    // Cooled-down hatch fields are tensile and strongest along the scan.
    assert!(rep.layer.mean_sxx > 50e6, "mean sxx {}", rep.layer.mean_sxx);
    assert!(
        rep.layer.mean_sxx > 1.2 * rep.layer.mean_syy.abs(),
        "sxx {} syy {}",
        rep.layer.mean_sxx,
        rep.layer.mean_syy
    );
    // The deposit yields while it cools; plastic strain must be recorded.
    let lo = field.layout.layer_offset;
    assert!(field.eq_plastic[lo..].iter().any(|&p| p > 1e-4));
}

#[test]
fn mechanical_run_is_deterministic() {
    let mat = MaterialModel::ti6al4v();
    let dom = Polygon::rect(0.0, 0.0, SIDE, SIDE);
    let history = run_thermal(&unidirectional(0), Some(&dom), &mat, &ThermalParams::default())
        .unwrap();
    let cfg = mech_config();
    let a = run_path_mechanical(&history, &dom, &cfg, &mat).unwrap();
    let b = run_path_mechanical(&history, &dom, &cfg, &mat).unwrap();
    assert_eq!(a.stresses, b.stresses);
    assert_eq!(a.eq_plastic, b.eq_plastic);
    assert_eq!(a.born, b.born);
}

#[test]
fn swapping_the_scan_axis_swaps_the_stress_field() {
    let mat = MaterialModel::ti6al4v();
    let dom = Polygon::rect(0.0, 0.0, SIDE, SIDE);
    let params = ThermalParams::default();
    let cfg = mech_config();
    let fx = run_path_mechanical(
        &run_thermal(&unidirectional(0), Some(&dom), &mat, &params).unwrap(),
        &dom,
        &cfg,
        &mat,
    )
    .unwrap();
    let fy = run_path_mechanical(
        &run_thermal(&unidirectional(1), Some(&dom), &mat, &params).unwrap(),
        &dom,
        &cfg,
        &mat,
    )
    .unwrap();

    // Mirroring the path across x = y mirrors the tensor field: swap the
    // cell indices, swap xx/yy, swap the out-of-plane shears.
    let nx = fx.layout.mesh.nx;
    let ny = fx.layout.mesh.ny;
    assert_eq!(nx, ny);
    let scale = fx
        .stresses
        .iter()
        .map(von_mises)
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut worst = 0.0f64;
    for iy in 0..ny {
        for ix in 0..nx {
            let a = fx.layer_stress(iy * nx + ix);
            let b = fy.layer_stress(ix * nx + iy);
            let mirrored = [a[1], a[0], a[2], a[3], a[5], a[4]];
            for c in 0..6 {
                worst = worst.max((b[c] - mirrored[c]).abs());
            }
        }
    }
    assert!(worst / scale < 1e-5, "asymmetry {worst:.3e} of {scale:.3e}");
}

#[test]
fn cells_outside_the_contour_stay_inert() {
    let mat = MaterialModel::ti6al4v();
    // Right triangle: the far corner of the bounding box is never part.
    let dom = Polygon::new(vec![[0.0, 0.0], [SIDE, 0.0], [0.0, SIDE]]).unwrap();
    let history = run_thermal(&unidirectional(0), Some(&dom), &mat, &ThermalParams::default())
        .unwrap();
    let cfg = mech_config();
    let field = run_path_mechanical(&history, &dom, &cfg, &mat).unwrap();

    assert!(field.n_born() > 0);
    let mm = &field.layout;
    for le in 0..mm.n_layer() {
        if mm.in_domain[le] {
            continue;
        }
        assert!(!field.born[le]);
        let vm = von_mises(&field.layer_stress(le));
        assert!(vm < 1e6, "outside cell {le} carries {vm:.3e} Pa");
    }
}
