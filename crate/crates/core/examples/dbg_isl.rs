use pathstress::capl::{run_thermal, ThermalParams};
use pathstress::geom::Polygon;
use pathstress::material::MaterialModel;
use pathstress::pathmech::{run_path_mechanical, PathMechConfig};
use pathstress::toolpath::{generate_pattern, PatternKind, PatternSpec};

fn main() {
    let kind = std::env::args().nth(1).unwrap_or_else(|| "contour_pre".into());
    let kind = PatternKind::from_name(&kind).unwrap();
    let side = 2e-3;
    let mat = MaterialModel::ti6al4v();
    let dom = Polygon::rect(0.0, 0.0, side, side);
    let spec = PatternSpec::new(kind);
    let path = generate_pattern(&spec, [0.0, 0.0, side, side]).unwrap();
    let h = run_thermal(&path, Some(&dom), &mat, &ThermalParams::default()).unwrap();
    eprintln!("thermal done: {} elems {} samples", h.elements.len(), h.times.len());
    let cfg = PathMechConfig {
        r: 0.2,
        step_interval: side / spec.hatch_speed,
        ..PathMechConfig::default()
    };
    let f = run_path_mechanical(&h, &dom, &cfg, &mat).unwrap();
    eprintln!("born {}", f.n_born());
}
