use pathstress::capl::{run_thermal, ThermalParams};
use pathstress::geom::Polygon;
use pathstress::material::MaterialModel;
use pathstress::pathmech::{run_path_mechanical, PathMechConfig};
use pathstress::toolpath::{ScanPath, Segment, SegmentKind};

fn validation_path(alternating: bool) -> ScanPath {
    let side = 2e-3_f64;
    let hatch = 90e-6_f64;
    let mut segs = Vec::new();
    let n = (side / hatch).floor() as usize;
    for j in 0..n {
        let y = (j as f64 + 0.5) * hatch;
        let rev = alternating && j % 2 == 1;
        let (x0, x1) = if rev { (side, 0.0) } else { (0.0, side) };
        segs.push(Segment::new([x0, y], [x1, y], 82.5, 0.5, SegmentKind::Hatch).unwrap());
    }
    let last = segs.last().unwrap().end;
    let pts = [[0.0, 0.0], [side, 0.0], [side, side], [0.0, side], [0.0, 0.0]];
    segs.push(Segment::new(last, pts[0], 0.0, 1.0, SegmentKind::Travel).unwrap());
    for w in pts.windows(2) {
        segs.push(Segment::new(w[0], w[1], 40.0, 0.25, SegmentKind::Contour).unwrap());
    }
    ScanPath::new(segs, 40e-6, hatch).unwrap()
}

fn main() {
    let alternating = std::env::args().nth(1).map(|s| s == "alt").unwrap_or(false);
    let mat = MaterialModel::ti6al4v();
    let dom = Polygon::rect(0.0, 0.0, 2e-3, 2e-3);
    let h = run_thermal(&validation_path(alternating), Some(&dom), &mat, &ThermalParams::default())
        .unwrap();
    let cfg = PathMechConfig {
        hatch_space: 90e-6,
        scan_spacing: Some(100e-6),
        r: 0.2,
        step_interval: 2e-3 / 0.5,
        ..PathMechConfig::default()
    };
    let f = run_path_mechanical(&h, &dom, &cfg, &mat).unwrap();
    let nx = f.layout.mesh.nx;
    let ny = f.layout.mesh.ny;
    println!("grid {nx} x {ny}, born {}", f.n_born());

    let full_rows: Vec<usize> =
        (0..ny).filter(|&j| (0..nx).all(|i| f.born[j * nx + i])).collect();
    println!("full rows: {:?}", full_rows);

    // Column profile of sigma_xx (mean over full rows).
    print!("sxx by column (MPa):");
    for i in 0..nx {
        let m: f64 = full_rows.iter().map(|&j| f.layer_stress(j * nx + i)[0]).sum::<f64>()
            / full_rows.len() as f64;
        print!(" {:.0}", m / 1e6);
    }
    println!();

    // Row profiles of sigma_yy for several column windows.
    for (w0, w1, tag) in [(nx / 4, nx / 2, "left-q"), (2, nx / 2 - 1, "left-half"), (nx / 2, 3 * nx / 4, "right-q")] {
        print!("syy rows [{tag}]:");
        for &j in &full_rows {
            let m: f64 = (w0..w1).map(|i| f.layer_stress(j * nx + i)[1]).sum::<f64>()
                / (w1 - w0) as f64;
            print!(" {:.1}", m / 1e6);
        }
        println!();
    }

    // Single off-center column syy.
    for i in [nx / 4, nx / 3, nx / 2] {
        print!("syy col {i}:");
        for &j in &full_rows {
            print!(" {:.1}", f.layer_stress(j * nx + i)[1] / 1e6);
        }
        println!();
    }

    // Detrended spectra of several column windows.
    let rows: Vec<usize> = full_rows.iter().copied().filter(|&j| j >= 2 && j < ny - 2).collect();
    for (w0, w1) in [
        (0, 3),
        (0, 5),
        (1, 6),
        (nx - 5, nx),
        (nx / 8, 3 * nx / 8),
        (0, nx / 2),
        (0, nx),
    ] {
        let prof: Vec<f64> = rows
            .iter()
            .map(|&j| {
                (w0..w1).map(|i| f.layer_stress(j * nx + i)[1]).sum::<f64>() / (w1 - w0) as f64
            })
            .collect();
        let n = prof.len() as f64;
        let mx = (n - 1.0) / 2.0;
        let my = prof.iter().sum::<f64>() / n;
        let (mut num, mut den) = (0.0, 0.0);
        for (j, &v) in prof.iter().enumerate() {
            num += (j as f64 - mx) * (v - my);
            den += (j as f64 - mx) * (j as f64 - mx);
        }
        let slope = num / den;
        let det: Vec<f64> =
            prof.iter().enumerate().map(|(j, &v)| v - my - slope * (j as f64 - mx)).collect();
        print!("spectrum cols [{w0},{w1}) (k: amp MPa):");
        let nn = det.len();
        for k in 1..=nn / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in det.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (k * j) as f64 / nn as f64;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            print!(" {k}:{:.1}", (re * re + im * im).sqrt() / 1e6);
        }
        println!();
    }
    println!("rows used: {}", rows.len());
}
