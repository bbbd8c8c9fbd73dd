use pathstress::finescale::{run_finescale_thermal, CalibrationConfig, FineGrid};
use pathstress::material::MaterialModel;
use pathstress::voxelfem::{
    element_average_stress, von_mises, QuasiStatic, QuasiStaticStep, SolverParams, StrainMode,
    VoxelMesh,
};

fn main() {
    let mat = MaterialModel::ti6al4v();
    let args: Vec<String> = std::env::args().collect();
    let vox: f64 = args.get(1).map(|a| a.parse().unwrap()).unwrap_or(40.0) * 1e-6;
    let cad: f64 = args.get(2).map(|a| a.parse().unwrap()).unwrap_or(0.5) * 1e-3;
    let reduced = args.get(5).map(|a| a == "r").unwrap_or(false);
    let mut cfg = CalibrationConfig {
        voxel_size: vox,
        half_symmetry: true,
        mech_cadence: cad,
        ..CalibrationConfig::default()
    };
    if args.get(6).map(|a| a == "solid").unwrap_or(false) {
        cfg.powder_conductivity_factor = 1.0;
    }
    if reduced {
        cfg.track_length = 1.6e-3;
        cfg.lateral_margin = 4e-4;
        cfg.substrate_depth = 2e-4;
    }
    println!("voxel {} um cadence {} ms", vox * 1e6, cad * 1e3);
    let t0 = std::time::Instant::now();
    let run = run_finescale_thermal(&cfg, &mat).unwrap();
    let grid: &FineGrid = &run.grid;
    println!(
        "grid {}x{}x{} = {} cells, {} samples, thermal {:.1}s",
        grid.nx, grid.ny, grid.nz, grid.n_cells(), run.fields.len(), t0.elapsed().as_secs_f64()
    );
    let last_scan = run.melt_track.iter().rev().find(|s| s.length > 0.0).unwrap();
    println!("melt pool: len {:.0} um wid {:.0} um dep {:.0} um", last_scan.length*1e6, last_scan.width*1e6, last_scan.depth*1e6);

    let mode: usize = args.get(4).map(|a| a.parse().unwrap()).unwrap_or(0);
    let mut mat_eff = mat.clone();
    mat_eff.poisson_ratio = cfg.poisson_ratio;
    let sub_rows = if mode == 3 { (40e-6 / grid.h).round() as usize } else { 0 };
    let k0 = if mode >= 2 { grid.substrate_rows - sub_rows } else { 0 };
    let nzm = grid.nz - k0;
    let mut mesh = VoxelMesh::new(grid.nx, grid.ny, nzm, grid.h, grid.h, vec![grid.h; nzm], [0.0; 3]).unwrap();
    mesh.fix_bottom_face();
    for iz in 0..=nzm {
        for ix in 0..=grid.nx {
            let n = mesh.node_index(ix, 0, iz);
            mesh.fixed[n][1] = true;
        }
    }
    let quiet_from = if mode == 1 { k0 } else { grid.substrate_rows };
    for k in quiet_from..grid.nz {
        for c in grid.idx(0, 0, k - k0)..grid.idx(0, 0, k - k0) + grid.nx * grid.ny {
            mesh.activation[c] = mat_eff.powder_stiffness_factor;
        }
    }
    println!("mode {mode}: mech mesh {}x{}x{}", grid.nx, grid.ny, nzm);
    let params = SolverParams { pcg_rel_tol: 1e-4, ..SolverParams::default() };
    let mut qs = QuasiStatic::new(mesh, &mat_eff, params, cfg.env_temperature).unwrap();
    let tm = mat_eff.melting_temperature;
    for (si, field) in run.fields.iter().enumerate() {
        let ts = std::time::Instant::now();
        for k in quiet_from..grid.nz {
            for c in grid.idx(0, 0, k)..grid.idx(0, 0, k) + grid.nx * grid.ny {
                if qs.mesh.activation[c - grid.idx(0, 0, k0)] < 1.0 && field[c] >= tm {
                    qs.born(c - grid.idx(0, 0, k0));
                }
            }
        }
        let temps: Vec<f64> = field[grid.idx(0, 0, k0)..].to_vec();
        let step = QuasiStaticStep { index: si, temps, scan_dirs: None };
        let rep = qs.apply_thermal_step(&step, &mat_eff, 1.0, StrainMode::Isotropic).unwrap();
        if si % 10 == 0 {
            println!("step {si}: newton {} pcg {} [{:.1}s]", rep.newton_iters, rep.pcg_iters, ts.elapsed().as_secs_f64());
        }
    }
    let ts = std::time::Instant::now();
    let nsub: usize = args.get(3).map(|a| a.parse().unwrap()).unwrap_or(1);
    let last = run.fields.last().unwrap().clone();
    for k in 1..=nsub {
        let f = 1.0 - k as f64 / nsub as f64;
        let temps: Vec<f64> = last[grid.idx(0, 0, k0)..].iter().map(|&t| cfg.env_temperature + (t - cfg.env_temperature) * f).collect();
        let cool = QuasiStaticStep { index: run.fields.len() + k, temps, scan_dirs: None };
        let rep = qs.apply_thermal_step(&cool, &mat_eff, 1.0, StrainMode::Isotropic).unwrap();
        println!("cool {k}/{nsub}: newton {} pcg {} [{:.1}s]", rep.newton_iters, rep.pcg_iters, ts.elapsed().as_secs_f64());
    }

    let nc = grid.nx * grid.ny * nzm;
    let all: Vec<_> = (0..nc).map(|e| qs.element_stress(e)).collect();
    let melted: Vec<_> = (0..nc).filter(|&e| qs.states.ever_melted[e]).map(|e| qs.element_stress(e)).collect();
    for (name, set) in [("all", &all), ("melted", &melted)] {
        let sx = element_average_stress(set, 0, 1e3).unwrap();
        let sy = element_average_stress(set, 1, 1e3).unwrap();
        let n = set.iter().filter(|s| von_mises(s) >= 1e3).count();
        println!("{name}: n {} scan {:.2} MPa trans {:.2} MPa s {:.4}", n, sx/1e6, sy/1e6, sy/sx);
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
