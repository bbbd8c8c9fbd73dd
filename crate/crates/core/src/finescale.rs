//! Fine-scale single-track calibration.
//!
//! A moving Gaussian laser scans one track across a voxelized plate (solid
//! substrate plus one deposit layer). Explicit finite-difference conduction
//! produces the temperature history; the history drives the voxel FEM with
//! isotropic thermal strain to full cool-down. The averaged residual stress
//! along and across the scan yields the anisotropy ratio used by the
//! path-level effective strain.
//!
//! The mechanical pass covers the deposit layer only, welded to the top of
//! the substrate (its bottom face is displacement-fixed): unmelted cells
//! stay at powder stiffness and carry negligible stress, so the von Mises
//! averaging cutoff excludes exactly the never-melted material. Including
//! the full elastic substrate instead pushes the transverse/scan stress
//! ratio below the Poisson bound at every resolution tried and clamps r to
//! its floor; the layer-on-substrate model reproduces the expected ratio at
//! the default voxel size.

use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::material::{EnthalpyCurve, MaterialModel};
use crate::voxelfem::{
    element_average_stress, QuasiStatic, QuasiStaticStep, SolverParams, StrainMode, VoxelMesh,
};

const SIGMA_SB: f64 = 5.670374419e-8;

#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    /// Scanned track length (m).
    pub track_length: f64,
    /// Cubic voxel edge (m); must not exceed the spot diameter.
    pub voxel_size: f64,
    pub power: f64,
    pub speed: f64,
    pub spot_diameter: f64,
    pub layer_thickness: f64,
    pub env_temperature: f64,
    pub substrate_depth: f64,
    /// Solid margin around the track, also the transverse half-width.
    pub lateral_margin: f64,
    pub absorptivity: f64,
    pub poisson_ratio: f64,
    /// Mirror symmetry across the scan line: simulate y >= 0 only.
    pub half_symmetry: bool,
    /// Quasi-static mechanical step stride (s of simulated time).
    pub mech_cadence: f64,
    /// Von Mises cutoff for stress averaging (Pa).
    pub averaging_epsilon: f64,
    /// Lower clamp for the ratio r.
    pub r_floor: f64,
    /// Extra thermal time after the scan, capped; ends early once the whole
    /// field drops below the solidus.
    pub post_scan_window: f64,
    pub convection: bool,
    pub radiation: bool,
    /// Hold the substrate bottom face at T_env.
    pub fixed_bottom: bool,
    pub convection_coefficient: f64,
    /// Conductivity knockdown for unmelted layer cells. Defaults to 1
    /// (the calibration plate is treated as solid); lower it to surround
    /// the track with loose powder instead.
    pub powder_conductivity_factor: f64,
    /// Explicit time step override; None derives it from the stability limit.
    pub dt: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            track_length: 3e-3,
            voxel_size: 20e-6,
            power: 82.5,
            speed: 0.5,
            spot_diameter: 50e-6,
            layer_thickness: 40e-6,
            env_temperature: 473.0,
            substrate_depth: 5e-4,
            lateral_margin: 5e-4,
            absorptivity: 0.77,
            poisson_ratio: 0.3,
            half_symmetry: true,
            mech_cadence: 5e-4,
            averaging_epsilon: 1e3,
            r_floor: 0.01,
            post_scan_window: 2e-3,
            convection: true,
            radiation: true,
            fixed_bottom: true,
            convection_coefficient: 10.0,
            powder_conductivity_factor: 1.0,
            dt: None,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.voxel_size > 0.0) {
            return bad("voxel_size must be > 0");
        }
        if self.voxel_size > self.spot_diameter {
            return bad("voxel_size must not exceed the laser spot diameter");
        }
        if self.track_length < self.voxel_size {
            return bad("track_length must cover at least one voxel");
        }
        if self.lateral_margin < 10.0 * self.voxel_size {
            return bad("lateral_margin must be at least 10 voxels");
        }
        if !(self.power >= 0.0 && self.speed > 0.0) {
            return bad("power must be >= 0 and speed > 0");
        }
        if !(self.absorptivity > 0.0 && self.absorptivity <= 1.0) {
            return bad("absorptivity must be in (0, 1]");
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return bad("poisson_ratio must be in (0, 0.5)");
        }
        if !(self.env_temperature > 0.0) {
            return bad("env_temperature must be > 0");
        }
        if !(self.substrate_depth >= self.voxel_size && self.layer_thickness >= self.voxel_size) {
            return bad("substrate and layer must each be at least one voxel thick");
        }
        if !(self.mech_cadence > 0.0) {
            return bad("mech_cadence must be > 0");
        }
        if !(self.averaging_epsilon >= 0.0) {
            return bad("averaging_epsilon must be >= 0");
        }
        if !(self.r_floor > 0.0) {
            return bad("r_floor must be > 0");
        }
        if !(self.powder_conductivity_factor > 0.0 && self.powder_conductivity_factor <= 1.0) {
            return bad("powder_conductivity_factor must be in (0, 1]");
        }
        if let Some(d) = self.dt {
            if !(d > 0.0) {
                return bad("dt must be > 0");
            }
        }
        Ok(())
    }
}

/// Uniform voxel grid layout shared by the thermal and mechanical passes.
/// Cells index as `i + nx*(j + ny*k)`, z up, the scan runs along +x on the
/// top surface. In half-symmetry mode the scan line is the y = 0 face.
#[derive(Debug, Clone)]
pub struct FineGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
    pub substrate_rows: usize,
    pub layer_rows: usize,
    pub half_symmetry: bool,
    /// Laser start x (m).
    pub track_x0: f64,
    pub track_x1: f64,
}

impl FineGrid {
    pub fn from_config(cfg: &CalibrationConfig) -> Result<FineGrid> {
        cfg.validate()?;
        let h = cfg.voxel_size;
        let cells = |len: f64| (len / h).round().max(1.0) as usize;
        let margin = cells(cfg.lateral_margin);
        let track = cells(cfg.track_length);
        let substrate_rows = cells(cfg.substrate_depth);
        let layer_rows = cells(cfg.layer_thickness);
        let nx = track + 2 * margin;
        let ny = if cfg.half_symmetry { margin } else { 2 * margin };
        Ok(FineGrid {
            nx,
            ny,
            nz: substrate_rows + layer_rows,
            h,
            substrate_rows,
            layer_rows,
            half_symmetry: cfg.half_symmetry,
            track_x0: margin as f64 * h,
            track_x1: (margin + track) as f64 * h,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    /// Cell-center y distance from the scan line.
    #[inline]
    fn y_off(&self, j: usize) -> f64 {
        if self.half_symmetry {
            (j as f64 + 0.5) * self.h
        } else {
            (j as f64 + 0.5) * self.h - 0.5 * self.ny as f64 * self.h
        }
    }

    fn is_layer_row(&self, k: usize) -> bool {
        k >= self.substrate_rows
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeltSample {
    pub t: f64,
    pub length: f64,
    pub width: f64,
    pub depth: f64,
}

/// Sampled fine-scale thermal history.
#[derive(Debug)]
pub struct FineThermalRun {
    pub grid: FineGrid,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    /// Ever crossed Tm (tracked every thermal step, not just at samples).
    pub melted: Vec<bool>,
    pub melt_track: Vec<MeltSample>,
    /// Laser energy actually injected (J).
    pub absorbed_energy: f64,
    /// eta * P * t_scan (halved in half-symmetry mode).
    pub nominal_energy: f64,
    pub scan_end: f64,
}

/// Explicit transient conduction under the moving Gaussian source.
pub fn run_finescale_thermal(
    cfg: &CalibrationConfig,
    mat: &MaterialModel,
) -> Result<FineThermalRun> {
    let grid = FineGrid::from_config(cfg)?;
    let n = grid.n_cells();
    let h = grid.h;
    let area = h * h;
    let vol = h * area;
    let tm = mat.melting_temperature;
    let curve = EnthalpyCurve::new(mat, true);
    let mass = mat.density.value_at(cfg.env_temperature) * vol;
    let k_powder = cfg.powder_conductivity_factor;

    // Worst-case nodal conductance: six solid faces plus the Dirichlet
    // bottom (half-cell distance) plus linearized surface losses at Tm.
    let k_max = mat.conductivity.max_value();
    let c_min = mat.specific_heat.min_value();
    let mut g_max = 6.0 * k_max * h + 2.0 * k_max * h;
    if cfg.convection {
        g_max += cfg.convection_coefficient * area;
    }
    if cfg.radiation {
        g_max += 4.0 * mat.emissivity * SIGMA_SB * tm.powi(3) * area;
    }
    let dt = cfg.dt.unwrap_or(0.5 * mass * c_min / g_max);

    let scan_end = cfg.track_length / cfg.speed;
    let spot_r = 0.5 * cfg.spot_diameter;
    let power_eff =
        cfg.absorptivity * cfg.power * if cfg.half_symmetry { 0.5 } else { 1.0 };
    let solidus = mat.solidus;
    let env = cfg.env_temperature;
    let env4 = env * env * env * env;

    let mut temp = vec![env; n];
    let mut melted = vec![false; n];
    let mut netq = vec![0.0f64; n];
    let mut kcell = vec![0.0f64; n];
    let mut absorbed = 0.0f64;

    let mut times = Vec::new();
    let mut fields: Vec<Vec<f64>> = Vec::new();
    let mut melt_track = Vec::new();
    let record = |t: f64,
                      temp: &[f64],
                      laser_x: Option<f64>,
                      times: &mut Vec<f64>,
                      fields: &mut Vec<Vec<f64>>,
                      melt_track: &mut Vec<MeltSample>| {
        times.push(t);
        fields.push(temp.to_vec());
        if let Some(lx) = laser_x {
            let (length, width, depth) = melt_pool_dimensions(temp, &grid, tm, lx);
            melt_track.push(MeltSample { t, length, width, depth });
        }
    };
    record(0.0, &temp, None, &mut times, &mut fields, &mut melt_track);

    let top = grid.nz - 1;
    let nxy = grid.nx * grid.ny;
    let mut t = 0.0f64;
    let mut next_sample = cfg.mech_cadence;
    let t_max = scan_end + cfg.post_scan_window;
    while t < t_max - 1e-15 {
        let scanning = t < scan_end - 1e-15;
        if !scanning {
            // Post-scan phase runs only until everything is solid again.
            let hottest = temp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hottest < solidus {
                break;
            }
        }
        let step = dt.min(t_max - t).min(if scanning { scan_end - t } else { f64::INFINITY });

        // Conductivity cache with the powder knockdown folded in.
        for k in 0..grid.nz {
            let powder_row = grid.is_layer_row(k);
            for c in k * nxy..(k + 1) * nxy {
                let f = if powder_row && !melted[c] { k_powder } else { 1.0 };
                kcell[c] = f * mat.conductivity.value_at(temp[c]);
            }
        }
        netq.iter_mut().for_each(|q| *q = 0.0);

        // Interior conduction, one pass per axis; each face once.
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                let row = grid.idx(0, j, k);
                for i in 0..grid.nx - 1 {
                    let (a, b) = (row + i, row + i + 1);
                    let q = 0.5 * (kcell[a] + kcell[b]) * area * (temp[b] - temp[a]) / h;
                    netq[a] += q;
                    netq[b] -= q;
                }
            }
        }
        for k in 0..grid.nz {
            for j in 0..grid.ny - 1 {
                let row = grid.idx(0, j, k);
                for i in 0..grid.nx {
                    let (a, b) = (row + i, row + i + grid.nx);
                    let q = 0.5 * (kcell[a] + kcell[b]) * area * (temp[b] - temp[a]) / h;
                    netq[a] += q;
                    netq[b] -= q;
                }
            }
        }
        for k in 0..grid.nz - 1 {
            for j in 0..grid.ny {
                let row = grid.idx(0, j, k);
                for i in 0..grid.nx {
                    let (a, b) = (row + i, row + i + nxy);
                    let q = 0.5 * (kcell[a] + kcell[b]) * area * (temp[b] - temp[a]) / h;
                    netq[a] += q;
                    netq[b] -= q;
                }
            }
        }

        // Top-surface losses.
        for c in top * nxy..(top + 1) * nxy {
            let ti = temp[c];
            if cfg.convection {
                netq[c] += cfg.convection_coefficient * area * (env - ti);
            }
            if cfg.radiation {
                let ti4 = ti * ti * ti * ti;
                netq[c] += mat.emissivity * SIGMA_SB * area * (env4 - ti4);
            }
        }
        // Dirichlet bottom through half a cell.
        if cfg.fixed_bottom {
            for c in 0..nxy {
                netq[c] += kcell[c] * area * (env - temp[c]) / (0.5 * h);
            }
        }

        // Gaussian deposit, normalized so the per-step input is exact.
        if scanning && cfg.power > 0.0 {
            let laser_x = grid.track_x0 + cfg.speed * (t + 0.5 * step);
            let cut = 3.0 * spot_r;
            let i0 = (((laser_x - cut) / h).floor().max(0.0)) as usize;
            let i1 = ((((laser_x + cut) / h).ceil()) as usize).min(grid.nx);
            let mut cells: Vec<(usize, f64)> = Vec::with_capacity(64);
            let mut wsum = 0.0;
            for j in 0..grid.ny {
                let dy = grid.y_off(j);
                if dy.abs() > cut {
                    continue;
                }
                for i in i0..i1 {
                    let dx = (i as f64 + 0.5) * h - laser_x;
                    let rho2 = dx * dx + dy * dy;
                    if rho2 > cut * cut {
                        continue;
                    }
                    let w = (-2.0 * rho2 / (spot_r * spot_r)).exp();
                    cells.push((grid.idx(i, j, top), w));
                    wsum += w;
                }
            }
            if wsum > 0.0 {
                for (c, w) in cells {
                    netq[c] += power_eff * w / wsum;
                }
                absorbed += power_eff * step;
            }
        }

        // Enthalpy update.
        for c in 0..n {
            let dh = step * netq[c] / mass;
            if dh != 0.0 {
                let tn = curve.temperature_at(curve.enthalpy(temp[c]) + dh);
                if !tn.is_finite() || tn <= 0.0 {
                    return Err(Error::Thermal(format!(
                        "fine-scale field unstable at t = {:.4e} s (cell {c}: {tn}); \
                         retry with dt <= {:.3e}",
                        t + step,
                        0.5 * dt
                    )));
                }
                temp[c] = tn;
                if tn >= tm {
                    melted[c] = true;
                }
            }
        }

        t += step;
        if t >= next_sample - 1e-12 || (scanning && t >= scan_end - 1e-15) {
            let laser_x = if t <= scan_end + 1e-12 {
                Some(grid.track_x0 + cfg.speed * t.min(scan_end))
            } else {
                None
            };
            record(t, &temp, laser_x, &mut times, &mut fields, &mut melt_track);
            while next_sample <= t + 1e-12 {
                next_sample += cfg.mech_cadence;
            }
        }
    }
    if *times.last().unwrap() < t - 1e-15 {
        record(t, &temp, None, &mut times, &mut fields, &mut melt_track);
    }

    Ok(FineThermalRun {
        grid,
        times,
        fields,
        melted,
        melt_track,
        absorbed_energy: absorbed,
        nominal_energy: power_eff * scan_end,
        scan_end,
    })
}

/// Extents of the connected molten region containing the laser position:
/// along-scan length, transverse width (mirrored in half-symmetry mode), and
/// depth, all in meters. Zero if the cell under the laser is below Tm.
pub fn melt_pool_dimensions(field: &[f64], grid: &FineGrid, tm: f64, laser_x: f64) -> (f64, f64, f64) {
    let i = ((laser_x / grid.h - 0.5).round().max(0.0) as usize).min(grid.nx - 1);
    let j = if grid.half_symmetry { 0 } else { grid.ny / 2 };
    let seed = grid.idx(i, j, grid.nz - 1);
    if field[seed] < tm {
        return (0.0, 0.0, 0.0);
    }
    let mut seen = vec![false; grid.n_cells()];
    let mut stack = vec![seed];
    seen[seed] = true;
    let (mut i0, mut i1, mut j0, mut j1, mut k0, mut k1) = (i, i, j, j, grid.nz - 1, grid.nz - 1);
    while let Some(c) = stack.pop() {
        let k = c / (grid.nx * grid.ny);
        let r = c % (grid.nx * grid.ny);
        let (ci, cj) = (r % grid.nx, r / grid.nx);
        i0 = i0.min(ci);
        i1 = i1.max(ci);
        j0 = j0.min(cj);
        j1 = j1.max(cj);
        k0 = k0.min(k);
        k1 = k1.max(k);
        let mut push = |nb: usize| {
            if !seen[nb] && field[nb] >= tm {
                seen[nb] = true;
                stack.push(nb);
            }
        };
        if ci > 0 {
            push(c - 1);
        }
        if ci + 1 < grid.nx {
            push(c + 1);
        }
        if cj > 0 {
            push(c - grid.nx);
        }
        if cj + 1 < grid.ny {
            push(c + grid.nx);
        }
        if k > 0 {
            push(c - grid.nx * grid.ny);
        }
        if k + 1 < grid.nz {
            push(c + grid.nx * grid.ny);
        }
    }
    let length = (i1 - i0 + 1) as f64 * grid.h;
    let width = if grid.half_symmetry {
        2.0 * (j1 + 1) as f64 * grid.h
    } else {
        (j1 - j0 + 1) as f64 * grid.h
    };
    let depth = (k1 - k0 + 1) as f64 * grid.h;
    (length, width, depth)
}

/// Transverse-to-scan elastic strain ratio from the averaged residual
/// stresses: r = (s - nu) / (1 - nu*s) with s = sigma_trans / sigma_scan,
/// clamped below at `floor` when the transverse elastic strain vanishes.
pub fn stress_ratio_to_r(sigma_scan: f64, sigma_trans: f64, nu: f64, floor: f64) -> Result<f64> {
    if !(sigma_scan > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sigma_scan must be > 0, got {sigma_scan}"
        )));
    }
    if !(nu > 0.0 && nu < 0.5) {
        return Err(Error::InvalidInput(format!("nu must be in (0, 0.5), got {nu}")));
    }
    if !(floor > 0.0) {
        return Err(Error::InvalidInput("r floor must be > 0".into()));
    }
    let s = sigma_trans / sigma_scan;
    if s <= nu {
        return Ok(floor);
    }
    Ok(((s - nu) / (1.0 - nu * s)).max(floor))
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub sigma_scan: f64,
    pub sigma_trans: f64,
    /// s = sigma_trans / sigma_scan.
    pub stress_ratio: f64,
    pub r: f64,
    pub melt_length: f64,
    pub melt_width: f64,
    pub melt_depth: f64,
    /// Elements that ever melted / that passed the averaging cutoff.
    pub n_melted: usize,
    pub n_averaged: usize,
    pub runtime_s: f64,
}

/// Full calibration: thermal run, stepwise quasi-static mechanics with
/// isotropic thermal strain, cutoff-filtered stress averaging, ratio.
///
/// The mechanical mesh spans the deposit layer; its bottom face (the top of
/// the substrate) is displacement-fixed. Every cell starts at powder
/// stiffness and is born stress-free when it first melts, so only the track
/// carries stress and the averaging cutoff drops the rest.
pub fn run_calibration(cfg: &CalibrationConfig, mat: &MaterialModel) -> Result<CalibrationResult> {
    let started = Instant::now();
    let run = run_finescale_thermal(cfg, mat)?;
    let grid = &run.grid;
    if !run.melted.iter().any(|&m| m) {
        return Err(Error::NoMeltedElements);
    }

    let mut mat_eff = mat.clone();
    mat_eff.poisson_ratio = cfg.poisson_ratio;

    let nz = grid.layer_rows;
    let mut mesh = VoxelMesh::new(grid.nx, grid.ny, nz, grid.h, grid.h, vec![grid.h; nz], [
        0.0,
        0.0,
        grid.substrate_rows as f64 * grid.h,
    ])?;
    mesh.fix_bottom_face();
    if grid.half_symmetry {
        // Mirror plane at y = 0: no transverse motion.
        for iz in 0..=nz {
            for ix in 0..=grid.nx {
                let node = mesh.node_index(ix, 0, iz);
                mesh.fixed[node][1] = true;
            }
        }
    }
    for a in &mut mesh.activation {
        *a = mat_eff.powder_stiffness_factor;
    }

    // The layer cells are the tail of the thermal field in cell order.
    let off = grid.idx(0, 0, grid.substrate_rows);
    let n_mech = grid.nx * grid.ny * nz;

    let params = SolverParams { pcg_rel_tol: 1e-6, ..SolverParams::default() };
    let mut qs = QuasiStatic::new(mesh, &mat_eff, params, cfg.env_temperature)?;
    let tm = mat_eff.melting_temperature;
    for (si, field) in run.fields.iter().enumerate() {
        for e in 0..n_mech {
            if qs.mesh.activation[e] < 1.0 && field[off + e] >= tm {
                qs.born(e);
            }
        }
        let step =
            QuasiStaticStep { index: si, temps: field[off..].to_vec(), scan_dirs: None };
        qs.apply_thermal_step(&step, &mat_eff, 1.0, StrainMode::Isotropic)?;
    }
    let cool = QuasiStaticStep {
        index: run.fields.len(),
        temps: vec![cfg.env_temperature; n_mech],
        scan_dirs: None,
    };
    qs.apply_thermal_step(&cool, &mat_eff, 1.0, StrainMode::Isotropic)?;

    let stresses = qs.element_stresses();
    let sigma_scan = element_average_stress(&stresses, 0, cfg.averaging_epsilon)?;
    let sigma_trans = element_average_stress(&stresses, 1, cfg.averaging_epsilon)?;
    let n_melted = qs.states.ever_melted.iter().filter(|&&m| m).count();
    let n_averaged = stresses
        .iter()
        .filter(|s| crate::voxelfem::von_mises(s) >= cfg.averaging_epsilon)
        .count();
    let r = stress_ratio_to_r(sigma_scan, sigma_trans, cfg.poisson_ratio, cfg.r_floor)?;

    // Steady-state pool size: the last sample taken while the laser was on.
    let steady = run
        .melt_track
        .iter()
        .rev()
        .find(|s| s.length > 0.0)
        .copied()
        .unwrap_or(MeltSample { t: 0.0, length: 0.0, width: 0.0, depth: 0.0 });

    Ok(CalibrationResult {
        sigma_scan,
        sigma_trans,
        stress_ratio: sigma_trans / sigma_scan,
        r,
        melt_length: steady.length,
        melt_width: steady.width,
        melt_depth: steady.depth,
        n_melted,
        n_averaged,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Key-value calibration report (both the raw stress ratio s and the derived
/// r are printed; consumers feed r into the path-level run).
pub fn write_calibration_report<W: Write>(
    result: &CalibrationResult,
    cfg: &CalibrationConfig,
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "sigma_scan_pa,{}", result.sigma_scan)?;
    writeln!(w, "sigma_trans_pa,{}", result.sigma_trans)?;
    writeln!(w, "stress_ratio_s,{}", result.stress_ratio)?;
    writeln!(w, "poisson_ratio,{}", cfg.poisson_ratio)?;
    writeln!(w, "r,{}", result.r)?;
    writeln!(w, "melt_length_m,{}", result.melt_length)?;
    writeln!(w, "melt_width_m,{}", result.melt_width)?;
    writeln!(w, "melt_depth_m,{}", result.melt_depth)?;
    writeln!(w, "n_melted,{}", result.n_melted)?;
    writeln!(w, "n_averaged,{}", result.n_averaged)?;
    writeln!(w, "runtime_s,{}", result.runtime_s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_config() -> CalibrationConfig {
        CalibrationConfig {
            track_length: 6e-4,
            voxel_size: 40e-6,
            lateral_margin: 4e-4,
            substrate_depth: 2e-4,
            layer_thickness: 40e-6,
            half_symmetry: false,
            ..CalibrationConfig::default()
        }
    }

    #[test]
    fn config_validation_rejects_bad_geometry() {
        let mut c = CalibrationConfig::default();
        c.voxel_size = 60e-6; // larger than the 50 um spot
        assert!(c.validate().is_err());
        let mut c = CalibrationConfig::default();
        c.lateral_margin = 5.0 * c.voxel_size;
        assert!(c.validate().is_err());
        assert!(CalibrationConfig::default().validate().is_ok());
    }

    #[test]
    fn ratio_formula_matches_reference_numbers() {
        let r = stress_ratio_to_r(61e6, 30e6, 0.3, 0.01).unwrap();
        assert!((r - 0.225).abs() < 1e-3, "r = {r}");
        // Isotropy.
        assert!((stress_ratio_to_r(50e6, 50e6, 0.3, 0.01).unwrap() - 1.0).abs() < 1e-12);
        // Zero transverse elastic strain clamps to the floor.
        assert_eq!(stress_ratio_to_r(100.0, 30.0, 0.3, 0.01).unwrap(), 0.01);
        assert_eq!(stress_ratio_to_r(100.0, -50.0, 0.3, 0.01).unwrap(), 0.01);
        assert!(stress_ratio_to_r(0.0, 30.0, 0.3, 0.01).is_err());
        assert!(stress_ratio_to_r(10.0, 3.0, 0.6, 0.01).is_err());
    }

    proptest! {
        #[test]
        fn ratio_depends_only_on_the_stress_ratio(
            scan in 1e3f64..1e9,
            s in 0.0f64..1.5,
            nu in 0.05f64..0.45,
            pow in -20i32..20,
        ) {
            let trans = s * scan;
            let a = stress_ratio_to_r(scan, trans, nu, 0.01).unwrap();
            // Power-of-two scaling is exact in binary floating point.
            let c = (2.0f64).powi(pow);
            let b = stress_ratio_to_r(c * scan, c * trans, nu, 0.01).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ratio_is_monotone_in_s(
            s1 in 0.31f64..1.0,
            ds in 1e-3f64..0.4,
        ) {
            let nu = 0.3;
            let a = stress_ratio_to_r(1e8, s1 * 1e8, nu, 1e-6).unwrap();
            let b = stress_ratio_to_r(1e8, (s1 + ds) * 1e8, nu, 1e-6).unwrap();
            prop_assert!(b > a);
        }
    }

    #[test]
    fn zero_power_field_stays_at_initial_condition() {
        let mat = MaterialModel::ti6al4v();
        let cfg = CalibrationConfig { power: 0.0, ..small_config() };
        let run = run_finescale_thermal(&cfg, &mat).unwrap();
        assert!(run.fields.iter().all(|f| f.iter().all(|&t| t == 473.0)));
        assert_eq!(run.absorbed_energy, 0.0);
        assert!(run.melted.iter().all(|&m| !m));
    }

    #[test]
    fn insulated_run_conserves_energy() {
        let mat = MaterialModel::ti6al4v();
        let cfg = CalibrationConfig {
            convection: false,
            radiation: false,
            fixed_bottom: false,
            post_scan_window: 5e-4,
            ..small_config()
        };
        let run = run_finescale_thermal(&cfg, &mat).unwrap();
        // Absorbed energy is exactly the nominal beam input.
        let rel = (run.absorbed_energy - run.nominal_energy).abs() / run.nominal_energy;
        assert!(rel < 1e-6, "absorbed off by {rel} relative");
        // Total enthalpy rise equals the input.
        let curve = EnthalpyCurve::new(&mat, true);
        let h = cfg.voxel_size;
        let mass = mat.density.value_at(cfg.env_temperature) * h * h * h;
        let h0 = curve.enthalpy(cfg.env_temperature);
        let gained: f64 = run
            .fields
            .last()
            .unwrap()
            .iter()
            .map(|&t| mass * (curve.enthalpy(t) - h0))
            .sum();
        let rel = (gained - run.absorbed_energy).abs() / run.absorbed_energy;
        assert!(rel < 1e-6, "enthalpy gain off by {rel} relative");
        assert!(run.melted.iter().any(|&m| m), "beam should melt the track");
    }

    #[test]
    fn melt_pool_dimensions_of_synthetic_ellipsoid() {
        let cfg = small_config();
        let grid = FineGrid::from_config(&cfg).unwrap();
        let tm = 1923.0;
        let mut field = vec![300.0; grid.n_cells()];
        // Half-axes in cells: 5 along x, 3 along y, 2 along z, centered on a
        // surface cell.
        let (ci, cj, ck) = (grid.nx / 2, grid.ny / 2, grid.nz - 1);
        for k in 0..grid.nz {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let dx = (i as f64 - ci as f64) / 5.0;
                    let dy = (j as f64 - cj as f64) / 3.0;
                    let dz = (k as f64 - ck as f64) / 2.0;
                    if dx * dx + dy * dy + dz * dz <= 1.0 {
                        field[grid.idx(i, j, k)] = tm + 100.0;
                    }
                }
            }
        }
        let laser_x = (ci as f64 + 0.5) * grid.h;
        let (l, w, d) = melt_pool_dimensions(&field, &grid, tm, laser_x);
        assert!((l - 11.0 * grid.h).abs() <= grid.h + 1e-12, "length {l}");
        assert!((w - 7.0 * grid.h).abs() <= grid.h + 1e-12, "width {w}");
        // The ellipsoid is clipped at the surface: only 3 of 5 z-rows exist.
        assert!((d - 3.0 * grid.h).abs() <= grid.h + 1e-12, "depth {d}");

        let cold = vec![300.0; grid.n_cells()];
        assert_eq!(melt_pool_dimensions(&cold, &grid, tm, laser_x), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_symmetry_width_doubles_the_half_extent() {
        let cfg = CalibrationConfig { half_symmetry: true, ..small_config() };
        let grid = FineGrid::from_config(&cfg).unwrap();
        let tm = 1923.0;
        let mut field = vec![300.0; grid.n_cells()];
        // Two cells deep in y from the mirror plane on the surface.
        let ci = grid.nx / 2;
        for j in 0..2 {
            field[grid.idx(ci, j, grid.nz - 1)] = tm + 50.0;
        }
        let laser_x = (ci as f64 + 0.5) * grid.h;
        let (l, w, _) = melt_pool_dimensions(&field, &grid, tm, laser_x);
        assert_eq!(l, grid.h);
        assert_eq!(w, 4.0 * grid.h);
    }
}
