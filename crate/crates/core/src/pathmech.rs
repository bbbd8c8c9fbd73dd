//! Layer-scale mechanics on the path discretization.
//!
//! The thermal solution for a layer lives on path elements: hatch-sized
//! boxes strung along the scan vectors. This module builds the matching
//! mechanical mesh (a single element row for the deposit on a coarse,
//! graded platform), maps path-element temperatures onto the voxels by
//! nearest centroid, and steps the quasi-static solver through the scan
//! using the calibrated anisotropic thermal strain. Elements are born the
//! first time their thermal source melts, and any re-melt wipes their
//! state through the solver's molten reset.
//!
//! Voxels whose centroid falls outside the part contour stay powder for
//! the whole run, so arbitrary layer shapes ride on a rectangular grid.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::capl::{PathElement, ThermalHistory};
use crate::error::{Error, Result};
use crate::geom::{Polygon, P2};
use crate::material::MaterialModel;
use crate::voxelfem::vtk::{save_legacy_vtk, CellData};
use crate::voxelfem::{
    min_principal_in_plane, von_mises, QuasiStatic, QuasiStaticStep, SolverParams, StrainMode,
    Voigt, VoxelMesh,
};

/// Platform rows coarsen geometrically away from the deposit by this factor.
const GRADE_RATIO: f64 = 4.0;

/// Tolerance for point-in-polygon tests on element centroids (m).
const CLIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PathMechConfig {
    /// Hatch spacing; sets the in-plane element size across scan lines (m).
    pub hatch_space: f64,
    /// Element size along the scan direction; defaults to `hatch_space`.
    pub scan_spacing: Option<f64>,
    /// Deposit layer thickness (m).
    pub layer_thickness: f64,
    /// Total platform depth under the layer (m).
    pub platform_thickness: f64,
    /// Number of graded platform rows, finest at the top.
    pub platform_rows: usize,
    /// Transverse-to-scan thermal strain ratio from the calibration.
    pub r: f64,
    pub env_temperature: f64,
    /// Scan time between mechanical steps (s).
    pub step_interval: f64,
    /// Island cell size for step scheduling and reporting; `None` treats
    /// the whole layer as one island.
    pub island_size: Option<f64>,
    /// Keep a stress snapshot after every step (costly on big layers).
    pub snapshots: bool,
    pub solver: SolverParams,
}

impl Default for PathMechConfig {
    fn default() -> Self {
        Self {
            hatch_space: 100e-6,
            scan_spacing: None,
            layer_thickness: 40e-6,
            platform_thickness: 4e-3,
            platform_rows: 3,
            r: 0.22,
            env_temperature: 473.0,
            step_interval: 5e-3,
            island_size: None,
            snapshots: false,
            solver: SolverParams::default(),
        }
    }
}

impl PathMechConfig {
    pub fn dx(&self) -> f64 {
        self.scan_spacing.unwrap_or(self.hatch_space)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hatch_space > 0.0 && self.layer_thickness > 0.0) {
            return Err(Error::InvalidInput("element sizes must be positive".into()));
        }
        if let Some(s) = self.scan_spacing {
            if s <= 0.0 {
                return Err(Error::InvalidInput("scan_spacing must be positive".into()));
            }
        }
        if !(self.platform_thickness > 0.0) || self.platform_rows == 0 {
            return Err(Error::InvalidInput("platform needs thickness and rows".into()));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::InvalidInput("strain ratio r must be in (0, 1]".into()));
        }
        if !(self.step_interval > 0.0) {
            return Err(Error::InvalidInput("step_interval must be positive".into()));
        }
        if !(self.env_temperature > 0.0) {
            return Err(Error::InvalidInput("env_temperature must be positive".into()));
        }
        if let Some(s) = self.island_size {
            if s <= 0.0 {
                return Err(Error::InvalidInput("island_size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Mechanical mesh plus the layer-row bookkeeping the driver needs.
#[derive(Debug, Clone)]
pub struct MechMesh {
    pub mesh: VoxelMesh,
    /// z row index of the deposit layer (== number of platform rows).
    pub layer_row: usize,
    /// Mesh element id of layer cell 0; layer cell `le` is `layer_offset + le`.
    pub layer_offset: usize,
    pub hatch_space: f64,
    /// Layer-cell centroids, indexed like the layer row.
    pub centers: Vec<P2>,
    /// Centroid inside the part contour; cells outside never activate.
    pub in_domain: Vec<bool>,
    /// Island id per layer cell (None outside the contour).
    pub island_of: Vec<Option<usize>>,
    /// Number of island grid columns (for decoding island ids).
    pub islands_x: usize,
}

impl MechMesh {
    pub fn n_layer(&self) -> usize {
        self.mesh.nx * self.mesh.ny
    }

    /// Nearest-path-element index per layer cell, `None` beyond `cutoff`.
    pub fn thermal_map(&self, elems: &[PathElement], cutoff: f64) -> Vec<Option<usize>> {
        nearest_path_elements(&self.centers, elems, cutoff)
    }

    /// Fill the layer row of `out` with mapped temperatures at time `t`.
    /// Unmapped cells fall back to the history's environment temperature.
    pub fn map_temperatures(
        &self,
        map: &[Option<usize>],
        history: &ThermalHistory,
        t: f64,
        out: &mut [f64],
    ) {
        for le in 0..self.n_layer() {
            let v = match map[le] {
                Some(te) => history.temperature_at(te, t),
                None => history.env_temperature,
            };
            out[self.layer_offset + le] = v;
        }
    }
}

/// Build the deposit-on-platform mesh for one layer of `domain`.
///
/// The in-plane grid covers the contour's bounding box at the path element
/// pitch; the deposit is a single powder row welded onto `platform_rows`
/// solid rows that coarsen geometrically downward and end in a fixed base.
pub fn build_mech_mesh(domain: &Polygon, cfg: &PathMechConfig) -> Result<MechMesh> {
    cfg.validate()?;
    let bb = domain.bbox();
    let (w, h) = (bb[2] - bb[0], bb[3] - bb[1]);
    let dx = cfg.dx();
    let dy = cfg.hatch_space;
    let nx = ((w / dx - 1e-9).ceil() as usize).max(1);
    let ny = ((h / dy - 1e-9).ceil() as usize).max(1);

    // Geometric grading: top platform row is finest, each row below is
    // GRADE_RATIO thicker, the stack summing to platform_thickness.
    let n = cfg.platform_rows;
    let top = cfg.platform_thickness * (GRADE_RATIO - 1.0) / (GRADE_RATIO.powi(n as i32) - 1.0);
    let mut dz: Vec<f64> = (0..n).map(|i| top * GRADE_RATIO.powi((n - 1 - i) as i32)).collect();
    dz.push(cfg.layer_thickness);

    let mut mesh = VoxelMesh::new(nx, ny, n + 1, dx, dy, dz, [
        bb[0],
        bb[1],
        -cfg.platform_thickness,
    ])?;
    mesh.fix_bottom_face();

    let layer_row = n;
    let layer_offset = mesh.elem_index(0, 0, layer_row);
    let powder = 1e-4_f64;
    let mut centers = Vec::with_capacity(nx * ny);
    let mut in_domain = Vec::with_capacity(nx * ny);
    let mut island_of = Vec::with_capacity(nx * ny);
    let islands_x = match cfg.island_size {
        Some(s) => ((w / s - 1e-9).ceil() as usize).max(1),
        None => 1,
    };
    for le in 0..nx * ny {
        let c = mesh.elem_center(layer_offset + le);
        let p = [c[0], c[1]];
        let inside = domain.contains(p, CLIP_TOL);
        mesh.activation[layer_offset + le] = powder;
        centers.push(p);
        in_domain.push(inside);
        island_of.push(if inside {
            Some(island_id(bb, cfg.island_size, islands_x, p))
        } else {
            None
        });
    }
    Ok(MechMesh {
        mesh,
        layer_row,
        layer_offset,
        hatch_space: cfg.hatch_space,
        centers,
        in_domain,
        island_of,
        islands_x,
    })
}

fn island_id(bb: [f64; 4], size: Option<f64>, islands_x: usize, p: P2) -> usize {
    match size {
        Some(s) => {
            let ix = (((p[0] - bb[0]) / s).floor() as isize).max(0) as usize;
            let iy = (((p[1] - bb[1]) / s).floor() as isize).max(0) as usize;
            iy * islands_x + ix.min(islands_x - 1)
        }
        None => 0,
    }
}

/// Nearest path element for each query point, ties to the lowest id,
/// `None` when nothing lies within `cutoff`.
///
/// Bucketed on a `cutoff`-pitch grid so a layer maps in linear time.
pub fn nearest_path_elements(
    points: &[P2],
    elems: &[PathElement],
    cutoff: f64,
) -> Vec<Option<usize>> {
    if elems.is_empty() || cutoff <= 0.0 {
        return vec![None; points.len()];
    }
    let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for el in elems {
        bb[0] = bb[0].min(el.centroid[0]);
        bb[1] = bb[1].min(el.centroid[1]);
        bb[2] = bb[2].max(el.centroid[0]);
        bb[3] = bb[3].max(el.centroid[1]);
    }
    let cell = cutoff;
    let gx = (((bb[2] - bb[0]) / cell).floor() as usize) + 1;
    let gy = (((bb[3] - bb[1]) / cell).floor() as usize) + 1;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); gx * gy];
    let bucket_of = |x: f64, y: f64| -> (usize, usize) {
        let bx = (((x - bb[0]) / cell).floor() as isize).clamp(0, gx as isize - 1) as usize;
        let by = (((y - bb[1]) / cell).floor() as isize).clamp(0, gy as isize - 1) as usize;
        (bx, by)
    };
    for (i, el) in elems.iter().enumerate() {
        let (bx, by) = bucket_of(el.centroid[0], el.centroid[1]);
        buckets[by * gx + bx].push(i);
    }

    let cut2 = cutoff * cutoff;
    let k_max = gx.max(gy);
    points
        .iter()
        .map(|&p| {
            let (bx, by) = bucket_of(p[0], p[1]);
            let mut best: Option<(f64, usize)> = None;
            for k in 0..=k_max {
                // Any point in a ring-k bucket is at least (k-1) cells away.
                if let Some((d2, _)) = best {
                    let lb = (k as f64 - 1.0) * cell;
                    if lb > 0.0 && lb * lb > d2 {
                        break;
                    }
                }
                let x0 = bx.saturating_sub(k);
                let x1 = (bx + k).min(gx - 1);
                let y0 = by.saturating_sub(k);
                let y1 = (by + k).min(gy - 1);
                for cy in y0..=y1 {
                    for cx in x0..=x1 {
                        let on_ring = k == 0
                            || cx == x0 && bx >= k
                            || cx == x1 && bx + k < gx
                            || cy == y0 && by >= k
                            || cy == y1 && by + k < gy;
                        if !on_ring {
                            continue;
                        }
                        for &i in &buckets[cy * gx + cx] {
                            let dxp = elems[i].centroid[0] - p[0];
                            let dyp = elems[i].centroid[1] - p[1];
                            let d2 = dxp * dxp + dyp * dyp;
                            if d2 > cut2 {
                                continue;
                            }
                            let better = match best {
                                None => true,
                                Some((bd2, bi)) => d2 < bd2 || (d2 == bd2 && i < bi),
                            };
                            if better {
                                best = Some((d2, i));
                            }
                        }
                    }
                }
            }
            best.map(|(_, i)| i)
        })
        .collect()
}

/// Reference brute-force nearest lookup with the same tie and cutoff rules.
/// Kept public so tests can pin the bucketed version against it.
pub fn nearest_path_elements_naive(
    points: &[P2],
    elems: &[PathElement],
    cutoff: f64,
) -> Vec<Option<usize>> {
    let cut2 = cutoff * cutoff;
    points
        .iter()
        .map(|&p| {
            let mut best: Option<(f64, usize)> = None;
            for (i, el) in elems.iter().enumerate() {
                let dxp = el.centroid[0] - p[0];
                let dyp = el.centroid[1] - p[1];
                let d2 = dxp * dxp + dyp * dyp;
                if d2 > cut2 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bd2, bi)) => d2 < bd2 || (d2 == bd2 && i < bi),
                };
                if better {
                    best = Some((d2, i));
                }
            }
            best.map(|(_, i)| i)
        })
        .collect()
}

/// Mechanical step times: island completion instants plus a fixed cadence,
/// always ending with the scan end and the tail of the cooling record.
fn step_times(history: &ThermalHistory, cfg: &PathMechConfig, bb: [f64; 4]) -> Vec<f64> {
    let end = history.scan_end;
    let mut ts: Vec<f64> = Vec::new();
    let mut k = 1usize;
    while (k as f64) * cfg.step_interval < end {
        ts.push((k as f64) * cfg.step_interval);
        k += 1;
    }
    if let Some(s) = cfg.island_size {
        let islands_x = (((bb[2] - bb[0]) / s - 1e-9).ceil() as usize).max(1);
        let mut completion: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, el) in history.elements.iter().enumerate() {
            if el.is_fictitious {
                continue;
            }
            let Some(tm) = history.first_melt[i] else { continue };
            let id = island_id(bb, Some(s), islands_x, el.centroid);
            let e = completion.entry(id).or_insert(tm);
            *e = e.max(tm);
        }
        ts.extend(completion.values().copied());
    }
    if end > 0.0 {
        ts.push(end);
    }
    if let Some(&tl) = history.times.last() {
        if tl > end {
            ts.push(tl);
        }
    }
    ts.sort_by(f64::total_cmp);
    // Merge near-coincident steps, keeping the later time of each pair.
    let gap = 0.25 * cfg.step_interval;
    let mut out: Vec<f64> = Vec::new();
    for t in ts {
        match out.last_mut() {
            Some(last) if t - *last < gap => {
                if t > *last {
                    *last = t;
                }
            }
            _ => out.push(t),
        }
    }
    out
}

/// Result of a path-level mechanical run: converged end state plus layout.
#[derive(Debug, Clone)]
pub struct StressField {
    pub layout: MechMesh,
    /// Cauchy stress per mesh element, Voigt order.
    pub stresses: Vec<Voigt>,
    pub eq_plastic: Vec<f64>,
    /// Layer cells that were born (melted at least once).
    pub born: Vec<bool>,
    /// Frozen scan direction per mesh element (last melt wins).
    pub dirs: Vec<[f64; 2]>,
    /// Residual and reference force norms of the final equilibrium solve.
    pub residual: f64,
    pub reference: f64,
    /// `(time, stresses)` after each step when snapshots were requested.
    pub snapshots: Vec<(f64, Vec<Voigt>)>,
}

impl StressField {
    /// Stress of layer cell `le`.
    pub fn layer_stress(&self, le: usize) -> Voigt {
        self.stresses[self.layout.layer_offset + le]
    }

    pub fn n_born(&self) -> usize {
        self.born.iter().filter(|&&b| b).count()
    }
}

/// March the quasi-static mechanics through a layer's thermal history.
///
/// Steps are placed at island completions and on a fixed cadence. Within
/// each step, layer cells whose thermal source melted during the interval
/// are born (first time) or reset (re-melt) by clamping their mapped
/// temperature to the melting point, which routes both through the
/// solver's molten-reset rule. A final uniform step cools everything to
/// the environment temperature.
pub fn run_path_mechanical(
    history: &ThermalHistory,
    domain: &Polygon,
    cfg: &PathMechConfig,
    mat: &MaterialModel,
) -> Result<StressField> {
    let mm = build_mech_mesh(domain, cfg)?;
    let map = mm.thermal_map(&history.elements, 2.0 * cfg.hatch_space);
    let env = cfg.env_temperature;
    let tm = mat.melting_temperature;
    let n = mm.mesh.n_elems();
    let mode = StrainMode::Effective;

    let mut qs =
        QuasiStatic::new_with_mode(mm.mesh.clone(), mat, cfg.solver, env, cfg.r, mode)?;
    let mut temps = vec![env; n];
    let mut dirs = vec![[1.0, 0.0]; n];
    let mut born = vec![false; mm.n_layer()];
    let mut snapshots = Vec::new();

    let times = step_times(history, cfg, domain.bbox());
    let mut t_prev = 0.0;
    let mut index = 0usize;
    for &tk in &times {
        for le in 0..mm.n_layer() {
            let e = mm.layer_offset + le;
            if !mm.in_domain[le] {
                continue;
            }
            let Some(te) = map[le] else { continue };
            temps[e] = history.temperature_at(te, tk);
            if history.melted_during(te, t_prev, tk) {
                if !born[le] {
                    qs.born(e);
                    born[le] = true;
                }
                // Molten in this interval: force the reset even if the
                // sample time already cooled below the melting point.
                if temps[e] < tm {
                    temps[e] = tm;
                }
                dirs[e] = history.elements[te].dir;
            }
        }
        let step = QuasiStaticStep {
            index,
            temps: temps.clone(),
            scan_dirs: Some(dirs.clone()),
        };
        let dbg_t = std::time::Instant::now();
        let rep = qs.apply_thermal_step(&step, mat, cfg.r, mode)?;
        eprintln!(
            "[step {index} t={tk:.4}] newton {} pcg {} res {:.2e}/{:.2e} born {} ({:.2} s)",
            rep.newton_iters,
            rep.pcg_iters,
            rep.residual,
            rep.reference,
            born.iter().filter(|&&b| b).count(),
            dbg_t.elapsed().as_secs_f64()
        );
        if cfg.snapshots {
            snapshots.push((tk, qs.element_stresses()));
        }
        t_prev = tk;
        index += 1;
    }

    for v in temps.iter_mut() {
        *v = env;
    }
    let cool = QuasiStaticStep {
        index,
        temps: temps.clone(),
        scan_dirs: Some(dirs.clone()),
    };
    let rep = qs.apply_thermal_step(&cool, mat, cfg.r, mode)?;
    if cfg.snapshots {
        snapshots.push((times.last().copied().unwrap_or(0.0), qs.element_stresses()));
    }

    Ok(StressField {
        layout: mm,
        stresses: qs.element_stresses(),
        eq_plastic: (0..n).map(|e| qs.element_eq_plastic(e)).collect(),
        born,
        dirs,
        residual: rep.residual,
        reference: rep.reference,
        snapshots,
    })
}

/// Summary statistics over one group of layer cells.
#[derive(Debug, Clone, Default)]
pub struct GroupStats {
    /// Island id, or `None` for the whole layer.
    pub island: Option<usize>,
    /// Born cells contributing to the statistics.
    pub n_active: usize,
    pub mean_sxx: f64,
    pub mean_syy: f64,
    pub max_abs_sxx: f64,
    pub max_abs_syy: f64,
    pub mean_vm: f64,
    pub max_vm: f64,
    /// Fraction of born cells whose least in-plane principal stress is
    /// compressive.
    pub compressive_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct StressReport {
    pub islands: Vec<GroupStats>,
    pub layer: GroupStats,
}

fn stats_over(field: &StressField, pick: impl Fn(usize) -> bool) -> GroupStats {
    let mut st = GroupStats::default();
    let mut n_comp = 0usize;
    for le in 0..field.layout.n_layer() {
        if !field.born[le] || !pick(le) {
            continue;
        }
        let s = field.layer_stress(le);
        let vm = von_mises(&s);
        st.n_active += 1;
        st.mean_sxx += s[0];
        st.mean_syy += s[1];
        st.mean_vm += vm;
        st.max_abs_sxx = st.max_abs_sxx.max(s[0].abs());
        st.max_abs_syy = st.max_abs_syy.max(s[1].abs());
        st.max_vm = st.max_vm.max(vm);
        if min_principal_in_plane(&s) < 0.0 {
            n_comp += 1;
        }
    }
    if st.n_active > 0 {
        let inv = 1.0 / st.n_active as f64;
        st.mean_sxx *= inv;
        st.mean_syy *= inv;
        st.mean_vm *= inv;
        st.compressive_fraction = n_comp as f64 * inv;
    }
    st
}

/// Per-island and whole-layer statistics over the born cells. An empty
/// field (nothing melted) reports all zeros.
pub fn stress_report(field: &StressField) -> StressReport {
    let mut ids: Vec<usize> = field
        .layout
        .island_of
        .iter()
        .flatten()
        .copied()
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let islands = ids
        .into_iter()
        .map(|id| {
            let mut st = stats_over(field, |le| field.layout.island_of[le] == Some(id));
            st.island = Some(id);
            st
        })
        .collect();
    StressReport { islands, layer: stats_over(field, |_| true) }
}

pub fn write_stress_csv<W: Write>(w: &mut W, report: &StressReport) -> Result<()> {
    writeln!(
        w,
        "island,n_active,mean_sxx,mean_syy,max_abs_sxx,max_abs_syy,mean_vm,max_vm,compressive_fraction"
    )?;
    let row = |w: &mut W, label: &str, st: &GroupStats| -> Result<()> {
        writeln!(
            w,
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.4}",
            label,
            st.n_active,
            st.mean_sxx,
            st.mean_syy,
            st.max_abs_sxx,
            st.max_abs_syy,
            st.mean_vm,
            st.max_vm,
            st.compressive_fraction
        )?;
        Ok(())
    };
    for st in &report.islands {
        let label = st.island.map(|i| i.to_string()).unwrap_or_default();
        row(w, &label, st)?;
    }
    row(w, "layer", &report.layer)?;
    Ok(())
}

/// Write the end-state field as legacy VTK for inspection.
pub fn save_stress_vtk<P: AsRef<Path>>(path: P, field: &StressField) -> Result<()> {
    let n = field.stresses.len();
    let mut sxx = vec![0.0; n];
    let mut syy = vec![0.0; n];
    let mut szz = vec![0.0; n];
    let mut vm = vec![0.0; n];
    let mut minp = vec![0.0; n];
    let mut active = vec![0.0; n];
    for (e, s) in field.stresses.iter().enumerate() {
        sxx[e] = s[0];
        syy[e] = s[1];
        szz[e] = s[2];
        vm[e] = von_mises(s);
        minp[e] = min_principal_in_plane(s);
        active[e] = field.layout.mesh.activation[e];
    }
    save_legacy_vtk(path.as_ref(), &field.layout.mesh, "path-level residual stress", &[
        ("stress_xx", CellData::Scalar(&sxx)),
        ("stress_yy", CellData::Scalar(&syy)),
        ("stress_zz", CellData::Scalar(&szz)),
        ("von_mises", CellData::Scalar(&vm)),
        ("min_principal_inplane", CellData::Scalar(&minp)),
        ("eq_plastic", CellData::Scalar(&field.eq_plastic)),
        ("activation", CellData::Scalar(&active)),
    ])?;
    Ok(())
}

/// Elements a 3D voxel model at `voxel` pitch would need for every one
/// path-level element of this configuration.
pub fn element_economy(cfg: &PathMechConfig, voxel: f64) -> f64 {
    cfg.dx() * cfg.hatch_space * cfg.layer_thickness / (voxel * voxel * voxel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::MaterialModel;
    use crate::toolpath::{ScanPath, Segment, SegmentKind};

    fn ti() -> MaterialModel {
        MaterialModel::ti6al4v()
    }

    fn path_elem(id: usize, x: f64, y: f64) -> PathElement {
        PathElement {
            id,
            sub_path: None,
            length: 1e-4,
            width: 1e-4,
            height: 4e-5,
            centroid: [x, y],
            dir: [1.0, 0.0],
            is_fictitious: false,
        }
    }

    #[test]
    fn mesh_covers_bbox_with_graded_platform() {
        let cfg = PathMechConfig {
            hatch_space: 100e-6,
            layer_thickness: 40e-6,
            platform_thickness: 4e-3,
            platform_rows: 3,
            ..PathMechConfig::default()
        };
        let dom = Polygon::rect(0.0, 0.0, 2e-3, 1e-3);
        let mm = build_mech_mesh(&dom, &cfg).unwrap();
        assert_eq!((mm.mesh.nx, mm.mesh.ny, mm.mesh.nz), (20, 10, 4));
        let dz = &mm.mesh.dz;
        let platform: f64 = dz[..3].iter().sum();
        assert!((platform - 4e-3).abs() < 1e-12);
        assert!(dz[0] > dz[1] && dz[1] > dz[2]);
        assert!((dz[1] / dz[2] - GRADE_RATIO).abs() < 1e-9);
        assert!((dz[3] - 40e-6).abs() < 1e-15);
        // Deposit row starts as powder on a solid platform.
        assert!(mm.mesh.activation[..mm.layer_offset].iter().all(|&a| a == 1.0));
        assert!(mm.mesh.activation[mm.layer_offset..].iter().all(|&a| a < 1e-3));
        // Top of the platform sits at z = 0.
        assert!((mm.mesh.origin[2] + mm.mesh.z_faces()[3]).abs() < 1e-12);
        assert!(mm.in_domain.iter().all(|&d| d));
    }

    #[test]
    fn clipping_marks_outside_cells() {
        let cfg = PathMechConfig::default();
        // Right triangle: the upper-right half of the bbox is outside.
        let dom = Polygon::new(vec![[0.0, 0.0], [2e-3, 0.0], [0.0, 2e-3]]).unwrap();
        let mm = build_mech_mesh(&dom, &cfg).unwrap();
        assert!(mm.in_domain.iter().any(|&d| d));
        assert!(mm.in_domain.iter().any(|&d| !d));
        for le in 0..mm.n_layer() {
            let c = mm.centers[le];
            // Centroids exactly on the hypotenuse count as inside.
            let expect = c[0] + c[1] <= 2e-3 + 1e-9;
            assert_eq!(mm.in_domain[le], expect, "cell at {c:?}");
            assert_eq!(mm.island_of[le].is_some(), expect);
        }
    }

    #[test]
    fn island_grid_assigns_by_cell() {
        let cfg = PathMechConfig { island_size: Some(1e-3), ..PathMechConfig::default() };
        let dom = Polygon::rect(0.0, 0.0, 2e-3, 2e-3);
        let mm = build_mech_mesh(&dom, &cfg).unwrap();
        assert_eq!(mm.islands_x, 2);
        for le in 0..mm.n_layer() {
            let c = mm.centers[le];
            let ix = if c[0] < 1e-3 { 0 } else { 1 };
            let iy = if c[1] < 1e-3 { 0 } else { 1 };
            assert_eq!(mm.island_of[le], Some(iy * 2 + ix));
        }
    }

    #[test]
    fn nearest_matches_naive_on_random_layouts() {
        // Deterministic LCG; layouts include duplicates and far outliers.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rnd = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for case in 0..40 {
            let ne = 1 + (rnd() * 60.0) as usize;
            let mut elems: Vec<PathElement> = (0..ne)
                .map(|i| path_elem(i, rnd() * 2e-3, rnd() * 2e-3))
                .collect();
            if case % 3 == 0 && ne > 1 {
                // Exact duplicate centroid: the tie must go to the lower id.
                let c = elems[0].centroid;
                elems[1].centroid = c;
            }
            let pts: Vec<P2> = (0..120)
                .map(|_| [rnd() * 3e-3 - 0.5e-3, rnd() * 3e-3 - 0.5e-3])
                .collect();
            let cutoff = 2e-4 + rnd() * 5e-4;
            let fast = nearest_path_elements(&pts, &elems, cutoff);
            let slow = nearest_path_elements_naive(&pts, &elems, cutoff);
            assert_eq!(fast, slow, "case {case}");
        }
    }

    #[test]
    fn concentric_cell_gets_exact_element_temperature() {
        let elems = vec![path_elem(0, 1e-4, 1e-4), path_elem(1, 5e-4, 1e-4)];
        let n = elems.len();
        let history = ThermalHistory {
            times: vec![0.0, 1.0],
            temps: vec![500.0, 700.0, 900.0, 1100.0],
            n_elems: n,
            env_temperature: 473.0,
            melting_temperature: 1923.0,
            peak: vec![900.0, 1100.0],
            first_melt: vec![None, None],
            melt_intervals: vec![Vec::new(), Vec::new()],
            elements: elems,
            scan_end: 1.0,
        };
        let cfg = PathMechConfig { hatch_space: 200e-6, ..PathMechConfig::default() };
        let dom = Polygon::rect(0.0, 0.0, 6e-4, 2e-4);
        let mm = build_mech_mesh(&dom, &cfg).unwrap();
        let map = mm.thermal_map(&history.elements, 2.0 * cfg.hatch_space);
        let mut out = vec![0.0; mm.mesh.n_elems()];
        // Mid-record: linear interpolation of each element's samples.
        mm.map_temperatures(&map, &history, 0.5, &mut out);
        let le_of = |x: f64| {
            (0..mm.n_layer())
                .find(|&le| (mm.centers[le][0] - x).abs() < 1e-9)
                .unwrap()
        };
        assert!((out[mm.layer_offset + le_of(1e-4)] - 700.0).abs() < 1e-9);
        assert!((out[mm.layer_offset + le_of(5e-4)] - 900.0).abs() < 1e-9);
        // The middle cell is nearer element 1 at x = 500 um than element 0.
        assert_eq!(map[le_of(3e-4)], Some(1));
    }

    #[test]
    fn step_times_cover_scan_and_cooling() {
        let mut elems: Vec<PathElement> = Vec::new();
        let mut first = Vec::new();
        for i in 0..4 {
            elems.push(path_elem(i, 0.5e-3 + 1e-3 * (i / 2) as f64, 0.5e-3));
            first.push(Some(2e-3 + i as f64 * 4e-3));
        }
        let history = ThermalHistory {
            times: vec![0.0, 0.02],
            temps: vec![473.0; 8],
            n_elems: 4,
            env_temperature: 473.0,
            melting_temperature: 1923.0,
            peak: vec![2000.0; 4],
            first_melt: first,
            melt_intervals: vec![Vec::new(); 4],
            elements: elems,
            scan_end: 0.015,
        };
        let cfg = PathMechConfig {
            island_size: Some(1e-3),
            step_interval: 5e-3,
            ..PathMechConfig::default()
        };
        let times = step_times(&history, &cfg, [0.0, 0.0, 2e-3, 1e-3]);
        assert!(times.windows(2).all(|w| w[0] < w[1]), "sorted: {times:?}");
        // Island completions at 6 ms and 14 ms, cadence at 5/10 ms, scan
        // end at 15 ms, final cooling sample at 20 ms. The 5/6 ms and
        // 14/15 ms pairs each merge into the later time.
        assert_eq!(times.len(), 4, "{times:?}");
        assert!((times[0] - 6e-3).abs() < 1e-12);
        assert!((times[1] - 10e-3).abs() < 1e-12);
        assert!((times[2] - 15e-3).abs() < 1e-12);
        assert!((times[3] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn zero_power_run_stays_powder_and_stress_free() {
        let mat = ti();
        let hs = 100e-6;
        let mut segs = Vec::new();
        for i in 0..4 {
            let y = (i as f64 + 0.5) * hs;
            let (x0, x1) = if i % 2 == 0 { (0.0, 4e-4) } else { (4e-4, 0.0) };
            segs.push(Segment::new([x0, y], [x1, y], 0.0, 1.0, SegmentKind::Hatch).unwrap());
        }
        let path = ScanPath::new(segs, 40e-6, hs).unwrap();
        let dom = Polygon::rect(0.0, 0.0, 4e-4, 4e-4);
        let tcfg = crate::capl::ThermalParams::default();
        let history = crate::capl::run_thermal(&path, Some(&dom), &mat, &tcfg).unwrap();
        let cfg = PathMechConfig { hatch_space: hs, ..PathMechConfig::default() };
        let field = run_path_mechanical(&history, &dom, &cfg, &mat).unwrap();
        assert_eq!(field.n_born(), 0);
        let max = field
            .stresses
            .iter()
            .map(|s| von_mises(s))
            .fold(0.0f64, f64::max);
        assert!(max < 1.0, "max vm {max}");
        let rep = stress_report(&field);
        assert_eq!(rep.layer.n_active, 0);
        assert_eq!(rep.layer.mean_vm, 0.0);
        assert_eq!(rep.layer.compressive_fraction, 0.0);
    }

    #[test]
    fn report_statistics_match_hand_computation() {
        let cfg = PathMechConfig { island_size: Some(1e-3), ..PathMechConfig::default() };
        let dom = Polygon::rect(0.0, 0.0, 2e-3, 1e-3);
        let mm = build_mech_mesh(&dom, &cfg).unwrap();
        let n = mm.mesh.n_elems();
        let nl = mm.n_layer();
        let mut field = StressField {
            layout: mm,
            stresses: vec![[0.0; 6]; n],
            eq_plastic: vec![0.0; n],
            born: vec![false; nl],
            dirs: vec![[1.0, 0.0]; n],
            residual: 0.0,
            reference: 1.0,
            snapshots: Vec::new(),
        };
        // Two born cells in island 0: uniaxial tension and compression.
        let (a, b) = (0usize, 1usize);
        field.born[a] = true;
        field.born[b] = true;
        field.stresses[field.layout.layer_offset + a] = [200e6, 0.0, 0.0, 0.0, 0.0, 0.0];
        field.stresses[field.layout.layer_offset + b] = [-100e6, 50e6, 0.0, 0.0, 0.0, 0.0];
        let rep = stress_report(&field);
        assert_eq!(rep.islands.len(), 2);
        let i0 = &rep.islands[0];
        assert_eq!(i0.island, Some(0));
        assert_eq!(i0.n_active, 2);
        assert!((i0.mean_sxx - 50e6).abs() < 1.0);
        assert!((i0.mean_syy - 25e6).abs() < 1.0);
        assert!((i0.max_abs_sxx - 200e6).abs() < 1.0);
        assert!((i0.compressive_fraction - 0.5).abs() < 1e-12);
        assert_eq!(rep.islands[1].n_active, 0);
        assert_eq!(rep.layer.n_active, 2);
        // CSV has one row per island plus the layer total.
        let mut buf = Vec::new();
        write_stress_csv(&mut buf, &rep).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("layer,2,"));
    }

    #[test]
    fn economy_matches_volume_ratio() {
        let cfg = PathMechConfig {
            hatch_space: 90e-6,
            scan_spacing: Some(100e-6),
            layer_thickness: 40e-6,
            ..PathMechConfig::default()
        };
        assert!((element_economy(&cfg, 20e-6) - 45.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = PathMechConfig::default();
        cfg.r = 0.0;
        assert!(cfg.validate().is_err());
        cfg = PathMechConfig::default();
        cfg.platform_rows = 0;
        assert!(cfg.validate().is_err());
        cfg = PathMechConfig::default();
        cfg.island_size = Some(-1.0);
        assert!(cfg.validate().is_err());
    }
}
