//! Path-level lumped-capacitance thermal solver.
//!
//! Each path-aligned element carries one temperature. An explicit step
//! integrates laser input, inter-element conduction through the contact
//! graph, convection and radiation to the environment, and conduction into
//! the build platform. Updates run in enthalpy form (dH = q dt / m, then
//! inverted through the enthalpy curve), which handles latent heat without
//! overshooting the transformation band.
//!
//! Only the active body (elements near the laser in space or time) is
//! stepped while the beam is on; everything else follows closed-form Newton
//! cooling and is caught up lazily when it re-enters the active body or
//! borders it.

pub mod discretize;

pub use discretize::{discretize, ContactEdge, ContactGraph, PathElement};

use std::io::Write;

use crate::error::{Error, Result};
use crate::geom::{Polygon, P2};
use crate::material::{EnthalpyCurve, MaterialModel};
use crate::toolpath::ScanPath;

pub const STEFAN_BOLTZMANN: f64 = 5.670374419e-8;

/// Runtime knobs for the thermal solver. Defaults follow the island-test
/// process parameters.
#[derive(Debug, Clone)]
pub struct ThermalParams {
    pub env_temperature: f64,
    pub absorptivity: f64,
    /// Convective film coefficient h (W/m^2 K) on the top surface.
    pub convection_coefficient: f64,
    /// Conduction path length into the fixed-temperature platform; None
    /// disables the platform sink.
    pub platform_thickness: Option<f64>,
    /// Conductivity scale for edges touching fictitious (powder) elements.
    pub powder_conductivity_factor: f64,
    /// Element target length for discretization; None → hatch space.
    pub target_length: Option<f64>,
    /// Active-body radius; None → 10x hatch space.
    pub active_radius: Option<f64>,
    /// Trailing time window that keeps recently heated elements active (s).
    pub active_window: f64,
    /// Fixed step size; None → auto from stability and laser transit time.
    pub dt: Option<f64>,
    /// History sampling stride (s).
    pub sample_interval: f64,
    /// Cool-down ends when max T - T_env drops below this band (K).
    pub cooldown_band: f64,
    /// Hard cap on the cool-down horizon after the scan ends (s).
    pub max_cooldown: f64,
    pub latent_heat: bool,
    /// Radiation applies to real (scanned) elements only.
    pub radiation: bool,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            env_temperature: 473.0,
            absorptivity: 0.77,
            convection_coefficient: 10.0,
            platform_thickness: Some(4e-3),
            powder_conductivity_factor: 0.1,
            target_length: None,
            active_radius: None,
            active_window: 5e-3,
            dt: None,
            sample_interval: 5e-4,
            cooldown_band: 1.0,
            max_cooldown: 5.0,
            latent_heat: true,
            radiation: true,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.env_temperature > 0.0) {
            return bad("env_temperature must be > 0");
        }
        if !(self.absorptivity > 0.0 && self.absorptivity <= 1.0) {
            return bad("absorptivity must be in (0, 1]");
        }
        if !(self.convection_coefficient >= 0.0) {
            return bad("convection_coefficient must be >= 0");
        }
        if let Some(h) = self.platform_thickness {
            if !(h > 0.0) {
                return bad("platform_thickness must be > 0");
            }
        }
        if !(self.powder_conductivity_factor > 0.0 && self.powder_conductivity_factor <= 1.0) {
            return bad("powder_conductivity_factor must be in (0, 1]");
        }
        if let Some(d) = self.dt {
            if !(d > 0.0) {
                return bad("dt must be > 0");
            }
        }
        if !(self.sample_interval > 0.0) {
            return bad("sample_interval must be > 0");
        }
        if !(self.cooldown_band > 0.0) {
            return bad("cooldown_band must be > 0");
        }
        if !(self.max_cooldown >= 0.0) {
            return bad("max_cooldown must be >= 0");
        }
        if !(self.active_window >= 0.0) {
            return bad("active_window must be >= 0");
        }
        Ok(())
    }
}

/// Current temperatures plus per-element bookkeeping times.
#[derive(Debug, Clone)]
pub struct ThermalState {
    pub temp: Vec<f64>,
    /// Last time each element's temperature was made current.
    pub last_update: Vec<f64>,
    pub time: f64,
}

/// Per-step energy tally (J). Losses are positive when heat leaves.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepDiagnostics {
    pub deposited: f64,
    pub convection_loss: f64,
    pub radiation_loss: f64,
    pub platform_loss: f64,
    /// Sum of m_i * dH_i over updated elements.
    pub net_enthalpy: f64,
}

/// Explicit thermal stepper over a discretized path.
pub struct Stepper<'a> {
    pub elements: &'a [PathElement],
    graph: &'a ContactGraph,
    mat: &'a MaterialModel,
    pub params: ThermalParams,
    curve: EnthalpyCurve,
    pub state: ThermalState,
    mass: Vec<f64>,
    area_top: Vec<f64>,
    active_radius: f64,
    /// Last time each element was inside the laser's radius.
    last_near: Vec<f64>,
    active: Vec<bool>,
    new_temp: Vec<f64>,
    // Melt bookkeeping (step resolution).
    pub peak: Vec<f64>,
    pub first_melt: Vec<Option<f64>>,
    pub melt_intervals: Vec<Vec<(f64, f64)>>,
    melted_now: Vec<bool>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        elements: &'a [PathElement],
        graph: &'a ContactGraph,
        mat: &'a MaterialModel,
        params: ThermalParams,
        hatch_space: f64,
    ) -> Result<Self> {
        params.validate()?;
        if elements.is_empty() {
            return Err(Error::InvalidInput("no thermal elements".into()));
        }
        let n = elements.len();
        let t0 = params.env_temperature;
        let rho = mat.density.value_at(t0);
        let mass: Vec<f64> = elements.iter().map(|e| rho * e.volume()).collect();
        let area_top: Vec<f64> = elements.iter().map(|e| e.footprint()).collect();
        let curve = EnthalpyCurve::new(mat, params.latent_heat);
        let active_radius = params.active_radius.unwrap_or(10.0 * hatch_space);
        Ok(Self {
            elements,
            graph,
            mat,
            params,
            curve,
            state: ThermalState { temp: vec![t0; n], last_update: vec![0.0; n], time: 0.0 },
            mass,
            area_top,
            active_radius,
            last_near: vec![f64::NEG_INFINITY; n],
            active: vec![true; n],
            new_temp: vec![t0; n],
            peak: vec![t0; n],
            first_melt: vec![None; n],
            melt_intervals: vec![Vec::new(); n],
            melted_now: vec![false; n],
        })
    }

    pub fn n_elems(&self) -> usize {
        self.elements.len()
    }

    /// Newton cooling rate with properties frozen at `t_ref`.
    fn cooling_rate(&self, i: usize, t_ref: f64) -> f64 {
        let mut g = self.params.convection_coefficient * self.area_top[i];
        if let Some(hp) = self.params.platform_thickness {
            g += self.mat.conductivity.value_at(t_ref) * self.area_top[i] / hp;
        }
        g / (self.mass[i] * self.curve.capacity_at(t_ref))
    }

    /// Closed-form cooled temperature of element `i` at `to_time` without
    /// mutating state.
    pub fn cooled_temperature(&self, i: usize, to_time: f64) -> f64 {
        let t_last = self.state.temp[i];
        let dt = to_time - self.state.last_update[i];
        if dt <= 0.0 || t_last == self.params.env_temperature {
            return t_last;
        }
        let lam = self.cooling_rate(i, t_last);
        self.params.env_temperature
            + (t_last - self.params.env_temperature) * (-lam * dt).exp()
    }

    /// Applies Newton cooling to an element that sat outside the active body,
    /// making its temperature current at `to_time`.
    pub fn lazy_update(&mut self, i: usize, to_time: f64) -> Result<f64> {
        let t_last_time = self.state.last_update[i];
        if to_time < t_last_time {
            return Err(Error::InvalidInput(format!(
                "lazy update backwards in time for element {i}: {to_time} < {t_last_time}"
            )));
        }
        if to_time == t_last_time {
            return Ok(self.state.temp[i]);
        }
        let t_old = self.state.temp[i];
        let t_new = self.cooled_temperature(i, to_time);
        let tm = self.mat.melting_temperature;
        // A melted element cooling through Tm closes its melt interval at the
        // analytic crossing time.
        if self.melted_now[i] && t_new < tm && t_old > tm {
            let lam = self.cooling_rate(i, t_old);
            let env = self.params.env_temperature;
            let t_cross = t_last_time + ((t_old - env) / (tm - env)).ln() / lam;
            self.close_melt(i, t_cross.clamp(t_last_time, to_time));
        } else if self.melted_now[i] && t_new < tm {
            self.close_melt(i, to_time);
        }
        self.state.temp[i] = t_new;
        self.state.last_update[i] = to_time;
        Ok(t_new)
    }

    fn close_melt(&mut self, i: usize, t: f64) {
        if let Some(open) = self.melt_intervals[i].last_mut() {
            if open.1 < open.0 {
                open.1 = t;
            }
        }
        self.melted_now[i] = false;
    }

    fn note_temperature(&mut self, i: usize, t: f64, temp: f64) {
        if temp > self.peak[i] {
            self.peak[i] = temp;
        }
        let melted = temp >= self.mat.melting_temperature;
        if melted && !self.melted_now[i] {
            if self.first_melt[i].is_none() {
                self.first_melt[i] = Some(t);
            }
            // Open interval: end < start marks it as unfinished.
            self.melt_intervals[i].push((t, f64::NEG_INFINITY));
            self.melted_now[i] = true;
        } else if !melted && self.melted_now[i] {
            self.close_melt(i, t);
        }
    }

    /// Largest stable explicit step: 0.5 * min_i(m c_min / G_i) with every
    /// conductance taken at its table maximum.
    pub fn stability_dt(&self) -> f64 {
        let k_max = self.mat.conductivity.max_value();
        let c_min = self.mat.specific_heat.min_value();
        let tm = self.mat.melting_temperature;
        let mut g = vec![0.0; self.n_elems()];
        for e in &self.graph.edges {
            let f = self.edge_factor(e.a, e.b);
            let cond = k_max * f * e.area / e.gap;
            g[e.a] += cond;
            g[e.b] += cond;
        }
        let mut dt = f64::INFINITY;
        for i in 0..self.n_elems() {
            let mut gi = g[i] + self.params.convection_coefficient * self.area_top[i];
            if self.params.radiation && !self.elements[i].is_fictitious {
                gi += 4.0
                    * self.mat.emissivity
                    * STEFAN_BOLTZMANN
                    * tm.powi(3)
                    * self.area_top[i];
            }
            if let Some(hp) = self.params.platform_thickness {
                gi += k_max * self.area_top[i] / hp;
            }
            if gi > 0.0 {
                dt = dt.min(0.5 * self.mass[i] * c_min / gi);
            }
        }
        if dt.is_finite() {
            dt
        } else {
            // Fully insulated configuration: any step works; pick something
            // tied to nothing in particular but finite.
            1e-4
        }
    }

    #[inline]
    fn edge_factor(&self, a: usize, b: usize) -> f64 {
        if self.elements[a].is_fictitious || self.elements[b].is_fictitious {
            self.params.powder_conductivity_factor
        } else {
            1.0
        }
    }

    fn refresh_active(&mut self, laser_pos: Option<P2>) {
        let t = self.state.time;
        match laser_pos {
            Some(p) => {
                let r2 = self.active_radius * self.active_radius;
                for (i, e) in self.elements.iter().enumerate() {
                    let dx = e.centroid[0] - p[0];
                    let dy = e.centroid[1] - p[1];
                    if dx * dx + dy * dy <= r2 {
                        self.last_near[i] = t;
                    }
                    self.active[i] = t - self.last_near[i] <= self.params.active_window;
                }
            }
            None => self.active.iter_mut().for_each(|a| *a = true),
        }
    }

    /// One explicit step of length `dt`. `laser_pos` is the beam position
    /// when active (None restricts nothing and everything updates);
    /// `deposit` routes absorbed power into one element.
    pub fn step(
        &mut self,
        dt: f64,
        laser_pos: Option<P2>,
        deposit: Option<(usize, f64)>,
    ) -> Result<StepDiagnostics> {
        debug_assert!(dt > 0.0);
        let t0 = self.state.time;
        let t1 = t0 + dt;
        self.refresh_active(laser_pos);

        // Catch-up pass: anything we are about to read must be current at t0.
        // That is every active element plus the inactive ring their fluxes
        // touch; ring elements do not receive conduction (the active-body
        // approximation), they just get their Newton cooling applied.
        let graph = self.graph;
        for i in 0..self.n_elems() {
            if self.active[i] && self.state.last_update[i] < t0 {
                self.lazy_update(i, t0)?;
            }
        }
        for i in 0..self.n_elems() {
            if !self.active[i] {
                continue;
            }
            for &(j, _) in graph.neighbors(i) {
                if !self.active[j] && self.state.last_update[j] < t0 {
                    self.lazy_update(j, t0)?;
                }
            }
        }

        let env = self.params.env_temperature;
        let env4 = env * env * env * env;
        let mut diag = StepDiagnostics::default();
        for i in 0..self.n_elems() {
            if !self.active[i] {
                continue;
            }
            let ti = self.state.temp[i];
            let mut q = 0.0;
            if let Some((di, power)) = deposit {
                if di == i {
                    let dep = self.params.absorptivity * power;
                    q += dep;
                    diag.deposited += dep * dt;
                }
            }
            for &(j, ek) in graph.neighbors(i) {
                let edge = &graph.edges[ek];
                let tj = self.state.temp[j];
                let k_eff = self.mat.conductivity.value_at(0.5 * (ti + tj))
                    * self.edge_factor(i, j);
                q += k_eff * edge.area * (tj - ti) / edge.gap;
            }
            let conv = self.params.convection_coefficient * self.area_top[i] * (env - ti);
            q += conv;
            diag.convection_loss -= conv * dt;
            if self.params.radiation && !self.elements[i].is_fictitious {
                let ti4 = ti * ti * ti * ti;
                let rad = self.mat.emissivity * STEFAN_BOLTZMANN * self.area_top[i] * (env4 - ti4);
                q += rad;
                diag.radiation_loss -= rad * dt;
            }
            if let Some(hp) = self.params.platform_thickness {
                let plat =
                    self.mat.conductivity.value_at(ti) * self.area_top[i] / hp * (env - ti);
                q += plat;
                diag.platform_loss -= plat * dt;
            }
            let dh = dt * q / self.mass[i];
            let tn = if dh == 0.0 {
                ti
            } else {
                self.curve.temperature_at(self.curve.enthalpy(ti) + dh)
            };
            if !tn.is_finite() || tn <= 0.0 {
                return Err(Error::Thermal(format!(
                    "element {i} at t = {t1:.6e} s: temperature became {tn}"
                )));
            }
            diag.net_enthalpy += self.mass[i] * dh;
            self.new_temp[i] = tn;
        }
        for i in 0..self.n_elems() {
            if self.active[i] {
                let tn = self.new_temp[i];
                self.state.temp[i] = tn;
                self.state.last_update[i] = t1;
                self.note_temperature(i, t1, tn);
            }
        }
        self.state.time = t1;
        Ok(diag)
    }

    /// Temperature of any element at the current time, whether or not it is
    /// in the active body.
    pub fn effective_temperature(&self, i: usize) -> f64 {
        self.cooled_temperature(i, self.state.time)
    }

    /// Closes bookkeeping at the end of a run (open melt intervals end now).
    fn finish(&mut self) {
        let t = self.state.time;
        for i in 0..self.n_elems() {
            if self.melted_now[i] {
                self.close_melt(i, t);
            }
        }
    }
}

/// Sampled thermal history of a run plus the elements it lives on.
#[derive(Debug, Clone)]
pub struct ThermalHistory {
    pub times: Vec<f64>,
    /// Row-major samples: `temps[s * n_elems + i]`.
    pub temps: Vec<f64>,
    pub n_elems: usize,
    pub env_temperature: f64,
    pub melting_temperature: f64,
    pub peak: Vec<f64>,
    pub first_melt: Vec<Option<f64>>,
    /// Closed melt intervals (entry, exit) per element, step-accurate.
    pub melt_intervals: Vec<Vec<(f64, f64)>>,
    pub elements: Vec<PathElement>,
    /// End of the scanning phase (s); cooling follows.
    pub scan_end: f64,
}

impl ThermalHistory {
    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn sample(&self, s: usize, i: usize) -> f64 {
        self.temps[s * self.n_elems + i]
    }

    /// Linear interpolation in time, clamped to the sampled range.
    pub fn temperature_at(&self, i: usize, t: f64) -> f64 {
        let times = &self.times;
        if t <= times[0] {
            return self.sample(0, i);
        }
        let last = times.len() - 1;
        if t >= times[last] {
            return self.sample(last, i);
        }
        let hi = times.partition_point(|&x| x <= t);
        let (t0, t1) = (times[hi - 1], times[hi]);
        let (a, b) = (self.sample(hi - 1, i), self.sample(hi, i));
        let f = (t - t0) / (t1 - t0);
        a + f * (b - a)
    }

    /// True if element `i` was molten at any point in (t0, t1].
    pub fn melted_during(&self, i: usize, t0: f64, t1: f64) -> bool {
        self.melt_intervals[i]
            .iter()
            .any(|&(enter, exit)| enter <= t1 && exit > t0)
    }
}

/// Per-element total time spent at or above `threshold`, by linear
/// interpolation between samples.
pub fn time_over_threshold(history: &ThermalHistory, threshold: f64) -> Vec<f64> {
    let n = history.n_elems;
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for s in 1..history.n_samples() {
            let (t0, t1) = (history.times[s - 1], history.times[s]);
            let (a, b) = (history.sample(s - 1, i), history.sample(s, i));
            let dt = t1 - t0;
            acc += if a >= threshold && b >= threshold {
                dt
            } else if a < threshold && b < threshold {
                0.0
            } else {
                // One crossing inside the interval.
                let f = (threshold - a) / (b - a);
                if b >= threshold {
                    (1.0 - f) * dt
                } else {
                    f * dt
                }
            };
        }
        out[i] = acc;
    }
    out
}

/// Runs the full thermal simulation: discretize, scan with the moving laser,
/// cool down until the field flattens to the environment band.
pub fn run_thermal(
    path: &ScanPath,
    domain: Option<&Polygon>,
    mat: &MaterialModel,
    params: &ThermalParams,
) -> Result<ThermalHistory> {
    params.validate()?;
    let target = params.target_length.unwrap_or(path.hatch_space);
    let (elements, graph) = discretize(path, domain, target)?;

    // Per-segment arc index: (span end, element id), for laser deposition.
    let mut locator: Vec<Vec<(f64, usize)>> = vec![Vec::new(); path.segments.len()];
    for e in &elements {
        if let Some((si, _, s1)) = e.sub_path {
            locator[si].push((s1, e.id));
        }
    }
    for v in &mut locator {
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
    let locate = |si: usize, s: f64| -> usize {
        let v = &locator[si];
        let k = v.partition_point(|&(end, _)| end <= s);
        v[k.min(v.len() - 1)].1
    };

    let mut stepper = Stepper::new(&elements, &graph, mat, params.clone(), path.hatch_space)?;
    let stab = stepper.stability_dt();
    let min_len = elements
        .iter()
        .filter(|e| !e.is_fictitious)
        .map(|e| e.length)
        .fold(f64::INFINITY, f64::min);
    let max_speed = path
        .segments
        .iter()
        .map(|s| s.speed)
        .fold(0.0_f64, f64::max);
    let dt_scan = params.dt.unwrap_or_else(|| stab.min(min_len / (4.0 * max_speed)));
    let dt_cool = params.dt.unwrap_or(stab);

    let n = elements.len();
    let mut times = Vec::new();
    let mut temps = Vec::new();
    let record = |stepper: &Stepper, times: &mut Vec<f64>, temps: &mut Vec<f64>| {
        times.push(stepper.state.time);
        for i in 0..n {
            temps.push(stepper.effective_temperature(i));
        }
    };
    record(&stepper, &mut times, &mut temps);
    let mut next_sample = params.sample_interval;

    let t_scan = path.total_time();
    eprintln!(
        "[capl] n {} stab {:.3e} dt_scan {:.3e} dt_cool {:.3e} t_scan {:.4} min_len {:.3e}",
        n, stab, dt_scan, dt_cool, t_scan, min_len
    );
    let mut dbg_steps = 0u64;
    while stepper.state.time < t_scan - 1e-15 {
        dbg_steps += 1;
        if dbg_steps % 200_000 == 0 {
            eprintln!("[capl] scan t={:.5} steps={}", stepper.state.time, dbg_steps);
        }
        let dt = dt_scan.min(t_scan - stepper.state.time);
        let tm = stepper.state.time + 0.5 * dt;
        let laser = path.laser_state_at(tm);
        let (pos, deposit) = if laser.active {
            let dep = path.locate_at(tm).map(|(si, s)| (locate(si, s), laser.power));
            (Some(laser.pos), dep)
        } else {
            (None, None)
        };
        stepper.step(dt, pos, deposit)?;
        if stepper.state.time >= next_sample - 1e-12 {
            record(&stepper, &mut times, &mut temps);
            next_sample += params.sample_interval;
        }
    }

    let t_limit = t_scan + params.max_cooldown;
    loop {
        let hottest = (0..n)
            .map(|i| stepper.state.temp[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if hottest - params.env_temperature < params.cooldown_band
            || stepper.state.time >= t_limit - 1e-15
        {
            break;
        }
        let dt = dt_cool.min(t_limit - stepper.state.time);
        dbg_steps += 1;
        if dbg_steps % 200_000 == 0 {
            eprintln!(
                "[capl] cool t={:.5} steps={} hottest {:.2}",
                stepper.state.time,
                dbg_steps,
                (0..n).map(|i| stepper.state.temp[i]).fold(f64::NEG_INFINITY, f64::max)
            );
        }
        stepper.step(dt, None, None)?;
        if stepper.state.time >= next_sample - 1e-12 {
            record(&stepper, &mut times, &mut temps);
            next_sample += params.sample_interval;
        }
    }
    stepper.finish();
    if *times.last().unwrap() < stepper.state.time {
        record(&stepper, &mut times, &mut temps);
    }

    let peak = stepper.peak.clone();
    let first_melt = stepper.first_melt.clone();
    let melt_intervals = stepper.melt_intervals.clone();
    let scan_end = t_scan;
    drop(stepper);
    Ok(ThermalHistory {
        times,
        temps,
        n_elems: n,
        env_temperature: params.env_temperature,
        melting_temperature: mat.melting_temperature,
        peak,
        first_melt,
        melt_intervals,
        elements,
        scan_end,
    })
}

/// Long-format history CSV: element id, time, temperature.
pub fn write_history_csv<W: Write>(h: &ThermalHistory, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "element,time_s,temperature_k")?;
    for i in 0..h.n_elems {
        for s in 0..h.n_samples() {
            writeln!(w, "{},{},{}", i, h.times[s], h.sample(s, i))?;
        }
    }
    Ok(())
}

/// Summary CSV: per element peak temperature, first melt time and time over
/// the given threshold.
pub fn write_summary_csv<W: Write>(
    h: &ThermalHistory,
    threshold: f64,
    w: &mut W,
) -> std::io::Result<()> {
    let tot = time_over_threshold(h, threshold);
    writeln!(
        w,
        "element,fictitious,x_m,y_m,peak_k,first_melt_s,time_over_{}k_s",
        threshold
    )?;
    for (i, e) in h.elements.iter().enumerate() {
        let fm = h.first_melt[i].map(|t| t.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            i,
            e.is_fictitious as u8,
            e.centroid[0],
            e.centroid[1],
            h.peak[i],
            fm,
            tot[i]
        )?;
    }
    Ok(())
}
