//! Temperature-dependent material data and the thermal-strain formulas.
//!
//! All quantities are SI with temperatures in Kelvin. Property curves are
//! piecewise-linear tables clamped to their end values outside the tabulated
//! range, so every property is defined for any finite temperature.

use crate::error::{Error, Result};

/// Piecewise-linear property curve over temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyTable {
    /// (temperature K, value) breakpoints, strictly increasing in temperature.
    points: Vec<(f64, f64)>,
}

impl PropertyTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMaterial("empty property table".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidMaterial(format!(
                    "table temperatures not strictly increasing at {} K",
                    w[1].0
                )));
            }
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidMaterial("non-finite table entry".into()));
        }
        Ok(Self { points })
    }

    /// Single-breakpoint table: the property is `value` at every temperature.
    pub fn constant(value: f64) -> Self {
        Self { points: vec![(293.15, value)] }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Piecewise-linear evaluation, clamped to end values outside the range.
    pub fn value_at(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        if t >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        // partition_point: first index with breakpoint temperature > t.
        let hi = pts.partition_point(|p| p.0 <= t);
        let (t0, v0) = pts[hi - 1];
        let (t1, v1) = pts[hi];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Exact integral of the (clamped) piecewise-linear curve from `a` to `b`.
    /// Signed: integrate(a, b) = -integrate(b, a).
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        self.antiderivative(b) - self.antiderivative(a)
    }

    /// Antiderivative anchored at the first breakpoint (exact trapezoids on
    /// segments, linear continuation with the clamped end values outside).
    fn antiderivative(&self, t: f64) -> f64 {
        let pts = &self.points;
        let (t_first, v_first) = pts[0];
        if t <= t_first {
            return (t - t_first) * v_first;
        }
        let mut acc = 0.0;
        for w in pts.windows(2) {
            let (t0, v0) = w[0];
            let (t1, v1) = w[1];
            if t >= t1 {
                acc += 0.5 * (v0 + v1) * (t1 - t0);
            } else {
                let vm = v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                acc += 0.5 * (v0 + vm) * (t - t0);
                return acc;
            }
        }
        let (t_last, v_last) = pts[pts.len() - 1];
        acc + (t - t_last) * v_last
    }

    pub fn min_value(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Free-function form of table evaluation.
pub fn property_at(table: &PropertyTable, t: f64) -> f64 {
    table.value_at(t)
}

/// Full material description used by every solver.
#[derive(Debug, Clone)]
pub struct MaterialModel {
    pub name: String,
    /// Melting temperature Tm (K); the thermal-strain integral is anchored here.
    pub melting_temperature: f64,
    pub poisson_ratio: f64,
    /// Thermal expansion coefficient (1/K).
    pub expansion_coefficient: PropertyTable,
    /// Young's modulus (Pa).
    pub youngs_modulus: PropertyTable,
    /// Von Mises yield stress (Pa).
    pub yield_stress: PropertyTable,
    /// Density (kg/m^3).
    pub density: PropertyTable,
    /// Specific heat capacity (J/(kg K)).
    pub specific_heat: PropertyTable,
    /// Thermal conductivity (W/(m K)).
    pub conductivity: PropertyTable,
    /// Latent heat of fusion (J/kg), smeared over [solidus, liquidus].
    pub latent_heat_fusion: f64,
    pub solidus: f64,
    pub liquidus: f64,
    pub emissivity: f64,
    /// Stiffness scale of unborn (powder) elements.
    pub powder_stiffness_factor: f64,
}

impl MaterialModel {
    /// Validates the cross-field invariants. Called by the parser; call it
    /// yourself after building a model by hand.
    pub fn validate(&self) -> Result<()> {
        if !(self.melting_temperature > 0.0) {
            return Err(Error::InvalidMaterial("melting_temperature must be > 0".into()));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(Error::InvalidMaterial("poisson_ratio must be in (0, 0.5)".into()));
        }
        if !(self.powder_stiffness_factor > 0.0 && self.powder_stiffness_factor <= 1.0) {
            return Err(Error::InvalidMaterial(
                "powder_stiffness_factor must be in (0, 1]".into(),
            ));
        }
        if !(self.latent_heat_fusion >= 0.0) {
            return Err(Error::InvalidMaterial("latent_heat_fusion must be >= 0".into()));
        }
        if !(self.solidus <= self.liquidus) {
            return Err(Error::InvalidMaterial("solidus must be <= liquidus".into()));
        }
        if !(self.emissivity >= 0.0 && self.emissivity <= 1.0) {
            return Err(Error::InvalidMaterial("emissivity must be in [0, 1]".into()));
        }
        // Piecewise-linear curves attain their minimum at a breakpoint, so
        // positive breakpoints imply positivity over any evaluation range.
        for (name, table) in [
            ("expansion_coefficient", &self.expansion_coefficient),
            ("youngs_modulus", &self.youngs_modulus),
            ("yield_stress", &self.yield_stress),
            ("density", &self.density),
            ("specific_heat", &self.specific_heat),
            ("conductivity", &self.conductivity),
        ] {
            if table.min_value() <= 0.0 {
                return Err(Error::InvalidMaterial(format!(
                    "{name} must be positive over its whole range"
                )));
            }
        }
        Ok(())
    }

    /// Young's modulus at T, floored at 1% of its room-temperature (293 K)
    /// value so near-melt stiffness never goes singular.
    pub fn youngs_modulus_at(&self, t: f64) -> f64 {
        let floor = 0.01 * self.youngs_modulus.value_at(293.0);
        self.youngs_modulus.value_at(t).max(floor)
    }

    /// Yield stress at T with the same 1% room-temperature floor.
    pub fn yield_stress_at(&self, t: f64) -> f64 {
        let floor = 0.01 * self.yield_stress.value_at(293.0);
        self.yield_stress.value_at(t).max(floor)
    }

    /// Built-in Ti-6Al-4V defaults (shipped data file).
    pub fn ti6al4v() -> MaterialModel {
        parse_material(include_str!("../data/ti6al4v.mat"))
            .expect("shipped ti6al4v.mat must parse")
    }
}

/// Signed thermal strain from Eq.-style integral of alpha from Tm to T.
/// Negative below Tm (shrinkage on cooling), zero at Tm.
pub fn thermal_strain(mat: &MaterialModel, t: f64) -> f64 {
    mat.expansion_coefficient.integrate(mat.melting_temperature, t)
}

/// Anisotropic effective thermal strain s*[1, r, 1, 0, 0, 0] in the frame
/// (scan, in-plane transverse, build), rotated to the global frame and packed
/// in Voigt order [xx, yy, zz, xy, yz, zx] with engineering shears.
///
/// `scan_dir` is the in-plane scan direction; it is normalized here. For
/// axis-aligned directions the rotation is exact (no trig round-off: the
/// direction cosines are exactly 0 and ±1).
pub fn effective_thermal_strain(
    mat: &MaterialModel,
    t: f64,
    r: f64,
    scan_dir: [f64; 2],
) -> Result<[f64; 6]> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("effective strain ratio r must be > 0, got {r}")));
    }
    let n = (scan_dir[0] * scan_dir[0] + scan_dir[1] * scan_dir[1]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidInput("scan_dir must be a nonzero in-plane vector".into()));
    }
    let (c, s_dir) = (scan_dir[0] / n, scan_dir[1] / n);
    let s = thermal_strain(mat, t);
    // Rotate diag(s, r*s) within the layer plane; build direction unaffected.
    let exx = s * (c * c + r * s_dir * s_dir);
    let eyy = s * (s_dir * s_dir + r * c * c);
    let gxy = 2.0 * s * (1.0 - r) * c * s_dir;
    Ok([exx, eyy, s, gxy, 0.0, 0.0])
}

/// Piecewise-linear apparent heat capacity with exact enthalpy integration.
///
/// Latent heat is smeared uniformly over [solidus, liquidus], which makes the
/// apparent capacity jump at the band edges; segments therefore store their
/// own endpoint values instead of sharing breakpoints. `enthalpy` is the exact
/// integral of the apparent capacity and `temperature_at` is its exact inverse,
/// so stepping a lumped thermal balance through this curve conserves energy to
/// round-off regardless of how much of the band a step crosses.
#[derive(Debug, Clone)]
pub struct EnthalpyCurve {
    /// (t0, t1, c0, c1, h0): linear capacity c0->c1 over [t0, t1], cumulative
    /// enthalpy h0 at t0. Contiguous in temperature, jumps in c allowed.
    segments: Vec<(f64, f64, f64, f64, f64)>,
    /// Capacity below the first segment / above the last (clamped constants).
    c_below: f64,
    c_above: f64,
    t_lo: f64,
    t_hi: f64,
    h_hi: f64,
}

impl EnthalpyCurve {
    pub fn new(mat: &MaterialModel, latent_on: bool) -> Self {
        let mut knots: Vec<f64> = mat.specific_heat.points().iter().map(|p| p.0).collect();
        let (ts, tl) = (mat.solidus, mat.liquidus);
        let smear = latent_on && mat.latent_heat_fusion > 0.0 && tl > ts;
        if smear {
            knots.push(ts);
            knots.push(tl);
        }
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup();
        let latent_c = if smear { mat.latent_heat_fusion / (tl - ts) } else { 0.0 };
        let in_band = |t: f64| smear && t >= ts && t <= tl;

        let mut segments = Vec::with_capacity(knots.len() - 1 + 2);
        let mut h = 0.0;
        for w in knots.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            let mid = 0.5 * (t0 + t1);
            let extra = if in_band(mid) { latent_c } else { 0.0 };
            let c0 = mat.specific_heat.value_at(t0) + extra;
            let c1 = mat.specific_heat.value_at(t1) + extra;
            segments.push((t0, t1, c0, c1, h));
            h += 0.5 * (c0 + c1) * (t1 - t0);
        }
        let t_lo = knots[0];
        let t_hi = *knots.last().unwrap();
        if segments.is_empty() {
            // Single-knot capacity table without a latent band.
            segments.push((t_lo, t_lo, 0.0, 0.0, 0.0));
        }
        EnthalpyCurve {
            segments,
            c_below: mat.specific_heat.value_at(t_lo),
            c_above: mat.specific_heat.value_at(t_hi),
            t_lo,
            t_hi,
            h_hi: h,
        }
    }

    /// Specific enthalpy (J/kg) relative to the first capacity breakpoint.
    pub fn enthalpy(&self, t: f64) -> f64 {
        if t <= self.t_lo {
            return (t - self.t_lo) * self.c_below;
        }
        if t >= self.t_hi {
            return self.h_hi + (t - self.t_hi) * self.c_above;
        }
        let i = self.segments.partition_point(|s| s.1 <= t).min(self.segments.len() - 1);
        let (t0, t1, c0, c1, h0) = self.segments[i];
        let x = t - t0;
        let m = if t1 > t0 { (c1 - c0) / (t1 - t0) } else { 0.0 };
        h0 + c0 * x + 0.5 * m * x * x
    }

    /// Exact inverse of `enthalpy`.
    pub fn temperature_at(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return self.t_lo + h / self.c_below;
        }
        if h >= self.h_hi {
            return self.t_hi + (h - self.h_hi) / self.c_above;
        }
        // Segment enthalpies are nondecreasing; find the segment containing h.
        let i = self
            .segments
            .partition_point(|s| s.4 <= h)
            .saturating_sub(1)
            .min(self.segments.len() - 1);
        let (t0, t1, c0, c1, h0) = self.segments[i];
        let dh = h - h0;
        let m = if t1 > t0 { (c1 - c0) / (t1 - t0) } else { 0.0 };
        if m.abs() * (t1 - t0) < 1e-12 * c0.abs() {
            return t0 + dh / c0;
        }
        // Stable quadratic root of 0.5*m*x^2 + c0*x - dh = 0, taking the
        // branch continuous with the linear case as m -> 0.
        let disc = (c0 * c0 + 2.0 * m * dh).max(0.0).sqrt();
        let x = if m > 0.0 { 2.0 * dh / (c0 + disc) } else { (disc - c0) / m };
        t0 + x
    }

    /// Apparent capacity at T (latent smear included inside the band).
    pub fn capacity_at(&self, t: f64) -> f64 {
        if t <= self.t_lo {
            return self.c_below;
        }
        if t >= self.t_hi {
            return self.c_above;
        }
        let i = self.segments.partition_point(|s| s.1 <= t).min(self.segments.len() - 1);
        let (t0, t1, c0, c1, _) = self.segments[i];
        if t1 > t0 {
            c0 + (c1 - c0) * (t - t0) / (t1 - t0)
        } else {
            c0
        }
    }
}

/// Parses the material data file format:
/// scalar lines `key value`, table blocks `table <name>` .. `end` with
/// `<T> <value>` rows, `#` comments. SI units, Kelvin.
pub fn parse_material(text: &str) -> Result<MaterialModel> {
    let mut name = String::from("unnamed");
    let mut scalars: std::collections::BTreeMap<&str, f64> = Default::default();
    let mut tables: std::collections::BTreeMap<String, PropertyTable> = Default::default();

    let mut lines = text.lines().enumerate();
    while let Some((idx, raw)) = lines.next() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let key = it.next().unwrap();
        match key {
            "name" => {
                name = it
                    .next()
                    .ok_or_else(|| perr(idx, "name requires a value"))?
                    .to_string();
            }
            "table" => {
                let tname = it.next().ok_or_else(|| perr(idx, "table requires a name"))?.to_string();
                let mut pts = Vec::new();
                let mut closed = false;
                for (jdx, raw2) in lines.by_ref() {
                    let l2 = strip_comment(raw2);
                    if l2.is_empty() {
                        continue;
                    }
                    if l2 == "end" {
                        closed = true;
                        break;
                    }
                    let mut f = l2.split_whitespace();
                    let t = parse_f64(f.next(), jdx, "table temperature")?;
                    let v = parse_f64(f.next(), jdx, "table value")?;
                    if f.next().is_some() {
                        return Err(perr(jdx, "table rows are `<T> <value>` pairs"));
                    }
                    pts.push((t, v));
                }
                if !closed {
                    return Err(perr(idx, &format!("table {tname} missing `end`")));
                }
                let table = PropertyTable::new(pts).map_err(|e| perr(idx, &e.to_string()))?;
                if tables.insert(tname.clone(), table).is_some() {
                    return Err(perr(idx, &format!("duplicate table {tname}")));
                }
            }
            _ => {
                let v = parse_f64(it.next(), idx, key)?;
                if it.next().is_some() {
                    return Err(perr(idx, "scalar lines are `key value`"));
                }
                if scalars.insert(key, v).is_some() {
                    return Err(perr(idx, &format!("duplicate key {key}")));
                }
            }
        }
    }

    let mut take_scalar = |key: &str| -> Result<f64> {
        scalars
            .remove(key)
            .ok_or_else(|| Error::InvalidMaterial(format!("missing required key {key}")))
    };
    let melting_temperature = take_scalar("melting_temperature")?;
    let poisson_ratio = take_scalar("poisson_ratio")?;
    let latent_heat_fusion = take_scalar("latent_heat_fusion")?;
    let solidus = take_scalar("solidus")?;
    let liquidus = take_scalar("liquidus")?;
    let emissivity = take_scalar("emissivity")?;
    let powder_stiffness_factor = scalars.remove("powder_stiffness_factor").unwrap_or(1e-4);
    if let Some(k) = scalars.keys().next() {
        return Err(Error::InvalidMaterial(format!("unknown key {k}")));
    }

    let mut take_table = |key: &str| -> Result<PropertyTable> {
        tables
            .remove(key)
            .ok_or_else(|| Error::InvalidMaterial(format!("missing required table {key}")))
    };
    let model = MaterialModel {
        name,
        melting_temperature,
        poisson_ratio,
        expansion_coefficient: take_table("expansion_coefficient")?,
        youngs_modulus: take_table("youngs_modulus")?,
        yield_stress: take_table("yield_stress")?,
        density: take_table("density")?,
        specific_heat: take_table("specific_heat")?,
        conductivity: take_table("conductivity")?,
        latent_heat_fusion,
        solidus,
        liquidus,
        emissivity,
        powder_stiffness_factor,
    };
    if let Some(k) = tables.keys().next() {
        return Err(Error::InvalidMaterial(format!("unknown table {k}")));
    }
    model.validate()?;
    Ok(model)
}

fn strip_comment(raw: &str) -> &str {
    match raw.find('#') {
        Some(i) => raw[..i].trim(),
        None => raw.trim(),
    }
}

fn perr(idx: usize, msg: &str) -> Error {
    Error::Parse { line: idx + 1, msg: msg.to_string() }
}

fn parse_f64(tok: Option<&str>, idx: usize, what: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| perr(idx, &format!("missing value for {what}")))?;
    tok.parse::<f64>()
        .map_err(|_| perr(idx, &format!("bad number `{tok}` for {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> PropertyTable {
        PropertyTable::new(vec![(300.0, 10.0), (400.0, 20.0)]).unwrap()
    }

    #[test]
    fn property_at_linear_midpoint() {
        assert_eq!(two_point().value_at(350.0), 15.0);
    }

    #[test]
    fn property_at_clamps_below() {
        assert_eq!(two_point().value_at(250.0), 10.0);
    }

    #[test]
    fn property_at_single_point_table() {
        let t = PropertyTable::new(vec![(300.0, 10.0)]).unwrap();
        assert_eq!(t.value_at(1000.0), 10.0);
    }

    #[test]
    fn property_table_rejects_non_monotone() {
        assert!(PropertyTable::new(vec![(300.0, 1.0), (300.0, 2.0)]).is_err());
        assert!(PropertyTable::new(vec![(400.0, 1.0), (300.0, 2.0)]).is_err());
        assert!(PropertyTable::new(vec![]).is_err());
    }

    fn const_alpha_mat(alpha: f64) -> MaterialModel {
        let mut m = MaterialModel::ti6al4v();
        m.expansion_coefficient = PropertyTable::constant(alpha);
        m
    }

    #[test]
    fn thermal_strain_zero_at_melt() {
        let m = MaterialModel::ti6al4v();
        assert_eq!(thermal_strain(&m, m.melting_temperature), 0.0);
    }

    #[test]
    fn thermal_strain_constant_alpha() {
        let m = const_alpha_mat(1e-5);
        let s = thermal_strain(&m, 1823.0);
        assert!((s + 1.0e-3).abs() < 1e-15, "got {s}");
    }

    #[test]
    fn thermal_strain_room_temperature_magnitude_estimate() {
        // Constant alpha = 1e-5 reproduces the back-of-envelope value exactly.
        let m = const_alpha_mat(1e-5);
        let s = thermal_strain(&m, 293.0);
        assert!((s + 0.0163).abs() < 1e-12, "got {s}");
    }

    #[test]
    fn effective_strain_isotropic_limit() {
        let m = MaterialModel::ti6al4v();
        let s = thermal_strain(&m, 800.0);
        let v = effective_thermal_strain(&m, 800.0, 1.0, [1.0, 0.0]).unwrap();
        assert_eq!(v, [s, s, s, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn effective_strain_scan_along_x() {
        let m = const_alpha_mat(1e-5);
        let v = effective_thermal_strain(&m, 293.0, 0.2, [1.0, 0.0]).unwrap();
        assert!((v[0] + 0.0163).abs() < 1e-12);
        assert!((v[1] + 0.00326).abs() < 1e-12);
        assert!((v[2] + 0.0163).abs() < 1e-12);
        assert_eq!(&v[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn effective_strain_axis_swap_is_exact() {
        let m = MaterialModel::ti6al4v();
        let vx = effective_thermal_strain(&m, 293.0, 0.2, [1.0, 0.0]).unwrap();
        let vy = effective_thermal_strain(&m, 293.0, 0.2, [0.0, 1.0]).unwrap();
        assert_eq!(vx[0], vy[1]);
        assert_eq!(vx[1], vy[0]);
        assert_eq!(vx[2], vy[2]);
        assert_eq!(vy[3], 0.0);
    }

    #[test]
    fn effective_strain_rejects_zero_dir() {
        let m = MaterialModel::ti6al4v();
        assert!(effective_thermal_strain(&m, 293.0, 0.2, [0.0, 0.0]).is_err());
    }

    #[test]
    fn shipped_table_strain_band() {
        let m = MaterialModel::ti6al4v();
        let s = thermal_strain(&m, 293.0).abs();
        assert!((0.015..=0.018).contains(&s), "shipped table gives {s}");
    }

    #[test]
    fn enthalpy_roundtrip_and_latent_budget() {
        let m = MaterialModel::ti6al4v();
        let curve = EnthalpyCurve::new(&m, true);
        let no_latent = EnthalpyCurve::new(&m, false);
        for &t in &[100.0, 293.0, 500.0, 1876.9, 1900.0, 1923.0, 2500.0] {
            let h = curve.enthalpy(t);
            let back = curve.temperature_at(h);
            assert!((back - t).abs() < 1e-9, "t={t} back={back}");
        }
        // Crossing the band absorbs exactly the latent heat on top of sensible.
        let dh = (curve.enthalpy(m.liquidus) - curve.enthalpy(m.solidus))
            - (no_latent.enthalpy(m.liquidus) - no_latent.enthalpy(m.solidus));
        assert!((dh - m.latent_heat_fusion).abs() < 1e-6 * m.latent_heat_fusion);
    }

    #[test]
    fn parse_rejects_unknown_and_missing() {
        let text = "melting_temperature 1923\nbogus_key 4\n";
        assert!(parse_material(text).is_err());
    }

    #[test]
    fn shipped_material_is_valid() {
        let m = MaterialModel::ti6al4v();
        m.validate().unwrap();
        assert_eq!(m.melting_temperature, 1923.0);
        assert_eq!(m.poisson_ratio, 0.3);
        assert_eq!(m.powder_stiffness_factor, 1e-4);
    }
}
