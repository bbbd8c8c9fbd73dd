//! Parametric layer outlines used by the experiment suites.

use crate::error::Result;
use crate::geom::{Polygon, P2};

/// Crescent-moon polygon: a disc with a second disc bitten out of its right
/// side, sampled as `arc_samples` points per arc and scaled to fit the
/// [0, width] x [0, height] box. Counterclockwise and simple by construction.
pub fn crescent_moon(width: f64, height: f64, arc_samples: usize) -> Result<Polygon> {
    let n = arc_samples.max(8);
    // Unit construction: outer circle R1 at origin, cutter R2 centered (d, 0).
    let (r1, r2, d): (f64, f64, f64) = (5.0, 3.2, 4.0);
    let xi = (d * d + r1 * r1 - r2 * r2) / (2.0 * d);
    let yi = (r1 * r1 - xi * xi).sqrt();
    let theta_u = yi.atan2(xi);
    let phi_u = yi.atan2(xi - d);
    let phi_l = -phi_u;

    let mut pts: Vec<P2> = Vec::with_capacity(2 * n);
    // Outer arc: upper intersection counterclockwise (through (-R1, 0)) down
    // to the lower intersection.
    let theta_span = 2.0 * std::f64::consts::PI - 2.0 * theta_u;
    for k in 0..=n {
        let t = theta_u + theta_span * k as f64 / n as f64;
        pts.push([r1 * t.cos(), r1 * t.sin()]);
    }
    // Inner arc: lower intersection back to upper through the cutter's
    // leftmost point, clockwise on the cutter circle (region stays on the
    // left). Skip both shared endpoints.
    let phi_span = (phi_l + 2.0 * std::f64::consts::PI) - phi_u;
    for k in 1..n {
        let t = phi_l + 2.0 * std::f64::consts::PI - phi_span * k as f64 / n as f64;
        pts.push([d + r2 * t.cos(), r2 * t.sin()]);
    }

    let (mut x0, mut y0, mut x1, mut y1) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    for p in &mut pts {
        p[0] = (p[0] - x0) / (x1 - x0) * width;
        p[1] = (p[1] - y0) / (y1 - y0) * height;
    }
    Polygon::new(pts)
}
