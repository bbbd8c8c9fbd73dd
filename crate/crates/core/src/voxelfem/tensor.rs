//! Voigt-notation tensor helpers.
//!
//! Order [xx, yy, zz, xy, yz, zx]; strains use engineering shears (gamma).

pub type Voigt = [f64; 6];

pub fn von_mises(s: &Voigt) -> f64 {
    let d0 = s[0] - s[1];
    let d1 = s[1] - s[2];
    let d2 = s[2] - s[0];
    (0.5 * (d0 * d0 + d1 * d1 + d2 * d2) + 3.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5]))
        .max(0.0)
        .sqrt()
}

pub fn trace(s: &Voigt) -> f64 {
    s[0] + s[1] + s[2]
}

/// Stress deviator (also correct for tensor-shear strain vectors; do not feed
/// engineering-shear strain without halving the shear slots first).
pub fn deviator(s: &Voigt) -> Voigt {
    let m = trace(s) / 3.0;
    [s[0] - m, s[1] - m, s[2] - m, s[3], s[4], s[5]]
}

/// Principal stresses of the symmetric tensor, descending. Analytic
/// (trigonometric Cardano) solution.
pub fn principal_stresses(s: &Voigt) -> [f64; 3] {
    let m = trace(s) / 3.0;
    let d = deviator(s);
    // J2 and J3 of the deviator.
    let j2 = 0.5 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        + d[3] * d[3]
        + d[4] * d[4]
        + d[5] * d[5];
    if j2 <= 0.0 {
        return [m, m, m];
    }
    // det of the deviatoric 3x3 matrix [[d0,d3,d5],[d3,d1,d4],[d5,d4,d2]].
    let j3 = d[0] * (d[1] * d[2] - d[4] * d[4]) - d[3] * (d[3] * d[2] - d[4] * d[5])
        + d[5] * (d[3] * d[4] - d[1] * d[5]);
    let rho = 2.0 * (j2 / 3.0).sqrt();
    let arg = (4.0 * j3 / (rho * rho * rho)).clamp(-1.0, 1.0);
    let phi = arg.acos() / 3.0;
    let c = std::f64::consts::TAU / 3.0;
    let mut e = [
        m + rho * phi.cos(),
        m + rho * (phi - c).cos(),
        m + rho * (phi + c).cos(),
    ];
    e.sort_by(|a, b| b.partial_cmp(a).unwrap());
    e
}

/// Smallest in-plane (xx, yy, xy) principal stress; build-direction terms
/// ignored. Used for compressive-zone detection on thin layers where sigma_zz
/// is numerical noise.
pub fn min_principal_in_plane(s: &Voigt) -> f64 {
    let a = 0.5 * (s[0] + s[1]);
    let b = 0.5 * (s[0] - s[1]);
    a - (b * b + s[3] * s[3]).sqrt()
}
