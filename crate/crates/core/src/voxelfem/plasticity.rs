//! Von Mises radial return with the algorithmically consistent tangent.
//!
//! Perfect plasticity by default; a linear isotropic hardening modulus can be
//! passed but defaults to zero everywhere in this crate.

use super::tensor::Voigt;

/// Weighted tensor inner product of two deviators stored in Voigt stress
/// form: normals once, shears twice.
#[inline]
fn inner_w(a: &Voigt, b: &Voigt) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 2.0 * (a[3] * b[3] + a[4] * b[4] + a[5] * b[5])
}

#[derive(Debug, Clone, Copy)]
pub struct ReturnMap {
    /// Updated stress deviator (on or inside the yield surface).
    pub stress_dev: Voigt,
    /// Plastic strain increment, engineering Voigt (shears are gammas).
    pub delta_eps_p: Voigt,
    /// Equivalent plastic strain increment.
    pub delta_eq: f64,
    /// Deviator scale factor sigma(updated) = beta * trial; 1 when elastic.
    pub beta: f64,
    /// Trial von Mises stress.
    pub q_trial: f64,
    pub plastic: bool,
}

/// Radial return of a trial stress deviator onto the yield surface.
pub fn radial_return(trial_dev: Voigt, sigma_y: f64, g: f64, hardening: f64) -> ReturnMap {
    debug_assert!(sigma_y > 0.0 && g > 0.0);
    let q_trial = (1.5 * inner_w(&trial_dev, &trial_dev)).max(0.0).sqrt();
    if q_trial <= sigma_y {
        return ReturnMap {
            stress_dev: trial_dev,
            delta_eps_p: [0.0; 6],
            delta_eq: 0.0,
            beta: 1.0,
            q_trial,
            plastic: false,
        };
    }
    let dgamma = (q_trial - sigma_y) / (3.0 * g + hardening);
    let beta = (sigma_y + hardening * dgamma) / q_trial;
    let mut dev = trial_dev;
    for v in &mut dev {
        *v *= beta;
    }
    // Flow direction n = 1.5 * s_trial / q_trial (tensor); engineering shears
    // double the shear slots.
    let scale = 1.5 * dgamma / q_trial;
    let delta_eps_p = [
        scale * trial_dev[0],
        scale * trial_dev[1],
        scale * trial_dev[2],
        2.0 * scale * trial_dev[3],
        2.0 * scale * trial_dev[4],
        2.0 * scale * trial_dev[5],
    ];
    ReturnMap { stress_dev: dev, delta_eps_p, delta_eq: dgamma, beta, q_trial, plastic: true }
}

/// Multiplies the consistent-tangent *correction* (D_ep - D_elastic) onto an
/// engineering strain vector:
///
///   D_ep = K 1x1 + 2G beta M + c2 (s x s),   c2 = 3G (H/(3G+H) - beta)/q^2
///
/// where M is the engineering-shear deviatoric projector, s the trial
/// deviator, q the trial von Mises stress. The elastic template already
/// applies K 1x1 + 2G M, so the correction is 2G(beta-1) M x + c2 s (s . x).
#[inline]
pub fn tangent_correction(
    s_trial: &Voigt,
    beta: f64,
    q_trial: f64,
    g: f64,
    hardening: f64,
    x: &Voigt,
) -> Voigt {
    let m = (x[0] + x[1] + x[2]) / 3.0;
    let mx = [x[0] - m, x[1] - m, x[2] - m, 0.5 * x[3], 0.5 * x[4], 0.5 * x[5]];
    let c1 = 2.0 * g * (beta - 1.0);
    let c2 = 3.0 * g * (hardening / (3.0 * g + hardening) - beta) / (q_trial * q_trial);
    // Plain dot: c2's row vector is the gradient of beta*s w.r.t. the
    // engineering strain components, already weighted.
    let sx = s_trial[0] * x[0]
        + s_trial[1] * x[1]
        + s_trial[2] * x[2]
        + s_trial[3] * x[3]
        + s_trial[4] * x[4]
        + s_trial[5] * x[5];
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = c1 * mx[i] + c2 * sx * s_trial[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelfem::tensor::{deviator, von_mises};

    const SY: f64 = 500e6;
    const G: f64 = 40e9;

    #[test]
    fn elastic_branch_unchanged() {
        let s = deviator(&[100e6, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let r = radial_return(s, SY, G, 0.0);
        assert!(!r.plastic);
        assert_eq!(r.stress_dev, s);
        assert_eq!(r.delta_eq, 0.0);
    }

    #[test]
    fn uniaxial_two_sigma_y_returns_to_surface() {
        let trial = deviator(&[2.0 * SY, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let r = radial_return(trial, SY, G, 0.0);
        assert!(r.plastic);
        let vm = von_mises(&r.stress_dev);
        assert!((vm - SY).abs() <= 1e-8 * SY, "vm {vm}");
        let tr = r.delta_eps_p[0] + r.delta_eps_p[1] + r.delta_eps_p[2];
        let nrm = r.delta_eps_p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(tr.abs() <= 1e-12 * nrm.max(1e-30));
    }

    #[test]
    fn hydrostatic_trial_never_plastifies() {
        let trial = deviator(&[5.0 * SY, 5.0 * SY, 5.0 * SY, 0.0, 0.0, 0.0]);
        let r = radial_return(trial, SY, G, 0.0);
        assert!(!r.plastic);
        assert_eq!(r.delta_eq, 0.0);
    }

    #[test]
    fn hardening_raises_flow_stress() {
        let h = 10e9;
        let trial = deviator(&[2.0 * SY, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let r = radial_return(trial, SY, G, h);
        let vm = von_mises(&r.stress_dev);
        let want = SY + h * r.delta_eq;
        assert!((vm - want).abs() < 1e-6 * SY);
        assert!(vm > SY);
    }
}
