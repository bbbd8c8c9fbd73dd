//! Trilinear hexahedral element on axis-aligned boxes.
//!
//! Every element of a given size shares one unit-modulus stiffness matrix;
//! element stiffness is that template times activation * E(T). This is what
//! makes the matrix-free solver cheap on voxel meshes.

use super::tensor::Voigt;

/// Local node order: bottom face counterclockwise from the minimum corner,
/// then the top face in the same order (VTK hexahedron convention).
pub const XI: [f64; 8] = [-1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
pub const ETA: [f64; 8] = [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
pub const ZETA: [f64; 8] = [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];

const GP: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

/// Per-size element data: shape-function gradients at the 8 Gauss points,
/// the common integration weight, and the unit-modulus stiffness.
#[derive(Clone)]
pub struct HexTemplate {
    /// grad[gp][node] = (dN/dx, dN/dy, dN/dz) in physical coordinates.
    pub grad: [[[f64; 3]; 8]; 8],
    /// Gauss weight times Jacobian determinant (same at all 8 points).
    pub weight: f64,
    /// Stiffness for E = 1 at the given Poisson ratio.
    pub k_unit: [[f64; 24]; 24],
    /// Unit-modulus elastic matrix (E = 1): lambda', 2G' etc.
    pub d_unit: [[f64; 6]; 6],
}

impl HexTemplate {
    pub fn new(a: f64, b: f64, c: f64, nu: f64) -> Self {
        assert!(a > 0.0 && b > 0.0 && c > 0.0, "element sizes must be positive");
        let mut grad = [[[0.0; 3]; 8]; 8];
        for gp in 0..8 {
            let (xi, eta, zeta) = (GP * XI[gp], GP * ETA[gp], GP * ZETA[gp]);
            for n in 0..8 {
                let dxi = 0.125 * XI[n] * (1.0 + eta * ETA[n]) * (1.0 + zeta * ZETA[n]);
                let deta = 0.125 * ETA[n] * (1.0 + xi * XI[n]) * (1.0 + zeta * ZETA[n]);
                let dzeta = 0.125 * ZETA[n] * (1.0 + xi * XI[n]) * (1.0 + eta * ETA[n]);
                grad[gp][n] = [dxi * 2.0 / a, deta * 2.0 / b, dzeta * 2.0 / c];
            }
        }
        let weight = a * b * c / 8.0;

        let d_unit = elastic_matrix(1.0, nu);
        let mut k_unit = [[0.0; 24]; 24];
        for gp in 0..8 {
            // B is 6x24; accumulate w * B^T D B.
            let mut bmat = [[0.0; 24]; 6];
            for n in 0..8 {
                let [gx, gy, gz] = grad[gp][n];
                bmat[0][3 * n] = gx;
                bmat[1][3 * n + 1] = gy;
                bmat[2][3 * n + 2] = gz;
                bmat[3][3 * n] = gy;
                bmat[3][3 * n + 1] = gx;
                bmat[4][3 * n + 1] = gz;
                bmat[4][3 * n + 2] = gy;
                bmat[5][3 * n] = gz;
                bmat[5][3 * n + 2] = gx;
            }
            let mut db = [[0.0; 24]; 6];
            for i in 0..6 {
                for j in 0..24 {
                    let mut acc = 0.0;
                    for k in 0..6 {
                        acc += d_unit[i][k] * bmat[k][j];
                    }
                    db[i][j] = acc;
                }
            }
            for i in 0..24 {
                for j in 0..24 {
                    let mut acc = 0.0;
                    for k in 0..6 {
                        acc += bmat[k][i] * db[k][j];
                    }
                    k_unit[i][j] += weight * acc;
                }
            }
        }
        Self { grad, weight, k_unit, d_unit }
    }

    /// Engineering strain at Gauss point `gp` from element displacements.
    #[inline]
    pub fn strain_at(&self, gp: usize, ue: &[f64; 24]) -> Voigt {
        let g = &self.grad[gp];
        let mut e = [0.0; 6];
        for n in 0..8 {
            let (ux, uy, uz) = (ue[3 * n], ue[3 * n + 1], ue[3 * n + 2]);
            let [gx, gy, gz] = g[n];
            e[0] += gx * ux;
            e[1] += gy * uy;
            e[2] += gz * uz;
            e[3] += gy * ux + gx * uy;
            e[4] += gz * uy + gy * uz;
            e[5] += gz * ux + gx * uz;
        }
        e
    }

    /// Accumulates w * B^T sigma into the element force vector.
    #[inline]
    pub fn add_bt_sigma(&self, gp: usize, sigma: &Voigt, fe: &mut [f64; 24]) {
        let g = &self.grad[gp];
        let w = self.weight;
        for n in 0..8 {
            let [gx, gy, gz] = g[n];
            fe[3 * n] += w * (gx * sigma[0] + gy * sigma[3] + gz * sigma[5]);
            fe[3 * n + 1] += w * (gy * sigma[1] + gx * sigma[3] + gz * sigma[4]);
            fe[3 * n + 2] += w * (gz * sigma[2] + gy * sigma[4] + gx * sigma[5]);
        }
    }

    /// y_e += scale * K_unit * u_e (the elastic part of the element matvec).
    #[inline]
    pub fn add_k_times(&self, scale: f64, ue: &[f64; 24], ye: &mut [f64; 24]) {
        for i in 0..24 {
            let row = &self.k_unit[i];
            let mut acc = 0.0;
            for j in 0..24 {
                acc += row[j] * ue[j];
            }
            ye[i] += scale * acc;
        }
    }
}

/// Isotropic elastic matrix in Voigt form with engineering shears.
pub fn elastic_matrix(e: f64, nu: f64) -> [[f64; 6]; 6] {
    let lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let g = e / (2.0 * (1.0 + nu));
    let mut d = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = lam;
        }
        d[i][i] = lam + 2.0 * g;
        d[i + 3][i + 3] = g;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_translation_gives_zero_strain_and_force() {
        let t = HexTemplate::new(1e-4, 2e-4, 0.5e-4, 0.3);
        let mut ue = [0.0; 24];
        for n in 0..8 {
            ue[3 * n] = 1e-3;
            ue[3 * n + 1] = -2e-3;
            ue[3 * n + 2] = 0.5e-3;
        }
        // Gradients are O(1/h) = O(1e4), so cancellation roundoff in the
        // strain sits near 1e-13; 1e-12 is still 9 orders below the signal a
        // real deformation of this magnitude would produce.
        for gp in 0..8 {
            for v in t.strain_at(gp, &ue) {
                assert!(v.abs() < 1e-12);
            }
        }
        let mut ye = [0.0; 24];
        t.add_k_times(1.0, &ue, &mut ye);
        for v in ye {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_uniaxial_stretch_recovers_strain() {
        let (a, b, c) = (1e-4, 1e-4, 4e-5);
        let t = HexTemplate::new(a, b, c, 0.3);
        let eps = 1e-3;
        let mut ue = [0.0; 24];
        for n in 0..8 {
            // x displacement proportional to node x coordinate.
            let x = a * 0.5 * (1.0 + XI[n]);
            ue[3 * n] = eps * x;
        }
        for gp in 0..8 {
            let e = t.strain_at(gp, &ue);
            assert!((e[0] - eps).abs() < 1e-12 * eps.abs().max(1.0));
            for v in &e[1..] {
                assert!(v.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn k_unit_is_symmetric_with_rank_18() {
        let t = HexTemplate::new(1e-4, 1e-4, 1e-4, 0.3);
        for i in 0..24 {
            for j in 0..24 {
                let d = (t.k_unit[i][j] - t.k_unit[j][i]).abs();
                assert!(d < 1e-12 * t.k_unit[i][i].abs().max(1e-30));
            }
        }
    }
}
