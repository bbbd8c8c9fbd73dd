//! Path-level residual-stress simulation for laser powder bed fusion.
//!
//! The crate chains four stages:
//! 1. `finescale`: single-track thermomechanical calibration at melt-pool
//!    resolution, producing the effective-strain anisotropy ratio `r`.
//! 2. `capl`: a contact-aware path-level lumped thermal solver giving each
//!    path element its temperature history.
//! 3. `material::effective_thermal_strain`: the anisotropic strain
//!    s * [1, r, 1, 0, 0, 0] oriented per element by its scan direction.
//! 4. `pathmech` on `voxelfem`: a quasi-static elastoplastic solve on a
//!    hatch-spaced voxel mesh, yielding layer residual-stress fields.
//!
//! Units are SI throughout; temperatures in Kelvin. Stress/strain use Voigt
//! order [xx, yy, zz, xy, yz, zx] with engineering shear strains (gamma).

pub mod capl;
pub mod error;
pub mod finescale;
pub mod geom;
pub mod material;
pub mod pathmech;
pub mod suites;
pub mod toolpath;
pub mod voxelfem;

pub use error::{Error, Result};
