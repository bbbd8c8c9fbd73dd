//! Legacy ASCII VTK output for voxel meshes and element fields.
//!
//! Uniform meshes are written as STRUCTURED_POINTS; meshes with graded z rows
//! as RECTILINEAR_GRID. Fields are element (cell) data, written in the native
//! element order, which matches VTK's x-fastest cell ordering.

use std::io::{self, Write};

use super::VoxelMesh;

/// One named cell field.
pub enum CellData<'a> {
    Scalar(&'a [f64]),
    Vector(&'a [[f64; 3]]),
}

fn write_values<W: Write>(w: &mut W, vals: &[f64]) -> io::Result<()> {
    // 6 significant digits is plenty for visualization and keeps files small.
    for chunk in vals.chunks(9) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v:.6e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Writes the mesh and fields as a legacy ASCII VTK dataset.
pub fn write_legacy_vtk<W: Write>(
    w: &mut W,
    mesh: &VoxelMesh,
    title: &str,
    fields: &[(&str, CellData)],
) -> io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    let uniform = mesh.dz.iter().all(|&h| h == mesh.dz[0]);
    if uniform {
        writeln!(w, "DATASET STRUCTURED_POINTS")?;
        writeln!(w, "DIMENSIONS {} {} {}", mesh.nx + 1, mesh.ny + 1, mesh.nz + 1)?;
        writeln!(w, "ORIGIN {:.6e} {:.6e} {:.6e}", mesh.origin[0], mesh.origin[1], mesh.origin[2])?;
        writeln!(w, "SPACING {:.6e} {:.6e} {:.6e}", mesh.dx, mesh.dy, mesh.dz[0])?;
    } else {
        writeln!(w, "DATASET RECTILINEAR_GRID")?;
        writeln!(w, "DIMENSIONS {} {} {}", mesh.nx + 1, mesh.ny + 1, mesh.nz + 1)?;
        writeln!(w, "X_COORDINATES {} double", mesh.nx + 1)?;
        let xs: Vec<f64> = (0..=mesh.nx).map(|i| mesh.origin[0] + i as f64 * mesh.dx).collect();
        write_values(w, &xs)?;
        writeln!(w, "Y_COORDINATES {} double", mesh.ny + 1)?;
        let ys: Vec<f64> = (0..=mesh.ny).map(|i| mesh.origin[1] + i as f64 * mesh.dy).collect();
        write_values(w, &ys)?;
        writeln!(w, "Z_COORDINATES {} double", mesh.nz + 1)?;
        let zs: Vec<f64> = mesh.z_faces().iter().map(|z| mesh.origin[2] + z).collect();
        write_values(w, &zs)?;
    }
    writeln!(w, "CELL_DATA {}", mesh.n_elems())?;
    for (name, data) in fields {
        match data {
            CellData::Scalar(vals) => {
                assert_eq!(vals.len(), mesh.n_elems(), "field {name} has wrong length");
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                write_values(w, vals)?;
            }
            CellData::Vector(vals) => {
                assert_eq!(vals.len(), mesh.n_elems(), "field {name} has wrong length");
                writeln!(w, "VECTORS {name} double")?;
                for v in *vals {
                    writeln!(w, "{:.6e} {:.6e} {:.6e}", v[0], v[1], v[2])?;
                }
            }
        }
    }
    Ok(())
}

/// Convenience wrapper that creates the file (and parent directories).
pub fn save_legacy_vtk(
    path: &std::path::Path,
    mesh: &VoxelMesh,
    title: &str,
    fields: &[(&str, CellData)],
) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    let mut buf = io::BufWriter::new(file);
    write_legacy_vtk(&mut buf, mesh, title, fields)?;
    buf.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mesh_writes_structured_points() {
        let mesh = VoxelMesh::uniform(2, 2, 1, 1e-4).unwrap();
        let field: Vec<f64> = (0..4).map(|i| i as f64 * 1e6).collect();
        let mut out = Vec::new();
        write_legacy_vtk(&mut out, &mesh, "stress", &[("sigma_xx", CellData::Scalar(&field))])
            .unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\nstress\nASCII\n"));
        assert!(text.contains("DATASET STRUCTURED_POINTS"));
        assert!(text.contains("DIMENSIONS 3 3 2"));
        assert!(text.contains("SPACING 1.000000e-4 1.000000e-4 1.000000e-4"));
        assert!(text.contains("CELL_DATA 4"));
        assert!(text.contains("SCALARS sigma_xx double 1"));
        assert!(text.contains("LOOKUP_TABLE default"));
        assert!(text.contains("3.000000e6"));
    }

    #[test]
    fn graded_mesh_writes_rectilinear_grid() {
        let mesh =
            VoxelMesh::new(1, 1, 3, 1e-4, 1e-4, vec![4e-4, 2e-4, 1e-4], [0.0, 0.0, -7e-4])
                .unwrap();
        let field = vec![1.0, 2.0, 3.0];
        let mut out = Vec::new();
        write_legacy_vtk(&mut out, &mesh, "t", &[("temperature", CellData::Scalar(&field))])
            .unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("DATASET RECTILINEAR_GRID"));
        assert!(text.contains("Z_COORDINATES 4 double"));
        // z faces: -7e-4, -3e-4, -1e-4, ~0 (last carries accumulation
        // roundoff, so check it numerically).
        assert!(text.contains("-7.000000e-4 -3.000000e-4 -1.000000e-4"));
        let zline = text
            .lines()
            .skip_while(|l| !l.starts_with("Z_COORDINATES"))
            .nth(1)
            .unwrap();
        let last: f64 = zline.split_whitespace().last().unwrap().parse().unwrap();
        assert!(last.abs() < 1e-12);
        assert!(!text.contains("VECTORS"));
    }

    #[test]
    fn vector_field_roundtrip() {
        let mesh = VoxelMesh::uniform(1, 1, 1, 1e-3).unwrap();
        let dirs = vec![[1.0, 0.0, 0.0]];
        let mut out = Vec::new();
        write_legacy_vtk(&mut out, &mesh, "d", &[("scan_dir", CellData::Vector(&dirs))]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("VECTORS scan_dir double"));
        assert!(text.contains("1.000000e0 0.000000e0 0.000000e0"));
    }
}
