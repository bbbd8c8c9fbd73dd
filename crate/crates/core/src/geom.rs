//! Small 2D helpers shared by toolpath generation and path discretization:
//! simple polygons, point containment, and clipping of lines/segments against
//! a polygon (the workhorse of hatching and island trimming).

use crate::error::{Error, Result};

pub type P2 = [f64; 2];

/// Geometric tolerance (m). Coordinates here are mm-scale part geometry, so
/// a nanometer separates genuine coincidence from distinct features.
pub const GEOM_TOL: f64 = 1e-9;

pub fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: P2) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: P2, b: P2) -> f64 {
    norm(sub(a, b))
}

/// Distance from point `p` to segment `ab`.
pub fn point_segment_distance(p: P2, a: P2, b: P2) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Simple counterclockwise polygon. Vertices are implicitly closed.
#[derive(Debug, Clone)]
pub struct Polygon {
    verts: Vec<P2>,
}

impl Polygon {
    pub fn new(verts: Vec<P2>) -> Result<Self> {
        if verts.len() < 3 {
            return Err(Error::InvalidInput("polygon needs at least 3 vertices".into()));
        }
        let area = signed_area(&verts);
        if area.abs() < GEOM_TOL * GEOM_TOL {
            return Err(Error::InvalidInput("polygon has zero area".into()));
        }
        if area < 0.0 {
            return Err(Error::InvalidInput("polygon must be counterclockwise".into()));
        }
        Ok(Self { verts })
    }

    /// Axis-aligned rectangle [x0, x1] x [y0, y1].
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { verts: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]] }
    }

    pub fn vertices(&self) -> &[P2] {
        &self.verts
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.verts)
    }

    /// Bounding box as [xmin, ymin, xmax, ymax].
    pub fn bbox(&self) -> [f64; 4] {
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for v in &self.verts {
            bb[0] = bb[0].min(v[0]);
            bb[1] = bb[1].min(v[1]);
            bb[2] = bb[2].max(v[0]);
            bb[3] = bb[3].max(v[1]);
        }
        bb
    }

    /// Inside-or-on test: even-odd ray cast with an explicit boundary band of
    /// width `tol` so points sitting exactly on an edge count as contained.
    pub fn contains(&self, p: P2, tol: f64) -> bool {
        let n = self.verts.len();
        for i in 0..n {
            if point_segment_distance(p, self.verts[i], self.verts[(i + 1) % n]) <= tol {
                return true;
            }
        }
        let mut inside = false;
        for i in 0..n {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if x > p[0] {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Intersects the infinite line `origin + t*dir` (dir unit) with the
    /// polygon interior. Returns disjoint, ascending `t` intervals.
    ///
    /// Vertices sitting on the line are nudged to the positive side for
    /// even-odd consistency; polygon edges collinear with the line contribute
    /// their spans directly (hatch lines running along a rectangle edge must
    /// survive clipping whole).
    pub fn clip_line(&self, origin: P2, dir: P2) -> Vec<(f64, f64)> {
        let nrm = [-dir[1], dir[0]];
        let n = self.verts.len();
        let d: Vec<f64> = self
            .verts
            .iter()
            .map(|v| {
                let raw = dot(nrm, sub(*v, origin));
                if raw.abs() <= GEOM_TOL {
                    0.0
                } else {
                    raw
                }
            })
            .collect();
        let t_of = |v: P2| dot(dir, sub(v, origin));

        let mut crossings: Vec<f64> = Vec::new();
        let mut spans: Vec<(f64, f64)> = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            let (di, dj) = (d[i], d[j]);
            if di == 0.0 && dj == 0.0 {
                let (ta, tb) = (t_of(self.verts[i]), t_of(self.verts[j]));
                spans.push((ta.min(tb), ta.max(tb)));
                continue;
            }
            // Nudge on-line vertices to +: an edge grazing the line from the
            // positive side produces no crossing, matching even-odd counting.
            let si = if di == 0.0 { 1.0 } else { di.signum() };
            let sj = if dj == 0.0 { 1.0 } else { dj.signum() };
            if si * sj < 0.0 {
                let frac = di / (di - dj);
                let ti = t_of(self.verts[i]);
                let tj = t_of(self.verts[j]);
                crossings.push(ti + frac * (tj - ti));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in crossings.chunks_exact(2) {
            spans.push((pair[0], pair[1]));
        }
        merge_intervals(spans)
    }

    /// Clips segment `ab` against the polygon; pieces come back in parametric
    /// order along the segment. Slivers shorter than GEOM_TOL are dropped.
    pub fn clip_segment(&self, a: P2, b: P2) -> Vec<(P2, P2)> {
        let len = dist(a, b);
        if len <= GEOM_TOL {
            return vec![];
        }
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        self.clip_line(a, dir)
            .into_iter()
            .filter_map(|(t0, t1)| {
                let (t0, t1) = (t0.max(0.0), t1.min(len));
                if t1 - t0 <= GEOM_TOL {
                    return None;
                }
                let p = |t: f64| [a[0] + dir[0] * t, a[1] + dir[1] * t];
                Some((p(t0), p(t1)))
            })
            .collect()
    }
}

fn signed_area(verts: &[P2]) -> f64 {
    let n = verts.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

fn merge_intervals(mut spans: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    spans.retain(|s| s.1 - s.0 > GEOM_TOL);
    spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
    for s in spans {
        match out.last_mut() {
            Some(last) if s.0 <= last.1 + GEOM_TOL => last.1 = last.1.max(s.1),
            _ => out.push(s),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_contains_and_boundary() {
        let p = Polygon::rect(0.0, 0.0, 2.0, 1.0);
        assert!(p.contains([1.0, 0.5], GEOM_TOL));
        assert!(p.contains([0.0, 0.5], GEOM_TOL));
        assert!(p.contains([2.0, 1.0], GEOM_TOL));
        assert!(!p.contains([2.1, 0.5], GEOM_TOL));
    }

    #[test]
    fn clip_line_through_rect_interior() {
        let p = Polygon::rect(0.0, 0.0, 2.0, 1.0);
        let spans = p.clip_line([-1.0, 0.5], [1.0, 0.0]);
        assert_eq!(spans.len(), 1);
        assert!((spans[0].0 - 1.0).abs() < 1e-12);
        assert!((spans[0].1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn clip_line_collinear_with_edge_survives() {
        let p = Polygon::rect(0.0, 0.0, 2.0, 1.0);
        let spans = p.clip_line([0.0, 0.0], [1.0, 0.0]);
        assert_eq!(spans.len(), 1);
        assert!((spans[0].0 - 0.0).abs() < 1e-12);
        assert!((spans[0].1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clip_line_missing_polygon_is_empty() {
        let p = Polygon::rect(0.0, 0.0, 2.0, 1.0);
        assert!(p.clip_line([0.0, 5.0], [1.0, 0.0]).is_empty());
    }

    #[test]
    fn clip_segment_partial_overlap() {
        let p = Polygon::rect(0.0, 0.0, 2.0, 1.0);
        let pieces = p.clip_segment([-1.0, 0.5], [1.0, 0.5]);
        assert_eq!(pieces.len(), 1);
        assert!((pieces[0].0[0] - 0.0).abs() < 1e-12);
        assert!((pieces[0].1[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_line_nonconvex_produces_two_spans() {
        // U-shaped polygon: a horizontal line through the notch crosses twice.
        let p = Polygon::new(vec![
            [0.0, 0.0],
            [3.0, 0.0],
            [3.0, 2.0],
            [2.0, 2.0],
            [2.0, 1.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [0.0, 2.0],
        ])
        .unwrap();
        let spans = p.clip_line([-1.0, 1.5], [1.0, 0.0]);
        assert_eq!(spans.len(), 2);
        assert!((spans[0].0 - 1.0).abs() < 1e-12 && (spans[0].1 - 2.0).abs() < 1e-12);
        assert!((spans[1].0 - 3.0).abs() < 1e-12 && (spans[1].1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn polygon_rejects_clockwise() {
        assert!(Polygon::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).is_err());
    }
}
