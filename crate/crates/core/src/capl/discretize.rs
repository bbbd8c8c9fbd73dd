//! Path-aligned discretization: scan segments are chopped into box elements,
//! powder regions are filled with fictitious elements, and a contact graph
//! connects every pair of overlapping or abutting boxes.

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Polygon, P2};
use crate::toolpath::{ScanPath, SegmentKind};

/// One lumped element: a box of footprint length x width aligned with its
/// sub-path, height equal to the layer thickness.
#[derive(Debug, Clone)]
pub struct PathElement {
    pub id: usize,
    /// Parent segment index and covered arc span; None for fictitious
    /// (powder) elements.
    pub sub_path: Option<(usize, f64, f64)>,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub centroid: P2,
    /// Unit scan direction; fictitious elements use +x.
    pub dir: P2,
    pub is_fictitious: bool,
}

impl PathElement {
    /// Footprint area (m^2), used for the top/bottom exchange surfaces.
    pub fn footprint(&self) -> f64 {
        self.length * self.width
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    fn half_diagonal(&self) -> f64 {
        0.5 * (self.length * self.length + self.width * self.width).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContactEdge {
    pub a: usize,
    pub b: usize,
    /// Estimated shared face area (m^2).
    pub area: f64,
    /// Conduction gap: centroid distance (m).
    pub gap: f64,
}

/// Undirected contact graph over the element boxes.
#[derive(Debug, Clone, Default)]
pub struct ContactGraph {
    pub edges: Vec<ContactEdge>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl ContactGraph {
    pub fn new(n_elems: usize, edges: Vec<ContactEdge>) -> Self {
        let mut adjacency = vec![Vec::new(); n_elems];
        for (k, e) in edges.iter().enumerate() {
            adjacency[e.a].push((e.b, k));
            adjacency[e.b].push((e.a, k));
        }
        Self { edges, adjacency }
    }

    /// Neighbors of `i` as (other element, edge index) pairs.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }
}

/// Splits every scanning segment into elements of ~`target_length`, assigns
/// Voronoi-style widths, fills the remaining domain with powder elements and
/// builds the contact graph.
pub fn discretize(
    path: &ScanPath,
    domain: Option<&Polygon>,
    target_length: f64,
) -> Result<(Vec<PathElement>, ContactGraph)> {
    if !(target_length > 0.0) {
        return Err(Error::InvalidInput("target_length must be > 0".into()));
    }
    let hatch = path.hatch_space;
    let height = path.layer_thickness;

    // Junction-sharing map: segments connected end-to-end (contours, spirals)
    // are excluded from each other's width search, parallel hatch lines are
    // not.
    let scan_segs: Vec<usize> = path
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind != SegmentKind::Travel)
        .map(|(k, _)| k)
        .collect();
    let tol = 1e-9;
    let shares_endpoint = |i: usize, j: usize| -> bool {
        let (a, b) = (&path.segments[i], &path.segments[j]);
        for p in [a.start, a.end] {
            for q in [b.start, b.end] {
                if (p[0] - q[0]).abs() <= tol && (p[1] - q[1]).abs() <= tol {
                    return true;
                }
            }
        }
        false
    };

    let mut elements: Vec<PathElement> = Vec::new();
    for &si in &scan_segs {
        let seg = &path.segments[si];
        let len = seg.length();
        let d = seg.dir();
        // ceil with a guard so a length of n*target + roundoff does not
        // produce a sliver piece.
        let n = ((len / target_length) - 1e-9).ceil().max(1.0) as usize;
        for k in 0..n {
            let s0 = k as f64 * target_length;
            let s1 = if k + 1 == n { len } else { (k + 1) as f64 * target_length };
            let mid = 0.5 * (s0 + s1);
            elements.push(PathElement {
                id: elements.len(),
                sub_path: Some((si, s0, s1)),
                length: s1 - s0,
                width: hatch, // provisional; replaced by the Voronoi pass
                height,
                centroid: [seg.start[0] + d[0] * mid, seg.start[1] + d[1] * mid],
                dir: d,
                is_fictitious: false,
            });
        }
    }
    if elements.is_empty() {
        return Err(Error::InvalidInput("path has no scanning segments".into()));
    }

    // Width pass: sampled nearest-polyline distance at the element midpoint,
    // skipping the parent segment and anything junction-connected to it.
    let n_real = elements.len();
    for e in elements.iter_mut() {
        let parent = e.sub_path.unwrap().0;
        let mut best = f64::INFINITY;
        for &sj in &scan_segs {
            if sj == parent || shares_endpoint(parent, sj) {
                continue;
            }
            let s = &path.segments[sj];
            let d = point_segment_distance(e.centroid, s.start, s.end);
            if d < best {
                best = d;
            }
        }
        e.width = best.clamp(0.5 * hatch, 2.0 * hatch);
    }

    // Fictitious fill: hatch-sized grid cells inside the domain but farther
    // than one hatch space from every scanning segment.
    let bb = match domain {
        Some(p) => p.bbox(),
        None => path.bbox(),
    };
    let nx = (((bb[2] - bb[0]) / hatch) - 1e-9).ceil().max(0.0) as usize;
    let ny = (((bb[3] - bb[1]) / hatch) - 1e-9).ceil().max(0.0) as usize;
    for cy in 0..ny {
        for cx in 0..nx {
            let c = [
                bb[0] + (cx as f64 + 0.5) * hatch,
                bb[1] + (cy as f64 + 0.5) * hatch,
            ];
            if let Some(p) = domain {
                if !p.contains(c, 1e-9) {
                    continue;
                }
            }
            let mut near = false;
            for &sj in &scan_segs {
                let s = &path.segments[sj];
                if point_segment_distance(c, s.start, s.end) <= hatch {
                    near = true;
                    break;
                }
            }
            if !near {
                elements.push(PathElement {
                    id: elements.len(),
                    sub_path: None,
                    length: hatch,
                    width: hatch,
                    height,
                    centroid: c,
                    dir: [1.0, 0.0],
                    is_fictitious: true,
                });
            }
        }
    }
    let _ = n_real;

    let graph = build_contact_graph(&elements, hatch);
    Ok((elements, graph))
}

/// Projected half-extent of an element's footprint onto a unit axis.
#[inline]
fn half_extent(e: &PathElement, u: P2) -> f64 {
    let along = e.dir[0] * u[0] + e.dir[1] * u[1];
    let across = -e.dir[1] * u[0] + e.dir[0] * u[1];
    0.5 * e.length * along.abs() + 0.5 * e.width * across.abs()
}

/// Separating-axis contact test between two footprint rectangles. Returns
/// the estimated shared face length when they overlap or abut within `tol`.
fn contact_face_length(a: &PathElement, b: &PathElement, tol: f64) -> Option<f64> {
    let d = [b.centroid[0] - a.centroid[0], b.centroid[1] - a.centroid[1]];
    let axes = [
        a.dir,
        [-a.dir[1], a.dir[0]],
        b.dir,
        [-b.dir[1], b.dir[0]],
    ];
    let mut min_overlap = f64::INFINITY;
    let mut normal = axes[0];
    for u in axes {
        let overlap = half_extent(a, u) + half_extent(b, u) - (d[0] * u[0] + d[1] * u[1]).abs();
        if overlap < -tol {
            return None;
        }
        if overlap < min_overlap {
            min_overlap = overlap;
            normal = u;
        }
    }
    // Face runs perpendicular to the tightest axis; its length is the overlap
    // along that perpendicular, clamped to the smaller box.
    let v = [-normal[1], normal[0]];
    let overlap_v = half_extent(a, v) + half_extent(b, v) - (d[0] * v[0] + d[1] * v[1]).abs();
    let cap = a.length.max(a.width).min(b.length.max(b.width));
    let len = overlap_v.min(cap);
    if len > 1e-12 {
        Some(len)
    } else {
        None
    }
}

/// All-pairs contact search through a uniform spatial hash.
fn build_contact_graph(elements: &[PathElement], hatch: f64) -> ContactGraph {
    // Half a hatch space of slack bridges the powder fill's quantization gap
    // around the real path without connecting next-nearest hatch lines.
    let tol = 0.5 * hatch;
    let cell = 4.0 * hatch;
    let mut bins: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    let key = |p: P2| -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    };
    for e in elements {
        bins.entry(key(e.centroid)).or_default().push(e.id);
    }
    let mut edges = Vec::new();
    for a in elements {
        let (kx, ky) = key(a.centroid);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(ids) = bins.get(&(kx + dx, ky + dy)) else { continue };
                for &j in ids {
                    if j <= a.id {
                        continue;
                    }
                    let b = &elements[j];
                    let gap = ((b.centroid[0] - a.centroid[0]).powi(2)
                        + (b.centroid[1] - a.centroid[1]).powi(2))
                    .sqrt();
                    if gap > a.half_diagonal() + b.half_diagonal() + tol {
                        continue;
                    }
                    if let Some(face) = contact_face_length(a, b, tol) {
                        // Overlapping boxes (re-melt passes) still conduct
                        // over about half an element, not a point contact;
                        // flooring the gap keeps the stability limit sane.
                        let floor = 0.5 * a.length.min(a.width).min(b.length.min(b.width));
                        edges.push(ContactEdge {
                            a: a.id,
                            b: j,
                            area: face * a.height.min(b.height),
                            gap: gap.max(floor),
                        });
                    }
                }
            }
        }
    }
    edges.sort_by(|x, y| (x.a, x.b).cmp(&(y.a, y.b)));
    ContactGraph::new(elements.len(), edges)
}
