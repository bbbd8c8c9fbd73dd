//! Scanning-pattern catalog: hatch fills, spirals, contours, checkerboards,
//! and island tiling with polygon clipping.

use super::{ScanPath, Segment, SegmentKind};
use crate::error::{Error, Result};
use crate::geom::{Polygon, GEOM_TOL, P2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Unidirectional,
    Alternating,
    SpiralInward,
    SpiralOutward,
    /// Boundary loop first, then an alternating fill.
    ContourPre,
    /// Alternating fill first, then a boundary loop.
    ContourPost,
    /// island_size sub-cells, alternating fill, hatch direction rotated 90
    /// degrees on odd cells.
    Checkerboard,
}

impl PatternKind {
    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "unidirectional" => Self::Unidirectional,
            "alternating" => Self::Alternating,
            "spiral_inward" => Self::SpiralInward,
            "spiral_outward" => Self::SpiralOutward,
            "contour_pre" => Self::ContourPre,
            "contour_post" => Self::ContourPost,
            "checkerboard" => Self::Checkerboard,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IslandOrdering {
    /// Rows bottom to top, each row left to right.
    RowMajor,
    /// Exact reverse of RowMajor.
    Reverse,
    /// Rectangular spiral over the island grid: boundary cells first,
    /// clockwise from the bottom-left cell, then inward.
    Spiral,
}

impl IslandOrdering {
    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "row_major" => Self::RowMajor,
            "reverse" => Self::Reverse,
            "spiral" => Self::Spiral,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PatternSpec {
    pub kind: PatternKind,
    /// Island tile edge length (m).
    pub island_size: f64,
    pub hatch_space: f64,
    /// Base rotation of the hatch direction (deg). Spirals and contours are
    /// axis-aligned regardless.
    pub rotation_deg: f64,
    /// Extra hatch rotation applied per island visit index (deg).
    pub rotation_per_island_deg: f64,
    pub ordering: IslandOrdering,
    pub hatch_power: f64,
    pub hatch_speed: f64,
    pub contour_power: f64,
    pub contour_speed: f64,
    pub layer_thickness: f64,
}

impl PatternSpec {
    /// Table-3-shaped defaults: 2 mm islands, 100 um hatch, 80 W / 1 m/s
    /// hatching, 40 W / 0.25 m/s contours, 40 um layers.
    pub fn new(kind: PatternKind) -> Self {
        Self {
            kind,
            island_size: 2e-3,
            hatch_space: 100e-6,
            rotation_deg: 0.0,
            rotation_per_island_deg: 0.0,
            ordering: IslandOrdering::RowMajor,
            hatch_power: 80.0,
            hatch_speed: 1.0,
            contour_power: 40.0,
            contour_speed: 0.25,
            layer_thickness: 40e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hatch_space > 0.0) {
            return Err(Error::InvalidInput("hatch_space must be > 0".into()));
        }
        if self.island_size < self.hatch_space {
            return Err(Error::InvalidInput("island_size must be >= hatch_space".into()));
        }
        if !(self.hatch_speed > 0.0 && self.contour_speed > 0.0) {
            return Err(Error::InvalidInput("speeds must be > 0".into()));
        }
        if !(self.hatch_power >= 0.0 && self.contour_power >= 0.0) {
            return Err(Error::InvalidInput("powers must be >= 0".into()));
        }
        if !(self.layer_thickness > 0.0) {
            return Err(Error::InvalidInput("layer_thickness must be > 0".into()));
        }
        Ok(())
    }
}

/// Fills `bbox` ([x0, y0, x1, y1]) with the requested pattern.
pub fn generate_pattern(spec: &PatternSpec, bbox: [f64; 4]) -> Result<ScanPath> {
    spec.validate()?;
    check_bbox(bbox)?;
    let segments = pattern_segments(spec, bbox, spec.rotation_deg)?;
    ScanPath::new(segments, spec.layer_thickness, spec.hatch_space)
}

/// Tiles the shape's bounding box with island_size cells, generates the
/// pattern per island (hatch rotation advancing by rotation_per_island_deg per
/// visit), clips every segment to the polygon, and concatenates islands in the
/// requested ordering.
pub fn tile_islands(spec: &PatternSpec, shape: &Polygon) -> Result<ScanPath> {
    spec.validate()?;
    let bb = shape.bbox();
    let s = spec.island_size;
    let nx = (((bb[2] - bb[0]) / s - GEOM_TOL).ceil() as usize).max(1);
    let ny = (((bb[3] - bb[1]) / s - GEOM_TOL).ceil() as usize).max(1);

    let mut segments = Vec::new();
    for (visit, (i, j)) in island_order(nx, ny, spec.ordering).into_iter().enumerate() {
        let x0 = bb[0] + i as f64 * s;
        let y0 = bb[1] + j as f64 * s;
        let cell = [x0, y0, (x0 + s).min(bb[2]), (y0 + s).min(bb[3])];
        if cell[2] - cell[0] <= GEOM_TOL || cell[3] - cell[1] <= GEOM_TOL {
            continue;
        }
        let angle = spec.rotation_deg + visit as f64 * spec.rotation_per_island_deg;
        for seg in pattern_segments(spec, cell, angle)? {
            for (a, b) in shape.clip_segment(seg.start, seg.end) {
                segments.push(Segment { start: a, end: b, ..seg });
            }
        }
    }
    if segments.is_empty() {
        return Err(Error::InvalidInput("pattern does not intersect the layer shape".into()));
    }
    ScanPath::new(segments, spec.layer_thickness, spec.hatch_space)
}

/// Island visit order over an nx x ny cell grid.
pub fn island_order(nx: usize, ny: usize, ordering: IslandOrdering) -> Vec<(usize, usize)> {
    let row_major: Vec<(usize, usize)> =
        (0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).collect();
    match ordering {
        IslandOrdering::RowMajor => row_major,
        IslandOrdering::Reverse => row_major.into_iter().rev().collect(),
        IslandOrdering::Spiral => {
            let mut out = Vec::with_capacity(nx * ny);
            let (mut i0, mut j0) = (0isize, 0isize);
            let (mut i1, mut j1) = (nx as isize - 1, ny as isize - 1);
            while i0 <= i1 && j0 <= j1 {
                for i in i0..=i1 {
                    out.push((i as usize, j0 as usize));
                }
                for j in (j0 + 1)..=j1 {
                    out.push((i1 as usize, j as usize));
                }
                if j1 > j0 {
                    for i in (i0..i1).rev() {
                        out.push((i as usize, j1 as usize));
                    }
                }
                if i1 > i0 {
                    for j in ((j0 + 1)..j1).rev() {
                        out.push((i0 as usize, j as usize));
                    }
                }
                i0 += 1;
                j0 += 1;
                i1 -= 1;
                j1 -= 1;
            }
            out
        }
    }
}

fn check_bbox(bbox: [f64; 4]) -> Result<()> {
    if !(bbox[2] - bbox[0] > GEOM_TOL && bbox[3] - bbox[1] > GEOM_TOL) {
        return Err(Error::InvalidInput("empty bbox".into()));
    }
    Ok(())
}

fn pattern_segments(spec: &PatternSpec, bbox: [f64; 4], angle_deg: f64) -> Result<Vec<Segment>> {
    check_bbox(bbox)?;
    let hatch = |alternating: bool, extra_deg: f64| {
        hatch_fill(bbox, angle_deg + extra_deg, spec.hatch_space, alternating, spec.hatch_power, spec.hatch_speed)
    };
    Ok(match spec.kind {
        PatternKind::Unidirectional => hatch(false, 0.0),
        PatternKind::Alternating => hatch(true, 0.0),
        PatternKind::SpiralInward => spiral_rect(bbox, spec.hatch_space, spec.hatch_power, spec.hatch_speed),
        PatternKind::SpiralOutward => {
            let mut segs = spiral_rect(bbox, spec.hatch_space, spec.hatch_power, spec.hatch_speed);
            segs.reverse();
            for s in &mut segs {
                std::mem::swap(&mut s.start, &mut s.end);
            }
            segs
        }
        PatternKind::ContourPre => {
            let mut segs = contour_loop(bbox, spec.contour_power, spec.contour_speed);
            segs.extend(hatch(true, 0.0));
            segs
        }
        PatternKind::ContourPost => {
            let mut segs = hatch(true, 0.0);
            segs.extend(contour_loop(bbox, spec.contour_power, spec.contour_speed));
            segs
        }
        PatternKind::Checkerboard => {
            let s = spec.island_size;
            let ncx = (((bbox[2] - bbox[0]) / s - GEOM_TOL).ceil() as usize).max(1);
            let ncy = (((bbox[3] - bbox[1]) / s - GEOM_TOL).ceil() as usize).max(1);
            let mut segs = Vec::new();
            for j in 0..ncy {
                for i in 0..ncx {
                    let x0 = bbox[0] + i as f64 * s;
                    let y0 = bbox[1] + j as f64 * s;
                    let cell = [x0, y0, (x0 + s).min(bbox[2]), (y0 + s).min(bbox[3])];
                    if cell[2] - cell[0] <= GEOM_TOL || cell[3] - cell[1] <= GEOM_TOL {
                        continue;
                    }
                    let extra = if (i + j) % 2 == 1 { 90.0 } else { 0.0 };
                    segs.extend(hatch_fill(
                        cell,
                        angle_deg + extra,
                        spec.hatch_space,
                        true,
                        spec.hatch_power,
                        spec.hatch_speed,
                    ));
                }
            }
            segs
        }
    })
}

/// Parallel hatch lines at the given angle, spaced hatch apart, anchored at
/// the lowest corner so boundary lines are included: floor(span/hatch)+1 lines.
fn hatch_fill(
    bbox: [f64; 4],
    angle_deg: f64,
    hatch: f64,
    alternating: bool,
    power: f64,
    speed: f64,
) -> Vec<Segment> {
    let rect = Polygon::rect(bbox[0], bbox[1], bbox[2], bbox[3]);
    let dir = unit_dir(angle_deg);
    let nrm = [-dir[1], dir[0]];
    let reference: P2 = [bbox[0], bbox[1]];

    let mut c_min = f64::INFINITY;
    let mut c_max = f64::NEG_INFINITY;
    for v in rect.vertices() {
        let c = nrm[0] * (v[0] - reference[0]) + nrm[1] * (v[1] - reference[1]);
        c_min = c_min.min(c);
        c_max = c_max.max(c);
    }
    // Lines sit half a hatch in from the boundary so a fill never lands on
    // top of a contour pass (coincident tracks would collapse the thermal
    // stability limit) and line centers match cell centers downstream.
    let count = ((c_max - c_min) / hatch + 1e-9).floor().max(1.0) as usize;

    let mut segments = Vec::new();
    for k in 0..count {
        let c = c_min + (k as f64 + 0.5) * hatch;
        let origin = [reference[0] + nrm[0] * c, reference[1] + nrm[1] * c];
        let mut spans = rect.clip_line(origin, dir);
        let reversed = alternating && k % 2 == 1;
        if reversed {
            spans.reverse();
        }
        for (t0, t1) in spans {
            let p = |t: f64| [origin[0] + dir[0] * t, origin[1] + dir[1] * t];
            let (a, b) = if reversed { (p(t1), p(t0)) } else { (p(t0), p(t1)) };
            if let Ok(seg) = Segment::new(a, b, power, speed, SegmentKind::Hatch) {
                segments.push(seg);
            }
        }
    }
    segments
}

/// Hatch direction for an angle in degrees, snapped exactly onto the axes for
/// multiples of 90 so axis-aligned patterns carry no trig round-off.
fn unit_dir(angle_deg: f64) -> P2 {
    let a = angle_deg.rem_euclid(360.0);
    for (deg, d) in [
        (0.0, [1.0, 0.0]),
        (90.0, [0.0, 1.0]),
        (180.0, [-1.0, 0.0]),
        (270.0, [0.0, -1.0]),
        (360.0, [1.0, 0.0]),
    ] {
        if (a - deg).abs() < 1e-9 {
            return d;
        }
    }
    let t = angle_deg.to_radians();
    [t.cos(), t.sin()]
}

/// Axis-aligned rectangular spiral from the boundary inward, pitch = hatch.
/// The final pass is a single center line once the remaining rectangle is
/// thinner than one pitch, so the last scanned point lands near the center.
fn spiral_rect(bbox: [f64; 4], hatch: f64, power: f64, speed: f64) -> Vec<Segment> {
    let (mut x0, mut y0, mut x1, mut y1) = (bbox[0], bbox[1], bbox[2], bbox[3]);
    let mut segs: Vec<Segment> = Vec::new();
    let mut push = |a: P2, b: P2| {
        if let Ok(s) = Segment::new(a, b, power, speed, SegmentKind::Hatch) {
            segs.push(s);
        }
    };
    loop {
        let (w, h) = (x1 - x0, y1 - y0);
        if w < hatch - GEOM_TOL || h < hatch - GEOM_TOL {
            // Thin remainder: one center line along the long axis.
            if w >= h && w > GEOM_TOL {
                let ym = 0.5 * (y0 + y1);
                push([x0, ym], [x1, ym]);
            } else if h > GEOM_TOL {
                let xm = 0.5 * (x0 + x1);
                push([xm, y0], [xm, y1]);
            }
            break;
        }
        push([x0, y0], [x1, y0]);
        push([x1, y0], [x1, y1]);
        push([x1, y1], [x0, y1]);
        // Stop the left leg one pitch short so the next loop doesn't overlap.
        if y1 - hatch > y0 + GEOM_TOL {
            push([x0, y1], [x0, y0 + hatch]);
        }
        x0 += hatch;
        y0 += hatch;
        x1 -= hatch;
        y1 -= hatch;
        if x1 - x0 <= GEOM_TOL && y1 - y0 <= GEOM_TOL {
            break;
        }
    }
    segs
}

/// Counterclockwise boundary loop starting at the lower-left corner.
fn contour_loop(bbox: [f64; 4], power: f64, speed: f64) -> Vec<Segment> {
    let [x0, y0, x1, y1] = bbox;
    [
        ([x0, y0], [x1, y0]),
        ([x1, y0], [x1, y1]),
        ([x1, y1], [x0, y1]),
        ([x0, y1], [x0, y0]),
    ]
    .into_iter()
    .filter_map(|(a, b)| Segment::new(a, b, power, speed, SegmentKind::Contour).ok())
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::dist;

    fn spec(kind: PatternKind) -> PatternSpec {
        PatternSpec::new(kind)
    }

    #[test]
    fn unidirectional_line_count_and_direction() {
        let p = generate_pattern(&spec(PatternKind::Unidirectional), [0.0, 0.0, 2e-3, 2e-3]).unwrap();
        assert_eq!(p.segments.len(), 20);
        for (k, s) in p.segments.iter().enumerate() {
            assert!((s.dir()[0] - 1.0).abs() < 1e-12);
            assert!((s.length() - 2e-3).abs() < 1e-12);
            // Half-hatch inset keeps every line off the bbox boundary.
            let y = s.start[1];
            assert!((y - (k as f64 + 0.5) * 100e-6).abs() < 1e-12, "line {k} at y={y}");
        }
    }

    #[test]
    fn alternating_reverses_consecutive_lines() {
        let p = generate_pattern(&spec(PatternKind::Alternating), [0.0, 0.0, 2e-3, 2e-3]).unwrap();
        assert_eq!(p.segments.len(), 20);
        for (k, s) in p.segments.iter().enumerate() {
            let want = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!((s.dir()[0] - want).abs() < 1e-12, "line {k}");
        }
    }

    #[test]
    fn spiral_inward_ends_near_center() {
        let p = generate_pattern(&spec(PatternKind::SpiralInward), [0.0, 0.0, 2e-3, 2e-3]).unwrap();
        let last = p.segments.last().unwrap().end;
        let d = dist(last, [1e-3, 1e-3]);
        assert!(d <= 100e-6 + 1e-12, "last point {last:?} is {d} from center");
    }

    #[test]
    fn spiral_outward_is_reversed_inward() {
        let inward = generate_pattern(&spec(PatternKind::SpiralInward), [0.0, 0.0, 2e-3, 2e-3]).unwrap();
        let outward = generate_pattern(&spec(PatternKind::SpiralOutward), [0.0, 0.0, 2e-3, 2e-3]).unwrap();
        assert_eq!(inward.segments.len(), outward.segments.len());
        let n = inward.segments.len();
        for k in 0..n {
            assert_eq!(inward.segments[k].start, outward.segments[n - 1 - k].end);
            assert_eq!(inward.segments[k].end, outward.segments[n - 1 - k].start);
        }
    }

    #[test]
    fn contour_kinds_wrap_fill() {
        let pre = generate_pattern(&spec(PatternKind::ContourPre), [0.0, 0.0, 2e-3, 2e-3]).unwrap();
        assert_eq!(pre.segments[0].kind, SegmentKind::Contour);
        assert_eq!(pre.segments.last().unwrap().kind, SegmentKind::Hatch);
        let post = generate_pattern(&spec(PatternKind::ContourPost), [0.0, 0.0, 2e-3, 2e-3]).unwrap();
        assert_eq!(post.segments[0].kind, SegmentKind::Hatch);
        assert_eq!(post.segments.last().unwrap().kind, SegmentKind::Contour);
        assert_eq!(pre.segments.iter().filter(|s| s.kind == SegmentKind::Contour).count(), 4);
    }

    #[test]
    fn island_order_reverse_is_exact_reverse() {
        let fwd = island_order(4, 5, IslandOrdering::RowMajor);
        let mut rev = island_order(4, 5, IslandOrdering::Reverse);
        rev.reverse();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn island_order_spiral_visits_every_cell_once() {
        for (nx, ny) in [(1, 1), (3, 1), (4, 5), (5, 4)] {
            let order = island_order(nx, ny, IslandOrdering::Spiral);
            assert_eq!(order.len(), nx * ny, "{nx}x{ny}");
            let mut seen = std::collections::BTreeSet::new();
            for c in &order {
                assert!(seen.insert(*c), "duplicate {c:?} in {nx}x{ny}");
            }
            assert_eq!(order[0], (0, 0));
        }
    }

    #[test]
    fn tile_on_exact_island_matches_generate() {
        let shape = Polygon::rect(0.0, 0.0, 2e-3, 2e-3);
        let sp = spec(PatternKind::Alternating);
        let tiled = tile_islands(&sp, &shape).unwrap();
        let plain = generate_pattern(&sp, [0.0, 0.0, 2e-3, 2e-3]).unwrap();
        assert_eq!(tiled.segments.len(), plain.segments.len());
        for (a, b) in tiled.segments.iter().zip(&plain.segments) {
            assert!(dist(a.start, b.start) < 1e-12);
            assert!(dist(a.end, b.end) < 1e-12);
        }
    }

    #[test]
    fn tile_islands_endpoints_stay_inside_shape() {
        let shape = super::super::shapes::crescent_moon(8e-3, 10e-3, 48).unwrap();
        let mut sp = spec(PatternKind::Alternating);
        sp.island_size = 2e-3;
        let path = tile_islands(&sp, &shape).unwrap();
        assert!(path.segments.len() > 50);
        for s in &path.segments {
            let mid = [0.5 * (s.start[0] + s.end[0]), 0.5 * (s.start[1] + s.end[1])];
            for p in [s.start, s.end, mid] {
                assert!(shape.contains(p, 1e-7), "point {p:?} escaped the shape");
            }
        }
    }

    #[test]
    fn tile_islands_rejects_vanishing_intersection() {
        // Apex-down triangle smaller than one hatch pitch: the only hatch line
        // through its bbox grazes the apex, so clipping leaves nothing.
        let shape = Polygon::new(vec![[1.5e-5, 0.0], [3e-5, 4e-5], [0.0, 4e-5]]).unwrap();
        let mut sp = spec(PatternKind::Unidirectional);
        sp.island_size = 2e-3;
        sp.hatch_space = 1e-3;
        assert!(tile_islands(&sp, &shape).is_err());
    }

    #[test]
    fn checkerboard_alternates_hatch_axis() {
        let mut sp = spec(PatternKind::Checkerboard);
        sp.island_size = 1e-3;
        let p = generate_pattern(&sp, [0.0, 0.0, 2e-3, 2e-3]).unwrap();
        let horiz = p.segments.iter().filter(|s| s.dir()[1].abs() < 1e-12).count();
        let vert = p.segments.iter().filter(|s| s.dir()[0].abs() < 1e-12).count();
        assert_eq!(horiz + vert, p.segments.len());
        assert!(horiz > 0 && vert > 0);
    }
}
