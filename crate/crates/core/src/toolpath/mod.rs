//! Scan-path representation and kinematics.
//!
//! A `ScanPath` is an ordered list of straight segments traversed at constant
//! speed. Inter-segment moves are zero-duration jumps; an optional constant
//! dwell can be inserted between segments. `laser_state_at` drives both
//! thermal solvers.

pub mod file;
pub mod pattern;
pub mod shapes;

pub use file::{parse_path_file, write_path_file};
pub use pattern::{generate_pattern, tile_islands, IslandOrdering, PatternKind, PatternSpec};

use crate::error::{Error, Result};
use crate::geom::{dist, P2};

/// Layer outline: a simple counterclockwise polygon.
pub type LayerShape = crate::geom::Polygon;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Hatch,
    Contour,
    /// Repositioning move: deposits no energy and takes no time.
    Travel,
}

impl SegmentKind {
    pub fn name(self) -> &'static str {
        match self {
            SegmentKind::Hatch => "hatch",
            SegmentKind::Contour => "contour",
            SegmentKind::Travel => "travel",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "hatch" => Some(SegmentKind::Hatch),
            "contour" => Some(SegmentKind::Contour),
            "travel" => Some(SegmentKind::Travel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: P2,
    pub end: P2,
    /// Laser power (W). Ignored for travel segments.
    pub power: f64,
    /// Traverse speed (m/s), > 0.
    pub speed: f64,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn new(start: P2, end: P2, power: f64, speed: f64, kind: SegmentKind) -> Result<Self> {
        if !(speed > 0.0) || !speed.is_finite() {
            return Err(Error::InvalidInput(format!("segment speed must be > 0, got {speed}")));
        }
        if !(power >= 0.0) || !power.is_finite() {
            return Err(Error::InvalidInput(format!("segment power must be >= 0, got {power}")));
        }
        if dist(start, end) <= 0.0 {
            return Err(Error::InvalidInput("zero-length segment".into()));
        }
        Ok(Self { start, end, power, speed, kind })
    }

    pub fn length(&self) -> f64 {
        dist(self.start, self.end)
    }

    /// Traversal time; travel moves are instantaneous jumps.
    pub fn duration(&self) -> f64 {
        match self.kind {
            SegmentKind::Travel => 0.0,
            _ => self.length() / self.speed,
        }
    }

    /// Unit direction of traversal.
    pub fn dir(&self) -> P2 {
        let l = self.length();
        [(self.end[0] - self.start[0]) / l, (self.end[1] - self.start[1]) / l]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPath {
    pub segments: Vec<Segment>,
    /// Layer (powder) thickness (m).
    pub layer_thickness: f64,
    /// Nominal hatch spacing (m); drives element widths and mesh sizes.
    pub hatch_space: f64,
    /// Pause inserted between consecutive segments (s). Default 0.
    pub dwell: f64,
}

impl ScanPath {
    pub fn new(segments: Vec<Segment>, layer_thickness: f64, hatch_space: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidInput("no segments".into()));
        }
        if !(layer_thickness > 0.0) {
            return Err(Error::InvalidInput("layer_thickness must be > 0".into()));
        }
        if !(hatch_space > 0.0) {
            return Err(Error::InvalidInput("hatch_space must be > 0".into()));
        }
        Ok(Self { segments, layer_thickness, hatch_space, dwell: 0.0 })
    }

    /// Start/end times of every segment (travel segments occupy an instant).
    pub fn segment_times(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.segments.len());
        let mut t = 0.0;
        for (k, seg) in self.segments.iter().enumerate() {
            let t1 = t + seg.duration();
            out.push((t, t1));
            t = t1;
            if k + 1 < self.segments.len() {
                t += self.dwell;
            }
        }
        out
    }

    /// Total path time: segment durations plus inter-segment dwell.
    pub fn total_time(&self) -> f64 {
        self.segment_times().last().map(|&(_, t1)| t1).unwrap_or(0.0)
    }

    pub fn total_scan_length(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.kind != SegmentKind::Travel)
            .map(Segment::length)
            .sum()
    }

    pub fn bbox(&self) -> [f64; 4] {
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for s in &self.segments {
            for p in [s.start, s.end] {
                bb[0] = bb[0].min(p[0]);
                bb[1] = bb[1].min(p[1]);
                bb[2] = bb[2].max(p[0]);
                bb[3] = bb[3].max(p[1]);
            }
        }
        bb
    }

    /// Laser kinematics at time `t`. Ties at segment junctions resolve to the
    /// later segment; during dwell the beam parks (inactive) at the previous
    /// segment end; past completion it parks at the final endpoint.
    pub fn laser_state_at(&self, t: f64) -> LaserState {
        let mut cursor = 0.0;
        let last = self.segments.len() - 1;
        for (k, seg) in self.segments.iter().enumerate() {
            let dur = seg.duration();
            if t >= cursor && t < cursor + dur {
                let s = (t - cursor) * seg.speed;
                let d = seg.dir();
                return LaserState {
                    pos: [seg.start[0] + d[0] * s, seg.start[1] + d[1] * s],
                    power: seg.power,
                    speed: seg.speed,
                    active: seg.kind != SegmentKind::Travel,
                };
            }
            cursor += dur;
            if k < last {
                if t < cursor + self.dwell {
                    return LaserState { pos: seg.end, power: 0.0, speed: seg.speed, active: false };
                }
                cursor += self.dwell;
            }
        }
        let seg = &self.segments[last];
        LaserState { pos: seg.end, power: 0.0, speed: seg.speed, active: false }
    }

    /// Segment index and arc position of the laser at time `t`, or None when
    /// the beam is off (travel, dwell, before start, past the end). Junction
    /// ties resolve to the later segment, matching `laser_state_at`.
    pub fn locate_at(&self, t: f64) -> Option<(usize, f64)> {
        let mut cursor = 0.0;
        let last = self.segments.len() - 1;
        for (k, seg) in self.segments.iter().enumerate() {
            let dur = seg.duration();
            if t >= cursor && t < cursor + dur {
                if seg.kind == SegmentKind::Travel {
                    return None;
                }
                return Some((k, (t - cursor) * seg.speed));
            }
            cursor += dur;
            if k < last {
                if t < cursor + self.dwell {
                    return None;
                }
                cursor += self.dwell;
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserState {
    pub pos: P2,
    pub power: f64,
    pub speed: f64,
    pub active: bool,
}
