//! Path file reader/writer.
//!
//! Format: `#` comments; header lines `layer_thickness <m>`, `hatch_space <m>`,
//! optional `dwell <s>`; body lines `x0 y0 x1 y1 power speed kind` in SI units.
//! The writer emits the identical format and floats round-trip exactly
//! (shortest-exact decimal representation).

use super::{ScanPath, Segment, SegmentKind};
use crate::error::{Error, Result};

pub fn parse_path_file(text: &str) -> Result<ScanPath> {
    let mut layer_thickness: Option<f64> = None;
    let mut hatch_space: Option<f64> = None;
    let mut dwell = 0.0;
    let mut segments = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => raw[..i].trim(),
            None => raw.trim(),
        };
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [key, val] => {
                let v = num(val, idx)?;
                match *key {
                    "layer_thickness" => layer_thickness = Some(v),
                    "hatch_space" => hatch_space = Some(v),
                    "dwell" => dwell = v,
                    other => return Err(perr(idx, &format!("unknown header key {other}"))),
                }
            }
            [x0, y0, x1, y1, power, speed, kind] => {
                let kind = SegmentKind::from_name(kind)
                    .ok_or_else(|| perr(idx, &format!("unknown segment kind {kind}")))?;
                let seg = Segment::new(
                    [num(x0, idx)?, num(y0, idx)?],
                    [num(x1, idx)?, num(y1, idx)?],
                    num(power, idx)?,
                    num(speed, idx)?,
                    kind,
                )
                .map_err(|e| perr(idx, &e.to_string()))?;
                segments.push(seg);
            }
            _ => return Err(perr(idx, "expected `key value` or `x0 y0 x1 y1 power speed kind`")),
        }
    }

    if segments.is_empty() {
        return Err(Error::InvalidInput("no segments".into()));
    }
    let layer_thickness =
        layer_thickness.ok_or_else(|| Error::InvalidInput("missing layer_thickness header".into()))?;
    let hatch_space =
        hatch_space.ok_or_else(|| Error::InvalidInput("missing hatch_space header".into()))?;
    let mut path = ScanPath::new(segments, layer_thickness, hatch_space)?;
    if !(dwell >= 0.0) {
        return Err(Error::InvalidInput("dwell must be >= 0".into()));
    }
    path.dwell = dwell;
    Ok(path)
}

pub fn write_path_file(path: &ScanPath) -> String {
    let mut out = String::new();
    out.push_str(&format!("layer_thickness {}\n", path.layer_thickness));
    out.push_str(&format!("hatch_space {}\n", path.hatch_space));
    if path.dwell != 0.0 {
        out.push_str(&format!("dwell {}\n", path.dwell));
    }
    for s in &path.segments {
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            s.start[0],
            s.start[1],
            s.end[0],
            s.end[1],
            s.power,
            s.speed,
            s.kind.name()
        ));
    }
    out
}

fn perr(idx: usize, msg: &str) -> Error {
    Error::Parse { line: idx + 1, msg: msg.to_string() }
}

fn num(tok: &str, idx: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| perr(idx, &format!("bad number `{tok}`")))
}
