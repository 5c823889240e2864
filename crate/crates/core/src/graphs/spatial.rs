//! Geometric relation between two boxes.

use std::fmt;
use std::str::FromStr;

use crate::corpus::BBox;
use crate::error::{GogError, Result};

/// tan(22.5°), the octant boundary slope.
const OCTANT_SLOPE: f64 = std::f64::consts::SQRT_2 - 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpatialRelation {
    Inside,
    Cover,
    Overlap,
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl SpatialRelation {
    pub const ALL: [SpatialRelation; 11] = [
        SpatialRelation::Inside,
        SpatialRelation::Cover,
        SpatialRelation::Overlap,
        SpatialRelation::N,
        SpatialRelation::NE,
        SpatialRelation::E,
        SpatialRelation::SE,
        SpatialRelation::S,
        SpatialRelation::SW,
        SpatialRelation::W,
        SpatialRelation::NW,
    ];

    /// Graph label id; 0 is reserved for self-loops.
    pub fn label_id(self) -> usize {
        1 + SpatialRelation::ALL.iter().position(|&r| r == self).expect("relation in ALL")
    }

    pub fn converse(self) -> SpatialRelation {
        use SpatialRelation::*;
        match self {
            Inside => Cover,
            Cover => Inside,
            Overlap => Overlap,
            N => S,
            S => N,
            NE => SW,
            SW => NE,
            E => W,
            W => E,
            SE => NW,
            NW => SE,
        }
    }

    pub fn name(self) -> &'static str {
        use SpatialRelation::*;
        match self {
            Inside => "inside",
            Cover => "cover",
            Overlap => "overlap",
            N => "n",
            NE => "ne",
            E => "e",
            SE => "se",
            S => "s",
            SW => "sw",
            W => "w",
            NW => "nw",
        }
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialThresholds {
    /// Minimum IoU for `overlap`.
    pub iou: f64,
    /// Maximum center distance, as a fraction of the image diagonal.
    pub dist: f64,
}

impl Default for SpatialThresholds {
    fn default() -> Self {
        SpatialThresholds { iou: 0.3, dist: 0.5 }
    }
}

impl FromStr for SpatialThresholds {
    type Err = GogError;

    /// Parses `iou=0.3,dist=0.5`; either key may be omitted.
    fn from_str(s: &str) -> Result<Self> {
        let mut t = SpatialThresholds::default();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| GogError::Config(format!("threshold `{part}` is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| GogError::Config(format!("threshold `{part}` has a non-numeric value")))?;
            match k.trim() {
                "iou" => t.iou = v,
                "dist" => t.dist = v,
                other => return Err(GogError::Config(format!("unknown threshold `{other}`"))),
            }
        }
        if !(t.iou > 0.0 && t.iou <= 1.0 && t.dist > 0.0) {
            return Err(GogError::Config(format!(
                "thresholds out of range: iou={} dist={}",
                t.iou, t.dist
            )));
        }
        Ok(t)
    }
}

/// Precomputed geometry of one box.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BoxGeom {
    b: [f64; 4],
    area: f64,
    cx: f64,
    cy: f64,
}

impl BoxGeom {
    pub(crate) fn new(b: &BBox) -> Result<Self> {
        b.validate()?;
        let (cx, cy) = b.center();
        Ok(BoxGeom {
            b: b.0,
            area: b.area(),
            cx,
            cy,
        })
    }
}

fn contains(outer: &[f64; 4], inner: &[f64; 4]) -> bool {
    outer[0] <= inner[0] && outer[1] <= inner[1] && inner[2] <= outer[2] && inner[3] <= outer[3]
}

/// Octant of the offset `(dx, dy)` with y pointing down and N meaning up.
/// Depends on `|dx|`, `|dy|` and the signs only, so negating the offset
/// yields the exact converse.
fn octant(dx: f64, dy: f64) -> SpatialRelation {
    use SpatialRelation::*;
    let (ax, ay) = (dx.abs(), dy.abs());
    if ax <= OCTANT_SLOPE * ay {
        if dy < 0.0 {
            N
        } else {
            S
        }
    } else if ay <= OCTANT_SLOPE * ax {
        if dx > 0.0 {
            E
        } else {
            W
        }
    } else {
        match (dy < 0.0, dx > 0.0) {
            (true, true) => NE,
            (true, false) => NW,
            (false, true) => SE,
            (false, false) => SW,
        }
    }
}

pub(crate) fn classify_geom(
    a: &BoxGeom,
    b: &BoxGeom,
    thresholds: SpatialThresholds,
    diagonal: f64,
) -> Option<SpatialRelation> {
    if a.b != b.b {
        if contains(&a.b, &b.b) {
            return Some(SpatialRelation::Cover);
        }
        if contains(&b.b, &a.b) {
            return Some(SpatialRelation::Inside);
        }
    }
    let iw = a.b[2].min(b.b[2]) - a.b[0].max(b.b[0]);
    let ih = a.b[3].min(b.b[3]) - a.b[1].max(b.b[1]);
    let inter = if iw > 0.0 && ih > 0.0 { iw * ih } else { 0.0 };
    let iou = inter / (a.area + b.area - inter);
    if iou >= thresholds.iou {
        return Some(SpatialRelation::Overlap);
    }
    let (dx, dy) = (b.cx - a.cx, b.cy - a.cy);
    if dx == 0.0 && dy == 0.0 {
        return Some(SpatialRelation::Overlap);
    }
    if dx.hypot(dy) / diagonal <= thresholds.dist {
        Some(octant(dx, dy))
    } else {
        None
    }
}

/// Relation of `b` as seen from `a`, or `None` when the pair is pruned.
///
/// Cascade: containment (`cover` when `b` lies within `a`, `inside` for the
/// reverse, identical boxes excluded), then IoU against `thresholds.iou`,
/// then the center-to-center octant if the center distance divided by
/// `diagonal` is within `thresholds.dist`. Boxes sharing a center but
/// failing the IoU test count as `overlap`.
pub fn classify_spatial_relation(
    a: &BBox,
    b: &BBox,
    thresholds: SpatialThresholds,
    diagonal: f64,
) -> Result<Option<SpatialRelation>> {
    Ok(classify_geom(&BoxGeom::new(a)?, &BoxGeom::new(b)?, thresholds, diagonal))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn rel(a: BBox, b: BBox, t: SpatialThresholds, diag: f64) -> Option<SpatialRelation> {
        classify_spatial_relation(&a, &b, t, diag).unwrap()
    }

    #[test]
    fn containment_pair() {
        let (a, b) = (bx(0.0, 0.0, 10.0, 10.0), bx(2.0, 2.0, 5.0, 5.0));
        let t = SpatialThresholds::default();
        assert_eq!(rel(a, b, t, 100.0), Some(SpatialRelation::Cover));
        assert_eq!(rel(b, a, t, 100.0), Some(SpatialRelation::Inside));
    }

    #[test]
    fn third_iou_overlaps_at_point_three() {
        let (a, b) = (bx(0.0, 0.0, 4.0, 4.0), bx(2.0, 0.0, 6.0, 4.0));
        let t = SpatialThresholds { iou: 0.3, dist: 0.5 };
        assert_eq!(rel(a, b, t, 100.0), Some(SpatialRelation::Overlap));
        let strict = SpatialThresholds { iou: 0.34, dist: 0.5 };
        assert_eq!(rel(a, b, strict, 100.0), Some(SpatialRelation::E));
    }

    #[test]
    fn far_apart_is_pruned() {
        let (a, b) = (bx(0.0, 0.0, 2.0, 2.0), bx(100.0, 100.0, 102.0, 102.0));
        assert_eq!(rel(a, b, SpatialThresholds::default(), 128.0), None);
    }

    #[test]
    fn octants_follow_screen_orientation() {
        let t = SpatialThresholds { iou: 0.3, dist: 1.0 };
        let a = bx(10.0, 10.0, 12.0, 12.0);
        let up = bx(10.0, 0.0, 12.0, 2.0);
        let up_right = bx(20.0, 0.0, 22.0, 2.0);
        assert_eq!(rel(a, up, t, 100.0), Some(SpatialRelation::N));
        assert_eq!(rel(a, up_right, t, 100.0), Some(SpatialRelation::NE));
        assert_eq!(rel(up_right, a, t, 100.0), Some(SpatialRelation::SW));
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let bad = BBox([3.0, 0.0, 1.0, 2.0]);
        let ok = bx(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            classify_spatial_relation(&bad, &ok, SpatialThresholds::default(), 10.0),
            Err(GogError::Validation(_))
        ));
    }

    #[test]
    fn threshold_flag_parsing() {
        let t: SpatialThresholds = "iou=0.4,dist=0.25".parse().unwrap();
        assert_eq!(t, SpatialThresholds { iou: 0.4, dist: 0.25 });
        assert!("iou=abc".parse::<SpatialThresholds>().is_err());
        assert!("speed=1".parse::<SpatialThresholds>().is_err());
    }

    #[test]
    fn converses_are_involutions() {
        for r in SpatialRelation::ALL {
            assert_eq!(r.converse().converse(), r);
        }
    }
}
