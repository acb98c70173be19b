use crate::network::{Network, Point};
use crate::Result;

use super::{Detection, DetectionClass};

const TIE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MatchStatus {
    Matched { link: usize, distance: f64 },
    /// Farther than the buffer from every road segment.
    Unmatched,
    /// Class outside the modelled vehicle classes.
    Dropped,
}

impl MatchStatus {
    pub fn link(&self) -> Option<usize> {
        match self {
            MatchStatus::Matched { link, .. } => Some(*link),
            _ => None,
        }
    }
}

/// Distance from `p` to segment `ab`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

pub fn point_polyline_distance(p: Point, line: &[Point]) -> f64 {
    line.windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Assigns each detection to the nearest road segment (connectors are not
/// candidates) when it lies within `buffer` metres. Ties within 1e-9 m go
/// to the lower link id.
pub fn match_detections(dets: &[Detection], net: &Network, buffer: f64) -> Result<Vec<MatchStatus>> {
    if !(buffer > 0.0 && buffer.is_finite()) {
        return Err(crate::Error::InvalidInput(format!("buffer must be positive, got {buffer}")));
    }
    struct Candidate {
        link: usize,
        id: u32,
        line: Vec<Point>,
        bbox: [f64; 4],
    }
    let mut cands = Vec::new();
    for l in net.segment_indices() {
        let line = net.link_polyline(l)?;
        let bbox = line.iter().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
        );
        cands.push(Candidate {
            link: l,
            id: net.link(l).id,
            line,
            bbox,
        });
    }
    cands.sort_by_key(|c| c.id);
    Ok(dets
        .iter()
        .map(|d| {
            if d.class == DetectionClass::Other {
                return MatchStatus::Dropped;
            }
            let p = [d.x, d.y];
            let mut best: Option<(f64, &Candidate)> = None;
            for c in &cands {
                let b = c.bbox;
                if p[0] < b[0] - buffer || p[0] > b[2] + buffer || p[1] < b[1] - buffer || p[1] > b[3] + buffer {
                    continue;
                }
                let dist = point_polyline_distance(p, &c.line);
                // candidates are visited in id order, so only a strictly
                // closer link replaces the incumbent
                if best.is_none_or(|(bd, _)| dist < bd - TIE_EPS) {
                    best = Some((dist, c));
                }
            }
            match best {
                Some((dist, c)) if dist <= buffer => MatchStatus::Matched {
                    link: c.link,
                    distance: dist,
                },
                _ => MatchStatus::Unmatched,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::toy_network;

    fn det(x: f64, y: f64) -> Detection {
        Detection {
            id: 0,
            x,
            y,
            class: DetectionClass::Car,
            snapshot_id: 0,
            interval: 0,
        }
    }

    #[test]
    fn segment_distance() {
        assert_eq!(point_segment_distance([5.0, 3.0], [0.0, 0.0], [10.0, 0.0]), 3.0);
        assert_eq!(point_segment_distance([13.0, 4.0], [0.0, 0.0], [10.0, 0.0]), 5.0);
    }

    #[test]
    fn near_point_matches_far_point_does_not() {
        let net = toy_network();
        let m = match_detections(&[det(500.0, 2.0), det(500.0, 50.0)], &net, 10.0).unwrap();
        assert_eq!(m[0].link(), net.link_idx(1));
        assert_eq!(m[1], MatchStatus::Unmatched);
    }

    #[test]
    fn tie_goes_to_lower_link_id() {
        // two parallel segments 3 (lower id) and 7, point halfway between them
        use crate::network::{Link, OdPair};
        let mk = |id: u32, from: u32, to: u32| Link {
            id,
            from,
            to,
            length_km: 1.0,
            free_flow_speed: [50.0, 40.0],
            capacity: [2000.0, 1200.0],
            jam_density: [180.0, 80.0],
            allows_parking: false,
            curb_capacity: 0.0,
            is_connector: false,
        };
        let mut net = Network::new(
            vec![mk(7, 1, 2), mk(3, 3, 4)],
            vec![OdPair { origin: 1, destination: 2 }],
        )
        .unwrap();
        net.set_coords(
            [(1, [0.0, 0.0]), (2, [1000.0, 0.0]), (3, [0.0, 10.0]), (4, [1000.0, 10.0])]
                .into_iter()
                .collect(),
        );
        let m = match_detections(&[det(400.0, 5.0 + 0.5e-9)], &net, 15.0).unwrap();
        assert_eq!(m[0].link(), net.link_idx(3));
        let m = match_detections(&[det(400.0, 5.0 - 0.5e-9)], &net, 15.0).unwrap();
        assert_eq!(m[0].link(), net.link_idx(3));
    }

    #[test]
    fn connectors_and_other_class_excluded() {
        let net = toy_network();
        // on connector 10 (101 -> 1) only
        let mut d = det(-200.0, 0.0);
        let m = match_detections(&[d], &net, 10.0).unwrap();
        assert_eq!(m[0], MatchStatus::Unmatched);
        d.x = 500.0;
        d.class = DetectionClass::Other;
        assert_eq!(match_detections(&[d], &net, 10.0).unwrap()[0], MatchStatus::Dropped);
    }

    #[test]
    fn polyline_geometry_is_used() {
        let net = toy_network();
        // on the detour of link 18, far from the straight chord
        let m = match_detections(&[det(5000.0, -798.0)], &net, 10.0).unwrap();
        assert_eq!(m[0].link(), net.link_idx(18));
    }

    #[test]
    fn missing_coordinates_is_an_error() {
        let mut net = toy_network();
        net.set_coords(Default::default());
        assert!(match_detections(&[det(0.0, 0.0)], &net, 10.0).is_err());
    }
}
