//! Polygon geometry for tumor annotations: simplicity checks, exact
//! rectangle clipping (Sutherland-Hodgman) with shoelace areas, and an exact
//! union-area path for cells covered by several overlapping polygons.

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// Simple polygon in tile-grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    points: Vec<Point>,
}

impl Polygon {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::invalid("polygon needs at least 3 vertices"));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("polygon has non-finite vertices"));
        }
        let poly = Polygon { points };
        if !poly.is_simple() {
            return Err(Error::invalid("polygon is self-intersecting"));
        }
        Ok(poly)
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Polygon::new(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn area(&self) -> f64 {
        shoelace(&self.points).abs()
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.points {
            lo.0 = lo.0.min(x);
            lo.1 = lo.1.min(y);
            hi.0 = hi.0.max(x);
            hi.1 = hi.1.max(y);
        }
        (lo.0, lo.1, hi.0, hi.1)
    }

    /// No two non-adjacent edges intersect or touch.
    fn is_simple(&self) -> bool {
        let n = self.points.len();
        for i in 0..n {
            let a1 = self.points[i];
            let a2 = self.points[(i + 1) % n];
            for j in i + 1..n {
                // skip adjacent edges (shared vertex) including the wrap-around pair
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let b1 = self.points[j];
                let b2 = self.points[(j + 1) % n];
                if segments_intersect(a1, a2, b1, b2) {
                    return false;
                }
            }
        }
        true
    }

    /// Horizontal cross-section at `y`: sorted even-odd x-intervals.
    fn intervals_at(&self, y: f64) -> Vec<(f64, f64)> {
        let n = self.points.len();
        let mut xs = Vec::new();
        for i in 0..n {
            let (x1, y1) = self.points[i];
            let (x2, y2) = self.points[(i + 1) % n];
            if (y1 > y) != (y2 > y) {
                xs.push(x1 + (y - y1) * (x2 - x1) / (y2 - y1));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.chunks_exact(2).map(|c| (c[0], c[1])).collect()
    }
}

pub(crate) fn shoelace(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x1, y1) = points[i];
        let (x2, y2) = points[(i + 1) % n];
        acc += x1 * y2 - x2 * y1;
    }
    acc / 2.0
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(p: Point, q: Point, r: Point) -> bool {
    q.0 >= p.0.min(r.0) && q.0 <= p.0.max(r.0) && q.1 >= p.1.min(r.1) && q.1 <= p.1.max(r.1)
}

/// Inclusive segment intersection (touching counts).
fn segments_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool {
    let d1 = cross(p3, p4, p1);
    let d2 = cross(p3, p4, p2);
    let d3 = cross(p1, p2, p3);
    let d4 = cross(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p3, p1, p4))
        || (d2 == 0.0 && on_segment(p3, p2, p4))
        || (d3 == 0.0 && on_segment(p1, p3, p2))
        || (d4 == 0.0 && on_segment(p1, p4, p2))
}

/// Sutherland-Hodgman clip of a polygon against the axis-aligned rectangle
/// [x0, x1] x [y0, y1]. The clip window is convex, so the result's shoelace
/// area equals the exact intersection area for a simple subject polygon.
pub fn clip_to_rect(points: &[Point], x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point> {
    #[derive(Clone, Copy)]
    enum Edge {
        Left(f64),
        Right(f64),
        Bottom(f64),
        Top(f64),
    }
    let inside = |e: Edge, p: Point| match e {
        Edge::Left(x) => p.0 >= x,
        Edge::Right(x) => p.0 <= x,
        Edge::Bottom(y) => p.1 >= y,
        Edge::Top(y) => p.1 <= y,
    };
    let intersect = |e: Edge, a: Point, b: Point| -> Point {
        match e {
            Edge::Left(x) | Edge::Right(x) => {
                let t = (x - a.0) / (b.0 - a.0);
                (x, a.1 + t * (b.1 - a.1))
            }
            Edge::Bottom(y) | Edge::Top(y) => {
                let t = (y - a.1) / (b.1 - a.1);
                (a.0 + t * (b.0 - a.0), y)
            }
        }
    };
    let mut output = points.to_vec();
    for edge in [
        Edge::Left(x0),
        Edge::Right(x1),
        Edge::Bottom(y0),
        Edge::Top(y1),
    ] {
        let input = std::mem::take(&mut output);
        if input.is_empty() {
            return output;
        }
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let cur_in = inside(edge, cur);
            let prev_in = inside(edge, prev);
            if cur_in {
                if !prev_in {
                    output.push(intersect(edge, prev, cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(edge, prev, cur));
            }
        }
    }
    output
}

/// Fraction of the unit cell [x, x+1] x [y, y+1] covered by the union of the
/// polygons. A single polygon goes through exact clipping + shoelace; for
/// several candidates the union area is integrated over y-slabs whose
/// boundaries are vertex and edge-crossing events, which is exact because
/// the union cross-section length is linear in y inside each slab.
pub fn compute_coverage(x: usize, y: usize, polygons: &[Polygon]) -> Result<f64> {
    let (x0, y0) = (x as f64, y as f64);
    let (x1, y1) = (x0 + 1.0, y0 + 1.0);

    let near: Vec<&Polygon> = polygons
        .iter()
        .filter(|p| {
            let (bx0, by0, bx1, by1) = p.bounds();
            bx0 < x1 && bx1 > x0 && by0 < y1 && by1 > y0
        })
        .collect();
    if near.is_empty() {
        return Ok(0.0);
    }
    if near.len() == 1 {
        let clipped = clip_to_rect(near[0].points(), x0, y0, x1, y1);
        if clipped.len() < 3 {
            return Ok(0.0);
        }
        return Ok(shoelace(&clipped).abs().min(1.0));
    }

    // Union of several polygons: exact y-slab integration. Slab boundaries
    // are every y where the cross-section structure can change: polygon
    // vertices, crossings between edges of different polygons, and edges
    // passing the cell's vertical walls (where interval clamping kinks).
    let mut events = vec![y0, y1];
    for p in &near {
        for &(_, py) in p.points() {
            if py > y0 && py < y1 {
                events.push(py);
            }
        }
        let pts = p.points();
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            for wall in [x0, x1] {
                if (a.0 - wall) * (b.0 - wall) < 0.0 {
                    let t = (wall - a.0) / (b.0 - a.0);
                    let cy = a.1 + t * (b.1 - a.1);
                    if cy > y0 && cy < y1 {
                        events.push(cy);
                    }
                }
            }
        }
    }
    for i in 0..near.len() {
        for j in i + 1..near.len() {
            edge_crossing_ys(near[i], near[j], y0, y1, &mut events);
        }
    }
    events.sort_by(|a, b| a.partial_cmp(b).unwrap());
    events.dedup();

    let mut area = 0.0;
    for w in events.windows(2) {
        let (ya, yb) = (w[0], w[1]);
        if yb <= ya {
            continue;
        }
        let ym = 0.5 * (ya + yb);
        let mut intervals = Vec::new();
        for p in &near {
            for (lo, hi) in p.intervals_at(ym) {
                let lo = lo.max(x0);
                let hi = hi.min(x1);
                if hi > lo {
                    intervals.push((lo, hi));
                }
            }
        }
        intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut len = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (lo, hi) in intervals {
            match cur {
                Some((clo, chi)) if lo <= chi => cur = Some((clo, chi.max(hi))),
                Some((clo, chi)) => {
                    len += chi - clo;
                    cur = Some((lo, hi));
                }
                None => cur = Some((lo, hi)),
            }
        }
        if let Some((clo, chi)) = cur {
            len += chi - clo;
        }
        area += (yb - ya) * len;
    }
    Ok(area.min(1.0))
}

/// Push the y-coordinates of proper crossings between edges of `a` and `b`
/// that fall strictly inside (y_lo, y_hi).
fn edge_crossing_ys(a: &Polygon, b: &Polygon, y_lo: f64, y_hi: f64, out: &mut Vec<f64>) {
    let pa = a.points();
    let pb = b.points();
    for i in 0..pa.len() {
        let (p1, p2) = (pa[i], pa[(i + 1) % pa.len()]);
        for j in 0..pb.len() {
            let (p3, p4) = (pb[j], pb[(j + 1) % pb.len()]);
            let d = (p2.0 - p1.0) * (p4.1 - p3.1) - (p2.1 - p1.1) * (p4.0 - p3.0);
            if d == 0.0 {
                continue; // parallel or collinear: no topology change inside a slab
            }
            let t = ((p3.0 - p1.0) * (p4.1 - p3.1) - (p3.1 - p1.1) * (p4.0 - p3.0)) / d;
            let u = ((p3.0 - p1.0) * (p2.1 - p1.1) - (p3.1 - p1.1) * (p2.0 - p1.0)) / d;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                let cy = p1.1 + t * (p2.1 - p1.1);
                if cy > y_lo && cy < y_hi {
                    out.push(cy);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn rejects_degenerate_and_self_intersecting() {
        assert!(Polygon::new(vec![(0.0, 0.0), (1.0, 1.0)]).is_err());
        // bow-tie
        assert!(Polygon::new(vec![(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]).is_err());
        // proper square
        assert!(Polygon::rectangle(0.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn half_covering_square() {
        // Axis-aligned polygon covering the left half of cell (0, 0).
        let p = Polygon::rectangle(0.0, 0.0, 0.5, 1.0).unwrap();
        let cov = compute_coverage(0, 0, &[p]).unwrap();
        assert!((cov - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disjoint_polygon_gives_zero() {
        let p = Polygon::rectangle(5.0, 5.0, 6.0, 6.0).unwrap();
        assert_eq!(compute_coverage(0, 0, &[p]).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_triangle_covers_half() {
        let p = Polygon::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]).unwrap();
        let cov = compute_coverage(0, 0, &[p]).unwrap();
        assert!((cov - 0.5).abs() < 1e-12);
    }

    #[test]
    fn full_cover_caps_at_one() {
        let p = Polygon::rectangle(-1.0, -1.0, 3.0, 3.0).unwrap();
        assert_eq!(
            compute_coverage(0, 0, std::slice::from_ref(&p)).unwrap(),
            1.0
        );
        assert_eq!(compute_coverage(1, 1, &[p]).unwrap(), 1.0);
    }

    #[test]
    fn overlapping_polygons_are_unioned_not_summed() {
        // Two rectangles each covering 60% of the cell, overlapping 20%.
        let a = Polygon::rectangle(0.0, 0.0, 0.6, 1.0).unwrap();
        let b = Polygon::rectangle(0.4, 0.0, 1.0, 1.0).unwrap();
        let cov = compute_coverage(0, 0, &[a, b]).unwrap();
        assert!(
            (cov - 1.0).abs() < 1e-12,
            "union must not double count: {cov}"
        );

        let a = Polygon::rectangle(0.0, 0.2, 0.5, 0.8).unwrap();
        let b = Polygon::rectangle(0.3, 0.2, 0.7, 0.8).unwrap();
        let cov = compute_coverage(0, 0, &[a, b]).unwrap();
        // union x-range [0, 0.7] over y-range 0.6
        assert!((cov - 0.7 * 0.6).abs() < 1e-12, "{cov}");
    }

    #[test]
    fn degenerate_polygon_contributes_zero() {
        // Zero-area sliver along a vertical line.
        let p = Polygon::new(vec![(0.5, 0.0), (0.5, 1.0), (0.5, 0.5)]).unwrap();
        assert_eq!(p.area(), 0.0);
        let cov = compute_coverage(0, 0, std::slice::from_ref(&p)).unwrap();
        assert!(cov < 1e-12, "{cov}");
        // also in union with a real polygon it adds nothing
        let square = Polygon::rectangle(0.0, 0.0, 0.25, 1.0).unwrap();
        let cov = compute_coverage(0, 0, &[square, p]).unwrap();
        assert!((cov - 0.25).abs() < 1e-12);
    }

    /// 256 x 256 supersampling of the cell with even-odd point-in-union.
    fn supersample(x: usize, y: usize, polygons: &[Polygon]) -> f64 {
        let n = 256;
        let mut hit = 0usize;
        for i in 0..n {
            for j in 0..n {
                let px = x as f64 + (i as f64 + 0.5) / n as f64;
                let py = y as f64 + (j as f64 + 0.5) / n as f64;
                let inside = polygons.iter().any(|p| {
                    p.intervals_at(py)
                        .iter()
                        .any(|&(lo, hi)| px >= lo && px <= hi)
                });
                if inside {
                    hit += 1;
                }
            }
        }
        hit as f64 / (n * n) as f64
    }

    fn random_star(rng: &mut crate::rng::Rng, cx: f64, cy: f64, r: f64) -> Polygon {
        let k = rng.gen_range(5..10);
        let mut pts = Vec::with_capacity(k);
        for i in 0..k {
            let theta = (i as f64 + rng.gen::<f64>() * 0.6) / k as f64 * std::f64::consts::TAU;
            let rho = r * (0.6 + 0.6 * rng.gen::<f64>());
            pts.push((cx + rho * theta.cos(), cy + rho * theta.sin()));
        }
        Polygon::new(pts).unwrap()
    }

    #[test]
    fn coverage_agrees_with_supersampling_oracle() {
        let mut rng = crate::rng::rng_from_seed(77);
        for case in 0..100 {
            let polys: Vec<Polygon> = (0..rng.gen_range(1..4))
                .map(|_| {
                    let cx = rng.gen_range(-0.5..1.5);
                    let cy = rng.gen_range(-0.5..1.5);
                    let r = rng.gen_range(0.2..1.2);
                    random_star(&mut rng, cx, cy, r)
                })
                .collect();
            let exact = compute_coverage(0, 0, &polys).unwrap();
            let sampled = supersample(0, 0, &polys);
            assert!(
                (exact - sampled).abs() < 1e-3,
                "case {case}: exact {exact} vs sampled {sampled}"
            );
        }
    }

    #[test]
    fn union_path_matches_clip_path_for_single_polygon() {
        let mut rng = crate::rng::rng_from_seed(78);
        for _ in 0..50 {
            let cx = rng.gen_range(0.0..1.0);
            let cy = rng.gen_range(0.0..1.0);
            let p = random_star(&mut rng, cx, cy, 0.8);
            let single = compute_coverage(0, 0, std::slice::from_ref(&p)).unwrap();
            // Duplicate the polygon: union of identical copies equals the single area.
            let doubled = compute_coverage(0, 0, &[p.clone(), p]).unwrap();
            assert!((single - doubled).abs() < 1e-9, "{single} vs {doubled}");
        }
    }
}
