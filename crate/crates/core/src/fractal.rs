//! Fractal dimension of an outline by box counting, Minkowski dilation and
//! the divider method.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, hull_diameter, BBox, Point, Polygon};

/// A polyline in mm, optionally closed back to its first point.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub points: Vec<Point>,
    pub closed: bool,
}

impl Curve {
    pub fn open(points: Vec<Point>) -> Result<Curve> {
        Curve::checked(points, false)
    }

    pub fn closed(points: Vec<Point>) -> Result<Curve> {
        Curve::checked(points, true)
    }

    fn checked(points: Vec<Point>, closed: bool) -> Result<Curve> {
        if points.len() < 2 {
            return Err(Error::invalid("curve needs at least two points"));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::invalid("curve point is not finite"));
        }
        Ok(Curve { points, closed })
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    pub fn max_diameter(&self) -> f64 {
        hull_diameter(&convex_hull(&self.points))
    }

    fn bbox(&self) -> BBox {
        BBox::of(&self.points)
    }
}

impl From<&Polygon> for Curve {
    fn from(p: &Polygon) -> Curve {
        Curve {
            points: p.vertices().to_vec(),
            closed: true,
        }
    }
}

/// Eight dyadic box sizes starting at a quarter of the diameter.
pub fn default_box_sizes(max_diameter: f64) -> Vec<f64> {
    (0..8).map(|k| max_diameter / 4.0 / f64::powi(2.0, k)).collect()
}

/// Six log-spaced dilation radii from D/100 to D/10.
pub fn default_radii(max_diameter: f64) -> Vec<f64> {
    log_spaced(max_diameter / 100.0, max_diameter / 10.0, 6)
}

/// Six log-spaced ruler lengths from D/4 down to D/128.
pub fn default_rulers(max_diameter: f64) -> Vec<f64> {
    log_spaced(max_diameter / 4.0, max_diameter / 128.0, 6)
}

pub fn log_spaced(from: f64, to: f64, n: usize) -> Vec<f64> {
    let (a, b) = (from.ln(), to.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn check_ladder(scales: &[f64], decreasing: bool, what: &str) -> Result<()> {
    if scales.len() < 4 {
        return Err(Error::invalid(format!("need at least 4 {what}, got {}", scales.len())));
    }
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid(format!("{what} must be positive")));
    }
    let ordered = scales.windows(2).all(|w| if decreasing { w[1] < w[0] } else { w[1] > w[0] });
    if !ordered {
        let dir = if decreasing { "decreasing" } else { "increasing" };
        return Err(Error::invalid(format!("{what} must be strictly {dir}")));
    }
    Ok(())
}

/// Grid offsets tried per axis, as fractions of the box size.
const GRID_SHIFTS: usize = 4;

/// Box-counting dimension: slope of log N(s) against log(1/s), where N(s)
/// is the fewest grid cells of side `s` crossed by the curve over a regular
/// set of grid offsets (an approximate minimal cover). Cells are found by exact traversal of each segment, so no
/// intermediate raster is built.
pub fn fd_kolmogorov(curve: &Curve, box_sizes: &[f64]) -> Result<f64> {
    check_ladder(box_sizes, true, "box sizes")?;
    let (first, last) = (box_sizes[0], box_sizes[box_sizes.len() - 1]);
    if first / last < 4.0 {
        return Err(Error::invalid("box sizes must span at least two octaves"));
    }
    if curve.max_diameter() < last {
        return Err(Error::invalid("contour smaller than the finest grid"));
    }
    let min = curve.bbox().min;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for &s in box_sizes {
        let mut best = usize::MAX;
        for k in 0..GRID_SHIFTS * GRID_SHIFTS {
            let fx = (k % GRID_SHIFTS) as f64 / GRID_SHIFTS as f64;
            let fy = (k / GRID_SHIFTS) as f64 / GRID_SHIFTS as f64;
            let origin = Point::new(min.x - fx * s, min.y - fy * s);
            let mut cells = HashSet::new();
            for (a, b) in curve.segments() {
                traverse_cells(a, b, origin, s, &mut cells);
            }
            best = best.min(cells.len());
        }
        x.push((1.0 / s).ln());
        y.push((best as f64).ln());
    }
    Ok(ls_slope(&x, &y))
}

fn traverse_cells(a: Point, b: Point, origin: Point, s: f64, cells: &mut HashSet<(i64, i64)>) {
    let (ax, ay) = ((a.x - origin.x) / s, (a.y - origin.y) / s);
    let (bx, by) = ((b.x - origin.x) / s, (b.y - origin.y) / s);
    let (mut i, mut j) = (ax.floor() as i64, ay.floor() as i64);
    let (ie, je) = (bx.floor() as i64, by.floor() as i64);
    let (dx, dy) = (bx - ax, by - ay);
    let step_i = if dx > 0.0 { 1 } else { -1 };
    let step_j = if dy > 0.0 { 1 } else { -1 };
    let next = |p: f64, cell: i64, d: f64| {
        if d > 0.0 {
            ((cell + 1) as f64 - p) / d
        } else if d < 0.0 {
            (cell as f64 - p) / d
        } else {
            f64::INFINITY
        }
    };
    let mut t_i = next(ax, i, dx);
    let mut t_j = next(ay, j, dy);
    let dt_i = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let dt_j = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    cells.insert((i, j));
    let budget = (ie - i).abs() + (je - j).abs();
    for _ in 0..budget {
        if t_i < t_j {
            i += step_i;
            t_i += dt_i;
        } else {
            j += step_j;
            t_j += dt_j;
        }
        cells.insert((i, j));
    }
}

/// Minkowski–Bouligand dimension: 2 minus the slope of log A(r) against
/// log r, where A(r) is the area within distance r of the curve. Areas are
/// measured on a grid of cell `min(0.02 mm, r_min / 8)` with an exact
/// Euclidean distance transform from the rasterized curve.
pub fn fd_minkowski(curve: &Curve, radii: &[f64]) -> Result<f64> {
    check_ladder(radii, false, "radii")?;
    let r_max = radii[radii.len() - 1];
    let extent = curve.max_diameter();
    if r_max > extent {
        return Err(Error::invalid(format!(
            "dilation radius {r_max} mm exceeds the contour extent {extent} mm"
        )));
    }
    let bbox = curve.bbox();
    let span = (bbox.width() + 2.0 * r_max).max(bbox.height() + 2.0 * r_max);
    // Keep the grid under ~4096 cells a side.
    let h = (0.02f64).min(radii[0] / 8.0).max(span / 4096.0);
    let pad = r_max + 2.0 * h;
    let x0 = bbox.min.x - pad;
    let y0 = bbox.min.y - pad;
    let nx = ((bbox.width() + 2.0 * pad) / h).ceil() as usize + 1;
    let ny = ((bbox.height() + 2.0 * pad) / h).ceil() as usize + 1;

    let mut grid = vec![f64::INFINITY; nx * ny];
    for (a, b) in curve.segments() {
        let steps = (a.dist(b) / (0.25 * h)).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let px = a.x + (b.x - a.x) * t;
            let py = a.y + (b.y - a.y) * t;
            let i = ((px - x0) / h) as usize;
            let j = ((py - y0) / h) as usize;
            grid[j * nx + i] = 0.0;
        }
    }
    squared_edt(&mut grid, nx, ny);

    let mut d2: Vec<f64> = grid.into_iter().filter(|v| v.is_finite()).collect();
    d2.sort_by(f64::total_cmp);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for &r in radii {
        let lim = (r / h) * (r / h);
        let count = d2.partition_point(|&v| v <= lim);
        x.push(r.ln());
        y.push((count as f64 * h * h).ln());
    }
    Ok(2.0 - ls_slope(&x, &y))
}

/// In-place squared Euclidean distance transform in cell units
/// (Felzenszwalb–Huttenlocher), rows then columns.
fn squared_edt(grid: &mut [f64], nx: usize, ny: usize) {
    let n = nx.max(ny);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for j in 0..ny {
        f[..nx].copy_from_slice(&grid[j * nx..(j + 1) * nx]);
        edt_1d(&f[..nx], &mut out[..nx], &mut v, &mut z);
        grid[j * nx..(j + 1) * nx].copy_from_slice(&out[..nx]);
    }
    for i in 0..nx {
        for j in 0..ny {
            f[j] = grid[j * nx + i];
        }
        edt_1d(&f[..ny], &mut out[..ny], &mut v, &mut z);
        for j in 0..ny {
            grid[j * nx + i] = out[j];
        }
    }
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let sources: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sources.is_empty() {
        d.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    v[0] = sources[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for &q in &sources[1..] {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * (qf - p));
            // z[0] is -inf, so this never steps below the first parabola.
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *out = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Divider (compass) dimension: walk the curve with a fixed chord length ε;
/// P(ε) is the number of whole steps times ε plus the final partial chord.
/// Returns 1 minus the slope of log P against log ε.
pub fn fd_hausdorff(curve: &Curve, rulers: &[f64]) -> Result<f64> {
    check_ladder(rulers, true, "ruler lengths")?;
    let d = curve.max_diameter();
    if rulers[0] > d {
        return Err(Error::invalid(format!(
            "ruler {} mm longer than the maximum diameter {d} mm",
            rulers[0]
        )));
    }
    let mut pts = curve.points.clone();
    if curve.closed {
        pts.push(pts[0]);
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for &eps in rulers {
        x.push(eps.ln());
        y.push(divider_length(&pts, eps).ln());
    }
    Ok(1.0 - ls_slope(&x, &y))
}

fn divider_length(pts: &[Point], eps: f64) -> f64 {
    let end = pts[pts.len() - 1];
    let mut cur = pts[0];
    let (mut seg, mut u0) = (0usize, 0.0f64);
    let mut steps = 0usize;
    'walk: loop {
        for j in seg..pts.len() - 1 {
            let (a, b) = (pts[j], pts[j + 1]);
            let start = if j == seg { u0 } else { 0.0 };
            if let Some(u) = exit_parameter(cur, a, b, eps, start) {
                cur = Point::new(a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u);
                seg = j;
                u0 = u;
                steps += 1;
                continue 'walk;
            }
        }
        break;
    }
    steps as f64 * eps + cur.dist(end)
}

/// Largest `u` in `[start, 1]` with |a + u (b - a) - c| = r, if any.
fn exit_parameter(c: Point, a: Point, b: Point, r: f64, start: f64) -> Option<f64> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (fx, fy) = (a.x - c.x, a.y - c.y);
    let qa = dx * dx + dy * dy;
    if qa == 0.0 {
        return None;
    }
    let qb = 2.0 * (fx * dx + fy * dy);
    let qc = fx * fx + fy * fy - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let u = (-qb + disc.sqrt()) / (2.0 * qa);
    (u > start && u <= 1.0).then_some(u)
}

/// Quadratic Koch curve (type 1): each segment's middle third is replaced by
/// three sides of a square, giving five pieces of one third the length.
pub fn quadratic_koch(a: Point, b: Point, iterations: u32) -> Vec<Point> {
    let mut pts = vec![a, b];
    for _ in 0..iterations {
        let mut next = Vec::with_capacity((pts.len() - 1) * 5 + 1);
        next.push(pts[0]);
        for w in pts.windows(2) {
            let (p, q) = (w[0], w[1]);
            let (dx, dy) = ((q.x - p.x) / 3.0, (q.y - p.y) / 3.0);
            // Left normal of the third-length step.
            let (nx, ny) = (-dy, dx);
            let p1 = Point::new(p.x + dx, p.y + dy);
            let p2 = Point::new(p1.x + nx, p1.y + ny);
            let p3 = Point::new(p2.x + dx, p2.y + dy);
            let p4 = Point::new(p.x + 2.0 * dx, p.y + 2.0 * dy);
            next.extend([p1, p2, p3, p4, q]);
        }
        pts = next;
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::ContourShape;

    fn segment() -> Curve {
        Curve::open(vec![Point::new(0.3, 0.1), Point::new(7.3, 4.6)]).unwrap()
    }

    fn circle() -> Curve {
        let p = ContourShape::Ellipse { semi_x: 5.0, semi_y: 5.0 }
            .polygon(Point::new(10.0, 10.0), 720)
            .unwrap();
        Curve::from(&p)
    }

    fn koch() -> (Curve, f64) {
        let len = 9.0;
        let pts = quadratic_koch(Point::new(0.0, 0.0), Point::new(len, 0.0), 4);
        (Curve::open(pts).unwrap(), len)
    }

    fn all_three(c: &Curve) -> [f64; 3] {
        let d = c.max_diameter();
        [
            fd_kolmogorov(c, &default_box_sizes(d)).unwrap(),
            fd_minkowski(c, &default_radii(d)).unwrap(),
            fd_hausdorff(c, &default_rulers(d)).unwrap(),
        ]
    }

    #[test]
    fn slope_of_exact_line() {
        assert!((ls_slope(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn koch_generator_structure() {
        let pts = quadratic_koch(Point::new(0.0, 0.0), Point::new(1.0, 0.0), 2);
        assert_eq!(pts.len(), 26);
        let c = Curve::open(pts).unwrap();
        assert!((c.length() - 25.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn segment_dimension_is_one() {
        let [k, m, h] = all_three(&segment());
        assert!((k - 1.0).abs() <= 0.1, "box {k}");
        assert!((m - 1.0).abs() <= 0.1, "minkowski {m}");
        assert!((h - 1.0).abs() <= 0.05, "divider {h}");
    }

    #[test]
    fn circle_dimension_is_one() {
        let [k, m, h] = all_three(&circle());
        assert!((k - 1.0).abs() <= 0.1, "box {k}");
        assert!((m - 1.0).abs() <= 0.1, "minkowski {m}");
        assert!((h - 1.0).abs() <= 0.1, "divider {h}");
    }

    #[test]
    fn koch_dimension() {
        let target = 5f64.ln() / 3f64.ln();
        let (c, len) = koch();
        let boxes = log_spaced(len / 3.0, len / 81.0, 8);
        // A disk of radius r resolves detail of roughly 3r, so the radii sit one
        // generator level below the box sizes.
        let radii = log_spaced(len / 243.0, len / 27.0, 6);
        let rulers = log_spaced(len / 3.0, len / 81.0, 6);
        let k = fd_kolmogorov(&c, &boxes).unwrap();
        let m = fd_minkowski(&c, &radii).unwrap();
        let h = fd_hausdorff(&c, &rulers).unwrap();
        assert!((k - target).abs() <= 0.1, "box {k}");
        assert!((m - target).abs() <= 0.12, "minkowski {m}");
        assert!((h - target).abs() <= 0.12, "divider {h}");
    }

    #[test]
    fn ladder_validation() {
        let c = circle();
        assert!(fd_kolmogorov(&c, &[1.0, 0.5, 0.25]).is_err());
        assert!(fd_kolmogorov(&c, &[1.0, 0.9, 0.8, 0.7]).is_err());
        assert!(fd_kolmogorov(&c, &[0.5, 1.0, 2.0, 4.0]).is_err());
        assert!(fd_minkowski(&c, &[1.0, 2.0, 5.0, 20.0]).is_err());
        assert!(fd_hausdorff(&c, &[20.0, 10.0, 5.0, 1.0]).is_err());
    }

    #[test]
    fn edt_matches_brute_force() {
        let (nx, ny) = (13, 9);
        let src = [(2usize, 3usize), (10, 1), (7, 7)];
        let mut g = vec![f64::INFINITY; nx * ny];
        for &(i, j) in &src {
            g[j * nx + i] = 0.0;
        }
        squared_edt(&mut g, nx, ny);
        for j in 0..ny {
            for i in 0..nx {
                let best = src
                    .iter()
                    .map(|&(a, b)| (i as f64 - a as f64).powi(2) + (j as f64 - b as f64).powi(2))
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(g[j * nx + i], best);
            }
        }
    }

    #[test]
    fn cell_traversal_covers_segment() {
        let mut cells = HashSet::new();
        traverse_cells(Point::new(0.5, 0.5), Point::new(3.5, 1.5), Point::new(0.0, 0.0), 1.0, &mut cells);
        assert!(cells.contains(&(0, 0)) && cells.contains(&(3, 1)));
        assert_eq!(cells.len(), 5);
    }
}
