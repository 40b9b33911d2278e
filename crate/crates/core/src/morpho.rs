//! Contour-only shape descriptors of a lesion outline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractal::{self, Curve};
use crate::geometry::{convex_hull, hull_diameter, ring_area, ring_length, Point, Polygon};
use crate::model::MORPH_FEATURES;

/// Lengths in mm, areas in mm^2. `y` is the axial (vertical) axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourMetrics {
    pub area_mm2: f64,
    pub perimeter_mm: f64,
    pub convex_perimeter_mm: f64,
    pub convex_area_mm2: f64,
    pub max_diameter_mm: f64,
    pub vertical_extent_mm: f64,
    pub horizontal_extent_mm: f64,
}

pub fn contour_metrics(contour: &Polygon) -> Result<ContourMetrics> {
    let area = contour.area();
    if !(area > 0.0) {
        return Err(Error::invalid("degenerate polygon: zero area"));
    }
    let perimeter = contour.perimeter();
    let hull = convex_hull(contour.vertices());
    // A convex outline is its own hull; reuse its sums so the ratios come out exactly 1.
    let (convex_perimeter, convex_area) = if is_convex(contour.vertices()) {
        (perimeter, area)
    } else {
        (ring_length(&hull), ring_area(&hull).abs())
    };
    let bbox = contour.bbox();
    Ok(ContourMetrics {
        area_mm2: area,
        perimeter_mm: perimeter,
        convex_perimeter_mm: convex_perimeter,
        convex_area_mm2: convex_area,
        max_diameter_mm: hull_diameter(&hull),
        vertical_extent_mm: bbox.height(),
        horizontal_extent_mm: bbox.width(),
    })
}

fn is_convex(v: &[Point]) -> bool {
    let n = v.len();
    let mut sign = 0.0f64;
    for i in 0..n {
        let (a, b, c) = (v[i], v[(i + 1) % n], v[(i + 2) % n]);
        let z = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
        if z != 0.0 {
            if sign != 0.0 && z.signum() != sign {
                return false;
            }
            sign = z.signum();
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeRatios {
    pub aspect_ratio: f64,
    pub compactness: f64,
    pub roundness: f64,
    pub convexity: f64,
    pub form_factor: f64,
    pub solidity: f64,
}

pub fn shape_ratios(m: &ContourMetrics) -> Result<ShapeRatios> {
    if !(m.horizontal_extent_mm > 0.0) {
        return Err(Error::invalid("zero horizontal extent"));
    }
    if !(m.perimeter_mm > 0.0) {
        return Err(Error::invalid("zero perimeter"));
    }
    if !(m.max_diameter_mm > 0.0) {
        return Err(Error::invalid("zero maximum diameter"));
    }
    if !(m.convex_area_mm2 > 0.0) {
        return Err(Error::invalid("zero convex area"));
    }
    let d = m.max_diameter_mm;
    Ok(ShapeRatios {
        aspect_ratio: m.vertical_extent_mm / m.horizontal_extent_mm,
        compactness: m.area_mm2.sqrt() / d,
        roundness: m.area_mm2 / (d * d),
        convexity: m.convex_perimeter_mm / m.perimeter_mm,
        form_factor: m.area_mm2 / (m.perimeter_mm * m.perimeter_mm),
        solidity: m.area_mm2 / m.convex_area_mm2,
    })
}

/// The nine morphometric features in canonical order.
pub fn morphometric_features(contour: &Polygon) -> Result<[f64; 9]> {
    let metrics = contour_metrics(contour)?;
    let r = shape_ratios(&metrics)?;
    let curve = Curve::from(contour);
    let d = metrics.max_diameter_mm;
    let named = |name: &'static str, v: Result<f64>| {
        v.map_err(|e| e.in_feature(format!("morph.{name}")))
    };
    let out = [
        r.aspect_ratio,
        r.compactness,
        r.roundness,
        r.convexity,
        r.form_factor,
        r.solidity,
        named("fd_kolmogorov", fractal::fd_kolmogorov(&curve, &fractal::default_box_sizes(d)))?,
        named("fd_minkowski", fractal::fd_minkowski(&curve, &fractal::default_radii(d)))?,
        named("fd_hausdorff", fractal::fd_hausdorff(&curve, &fractal::default_rulers(d)))?,
    ];
    debug_assert_eq!(out.len(), MORPH_FEATURES.len());
    Ok(out)
}
