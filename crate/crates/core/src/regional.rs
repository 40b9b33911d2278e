//! Per-map elemental and hybrid features over the annotated regions.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Point, Polygon};
use crate::model::{
    AnnotationSet, FeatureVector, MapGeometry, MapKind, ParametricImage, RegionName, FEATURE_COUNT, MAP_FEATURES,
    MORPH_FEATURES,
};

/// Fewest parametric pixels a region may map to.
pub const MIN_REGION_PIXELS: usize = 16;
/// Side of the sub-images used for the Hurst coefficient.
pub const HURST_BLOCK: usize = 7;
/// Quantization levels of the co-occurrence matrix.
pub const GLCM_LEVELS: usize = 64;

/// Pixels of a raster whose centres fall inside a polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub inside: Array2<bool>,
    pub count: usize,
}

impl PixelMask {
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.inside.indexed_iter().filter(|(_, &b)| b).map(|(idx, _)| idx)
    }
}

/// Scanline fill using the same half-open crossing rule as [`Polygon::contains`].
pub fn pixel_mask(geometry: &MapGeometry, polygon: &Polygon) -> PixelMask {
    let mut inside = Array2::from_elem((geometry.rows, geometry.cols), false);
    let mut count = 0;
    let mut xs = Vec::new();
    for r in 0..geometry.rows {
        let y = geometry.center_mm(r, 0).y;
        xs.clear();
        for (a, b) in polygon.edges() {
            if (a.y > y) != (b.y > y) {
                xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        for c in 0..geometry.cols {
            let x = geometry.center_mm(r, c).x;
            // Inside when an odd number of crossings lie strictly to the right.
            let right = xs.len() - xs.partition_point(|&v| v <= x);
            if right % 2 == 1 {
                inside[[r, c]] = true;
                count += 1;
            }
        }
    }
    PixelMask { inside, count }
}

/// Pixels whose centre lies within half a pixel of the polygon outline, with
/// distances measured in pixel units.
pub fn boundary_band(geometry: &MapGeometry, polygon: &Polygon) -> PixelMask {
    let mut inside = Array2::from_elem((geometry.rows, geometry.cols), false);
    let to_px = |p: Point| {
        let (r, c) = geometry.to_pixel(p);
        Point::new(c, r)
    };
    for (a, b) in polygon.edges() {
        let (a, b) = (to_px(a), to_px(b));
        let r0 = (a.y.min(b.y) - 0.5).ceil().max(0.0) as usize;
        let r1 = (a.y.max(b.y) + 0.5).floor();
        let c0 = (a.x.min(b.x) - 0.5).ceil().max(0.0) as usize;
        let c1 = (a.x.max(b.x) + 0.5).floor();
        if r1 < 0.0 || c1 < 0.0 {
            continue;
        }
        let r1 = (r1 as usize).min(geometry.rows.saturating_sub(1));
        let c1 = (c1 as usize).min(geometry.cols.saturating_sub(1));
        for r in r0..=r1 {
            for c in c0..=c1 {
                if point_segment_distance(Point::new(c as f64, r as f64), a, b) <= 0.5 {
                    inside[[r, c]] = true;
                }
            }
        }
    }
    let count = inside.iter().filter(|&&b| b).count();
    PixelMask { inside, count }
}

fn require_pixels(mask: &PixelMask, what: &str) -> Result<()> {
    if mask.count < MIN_REGION_PIXELS {
        return Err(Error::invalid(format!(
            "{what} maps to {} pixels, need at least {MIN_REGION_PIXELS}",
            mask.count
        )));
    }
    Ok(())
}

/// Mean and population standard deviation of the pixels in a mask.
fn mask_stats(values: ArrayView2<f64>, mask: &PixelMask) -> (f64, f64) {
    let n = mask.count as f64;
    let mean = mask.pixels().map(|idx| values[idx]).sum::<f64>() / n;
    let var = mask.pixels().map(|idx| (values[idx] - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// (echogenicity, heterogeneity): mean and population standard deviation
/// of the pixels inside `region`.
pub fn region_stats(img: &ParametricImage, region: &Polygon) -> Result<(f64, f64)> {
    let mask = pixel_mask(img.geometry(), region);
    require_pixels(&mask, "region")?;
    Ok(mask_stats(img.values().view(), &mask))
}

/// Lesion pixels whose four neighbours are also lesion pixels, with the
/// mean absolute difference to those neighbours.
pub fn four_neighbor_texture(values: ArrayView2<f64>, mask: &Array2<bool>) -> Vec<((usize, usize), f64)> {
    let (rows, cols) = values.dim();
    let mut out = Vec::new();
    for ((r, c), &m) in mask.indexed_iter() {
        if !m || r == 0 || c == 0 || r + 1 == rows || c + 1 == cols {
            continue;
        }
        let nbrs = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)];
        if nbrs.iter().all(|&idx| mask[idx]) {
            let x = values[[r, c]];
            let fp1 = nbrs.iter().map(|&idx| (x - values[idx]).abs()).sum::<f64>() / 4.0;
            out.push(((r, c), fp1));
        }
    }
    out
}

/// The texture field divided by its own mean; unit mean by construction.
/// A texture-free field maps to zeros.
pub fn normalized_texture(fp1: &[f64]) -> Vec<f64> {
    let mu = fp1.iter().sum::<f64>() / fp1.len() as f64;
    fp1.iter().map(|&v| if mu > 0.0 { v / mu } else { 0.0 }).collect()
}

/// Four-neighbourhood texture average: mean FP1 over the lesion interior
/// divided by |mean lesion value|. Zero when the lesion has no texture.
pub fn fnpa(img: &ParametricImage, lesion: &Polygon) -> Result<f64> {
    fnpa_masked(img.values().view(), &pixel_mask(img.geometry(), lesion))
}

fn fnpa_masked(values: ArrayView2<f64>, mask: &PixelMask) -> Result<f64> {
    let field = four_neighbor_texture(values, &mask.inside);
    if field.is_empty() {
        return Err(Error::invalid("lesion has no interior pixels for the four-neighbourhood texture"));
    }
    let mean_fp1 = field.iter().map(|(_, v)| v).sum::<f64>() / field.len() as f64;
    if mean_fp1 == 0.0 {
        return Ok(0.0);
    }
    let (mu, _) = mask_stats(values, mask);
    if mu == 0.0 {
        return Err(Error::invalid("lesion mean is zero; texture ratio undefined"));
    }
    Ok(mean_fp1 / mu.abs())
}

/// Pair offsets inside a block, grouped by rounded distance 1, 2, 3, with the
/// mean exact distance of each group.
struct HurstOffsets {
    offsets: [Vec<(isize, isize)>; 3],
    mean_distance: [f64; 3],
}

fn hurst_offsets() -> HurstOffsets {
    let mut offsets: [Vec<(isize, isize)>; 3] = Default::default();
    let mut dist_sum = [0.0; 3];
    let mut weight = [0.0; 3];
    let b = HURST_BLOCK as isize;
    for dr in 0..b {
        for dc in -(b - 1)..b {
            if dr == 0 && dc <= 0 {
                continue;
            }
            let d = ((dr * dr + dc * dc) as f64).sqrt();
            let class = d.round() as usize;
            if (1..=3).contains(&class) {
                offsets[class - 1].push((dr, dc));
                // Weight by the number of such pairs inside a block.
                let pairs = ((b - dr) * (b - dc.abs())) as f64;
                dist_sum[class - 1] += d * pairs;
                weight[class - 1] += pairs;
            }
        }
    }
    HurstOffsets {
        offsets,
        mean_distance: [0, 1, 2].map(|k| dist_sum[k] / weight[k]),
    }
}

/// Slope of log mean |difference| against log distance within one block.
fn block_hurst(values: ArrayView2<f64>, r0: usize, c0: usize, ho: &HurstOffsets) -> f64 {
    let b = HURST_BLOCK as isize;
    let mut deltas = [0.0; 3];
    for (k, offs) in ho.offsets.iter().enumerate() {
        let (mut sum, mut n) = (0.0, 0usize);
        for &(dr, dc) in offs {
            for i in 0..b - dr {
                for j in 0.max(-dc)..b.min(b - dc) {
                    let a = values[[r0 + i as usize, c0 + j as usize]];
                    let z = values[[r0 + (i + dr) as usize, c0 + (j + dc) as usize]];
                    sum += (a - z).abs();
                    n += 1;
                }
            }
        }
        deltas[k] = sum / n as f64;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = (0..3)
        .filter(|&k| deltas[k] > 0.0)
        .map(|k| (ho.mean_distance[k].ln(), deltas[k].ln()))
        .unzip();
    if x.len() < 2 {
        return 0.0;
    }
    crate::fractal::ls_slope(&x, &y)
}

/// Mean Hurst slope over the non-overlapping 7×7 blocks that lie wholly in
/// the lesion. Blocks tile the raster from the lesion's top-left pixel.
pub fn hurst_fd(img: &ParametricImage, lesion: &Polygon) -> Result<f64> {
    hurst_masked(img.values().view(), &pixel_mask(img.geometry(), lesion))
}

fn hurst_masked(values: ArrayView2<f64>, mask: &PixelMask) -> Result<f64> {
    let Some((rmin, cmin)) = mask.pixels().fold(None, |acc: Option<(usize, usize)>, (r, c)| {
        Some(acc.map_or((r, c), |(a, b)| (a.min(r), b.min(c))))
    }) else {
        return Err(Error::invalid("lesion covers no pixels"));
    };
    let (rows, cols) = values.dim();
    let ho = hurst_offsets();
    let mut slopes = Vec::new();
    let mut r0 = rmin;
    while r0 + HURST_BLOCK <= rows {
        let mut c0 = cmin;
        while c0 + HURST_BLOCK <= cols {
            let full = (r0..r0 + HURST_BLOCK).all(|r| (c0..c0 + HURST_BLOCK).all(|c| mask.inside[[r, c]]));
            if full {
                slopes.push(block_hurst(values, r0, c0, &ho));
            }
            c0 += HURST_BLOCK;
        }
        r0 += HURST_BLOCK;
    }
    if slopes.is_empty() {
        return Err(Error::invalid("lesion contains no complete 7x7 block"));
    }
    Ok(slopes.iter().sum::<f64>() / slopes.len() as f64)
}

/// Min-max quantization to `GLCM_LEVELS` levels; a constant image maps to level 0.
pub fn quantize_levels(values: ArrayView2<f64>) -> Array2<usize> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    values.mapv(|v| {
        if span > 0.0 {
            (((v - lo) / span * GLCM_LEVELS as f64).floor() as usize).min(GLCM_LEVELS - 1)
        } else {
            0
        }
    })
}

/// Contrast of the symmetric, normalized co-occurrence matrix at offset
/// (0, 1) over the whole raster.
pub fn cooccurrence_contrast(img: &ParametricImage) -> Result<f64> {
    glcm_contrast(img.values().view())
}

pub fn glcm_contrast(values: ArrayView2<f64>) -> Result<f64> {
    let (rows, cols) = values.dim();
    if rows * cols < 2 || cols < 2 {
        return Err(Error::invalid("co-occurrence needs at least two columns"));
    }
    let q = quantize_levels(values);
    let mut weighted: u64 = 0;
    let mut pairs: u64 = 0;
    for row in q.rows() {
        for w in row.windows(2).into_iter().map(|w| (w[0], w[1])) {
            let d = w.0.abs_diff(w.1) as u64;
            // Both orderings of the pair, as the matrix is symmetric.
            weighted += 2 * d * d;
            pairs += 2;
        }
    }
    Ok(weighted as f64 / pairs as f64)
}

/// Region means and distances needed by the shadow and absorption features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMeans {
    /// Mean of each of the nine regions, in [`RegionName::ALL`] order.
    pub region: [f64; 9],
    /// Tumor-posterior mean.
    pub m_pl: f64,
    /// Right-posterior mean.
    pub m_pnr: f64,
    /// Left-posterior mean.
    pub m_pnl: f64,
    /// Tumor mean.
    pub m_al: f64,
    /// Average of the left- and right-lateral means.
    pub m_an: f64,
    /// Average of the left- and right-posterior means.
    pub m_pn: f64,
    /// Distance between the lateral-posterior and lateral centroids, mm.
    pub d1_mm: f64,
    /// Distance between the tumor-posterior and tumor centroids, mm.
    pub d2_mm: f64,
    /// Axial extent of the lesion, mm.
    pub thickness_mm: f64,
}

impl RegionMeans {
    /// Builds the derived means from the nine region means.
    pub fn from_region_means(region: [f64; 9], d1_mm: f64, d2_mm: f64, thickness_mm: f64) -> RegionMeans {
        let at = |n: RegionName| region[n.index()];
        RegionMeans {
            region,
            m_pl: at(RegionName::TumorPosterior),
            m_pnr: at(RegionName::RightPosterior),
            m_pnl: at(RegionName::LeftPosterior),
            m_al: at(RegionName::Tumor),
            m_an: 0.5 * (at(RegionName::LeftLateral) + at(RegionName::RightLateral)),
            m_pn: 0.5 * (at(RegionName::LeftPosterior) + at(RegionName::RightPosterior)),
            d1_mm,
            d2_mm,
            thickness_mm,
        }
    }
}

fn union_centroid(a: &Polygon, b: &Polygon) -> Point {
    let (wa, wb) = (a.area(), b.area());
    let (ca, cb) = (a.centroid(), b.centroid());
    Point::new((wa * ca.x + wb * cb.x) / (wa + wb), (wa * ca.y + wb * cb.y) / (wa + wb))
}

/// Region geometry that is shared by all maps of one plan.
#[derive(Debug, Clone)]
pub struct RegionIndex {
    pub masks: Vec<PixelMask>,
    pub band: PixelMask,
    pub d1_mm: f64,
    pub d2_mm: f64,
    pub thickness_mm: f64,
}

impl RegionIndex {
    pub fn new(geometry: &MapGeometry, ann: &AnnotationSet) -> Result<RegionIndex> {
        let masks: Vec<PixelMask> = RegionName::ALL
            .iter()
            .map(|&name| pixel_mask(geometry, ann.region(name)))
            .collect();
        for (name, mask) in RegionName::ALL.iter().zip(&masks) {
            require_pixels(mask, &format!("region `{}`", name.as_str()))?;
        }
        let band = boundary_band(geometry, ann.lesion_contour());
        if band.count == 0 {
            return Err(Error::invalid("lesion boundary band is empty"));
        }
        let d1_mm = union_centroid(ann.region(RegionName::LeftPosterior), ann.region(RegionName::RightPosterior))
            .dist(union_centroid(ann.region(RegionName::LeftLateral), ann.region(RegionName::RightLateral)));
        let d2_mm = ann
            .region(RegionName::TumorPosterior)
            .centroid()
            .dist(ann.region(RegionName::Tumor).centroid());
        Ok(RegionIndex {
            masks,
            band,
            d1_mm,
            d2_mm,
            thickness_mm: ann.lesion_contour().bbox().height(),
        })
    }

    pub fn mask(&self, name: RegionName) -> &PixelMask {
        &self.masks[name.index()]
    }

    pub fn means(&self, values: ArrayView2<f64>) -> RegionMeans {
        let mut region = [0.0; 9];
        for (slot, mask) in region.iter_mut().zip(&self.masks) {
            *slot = mask_stats(values, mask).0;
        }
        RegionMeans::from_region_means(region, self.d1_mm, self.d2_mm, self.thickness_mm)
    }
}

pub fn region_means(img: &ParametricImage, ann: &AnnotationSet) -> Result<RegionMeans> {
    Ok(RegionIndex::new(img.geometry(), ann)?.means(img.values().view()))
}

/// Posterior shadowing relative to the lateral-posterior background, per mm
/// of lesion thickness.
pub fn shadow_normal(m: &RegionMeans) -> Result<f64> {
    if !(m.thickness_mm > 0.0) {
        return Err(Error::invalid("lesion thickness must be positive"));
    }
    Ok((m.m_pl - 0.5 * (m.m_pnr + m.m_pnl)) / m.thickness_mm)
}

/// `(M_pn - M_an) / d1 - (M_pl - M_al) / d2`.
pub fn relative_absorption(m: &RegionMeans) -> Result<f64> {
    if !(m.d1_mm > 0.0 && m.d2_mm > 0.0) {
        return Err(Error::invalid("coincident region centroids"));
    }
    Ok((m.m_pn - m.m_an) / m.d1_mm - (m.m_pl - m.m_al) / m.d2_mm)
}

/// Gradient magnitude by central differences (one-sided at the raster edge),
/// in value units per pixel.
pub fn gradient_magnitude(values: ArrayView2<f64>) -> Array2<f64> {
    let (rows, cols) = values.dim();
    let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / span as f64;
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let gr = match rows {
            1 => 0.0,
            _ => {
                let (a, b) = (r.saturating_sub(1), (r + 1).min(rows - 1));
                diff(values[[a, c]], values[[b, c]], b - a)
            }
        };
        let gc = match cols {
            1 => 0.0,
            _ => {
                let (a, b) = (c.saturating_sub(1), (c + 1).min(cols - 1));
                diff(values[[r, a]], values[[r, b]], b - a)
            }
        };
        gr.hypot(gc)
    })
}

/// (margin_area, margin_gradient): summed gradient magnitude over the
/// one-pixel boundary band, divided by the band's pixel count and by the sum
/// of lesion values respectively.
pub fn margin_features(img: &ParametricImage, lesion: &Polygon) -> Result<(f64, f64)> {
    let band = boundary_band(img.geometry(), lesion);
    let inside = pixel_mask(img.geometry(), lesion);
    margin_masked(img.values().view(), &band, &inside)
}

fn margin_masked(values: ArrayView2<f64>, band: &PixelMask, inside: &PixelMask) -> Result<(f64, f64)> {
    if inside.count == 0 {
        return Err(Error::invalid("lesion covers no pixels"));
    }
    if band.count == 0 {
        return Err(Error::invalid("lesion boundary band is empty"));
    }
    let grad = gradient_magnitude(values);
    let band_sum: f64 = band.pixels().map(|idx| grad[idx]).sum();
    let lesion_sum: f64 = inside.pixels().map(|idx| values[idx]).sum();
    let margin_area = band_sum / band.count as f64;
    let margin_gradient = if lesion_sum != 0.0 {
        band_sum / lesion_sum
    } else {
        log::warn!("lesion values sum to zero; margin gradient reported as 0");
        0.0
    };
    Ok((margin_area, margin_gradient))
}

/// The nine per-map features of one parametric image, in canonical order.
pub fn map_features(img: &ParametricImage, index: &RegionIndex) -> Result<[f64; 9]> {
    let values = img.values().view();
    let lesion = index.mask(RegionName::Tumor);
    let tag = img.kind().tag();
    let named = |i: usize, e: Error| e.in_feature(format!("{tag}.{}", MAP_FEATURES[i]));
    let (echo, hetero) = mask_stats(values, lesion);
    let means = index.means(values);
    let (margin_area, margin_gradient) = margin_masked(values, &index.band, lesion).map_err(|e| named(7, e))?;
    Ok([
        echo,
        hetero,
        fnpa_masked(values, lesion).map_err(|e| named(2, e))?,
        hurst_masked(values, lesion).map_err(|e| named(3, e))?,
        shadow_normal(&means).map_err(|e| named(4, e))?,
        relative_absorption(&means).map_err(|e| named(5, e))?,
        glcm_contrast(values).map_err(|e| named(6, e))?,
        margin_area,
        margin_gradient,
    ])
}

/// 72-entry feature vector from the seven maps of one plan, the annotation
/// and the nine contour features.
pub fn assemble_feature_vector(
    maps: &[ParametricImage],
    ann: &AnnotationSet,
    morph: [f64; 9],
) -> Result<FeatureVector> {
    if maps.len() != MapKind::ALL.len() || maps.iter().zip(MapKind::ALL).any(|(m, k)| m.kind() != k) {
        return Err(Error::invalid("expected the seven parametric maps in canonical order"));
    }
    let geometry = maps[0].geometry();
    if maps.iter().any(|m| m.geometry() != geometry) {
        return Err(Error::invalid("parametric maps do not share one geometry"));
    }
    let index = RegionIndex::new(geometry, ann)?;
    let mut values = [0.0; FEATURE_COUNT];
    values[..MORPH_FEATURES.len()].copy_from_slice(&morph);
    for (k, img) in maps.iter().enumerate() {
        let start = MORPH_FEATURES.len() + k * MAP_FEATURES.len();
        values[start..start + MAP_FEATURES.len()].copy_from_slice(&map_features(img, &index)?);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        let name = &crate::model::canonical_feature_names()[i];
        return Err(Error::invalid("non-finite value").in_feature(name.clone()));
    }
    FeatureVector::new(ann.mass_id(), ann.label(), values)
}
