//! Synthetic speckle phantom: exact Nakagami envelope sampling, lesion scenes
//! with annotated regions, and labelled cohorts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, Polygon};
use crate::io::{save_annotations, write_envelope, write_json, write_rf_container, RasterLayout};
use crate::model::{axial_spacing_for, AnnotationSet, EnvelopeImage, Label, MapGeometry, RegionName, RfFrame};
use crate::nakagami::NakagamiParams;
use crate::regional::pixel_mask;

/// Draws `n` envelope samples: intensity ~ Gamma(m, omega / m), envelope = sqrt(intensity).
pub fn sample_nakagami_envelope(p: NakagamiParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(p.m, p.omega / p.m).expect("validated Nakagami parameters");
    (0..n).map(|_| gamma.sample(&mut rng).sqrt()).collect()
}

/// Exponent of the spike profile `|cos(k θ / 2)|^p`; larger is narrower.
pub const SPIKE_SHARPNESS: i32 = 8;

/// Lesion outline generators, centred on a point, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ContourShape {
    /// Axis-aligned ellipse; `semi_x` lateral, `semi_y` axial.
    Ellipse { semi_x: f64, semi_y: f64 },
    /// `r(θ) = radius · (1 + amplitude · |cos(spikes · θ / 2)|^p)`.
    Star { radius: f64, spikes: u32, amplitude: f64 },
}

impl ContourShape {
    pub fn polygon(&self, center: Point, vertices: usize) -> Result<Polygon> {
        if vertices < 3 {
            return Err(Error::invalid("contour needs at least 3 vertices"));
        }
        let pts = (0..vertices)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / vertices as f64;
                let (rx, ry) = match *self {
                    ContourShape::Ellipse { semi_x, semi_y } => (semi_x, semi_y),
                    ContourShape::Star {
                        radius,
                        spikes,
                        amplitude,
                    } => {
                        let r = radius * (1.0 + amplitude * (spikes as f64 * t / 2.0).cos().abs().powi(SPIKE_SHARPNESS));
                        (r, r)
                    }
                };
                Point::new(center.x + rx * t.cos(), center.y + ry * t.sin())
            })
            .collect();
        Polygon::new(pts)
    }

    /// Half-extents (lateral, axial) of the generated outline's bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        match *self {
            ContourShape::Ellipse { semi_x, semi_y } => (semi_x, semi_y),
            ContourShape::Star { radius, amplitude, .. } => {
                let r = radius * (1.0 + amplitude.max(0.0));
                (r, r)
            }
        }
    }
}

/// Vertices used for generated lesion outlines.
pub const CONTOUR_VERTICES: usize = 720;
/// Largest analysis window; lesions and regions keep this clearance from the image edge.
pub const MAX_WINDOW_MM: f64 = 0.75;

/// Nine analysis regions around a lesion: a 3×3 block layout on the lesion's
/// bounding box (width W, height H). The tumor column is the box's span, the
/// side columns are W wide, the anterior and posterior rows are H/2 tall, and
/// the central cell is the contour itself. Every region must fit in `extent`.
pub fn derive_rois(contour: &Polygon, extent: BBox) -> Result<Vec<(RegionName, Polygon)>> {
    let b = contour.bbox();
    let (w, h) = (b.width(), b.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::invalid("lesion outline has an empty bounding box"));
    }
    let cols = [b.min.x - w, b.min.x, b.max.x, b.max.x + w];
    let rows = [b.min.y - h / 2.0, b.min.y, b.max.y, b.max.y + h / 2.0];
    if cols[0] < extent.min.x || cols[3] > extent.max.x || rows[0] < extent.min.y || rows[3] > extent.max.y {
        return Err(Error::invalid(format!(
            "insufficient clearance: regions span x {:.3}..{:.3}, y {:.3}..{:.3} mm, image allows x {:.3}..{:.3}, y {:.3}..{:.3}",
            cols[0], cols[3], rows[0], rows[3], extent.min.x, extent.max.x, extent.min.y, extent.max.y
        )));
    }
    let mut out = Vec::with_capacity(9);
    for (ci, side) in ["left", "tumor", "right"].iter().enumerate() {
        for (ri, depth) in ["anterior", "lateral", "posterior"].iter().enumerate() {
            let name = match (*side, *depth) {
                ("tumor", "lateral") => RegionName::Tumor,
                ("tumor", d) => RegionName::from_name(&format!("tumor_{d}")).expect("region name"),
                (s, d) => RegionName::from_name(&format!("{s}_{d}")).expect("region name"),
            };
            let poly = if name == RegionName::Tumor {
                contour.clone()
            } else {
                Polygon::rect(cols[ci], rows[ri], cols[ci + 1], rows[ri + 1])?
            };
            out.push((name, poly));
        }
    }
    Ok(out)
}

/// One synthetic B-mode scene holding a single lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub mass_id: String,
    pub label: Label,
    pub rows: usize,
    pub cols: usize,
    pub axial_spacing_mm: f64,
    pub lateral_spacing_mm: f64,
    pub background: NakagamiParams,
    pub lesion: NakagamiParams,
    pub shape: ContourShape,
    pub center_mm: Point,
    /// Factor on Ω for background pixels below the lesion in each column.
    pub shadow: Option<f64>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn geometry(&self) -> MapGeometry {
        MapGeometry {
            rows: self.rows,
            cols: self.cols,
            origin_offset_px: (0.0, 0.0),
            envelope_spacing_mm: (self.axial_spacing_mm, self.lateral_spacing_mm),
            pixel_spacing_mm: (self.axial_spacing_mm, self.lateral_spacing_mm),
        }
    }

    /// Pixel-centre extent inset by [`MAX_WINDOW_MM`].
    pub fn usable_extent(&self) -> BBox {
        let far = self.geometry().center_mm(self.rows.saturating_sub(1), self.cols.saturating_sub(1));
        BBox {
            min: Point::new(MAX_WINDOW_MM, MAX_WINDOW_MM),
            max: Point::new(far.x - MAX_WINDOW_MM, far.y - MAX_WINDOW_MM),
        }
    }

    pub fn contour(&self) -> Result<Polygon> {
        self.shape.polygon(self.center_mm, CONTOUR_VERTICES)
    }
}

/// Samples the envelope pixel by pixel from the (m, Ω) of the pixel's
/// region, and derives the annotation from the generator outline.
pub fn synthesize_scene(spec: &SceneSpec) -> Result<(EnvelopeImage, AnnotationSet)> {
    if spec.rows == 0 || spec.cols == 0 {
        return Err(Error::invalid("scene must have at least one row and column"));
    }
    if let Some(s) = spec.shadow {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::invalid(format!("shadow multiplier must be in (0, 1], got {s}")));
        }
    }
    NakagamiParams::new(spec.background.m, spec.background.omega)?;
    NakagamiParams::new(spec.lesion.m, spec.lesion.omega)?;
    let contour = spec.contour()?;
    let regions = derive_rois(&contour, spec.usable_extent())
        .map_err(|e| Error::invalid(format!("lesion out of bounds for {}: {e}", spec.mass_id)))?;
    let ann = AnnotationSet::new(spec.mass_id.clone(), spec.label, contour.clone(), regions)?;

    let lesion = pixel_mask(&spec.geometry(), &contour).inside;
    let mut shadowed = Array2::from_elem((spec.rows, spec.cols), false);
    if spec.shadow.is_some() {
        for c in 0..spec.cols {
            if let Some(bottom) = (0..spec.rows).rev().find(|&r| lesion[[r, c]]) {
                for r in bottom + 1..spec.rows {
                    shadowed[[r, c]] = !lesion[[r, c]];
                }
            }
        }
    }
    let gamma = |p: NakagamiParams| Gamma::new(p.m, p.omega / p.m).expect("validated Nakagami parameters");
    let bg = gamma(spec.background);
    let le = gamma(spec.lesion);
    let sh = gamma(NakagamiParams {
        m: spec.background.m,
        omega: spec.background.omega * spec.shadow.unwrap_or(1.0),
    });
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Array2::zeros((spec.rows, spec.cols));
    for (v, (&in_lesion, &in_shadow)) in values.iter_mut().zip(lesion.iter().zip(shadowed.iter())) {
        let dist = if in_lesion {
            &le
        } else if in_shadow {
            &sh
        } else {
            &bg
        };
        *v = dist.sample(&mut rng).sqrt();
    }
    Ok((EnvelopeImage::new(values, spec.axial_spacing_mm, spec.lateral_spacing_mm)?, ann))
}

/// Inclusive parameter interval `[lo, hi]`.
pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeRecipe {
    Ellipse { semi_x_mm: Range, semi_y_mm: Range },
    Star { radius_mm: Range, spikes: [u32; 2], amplitude: Range },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRecipe {
    pub count: usize,
    pub lesion_m: Range,
    pub lesion_omega: Range,
    pub shape: ShapeRecipe,
    /// Posterior shadow multiplier range; none for no shadow.
    #[serde(default)]
    pub shadow: Option<Range>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub sampling_rate_hz: f64,
    pub sound_speed_m_s: f64,
    pub lateral_spacing_mm: f64,
    pub background_m: Range,
    pub background_omega: Range,
    pub benign: ClassRecipe,
    pub malignant: ClassRecipe,
    /// Write RF frames (envelope times a carrier, with a TGC ramp) instead of envelopes.
    pub rf_mode: bool,
    pub carrier_hz: f64,
    /// TGC slope in dB per mm of depth, RF mode only.
    pub tgc_db_per_mm: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            seed: 20_240_117,
            rows: 624,
            cols: 480,
            sampling_rate_hz: 20e6,
            sound_speed_m_s: 1540.0,
            lateral_spacing_mm: 0.075,
            background_m: [0.9, 1.1],
            background_omega: [1.0, 1.0],
            benign: ClassRecipe {
                count: 104,
                lesion_m: [0.85, 1.15],
                lesion_omega: [0.6, 0.9],
                shape: ShapeRecipe::Ellipse {
                    semi_x_mm: [3.0, 5.0],
                    semi_y_mm: [1.5, 2.5],
                },
                shadow: None,
            },
            malignant: ClassRecipe {
                count: 26,
                lesion_m: [0.45, 0.7],
                lesion_omega: [0.4, 0.7],
                shape: ShapeRecipe::Star {
                    radius_mm: [2.0, 3.5],
                    spikes: [8, 14],
                    amplitude: [0.15, 0.3],
                },
                shadow: Some([0.4, 0.7]),
            },
            rf_mode: false,
            carrier_hz: 5e6,
            tgc_db_per_mm: 0.05,
        }
    }
}

fn check_range(field: &str, r: Range, min: f64, max: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= min && r[1] <= max) {
        return Err(Error::invalid(format!(
            "{field}: range [{}, {}] must be ordered and within [{min}, {max}]",
            r[0], r[1]
        )));
    }
    Ok(())
}

impl ClassRecipe {
    fn validate(&self, class: &str) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid(format!("{class}.count must be at least 1")));
        }
        check_range(&format!("{class}.lesion_m"), self.lesion_m, crate::nakagami::M_MIN, crate::nakagami::M_MAX)?;
        check_range(&format!("{class}.lesion_omega"), self.lesion_omega, f64::MIN_POSITIVE, f64::MAX)?;
        match &self.shape {
            ShapeRecipe::Ellipse { semi_x_mm, semi_y_mm } => {
                check_range(&format!("{class}.shape.semi_x_mm"), *semi_x_mm, f64::MIN_POSITIVE, f64::MAX)?;
                check_range(&format!("{class}.shape.semi_y_mm"), *semi_y_mm, f64::MIN_POSITIVE, f64::MAX)?;
            }
            ShapeRecipe::Star {
                radius_mm,
                spikes,
                amplitude,
            } => {
                check_range(&format!("{class}.shape.radius_mm"), *radius_mm, f64::MIN_POSITIVE, f64::MAX)?;
                check_range(&format!("{class}.shape.amplitude"), *amplitude, 0.0, 1.0)?;
                if spikes[0] < 1 || spikes[0] > spikes[1] {
                    return Err(Error::invalid(format!("{class}.shape.spikes: need 1 <= lo <= hi")));
                }
            }
        }
        if let Some(s) = self.shadow {
            check_range(&format!("{class}.shadow"), s, f64::MIN_POSITIVE, 1.0)?;
        }
        Ok(())
    }

    /// Largest bounding box the recipe can produce, as (width, height) in mm.
    fn max_extent(&self) -> (f64, f64) {
        match &self.shape {
            ShapeRecipe::Ellipse { semi_x_mm, semi_y_mm } => (2.0 * semi_x_mm[1], 2.0 * semi_y_mm[1]),
            ShapeRecipe::Star { radius_mm, amplitude, .. } => {
                let d = 2.0 * radius_mm[1] * (1.0 + amplitude[1]);
                (d, d)
            }
        }
    }
}

impl CohortSpec {
    pub fn axial_spacing_mm(&self) -> f64 {
        axial_spacing_for(self.sampling_rate_hz, self.sound_speed_m_s)
    }

    pub fn total(&self) -> usize {
        self.benign.count + self.malignant.count
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sampling_rate_hz", self.sampling_rate_hz),
            ("sound_speed_m_s", self.sound_speed_m_s),
            ("lateral_spacing_mm", self.lateral_spacing_mm),
            ("carrier_hz", self.carrier_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.tgc_db_per_mm.is_finite() {
            return Err(Error::invalid("tgc_db_per_mm must be finite"));
        }
        if self.rows < 16 || self.cols < 16 {
            return Err(Error::invalid("rows and cols must be at least 16"));
        }
        check_range("background_m", self.background_m, crate::nakagami::M_MIN, crate::nakagami::M_MAX)?;
        check_range("background_omega", self.background_omega, f64::MIN_POSITIVE, f64::MAX)?;
        self.benign.validate("benign")?;
        self.malignant.validate("malignant")?;
        let width = (self.cols - 1) as f64 * self.lateral_spacing_mm - 2.0 * MAX_WINDOW_MM;
        let depth = (self.rows - 1) as f64 * self.axial_spacing_mm() - 2.0 * MAX_WINDOW_MM;
        for (class, recipe) in [("benign", &self.benign), ("malignant", &self.malignant)] {
            let (w, h) = recipe.max_extent();
            if 3.0 * w > width || 2.0 * h > depth {
                return Err(Error::invalid(format!(
                    "{class}.shape: lesions up to {w:.2} x {h:.2} mm need a {:.2} x {:.2} mm region layout, image allows {width:.2} x {depth:.2}",
                    3.0 * w,
                    2.0 * h
                )));
            }
        }
        Ok(())
    }

    fn draw(rng: &mut ChaCha8Rng, r: Range) -> f64 {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.random_range(r[0]..=r[1])
        }
    }

    /// Scene of mass `index`: benign masses first, then malignant. The
    /// random stream depends only on (seed, index).
    pub fn scene(&self, index: usize) -> Result<SceneSpec> {
        if index >= self.total() {
            return Err(Error::invalid(format!("mass index {index} outside cohort of {}", self.total())));
        }
        let (label, recipe) = if index < self.benign.count {
            (Label::Benign, &self.benign)
        } else {
            (Label::Malignant, &self.malignant)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let background = NakagamiParams::new(
            Self::draw(&mut rng, self.background_m),
            Self::draw(&mut rng, self.background_omega),
        )?;
        let lesion = NakagamiParams::new(
            Self::draw(&mut rng, recipe.lesion_m),
            Self::draw(&mut rng, recipe.lesion_omega),
        )?;
        let shape = match &recipe.shape {
            ShapeRecipe::Ellipse { semi_x_mm, semi_y_mm } => ContourShape::Ellipse {
                semi_x: Self::draw(&mut rng, *semi_x_mm),
                semi_y: Self::draw(&mut rng, *semi_y_mm),
            },
            ShapeRecipe::Star {
                radius_mm,
                spikes,
                amplitude,
            } => ContourShape::Star {
                radius: Self::draw(&mut rng, *radius_mm),
                spikes: rng.random_range(spikes[0]..=spikes[1]),
                amplitude: Self::draw(&mut rng, *amplitude),
            },
        };
        let shadow = recipe.shadow.map(|r| Self::draw(&mut rng, r));
        let seed = rng.random::<u64>();
        // The region layout is symmetric about the lesion centre, so a centred
        // lesion leaves equal clearance on every side.
        let width = (self.cols - 1) as f64 * self.lateral_spacing_mm;
        let depth = (self.rows - 1) as f64 * self.axial_spacing_mm();
        Ok(SceneSpec {
            mass_id: format!("mass_{index:03}"),
            label,
            rows: self.rows,
            cols: self.cols,
            axial_spacing_mm: self.axial_spacing_mm(),
            lateral_spacing_mm: self.lateral_spacing_mm,
            background,
            lesion,
            shape,
            center_mm: Point::new(width / 2.0, depth / 2.0),
            shadow,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub mass_id: String,
    pub label: Label,
    /// Envelope (`.env.raw`) or RF (`.rfraw`) file, relative to the cohort directory.
    pub image: String,
    pub annotation: String,
    pub background: NakagamiParams,
    pub lesion: NakagamiParams,
    pub shape: ContourShape,
    pub center_mm: Point,
    pub shadow: Option<f64>,
    pub scene_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub spec: CohortSpec,
    pub masses: Vec<MassRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// RF frame whose analytic envelope approximates `env`: each A-line is the
/// envelope on a cosine carrier, multiplied by a depth gain ramp.
pub fn modulate_rf(env: &EnvelopeImage, spec: &CohortSpec) -> Result<RfFrame> {
    let (rows, cols) = (env.rows(), env.cols());
    let gain: Vec<f64> = (0..rows)
        .map(|r| 10f64.powf(spec.tgc_db_per_mm * r as f64 * env.axial_spacing_mm() / 20.0))
        .collect();
    let w = 2.0 * PI * spec.carrier_hz / spec.sampling_rate_hz;
    let samples = Array2::from_shape_fn((rows, cols), |(r, c)| env.values()[[r, c]] * (w * r as f64).cos() * gain[r]);
    RfFrame::new(
        samples,
        spec.sampling_rate_hz,
        spec.sound_speed_m_s,
        env.axial_spacing_mm(),
        env.lateral_spacing_mm(),
        gain,
    )
}

/// Writes every mass and `manifest.json` into `out_dir`. Masses are
/// generated in parallel; the output does not depend on the thread count.
pub fn generate_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<CohortManifest> {
    spec.validate()?;
    let scenes = (0..spec.total()).map(|i| spec.scene(i)).collect::<Result<Vec<_>>>()?;
    // Check every scene's geometry before touching the filesystem.
    for s in &scenes {
        derive_rois(&s.contour()?, s.usable_extent())
            .map_err(|e| Error::invalid(format!("{}: {e}", s.mass_id)))?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let masses = scenes
        .par_iter()
        .map(|s| write_mass(s, spec, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let manifest = CohortManifest {
        spec: spec.clone(),
        masses,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn write_mass(s: &SceneSpec, spec: &CohortSpec, out_dir: &Path) -> Result<MassRecord> {
    let (env, ann) = synthesize_scene(s)?;
    let image = if spec.rf_mode {
        let name = format!("{}.rfraw", s.mass_id);
        write_rf_container(&modulate_rf(&env, spec)?, &out_dir.join(&name), RasterLayout::RowMajor)?;
        name
    } else {
        let name = format!("{}.env.raw", s.mass_id);
        write_envelope(&env, &out_dir.join(&name))?;
        name
    };
    let annotation = format!("{}.ann.json", s.mass_id);
    save_annotations(&ann, &out_dir.join(&annotation))?;
    Ok(MassRecord {
        mass_id: s.mass_id.clone(),
        label: s.label,
        image,
        annotation,
        background: s.background,
        lesion: s.lesion,
        shape: s.shape,
        center_mm: s.center_mm,
        shadow: s.shadow,
        scene_seed: s.seed,
    })
}

/// Reads `manifest.json` from a cohort directory.
pub fn read_manifest(dir: &Path) -> Result<CohortManifest> {
    crate::io::read_json(&dir.join(MANIFEST_FILE))
}

impl MassRecord {
    pub fn image_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.image)
    }

    pub fn annotation_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.annotation)
    }
}
