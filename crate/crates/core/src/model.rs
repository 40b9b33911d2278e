//! Shared domain types. Every constructor validates its invariants, so a value
//! of any of these types is known-good wherever it is received.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon};

/// Ground-truth class of a mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malignant,
}

impl Label {
    /// SVM target: malignant is the positive class.
    pub fn sign(self) -> f64 {
        match self {
            Label::Benign => -1.0,
            Label::Malignant => 1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Malignant
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Raw RF samples, one column per A-line.
#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    samples: Array2<f64>,
    sampling_rate_hz: f64,
    sound_speed_m_s: f64,
    axial_spacing_mm: f64,
    lateral_spacing_mm: f64,
    tgc_gain: Vec<f64>,
}

/// Axial sample spacing implied by the two-way travel time between samples.
pub fn axial_spacing_for(sampling_rate_hz: f64, sound_speed_m_s: f64) -> f64 {
    sound_speed_m_s / (2.0 * sampling_rate_hz) * 1000.0
}

impl RfFrame {
    pub fn new(
        samples: Array2<f64>,
        sampling_rate_hz: f64,
        sound_speed_m_s: f64,
        axial_spacing_mm: f64,
        lateral_spacing_mm: f64,
        tgc_gain: Vec<f64>,
    ) -> Result<Self> {
        let (rows, cols) = samples.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("RF frame must have at least one row and one column"));
        }
        for (name, v) in [
            ("sampling_rate_hz", sampling_rate_hz),
            ("sound_speed_m_s", sound_speed_m_s),
            ("axial_spacing_mm", axial_spacing_mm),
            ("lateral_spacing_mm", lateral_spacing_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("non-positive spacing: {name} = {v}")));
            }
        }
        if tgc_gain.len() != rows {
            return Err(Error::invalid(format!(
                "tgc length mismatch: {} gains for {rows} rows",
                tgc_gain.len()
            )));
        }
        if let Some((r, g)) = tgc_gain.iter().enumerate().find(|(_, g)| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::invalid(format!("tgc gain at row {r} must be positive, got {g}")));
        }
        let expected = axial_spacing_for(sampling_rate_hz, sound_speed_m_s);
        if ((axial_spacing_mm - expected) / expected).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "axial_spacing_mm {axial_spacing_mm} inconsistent with sound speed and sampling rate (expected {expected})"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("RF samples must be finite"));
        }
        Ok(RfFrame {
            samples,
            sampling_rate_hz,
            sound_speed_m_s,
            axial_spacing_mm,
            lateral_spacing_mm,
            tgc_gain,
        })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn rows(&self) -> usize {
        self.samples.nrows()
    }

    pub fn cols(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn sound_speed_m_s(&self) -> f64 {
        self.sound_speed_m_s
    }

    pub fn axial_spacing_mm(&self) -> f64 {
        self.axial_spacing_mm
    }

    pub fn lateral_spacing_mm(&self) -> f64 {
        self.lateral_spacing_mm
    }

    pub fn tgc_gain(&self) -> &[f64] {
        &self.tgc_gain
    }

    /// Same acquisition metadata, new samples (shape must match).
    pub fn with_samples(&self, samples: Array2<f64>) -> Result<RfFrame> {
        if samples.dim() != self.samples.dim() {
            return Err(Error::invalid("replacement samples change the frame shape"));
        }
        RfFrame::new(
            samples,
            self.sampling_rate_hz,
            self.sound_speed_m_s,
            self.axial_spacing_mm,
            self.lateral_spacing_mm,
            self.tgc_gain.clone(),
        )
    }
}

/// Envelope magnitude on the RF sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeImage {
    values: Array2<f64>,
    axial_spacing_mm: f64,
    lateral_spacing_mm: f64,
}

impl EnvelopeImage {
    pub fn new(values: Array2<f64>, axial_spacing_mm: f64, lateral_spacing_mm: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("envelope image is empty"));
        }
        if !(axial_spacing_mm > 0.0 && lateral_spacing_mm > 0.0) {
            return Err(Error::invalid("non-positive spacing in envelope image"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("envelope values must be finite and non-negative"));
        }
        Ok(EnvelopeImage {
            values,
            axial_spacing_mm,
            lateral_spacing_mm,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn axial_spacing_mm(&self) -> f64 {
        self.axial_spacing_mm
    }

    pub fn lateral_spacing_mm(&self) -> f64 {
        self.lateral_spacing_mm
    }
}

/// The seven Nakagami-derived raster kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    M,
    Omega,
    PreAlpha,
    AlphaAbs,
    AlphaPhase,
    AlphaReal,
    AlphaImag,
}

impl MapKind {
    pub const ALL: [MapKind; 7] = [
        MapKind::M,
        MapKind::Omega,
        MapKind::PreAlpha,
        MapKind::AlphaAbs,
        MapKind::AlphaPhase,
        MapKind::AlphaReal,
        MapKind::AlphaImag,
    ];

    /// Lower-case tag used in feature names and file names.
    pub fn tag(self) -> &'static str {
        match self {
            MapKind::M => "m",
            MapKind::Omega => "omega",
            MapKind::PreAlpha => "pre_alpha",
            MapKind::AlphaAbs => "alpha_abs",
            MapKind::AlphaPhase => "alpha_phase",
            MapKind::AlphaReal => "alpha_real",
            MapKind::AlphaImag => "alpha_imag",
        }
    }

    pub fn from_tag(tag: &str) -> Option<MapKind> {
        MapKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    fn check_value(self, v: f64) -> bool {
        use std::f64::consts::FRAC_PI_2;
        v.is_finite()
            && match self {
                MapKind::M | MapKind::Omega => v > 0.0,
                MapKind::PreAlpha => true,
                MapKind::AlphaAbs | MapKind::AlphaReal | MapKind::AlphaImag => v >= 0.0,
                MapKind::AlphaPhase => (0.0..=FRAC_PI_2).contains(&v),
            }
    }
}

/// Placement of a parametric raster relative to its source envelope.
///
/// Pixel `(p, q)` has its centre at envelope coordinates
/// `origin_offset_px + (p, q) * step`, i.e. at
/// `(origin_row * axial_spacing + p * pixel_axial, origin_col * lateral_spacing + q * pixel_lateral)` mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapGeometry {
    pub rows: usize,
    pub cols: usize,
    /// (row, col) of the first window centre, in envelope pixels.
    pub origin_offset_px: (f64, f64),
    /// (axial, lateral) spacing of the source envelope.
    pub envelope_spacing_mm: (f64, f64),
    /// (axial, lateral) spacing between parametric pixels.
    pub pixel_spacing_mm: (f64, f64),
}

impl MapGeometry {
    /// Centre of pixel `(row, col)` in mm.
    pub fn center_mm(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.origin_offset_px.1 * self.envelope_spacing_mm.1 + col as f64 * self.pixel_spacing_mm.1,
            self.origin_offset_px.0 * self.envelope_spacing_mm.0 + row as f64 * self.pixel_spacing_mm.0,
        )
    }

    /// Continuous (row, col) pixel coordinates of a point given in mm.
    pub fn to_pixel(&self, p: Point) -> (f64, f64) {
        (
            (p.y - self.origin_offset_px.0 * self.envelope_spacing_mm.0) / self.pixel_spacing_mm.0,
            (p.x - self.origin_offset_px.1 * self.envelope_spacing_mm.1) / self.pixel_spacing_mm.1,
        )
    }
}

/// One Nakagami parametric raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricImage {
    kind: MapKind,
    values: Array2<f64>,
    geometry: MapGeometry,
    window_mm: f64,
}

impl ParametricImage {
    pub fn new(kind: MapKind, values: Array2<f64>, geometry: MapGeometry, window_mm: f64) -> Result<Self> {
        if values.dim() != (geometry.rows, geometry.cols) || values.is_empty() {
            return Err(Error::invalid(format!(
                "{} map shape {:?} disagrees with geometry {}x{}",
                kind.tag(),
                values.dim(),
                geometry.rows,
                geometry.cols
            )));
        }
        if !(window_mm > 0.0) {
            return Err(Error::invalid("window_mm must be positive"));
        }
        let (ps, es) = (geometry.pixel_spacing_mm, geometry.envelope_spacing_mm);
        if !(ps.0 > 0.0 && ps.1 > 0.0 && es.0 > 0.0 && es.1 > 0.0) {
            return Err(Error::invalid("non-positive spacing in map geometry"));
        }
        if let Some(v) = values.iter().find(|v| !kind.check_value(**v)) {
            return Err(Error::invalid(format!("{} map holds out-of-range value {v}", kind.tag())));
        }
        Ok(ParametricImage {
            kind,
            values,
            geometry,
            window_mm,
        })
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn geometry(&self) -> &MapGeometry {
        &self.geometry
    }

    pub fn window_mm(&self) -> f64 {
        self.window_mm
    }

    /// Same kind and geometry, values multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<ParametricImage> {
        ParametricImage::new(self.kind, self.values.mapv(|v| v * c), self.geometry, self.window_mm)
    }
}

/// The nine analysis regions laid out around a lesion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionName {
    LeftAnterior,
    LeftLateral,
    LeftPosterior,
    TumorAnterior,
    Tumor,
    TumorPosterior,
    RightAnterior,
    RightLateral,
    RightPosterior,
}

impl RegionName {
    pub const ALL: [RegionName; 9] = [
        RegionName::LeftAnterior,
        RegionName::LeftLateral,
        RegionName::LeftPosterior,
        RegionName::TumorAnterior,
        RegionName::Tumor,
        RegionName::TumorPosterior,
        RegionName::RightAnterior,
        RegionName::RightLateral,
        RegionName::RightPosterior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionName::LeftAnterior => "left_anterior",
            RegionName::LeftLateral => "left_lateral",
            RegionName::LeftPosterior => "left_posterior",
            RegionName::TumorAnterior => "tumor_anterior",
            RegionName::Tumor => "tumor",
            RegionName::TumorPosterior => "tumor_posterior",
            RegionName::RightAnterior => "right_anterior",
            RegionName::RightLateral => "right_lateral",
            RegionName::RightPosterior => "right_posterior",
        }
    }

    pub fn from_name(s: &str) -> Option<RegionName> {
        RegionName::ALL.into_iter().find(|r| r.as_str() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Lesion outline plus the nine analysis regions, all in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    mass_id: String,
    label: Label,
    lesion_contour: Polygon,
    regions: [Polygon; 9],
}

impl AnnotationSet {
    /// Builds the set from named regions; every one of the nine names must
    /// appear exactly once and the `tumor` region must equal the lesion contour.
    pub fn new(
        mass_id: impl Into<String>,
        label: Label,
        lesion_contour: Polygon,
        regions: Vec<(RegionName, Polygon)>,
    ) -> Result<Self> {
        let mut slots: [Option<Polygon>; 9] = Default::default();
        for (name, poly) in regions {
            let slot = &mut slots[name.index()];
            if slot.is_some() {
                return Err(Error::invalid(format!("region `{}` given twice", name.as_str())));
            }
            *slot = Some(poly);
        }
        let missing: Vec<&str> = RegionName::ALL
            .iter()
            .filter(|r| slots[r.index()].is_none())
            .map(|r| r.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!("missing regions: {}", missing.join(", "))));
        }
        let regions = slots.map(|s| s.expect("checked above"));
        if regions[RegionName::Tumor.index()] != lesion_contour {
            return Err(Error::invalid("`tumor` region differs from the lesion contour"));
        }
        Ok(AnnotationSet {
            mass_id: mass_id.into(),
            label,
            lesion_contour,
            regions,
        })
    }

    pub fn mass_id(&self) -> &str {
        &self.mass_id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn lesion_contour(&self) -> &Polygon {
        &self.lesion_contour
    }

    pub fn region(&self, name: RegionName) -> &Polygon {
        &self.regions[name.index()]
    }

    pub fn regions(&self) -> impl Iterator<Item = (RegionName, &Polygon)> {
        RegionName::ALL.into_iter().map(move |r| (r, &self.regions[r.index()]))
    }
}

/// Contour-only feature names, in canonical order.
pub const MORPH_FEATURES: [&str; 9] = [
    "aspect_ratio",
    "compactness",
    "roundness",
    "convexity",
    "form_factor",
    "solidity",
    "fd_kolmogorov",
    "fd_minkowski",
    "fd_hausdorff",
];

/// Per-map feature names, in canonical order.
pub const MAP_FEATURES: [&str; 9] = [
    "echogenicity",
    "heterogeneity",
    "fnpa",
    "hurst",
    "shadow_normal",
    "relative_absorption",
    "cooc_contrast",
    "margin_area",
    "margin_gradient",
];

pub const FEATURE_COUNT: usize = MORPH_FEATURES.len() + MapKind::ALL.len() * MAP_FEATURES.len();

static CANONICAL: LazyLock<Vec<String>> = LazyLock::new(|| {
    let mut names: Vec<String> = MORPH_FEATURES.iter().map(|n| format!("morph.{n}")).collect();
    for kind in MapKind::ALL {
        names.extend(MAP_FEATURES.iter().map(|n| format!("{}.{n}", kind.tag())));
    }
    names
});

static CANONICAL_INDEX: LazyLock<BTreeMap<&'static str, usize>> = LazyLock::new(|| {
    CANONICAL.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
});

/// The 72 canonical feature names.
pub fn canonical_feature_names() -> &'static [String] {
    &CANONICAL
}

pub fn canonical_index(name: &str) -> Option<usize> {
    CANONICAL_INDEX.get(name).copied()
}

/// The 72 features of one mass.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    mass_id: String,
    label: Label,
    values: [f64; FEATURE_COUNT],
}

impl FeatureVector {
    pub fn new(mass_id: impl Into<String>, label: Label, values: [f64; FEATURE_COUNT]) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {} for feature {}",
                values[i],
                canonical_feature_names()[i]
            )));
        }
        Ok(FeatureVector {
            mass_id: mass_id.into(),
            label,
            values,
        })
    }

    pub fn mass_id(&self) -> &str {
        &self.mass_id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn values(&self) -> &[f64; FEATURE_COUNT] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        canonical_index(name).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        canonical_feature_names().iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

/// Feature vectors of a cohort.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub rows: Vec<FeatureVector>,
}

impl FeatureTable {
    pub fn new(rows: Vec<FeatureVector>) -> Self {
        FeatureTable { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Design matrix over all 72 canonical features.
    pub fn to_dataset(&self) -> Dataset {
        let mut x = Array2::zeros((self.rows.len(), FEATURE_COUNT));
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row.values.iter().enumerate() {
                x[[i, j]] = *v;
            }
        }
        Dataset {
            names: canonical_feature_names().to_vec(),
            x,
            labels: self.rows.iter().map(|r| r.label).collect(),
        }
    }
}

/// A labelled design matrix with named columns. Selection and classification
/// operate on this so they work for any feature set, not just the canonical 72.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub x: Array2<f64>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn new(names: Vec<String>, x: Array2<f64>, labels: Vec<Label>) -> Result<Self> {
        if x.ncols() != names.len() {
            return Err(Error::invalid(format!(
                "{} column names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        if x.nrows() != labels.len() {
            return Err(Error::invalid(format!("{} labels for {} rows", labels.len(), x.nrows())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset holds non-finite values"));
        }
        Ok(Dataset { names, x, labels })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Column subset by index, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Dataset {
        Dataset {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            x: self.x.select(ndarray::Axis(1), idx),
            labels: self.labels.clone(),
        }
    }

    /// Column subset by name.
    pub fn select_named(&self, names: &[String]) -> Result<Dataset> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::invalid(format!("missing feature `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&idx))
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.is_positive()).count();
        (self.labels.len() - pos, pos)
    }
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    HigherScoreMeansMalignant,
}

/// Everything needed to score a new mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelArtifact {
    pub selected_features: Vec<String>,
    pub standardizer: Vec<FeatureScale>,
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(with = "crate::io::extended_f64")]
    pub decision_threshold: f64,
    pub orientation: Orientation,
}

impl ModelArtifact {
    pub fn validate(&self) -> Result<()> {
        let k = self.selected_features.len();
        if self.weights.len() != k || self.standardizer.len() != k {
            return Err(Error::invalid(format!(
                "length mismatch: {k} features, {} weights, {} scales",
                self.weights.len(),
                self.standardizer.len()
            )));
        }
        if let Some((name, s)) = self
            .selected_features
            .iter()
            .zip(&self.standardizer)
            .find(|(_, s)| !(s.sd > 0.0 && s.sd.is_finite()))
        {
            return Err(Error::invalid(format!("feature `{name}` has sd {} (must be > 0)", s.sd)));
        }
        if self.standardizer.iter().any(|s| !s.mean.is_finite())
            || self.weights.iter().any(|w| !w.is_finite())
            || !self.bias.is_finite()
            || self.decision_threshold.is_nan()
        {
            return Err(Error::invalid("model holds non-finite parameters"));
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for ModelArtifact {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            selected_features: Vec<String>,
            standardizer: Vec<FeatureScale>,
            weights: Vec<f64>,
            bias: f64,
            #[serde(with = "crate::io::extended_f64")]
            decision_threshold: f64,
            orientation: Orientation,
        }
        let r = Raw::deserialize(d)?;
        let m = ModelArtifact {
            selected_features: r.selected_features,
            standardizer: r.standardizer,
            weights: r.weights,
            bias: r.bias,
            decision_threshold: r.decision_threshold,
            orientation: r.orientation,
        };
        m.validate().map_err(serde::de::Error::custom)?;
        Ok(m)
    }
}
