//! On-disk formats. Field names and layouts are documented in `docs/FORMATS.md`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon};
use crate::model::{
    canonical_feature_names, canonical_index, AnnotationSet, EnvelopeImage, FeatureTable, FeatureVector, Label,
    MapGeometry, MapKind, ModelArtifact, ParametricImage, RegionName, RfFrame, FEATURE_COUNT,
};

/// Serde adapter for reals that may be infinite: finite values are plain JSON
/// numbers, infinities are the strings `"inf"` and `"-inf"`.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            Err(serde::ser::Error::custom("NaN is not representable"))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected a number, got `{s}`"))),
        }
    }
}

/// Text form used in CSV files: shortest round-trip decimal, `inf` / `-inf` for infinities.
pub fn format_real(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push(b'\n');
    write_file(path, &text)
}

/// Replaces a compound suffix such as `.rfraw` with another one.
fn swap_suffix(path: &Path, from: &[&str], to: &str) -> PathBuf {
    let s = path.to_string_lossy();
    for suffix in from {
        if let Some(stem) = s.strip_suffix(suffix) {
            return PathBuf::from(format!("{stem}{to}"));
        }
    }
    PathBuf::from(format!("{s}{to}"))
}

fn f32_le_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn f32_le_values(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 4 {
        return Err(Error::parse(
            path,
            format!(
                "dimension mismatch: metadata declares {expected} samples ({} bytes), raster holds {} bytes",
                expected * 4,
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Sample order inside an `.rfraw` raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RasterLayout {
    /// One axial row after another.
    #[default]
    RowMajor,
    /// One complete A-line (column) after another.
    LineMajor,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RfMeta {
    rows: usize,
    cols: usize,
    #[serde(default)]
    layout: RasterLayout,
    sampling_rate_hz: f64,
    sound_speed_m_s: f64,
    axial_spacing_mm: f64,
    lateral_spacing_mm: f64,
    tgc_gain: Vec<f64>,
}

fn rf_paths(path: &Path) -> (PathBuf, PathBuf) {
    let raw = swap_suffix(path, &[".rfraw", ".rfmeta.json"], ".rfraw");
    let meta = swap_suffix(&raw, &[".rfraw"], ".rfmeta.json");
    (raw, meta)
}

/// Reads an `.rfraw` raster and its `.rfmeta.json` sidecar. `path` may name
/// either file.
pub fn load_rf_container(path: &Path) -> Result<RfFrame> {
    load_rf_with_layout(path).map(|(f, _)| f)
}

/// Like [`load_rf_container`], also reporting the raster layout found on disk.
pub fn load_rf_with_layout(path: &Path) -> Result<(RfFrame, RasterLayout)> {
    let (raw_path, meta_path) = rf_paths(path);
    let meta: RfMeta = read_json(&meta_path)?;
    let bytes = read_bytes(&raw_path)?;
    let values = f32_le_values(&raw_path, &bytes, meta.rows * meta.cols)?;
    let samples = match meta.layout {
        RasterLayout::RowMajor => Array2::from_shape_vec((meta.rows, meta.cols), values),
        RasterLayout::LineMajor => {
            Array2::from_shape_vec((meta.cols, meta.rows), values).map(|a| a.reversed_axes().as_standard_layout().to_owned())
        }
    }
    .map_err(|e| Error::parse(&raw_path, e.to_string()))?;
    let frame = RfFrame::new(
        samples,
        meta.sampling_rate_hz,
        meta.sound_speed_m_s,
        meta.axial_spacing_mm,
        meta.lateral_spacing_mm,
        meta.tgc_gain,
    )
    .map_err(|e| Error::parse(&meta_path, e.to_string()))?;
    Ok((frame, meta.layout))
}

/// Writes `frame` as an `.rfraw` + `.rfmeta.json` pair. Samples are narrowed to f32.
pub fn write_rf_container(frame: &RfFrame, path: &Path, layout: RasterLayout) -> Result<()> {
    let (raw_path, meta_path) = rf_paths(path);
    let s = frame.samples();
    let bytes = match layout {
        RasterLayout::RowMajor => f32_le_bytes(s.iter().copied()),
        RasterLayout::LineMajor => f32_le_bytes(s.t().iter().copied()),
    };
    let meta = RfMeta {
        rows: frame.rows(),
        cols: frame.cols(),
        layout,
        sampling_rate_hz: frame.sampling_rate_hz(),
        sound_speed_m_s: frame.sound_speed_m_s(),
        axial_spacing_mm: frame.axial_spacing_mm(),
        lateral_spacing_mm: frame.lateral_spacing_mm(),
        tgc_gain: frame.tgc_gain().to_vec(),
    };
    write_file(&raw_path, &bytes)?;
    write_json(&meta_path, &meta)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvMeta {
    rows: usize,
    cols: usize,
    axial_spacing_mm: f64,
    lateral_spacing_mm: f64,
}

fn env_paths(path: &Path) -> (PathBuf, PathBuf) {
    let raw = swap_suffix(path, &[".env.raw", ".env.json"], ".env.raw");
    let meta = swap_suffix(&raw, &[".env.raw"], ".env.json");
    (raw, meta)
}

/// Writes an envelope as a row-major f32 `.env.raw` raster plus `.env.json` sidecar.
pub fn write_envelope(env: &EnvelopeImage, path: &Path) -> Result<()> {
    let (raw_path, meta_path) = env_paths(path);
    write_file(&raw_path, &f32_le_bytes(env.values().iter().copied()))?;
    write_json(
        &meta_path,
        &EnvMeta {
            rows: env.rows(),
            cols: env.cols(),
            axial_spacing_mm: env.axial_spacing_mm(),
            lateral_spacing_mm: env.lateral_spacing_mm(),
        },
    )
}

pub fn read_envelope(path: &Path) -> Result<EnvelopeImage> {
    let (raw_path, meta_path) = env_paths(path);
    let meta: EnvMeta = read_json(&meta_path)?;
    let values = f32_le_values(&raw_path, &read_bytes(&raw_path)?, meta.rows * meta.cols)?;
    let values = Array2::from_shape_vec((meta.rows, meta.cols), values).map_err(|e| Error::parse(&raw_path, e.to_string()))?;
    EnvelopeImage::new(values, meta.axial_spacing_mm, meta.lateral_spacing_mm)
        .map_err(|e| Error::parse(&meta_path, e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PmapMeta {
    kind: MapKind,
    rows: usize,
    cols: usize,
    origin_offset_px: [f64; 2],
    envelope_spacing_mm: [f64; 2],
    pixel_spacing_mm: [f64; 2],
    window_mm: f64,
}

/// Output encodings for a parametric image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// `.pmap.raw` row-major f32 raster with a `.pmap.json` sidecar.
    RawF32,
    /// Binary 8-bit PGM (P5), min-max scaled, for viewing only.
    Pgm8,
}

fn pmap_paths(path: &Path) -> (PathBuf, PathBuf) {
    let raw = swap_suffix(path, &[".pmap.raw", ".pmap.json"], ".pmap.raw");
    let meta = swap_suffix(&raw, &[".pmap.raw"], ".pmap.json");
    (raw, meta)
}

/// Writes a parametric image. For [`ImageFormat::RawF32`] values are stored as
/// f32, so the file reproduces `v as f32` exactly and re-exporting a loaded
/// image yields identical bytes.
pub fn export_image(img: &ParametricImage, path: &Path, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::RawF32 => {
            let (raw_path, meta_path) = pmap_paths(path);
            let g = img.geometry();
            write_file(&raw_path, &f32_le_bytes(img.values().iter().copied()))?;
            write_json(
                &meta_path,
                &PmapMeta {
                    kind: img.kind(),
                    rows: g.rows,
                    cols: g.cols,
                    origin_offset_px: [g.origin_offset_px.0, g.origin_offset_px.1],
                    envelope_spacing_mm: [g.envelope_spacing_mm.0, g.envelope_spacing_mm.1],
                    pixel_spacing_mm: [g.pixel_spacing_mm.0, g.pixel_spacing_mm.1],
                    window_mm: img.window_mm(),
                },
            )
        }
        ImageFormat::Pgm8 => {
            let (rows, cols) = img.values().dim();
            let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
            out.extend(quantize_u8(img.values()));
            write_file(path, &out)
        }
    }
}

/// Min-max linear quantization to 0..=255; a constant image maps to 128.
pub fn quantize_u8(values: &Array2<f64>) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn read_parametric_image(path: &Path) -> Result<ParametricImage> {
    let (raw_path, meta_path) = pmap_paths(path);
    let meta: PmapMeta = read_json(&meta_path)?;
    let mut values = f32_le_values(&raw_path, &read_bytes(&raw_path)?, meta.rows * meta.cols)?;
    if meta.kind == MapKind::AlphaPhase {
        // The phase only takes the values 0 and pi/2; f32 storage rounds pi/2 upwards.
        for v in &mut values {
            if (*v - std::f64::consts::FRAC_PI_2).abs() < 1e-6 {
                *v = std::f64::consts::FRAC_PI_2;
            }
        }
    }
    let values = Array2::from_shape_vec((meta.rows, meta.cols), values).map_err(|e| Error::parse(&raw_path, e.to_string()))?;
    let geometry = MapGeometry {
        rows: meta.rows,
        cols: meta.cols,
        origin_offset_px: (meta.origin_offset_px[0], meta.origin_offset_px[1]),
        envelope_spacing_mm: (meta.envelope_spacing_mm[0], meta.envelope_spacing_mm[1]),
        pixel_spacing_mm: (meta.pixel_spacing_mm[0], meta.pixel_spacing_mm[1]),
    };
    ParametricImage::new(meta.kind, values, geometry, meta.window_mm).map_err(|e| Error::parse(&meta_path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    mass_id: String,
    label: String,
    lesion_contour: Vec<Point>,
    regions: std::collections::BTreeMap<String, Vec<Point>>,
}

fn annotation_from_file(f: AnnotationFile) -> Result<AnnotationSet> {
    let label: Label = f.label.parse()?;
    let lesion = Polygon::new(f.lesion_contour).map_err(|e| Error::invalid(format!("lesion_contour: {e}")))?;
    let mut regions = Vec::with_capacity(9);
    for (name, pts) in f.regions {
        let region = RegionName::from_name(&name).ok_or_else(|| Error::invalid(format!("unknown region `{name}`")))?;
        let poly = Polygon::new(pts).map_err(|e| Error::invalid(format!("region {name}: {e}")))?;
        regions.push((region, poly));
    }
    AnnotationSet::new(f.mass_id, label, lesion, regions)
}

/// Reads an `.ann.json` file.
pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let f: AnnotationFile = read_json(path)?;
    annotation_from_file(f).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn save_annotations(ann: &AnnotationSet, path: &Path) -> Result<()> {
    let f = AnnotationFile {
        mass_id: ann.mass_id().to_string(),
        label: ann.label().to_string(),
        lesion_contour: ann.lesion_contour().vertices().to_vec(),
        regions: ann
            .regions()
            .map(|(r, p)| (r.as_str().to_string(), p.vertices().to_vec()))
            .collect(),
    };
    write_json(path, &f)
}

/// Writes the cohort feature table: `mass_id,label` followed by the 72
/// canonical columns.
pub fn write_feature_table(table: &FeatureTable, path: &Path) -> Result<()> {
    write_file(path, &feature_table_bytes(table)?)
}

fn feature_table_bytes(table: &FeatureTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["mass_id", "label"]
        .into_iter()
        .chain(canonical_feature_names().iter().map(String::as_str));
    w.write_record(header).map_err(|e| Error::invalid(e.to_string()))?;
    for row in &table.rows {
        let mut rec = vec![row.mass_id().to_string(), row.label().to_string()];
        rec.extend(row.values().iter().map(|v| format_real(*v)));
        w.write_record(&rec).map_err(|e| Error::invalid(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// Appends one row, creating the file with its header when absent.
pub fn append_feature_row(row: &FeatureVector, path: &Path) -> Result<()> {
    let mut table = if path.exists() { read_feature_table(path)? } else { FeatureTable::default() };
    if table.rows.iter().any(|r| r.mass_id() == row.mass_id()) {
        return Err(Error::invalid(format!("mass `{}` already present in {}", row.mass_id(), path.display())));
    }
    table.rows.push(row.clone());
    let bytes = feature_table_bytes(&table)?;
    let tmp = path.with_extension("csv.tmp");
    write_file(&tmp, &bytes)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a feature table; feature columns may come in any order and are
/// normalized to canonical order.
pub fn read_feature_table(path: &Path) -> Result<FeatureTable> {
    let bytes = read_bytes(path)?;
    parse_feature_table(&bytes).map_err(|e| match e {
        Error::Invalid(m) => Error::parse(path, m),
        other => other,
    })
}

fn parse_feature_table(bytes: &[u8]) -> Result<FeatureTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers().map_err(|e| Error::invalid(e.to_string()))?.clone();
    if header.len() != FEATURE_COUNT + 2 {
        return Err(Error::invalid(format!(
            "expected {} columns, found {}",
            FEATURE_COUNT + 2,
            header.len()
        )));
    }
    if &header[0] != "mass_id" || &header[1] != "label" {
        return Err(Error::invalid("first two columns must be `mass_id,label`"));
    }
    let mut column_slot = Vec::with_capacity(FEATURE_COUNT);
    let mut seen = [false; FEATURE_COUNT];
    for name in header.iter().skip(2) {
        let idx = canonical_index(name).ok_or_else(|| Error::invalid(format!("unknown feature column `{name}`")))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::invalid(format!("duplicate feature column `{name}`")));
        }
        column_slot.push(idx);
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::invalid(e.to_string()))?;
        if rec.len() != FEATURE_COUNT + 2 {
            return Err(Error::invalid(format!("row {}: expected {} columns", line + 1, FEATURE_COUNT + 2)));
        }
        let label: Label = rec[1].parse()?;
        let mut values = [0.0; FEATURE_COUNT];
        for (field, &slot) in rec.iter().skip(2).zip(&column_slot) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("row {}: `{field}` is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(Error::invalid(format!("row {}: non-finite value `{field}`", line + 1)));
            }
            values[slot] = v;
        }
        rows.push(FeatureVector::new(&rec[0], label, values)?);
    }
    Ok(FeatureTable::new(rows))
}

pub fn save_model(model: &ModelArtifact, path: &Path) -> Result<()> {
    model.validate()?;
    write_json(path, model)
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureScale, Orientation};
    use proptest::prelude::*;

    fn sample_model(k: usize) -> ModelArtifact {
        ModelArtifact {
            selected_features: (0..k).map(|i| canonical_feature_names()[i].clone()).collect(),
            standardizer: (0..k).map(|i| FeatureScale { mean: i as f64 * 0.3, sd: 1.0 + i as f64 }).collect(),
            weights: (0..k).map(|i| (i as f64 - 2.0) * 0.7).collect(),
            bias: -0.25,
            decision_threshold: 0.726128,
            orientation: Orientation::HigherScoreMeansMalignant,
        }
    }

    #[test]
    fn rf_round_trip_4x2() {
        let dir = tempfile::tempdir().unwrap();
        let samples = Array2::from_shape_fn((4, 2), |(r, c)| (r * 2 + c) as f64 - 3.5);
        let frame = RfFrame::new(samples, 20e6, 1540.0, 0.0385, 0.2, vec![1.0, 1.5, 2.0, 2.5]).unwrap();
        let p = dir.path().join("a.rfraw");
        write_rf_container(&frame, &p, RasterLayout::RowMajor).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 8 * 4);
        let back = load_rf_container(&dir.path().join("a.rfmeta.json")).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn rf_tgc_length_mismatch_in_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.rfraw");
        write_file(&p, &[0u8; 32]).unwrap();
        let meta = RfMeta {
            rows: 4,
            cols: 2,
            layout: RasterLayout::RowMajor,
            sampling_rate_hz: 20e6,
            sound_speed_m_s: 1540.0,
            axial_spacing_mm: 0.0385,
            lateral_spacing_mm: 0.2,
            tgc_gain: vec![1.0; 3],
        };
        write_json(&dir.path().join("b.rfmeta.json"), &meta).unwrap();
        let err = load_rf_container(&p).unwrap_err();
        assert!(err.to_string().contains("tgc length mismatch"), "{err}");
    }

    #[test]
    fn rf_byte_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let frame = RfFrame::new(Array2::zeros((4, 2)), 20e6, 1540.0, 0.0385, 0.2, vec![1.0; 4]).unwrap();
        let p = dir.path().join("c.rfraw");
        write_rf_container(&frame, &p, RasterLayout::RowMajor).unwrap();
        write_file(&p, &[0u8; 28]).unwrap();
        assert!(load_rf_container(&p).unwrap_err().to_string().contains("dimension mismatch"));
        assert!(matches!(load_rf_container(&dir.path().join("nope.rfraw")), Err(Error::MissingFile(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rf_file_bytes_survive_load_write(
            rows in 1usize..12,
            cols in 1usize..6,
            seed in any::<u64>(),
            line_major in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1e3..1e3f32) as f64);
            let gains: Vec<f64> = (0..rows).map(|_| rng.random_range(0.5..4.0)).collect();
            let layout = if line_major { RasterLayout::LineMajor } else { RasterLayout::RowMajor };
            let frame = RfFrame::new(samples, 20e6, 1540.0, 0.0385, 0.15, gains).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (a, b) = (dir.path().join("a.rfraw"), dir.path().join("b.rfraw"));
            write_rf_container(&frame, &a, layout).unwrap();
            let (loaded, found) = load_rf_with_layout(&a).unwrap();
            prop_assert_eq!(found, layout);
            write_rf_container(&loaded, &b, found).unwrap();
            prop_assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
            prop_assert_eq!(
                fs::read(dir.path().join("a.rfmeta.json")).unwrap(),
                fs::read(dir.path().join("b.rfmeta.json")).unwrap()
            );
        }

        #[test]
        fn feature_table_round_trip(seed in any::<u64>(), n in 0usize..5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows = (0..n)
                .map(|i| {
                    let mut v = [0.0; FEATURE_COUNT];
                    for x in &mut v {
                        *x = rng.random_range(-1e6..1e6) * 10f64.powi(rng.random_range(-12..6));
                    }
                    let label = if rng.random_bool(0.5) { Label::Benign } else { Label::Malignant };
                    FeatureVector::new(format!("mass-{i}"), label, v).unwrap()
                })
                .collect();
            let t = FeatureTable::new(rows);
            let back = parse_feature_table(&feature_table_bytes(&t).unwrap()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn model_round_trip_bit_exact(seed in any::<u64>(), k in 1usize..10, inf in 0u8..3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut m = sample_model(k);
            for s in &mut m.standardizer {
                s.mean = rng.random_range(-1e3..1e3);
                s.sd = rng.random_range(1e-6..1e3);
            }
            for w in &mut m.weights {
                *w = rng.random::<f64>() * 1e-3 - 5e-4;
            }
            m.bias = rng.random_range(-10.0..10.0);
            m.decision_threshold = match inf {
                0 => rng.random_range(-3.0..3.0),
                1 => f64::INFINITY,
                _ => f64::NEG_INFINITY,
            };
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.model.json");
            save_model(&m, &p).unwrap();
            let back = load_model(&p).unwrap();
            prop_assert_eq!(back.bias.to_bits(), m.bias.to_bits());
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn one_row_table_has_74_columns() {
        let row = FeatureVector::new("x", Label::Benign, [1.5; FEATURE_COUNT]).unwrap();
        let bytes = feature_table_bytes(&FeatureTable::new(vec![row])).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        for line in text.lines() {
            assert_eq!(line.split(',').count(), 74);
        }
    }

    #[test]
    fn shuffled_columns_are_reordered() {
        let mut values = [0.0; FEATURE_COUNT];
        for (i, v) in values.iter_mut().enumerate() {
            *v = i as f64;
        }
        let names = canonical_feature_names();
        let mut order: Vec<usize> = (0..FEATURE_COUNT).rev().collect();
        order.swap(3, 40);
        let mut text = String::from("mass_id,label");
        for &i in &order {
            text.push(',');
            text.push_str(&names[i]);
        }
        text.push_str("\nm1,malignant");
        for &i in &order {
            text.push_str(&format!(",{}", values[i]));
        }
        text.push('\n');
        let t = parse_feature_table(text.as_bytes()).unwrap();
        assert_eq!(t.rows[0].values(), &values);
        assert_eq!(t.rows[0].label(), Label::Malignant);
    }

    #[test]
    fn table_errors() {
        let names = canonical_feature_names();
        let header = format!("mass_id,label,{}", names.join(","));
        let ok_row = format!("a,benign{}", ",1".repeat(FEATURE_COUNT));
        assert!(parse_feature_table(format!("{header}\n{ok_row}\n").as_bytes()).is_ok());
        let short = format!("mass_id,label,{}", names[..71].join(","));
        assert!(parse_feature_table(short.as_bytes()).unwrap_err().to_string().contains("expected 74 columns"));
        let unknown = header.replace("morph.solidity", "morph.mystery");
        assert!(parse_feature_table(unknown.as_bytes()).unwrap_err().to_string().contains("unknown feature"));
        let nan_row = ok_row.replacen(",1", ",NaN", 1);
        assert!(parse_feature_table(format!("{header}\n{nan_row}\n").as_bytes())
            .unwrap_err()
            .to_string()
            .contains("non-finite"));
    }

    #[test]
    fn five_feature_model_round_trips_and_zero_sd_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.model.json");
        let m = sample_model(5);
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
        let text = fs::read_to_string(&p).unwrap().replacen("\"sd\": 1.0", "\"sd\": 0.0", 1);
        fs::write(&p, text).unwrap();
        assert!(load_model(&p).unwrap_err().to_string().contains("sd"));
    }

    #[test]
    fn pgm_endpoints_and_constant() {
        let a = ndarray::array![[0.0, 1.0]];
        assert_eq!(quantize_u8(&a), vec![0, 255]);
        let c = ndarray::array![[3.0, 3.0], [3.0, 3.0]];
        assert_eq!(quantize_u8(&c), vec![128; 4]);
    }

    proptest! {
        #[test]
        fn pgm_preserves_order(mut v in prop::collection::vec(-1e3f64..1e3, 2..64)) {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let q = quantize_u8(&Array2::from_shape_vec((1, n), v).unwrap());
            prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
