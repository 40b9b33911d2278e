//! Sliding-window Nakagami estimation over an envelope image.
//!
//! Every window's power sums are accumulated in one fixed order: each window
//! row is summed left to right, then the row sums are added top to bottom.
//! The fast engine shares the per-row sums between vertically overlapping
//! windows, so it reproduces the per-window reference bit for bit.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnvelopeImage, MapGeometry, MapKind, ParametricImage};
use crate::nakagami::{derive_alpha_set, NakagamiParams, M_MAX, MIN_SAMPLES};

pub use crate::io::{export_image, ImageFormat};

/// Smallest window extent along either axis, in pixels.
pub const MIN_WINDOW_PX: usize = 4;

/// Omega written to pixels whose window is entirely zero. Representable in
/// the f32 raster format.
pub const FAILED_OMEGA: f64 = f32::MIN_POSITIVE as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_mm: f64,
    /// (axial, lateral) window size in envelope pixels.
    pub window_px: (usize, usize),
    pub step_px: (usize, usize),
    /// Inclusive range of admissible window top-left positions, (row, col).
    pub first_origin: (usize, usize),
    pub last_origin: (usize, usize),
    pub output_dims: (usize, usize),
    pub envelope_dims: (usize, usize),
    /// (axial, lateral) envelope spacing.
    pub spacing_mm: (f64, f64),
}

impl WindowPlan {
    pub fn samples_per_window(&self) -> usize {
        self.window_px.0 * self.window_px.1
    }

    /// Fraction of a window shared with its axial neighbour.
    pub fn axial_overlap(&self) -> f64 {
        (self.window_px.0 - self.step_px.0) as f64 / self.window_px.0 as f64
    }

    pub fn geometry(&self) -> MapGeometry {
        let (na, nl) = self.window_px;
        MapGeometry {
            rows: self.output_dims.0,
            cols: self.output_dims.1,
            origin_offset_px: (
                self.first_origin.0 as f64 + (na - 1) as f64 / 2.0,
                self.first_origin.1 as f64 + (nl - 1) as f64 / 2.0,
            ),
            envelope_spacing_mm: self.spacing_mm,
            pixel_spacing_mm: (
                self.step_px.0 as f64 * self.spacing_mm.0,
                self.step_px.1 as f64 * self.spacing_mm.1,
            ),
        }
    }
}

pub fn plan_windows(env: &EnvelopeImage, window_mm: f64) -> Result<WindowPlan> {
    plan_for_grid(
        (env.rows(), env.cols()),
        (env.axial_spacing_mm(), env.lateral_spacing_mm()),
        window_mm,
    )
}

/// Window plan for a grid of `dims` pixels at `spacing_mm`.
pub fn plan_for_grid(dims: (usize, usize), spacing_mm: (f64, f64), window_mm: f64) -> Result<WindowPlan> {
    if !(window_mm > 0.0 && window_mm.is_finite()) {
        return Err(Error::invalid(format!("window size {window_mm} mm must be positive")));
    }
    let px = |spacing: f64| MIN_WINDOW_PX.max((window_mm / spacing).round() as usize);
    let window_px = (px(spacing_mm.0), px(spacing_mm.1));
    if window_px.0 > dims.0 || window_px.1 > dims.1 {
        return Err(Error::invalid(format!(
            "window {window_mm} mm ({}x{} px) larger than image ({}x{} px)",
            window_px.0, window_px.1, dims.0, dims.1
        )));
    }
    if window_px.0 * window_px.1 < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "window holds {} samples, fewer than {MIN_SAMPLES}",
            window_px.0 * window_px.1
        )));
    }
    let last_origin = (dims.0 - window_px.0, dims.1 - window_px.1);
    Ok(WindowPlan {
        window_mm,
        window_px,
        step_px: (1, 1),
        first_origin: (0, 0),
        last_origin,
        output_dims: (last_origin.0 + 1, last_origin.1 + 1),
        envelope_dims: dims,
        spacing_mm,
    })
}

/// Pixels whose window could not be estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct QcReport {
    pub total_pixels: usize,
    pub failed_pixels: usize,
}

/// The seven maps of one plan, in [`MapKind::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricMaps {
    pub images: Vec<ParametricImage>,
    pub qc: QcReport,
}

impl ParametricMaps {
    pub fn get(&self, kind: MapKind) -> &ParametricImage {
        &self.images[kind as usize]
    }
}

pub fn generate_maps(env: &EnvelopeImage, plan: &WindowPlan) -> Result<ParametricMaps> {
    check_plan(env, plan)?;
    let estimates = fast_estimates(env.values().view(), plan);
    assemble(estimates, plan)
}

/// Per-window reference: every window is copied out and reduced on its own.
pub fn generate_maps_reference(env: &EnvelopeImage, plan: &WindowPlan) -> Result<ParametricMaps> {
    check_plan(env, plan)?;
    let (rows, cols) = plan.output_dims;
    let (na, nl) = plan.window_px;
    let values = env.values();
    let mut out = Array2::from_elem((rows, cols), None);
    for r in 0..rows {
        for c in 0..cols {
            let r0 = plan.first_origin.0 + r * plan.step_px.0;
            let c0 = plan.first_origin.1 + c * plan.step_px.1;
            let window = values.slice(s![r0..r0 + na, c0..c0 + nl]).to_owned();
            out[[r, c]] = window_estimate(window.view());
        }
    }
    assemble(out, plan)
}

/// Nakagami estimate of one window in the canonical summation order.
pub fn window_estimate(window: ArrayView2<f64>) -> Option<NakagamiParams> {
    let (mut s2, mut s4) = (0.0, 0.0);
    for row in window.rows() {
        let (h2, h4) = row_sums(row.iter().copied());
        s2 += h2;
        s4 += h4;
    }
    NakagamiParams::from_power_sums(s2, s4, window.len())
}

#[inline]
fn row_sums(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((0.0, 0.0), |(a, b), x| {
        let r2 = x * x;
        (a + r2, b + r2 * r2)
    })
}

fn check_plan(env: &EnvelopeImage, plan: &WindowPlan) -> Result<()> {
    let (rows, cols) = (env.rows(), env.cols());
    let (na, nl) = plan.window_px;
    let ok = plan.envelope_dims == (rows, cols)
        && plan.spacing_mm == (env.axial_spacing_mm(), env.lateral_spacing_mm())
        && plan.step_px.0 >= 1
        && plan.step_px.1 >= 1
        && plan.last_origin.0 + na <= rows
        && plan.last_origin.1 + nl <= cols
        && plan.first_origin.0 + (plan.output_dims.0 - 1) * plan.step_px.0 == plan.last_origin.0
        && plan.first_origin.1 + (plan.output_dims.1 - 1) * plan.step_px.1 == plan.last_origin.1;
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("window plan does not match the envelope image"))
    }
}

fn fast_estimates(values: ArrayView2<f64>, plan: &WindowPlan) -> Array2<Option<NakagamiParams>> {
    let (rows, cols) = plan.output_dims;
    let (na, nl) = plan.window_px;
    let (sr, sc) = plan.step_px;
    let (r_first, c_first) = plan.first_origin;
    // Horizontal window sums for every envelope row a window touches.
    let horizontal: Vec<Vec<(f64, f64)>> = (r_first..plan.last_origin.0 + na)
        .into_par_iter()
        .map(|i| {
            let line = values.row(i).to_vec();
            (0..cols)
                .map(|c| {
                    let c0 = c_first + c * sc;
                    row_sums(line[c0..c0 + nl].iter().copied())
                })
                .collect()
        })
        .collect();

    let n = na * nl;
    let rows_out: Vec<Vec<Option<NakagamiParams>>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let top = r * sr;
            let mut s2 = vec![0.0; cols];
            let mut s4 = vec![0.0; cols];
            for h in &horizontal[top..top + na] {
                for ((a, b), &(h2, h4)) in s2.iter_mut().zip(s4.iter_mut()).zip(h) {
                    *a += h2;
                    *b += h4;
                }
            }
            s2.iter()
                .zip(&s4)
                .map(|(&a, &b)| NakagamiParams::from_power_sums(a, b, n))
                .collect()
        })
        .collect();

    Array2::from_shape_fn((rows, cols), |(r, c)| rows_out[r][c])
}

fn assemble(estimates: Array2<Option<NakagamiParams>>, plan: &WindowPlan) -> Result<ParametricMaps> {
    let dims = estimates.dim();
    let mut layers: Vec<Array2<f64>> = (0..MapKind::ALL.len()).map(|_| Array2::zeros(dims)).collect();
    let mut failed = 0;
    for ((r, c), est) in estimates.indexed_iter() {
        let p = est.unwrap_or_else(|| {
            failed += 1;
            NakagamiParams {
                m: M_MAX,
                omega: FAILED_OMEGA,
            }
        });
        let a = derive_alpha_set(p);
        for (kind, layer) in MapKind::ALL.iter().zip(layers.iter_mut()) {
            layer[[r, c]] = match kind {
                MapKind::M => p.m,
                MapKind::Omega => p.omega,
                MapKind::PreAlpha => a.pre_alpha,
                MapKind::AlphaAbs => a.alpha_abs,
                MapKind::AlphaPhase => a.alpha_phase,
                MapKind::AlphaReal => a.alpha_real,
                MapKind::AlphaImag => a.alpha_imag,
            };
        }
    }
    if failed > 0 {
        log::warn!("{failed} of {} windows were all zero; filled with clamp values", estimates.len());
    }
    let geometry = plan.geometry();
    let images = MapKind::ALL
        .iter()
        .zip(layers)
        .map(|(&kind, values)| ParametricImage::new(kind, values, geometry, plan.window_mm))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParametricMaps {
        images,
        qc: QcReport {
            total_pixels: estimates.len(),
            failed_pixels: failed,
        },
    })
}
