//! RF to envelope conversion.

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnvelopeImage, RfFrame};

/// Minimum A-line length for a meaningful analytic signal.
pub const MIN_ENVELOPE_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TgcPolicy {
    /// Undo the depth-dependent amplifier gain row by row.
    #[default]
    DivideByGain,
    None,
}

/// Removes time-gain compensation from a frame.
pub fn apply_tgc(frame: &RfFrame, policy: TgcPolicy) -> RfFrame {
    match policy {
        TgcPolicy::None => frame.clone(),
        TgcPolicy::DivideByGain => {
            let mut samples = frame.samples().clone();
            for (mut row, g) in samples.rows_mut().into_iter().zip(frame.tgc_gain()) {
                row.mapv_inplace(|v| v / g);
            }
            frame.with_samples(samples).expect("shape and metadata unchanged")
        }
    }
}

/// Magnitude of the analytic signal of each A-line, built in the frequency
/// domain (negative frequencies zeroed, positive ones doubled).
pub fn detect_envelope(frame: &RfFrame) -> Result<EnvelopeImage> {
    let (rows, cols) = frame.samples().dim();
    if rows < MIN_ENVELOPE_ROWS {
        return Err(Error::invalid(format!(
            "envelope detection needs at least {MIN_ENVELOPE_ROWS} axial samples, frame has {rows}"
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(rows);
    let inv = planner.plan_fft_inverse(rows);

    let lines: Vec<Vec<f64>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            let mut buf: Vec<Complex<f64>> = frame
                .samples()
                .column(c)
                .iter()
                .map(|&v| Complex::new(v, 0.0))
                .collect();
            fwd.process(&mut buf);
            analytic_weights(&mut buf);
            inv.process(&mut buf);
            let scale = 1.0 / rows as f64;
            buf.iter().map(|z| z.norm() * scale).collect()
        })
        .collect();

    let values = Array2::from_shape_fn((rows, cols), |(r, c)| lines[c][r]);
    EnvelopeImage::new(values, frame.axial_spacing_mm(), frame.lateral_spacing_mm())
}

fn analytic_weights(spectrum: &mut [Complex<f64>]) {
    let n = spectrum.len();
    let half = n / 2;
    let positive_end = if n % 2 == 0 { half } else { half + 1 };
    for z in &mut spectrum[1..positive_end] {
        *z *= 2.0;
    }
    // Nyquist bin (even n) keeps unit weight.
    for z in &mut spectrum[half + 1..] {
        *z = Complex::new(0.0, 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn frame(samples: Array2<f64>, gain: Vec<f64>) -> RfFrame {
        RfFrame::new(samples, 20e6, 1540.0, 0.0385, 0.1, gain).unwrap()
    }

    #[test]
    fn unit_gain_is_identity() {
        let f = frame(Array2::from_elem((5, 3), 1.25), vec![1.0; 5]);
        assert_eq!(apply_tgc(&f, TgcPolicy::DivideByGain), f);
        assert_eq!(apply_tgc(&f, TgcPolicy::None), f);
    }

    #[test]
    fn gain_two_halves_samples() {
        let f = frame(Array2::from_elem((4, 2), 4.0), vec![2.0; 4]);
        let out = apply_tgc(&f, TgcPolicy::DivideByGain);
        assert!(out.samples().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn tgc_inverts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let samples = Array2::from_shape_fn((16, 4), |_| rng.random_range(-5.0..5.0));
        let gain: Vec<f64> = (0..16).map(|_| rng.random_range(0.2..8.0)).collect();
        let f = frame(samples.clone(), gain.clone());
        let out = apply_tgc(&f, TgcPolicy::DivideByGain);
        for ((r, c), v) in out.samples().indexed_iter() {
            assert_relative_eq!(v * gain[r], samples[[r, c]], max_relative = 1e-6);
        }
    }

    #[test]
    fn pure_tone_has_flat_envelope() {
        let rows = 1024;
        // 5 MHz carrier at 20 MHz sampling, deliberately not bin-aligned.
        let w = 2.0 * std::f64::consts::PI * 0.2437;
        let samples = Array2::from_shape_fn((rows, 2), |(r, c)| 3.0 * (w * r as f64 + c as f64).cos());
        let env = detect_envelope(&frame(samples, vec![1.0; rows])).unwrap();
        for c in 0..2 {
            for r in 32..rows - 32 {
                let v = env.values()[[r, c]];
                assert!((v - 3.0).abs() <= 0.02 * 3.0, "row {r}: {v}");
            }
        }
    }

    #[test]
    fn zero_frame_zero_envelope() {
        let env = detect_envelope(&frame(Array2::zeros((9, 3)), vec![1.0; 9])).unwrap();
        assert!(env.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_rows() {
        assert!(detect_envelope(&frame(Array2::zeros((7, 3)), vec![1.0; 7])).is_err());
    }

    #[test]
    fn positive_homogeneity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for rows in [8usize, 9, 64, 101] {
            let s = Array2::from_shape_fn((rows, 3), |_| rng.random_range(-1.0..1.0));
            let e1 = detect_envelope(&frame(s.clone(), vec![1.0; rows])).unwrap();
            for c in [0.5, 3.0, 1e3] {
                let e2 = detect_envelope(&frame(s.mapv(|v| v * c), vec![1.0; rows])).unwrap();
                for (a, b) in e1.values().iter().zip(e2.values()) {
                    assert!(*b >= 0.0);
                    assert!((c * a - b).abs() <= 1e-6 * (c * a).abs().max(1e-12));
                }
            }
        }
    }
}
