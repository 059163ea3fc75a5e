//! Butterworth bandpass design as second-order sections and zero-phase
//! forward-backward filtering.
//!
//! Design follows the usual analog-prototype route: lowpass poles on the
//! unit circle, lowpass→bandpass transform at prewarped edges, bilinear
//! transform, then nearest-zero pairing into sections. Forward-backward
//! filtering pads both ends with an odd extension and starts each pass from
//! the steady-state section states, so constant inputs produce no edge
//! transient.

use num_complex::Complex64;

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[b0, b1, b2, 1, a1, a2]`.
pub type Section = [f64; 6];

#[derive(Clone, Debug, PartialEq)]
pub struct Bandpass {
    pub low: f64,
    pub high: f64,
    pub sample_rate: f64,
    pub order: usize,
    pub sections: Vec<Section>,
}

fn poly2(r1: Complex64, r2: Complex64) -> [f64; 3] {
    [1.0, -(r1 + r2).re, (r1 * r2).re]
}

impl Bandpass {
    /// Bandpass with `order` lowpass-prototype poles (`2·order` in total).
    pub fn design(low: f64, high: f64, sample_rate: f64, order: usize) -> Result<Self> {
        let nyquist = sample_rate / 2.0;
        if !(low > 0.0 && low < high && high < nyquist) {
            return Err(Error::Filter(format!(
                "band edges must satisfy 0 < low < high < {nyquist} Hz, got {low}–{high} Hz"
            )));
        }
        if order == 0 {
            return Err(Error::Filter("filter order must be positive".into()));
        }
        let n = order as f64;
        // warped edges with the bilinear constant fs2 = 4 (normalized fs = 2)
        let fs2 = 4.0;
        let warp = |f: f64| fs2 * (std::f64::consts::PI * f / nyquist / 2.0).tan();
        let (w1, w2) = (warp(low), warp(high));
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();

        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = std::f64::consts::PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            let lp = Complex64::from_polar(1.0, theta) * (bw / 2.0);
            let disc = (lp * lp - w0 * w0).sqrt();
            poles.push(lp + disc);
            poles.push(lp - disc);
        }
        let mut gain = bw.powi(order as i32);
        // `order` analog zeros at 0 map to +1, the rest (at infinity) to −1
        let mut denom = Complex64::new(1.0, 0.0);
        let mut digital = Vec::with_capacity(poles.len());
        for &p in &poles {
            denom *= fs2 - p;
            digital.push((fs2 + p) / (fs2 - p));
        }
        gain *= (Complex64::new(fs2.powi(order as i32), 0.0) / denom).re;
        let mut zeros: Vec<f64> = std::iter::repeat_n(1.0, order).chain(std::iter::repeat_n(-1.0, order)).collect();

        // keep the upper-half-plane pole of each conjugate pair
        let mut upper: Vec<Complex64> = digital.into_iter().filter(|p| p.im > 0.0).collect();
        if upper.len() != order {
            return Err(Error::Filter("unexpected real poles in bandpass design".into()));
        }
        let mut sections = vec![[0.0; 6]; order];
        for slot in (0..order).rev() {
            // pole nearest the unit circle goes last
            let (i, _) = upper
                .iter()
                .enumerate()
                .min_by(|a, b| (1.0 - a.1.norm()).abs().total_cmp(&(1.0 - b.1.norm()).abs()))
                .expect("poles remain");
            let p = upper.swap_remove(i);
            let nearest = |zs: &[f64]| {
                zs.iter()
                    .enumerate()
                    .min_by(|a, b| (p - a.1).norm().total_cmp(&(p - b.1).norm()))
                    .map(|(j, _)| j)
                    .expect("zeros remain")
            };
            let z1 = zeros.remove(nearest(&zeros));
            let z2 = zeros.remove(nearest(&zeros));
            let b = poly2(Complex64::new(z1, 0.0), Complex64::new(z2, 0.0));
            let a = poly2(p, p.conj());
            sections[slot] = [b[0], b[1], b[2], a[0], a[1], a[2]];
        }
        for v in &mut sections[0][..3] {
            *v *= gain;
        }
        Ok(Bandpass {
            low,
            high,
            sample_rate,
            order,
            sections,
        })
    }

    /// The default 8–30 Hz, order-4 design at `sample_rate`.
    pub fn motor_band(sample_rate: f64) -> Result<Self> {
        Self::design(8.0, 30.0, sample_rate, 4)
    }

    /// Magnitude of one forward pass at `freq` Hz.
    pub fn magnitude(&self, freq: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq / self.sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| ((s[0] + s[1] * z1 + s[2] * z2) / (s[3] + s[4] * z1 + s[5] * z2)).norm())
            .product()
    }

    /// Samples of odd extension added at each end.
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Per-section states that make a constant unit input stationary.
    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
                // solve [[1+a1, −1], [a2, 1]] z = [b1 − a1·b0, b2 − a2·b0]
                let r0 = b1 - a1 * b0;
                let r1 = b2 - a2 * b0;
                let det = (1.0 + a1) + a2;
                let z0 = (r0 + r1) / det;
                let z1 = r1 - a2 * z0;
                let zi = [scale * z0, scale * z1];
                scale *= (b0 + b1 + b2) / (s[3] + a1 + a2);
                zi
            })
            .collect()
    }

    /// Transposed direct form II, in place.
    fn run(&self, x: &mut [f64], state: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
            let [mut z0, mut z1] = *z;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z0;
                z0 = b1 * input - a1 * y + z1;
                z1 = b2 * input - a2 * y;
                *v = y;
            }
            *z = [z0, z1];
        }
    }

    /// Zero-phase forward-backward filtering of one signal.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.pad_len();
        let n = x.len();
        if n <= pad {
            return Err(Error::Filter(format!("signal of {n} samples is too short; need more than {pad}")));
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.steady_state();
        let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * ext[0], z[1] * ext[0]]).collect();
        self.run(&mut ext, &mut state);
        ext.reverse();
        let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * ext[0], z[1] * ext[0]]).collect();
        self.run(&mut ext, &mut state);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }

    /// Filters every channel (row) of an `L×K` trial.
    pub fn apply(&self, trial: &Tensor) -> Result<Tensor> {
        let &[l, k] = trial.shape() else {
            return Err(Error::shape("bandpass", "expected a channels×samples trial"));
        };
        let mut out = Vec::with_capacity(l * k);
        for row in trial.data().chunks(k) {
            out.extend(self.filtfilt(row)?);
        }
        Tensor::new(vec![l, k], out)
    }
}

/// Bandpasses every trial of `ds` at its own sample rate.
pub fn bandpass_dataset(ds: &Dataset, low: f64, high: f64) -> Result<Dataset> {
    let filter = Bandpass::design(low, high, ds.sample_rate, 4)?;
    let mut out = ds.clone();
    for t in &mut out.trials {
        t.data = filter.apply(&t.data)?;
    }
    out.provenance = Provenance::Bandpassed;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Reference coefficients for an order-4, 8–30 Hz design at 200 Hz,
    /// from an established signal-processing library.
    const REFERENCE: [Section; 4] = [
        [0.006661336726303, 0.01332267345260599, 0.006661336726303, 1.0, -1.0700352735778276, 0.40568795595522933],
        [1.0, 2.0, 1.0, 1.0, -1.5406252745414648, 0.637756417732309],
        [1.0, -2.0, 1.0, 1.0, -1.0233992900036606, 0.6855559145477089],
        [1.0, -2.0, 1.0, 1.0, -1.8236966655500093, 0.8865877049644225],
    ];

    /// `1/sqrt(1 + Ω^{2n})` with the bandpass frequency map on warped
    /// frequencies.
    fn analytic_magnitude(f: f64, low: f64, high: f64, fs: f64, n: i32) -> f64 {
        let t = |f: f64| (PI * f / fs).tan();
        let (w, w1, w2) = (t(f), t(low), t(high));
        let omega = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + omega.powi(2 * n)).sqrt()
    }

    #[test]
    fn matches_reference_sections() {
        let f = Bandpass::motor_band(200.0).unwrap();
        for (s, r) in f.sections.iter().zip(REFERENCE) {
            for (a, b) in s.iter().zip(r) {
                assert!((a - b).abs() < 1e-12, "{s:?} vs {r:?}");
            }
        }
    }

    #[test]
    fn magnitude_matches_analytic_response() {
        let f = Bandpass::motor_band(200.0).unwrap();
        for freq in [0.5, 4.0, 8.0, 12.0, 15.0, 20.0, 30.0, 40.0, 50.0, 80.0, 99.0] {
            let a = analytic_magnitude(freq, 8.0, 30.0, 200.0, 4);
            assert!((f.magnitude(freq) - a).abs() < 1e-9, "{freq} Hz: {} vs {a}", f.magnitude(freq));
        }
        assert!((f.magnitude(8.0) - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Bandpass::design(8.0, 100.0, 200.0, 4).is_err());
        assert!(Bandpass::design(30.0, 8.0, 200.0, 4).is_err());
        assert!(Bandpass::design(0.0, 8.0, 200.0, 4).is_err());
    }

    #[test]
    fn constant_input_is_removed() {
        let f = Bandpass::motor_band(200.0).unwrap();
        let y = f.filtfilt(&[3.0; 200]).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 3e-3), "{:?}", y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn is_linear() {
        let f = Bandpass::motor_band(200.0).unwrap();
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64).collect();
        let y: Vec<f64> = (0..200).map(|i| (i as f64 * 1.3).cos()).collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let fx = f.filtfilt(&x).unwrap();
        let fy = f.filtfilt(&y).unwrap();
        let fc = f.filtfilt(&combo).unwrap();
        let scale = fc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..200 {
            assert!((fc[i] - (2.0 * fx[i] - 0.5 * fy[i])).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn short_signals_are_rejected() {
        let f = Bandpass::motor_band(200.0).unwrap();
        assert!(f.filtfilt(&[0.0; 27]).is_err());
        assert!(f.filtfilt(&[0.0; 28]).is_ok());
    }
}
