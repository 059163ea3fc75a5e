//! Synthetic EEG-like trials with a known class structure.
//!
//! Class `c` is a sinusoid at [`CLASS_FREQS`]`[c]` Hz with one random phase
//! per trial, spread over the 19 electrodes by a Gaussian bump centered at a
//! class-specific spot of the 5×5 electrode mesh (peak weight 1), plus white
//! Gaussian noise. The signal amplitude is therefore 1 and `noise_std` is
//! directly the noise-to-signal ratio.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Provenance, Trial};
use crate::error::{Error, Result};
use crate::mesh::MeshMap;
use crate::rng::{self, streams};
use crate::tensor::Tensor;

pub const CLASS_FREQS: [f64; 6] = [9.0, 12.0, 16.0, 20.0, 24.0, 28.0];
pub const SAMPLE_RATE: f64 = 200.0;
pub const SAMPLES: usize = 200;

/// Mesh cell (row, col) at the center of each class's spatial focus.
const FOCI: [[f64; 2]; 6] = [[2.0, 3.0], [2.0, 1.0], [3.0, 2.0], [1.0, 2.0], [3.0, 0.0], [4.0, 2.0]];
const FOCUS_WIDTH: f64 = 1.0;

/// Spatial weight of each electrode for `class`.
pub fn class_weights(class: usize, mesh: &MeshMap) -> Vec<f64> {
    let [fr, fc] = FOCI[class];
    mesh.positions
        .iter()
        .map(|&[r, c]| {
            let d2 = (r as f64 - fr).powi(2) + (c as f64 - fc).powi(2);
            (-d2 / (2.0 * FOCUS_WIDTH * FOCUS_WIDTH)).exp()
        })
        .collect()
}

/// `n_per_class` trials of each class, 19×200 at 200 Hz, stored at `f32`
/// precision so saving and reloading reproduces them exactly.
pub fn synth_generate(n_per_class: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!("noise std must be finite and nonnegative, got {noise_std}")));
    }
    let mesh = MeshMap::standard_1020();
    let l = mesh.channels();
    let noise = Normal::new(0.0, noise_std).expect("validated std");
    let mut rng = rng::stream(seed, streams::SYNTH);
    let mut trials = Vec::with_capacity(6 * n_per_class);
    for (class, &freq) in CLASS_FREQS.iter().enumerate() {
        let weights = class_weights(class, &mesh);
        for _ in 0..n_per_class {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let wave: Vec<f64> = (0..SAMPLES)
                .map(|t| (std::f64::consts::TAU * freq * t as f64 / SAMPLE_RATE + phase).sin())
                .collect();
            let mut data = Vec::with_capacity(l * SAMPLES);
            for &w in &weights {
                for &s in &wave {
                    let v = w * s + if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push(f64::from(v as f32));
                }
            }
            trials.push(Trial {
                data: Tensor::new(vec![l, SAMPLES], data)?,
                label: class,
                subject: 0,
                session: 0,
            });
        }
    }
    Dataset::new(trials, SAMPLE_RATE, Provenance::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    #[test]
    fn counts_and_reproducibility() {
        let a = synth_generate(100, 3, 0.5).unwrap();
        assert_eq!(a.len(), 600);
        assert_eq!(a.class_counts(), [100; 6]);
        assert_eq!(a.trial_shape(), Some([19, 200]));
        let b = synth_generate(100, 3, 0.5).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(100, 4, 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_trials_peak_at_class_frequency() {
        let ds = synth_generate(3, 5, 0.0).unwrap();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(SAMPLES);
        let mesh = MeshMap::standard_1020();
        for t in &ds.trials {
            // strongest channel of the class focus
            let w = class_weights(t.label, &mesh);
            let ch = (0..19).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
            let mut buf: Vec<Complex<f64>> =
                t.data.data()[ch * SAMPLES..(ch + 1) * SAMPLES].iter().map(|&v| Complex::new(v, 0.0)).collect();
            fft.process(&mut buf);
            let peak = (1..SAMPLES / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
            // 1 Hz per bin for 200 samples at 200 Hz
            assert_eq!(peak as f64, CLASS_FREQS[t.label]);
        }
    }

    #[test]
    fn noiseless_within_class_trials_differ_only_by_phase() {
        let ds = synth_generate(2, 6, 0.0).unwrap();
        for pair in ds.trials.chunks(2) {
            let (a, b) = (&pair[0].data, &pair[1].data);
            // same per-channel energy, different samples
            for ch in 0..19 {
                let e = |t: &Tensor| t.data()[ch * SAMPLES..(ch + 1) * SAMPLES].iter().map(|v| v * v).sum::<f64>();
                assert!((e(a) - e(b)).abs() < 1e-4 * e(a).max(1e-12));
            }
            assert_ne!(a, b);
        }
    }
}
