//! Placement of electrodes on a 2D grid for the convolutional baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The 19 channels of the 10/20 montage in manifest order.
pub const CHANNELS_1020: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshMap {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    /// `[row, col]` of each input channel, in channel order.
    pub positions: Vec<[usize; 2]>,
}

impl Default for MeshMap {
    fn default() -> Self {
        Self::standard_1020()
    }
}

impl MeshMap {
    /// 5×5 layout, front of the head at row 0; unused cells stay zero.
    ///
    /// ```text
    ///  .  Fp1  .  Fp2  .
    ///  F7 F3  Fz  F4  F8
    ///  T3 C3  Cz  C4  T4
    ///  T5 P3  Pz  P4  T6
    ///  .  O1  .   O2  .
    /// ```
    pub fn standard_1020() -> Self {
        let mut positions = vec![[0, 1], [0, 3]];
        for row in 1..4 {
            positions.extend((0..5).map(|c| [row, c]));
        }
        positions.extend([[4, 1], [4, 3]]);
        MeshMap {
            id: "1020-5x5".into(),
            rows: 5,
            cols: 5,
            positions,
        }
    }

    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "1020-5x5" => Ok(Self::standard_1020()),
            other => Err(Error::Config(format!("unknown mesh '{other}'"))),
        }
    }

    pub fn channels(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.rows * self.cols];
        for (ch, &[r, c]) in self.positions.iter().enumerate() {
            if r >= self.rows || c >= self.cols {
                return Err(Error::Config(format!("mesh '{}': channel {ch} placed outside the grid", self.id)));
            }
            if std::mem::replace(&mut seen[r * self.cols + c], true) {
                return Err(Error::Config(format!("mesh '{}': two channels share cell ({r}, {c})", self.id)));
            }
        }
        Ok(())
    }

    /// `L×T` signals to `T×1×rows×cols` frames.
    pub fn frames(&self, signal: &Tensor) -> Result<Tensor> {
        let &[l, t] = signal.shape() else {
            return Err(Error::shape("mesh", "expected a channels×time signal"));
        };
        if l != self.channels() {
            return Err(Error::Config(format!(
                "mesh '{}' places {} electrodes but the input has {l}",
                self.id,
                self.channels()
            )));
        }
        let area = self.rows * self.cols;
        let mut out = vec![0.0; t * area];
        let x = signal.data();
        for (ch, &[r, c]) in self.positions.iter().enumerate() {
            let cell = r * self.cols + c;
            for step in 0..t {
                out[step * area + cell] = x[ch * t + step];
            }
        }
        Tensor::new(vec![t, 1, self.rows, self.cols], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout_is_valid() {
        let m = MeshMap::standard_1020();
        assert_eq!(m.channels(), CHANNELS_1020.len());
        m.validate().unwrap();
        assert_eq!(m.positions[CHANNELS_1020.iter().position(|&c| c == "Cz").unwrap()], [2, 2]);
        assert_eq!(m.positions[18], [4, 3]);
    }

    #[test]
    fn frames_place_channels_and_zero_vacancies() {
        let m = MeshMap::standard_1020();
        let sig = Tensor::new(vec![19, 2], (0..38).map(|v| v as f64 + 1.0).collect()).unwrap();
        let f = m.frames(&sig).unwrap();
        assert_eq!(f.shape(), &[2, 1, 5, 5]);
        // Fp1 is channel 0 at (0, 1); second time step
        assert_eq!(f.data()[25 + 1], 2.0);
        // vacant corner
        assert_eq!(f.data()[0], 0.0);
        assert_eq!(f.data().iter().filter(|&&v| v != 0.0).count(), 38);
    }

    #[test]
    fn channel_count_mismatch_is_config_error() {
        let m = MeshMap::standard_1020();
        let sig = Tensor::zeros(&[8, 10]);
        assert!(matches!(m.frames(&sig), Err(Error::Config(_))));
    }

    #[test]
    fn overlapping_cells_rejected() {
        let mut m = MeshMap::standard_1020();
        m.positions[1] = [0, 1];
        assert!(m.validate().is_err());
    }
}
