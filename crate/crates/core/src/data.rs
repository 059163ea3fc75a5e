//! Trials, datasets, the binary manifest format, splitting and
//! standardization.
//!
//! On disk a dataset is a JSON manifest next to one payload file of
//! little-endian `f32` samples, each trial stored row-major (channel × time)
//! at the byte offset the manifest records.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::CHANNELS_1020;
use crate::rng::{self, streams};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

pub const CLASS_NAMES: [&str; 6] = ["left hand", "right hand", "left leg", "right leg", "tongue", "passive"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Bandpassed,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    /// Electrodes × samples.
    pub data: Tensor,
    pub label: usize,
    pub subject: u32,
    pub session: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trials: Vec<Trial>,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub file: String,
    /// Byte offset of the trial inside `file`.
    pub offset: u64,
    pub label: usize,
    pub subject: u32,
    pub session: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub sample_rate: f64,
    pub channels: usize,
    pub samples: usize,
    #[serde(default)]
    pub channel_names: Vec<String>,
    pub class_names: Vec<String>,
    pub provenance: Provenance,
    pub trials: Vec<TrialEntry>,
}

pub fn default_channel_names() -> Vec<String> {
    CHANNELS_1020.iter().map(|s| s.to_string()).collect()
}

impl Dataset {
    pub fn new(trials: Vec<Trial>, sample_rate: f64, provenance: Provenance) -> Result<Self> {
        let ds = Dataset {
            channel_names: match trials.first().map(|t| t.data.shape()[0]) {
                Some(19) | None => default_channel_names(),
                Some(l) => (0..l).map(|i| format!("ch{i}")).collect(),
            },
            trials,
            sample_rate,
            provenance,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// `[electrodes, samples]` shared by every trial.
    pub fn trial_shape(&self) -> Option<[usize; 2]> {
        self.trials.first().map(|t| [t.data.shape()[0], t.data.shape()[1]])
    }

    pub fn class_counts(&self) -> [usize; 6] {
        let mut counts = [0; 6];
        for t in &self.trials {
            counts[t.label] += 1;
        }
        counts
    }

    /// All trials share one shape; labels lie in 0..6.
    pub fn check(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::Data(format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        let Some(shape) = self.trial_shape() else {
            return Ok(());
        };
        if self.channel_names.len() != shape[0] {
            return Err(Error::Data(format!(
                "{} channel names for {} electrodes",
                self.channel_names.len(),
                shape[0]
            )));
        }
        for (i, t) in self.trials.iter().enumerate() {
            if t.data.shape() != shape {
                return Err(Error::Data(format!("trial {i} has shape {:?}, expected {shape:?}", t.data.shape())));
            }
            if t.label >= CLASS_NAMES.len() {
                return Err(Error::Data(format!("trial {i} has label {} outside 0..6", t.label)));
            }
        }
        Ok(())
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            trials: idx.iter().map(|&i| self.trials[i].clone()).collect(),
            sample_rate: self.sample_rate,
            channel_names: self.channel_names.clone(),
            provenance: self.provenance,
        }
    }
}

/// Writes `<dir>/<name>.json` and `<dir>/<name>.f32`; returns the manifest path.
pub fn save_dataset(ds: &Dataset, dir: &Path, name: &str) -> Result<PathBuf> {
    ds.check()?;
    let [channels, samples] = ds.trial_shape().unwrap_or([ds.channel_names.len(), 0]);
    fs::create_dir_all(dir)?;
    let payload_name = format!("{name}.f32");
    let mut payload = Vec::with_capacity(ds.len() * channels * samples * 4);
    let mut entries = Vec::with_capacity(ds.len());
    for t in &ds.trials {
        entries.push(TrialEntry {
            file: payload_name.clone(),
            offset: payload.len() as u64,
            label: t.label,
            subject: t.subject,
            session: t.session,
        });
        for &v in t.data.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(&payload_name), payload)?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        sample_rate: ds.sample_rate,
        channels,
        samples,
        channel_names: ds.channel_names.clone(),
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        provenance: ds.provenance,
        trials: entries,
    };
    let path = dir.join(format!("{name}.json"));
    let mut f = fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(path)
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Data(format!("unsupported manifest version {}", manifest.version)));
    }
    if manifest.class_names.len() != CLASS_NAMES.len()
        || manifest.class_names.iter().zip(CLASS_NAMES).any(|(a, b)| a != b)
    {
        return Err(Error::Data(format!("class names {:?} differ from {CLASS_NAMES:?}", manifest.class_names)));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (l, k) = (manifest.channels, manifest.samples);
    let bytes_per_trial = l * k * 4;
    let mut files: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for (i, entry) in manifest.trials.iter().enumerate() {
        let path = base.join(&entry.file);
        let fail = |detail: String| Error::Ingestion {
            file: path.clone(),
            trial: i,
            detail,
        };
        if !files.contains_key(entry.file.as_str()) {
            let buf = fs::read(&path).map_err(|e| fail(e.to_string()))?;
            files.insert(&entry.file, buf);
        }
        let buf = &files[entry.file.as_str()];
        let start = entry.offset as usize;
        let end = start + bytes_per_trial;
        if end > buf.len() {
            return Err(fail(format!(
                "needs bytes {start}..{end} but the file holds {} (expected {l}×{k} f32 samples)",
                buf.len()
            )));
        }
        if entry.label >= CLASS_NAMES.len() {
            return Err(fail(format!("label {} outside 0..6", entry.label)));
        }
        let data = buf[start..end]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        trials.push(Trial {
            data: Tensor::new(vec![l, k], data).map_err(|e| fail(e.to_string()))?,
            label: entry.label,
            subject: entry.subject,
            session: entry.session,
        });
    }
    let channel_names = if manifest.channel_names.is_empty() {
        if l == 19 {
            default_channel_names()
        } else {
            (0..l).map(|i| format!("ch{i}")).collect()
        }
    } else {
        manifest.channel_names
    };
    let ds = Dataset {
        trials,
        sample_rate: manifest.sample_rate,
        channel_names,
        provenance: manifest.provenance,
    };
    ds.check()?;
    Ok(ds)
}

/// Reads one trial from delimiter-separated text, one channel per row.
pub fn read_delimited_trial(path: &Path, delimiter: u8) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Ingestion {
                    file: path.to_path_buf(),
                    trial: 0,
                    detail: format!("row {r}: '{f}' is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|e| Error::Ingestion {
        file: path.to_path_buf(),
        trial: 0,
        detail: e.to_string(),
    })
}

/// Stratified split: within every (subject, class) group a seeded shuffle
/// sends `round(n · val_fraction)` trials to validation. Both halves keep
/// the original trial order. Fails when either half would be empty.
pub fn split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction must lie in (0, 1), got {val_fraction}")));
    }
    let counts = ds.class_counts();
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("cannot stratify: class '{}' has no trials", CLASS_NAMES[missing])));
    }
    let mut groups: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in ds.trials.iter().enumerate() {
        groups.entry((t.subject, t.label)).or_default().push(i);
    }
    let mut rng = rng::stream(seed, streams::SPLIT);
    let mut is_val = vec![false; ds.len()];
    for idx in groups.values_mut() {
        idx.shuffle(&mut rng);
        let n_val = (idx.len() as f64 * val_fraction).round() as usize;
        for &i in &idx[..n_val.min(idx.len())] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| is_val[i]);
    if val.is_empty() || train.is_empty() {
        return Err(Error::Data(format!(
            "validation fraction {val_fraction} of {} trials leaves an empty {} set",
            ds.len(),
            if val.is_empty() { "validation" } else { "training" }
        )));
    }
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// Per-channel mean and standard deviation over every sample of every trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels with zero variance; these are centered but not scaled.
    pub flagged: Vec<usize>,
}

impl ChannelStats {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let [l, k] = ds.trial_shape().ok_or_else(|| Error::Data("cannot standardize an empty dataset".into()))?;
        let n = (ds.len() * k) as f64;
        let mut mean = vec![0.0; l];
        for t in &ds.trials {
            for (c, row) in t.data.data().chunks(k).enumerate() {
                mean[c] += row.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; l];
        for t in &ds.trials {
            for (c, row) in t.data.data().chunks(k).enumerate() {
                var[c] += row.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        let flagged = std
            .iter()
            .enumerate()
            .filter(|(c, &s)| s <= 1e-12 * mean[*c].abs().max(1.0))
            .map(|(c, _)| c)
            .collect();
        Ok(ChannelStats { mean, std, flagged })
    }

    pub fn apply(&self, ds: &mut Dataset) -> Result<()> {
        let Some([l, k]) = ds.trial_shape() else {
            return Ok(());
        };
        if l != self.mean.len() {
            return Err(Error::Data(format!("statistics cover {} channels, data has {l}", self.mean.len())));
        }
        for t in &mut ds.trials {
            for (c, row) in t.data.data_mut().chunks_mut(k).enumerate() {
                let scale = if self.flagged.contains(&c) { 1.0 } else { 1.0 / self.std[c] };
                row.iter_mut().for_each(|v| *v = (*v - self.mean[c]) * scale);
            }
        }
        Ok(())
    }
}

/// Standardizes `ds` in place with its own statistics and returns them.
pub fn standardize(ds: &mut Dataset) -> Result<ChannelStats> {
    let stats = ChannelStats::from_dataset(ds)?;
    stats.apply(ds)?;
    Ok(stats)
}
