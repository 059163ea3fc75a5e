//! Seeded hyperparameter search. Trials run on a pool of worker threads;
//! a single writer appends one JSON line per finished trial so an
//! interrupted sweep can be resumed from its log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Family, HyperConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::build_model;
use crate::plan::plan_shapes;
use crate::rng::{self, streams};
use crate::space::{sample_config, SearchSpace};
use crate::train::{fit, TrainOptions};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Random,
    /// Every point of the baseline grid, in order, up to the budget.
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub budget: usize,
    pub seed: u64,
    pub jobs: usize,
    pub strategy: Strategy,
    /// Configurations whose forward pass costs more multiply-accumulates are redrawn.
    pub max_macs: Option<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        let t = TrainOptions::default();
        SweepOptions {
            budget: 20,
            seed: 0,
            jobs: 1,
            strategy: Strategy::Random,
            max_macs: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub trial: usize,
    pub seed: u64,
    pub config_hash: String,
    pub config: HyperConfig,
    pub rejected: usize,
    pub macs: u64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    pub wall_ms: u64,
    pub error: Option<String>,
}

impl SweepEntry {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.val_loss.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub family: Family,
    pub seed: u64,
    pub entries: Vec<SweepEntry>,
    /// Index into `entries` of the successful trial with the lowest validation loss.
    pub best: Option<usize>,
}

impl SweepResult {
    pub fn best_entry(&self) -> Option<&SweepEntry> {
        self.best.map(|i| &self.entries[i])
    }

    fn from_entries(family: Family, seed: u64, mut entries: Vec<SweepEntry>) -> Self {
        entries.sort_by_key(|e| e.trial);
        let best = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.succeeded())
            .min_by(|(_, a), (_, b)| a.val_loss.unwrap().total_cmp(&b.val_loss.unwrap()))
            .map(|(i, _)| i);
        SweepResult {
            family,
            seed,
            entries,
            best,
        }
    }

    /// Rebuilds a result from a sweep log, keeping the last line per trial.
    pub fn from_log(text: &str) -> Result<Self> {
        let mut header = None;
        let mut entries = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                LogLine::Start { family, seed, .. } => header = Some((family, seed)),
                LogLine::Trial(e) => {
                    entries.insert(e.trial, *e);
                }
                LogLine::Summary { .. } => {}
            }
        }
        let (family, seed) = header.ok_or_else(|| Error::Data("sweep log has no start line".into()))?;
        Ok(Self::from_entries(family, seed, entries.into_values().collect()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogLine {
    Start {
        family: Family,
        seed: u64,
        options: SweepOptions,
    },
    Trial(Box<SweepEntry>),
    Summary {
        trials: usize,
        failed: usize,
        best_trial: Option<usize>,
        best_config_hash: Option<String>,
        best_val_loss: Option<f64>,
        best_val_accuracy: Option<f64>,
    },
}

/// Seed of trial `index`; it drives the configuration draw, initialization,
/// shuffling and dropout of that trial.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    rng::mix(seed, index as u64)
}

struct Job {
    trial: usize,
    seed: u64,
    config: HyperConfig,
    rejected: usize,
}

fn draw_job(space: &SearchSpace, family: Family, input_shape: [usize; 2], opts: &SweepOptions, trial: usize) -> Result<Job> {
    let seed = trial_seed(opts.seed, trial);
    let mut r = rng::stream(seed, streams::SAMPLE);
    let s = sample_config(space, family, input_shape, opts.max_macs, &mut r)?;
    Ok(Job {
        trial,
        seed,
        config: s.config,
        rejected: s.rejected,
    })
}

fn run_trial(job: Job, train: &Dataset, val: &Dataset, opts: &SweepOptions) -> SweepEntry {
    let start = Instant::now();
    let macs = plan_shapes(&job.config).map(|p| p.total_macs()).unwrap_or(0);
    let train_opts = TrainOptions {
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        lr: opts.lr,
        seed: job.seed,
        patience: None,
    };
    let outcome = build_model(&job.config, job.seed).and_then(|mut m| fit(&mut m, train, val, &train_opts));
    let mut entry = SweepEntry {
        trial: job.trial,
        seed: job.seed,
        config_hash: job.config.hash(),
        config: job.config,
        rejected: job.rejected,
        macs,
        val_loss: None,
        val_accuracy: None,
        best_epoch: None,
        epochs: 0,
        wall_ms: 0,
        error: None,
    };
    match outcome {
        Ok(rec) => {
            entry.epochs = rec.epochs.len();
            if let Some(b) = rec.best {
                entry.val_loss = Some(b.val_loss);
                entry.val_accuracy = Some(b.val_accuracy);
                entry.best_epoch = Some(b.epoch);
            }
        }
        Err(e) => entry.error = Some(e.to_string()),
    }
    entry.wall_ms = start.elapsed().as_millis() as u64;
    entry
}

fn write_line(log: &mut Option<File>, line: &LogLine) -> Result<()> {
    if let Some(f) = log {
        let mut s = serde_json::to_string(line)?;
        s.push('\n');
        f.write_all(s.as_bytes())?;
        f.flush()?;
    }
    Ok(())
}

/// Runs `opts.budget` trials of draw → build → fit for `family`.
///
/// With a `log` path, trials already recorded there (from an interrupted
/// run with the same family and seed) are reused rather than rerun. A trial
/// that fails is recorded with its error and the sweep continues.
pub fn run_sweep(
    space: &SearchSpace,
    family: Family,
    train: &Dataset,
    val: &Dataset,
    opts: &SweepOptions,
    log: Option<&Path>,
) -> Result<SweepResult> {
    if opts.budget == 0 {
        return Err(Error::Config("sweep budget must be at least 1".into()));
    }
    let input_shape = train
        .trial_shape()
        .ok_or_else(|| Error::Data("cannot sweep on an empty training set".into()))?;

    let mut done: BTreeMap<usize, SweepEntry> = BTreeMap::new();
    let mut file = None;
    if let Some(path) = log {
        if path.exists() {
            let prev = SweepResult::from_log(&std::fs::read_to_string(path)?)?;
            if prev.family != family || prev.seed != opts.seed {
                return Err(Error::Config(format!(
                    "log {} belongs to a {} sweep with seed {}",
                    path.display(),
                    prev.family.name(),
                    prev.seed
                )));
            }
            done.extend(prev.entries.into_iter().filter(|e| e.trial < opts.budget).map(|e| (e.trial, e)));
        }
        file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        write_line(
            &mut file,
            &LogLine::Start {
                family,
                seed: opts.seed,
                options: opts.clone(),
            },
        )?;
    }

    let jobs: Vec<Job> = match opts.strategy {
        Strategy::Random => (0..opts.budget)
            .filter(|t| !done.contains_key(t))
            .map(|t| draw_job(space, family, input_shape, opts, t))
            .collect::<Result<_>>()?,
        Strategy::Grid => space
            .baseline_grid(family, input_shape)
            .into_iter()
            .filter(|c| opts.max_macs.is_none_or(|cap| plan_shapes(c).is_ok_and(|p| p.total_macs() <= cap)))
            .take(opts.budget)
            .enumerate()
            .filter(|(t, _)| !done.contains_key(t))
            .map(|(trial, config)| Job {
                trial,
                seed: trial_seed(opts.seed, trial),
                config,
                rejected: 0,
            })
            .collect(),
    };

    let workers = opts.jobs.clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let queue: Vec<std::sync::Mutex<Option<Job>>> = jobs.into_iter().map(|j| std::sync::Mutex::new(Some(j))).collect();
    let (tx, rx) = mpsc::channel::<SweepEntry>();
    let mut entries: Vec<SweepEntry> = done.into_values().collect();
    let mut write_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (queue, next) = (&queue, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(slot) = queue.get(i) else { break };
                let job = slot.lock().expect("job slot").take().expect("each job taken once");
                if tx.send(run_trial(job, train, val, opts)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for entry in rx {
            if write_error.is_none() {
                if let Err(e) = write_line(&mut file, &LogLine::Trial(Box::new(entry.clone()))) {
                    write_error = Some(e);
                }
            }
            entries.push(entry);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }

    let result = SweepResult::from_entries(family, opts.seed, entries);
    let best = result.best_entry();
    write_line(
        &mut file,
        &LogLine::Summary {
            trials: result.entries.len(),
            failed: result.entries.iter().filter(|e| !e.succeeded()).count(),
            best_trial: best.map(|e| e.trial),
            best_config_hash: best.map(|e| e.config_hash.clone()),
            best_val_loss: best.and_then(|e| e.val_loss),
            best_val_accuracy: best.and_then(|e| e.val_accuracy),
        },
    )?;
    Ok(result)
}
