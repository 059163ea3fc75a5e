use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use intertwine::data::{self, ChannelStats, Dataset, Provenance, Trial, CLASS_NAMES};
use intertwine::filter::bandpass_dataset;
use intertwine::model::ModelSnapshot;
use intertwine::space::SearchSpace;
use intertwine::stats::{friedman_test, pairwise_bonferroni, AccuracyTable};
use intertwine::sweep::{run_sweep, Strategy, SweepOptions};
use intertwine::synth::synth_generate;
use intertwine::train::{evaluate, fit_observed, TrainOptions};
use intertwine::{build_model, plan_shapes, Error, Family, HyperConfig, Model, Result};

use crate::manifest::{unix_now, RunManifest};
use crate::{Cli, Command, StatsCommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        return EXIT_NUMERICAL;
    }
    match e {
        Error::Config(_) | Error::Infeasible { .. } | Error::DegenerateSpace(_) => EXIT_USAGE,
        Error::Module { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first), runs the subcommand and writes its
/// manifest. Returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Command::Rerun(r) = &cli.command {
        return rerun(&r.manifest);
    }
    let ctx = Context {
        json: cli.json,
        data_dir: cli.data_dir.clone(),
    };
    let started = unix_now();
    let spec = describe(&cli.command, &ctx);
    let result = execute(&cli.command, &ctx);
    let (code, error, artifacts) = match &result {
        Ok(out) => (EXIT_OK, None, out.artifacts.clone()),
        Err(e) => (exit_code(e), Some(e.to_string()), Vec::new()),
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: spec.name.clone(),
        args: argv[1..].to_vec(),
        cwd: std::env::current_dir().unwrap_or_default(),
        options: spec.options,
        seed: spec.seed,
        artifacts,
        started,
        finished: unix_now(),
        exit_code: code,
        error,
    };
    if let Err(e) = manifest.write(&spec.out_dir) {
        eprintln!("error: could not write run manifest: {e}");
        return if code == EXIT_OK { EXIT_DATA } else { code };
    }
    match result {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            // a closed pipe downstream is not an error of ours
            let _ = if ctx.json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&out.report).expect("report serializes"))
            } else {
                stdout.write_all(out.text.as_bytes())
            };
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            code
        }
    }
}

fn rerun(path: &Path) -> i32 {
    let m = match RunManifest::load(path) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: cannot read manifest {}: {e}", path.display());
            return EXIT_DATA;
        }
    };
    if m.args.first().is_some_and(|a| a == "rerun") {
        eprintln!("error: manifest records a rerun");
        return EXIT_USAGE;
    }
    if let Err(e) = std::env::set_current_dir(&m.cwd) {
        eprintln!("error: cannot enter {}: {e}", m.cwd.display());
        return EXIT_DATA;
    }
    let mut argv = vec!["intertwine".to_string()];
    argv.extend(m.args);
    run(&argv)
}

struct Context {
    json: bool,
    data_dir: PathBuf,
}

impl Context {
    /// Relative paths missing from the working directory resolve against the data directory.
    fn input(&self, p: &Path) -> PathBuf {
        if p.is_relative() && !p.exists() {
            self.data_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    fn out(&self, p: &Option<PathBuf>) -> PathBuf {
        p.clone().unwrap_or_else(|| self.data_dir.clone())
    }
}

struct Spec {
    name: String,
    out_dir: PathBuf,
    options: Value,
    seed: Option<u64>,
}

struct Outcome {
    report: Value,
    text: String,
    artifacts: Vec<PathBuf>,
}

fn describe(cmd: &Command, ctx: &Context) -> Spec {
    let spec = |name: &str, out: &Option<PathBuf>, options: Value, seed: Option<u64>| Spec {
        name: name.into(),
        out_dir: ctx.out(out),
        options,
        seed,
    };
    match cmd {
        Command::Synth(a) => spec(
            "synth",
            &a.out,
            json!({"per_class": a.per_class, "noise": a.noise, "name": a.name}),
            Some(a.seed),
        ),
        Command::Preprocess(a) => spec(
            "preprocess",
            &a.out,
            json!({"input": ctx.input(&a.input), "low": a.low, "high": a.high, "filter": !a.no_filter,
                   "standardize": !a.no_standardize, "name": a.name}),
            None,
        ),
        Command::Import(a) => spec(
            "import",
            &a.out,
            json!({"list": ctx.input(&a.list), "delimiter": a.delimiter, "sample_rate": a.sample_rate, "name": a.name}),
            None,
        ),
        Command::Train(a) => spec(
            "train",
            &a.out,
            json!({"data": ctx.input(&a.data), "val_data": a.val_data.as_ref().map(|p| ctx.input(p)),
                   "val_fraction": a.val_fraction, "config": a.config.as_ref().map(|p| ctx.input(p)),
                   "family": a.family.map(Family::name), "epochs": a.epochs, "batch_size": a.batch_size,
                   "lr": a.lr, "patience": a.patience, "standardize": !a.no_standardize}),
            Some(a.seed),
        ),
        Command::Sweep(a) => {
            let file = SweepFile::load(&ctx.input(&a.config)).ok();
            spec(
                "sweep",
                &a.out,
                json!({"config": ctx.input(&a.config), "jobs": a.jobs, "sweep": file}),
                file.as_ref().map(|f| f.seed),
            )
        }
        Command::Evaluate(a) => spec(
            "evaluate",
            &a.out,
            json!({"model": ctx.input(&a.model), "data": ctx.input(&a.data)}),
            None,
        ),
        Command::Stats(StatsCommand::Friedman(t)) => {
            spec("stats-friedman", &t.out, json!({"table": ctx.input(&t.table)}), None)
        }
        Command::Stats(StatsCommand::Pairwise(p)) => spec(
            "stats-pairwise",
            &p.table.out,
            json!({"table": ctx.input(&p.table.table), "method": p.method}),
            None,
        ),
        Command::Plan(a) => spec(
            "plan",
            &a.out,
            json!({"config": a.config.as_ref().map(|p| ctx.input(p)), "family": a.family.map(Family::name)}),
            None,
        ),
        Command::Rerun(_) => unreachable!("rerun is dispatched before describe"),
    }
}

fn execute(cmd: &Command, ctx: &Context) -> Result<Outcome> {
    match cmd {
        Command::Synth(a) => synth(a, ctx),
        Command::Preprocess(a) => preprocess(a, ctx),
        Command::Import(a) => import(a, ctx),
        Command::Train(a) => train(a, ctx),
        Command::Sweep(a) => sweep(a, ctx),
        Command::Evaluate(a) => evaluate_cmd(a, ctx),
        Command::Stats(StatsCommand::Friedman(t)) => friedman(t, ctx),
        Command::Stats(StatsCommand::Pairwise(p)) => pairwise(p, ctx),
        Command::Plan(a) => plan(a, ctx),
        Command::Rerun(_) => unreachable!("rerun is dispatched before execute"),
    }
}

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

fn dataset_report(ds: &Dataset, manifest: &Path) -> Value {
    json!({
        "manifest": manifest,
        "trials": ds.len(),
        "shape": ds.trial_shape(),
        "sample_rate": ds.sample_rate,
        "class_counts": ds.class_counts(),
        "provenance": ds.provenance,
    })
}

fn dataset_text(verb: &str, ds: &Dataset, manifest: &Path) -> String {
    let shape = ds.trial_shape().map(|[l, k]| format!("{l}×{k}")).unwrap_or_else(|| "-".into());
    format!(
        "{verb} {} trials of {shape} at {} Hz → {}\nclass counts: {:?}\n",
        ds.len(),
        ds.sample_rate,
        manifest.display(),
        ds.class_counts()
    )
}

fn synth(a: &crate::SynthArgs, ctx: &Context) -> Result<Outcome> {
    let ds = synth_generate(a.per_class, a.seed, a.noise)?;
    let path = data::save_dataset(&ds, &ctx.out(&a.out), &a.name)?;
    Ok(Outcome {
        report: dataset_report(&ds, &path),
        text: dataset_text("generated", &ds, &path),
        artifacts: vec![payload_path(&path), path],
    })
}

fn preprocess(a: &crate::PreprocessArgs, ctx: &Context) -> Result<Outcome> {
    let mut ds = data::load_dataset(&ctx.input(&a.input))?;
    if !a.no_filter {
        ds = bandpass_dataset(&ds, a.low, a.high)?;
    }
    let out = ctx.out(&a.out);
    let mut artifacts = Vec::new();
    let mut stats = None;
    if !a.no_standardize {
        let s = data::standardize(&mut ds)?;
        let p = out.join(format!("{}.stats.json", a.name));
        std::fs::create_dir_all(&out)?;
        std::fs::write(&p, serde_json::to_string_pretty(&s)? + "\n")?;
        artifacts.push(p);
        stats = Some(s);
    }
    let path = data::save_dataset(&ds, &out, &a.name)?;
    artifacts.extend([payload_path(&path), path.clone()]);
    let mut report = dataset_report(&ds, &path);
    report["standardization"] = json!(stats);
    let mut text = dataset_text("preprocessed", &ds, &path);
    if let Some(s) = stats.as_ref().filter(|s| !s.flagged.is_empty()) {
        writeln!(text, "zero-variance channels (centered only): {:?}", s.flagged).unwrap();
    }
    Ok(Outcome { report, text, artifacts })
}

#[derive(Deserialize)]
struct ListRow {
    file: PathBuf,
    label: usize,
    #[serde(default)]
    subject: u32,
    #[serde(default)]
    session: u32,
}

fn import(a: &crate::ImportArgs, ctx: &Context) -> Result<Outcome> {
    let delimiter = match a.delimiter.as_str() {
        "tab" | "\\t" => b'\t',
        d if d.len() == 1 => d.as_bytes()[0],
        d => return Err(Error::Config(format!("delimiter must be one character or 'tab', got '{d}'"))),
    };
    let list = ctx.input(&a.list);
    let base = list.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::Reader::from_path(&list)?;
    let mut trials = Vec::new();
    for (i, row) in reader.deserialize::<ListRow>().enumerate() {
        let row = row.map_err(|e| Error::Ingestion {
            file: list.clone(),
            trial: i,
            detail: e.to_string(),
        })?;
        if row.label >= CLASS_NAMES.len() {
            return Err(Error::Ingestion {
                file: list.clone(),
                trial: i,
                detail: format!("label {} outside 0..{}", row.label, CLASS_NAMES.len()),
            });
        }
        let path = if row.file.is_relative() { base.join(&row.file) } else { row.file };
        trials.push(Trial {
            data: data::read_delimited_trial(&path, delimiter)?,
            label: row.label,
            subject: row.subject,
            session: row.session,
        });
    }
    let ds = Dataset::new(trials, a.sample_rate, Provenance::Raw)?;
    let path = data::save_dataset(&ds, &ctx.out(&a.out), &a.name)?;
    Ok(Outcome {
        report: dataset_report(&ds, &path),
        text: dataset_text("imported", &ds, &path),
        artifacts: vec![payload_path(&path), path],
    })
}

/// Model parameters plus the input standardization they were trained with.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    snapshot: ModelSnapshot,
    standardization: Option<ChannelStats>,
}

fn load_config(path: Option<&PathBuf>, family: Option<Family>, ctx: &Context) -> Result<HyperConfig> {
    let config = match (path, family) {
        (Some(p), _) => HyperConfig::from_json(&std::fs::read_to_string(ctx.input(p))?)?,
        (None, None | Some(Family::Intertwined)) => HyperConfig::default(),
        (None, Some(f)) => HyperConfig::baseline(f),
    };
    if let (Some(_), Some(f)) = (path, family) {
        if config.family != f {
            return Err(Error::Config(format!("config is {} but --family {} was given", config.family.name(), f.name())));
        }
    }
    config.validate()?;
    Ok(config)
}

/// Train/validation pair, standardized with the training statistics when asked.
fn load_split(
    data: &Path,
    val_data: Option<&Path>,
    val_fraction: f64,
    seed: u64,
    standardize: bool,
) -> Result<(Dataset, Dataset, Option<ChannelStats>)> {
    let ds = data::load_dataset(data)?;
    let (mut train, mut val) = match val_data {
        Some(p) => (ds, data::load_dataset(p)?),
        None => data::split(&ds, val_fraction, seed)?,
    };
    if train.trial_shape() != val.trial_shape() {
        return Err(Error::Data("training and validation trials differ in shape".into()));
    }
    let stats = if standardize {
        let s = ChannelStats::from_dataset(&train)?;
        s.apply(&mut train)?;
        s.apply(&mut val)?;
        Some(s)
    } else {
        None
    };
    Ok((train, val, stats))
}

fn check_input_shape(config: &HyperConfig, ds: &Dataset) -> Result<()> {
    match ds.trial_shape() {
        Some(s) if s == config.input_shape => Ok(()),
        s => Err(Error::Data(format!(
            "configuration expects {}×{} trials, data holds {s:?}",
            config.input_shape[0], config.input_shape[1]
        ))),
    }
}

fn train(a: &crate::TrainArgs, ctx: &Context) -> Result<Outcome> {
    let config = load_config(a.config.as_ref(), a.family, ctx)?;
    let val_path = a.val_data.as_ref().map(|p| ctx.input(p));
    let (train, val, stats) = load_split(&ctx.input(&a.data), val_path.as_deref(), a.val_fraction, a.seed, !a.no_standardize)?;
    check_input_shape(&config, &train)?;
    let mut model = build_model(&config, a.seed)?;
    let opts = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        patience: a.patience,
    };
    let quiet = a.quiet || ctx.json;
    let record = fit_observed(&mut model, &train, &val, &opts, &mut |e| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  train loss {:.6}  val loss {:.6}  val acc {:.4}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy
            );
        }
    })?;
    let out = ctx.out(&a.out);
    std::fs::create_dir_all(&out)?;
    let record_path = out.join("record.jsonl");
    let curve_path = out.join("curve.csv");
    let model_path = out.join("model.json");
    record.write_jsonl(&record_path)?;
    record.write_curve_csv(&curve_path)?;
    let file = ModelFile {
        snapshot: model.snapshot(),
        standardization: stats,
    };
    std::fs::write(&model_path, serde_json::to_string(&file)? + "\n")?;

    let mut text = format!(
        "trained {} model {} for {} epochs on {} trials ({} validation)\n",
        config.family.name(),
        record.config_hash,
        record.epochs.len(),
        train.len(),
        val.len()
    );
    if let Some(b) = &record.best {
        writeln!(text, "best epoch {}: val loss {:.6}, val accuracy {:.4}", b.epoch, b.val_loss, b.val_accuracy).unwrap();
    }
    writeln!(text, "wrote {}, {}, {}", record_path.display(), curve_path.display(), model_path.display()).unwrap();
    Ok(Outcome {
        report: json!({
            "config_hash": record.config_hash,
            "family": config.family,
            "epochs": record.epochs.len(),
            "best": record.best,
            "record": record_path,
            "curve": curve_path,
            "model": model_path,
        }),
        text,
        artifacts: vec![record_path, curve_path, model_path],
    })
}

/// JSON sweep description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepFile {
    pub family: Family,
    pub budget: usize,
    pub data: PathBuf,
    pub val_data: Option<PathBuf>,
    pub val_fraction: f64,
    pub seed: u64,
    pub jobs: usize,
    pub strategy: Strategy,
    pub max_macs: Option<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub standardize: bool,
    /// Replaces the standard search space.
    pub space: Option<SearchSpace>,
}

impl Default for SweepFile {
    fn default() -> Self {
        let o = SweepOptions::default();
        SweepFile {
            family: Family::Intertwined,
            budget: o.budget,
            data: PathBuf::new(),
            val_data: None,
            val_fraction: 0.2,
            seed: o.seed,
            jobs: o.jobs,
            strategy: o.strategy,
            max_macs: o.max_macs,
            epochs: o.epochs,
            batch_size: o.batch_size,
            lr: o.lr,
            standardize: true,
            space: None,
        }
    }
}

impl SweepFile {
    fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn sweep(a: &crate::SweepArgs, ctx: &Context) -> Result<Outcome> {
    let cfg_path = ctx.input(&a.config);
    let file = SweepFile::load(&cfg_path)?;
    if file.data.as_os_str().is_empty() {
        return Err(Error::Config(format!("{} does not name a dataset", cfg_path.display())));
    }
    // dataset paths in the file are relative to the file
    let base = cfg_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_relative() { ctx.input(&base.join(p)) } else { p.to_path_buf() };
    let val_path = file.val_data.as_deref().map(resolve);
    let (train, val, _) = load_split(&resolve(&file.data), val_path.as_deref(), file.val_fraction, file.seed, file.standardize)?;
    let space = file.space.clone().unwrap_or_else(SearchSpace::standard);
    let opts = SweepOptions {
        budget: file.budget,
        seed: file.seed,
        jobs: a.jobs.unwrap_or(file.jobs),
        strategy: file.strategy,
        max_macs: file.max_macs,
        epochs: file.epochs,
        batch_size: file.batch_size,
        lr: file.lr,
    };
    let out = ctx.out(&a.out);
    std::fs::create_dir_all(&out)?;
    let log_path = out.join("sweep.jsonl");
    let result_path = out.join("sweep-result.json");
    let result = run_sweep(&space, file.family, &train, &val, &opts, Some(&log_path))?;
    std::fs::write(&result_path, serde_json::to_string_pretty(&result)? + "\n")?;

    let failed = result.entries.iter().filter(|e| !e.succeeded()).count();
    let mut text = format!(
        "{} sweep: {} trials ({failed} failed), log {}\n",
        file.family.name(),
        result.entries.len(),
        log_path.display()
    );
    for e in &result.entries {
        match (&e.error, e.val_loss, e.val_accuracy) {
            (None, Some(l), Some(acc)) => writeln!(text, "  trial {:>3}  {}  val loss {l:.6}  val acc {acc:.4}  {} ms", e.trial, e.config_hash, e.wall_ms),
            (err, ..) => writeln!(text, "  trial {:>3}  {}  failed: {}", e.trial, e.config_hash, err.as_deref().unwrap_or("no epochs")),
        }
        .unwrap();
    }
    if let Some(b) = result.best_entry() {
        writeln!(text, "best: trial {} ({})", b.trial, b.config_hash).unwrap();
    }
    let best = result.best_entry();
    Ok(Outcome {
        report: json!({
            "family": file.family,
            "trials": result.entries.len(),
            "failed": failed,
            "best": best,
            "log": log_path,
            "result": result_path,
        }),
        text,
        artifacts: vec![log_path, result_path],
    })
}

fn evaluate_cmd(a: &crate::EvaluateArgs, ctx: &Context) -> Result<Outcome> {
    let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(ctx.input(&a.model))?)?;
    let model = Model::from_snapshot(file.snapshot)?;
    let mut ds = data::load_dataset(&ctx.input(&a.data))?;
    check_input_shape(&model.config, &ds)?;
    if let Some(s) = &file.standardization {
        s.apply(&mut ds)?;
    }
    let eval = evaluate(&model, &ds)?;
    let mut confusion = [[0usize; 6]; 6];
    for (t, &p) in ds.trials.iter().zip(&eval.predictions) {
        confusion[t.label][p] += 1;
    }
    let mut text = format!("accuracy {:.4} (loss {:.6}) on {} trials\n", eval.accuracy, eval.loss, ds.len());
    writeln!(text, "confusion (rows true, columns predicted):").unwrap();
    for (name, row) in CLASS_NAMES.iter().zip(&confusion) {
        writeln!(text, "  {name:<12} {row:?}").unwrap();
    }
    Ok(Outcome {
        report: json!({
            "accuracy": eval.accuracy,
            "loss": eval.loss,
            "trials": ds.len(),
            "confusion": confusion,
            "predictions": eval.predictions,
        }),
        text,
        artifacts: Vec::new(),
    })
}

fn friedman(t: &crate::TableArgs, ctx: &Context) -> Result<Outcome> {
    let table = AccuracyTable::from_path(&ctx.input(&t.table))?;
    let r = friedman_test(&table)?;
    let mut text = format!(
        "Friedman test over {} subjects × {} models\nchi-square = {:.6}, dof = {}, p = {:.6e}\nmean ranks:\n",
        table.rows(),
        table.cols(),
        r.chi_square,
        r.dof,
        r.p_value
    );
    for (label, rank) in table.col_labels.iter().zip(&r.mean_ranks) {
        writeln!(text, "  {label:<16} {rank:.4}").unwrap();
    }
    Ok(Outcome {
        report: json!({
            "chi_square": r.chi_square,
            "dof": r.dof,
            "p_value": r.p_value,
            "mean_ranks": table.col_labels.iter().cloned().zip(r.mean_ranks.iter().copied()).collect::<Vec<_>>(),
        }),
        text,
        artifacts: Vec::new(),
    })
}

fn pairwise(p: &crate::PairwiseArgs, ctx: &Context) -> Result<Outcome> {
    let table = AccuracyTable::from_path(&ctx.input(&p.table.table))?;
    let results = pairwise_bonferroni(&table, p.method)?;
    let mut text = format!("pairwise comparisons ({}), Bonferroni over {} pairs\n", serde_json::to_value(p.method)?.as_str().unwrap_or(""), results.len());
    for r in &results {
        writeln!(
            text,
            "  {} vs {}: statistic {:.4}, p {:.6e}, adjusted p {:.6e}{}  (mean difference {:+.4})",
            r.a,
            r.b,
            r.statistic,
            r.p_raw,
            r.p_adjusted,
            if r.significant { " *" } else { "" },
            r.mean_difference
        )
        .unwrap();
    }
    Ok(Outcome {
        report: json!({"method": p.method, "pairs": results}),
        text,
        artifacts: Vec::new(),
    })
}

fn plan(a: &crate::PlanArgs, ctx: &Context) -> Result<Outcome> {
    let config = load_config(a.config.as_ref(), a.family, ctx)?;
    let plan = plan_shapes(&config)?;
    let text = format!("{}\n\n{}", plan.summary(), plan.render());
    Ok(Outcome {
        report: json!({"summary": plan.summary(), "total_macs": plan.total_macs(), "plan": plan}),
        text,
        artifacts: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Divergence("w".into())), EXIT_NUMERICAL);
        let nested = Error::Module {
            module: 0,
            source: Box::new(Error::NonFiniteLoss { epoch: 0, batch: 0, lr: 1.0 }),
        };
        assert_eq!(exit_code(&nested), EXIT_NUMERICAL);
    }

    #[test]
    fn sweep_file_defaults_fill_missing_fields() {
        let f: SweepFile = serde_json::from_str(r#"{"family": "cascade", "data": "d.json", "budget": 3}"#).unwrap();
        assert_eq!(f.family, Family::Cascade);
        assert_eq!(f.budget, 3);
        assert!(f.standardize);
        assert!(serde_json::from_str::<SweepFile>(r#"{"budgit": 3}"#).is_err());
    }
}
