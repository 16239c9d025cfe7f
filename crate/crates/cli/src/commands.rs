use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use sumdistill::config::RunConfig;
use sumdistill::corpus::{
    load_split, read_augmented, read_system_outputs, write_jsonl, write_system_outputs, AugmentedInstance, DatasetSplit,
    SplitName, SystemOutput,
};
use sumdistill::evaluation::{
    build_report, eval_items, load_meta_eval, meta_evaluate, score_outputs, write_meta_eval_tsv, Column, ColumnScorer,
    Dimension, EvaluationReport, LexicalMock, MetaEvalRow, RenderedReport, Scorer,
};
use sumdistill::model::{load_checkpoint, CheckpointMeta, SummarizationModel, ToyModel};
use sumdistill::objectives::TrainingInstance;
use sumdistill::teacher::{
    extract_corpus, quality_gate, write_quality_report, ExtractionStore, HttpChatTransport, RequestRecord, TeacherClient,
    TeacherSettings,
};
use sumdistill::trainer::{
    build_training_instances, corpus_vocab, grid_search, select_dialogues, AblationValue, DevSet, EvalSet, RunDir,
    Student, TrainConfig,
};

use crate::exit::{self, failure, require, CONFIG, OTHER};
use crate::{AblateArgs, BuildArgs, EvaluateArgs, ExtractArgs, MetaevalArgs, ReportArgs, TrainArgs};

type Roster = Vec<(Column, Box<dyn Scorer>)>;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    artifacts: Vec<String>,
    /// Config hashes of the inputs, when they carry one.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    sources: Vec<String>,
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(path: &Path, command: &str, hash: &str, artifacts: &[&Path], sources: Vec<String>) -> Result<()> {
    let m = Manifest {
        command,
        config_hash: hash,
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        sources,
    };
    write_file(path, serde_json::to_vec_pretty(&m)?)
}

/// `<path>` with `suffix` appended to the file name.
fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn split_path(cfg: &RunConfig, split: SplitName) -> Option<&PathBuf> {
    match split {
        SplitName::Train => cfg.data.train.as_ref(),
        SplitName::Dev => cfg.data.dev.as_ref(),
        SplitName::Test => cfg.data.test.as_ref(),
    }
}

fn configured<'a>(path: Option<&'a PathBuf>, what: &str, hint: &str) -> Result<&'a Path> {
    let path = path.ok_or_else(|| failure(CONFIG, anyhow!("no {what} given (set {hint})")))?;
    require(path, what)?;
    Ok(path)
}

fn load_dialogues(cfg: &RunConfig, path: &Path, name: SplitName) -> Result<DatasetSplit> {
    let loaded = load_split(path, cfg.data.format, name).map_err(exit::corpus)?;
    for issue in &loaded.skipped {
        log::warn!("{}: skipped {issue}", path.display());
    }
    Ok(loaded.split)
}

fn load_augmented(cfg: &RunConfig) -> Result<Vec<AugmentedInstance>> {
    let path = configured(cfg.data.augmented.as_ref(), "augmented corpus", "data.augmented or --augmented")?;
    read_augmented(path).map_err(exit::corpus)
}

/// Instantiate the scorer roster. An llm-judge scorer needs the API key,
/// so this runs before any artifact is written.
fn build_roster(cfg: &RunConfig, teacher: Option<&TeacherClient>) -> Result<Roster> {
    let judge = if cfg.needs_judge() {
        let transport = HttpChatTransport::from_env(&cfg.teacher).map_err(exit::teacher)?;
        let model = cfg.evaluation.judge_model.as_deref().unwrap_or(&cfg.teacher.model_name);
        let client = match teacher {
            Some(t) => t.sibling(model, Box::new(transport)),
            None => TeacherClient::new(
                TeacherSettings {
                    model_name: model.to_string(),
                    ..cfg.teacher.clone()
                },
                Box::new(transport),
            )
            .map_err(exit::teacher)?,
        };
        Some(std::sync::Arc::new(client))
    } else {
        None
    };
    cfg.build_scorers(judge.as_ref()).map_err(exit::config)
}

/// The roster's consistency scorer, preferring the external model.
fn consistency_scorer(roster: &Roster) -> Option<&dyn Scorer> {
    [Column::ConsistencyA, Column::ConsistencyG]
        .iter()
        .find_map(|c| roster.iter().find(|(col, _)| col == c))
        .map(|(_, s)| s.as_ref())
}

fn column_scorers(roster: &Roster) -> Vec<ColumnScorer<'_>> {
    roster
        .iter()
        .map(|(column, s)| ColumnScorer {
            column: *column,
            scorer: s.as_ref(),
        })
        .collect()
}

fn check_name(name: &str) -> Result<()> {
    if name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !name.starts_with('.') {
        Ok(())
    } else {
        Err(failure(CONFIG, anyhow!("system name `{name}` may only use letters, digits, `-`, `_` and `.`")))
    }
}

#[derive(Serialize)]
struct RequestLine<'a> {
    #[serde(flatten)]
    record: &'a RequestRecord,
    config_hash: &'a str,
}

pub fn extract(cfg: &RunConfig, a: &ExtractArgs) -> Result<()> {
    let dataset = match &a.dataset {
        Some(p) => {
            require(p, "dataset")?;
            p.as_path()
        }
        None => configured(split_path(cfg, a.split), "dataset", &format!("data.{} or --dataset", a.split))?,
    };
    // Fail on a missing key before touching anything.
    let transport = HttpChatTransport::from_env(&cfg.teacher).map_err(exit::teacher)?;
    let client = TeacherClient::new(cfg.teacher.clone(), Box::new(transport)).map_err(exit::teacher)?;
    let template = cfg.prompt_template().map_err(exit::config)?;
    let roster = build_roster(cfg, Some(&client))?;
    let hash = cfg.hash();
    let k = cfg.train.k;

    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(format!("augmented-{}.jsonl", a.split)));
    let store = ExtractionStore {
        output: out.clone(),
        checkpoint: sibling_path(&out, ".done"),
    };
    let request_log = sibling_path(&out, ".requests.jsonl");
    let quality_path = sibling_path(&out, ".quality.json");
    let manifest_path = sibling_path(&out, ".manifest.json");

    if a.resume {
        if out.exists() {
            let existing = read_augmented(&out).map_err(exit::corpus)?;
            if let Some(first) = existing.first() {
                if first.prompt_version != template.version() || first.teacher_model != client.model_name() || first.k() != k {
                    return Err(failure(
                        CONFIG,
                        anyhow!(
                            "{} was produced with teacher {}, prompt {}, k={}; rerun without --resume",
                            out.display(),
                            first.teacher_model,
                            first.prompt_version,
                            first.k()
                        ),
                    ));
                }
            }
        }
    } else {
        for p in [&out, &store.checkpoint, &request_log, &quality_path] {
            if p.exists() {
                fs::remove_file(p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
    }
    let split = load_dialogues(cfg, dataset, a.split)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }

    let result = extract_corpus(&client, &template, &split, k, a.limit, Some(&store));

    // The request log is kept even when the run aborts; it is what a resume is audited against.
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&request_log)
        .with_context(|| format!("opening {}", request_log.display()))?;
    for record in client.request_log() {
        let line = serde_json::to_string(&RequestLine {
            record: &record,
            config_hash: &hash,
        })?;
        writeln!(log_file, "{line}").with_context(|| format!("writing {}", request_log.display()))?;
    }

    let (_, summary) = result.map_err(exit::teacher)?;
    for (id, reason) in &summary.failures {
        eprintln!("failed: {id}: {reason}");
    }

    let written = if out.exists() {
        read_augmented(&out).map_err(exit::corpus)?
    } else {
        Vec::new()
    };
    let mut artifacts = vec![out.as_path(), store.checkpoint.as_path(), request_log.as_path()];
    if !written.is_empty() {
        let fallback = LexicalMock::new(Dimension::Consistency);
        let scorer = consistency_scorer(&roster).unwrap_or(&fallback);
        match quality_gate(&written, scorer, cfg.evaluation.quality_floor) {
            Ok(report) => {
                write_quality_report(&report, &quality_path).map_err(exit::teacher)?;
                artifacts.push(&quality_path);
                if !report.flagged.is_empty() {
                    log::warn!("{} instances have a positive below the quality floor", report.flagged.len());
                }
            }
            Err(e) => log::warn!("quality gate skipped: {e}"),
        }
    }
    write_manifest(&manifest_path, "extract", &hash, &artifacts, vec![])?;

    println!(
        "extracted {} dialogues ({} resumed, {} failed), {} requests ({} retries), {} records in {}",
        summary.processed - summary.failures.len(),
        summary.resumed,
        summary.failures.len(),
        summary.requests,
        client.retry_count(),
        written.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct InstanceCounts {
    dialogues: usize,
    instances: usize,
    k: usize,
    /// |P'|: the target plus the contrastive positives.
    candidates_per_instance: usize,
    human_reference: bool,
    /// Instances whose target or positives include the human reference.
    with_reference: usize,
    config_hash: String,
}

impl InstanceCounts {
    fn print(&self) {
        println!(
            "instances: {} from {} dialogues; k={}, |P'|={} ({} human reference); {} instances contain R*",
            self.instances,
            self.dialogues,
            self.k,
            self.candidates_per_instance,
            if self.human_reference { "with" } else { "without" },
            self.with_reference
        );
    }
}

fn instances(cfg: &RunConfig, augmented: &[AugmentedInstance], epoch: u64) -> Result<(Vec<TrainingInstance<String>>, InstanceCounts)> {
    let t = &cfg.train;
    let selected = select_dialogues(augmented, t.n_dialogues).map_err(exit::trainer)?;
    let built = build_training_instances(selected, t.k, t.use_human_reference, t.seed, epoch).map_err(exit::trainer)?;
    let with_reference = built
        .iter()
        .zip(selected)
        .filter(|(i, a)| i.target == a.reference || i.positives.contains(&a.reference))
        .count();
    let counts = InstanceCounts {
        dialogues: selected.len(),
        instances: built.len(),
        k: t.k,
        candidates_per_instance: t.k + usize::from(t.use_human_reference),
        human_reference: t.use_human_reference,
        with_reference,
        config_hash: cfg.hash(),
    };
    Ok((built, counts))
}

pub fn build_instances(cfg: &RunConfig, a: &BuildArgs) -> Result<()> {
    let augmented = load_augmented(cfg)?;
    let (built, counts) = instances(cfg, &augmented, a.epoch)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("instances.jsonl"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_jsonl(&built, &out).map_err(exit::corpus)?;
    let counts_path = sibling_path(&out, ".counts.json");
    write_file(&counts_path, serde_json::to_vec_pretty(&counts)?)?;
    write_manifest(&sibling_path(&out, ".manifest.json"), "build-instances", &counts.config_hash, &[&out, &counts_path], vec![])?;
    counts.print();
    Ok(())
}

fn student_factory<'a>(cfg: &'a RunConfig, augmented: &[AugmentedInstance]) -> impl Fn(&TrainConfig) -> Student<ToyModel> + 'a {
    let vocab = corpus_vocab(augmented, cfg.model.vocab_size);
    move |tc: &TrainConfig| Student::new(cfg.model.build(vocab.clone()), tc)
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    config_hash: String,
    config: &'a RunConfig,
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("config.json");
    let body = serde_json::to_vec_pretty(&ResolvedConfig {
        config_hash: cfg.hash(),
        config: cfg,
    })?;
    write_file(&path, body)?;
    Ok(path)
}

pub fn train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let augmented = load_augmented(cfg)?;
    let dev_path = configured(cfg.data.dev.as_ref(), "dev split", "data.dev or --dev")?;
    let roster = build_roster(cfg, None)?;
    let dev_split = load_dialogues(cfg, dev_path, SplitName::Dev)?;
    let (_, counts) = instances(cfg, &augmented, 0)?;
    counts.print();

    let hash = cfg.hash();
    let run = RunDir {
        root: cfg.output_dir.join("train"),
        config_hash: hash.clone(),
    };
    let dir = run.dir();
    let config_path = write_resolved(cfg, &dir)?;
    let counts_path = dir.join("instances.json");
    write_file(&counts_path, serde_json::to_vec_pretty(&counts)?)?;

    let fallback = LexicalMock::new(Dimension::Consistency);
    let dev = DevSet {
        dialogues: &dev_split.dialogues,
        scorer: consistency_scorer(&roster).unwrap_or(&fallback),
        parallelism: cfg.evaluation.parallelism,
    };
    let factory = student_factory(cfg, &augmented);

    if a.grid {
        let result = grid_search(factory, &augmented, &cfg.train, &cfg.objective, &dev, Some(&dir)).map_err(exit::trainer)?;
        let grid_path = dir.join("grid.json");
        write_file(
            &grid_path,
            serde_json::to_vec_pretty(&serde_json::json!({ "config_hash": hash, "grid": result }))?,
        )?;
        write_manifest(&dir.join("manifest.json"), "train", &hash, &[&config_path, &counts_path, &grid_path], vec![])?;
        println!("{:>8}  {:>8}  {:>10}  {:>6}", "alpha", "theta", "dev_cons", "step");
        for (i, r) in result.rows.iter().enumerate() {
            let theta = r.theta.map_or("-".to_string(), |t| t.to_string());
            let score = r.best_dev_consistency.map_or("failed".to_string(), |s| format!("{s:.4}"));
            let step = r.best_step.map_or("-".to_string(), |s| s.to_string());
            let mark = if result.best == Some(i) { " *" } else { "" };
            println!("{:>8}  {theta:>8}  {score:>10}  {step:>6}{mark}", r.alpha);
        }
        return match result.best {
            Some(_) => Ok(()),
            None => Err(failure(exit::ABORT, anyhow!("every grid cell failed"))),
        };
    }

    let mut student = factory(&cfg.train);
    let outcome = sumdistill::trainer::train(&mut student, &augmented, &cfg.train, &cfg.objective, &dev, Some(&run))
        .map_err(exit::trainer)?;
    let best_path = outcome.best.path.clone().unwrap_or_default();
    write_manifest(
        &dir.join("manifest.json"),
        "train",
        &hash,
        &[&config_path, &counts_path, &dir.join("steps.jsonl"), &dir.join("records.jsonl"), &dir.join("best.json")],
        vec![],
    )?;
    println!(
        "best checkpoint: step {} (dev consistency {:.4}) -> {}",
        outcome.best.step,
        outcome.best.dev_consistency,
        best_path.display()
    );
    Ok(())
}

fn decode_split(student: &Student<ToyModel>, split: &DatasetSplit) -> Result<Vec<SystemOutput>> {
    split
        .dialogues
        .iter()
        .map(|d| {
            Ok(SystemOutput {
                id: d.id.clone(),
                summary: student.model.generate(d).map_err(exit::model)?.text,
            })
        })
        .collect()
}

fn write_rendered(rendered: &RenderedReport, stem: &Path, hash: &str) -> Result<(PathBuf, PathBuf)> {
    let txt = sibling_path(stem, ".txt");
    let tsv = sibling_path(stem, ".tsv");
    write_file(&txt, format!("{}config hash: {hash}\n", rendered.text))?;
    write_file(&tsv, &rendered.tsv)?;
    Ok((txt, tsv))
}

pub fn evaluate(cfg: &RunConfig, a: &EvaluateArgs) -> Result<()> {
    let dataset = match &a.dataset {
        Some(p) => {
            require(p, "dataset")?;
            p.as_path()
        }
        None => configured(split_path(cfg, a.split), "dataset", &format!("data.{} or --dataset", a.split))?,
    };
    let mut names = BTreeSet::new();
    for (name, path) in &a.systems {
        check_name(name)?;
        require(path, "system output")?;
        if !names.insert(name.as_str()) {
            return Err(failure(CONFIG, anyhow!("system `{name}` given twice")));
        }
    }
    for (name, dir) in &a.checkpoints {
        check_name(name)?;
        require(dir, "checkpoint")?;
        if !names.insert(name.as_str()) {
            return Err(failure(CONFIG, anyhow!("system `{name}` given twice")));
        }
    }
    let roster = build_roster(cfg, None)?;
    let split = load_dialogues(cfg, dataset, a.split)?;
    let hash = cfg.hash();
    let out_dir = a.out_dir.clone().unwrap_or_else(|| cfg.output_dir.join("eval"));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut artifacts = Vec::new();
    let mut systems: Vec<(String, Vec<SystemOutput>)> = Vec::new();
    for (name, path) in &a.systems {
        systems.push((name.clone(), read_system_outputs(path).map_err(exit::corpus)?));
    }
    for (name, dir) in &a.checkpoints {
        let (student, _): (Student<ToyModel>, CheckpointMeta) = load_checkpoint(dir).map_err(exit::model)?;
        let outputs = decode_split(&student, &split)?;
        let path = out_dir.join(format!("{name}.outputs.jsonl"));
        write_system_outputs(&outputs, &path).map_err(exit::corpus)?;
        artifacts.push(path);
        systems.push((name.clone(), outputs));
    }

    let scorers = column_scorers(&roster);
    let mut reports = Vec::with_capacity(systems.len());
    for (name, outputs) in &systems {
        let items = eval_items(&split, outputs).map_err(exit::evaluation)?;
        let mut report = score_outputs(name, &scorers, &items, cfg.evaluation.parallelism).map_err(exit::evaluation)?;
        report.config_hash = Some(hash.clone());
        if !report.missing.is_empty() {
            log::warn!("{name}: {} cells could not be scored", report.missing.len());
        }
        let path = out_dir.join(format!("{name}.json"));
        report.write_json(&path).map_err(exit::evaluation)?;
        artifacts.push(path);
        reports.push(report);
    }
    let rendered = build_report(&reports, &[]).map_err(exit::evaluation)?;
    let (txt, tsv) = write_rendered(&rendered, &out_dir.join("report"), &hash)?;
    artifacts.extend([txt, tsv]);
    let refs: Vec<&Path> = artifacts.iter().map(PathBuf::as_path).collect();
    write_manifest(&out_dir.join("manifest.json"), "evaluate", &hash, &refs, vec![])?;
    print!("{}", rendered.text);
    Ok(())
}

pub fn report(cfg: &RunConfig, a: &ReportArgs) -> Result<()> {
    for p in a.reports.iter().chain(&a.baselines) {
        require(p, "evaluation report")?;
    }
    let read = |paths: &[PathBuf]| -> Result<Vec<EvaluationReport>> {
        paths
            .iter()
            .map(|p| EvaluationReport::read_json(p).map_err(exit::evaluation))
            .collect()
    };
    let reports = read(&a.reports)?;
    let baselines = read(&a.baselines)?;
    let rendered = build_report(&reports, &baselines).map_err(exit::evaluation)?;
    let hash = cfg.hash();
    let stem = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("report"));
    let (txt, tsv) = write_rendered(&rendered, &stem, &hash)?;
    let sources: BTreeSet<String> = baselines.iter().chain(&reports).filter_map(|r| r.config_hash.clone()).collect();
    write_manifest(&sibling_path(&stem, ".manifest.json"), "report", &hash, &[&txt, &tsv], sources.into_iter().collect())?;
    print!("{}", rendered.text);
    Ok(())
}

pub fn metaeval(cfg: &RunConfig, a: &MetaevalArgs) -> Result<()> {
    for (name, path) in &a.datasets {
        require(path, &format!("meta-evaluation data `{name}`"))?;
    }
    let mut rows = Vec::new();
    for (name, path) in &a.datasets {
        let records = load_meta_eval(path, a.exclude_link_coref).map_err(exit::evaluation)?;
        let metrics: Vec<String> = if a.metrics.is_empty() {
            let mut keys = records.first().map(|r| r.metric_scores.keys().cloned().collect::<BTreeSet<_>>()).unwrap_or_default();
            for r in &records {
                keys.retain(|k| r.metric_scores.contains_key(k));
            }
            keys.into_iter().collect()
        } else {
            a.metrics.clone()
        };
        if metrics.is_empty() {
            log::warn!("{name}: no metric is scored on every record");
        }
        for metric in metrics {
            match meta_evaluate(&records, &metric) {
                Ok(correlation) => rows.push(MetaEvalRow {
                    dataset: name.clone(),
                    metric,
                    correlation,
                }),
                Err(e) => eprintln!("warning: {name}/{metric}: {e}"),
            }
        }
    }
    if rows.is_empty() {
        return Err(failure(OTHER, anyhow!("no correlation could be computed")));
    }
    let hash = cfg.hash();
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("metaeval.tsv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_meta_eval_tsv(&rows, &out).map_err(exit::evaluation)?;
    write_manifest(&sibling_path(&out, ".manifest.json"), "metaeval", &hash, &[&out], vec![])?;

    let dw = rows.iter().map(|r| r.dataset.len()).max().unwrap_or(0).max("Dataset".len());
    let mw = rows.iter().map(|r| r.metric.len()).max().unwrap_or(0).max("Metric".len());
    println!("{:<dw$}  {:<mw$}  {:>8}  {:>8}  {:>5}", "Dataset", "Metric", "Spearman", "Pearson", "n");
    for r in &rows {
        let c = r.correlation;
        println!("{:<dw$}  {:<mw$}  {:>8.4}  {:>8.4}  {:>5}", r.dataset, r.metric, c.spearman, c.pearson, c.n);
    }
    Ok(())
}

pub fn ablate(cfg: &RunConfig, a: &AblateArgs) -> Result<()> {
    let values = a
        .values
        .iter()
        .map(|s| AblationValue::parse(a.axis, s.trim()))
        .collect::<Result<Vec<_>, String>>()
        .map_err(|e| failure(CONFIG, anyhow!(e)))?;
    let augmented = load_augmented(cfg)?;
    let dev_path = configured(cfg.data.dev.as_ref(), "dev split", "data.dev or --dev")?;
    let test_path = configured(cfg.data.test.as_ref(), "test split", "data.test or --test")?;
    let roster = build_roster(cfg, None)?;
    let dev_split = load_dialogues(cfg, dev_path, SplitName::Dev)?;
    let test_split = load_dialogues(cfg, test_path, SplitName::Test)?;

    let hash = cfg.hash();
    let dir = cfg.output_dir.join("ablate").join(&hash);
    let config_path = write_resolved(cfg, &dir)?;
    let fallback = LexicalMock::new(Dimension::Consistency);
    let dev = DevSet {
        dialogues: &dev_split.dialogues,
        scorer: consistency_scorer(&roster).unwrap_or(&fallback),
        parallelism: cfg.evaluation.parallelism,
    };
    let scorers = column_scorers(&roster);
    let test = EvalSet {
        dialogues: &test_split.dialogues,
        scorers: &scorers,
        parallelism: cfg.evaluation.parallelism,
    };
    let result = sumdistill::trainer::ablate(
        student_factory(cfg, &augmented),
        &augmented,
        a.axis,
        &values,
        &cfg.train,
        &cfg.objective,
        &dev,
        &test,
        Some(&dir),
    )
    .map_err(exit::trainer)?;

    let mut artifacts = vec![config_path];
    for (i, report) in result.reports.iter().enumerate() {
        let mut report = report.clone();
        report.config_hash = Some(hash.clone());
        let path = dir.join(format!("row-{i}.json"));
        report.write_json(&path).map_err(exit::evaluation)?;
        artifacts.push(path);
    }
    let (txt, tsv) = write_rendered(&result.table, &dir.join("ablation"), &hash)?;
    artifacts.extend([txt, tsv]);
    let refs: Vec<&Path> = artifacts.iter().map(PathBuf::as_path).collect();
    write_manifest(&dir.join("manifest.json"), "ablate", &hash, &refs, vec![])?;
    print!("{}", result.table.text);
    Ok(())
}
