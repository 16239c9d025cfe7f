use super::*;
use crate::evaluation::{Dimension, LexicalMock};
use crate::model::{DecodeConfig, ToyConfig, ToyModel};
use crate::objectives::Mode;
use crate::synthetic::marker_corpus;

fn small_config(steps: usize, eval_every: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 2,
        eval_every,
        head_hidden: vec![8],
        head_output: 4,
        ..TrainConfig::default()
    }
}

fn factory(corpus: &[AugmentedInstance]) -> impl Fn(&TrainConfig) -> Student<ToyModel> {
    let vocab = corpus_vocab(corpus, 64);
    move |cfg: &TrainConfig| {
        let toy = ToyModel::new(
            vocab.clone(),
            ToyConfig {
                embed_dim: 8,
                ..ToyConfig::default()
            },
            DecodeConfig {
                max_length: 12,
                ..DecodeConfig::default()
            },
        );
        Student::new(toy, cfg)
    }
}

fn dev_dialogues(n: usize) -> Vec<Dialogue> {
    marker_corpus(n, 77, "dev").iter().map(|a| a.to_dialogue().unwrap()).collect()
}

#[test]
fn builder_sizes_and_partition() {
    let corpus = marker_corpus(20, 3, "b");
    let built = build_training_instances(&corpus, 3, true, 5, 0).unwrap();
    for (inst, aug) in built.iter().zip(&corpus) {
        assert_eq!((inst.positives.len(), inst.negatives.len()), (3, 3));
        let mut union: Vec<&String> = inst.positives.iter().chain([&inst.target]).collect();
        let mut candidates: Vec<&String> = [&aug.reference].into_iter().chain(&aug.positives).collect();
        union.sort();
        candidates.sort();
        assert_eq!(union, candidates);
        assert!(!inst.negatives.contains(&inst.target));
    }
    assert_eq!(built, build_training_instances(&corpus, 3, true, 5, 0).unwrap());
    let targets = |epoch| -> Vec<String> {
        build_training_instances(&corpus, 3, true, 5, epoch)
            .unwrap()
            .into_iter()
            .map(|i| i.target)
            .collect()
    };
    assert_ne!(targets(0), targets(1));
}

#[test]
fn builder_degenerate_and_errors() {
    let corpus = marker_corpus(3, 3, "b");
    let built = build_training_instances(&corpus, 1, false, 0, 0).unwrap();
    for (inst, aug) in built.iter().zip(&corpus) {
        assert!(inst.positives.is_empty());
        assert_eq!(inst.target, aug.positives[0]);
        assert_eq!(inst.negatives.len(), 1);
    }
    let mut short = corpus.clone();
    short[1].negatives.truncate(2);
    assert!(matches!(
        build_training_instances(&short, 3, true, 0, 0),
        Err(TrainerError::Insufficient { what: "negatives", .. })
    ));
}

#[test]
fn config_validation() {
    assert!(small_config(10, 5).validate().is_ok());
    assert!(small_config(10, 3).validate().is_err());
    assert!(small_config(0, 1).validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..small_config(10, 5) }.validate().is_err());
}

#[test]
fn best_selection_prefers_earliest_tie() {
    let recs: Vec<CheckpointRecord> = [0.5, 0.7, 0.7]
        .iter()
        .enumerate()
        .map(|(i, &s)| CheckpointRecord {
            step: (i + 1) * 500,
            dev_consistency: s,
            path: None,
            config_hash: "h".into(),
            best: false,
        })
        .collect();
    assert_eq!(select_best(&recs), Some(1));
    assert_eq!(select_best(&[]), None);
}

#[test]
fn schedule_records_and_run_dir() {
    let corpus = marker_corpus(8, 1, "s");
    let dev = dev_dialogues(3);
    let scorer = LexicalMock::new(Dimension::Consistency);
    let devset = DevSet {
        dialogues: &dev,
        scorer: &scorer,
        parallelism: 2,
    };
    let cfg = small_config(10, 5);
    let objective = ObjectiveConfig {
        mode: Mode::PairContrast,
        ..ObjectiveConfig::default()
    };
    let tmp = tempfile::tempdir().unwrap();
    let run = RunDir {
        root: tmp.path().to_path_buf(),
        config_hash: "abc123".into(),
    };
    let mut student = factory(&corpus)(&cfg);
    let out = train(&mut student, &corpus, &cfg, &objective, &devset, Some(&run)).unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.step_log.len(), 10);
    assert_eq!(out.records.iter().filter(|r| r.best).count(), 1);
    for row in &out.step_log {
        assert!((row.total - (row.l_mle + objective.alpha * row.l_c)).abs() < 1e-12);
    }
    let dir = tmp.path().join("abc123");
    assert!(dir.join("step-5/model.json").exists() && dir.join("step-10/meta.json").exists());
    let steps = fs::read_to_string(dir.join("steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 10);
    assert!(steps.lines().all(|l| l.contains("\"config_hash\":\"abc123\"")));
    assert_eq!(fs::read_to_string(dir.join("records.jsonl")).unwrap().lines().count(), 2);
    assert!(dir.join("best.json").exists());
}

#[test]
fn mle_training_reduces_loss_and_is_reproducible() {
    let corpus = marker_corpus(30, 2, "m");
    let dev = dev_dialogues(2);
    let scorer = LexicalMock::new(Dimension::Consistency);
    let devset = DevSet {
        dialogues: &dev,
        scorer: &scorer,
        parallelism: 1,
    };
    let cfg = TrainConfig {
        batch_size: 4,
        ..small_config(200, 100)
    };
    let objective = ObjectiveConfig::default();
    let make = factory(&corpus);
    let mut a = make(&cfg);
    let out = train(&mut a, &corpus, &cfg, &objective, &devset, None).unwrap();
    let head: f64 = out.step_log[..10].iter().map(|r| r.total).sum();
    let tail: f64 = out.step_log[190..].iter().map(|r| r.total).sum();
    assert!(tail < head, "{tail} !< {head}");
    assert!(out.step_log.iter().all(|r| r.l_c == 0.0));

    let short = small_config(2, 2);
    let first = train(&mut make(&short), &corpus, &short, &objective, &devset, None).unwrap();
    let second = train(&mut make(&short), &corpus, &short, &objective, &devset, None).unwrap();
    assert_eq!(
        serde_json::to_string(&first.step_log).unwrap(),
        serde_json::to_string(&second.step_log).unwrap()
    );
}

#[test]
fn non_finite_loss_aborts_with_id() {
    let corpus = marker_corpus(4, 2, "nf");
    let dev = dev_dialogues(1);
    let scorer = LexicalMock::new(Dimension::Consistency);
    let devset = DevSet {
        dialogues: &dev,
        scorer: &scorer,
        parallelism: 1,
    };
    let cfg = small_config(2, 1);
    let mut student = factory(&corpus)(&cfg);
    student.model.params_mut().iter_mut().for_each(|p| *p = f64::NAN);
    match train(&mut student, &corpus, &cfg, &ObjectiveConfig::default(), &devset, None) {
        Err(TrainerError::NonFinite { step: 1, id }) => assert!(id.starts_with("nf-")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn grid_sizes() {
    let corpus = marker_corpus(4, 2, "g");
    let dev = dev_dialogues(1);
    let scorer = LexicalMock::new(Dimension::Consistency);
    let devset = DevSet {
        dialogues: &dev,
        scorer: &scorer,
        parallelism: 1,
    };
    let cfg = small_config(2, 2);
    let make = factory(&corpus);
    for (mode, rows) in [(Mode::PairContrast, 3), (Mode::MarginContrast, 6), (Mode::Mle, 1)] {
        let objective = ObjectiveConfig {
            mode,
            ..ObjectiveConfig::default()
        };
        let grid = grid_search(&make, &corpus, &cfg, &objective, &devset, None).unwrap();
        assert_eq!(grid.rows.len(), rows, "{mode}");
        assert!(grid.best.is_some());
    }
    let single = TrainConfig {
        alpha_grid: vec![1.0],
        ..cfg.clone()
    };
    let objective = ObjectiveConfig {
        mode: Mode::PairContrast,
        ..ObjectiveConfig::default()
    };
    let grid = grid_search(&make, &corpus, &single, &objective, &devset, None).unwrap();
    let direct = train(&mut make(&single), &corpus, &single, &objective, &devset, None).unwrap();
    assert_eq!(grid.rows[0].best_dev_consistency, Some(direct.best.dev_consistency));
}

#[test]
fn ablation_rows() {
    let corpus = marker_corpus(6, 2, "ab");
    let dev = dev_dialogues(1);
    let test = dev_dialogues(2);
    let consistency = LexicalMock::new(Dimension::Consistency);
    let devset = DevSet {
        dialogues: &dev,
        scorer: &consistency,
        parallelism: 1,
    };
    let scorers = [ColumnScorer {
        column: Column::ConsistencyA,
        scorer: &consistency,
    }];
    let evalset = EvalSet {
        dialogues: &test,
        scorers: &scorers,
        parallelism: 2,
    };
    let cfg = small_config(2, 2);
    let objective = ObjectiveConfig {
        mode: Mode::MarginContrast,
        ..ObjectiveConfig::default()
    };
    let make = factory(&corpus);
    let values: Vec<AblationValue> = (1..=3).map(AblationValue::Count).collect();
    let out = ablate(&make, &corpus, AblationAxis::K, &values, &cfg, &objective, &devset, &evalset, None).unwrap();
    assert_eq!(out.reports.len(), 3);
    assert_eq!(out.table.systems, vec!["k=1", "k=2", "k=3"]);
    let flags = [AblationValue::Flag(true), AblationValue::Flag(false)];
    let out = ablate(&make, &corpus, AblationAxis::HumanReference, &flags, &cfg, &objective, &devset, &evalset, None).unwrap();
    assert_eq!(out.table.systems, vec!["R*=Y", "R*=N"]);
    let too_many = [AblationValue::Count(7)];
    assert!(matches!(
        ablate(&make, &corpus, AblationAxis::NDialogues, &too_many, &cfg, &objective, &devset, &evalset, None),
        Err(TrainerError::TooManyDialogues { .. })
    ));
}
