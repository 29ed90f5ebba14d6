use voxpilot_core::audio::FeatureConfig;
use voxpilot_core::augment::expand_dataset;
use voxpilot_core::dataset::{build_dataset, Split, Template};
use voxpilot_core::engines::{Engines, CLASSIFIER_FILE, ENCODER_FILE, LEXICON_FILE, STORE_FILE, TRANSCRIBER_FILE};
use voxpilot_core::eval::accuracy_of;
use voxpilot_core::pipelines::siamese::enroll;
use voxpilot_core::pipelines::stt::Lexicon;
use voxpilot_core::pipelines::{PipelineId, Preprocessor};
use voxpilot_core::workflow::{custom_renderings, eval_samples, train_pipelines, Corpus, TrainPlan, Trained};
use voxpilot_core::{CommandLabel, DecisionLabel, Error};

fn small_plan(seed: u64) -> TrainPlan {
    let mut plan = TrainPlan::new(seed);
    plan.p1.epochs = 2;
    plan.p2.epochs = 2;
    plan.p3.epochs = 1;
    plan.train_pairs = 120;
    plan.val_pairs = 20;
    plan.outliers = 12;
    plan
}

fn train_small(seed: u64) -> (Trained, voxpilot_core::dataset::Dataset) {
    let ds = expand_dataset(&build_dataset(10, 4, seed).unwrap(), seed).unwrap();
    let pre = Preprocessor::new(FeatureConfig::default()).unwrap();
    let plan = small_plan(seed);
    let corpus = Corpus::prepare(&ds, &pre, plan.outliers, seed).unwrap();
    (train_pipelines(&corpus, &plan, FeatureConfig::default(), &PipelineId::ALL).unwrap(), ds)
}

#[test]
fn training_is_reproducible_and_checkpoints_round_trip() {
    let (a, ds) = train_small(3);
    let (b, _) = train_small(3);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    a.engines.save(dir_a.path()).unwrap();
    b.engines.save(dir_b.path()).unwrap();
    for file in [TRANSCRIBER_FILE, CLASSIFIER_FILE, ENCODER_FILE, STORE_FILE] {
        let x = std::fs::read(dir_a.path().join(file)).unwrap();
        let y = std::fs::read(dir_b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
    for ((_, la), (_, lb)) in a.logs.iter().zip(&b.logs) {
        assert_eq!(la.to_jsonl(), lb.to_jsonl());
    }

    let loaded = Engines::load(dir_a.path(), FeatureConfig::default()).unwrap();
    for s in eval_samples(&ds, Split::Test).unwrap() {
        for id in PipelineId::ALL {
            let x = a.engines.run(id, &s.waveform).unwrap();
            let y = loaded.run(id, &s.waveform).unwrap();
            assert_eq!((x.label, x.confidence.to_bits()), (y.label, y.confidence.to_bits()), "{id:?} {}", s.id);
        }
    }
}

#[test]
fn missing_models_are_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let e = Engines::load(dir.path(), FeatureConfig::default()).unwrap();
    let w = voxpilot_core::audio::Waveform::silence(16000, 16000);
    for id in PipelineId::ALL {
        assert!(!e.available(id));
        assert!(matches!(e.run(id, &w), Err(Error::Unavailable(_))));
    }
}

#[test]
fn lexicon_file_overrides_builtin() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(LEXICON_FILE), "# custom\nascend -> UP\n").unwrap();
    let e = Engines::load(dir.path(), FeatureConfig::default()).unwrap();
    assert_eq!(e.lexicon.find(&["ascend".to_string()]), Some(CommandLabel::Up));
    assert_eq!(e.lexicon.len(), Lexicon::parse("ascend -> UP").unwrap().len());
}

#[test]
fn enrollment_adds_labels_without_touching_the_encoder() {
    let (trained, ds) = train_small(5);
    let mut e = trained.engines;
    let encoder_before = e.encoder.clone();
    let test = eval_samples(&ds, Split::Test).unwrap();
    let before = accuracy_of(&e, PipelineId::P3, &test).unwrap();
    let clips = custom_renderings(&Template::hover(), 5, 4, 5, "enroll");
    let mut store = e.store.take().unwrap();
    let size = store.len();
    assert_eq!(enroll(&mut store, &clips, "HOVER", e.encoder.as_ref().unwrap(), &e.pre).unwrap(), 5);
    assert_eq!(store.len(), size + 5);
    assert_eq!(store.labels()["HOVER"], 5);
    assert!(store.records().iter().any(|r| r.id == "enroll/hover/0004"));
    let bad = enroll(&mut store, &[], "SPIN", e.encoder.as_ref().unwrap(), &e.pre);
    assert!(bad.is_err());
    assert_eq!(store.len(), size + 5);
    e.store = Some(store);
    assert_eq!(e.encoder, encoder_before);
    let own = e.run(PipelineId::P3, &clips[0]).unwrap();
    assert_eq!(own.label, DecisionLabel::Custom("HOVER".into()));
    let after = accuracy_of(&e, PipelineId::P3, &test).unwrap();
    assert!(after >= before - 0.2, "{before} -> {after}");
}
