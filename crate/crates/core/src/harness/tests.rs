use super::*;
use crate::backbone::BackbonePreset;
use crate::clip_align::ProviderRegistry;
use crate::curation::{CurationConfig, Payload};
use crate::evaluation::{metric_au, ThresholdVector};
use crate::nn::{ParamStore, Parameterized};
use crate::task::{Split, Task};
use crate::tensor::Matrix;

fn toy_spec(task: Task) -> FixtureSpec {
    FixtureSpec {
        image_size: 16,
        tasks: alloc::vec![task],
        train_videos: 3,
        val_videos: 2,
        frames_per_video: 20,
        ..FixtureSpec::default()
    }
}

fn toy_config(task: Task, head: HeadKind) -> RunConfig {
    let mut c = RunConfig::new(task, head, false);
    c.backbone = BackbonePreset::Toy;
    c.lstm_hidden = 8;
    c.window = 4;
    c.optimizer.steps = 20;
    c.optimizer.eval_every = 10;
    c.optimizer.batch_size = 8;
    c
}

struct Data {
    fx: FixtureSet,
    frames: MemoryFrames,
    providers: ProviderRegistry,
}

impl Data {
    fn new(task: Task, seed: u64) -> Self {
        let fx = generate_fixtures(seed, &toy_spec(task)).unwrap();
        let frames = fx.frames();
        Self {
            fx,
            frames,
            providers: ProviderRegistry::default(),
        }
    }

    fn res(&self) -> Resources<'_> {
        Resources::new(&self.frames, &self.providers)
    }

    fn index(&self, task: Task, split: Split) -> crate::curation::CuratedIndex {
        self.fx.curated(task, split, &CurationConfig::default()).unwrap()
    }
}

#[test]
fn fixtures_are_deterministic() {
    let spec = toy_spec(Task::Au);
    let a = generate_fixtures(3, &spec).unwrap();
    let b = generate_fixtures(3, &spec).unwrap();
    assert_eq!(a, b);
    let c = generate_fixtures(4, &spec).unwrap();
    assert_ne!(a.videos[0].frames, c.videos[0].frames);
}

#[test]
fn annotation_files_have_one_line_per_frame() {
    let spec = FixtureSpec {
        tasks: Task::ALL.to_vec(),
        ..toy_spec(Task::Va)
    };
    let fx = generate_fixtures(1, &spec).unwrap();
    assert_eq!(fx.videos.len(), 3 * 5);
    for v in &fx.videos {
        let text = v.annotation_text(false);
        assert_eq!(text.lines().count(), spec.frames_per_video);
        let with_header = v.annotation_text(true);
        assert_eq!(with_header.lines().count(), spec.frames_per_video + 1);
        assert_eq!(v.frames.len(), spec.frames_per_video);
    }
}

#[test]
fn curation_drops_exactly_the_corrupted_frames() {
    let spec = FixtureSpec {
        invalid_fraction: 0.3,
        tasks: Task::ALL.to_vec(),
        ..toy_spec(Task::Va)
    };
    let fx = generate_fixtures(9, &spec).unwrap();
    let cc = CurationConfig::default();
    for task in Task::ALL {
        for split in Split::ALL {
            let idx = fx.curated(task, split, &cc).unwrap();
            let invalid: usize = fx.videos_for(task, split).map(|v| v.invalid_count(&cc)).sum();
            assert!(invalid > 0);
            assert_eq!(idx.dropped_count, invalid);
            assert_eq!(idx.total(), fx.videos_for(task, split).count() * spec.frames_per_video);
        }
    }
}

#[test]
fn lagged_labels_follow_earlier_frames() {
    let spec = FixtureSpec {
        expr_lag: 3,
        run_length: 1.0,
        invalid_fraction: 0.0,
        ..toy_spec(Task::Expr)
    };
    let fx = generate_fixtures(2, &spec).unwrap();
    let v = &fx.videos[0];
    for t in 0..v.labels.len() {
        let Payload::Expr { label } = v.labels[t] else { panic!() };
        if t < 3 {
            assert_eq!(label.0, -1);
        } else {
            let Latent::Expr { category } = v.latents[t - 3] else { panic!() };
            assert_eq!(label.0 as usize, category);
        }
    }
}

#[test]
fn frames_resample_to_requested_size() {
    let d = Data::new(Task::Expr, 1);
    let px = d.frames.load("expr_train_000", 1, 8).unwrap();
    assert_eq!(px.len(), 3 * 8 * 8);
    assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(d.frames.load("expr_train_000", 99, 8).is_err());
}

#[test]
fn zero_steps_keeps_the_untrained_model() {
    let d = Data::new(Task::Expr, 5);
    let mut cfg = toy_config(Task::Expr, HeadKind::Fc);
    cfg.optimizer.steps = 0;
    let (train, val) = (d.index(Task::Expr, Split::Train), d.index(Task::Expr, Split::Val));
    let m = train_task(&cfg, &train, &val, &d.res()).unwrap();
    assert_eq!(m.step, 0);
    assert_eq!(m.steps_run, 0);
    let mut fresh = TaskModel::new(&cfg).unwrap();
    crate::nn::quantize_f32(&mut fresh);
    assert_eq!(m.params, ParamStore::collect(&fresh, ""));
    let r = evaluate_task(&m, &val, &d.res()).unwrap();
    assert_eq!(r.score, m.best_metric);
}

#[test]
fn evaluation_reproduces_the_recorded_best() {
    for (task, head) in [(Task::Va, HeadKind::Fc), (Task::Au, HeadKind::Lstm), (Task::Expr, HeadKind::Lstm)] {
        let d = Data::new(task, 6);
        let cfg = toy_config(task, head);
        let (train, val) = (d.index(task, Split::Train), d.index(task, Split::Val));
        let m = train_task(&cfg, &train, &val, &d.res()).unwrap();
        let r = evaluate_task(&m, &val, &d.res()).unwrap();
        assert_eq!(r.score, m.best_metric, "{task} {head:?}");
        assert_eq!(Some(&r), m.report.as_ref());
    }
}

#[test]
fn training_is_deterministic() {
    let d = Data::new(Task::Au, 7);
    let cfg = toy_config(Task::Au, HeadKind::Fc);
    let (train, val) = (d.index(Task::Au, Split::Train), d.index(Task::Au, Split::Val));
    let a = train_task(&cfg, &train, &val, &d.res()).unwrap();
    let b = train_task(&cfg, &train, &val, &d.res()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn frozen_stages_stay_bit_identical() {
    let d = Data::new(Task::Expr, 8);
    let mut cfg = toy_config(Task::Expr, HeadKind::Fc);
    cfg.freeze.backbone = false;
    cfg.optimizer.lr = Some(1e-2);
    cfg.optimizer.eval_every = 1;
    let (train, val) = (d.index(Task::Expr, Split::Train), d.index(Task::Expr, Split::Val));
    let m = train_task(&cfg, &train, &val, &d.res()).unwrap();
    assert!(m.step > 0, "no improvement recorded: {:?}", m.history);
    let mut before = TaskModel::new(&cfg).unwrap();
    crate::nn::quantize_f32(&mut before);
    let after = m.model().unwrap();
    let (b, a) = (before.backbone.unwrap(), after.backbone.unwrap());
    assert_eq!(ParamStore::collect(&b.attention, ""), ParamStore::collect(&a.attention, ""));
    assert_eq!(ParamStore::collect(&b.gdconv, ""), ParamStore::collect(&a.gdconv, ""));
    assert_ne!(ParamStore::collect(&b.trunk, ""), ParamStore::collect(&a.trunk, ""));
}

#[test]
fn trainable_params_follow_freeze_flags() {
    let mut cfg = toy_config(Task::Au, HeadKind::Fc);
    let mut m = TaskModel::new(&cfg).unwrap();
    let head_only: usize = trainable_params(&mut m, &cfg).iter().map(|p| p.len()).sum();
    assert_eq!(head_only, 12 * 12 + 12);
    cfg.freeze = FreezeFlags {
        backbone: false,
        attention: false,
        gdconv: false,
    };
    let all: usize = trainable_params(&mut m, &cfg).iter().map(|p| p.len()).sum();
    assert_eq!(all, m.num_params());
}

#[test]
fn cached_levels_match_full_forward() {
    let d = Data::new(Task::Au, 10);
    let cfg = toy_config(Task::Au, HeadKind::Fc);
    let m = TaskModel::new(&cfg).unwrap();
    let keys: alloc::vec::Vec<(&str, u64)> = (1..=5).map(|i| ("au_train_000", i)).collect();
    let x = load_batch(&d.frames, &keys, 16).unwrap();
    let bb = m.backbone.as_ref().unwrap();
    let full = m.encode(Level::Image, &StageInput::Maps(x.clone())).unwrap();
    assert_eq!(full, bb.forward(&x).unwrap());
    let trunk = bb.trunk.forward(&x).unwrap();
    assert_eq!(full, m.encode(Level::Trunk, &StageInput::Maps(trunk.clone())).unwrap());
    let attended = bb.attention.forward(&trunk).unwrap().0;
    assert_eq!(full, m.encode(Level::Attended, &StageInput::Maps(attended)).unwrap());
    assert_eq!(full, m.encode(Level::Embedding, &StageInput::Rows(full.clone())).unwrap());
}

#[test]
fn cache_level_tracks_the_frozen_prefix() {
    let mut cfg = toy_config(Task::Va, HeadKind::Fc);
    assert_eq!(TaskModel::cache_level(&cfg), Level::Embedding);
    cfg.freeze.gdconv = false;
    assert_eq!(TaskModel::cache_level(&cfg), Level::Attended);
    cfg.freeze.attention = false;
    assert_eq!(TaskModel::cache_level(&cfg), Level::Trunk);
    cfg.freeze.backbone = false;
    assert_eq!(TaskModel::cache_level(&cfg), Level::Image);
    cfg.clip = true;
    assert_eq!(TaskModel::cache_level(&cfg), Level::Embedding);
}

#[test]
fn au_report_wiring() {
    let d = Data::new(Task::Au, 11);
    let cfg = toy_config(Task::Au, HeadKind::Fc);
    let (train, val) = (d.index(Task::Au, Split::Train), d.index(Task::Au, Split::Val));
    let m = train_task(&cfg, &train, &val, &d.res()).unwrap();
    let r = evaluate_task(&m, &val, &d.res()).unwrap();
    assert_eq!(r.thresholds, Some(ThresholdVector::default()));
    let opt = r.optimized.as_ref().unwrap();
    assert!(opt.score >= r.score);

    let list = FrameList::from_index(&val);
    let Predictions::Au(probs) = predict(&m, &list, &d.res()).unwrap() else { panic!() };
    let labels: alloc::vec::Vec<_> = val.videos().iter().flat_map(|(_, f)| f.iter().map(|a| a.payload.aus().unwrap())).collect();
    let direct = metric_au(&probs, &labels, &ThresholdVector::default()).unwrap();
    assert_eq!(direct.score, r.score);
}

#[test]
fn contrastive_runs_classify_expressions() {
    for head in [HeadKind::Fc, HeadKind::Lstm] {
        let d = Data::new(Task::Expr, 12);
        let mut cfg = toy_config(Task::Expr, head);
        cfg.clip = true;
        cfg.clip_options.width = 16;
        let (train, val) = (d.index(Task::Expr, Split::Train), d.index(Task::Expr, Split::Val));
        let m = train_task(&cfg, &train, &val, &d.res()).unwrap();
        assert!(m.params.entries.iter().all(|e| !e.name.starts_with("backbone")));
        assert_eq!(evaluate_task(&m, &val, &d.res()).unwrap().score, m.best_metric);
        let list = FrameList::from_index(&val);
        let Predictions::Expr(p) = predict(&m, &list, &d.res()).unwrap() else { panic!() };
        assert_eq!(p.len(), val.len());
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let d = Data::new(Task::Va, 13);
    let (train, val) = (d.index(Task::Va, Split::Train), d.index(Task::Va, Split::Val));
    let cfg = toy_config(Task::Expr, HeadKind::Fc);
    assert!(train_task(&cfg, &train, &val, &d.res()).is_err());
    let mut clip_va = toy_config(Task::Va, HeadKind::Fc);
    clip_va.clip = true;
    assert!(train_task(&clip_va, &train, &val, &d.res()).is_err());
    let mut unknown = toy_config(Task::Expr, HeadKind::Fc);
    unknown.clip = true;
    unknown.clip_options.provider = "nope".into();
    let e = Data::new(Task::Expr, 13);
    let (et, ev) = (e.index(Task::Expr, Split::Train), e.index(Task::Expr, Split::Val));
    assert!(train_task(&unknown, &et, &ev, &e.res()).is_err());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let d = Data::new(Task::Expr, 14);
    let mut cfg = toy_config(Task::Expr, HeadKind::Fc);
    cfg.optimizer.steps = 0;
    let (train, val) = (d.index(Task::Expr, Split::Train), d.index(Task::Expr, Split::Val));
    let mut m = train_task(&cfg, &train, &val, &d.res()).unwrap();
    m.params.entries.pop();
    assert!(evaluate_task(&m, &val, &d.res()).is_err());
}

#[test]
fn decode_expression_ties_pick_lowest() {
    let cfg = toy_config(Task::Expr, HeadKind::Fc);
    let m = TaskModel::new(&cfg).unwrap();
    let enc = Encoders::new(&cfg, &ProviderRegistry::default()).unwrap();
    let z = Matrix::from_rows(&[alloc::vec![0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
    assert_eq!(decode(&m, &enc, &z).unwrap(), Predictions::Expr(alloc::vec![crate::curation::ExpressionId(1)]));
}
