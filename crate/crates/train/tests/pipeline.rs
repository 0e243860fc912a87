use c2b_core::frames::{load_frame_directory, write_frame_directory};
use c2b_core::{
    encode_blurred, encode_coded, pixel_shuffle_image, recover_lowres_coded, ExposureCode, Plane, TiledCode, VideoCube,
};
use c2b_model::{ModelConfig, ModelVariant};
use c2b_nn::{Tape, Tensor};
use c2b_train::checkpoint::Checkpoint;
use c2b_train::trainer::epoch_order;
use c2b_train::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(variant: ModelVariant, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            encoder_widths: [8, 8, 8],
            unet_widths: [4, 4, 8],
            bottleneck: 8,
            ..ModelConfig::default().with_variant(variant)
        },
        lr: 1e-3,
        epochs: 100,
        batch: 2,
        max_steps: Some(6),
        patch: 24,
        ..TrainConfig::full_scale(seed)
    }
}

fn small_dataset(count: usize) -> ClipDataset {
    synth_dataset(&SynthSpec {
        count,
        height: 24,
        width: 48,
        frames: 9,
        shape: SynthShape::Rect { height: 8, width: 8 },
        velocity: (1, 0),
        seed: 3,
    })
    .unwrap()
}

fn impulse() -> ExposureCode {
    ExposureCode::impulse(3, 9).unwrap()
}

#[test]
fn frame_directory_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let frame = Plane::from_fn(6, 6, |y, x| ((y * 40 + x) % 256) as f64 / 255.0).unwrap();
    write_frame_directory(dir.path(), &vec![frame.clone(); 9]).unwrap();
    let ds = load_clip_dataset(dir.path(), 9, 9).unwrap();
    assert_eq!(ds.len(), 1);
    assert!(ds.clips[0].frames().iter().all(|f| f == &frame));

    let mixed = tempfile::tempdir().unwrap();
    write_frame_directory(mixed.path(), std::slice::from_ref(&frame)).unwrap();
    let other = Plane::filled(4, 6, 0.5).unwrap();
    c2b_core::frames::save_image(&mixed.path().join("frame_9999.png"), &other).unwrap();
    assert!(load_frame_directory(mixed.path()).is_err());

    let empty = tempfile::tempdir().unwrap();
    assert!(load_clip_dataset(empty.path(), 9, 9).is_err());
}

#[test]
fn long_sequence_keeps_order() {
    let root = tempfile::tempdir().unwrap();
    let seq = root.path().join("seq0");
    let frames: Vec<Plane> = (0..500)
        .map(|i| Plane::filled(2, 2, (i % 256) as f64 / 255.0).unwrap())
        .collect();
    write_frame_directory(&seq, &frames).unwrap();
    let loaded = load_frame_directory(&seq).unwrap();
    assert_eq!(loaded.len(), 500);
    for (i, f) in loaded.iter().enumerate() {
        assert_eq!(f.get(0, 0), (i % 256) as f64 / 255.0);
    }
    let ds = load_clip_dataset(root.path(), 9, 9).unwrap();
    assert_eq!(ds.len(), 55);
    assert_eq!(ds.clips[54].at(0, 0, 0), loaded[486].get(0, 0));
}

#[test]
fn static_clip_gives_identical_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frame = Plane::from_fn(24, 24, |_, _| rng.random_range(0.0..1.0)).unwrap();
    let clip = VideoCube::new(vec![frame; 9]).unwrap();
    let code = TiledCode::new(&impulse(), 24, 24).unwrap();
    let ex = make_example(&clip, &code, ModelVariant::Pair).unwrap();
    assert_eq!(ex.coded.as_ref().unwrap(), ex.blurred.as_ref().unwrap());
    assert_eq!(ex.target, clip);
}

#[test]
fn examples_match_hand_composition() {
    let clip = small_dataset(1).clips.remove(0);
    let code = TiledCode::new(&impulse(), 24, 48).unwrap();
    let coded = recover_lowres_coded(&encode_coded(&clip, &code).unwrap(), &code).unwrap();
    let blurred = pixel_shuffle_image(&encode_blurred(&clip), 3).unwrap();

    let pair = make_example(&clip, &code, ModelVariant::Pair).unwrap();
    assert_eq!(pair.coded.as_ref(), Some(&coded));
    assert_eq!(pair.blurred.as_ref(), Some(&blurred));
    let c = make_example(&clip, &code, ModelVariant::CodedOnly).unwrap();
    assert_eq!((c.coded.as_ref(), c.blurred.as_ref()), (Some(&coded), None));
    let b = make_example(&clip, &code, ModelVariant::BlurredOnly).unwrap();
    assert_eq!((b.coded.as_ref(), b.blurred.as_ref()), (None, Some(&blurred)));

    let wrong = TiledCode::new(&impulse(), 24, 24).unwrap();
    assert!(make_example(&clip, &wrong, ModelVariant::Pair).is_err());
}

#[test]
fn loss_at_perfect_fit_is_the_regulariser() {
    let clip = small_dataset(1).clips.remove(0);
    let x: Tensor<f64> = c2b_model::videos_to_tensor(&[&clip]).unwrap();
    for lambda in [0.0, 0.1, 2.5] {
        let mut tape = Tape::new();
        let p = tape.constant(x.clone());
        let t = tape.constant(x.clone());
        let v = loss_terms(&mut tape, p, t, lambda).unwrap();
        assert_eq!(tape.value(v.l1).item(), 0.0);
        let tv = tape.value(v.tv).item();
        assert!((tape.value(v.loss).item() - lambda * tv).abs() < 1e-15);
        if lambda == 0.0 {
            assert_eq!(tape.value(v.loss).item(), 0.0);
        }
    }
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let a = epoch_order(7, 0, 50);
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    assert_eq!(a, epoch_order(7, 0, 50));
    assert_ne!(a, epoch_order(7, 1, 50));
    assert_ne!(a, epoch_order(8, 0, 50));
}

#[test]
fn training_is_deterministic_and_decomposes() {
    let ds = small_dataset(3);
    let cfg = tiny_config(ModelVariant::Pair, 11);
    let (m1, h1) = train(cfg.clone(), &impulse(), &ds).unwrap();
    let (m2, h2) = train(cfg.clone(), &impulse(), &ds).unwrap();
    assert_eq!(h1.len(), 6);
    assert_eq!(h1, h2);
    assert_eq!(format_loss_log(&h1), format_loss_log(&h2));
    for (a, b) in m1.params().iter().zip(m2.params().iter()) {
        assert_eq!(a.value, b.value);
    }
    let lambda = cfg.lambda as f32;
    for r in &h1 {
        assert_eq!(r.loss, r.l1 + lambda * r.tv);
    }
    // 3 clips of 24x48 give 6 patches: 3 steps per epoch at batch 2
    assert_eq!(h1.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 0, 0, 1, 1, 1]);
    let (_, other) = train(tiny_config(ModelVariant::Pair, 12), &impulse(), &ds).unwrap();
    assert_ne!(h1, other);
}

#[test]
fn single_input_variants_train() {
    let ds = small_dataset(1);
    for v in [ModelVariant::CodedOnly, ModelVariant::BlurredOnly] {
        let (model, hist) = train(tiny_config(v, 2), &impulse(), &ds).unwrap();
        assert_eq!(model.variant(), v);
        assert!(hist.iter().all(|r| r.loss.is_finite()));
    }
}

#[test]
fn training_errors() {
    let cfg = tiny_config(ModelVariant::Pair, 1);
    assert!(matches!(
        Trainer::new(cfg.clone(), &impulse(), &ClipDataset::default()),
        Err(TrainError::Data(_))
    ));
    let two = ExposureCode::impulse(2, 4).unwrap();
    assert!(Trainer::new(cfg.clone(), &two, &small_dataset(1)).is_err());

    let mut state = TrainState::fresh(&cfg).unwrap();
    let id = state.model.params().find("unet.last.bias").unwrap();
    state.model.params_mut().get_mut(id).value.data_mut()[0] = f32::NAN;
    let mut trainer = Trainer::resume(cfg, &impulse(), &small_dataset(1), state).unwrap();
    let err = trainer.step().unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteLoss { step: 1, .. }), "{err}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ds = small_dataset(2);
    let cfg = tiny_config(ModelVariant::Pair, 5);
    let mut trainer = Trainer::new(cfg.clone(), &impulse(), &ds).unwrap();
    for _ in 0..3 {
        trainer.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.c2b");
    save_checkpoint(&path, &cfg, &impulse(), trainer.state()).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck, Checkpoint::from_bytes(&std::fs::read(&path).unwrap()).unwrap());
    assert_eq!(ck.config().unwrap(), cfg);
    assert_eq!(ck.code().unwrap(), impulse());

    let state = ck.train_state().unwrap().unwrap();
    assert_eq!(state.step, 3);
    for (a, b) in trainer.model().params().iter().zip(state.model.params().iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    let (m0, v0) = trainer.state().adam.moments();
    let (m1, v1) = state.adam.moments();
    assert_eq!((m0, v0), (m1, v1));
    assert_eq!(trainer.state().adam.step_count(), state.adam.step_count());

    let code = TiledCode::new(&impulse(), 24, 24).unwrap();
    let ex = make_example(&ds.clips[0].crop(0, 0, 24, 24).unwrap(), &code, ModelVariant::Pair).unwrap();
    let before = trainer.model().reconstruct(ex.coded.as_ref(), ex.blurred.as_ref()).unwrap();
    let after = state.model.reconstruct(ex.coded.as_ref(), ex.blurred.as_ref()).unwrap();
    assert_eq!(before, after);

    let weights_only = Checkpoint::from_model(&cfg, &impulse(), trainer.model());
    assert!(weights_only.train_state().unwrap().is_none());
    assert_eq!(weights_only.model().unwrap().params().num_values(), trainer.model().params().num_values());
}

#[test]
fn corrupt_checkpoints_rejected() {
    let cfg = tiny_config(ModelVariant::CodedOnly, 5);
    let state = TrainState::fresh(&cfg).unwrap();
    let bytes = Checkpoint::from_state(&cfg, &impulse(), &state).to_bytes();
    let dir = tempfile::tempdir().unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let p = dir.path().join("magic.c2b");
    std::fs::write(&p, &bad_magic).unwrap();
    assert!(matches!(load_checkpoint(&p), Err(TrainError::Checkpoint { .. })));

    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(Checkpoint::from_bytes(&bad_version).unwrap_err().contains("version"));

    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    assert!(load_checkpoint(&dir.path().join("missing.c2b")).is_err());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let ds = small_dataset(3);
    let mut cfg = tiny_config(ModelVariant::Pair, 9);
    cfg.max_steps = Some(14);
    let (_, full) = train(cfg.clone(), &impulse(), &ds).unwrap();

    let mut first = Trainer::new(cfg.clone(), &impulse(), &ds).unwrap();
    for _ in 0..4 {
        first.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.c2b");
    save_checkpoint(&path, &cfg, &impulse(), first.state()).unwrap();
    let state = load_checkpoint(&path).unwrap().train_state().unwrap().unwrap();
    let mut second = Trainer::resume(cfg, &impulse(), &ds, state).unwrap();
    second.run().unwrap();
    assert_eq!(second.history().len(), 10);
    let stitched: Vec<LossRecord> = first.history().iter().chain(second.history()).copied().collect();
    assert_eq!(stitched, full);
}

#[test]
fn shipped_configs_match_presets() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let full = TrainConfig::from_file(&root.join("full.toml"), &[]).unwrap();
    assert_eq!(full, TrainConfig::full_scale(0));
    let desk = TrainConfig::from_file(&root.join("desk.toml"), &[]).unwrap();
    assert_eq!(desk, TrainConfig::desk_scale(0));
    let coded = TrainConfig::from_file(&root.join("desk.toml"), &["model.variant=coded".into(), "seed=4".into()]).unwrap();
    assert_eq!(coded, TrainConfig::desk_scale(4).with_variant(ModelVariant::CodedOnly));
}
