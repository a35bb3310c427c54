use dualspace_core::backbone::{Backbone, BackboneSpec, HiddenStates, TapPoint, VisionTransformer};
use dualspace_core::benchmark::{blob_images, BlobImageConfig};
use dualspace_core::distillation::{
    discrepancy_from_states, load_ensemble, save_ensemble, student_seed, train_students_on_states,
    train_students_resumable, StudentEnsemble, StudentInit, TrainConfig,
};

struct Fixture {
    teacher: VisionTransformer,
    normal: HiddenStates,
    held_out_normal: HiddenStates,
    anomalous: HiddenStates,
}

fn fixture(data_seed: u64, spec: BackboneSpec) -> Fixture {
    let ds = blob_images(&BlobImageConfig {
        train_per_class: 50,
        test_per_class: 20,
        seed: data_seed,
        ..BlobImageConfig::default()
    })
    .unwrap();
    let teacher = VisionTransformer::mock(spec, 0).unwrap();
    let bb = Backbone::Vit(Box::new(teacher.clone()));
    let train = bb.encode(&ds.train).unwrap();
    let test = bb.encode(&ds.test).unwrap();
    let idx = |labels: &[usize], pred: &dyn Fn(usize) -> bool| -> Vec<usize> {
        (0..labels.len()).filter(|&i| pred(labels[i])).collect()
    };
    let normal_train = idx(ds.train_labels(), &|l| l == 0);
    let normal_test = idx(ds.test_labels(), &|l| l == 0);
    let anomalous_test = idx(ds.test_labels(), &|l| l != 0);
    Fixture {
        teacher,
        normal: train.hidden.as_ref().unwrap().select(&normal_train),
        held_out_normal: test.hidden.as_ref().unwrap().select(&normal_test),
        anomalous: test.hidden.as_ref().unwrap().select(&anomalous_test),
    }
}

fn cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        learning_rate: 1e-3,
        early_stop_patience: None,
        seed,
        ..TrainConfig::default()
    }
}

fn copy_ensemble(teacher: &VisionTransformer, blocks: &[usize]) -> StudentEnsemble {
    let config = TrainConfig {
        init: StudentInit::TeacherCopy,
        ..TrainConfig::default()
    };
    StudentEnsemble {
        block_indices: blocks.to_vec(),
        students: blocks.iter().map(|&j| teacher.block(j).unwrap().clone()).collect(),
        training_log: Vec::new(),
        config,
        backbone_id: teacher.identifier(),
        tap: teacher.spec().tap,
    }
}

#[test]
fn teacher_copies_give_zero_discrepancy() {
    for tap in [TapPoint::Residual, TapPoint::Normalized] {
        let mut spec = BackboneSpec::mock();
        spec.tap = tap;
        let f = fixture(0, spec);
        let e = copy_ensemble(&f.teacher, &[0, 5, 11]);
        let d = discrepancy_from_states(&f.teacher, &f.anomalous, &e).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0), "{tap:?}");
    }
}

#[test]
fn teacher_copy_training_is_a_no_op() {
    let f = fixture(0, BackboneSpec::mock());
    let c = TrainConfig {
        init: StudentInit::TeacherCopy,
        ..cfg(0)
    };
    let e = train_students_on_states(&f.teacher, &f.normal, &[3, 11], &c).unwrap();
    for (&j, s) in e.block_indices.iter().zip(&e.students) {
        assert_eq!(s, f.teacher.block(j).unwrap());
    }
    assert!(e.training_log.iter().all(|l| l.initial_loss == 0.0 && l.final_loss == 0.0));
}

#[test]
fn constant_offset_gives_closed_form_discrepancy() {
    let f = fixture(0, BackboneSpec::mock());
    let delta = 0.125;
    let mut e = copy_ensemble(&f.teacher, &[4]);
    e.students[0].fc2_bias += delta;
    let d = discrepancy_from_states(&f.teacher, &f.held_out_normal, &e).unwrap();
    let spec = f.teacher.spec();
    let want = (spec.num_tokens() * spec.embed_dim) as f64 * delta * delta;
    for v in d.values.iter() {
        assert!((v - want).abs() < 1e-9 * want, "{v} vs {want}");
    }
}

#[test]
fn training_reduces_loss_and_separates_anomalies() {
    let f = fixture(0, BackboneSpec::mock());
    let blocks: Vec<usize> = (0..12).collect();
    let e = train_students_on_states(&f.teacher, &f.normal, &blocks, &cfg(0)).unwrap();
    for log in &e.training_log {
        assert!(log.final_loss < log.initial_loss, "block {}", log.block_index);
        assert_eq!(log.epoch_losses.len(), 10);
        assert!(log.normality.is_some());
    }
    let mean_total = |s: &HiddenStates| {
        let d = discrepancy_from_states(&f.teacher, s, &e).unwrap();
        d.values.sum() / d.nrows() as f64
    };
    assert!(mean_total(&f.anomalous) > mean_total(&f.held_out_normal));
}

#[test]
fn teacher_is_untouched_by_training() {
    let f = fixture(1, BackboneSpec::mock());
    let before = f.teacher.clone();
    train_students_on_states(&f.teacher, &f.normal, &[11], &cfg(0)).unwrap();
    assert_eq!(before, f.teacher);
}

#[test]
fn students_do_not_depend_on_which_other_blocks_train() {
    let f = fixture(0, BackboneSpec::mock());
    let both = train_students_on_states(&f.teacher, &f.normal, &[2, 9], &cfg(5)).unwrap();
    let alone = train_students_on_states(&f.teacher, &f.normal, &[9], &cfg(5)).unwrap();
    assert_eq!(both.students[1], alone.students[0]);
    assert_eq!(both.subset(&[9]).unwrap(), alone);
    assert_eq!(both.training_log[1].seed, student_seed(5, 9));
}

#[test]
fn invalid_block_lists_are_rejected() {
    let f = fixture(0, BackboneSpec::mock());
    for bad in [&[][..], &[12][..], &[5, 3][..], &[4, 4][..]] {
        assert!(train_students_on_states(&f.teacher, &f.normal, bad, &cfg(0)).is_err());
    }
}

#[test]
fn checkpoint_round_trip() {
    let f = fixture(0, BackboneSpec::mock());
    let c = TrainConfig { epochs: 2, ..cfg(0) };
    let e = train_students_on_states(&f.teacher, &f.normal, &[1, 10], &c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_ensemble(&e, dir.path()).unwrap();
    let back = load_ensemble(dir.path()).unwrap();
    assert_eq!(back.block_indices, e.block_indices);
    assert_eq!(back.students, e.students);
    assert_eq!(back.config, e.config);
    let a = discrepancy_from_states(&f.teacher, &f.anomalous, &e).unwrap();
    let b = discrepancy_from_states(&f.teacher, &f.anomalous, &back).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resumed_training_skips_finished_blocks() {
    let f = fixture(0, BackboneSpec::mock());
    let c = TrainConfig { epochs: 2, ..cfg(0) };
    let dir = tempfile::tempdir().unwrap();
    let first = train_students_resumable(&f.teacher, &f.normal, &[3, 7], &c, dir.path()).unwrap();
    assert_eq!(first.trained_blocks, vec![3, 7]);
    // Simulate an interruption after block 3.
    std::fs::remove_file(dir.path().join("block_07.json")).unwrap();
    std::fs::remove_file(dir.path().join("block_07.bin")).unwrap();
    let second = train_students_resumable(&f.teacher, &f.normal, &[3, 7], &c, dir.path()).unwrap();
    assert_eq!(second.resumed_blocks, vec![3]);
    assert_eq!(second.trained_blocks, vec![7]);
    assert_eq!(second.ensemble.students, first.ensemble.students);

    let changed = TrainConfig { epochs: 3, ..c };
    let third = train_students_resumable(&f.teacher, &f.normal, &[3, 7], &changed, dir.path()).unwrap();
    assert!(third.resumed_blocks.is_empty());
}
