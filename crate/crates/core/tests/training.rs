use psdepth_core::losses::LossWeights;
use psdepth_core::model::ArchConfig;
use psdepth_core::optim::{AdamConfig, LrSchedule};
use psdepth_core::synth::{generate_sample, SceneConfig, StereoSample};
use psdepth_core::train::{pseudo_label, PseudoLabel, StudentObjective};
use psdepth_core::trainer::{Schedule, StereoPair, StudentTrainer, TeacherPlan, TeacherTrainer};
use psdepth_core::Error;

fn data(n: u64) -> Vec<StereoSample> {
    let cfg = SceneConfig::default();
    (0..n).map(|i| generate_sample(&cfg, i).unwrap()).collect()
}

fn schedule(milestones: Vec<usize>, seed: u64) -> Schedule {
    Schedule {
        batch_size: 4,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        lr: LrSchedule {
            base: 1e-3,
            milestones,
            factor: 10.0,
        },
        augment: true,
        seed,
    }
}

fn teacher(plan: TeacherPlan, seed: u64) -> TeacherTrainer {
    TeacherTrainer::new(
        &ArchConfig::default(),
        seed,
        schedule(vec![], seed),
        plan,
        LossWeights::default(),
    )
    .unwrap()
}

fn depth_loss(stats: &psdepth_core::trainer::EpochStats) -> f64 {
    stats.tasks.iter().find(|t| t.task == "depth").unwrap().loss.total
}

#[test]
fn two_epochs_reduce_teacher_depth_loss() {
    let train = data(8);
    let mut t = teacher(
        TeacherPlan {
            epochs: 2,
            semantic_start_epoch: 2,
            over_train_epochs: 0,
        },
        1,
    );
    let e1 = t.train_epoch(&train).unwrap();
    let e2 = t.train_epoch(&train).unwrap();
    assert_eq!((e1.phase, e2.phase), ("joint", "joint"));
    assert_eq!(e1.tasks.len(), 2);
    assert!(
        depth_loss(&e2) < depth_loss(&e1),
        "{} !< {}",
        depth_loss(&e2),
        depth_loss(&e1)
    );
    assert!(t.is_finished());
    assert!(t.train_epoch(&train).is_err());
}

#[test]
fn teacher_training_is_deterministic() {
    let train = data(4);
    let plan = TeacherPlan {
        epochs: 2,
        semantic_start_epoch: 1,
        over_train_epochs: 1,
    };
    let run = || {
        let mut t = teacher(plan.clone(), 5);
        let mut losses = Vec::new();
        while !t.is_finished() {
            losses.push(depth_loss(&t.train_epoch(&train).unwrap()));
        }
        (t.params, t.adam, losses)
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let bits = |p: &psdepth_core::model::NetworkParameters<f32>| -> Vec<u32> {
        p.tensors()
            .iter()
            .flat_map(|t| t.data.iter().map(|v| v.to_bits()))
            .collect()
    };
    assert_eq!(bits(&a.0), bits(&b.0));
}

#[test]
fn phases_follow_the_plan() {
    let train = data(4);
    let mut t = teacher(
        TeacherPlan {
            epochs: 2,
            semantic_start_epoch: 1,
            over_train_epochs: 1,
        },
        2,
    );
    let phases: Vec<(&str, usize)> = (0..3)
        .map(|_| {
            let s = t.train_epoch(&train).unwrap();
            (s.phase, s.tasks.len())
        })
        .collect();
    assert_eq!(phases, [("joint", 2), ("semantic", 2), ("over_train", 1)]);
}

#[test]
fn zero_over_training_leaves_the_regular_teacher() {
    let train = data(4);
    let plan = TeacherPlan {
        epochs: 1,
        semantic_start_epoch: 1,
        over_train_epochs: 0,
    };
    let mut t = teacher(plan, 3);
    t.train_epoch(&train).unwrap();
    let regular = t.params.clone();
    assert!(t.is_finished());
    assert_eq!(t.params, regular);
}

#[test]
fn recorded_lr_follows_milestones() {
    let s = schedule(vec![30, 40], 0);
    assert_eq!(s.lr.lr_at(30), 1e-3);
    assert!((s.lr.lr_at(31) - 1e-4).abs() < 1e-18);
    assert!((s.lr.lr_at(41) - 1e-5).abs() < 1e-18);
}

fn labels(t: &TeacherTrainer, train: &[StereoSample]) -> Vec<PseudoLabel> {
    train
        .iter()
        .map(|s| pseudo_label(&t.params, &s.left, &s.right, 0.01).unwrap())
        .collect()
}

#[test]
fn student_objectives_train() {
    let train = data(8);
    let mut t = teacher(
        TeacherPlan {
            epochs: 1,
            semantic_start_epoch: 1,
            over_train_epochs: 0,
        },
        1,
    );
    t.train_epoch(&train).unwrap();
    let pseudo = labels(&t, &train);
    for p in &pseudo {
        assert_eq!(p.disparity.as_plane().height(), 64);
        assert!(p.disparity.as_plane().data().iter().all(|v| v.is_finite() && *v > 0.0));
    }
    assert_eq!(pseudo, labels(&t, &train));
    let pairs: Vec<StereoPair> = train.iter().map(StereoPair::of).collect();
    let pgt_only = LossWeights {
        gamma4: 0.0,
        gamma5: 0.0,
        ..LossWeights::default()
    };
    for (objective, weights) in [
        (StudentObjective::Pseudo, LossWeights::default()),
        (StudentObjective::Pseudo, pgt_only),
        (StudentObjective::Photometric, LossWeights::default()),
    ] {
        let mut s = StudentTrainer::new(&ArchConfig::default(), 9, schedule(vec![], 9), 3, objective, weights).unwrap();
        let first = depth_loss(&s.train_epoch(&pairs, Some(&pseudo)).unwrap());
        s.train_epoch(&pairs, Some(&pseudo)).unwrap();
        let third = depth_loss(&s.train_epoch(&pairs, Some(&pseudo)).unwrap());
        assert!(third.is_finite() && third < first, "{objective:?}: {third} !< {first}");
    }
}

#[test]
fn pseudo_student_requires_labels() {
    let pairs: Vec<StereoPair> = data(2).iter().map(StereoPair::of).collect();
    let mut s = StudentTrainer::new(
        &ArchConfig::default(),
        1,
        schedule(vec![], 1),
        1,
        StudentObjective::Pseudo,
        LossWeights::default(),
    )
    .unwrap();
    assert!(matches!(s.train_epoch(&pairs, None), Err(Error::InvalidConfig(_))));
    assert!(StudentTrainer::new(
        &ArchConfig::default(),
        1,
        schedule(vec![], 1),
        0,
        StudentObjective::Pseudo,
        LossWeights::default()
    )
    .is_err());
}
