use iiprl_core::agent::{train, ReferenceMode, TrainSchedule, TrainingSet};
use iiprl_core::embedding::{train_identity_head, EmbedConfig, Embedder, HeadTraining};
use iiprl_core::environment::{EnvConfig, Window};
use iiprl_core::evaluation::{evaluate_baseline, evaluate_windows, Baseline, QueryMode, CENTRE_RATIOS};
use iiprl_core::imaging::{generate_synthetic_dataset, GenSpec, Sample, Split};
use iiprl_core::rewards::RewardKind;

fn split(data: &[Sample], which: Split) -> Vec<Sample> {
    data.iter().filter(|s| s.split == which).cloned().collect()
}

fn embedder_for(train: &[Sample], seed: u64) -> Embedder {
    let (head, _) = train_identity_head(train, &EmbedConfig::default(), &HeadTraining::default(), seed).unwrap();
    Embedder::new(head).unwrap()
}

#[test]
fn rc_training_raises_episode_return() {
    // clutter only ever sits in the detector margins
    let spec = GenSpec {
        identities: 10,
        images_per_view: 2,
        clutter: [6, 10],
        train_fraction: 1.0,
        seed: 21,
        ..GenSpec::default()
    };
    let data = generate_synthetic_dataset(&spec).unwrap();
    let train_split = split(&data, Split::Train);
    let embedder = embedder_for(&train_split, 21);
    let set = TrainingSet::new(&train_split, &embedder).unwrap();
    let schedule = TrainSchedule {
        warmup: 64,
        batch: 16,
        hidden: vec![64, 64],
        ..TrainSchedule::default()
    };
    let (_, log) = train(
        &schedule,
        &EnvConfig::default(),
        &set,
        &embedder,
        RewardKind::Rc,
        &ReferenceMode::Resample,
        21,
    )
    .unwrap();
    assert_eq!(log.len(), 10);
    let (first, last) = (&log[0], &log[9]);
    assert!(
        last.mean_return > first.mean_return,
        "epoch 10 return {} not above epoch 1 return {}",
        last.mean_return,
        first.mean_return
    );
}

#[test]
fn truth_windows_do_not_lose_to_full_boxes() {
    let spec = GenSpec {
        clutter: [8, 12],
        seed: 3,
        ..GenSpec::default()
    };
    let data = generate_synthetic_dataset(&spec).unwrap();
    let (probes, gallery) = (split(&data, Split::Probe), split(&data, Split::Gallery));
    let embedder = embedder_for(&split(&data, Split::Train), 3);
    let truth = |s: &[Sample]| -> Vec<Window> { s.iter().map(|x| x.truth_window.unwrap()).collect() };
    let refined = evaluate_windows(
        &probes,
        &gallery,
        &truth(&probes),
        &truth(&gallery),
        &embedder,
        QueryMode::Single,
        20,
    )
    .unwrap()
    .summary;
    let full = evaluate_baseline(&Baseline::None, &probes, &gallery, &embedder, QueryMode::Single, 20, 0).unwrap();
    assert!(refined.rank(1) >= full.rank(1), "truth {} < full {}", refined.rank(1), full.rank(1));
}

#[test]
fn centre_ladder_degrades_on_centred_people() {
    // no detector shift: the person fills the box, so every crop cuts body
    let spec = GenSpec {
        jitter: [0.0, 0.0],
        seed: 4,
        ..GenSpec::default()
    };
    let data = generate_synthetic_dataset(&spec).unwrap();
    let (probes, gallery) = (split(&data, Split::Probe), split(&data, Split::Gallery));
    let embedder = embedder_for(&split(&data, Split::Train), 4);
    let ladder: Vec<f64> = CENTRE_RATIOS
        .iter()
        .map(|&r| {
            evaluate_baseline(&Baseline::Centre(r), &probes, &gallery, &embedder, QueryMode::Single, 20, 0)
                .unwrap()
                .rank(1)
        })
        .collect();
    assert!(CENTRE_RATIOS.windows(2).all(|w| w[1] < w[0]), "ratios run from wide to narrow");
    assert!(ladder.windows(2).all(|w| w[1] <= w[0]), "{ladder:?}");
}
