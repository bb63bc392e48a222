use skim_core::eval::{per_class_counts, wills_error};
use skim_core::io::{
    load_network, load_raster, load_raster_set, save_network, save_raster, save_raster_set,
};
use skim_core::patterns::{
    augment_training_set, gen_embedded_task, gen_synthetic_digits, pick_exemplars,
    SyntheticDigitParams,
};
use skim_core::protocol::{evaluate_stream, train_network, PatternTaskConfig, ThresholdRule};
use skim_core::pruning::prune_iterative;
use skim_core::rng::substream;
use skim_core::train::{fit, training_residual, SolveOptions, TrainingSet};
use skim_core::{KernelFamily, NetworkParams, ParamRange, SkimNetwork};

fn small_config(seed: u64) -> PatternTaskConfig {
    let mut cfg = PatternTaskConfig::standard(seed);
    cfg.task.stream_len = 10_000;
    cfg.task.num_embeddings = 25;
    cfg.test_stream_len = 6_000;
    cfg.test_embeddings = 12;
    cfg.network.num_dendrites = 30;
    cfg
}

#[test]
fn trained_network_survives_files() {
    let cfg = small_config(21);
    let (raster, target, _) = gen_embedded_task(&cfg.task).unwrap();
    let (test_raster, _, test_task) = gen_embedded_task(&cfg.test_task_params()).unwrap();
    let dir = tempfile::tempdir().unwrap();

    save_raster(&raster, &dir.path().join("train.txt")).unwrap();
    let raster = load_raster(&dir.path().join("train.txt")).unwrap();
    let data = TrainingSet::single(raster, target).unwrap();
    let mut net = SkimNetwork::new(cfg.network.clone()).unwrap();
    train_network(&mut net, &data, &cfg.solve, ThresholdRule::Calibrated).unwrap();

    let path = dir.path().join("net.json");
    save_network(&net, &path).unwrap();
    let loaded = load_network(&path).unwrap();
    assert_eq!(loaded, net);
    let a = evaluate_stream(&net, &test_raster, &test_task, &cfg.scoring).unwrap();
    let b = evaluate_stream(&loaded, &test_raster, &test_task, &cfg.scoring).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.counts.positives(), 12);
}

#[test]
fn online_training_tracks_batch_residual() {
    let cfg = small_config(22);
    let (raster, target, _) = gen_embedded_task(&cfg.task).unwrap();
    let data = TrainingSet::single(raster, target).unwrap();
    let mut batch = SkimNetwork::new(cfg.network.clone()).unwrap();
    fit(&mut batch, &data, &SolveOptions::default()).unwrap();
    let mut online = SkimNetwork::new(cfg.network.clone()).unwrap();
    fit(&mut online, &data, &SolveOptions::online(1e-6)).unwrap();
    let rb = training_residual(&batch, &data).unwrap();
    let ro = training_residual(&online, &data).unwrap();
    assert!(rb <= ro * (1.0 + 1e-9), "batch {rb} online {ro}");
    assert!(ro <= rb * 1.01, "batch {rb} online {ro}");
}

#[test]
fn iterative_pruning_rarely_raises_the_residual() {
    let mut non_increasing = 0;
    for seed in 0..20 {
        let cfg = small_config(100 + seed);
        let (raster, target, _) = gen_embedded_task(&cfg.task).unwrap();
        let data = TrainingSet::single(raster, target).unwrap();
        let net = SkimNetwork::new(cfg.network.clone()).unwrap();
        let (_, report) = prune_iterative(&net, &data, 0.2, 3, seed, true, &cfg.solve).unwrap();
        let residuals: Vec<f64> = report
            .rounds
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.residual_after)
            .collect();
        let mut prev = report.residual_before;
        let mut ok = true;
        for r in residuals {
            ok &= r <= prev;
            prev = r;
        }
        non_increasing += ok as usize;
    }
    assert!(non_increasing >= 16, "{non_increasing} of 20");
}

#[test]
fn shared_dendrite_classifier_on_digit_corpus() {
    let corpus_params = SyntheticDigitParams {
        num_classes: 4,
        per_class: 6,
        seed: 3,
        ..Default::default()
    };
    let corpus = gen_synthetic_digits(&corpus_params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.txt");
    save_raster_set(&corpus, &path).unwrap();
    let corpus = load_raster_set(&path).unwrap();

    let exemplars = pick_exemplars(&corpus, &mut substream(3, "exemplars")).unwrap();
    assert_eq!(exemplars.len(), 4);
    let train = augment_training_set(&exemplars, 0.76, 1.24, 7).unwrap();
    assert_eq!(train.len(), 28);

    let targets = train.targets(4, 200, 1.0).unwrap();
    let data = TrainingSet::new(train.rasters.clone(), targets).unwrap();
    let family =
        KernelFamily::delayed_gaussian(ParamRange::new(0.0, 330.0), ParamRange::new(110.0, 220.0));
    let params = NetworkParams {
        weight_range: (-0.5, 0.5),
        ..NetworkParams::new(corpus.num_channels, 40, 4, family).seed(3)
    };
    let mut net = SkimNetwork::new(params).unwrap();
    train_network(
        &mut net,
        &data,
        &SolveOptions::default(),
        ThresholdRule::Calibrated,
    )
    .unwrap();

    let counts = per_class_counts(&net, &corpus, 200).unwrap();
    assert_eq!(counts.len(), 4);
    for c in &counts {
        assert_eq!(c.positives(), 6);
        assert_eq!(c.negatives(), 18);
        assert!(wills_error(c).value.is_finite() || wills_error(c).degenerate);
    }
}
