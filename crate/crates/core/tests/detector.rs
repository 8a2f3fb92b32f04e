use dbanomaly::data::{make_windows, MetricFrame, MetricKind, Split};
use dbanomaly::detector::*;
use dbanomaly::nn::{Layer, LayerSpec, Network};
use dbanomaly::synth::{generate, ScenarioSpec};
use dbanomaly::{Error, ErrorCategory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_frame(seed: u64) -> MetricFrame {
    generate(&ScenarioSpec::with_default_injections(seed, 1_200)).unwrap().stats
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        max_epochs: 6,
        patience: 3,
        window_len: 10,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn trained(arch: &str) -> (TrainOutcome, dbanomaly::data::WindowSet) {
    let cfg = quick_config();
    let (norm, windows) = prepare_windows(&small_frame(1), &cfg).unwrap();
    let outcome = train(&windows, &norm, &parse_architecture(arch).unwrap(), &cfg).unwrap();
    (outcome, windows)
}

#[test]
fn linear_data_is_learned() {
    // Two features that are affine in time: every window lies on a 2-d affine set.
    let n = 400usize;
    let ts: Vec<i64> = (0..n as i64).map(|t| t * 60).collect();
    let values: Vec<f64> = (0..n).flat_map(|t| [t as f64, 50.0 - 0.5 * t as f64]).collect();
    let frame = MetricFrame::new(vec!["a".into(), "b".into()], ts, values, MetricKind::Stat).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        l2_lambda: 0.0,
        batch_size: 32,
        max_epochs: 300,
        patience: 300,
        window_len: 5,
        ..TrainConfig::default()
    };
    let out = train_frame(&frame, &parse_architecture("PCA-network (4)").unwrap(), &cfg).unwrap();
    let best = out.history.best().unwrap();
    assert!(best.val_loss < 1e-3, "validation MSE {}", best.val_loss);
}

#[test]
fn same_seed_same_model() {
    let (a, _) = trained("BTN-(16)-(8)-(16*)-BTN*");
    let (b, _) = trained("BTN-(16)-(8)-(16*)-BTN*");
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
    assert_eq!(a.test_mse.to_bits(), b.test_mse.to_bits());
}

#[test]
fn selected_epoch_has_lowest_validation_loss() {
    let (out, _) = trained("BN-(16)-(8)-(16*)-BN*");
    let best = out.history.best().unwrap();
    assert!(out.history.epochs.iter().all(|e| best.val_loss <= e.val_loss));
    let first_min = out
        .history
        .epochs
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .unwrap();
    assert_eq!(first_min.epoch, out.history.best_epoch);
    assert_eq!(out.model.training.as_ref().unwrap().best_epoch, out.history.best_epoch);
}

#[test]
fn patience_stops_early() {
    let cfg = TrainConfig {
        max_epochs: 200,
        patience: 1,
        learning_rate: 0.05,
        ..quick_config()
    };
    let out = train_frame(&small_frame(2), &parse_architecture("(16)-(8)-(16*)").unwrap(), &cfg).unwrap();
    assert!(out.history.epochs.len() < 200);
    assert_eq!(out.history.epochs.len(), out.history.best_epoch + 1);
}

#[test]
fn score_mean_equals_test_mse() {
    for arch in ["BTN-(16)-(8)-(16*)-BTN*", "BN-(16)-(8)-(16*)-BN*", "(16)-(8)-(16*)"] {
        let (out, windows) = trained(arch);
        let series = score_windows(&out.model, &windows, &windows.indices(Split::Test)).unwrap();
        assert!((series.mean() - out.test_mse).abs() < 1e-12, "{arch}");
        assert!(series.scores.iter().all(|s| *s >= 0.0));
    }
}

#[test]
fn scoring_ignores_batch_composition() {
    for arch in ["BTN-(16)-(8)-(16*)-BTN*", "BN-(16)-(8)-(16*)-BN*"] {
        let (out, windows) = trained(arch);
        let idx: Vec<usize> = (0..windows.len()).step_by(7).collect();
        let together = score_windows(&out.model, &windows, &idx).unwrap();
        for (k, &i) in idx.iter().enumerate() {
            let alone = score_windows(&out.model, &windows, &[i]).unwrap();
            for j in 0..alone.features() {
                assert_eq!(alone.score(0, j), together.score(k, j), "{arch} window {i}");
            }
        }
    }
}

fn constant_output_network(t: usize, f: usize, bias: &[f64]) -> Network {
    let mut net = Network::build(&[t, f], &[LayerSpec::Dense(t * f)], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    if let Layer::Dense(d) = &mut net.layers_mut()[0] {
        d.weights.fill(0.0);
        d.bias.values_mut().copy_from_slice(bias);
    }
    net
}

#[test]
fn residual_examples() {
    let ts: Vec<i64> = (0..3).map(|t| t * 60).collect();
    let frame = MetricFrame::new(vec!["x".into()], ts, vec![0.0; 3], MetricKind::Stat).unwrap();
    let windows = make_windows(&frame, 3, 1).unwrap();
    let errors = |bias: &[f64]| reconstruction_errors(&constant_output_network(3, 1, bias), &windows, &[0]).unwrap();
    assert_eq!(errors(&[0.0, 0.0, 0.0]), vec![0.0]);
    assert_eq!(errors(&[1.0, -1.0, 1.0]), vec![1.0]);
    assert_eq!(errors(&[3.0, 0.0, 0.0]), vec![3.0]);

    // feature-wise: residual 1 everywhere on feature 1 only
    let ts: Vec<i64> = (0..4).map(|t| t * 60).collect();
    let frame = MetricFrame::new(vec!["a".into(), "b".into()], ts, vec![0.0; 8], MetricKind::Stat).unwrap();
    let windows = make_windows(&frame, 4, 1).unwrap();
    let net = constant_output_network(4, 2, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert_eq!(reconstruction_errors(&net, &windows, &[0]).unwrap(), vec![0.0, 1.0]);
}

#[test]
fn model_file_round_trip() {
    let (out, windows) = trained("BTN-(16)-(8)-(16*)-BTN*");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&out.model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let idx = windows.all_indices();
    assert_eq!(
        score_windows(&out.model, &windows, &idx).unwrap(),
        score_windows(&loaded, &windows, &idx).unwrap()
    );
    assert_eq!(loaded.checksum().unwrap(), out.model.checksum().unwrap());

    let text = std::fs::read_to_string(&path).unwrap();
    let load_text = |t: &str| {
        std::fs::write(&path, t).unwrap();
        load_model(&path)
    };
    let truncated = load_text(&text[..text.len() / 2]).unwrap_err();
    assert!(matches!(truncated, Error::ModelLoad(_)));
    assert_eq!(truncated.category(), ErrorCategory::Model);

    let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    assert!(matches!(load_text(&bumped), Err(Error::ModelLoad(m)) if m.contains("version")));

    let tampered = text.replacen("\"window_len\": 10", "\"window_len\": 11", 1);
    assert_ne!(tampered, text);
    assert!(matches!(load_text(&tampered), Err(Error::ModelLoad(m)) if m.contains("checksum")));
    assert!(matches!(load_model(dir.path().join("missing.json")), Err(Error::ModelLoad(_))));
}

#[test]
fn feature_order_must_match() {
    let (out, _) = trained("BTN-(16)-(8)-(16*)-BTN*");
    let frame = small_frame(3);
    assert!(score_frame(&out.model, &frame, 1).is_ok());
    let mut reversed: Vec<String> = frame.names().to_vec();
    reversed.reverse();
    let swapped = frame.select(&reversed).unwrap();
    match score_frame(&out.model, &swapped, 1) {
        Err(Error::FeatureMismatch { expected, found }) => {
            assert_eq!(expected, frame.names());
            assert_eq!(found, reversed);
        }
        other => panic!("expected feature mismatch, got {other:?}"),
    }
}

#[test]
fn ablation_of_one_equals_train() {
    let cfg = quick_config();
    let (norm, windows) = prepare_windows(&small_frame(1), &cfg).unwrap();
    let arch = parse_architecture("BTN-(16)-(8)-(16*)-BTN*").unwrap();
    let rows = run_ablation(&windows, &norm, std::slice::from_ref(&arch), &cfg).unwrap();
    let direct = train(&windows, &norm, &arch, &cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].test_mse.to_bits(), direct.test_mse.to_bits());
    assert_eq!(rows[0].best_epoch, direct.history.best_epoch);
    assert!(run_ablation(&windows, &norm, &[], &cfg).is_err());
    let table = format_table(&rows);
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn reference_architectures_train_on_small_windows() {
    let cfg = TrainConfig {
        max_epochs: 1,
        ..quick_config()
    };
    let (norm, windows) = prepare_windows(&small_frame(4), &cfg).unwrap();
    let archs: Vec<ArchitectureSpec> = REFERENCE_ARCHITECTURES
        .iter()
        .map(|a| parse_architecture(a).unwrap())
        .collect();
    let rows = run_ablation(&windows, &norm, &archs, &cfg).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.test_mse.is_finite()));
}

#[test]
fn diverging_training_reports_epoch_and_batch() {
    let cfg = TrainConfig {
        learning_rate: 1e200,
        max_epochs: 3,
        ..quick_config()
    };
    match train_frame(&small_frame(1), &parse_architecture("(16)-(8)-(16*)").unwrap(), &cfg) {
        Err(Error::Training { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected a training error, got {:?}", other.map(|o| o.test_mse)),
    }
}
