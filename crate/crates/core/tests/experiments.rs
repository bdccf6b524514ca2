use std::sync::OnceLock;

use jscc::dataio::{open_dataset, Dataset, Split};
use jscc::experiments::{
    compare_methods, evaluate, flops_report, robustness_grid, snr_sweep, EvalOptions, Model, ModelStore,
};
use jscc::metrics::{write_metrics_csv, MetricsReport};
use jscc::nets::{build_generator, encoder_spec, generator_spec};
use jscc::runspec::{DatasetId, Method, RunSpec, TrainConfig};
use jscc::trainer::TrainState;
use jscc::JsccError;

fn id() -> DatasetId {
    DatasetId::Synthetic { count: 40, height: 32, width: 32 }
}

fn spec(snr: f64) -> RunSpec {
    RunSpec::new(id(), 1.0 / 12.0, snr).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig { epochs: 20, ..TrainConfig::default() }
}

struct Fixture {
    _dir: tempfile::TempDir,
    store: ModelStore,
    train: Dataset,
    test: Dataset,
}

/// Models trained once per test binary at 1, 10 and 15 dB.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let store = ModelStore { root: dir.path().to_path_buf(), train_missing: true, workers: 3 };
        let train = open_dataset(&id(), Split::Train).unwrap();
        let test = open_dataset(&id(), Split::Test).unwrap();
        let cells: Vec<_> = [1.0, 10.0, 15.0].iter().map(|&s| (Method::GUnet, spec(s))).collect();
        store.obtain(&cells, &cfg(), &train).unwrap();
        Fixture { _dir: dir, store: ModelStore { train_missing: false, ..store }, train, test }
    })
}

fn model(snr: f64) -> Model {
    let f = fixture();
    f.store.obtain(&[(Method::GUnet, spec(snr))], &cfg(), &f.train).unwrap().remove(0)
}

fn csv(rows: &[MetricsReport]) -> Vec<u8> {
    let mut b = Vec::new();
    write_metrics_csv(&mut b, rows).unwrap();
    b
}

fn opts() -> EvalOptions<'static> {
    EvalOptions::default()
}

#[test]
fn trained_model_beats_untrained_at_matched_snr() {
    let f = fixture();
    let untrained = Model::from_state(&TrainState::init(Method::GUnet, spec(10.0), cfg()).unwrap());
    let a = evaluate(&untrained, 10.0, &f.test, &opts()).unwrap();
    let b = evaluate(&model(10.0), 10.0, &f.test, &opts()).unwrap();
    assert!(b.psnr_db >= a.psnr_db, "{b} vs {a}");
}

#[test]
fn noiseless_channel_bounds_noisy_evaluation() {
    let f = fixture();
    let untrained = Model::from_state(&TrainState::init(Method::GUnet, spec(10.0), cfg()).unwrap());
    for m in [untrained, model(10.0), model(1.0)] {
        let clean = evaluate(&m, f64::INFINITY, &f.test, &opts()).unwrap();
        for snr in [1.0, 10.0] {
            let noisy = evaluate(&m, snr, &f.test, &opts()).unwrap();
            assert!(clean.psnr_db >= noisy.psnr_db - 0.3, "{clean} vs {noisy}");
        }
    }
}

#[test]
fn single_image_report() {
    let f = fixture();
    let r = evaluate(&model(10.0), 10.0, &f.test, &EvalOptions { n_images: 1, ..opts() }).unwrap();
    assert_eq!(r.n_images, 1);
    assert!(r.psnr_db.is_finite() && r.ssim.is_finite());
    assert_eq!(r.lpips, None);
}

#[test]
fn sweep_is_monotone_paired_and_deterministic() {
    let f = fixture();
    let m = model(10.0);
    let snrs = [1.0, 4.0, 7.0, 10.0, 13.0];
    let rows = snr_sweep(&m, &snrs, &f.test, &opts()).unwrap();
    assert_eq!(rows.len(), 5);
    for w in rows.windows(2) {
        assert!(w[1].psnr_db >= w[0].psnr_db - 0.3, "{} then {}", w[0], w[1]);
    }
    assert_eq!(csv(&rows), csv(&snr_sweep(&m, &snrs, &f.test, &opts()).unwrap()));
    let one = snr_sweep(&m, &[7.0], &f.test, &opts()).unwrap();
    assert_eq!(one, vec![rows[2].clone()]);
    assert!(snr_sweep(&m, &[], &f.test, &opts()).is_err());
}

#[test]
fn repeats_average_independent_draws() {
    let f = fixture();
    let m = model(10.0);
    let one = evaluate(&m, 1.0, &f.test, &opts()).unwrap();
    let three = evaluate(&m, 1.0, &f.test, &EvalOptions { repeats: 3, ..opts() }).unwrap();
    assert_ne!(one.psnr_db, three.psnr_db);
    assert!((one.psnr_db - three.psnr_db).abs() < 1.0);
}

#[test]
fn evaluation_rejects_other_geometry() {
    let other = open_dataset(&DatasetId::Synthetic { count: 4, height: 64, width: 64 }, Split::Test).unwrap();
    let err = evaluate(&model(10.0), 10.0, &other, &opts()).unwrap_err();
    assert!(matches!(err, JsccError::Contract(_)), "{err}");
}

#[test]
fn robustness_grid_matches_sweeps_and_favours_matched_training() {
    let f = fixture();
    let tests = [1.0, 15.0];
    let grid =
        robustness_grid(Method::GUnet, &spec(10.0), &cfg(), &[1.0, 15.0], &tests, &f.train, &f.test, &f.store, &opts())
            .unwrap();
    assert_eq!((grid.len(), grid[0].len()), (2, 2));
    assert_eq!(grid[0], snr_sweep(&model(1.0), &tests, &f.test, &opts()).unwrap());
    assert_eq!(grid[1], snr_sweep(&model(15.0), &tests, &f.test, &opts()).unwrap());
    assert!(grid[0][0].psnr_db > grid[1][0].psnr_db, "{} vs {}", grid[0][0], grid[1][0]);
    assert!(grid[0][0].ssim > grid[1][0].ssim);

    let single =
        robustness_grid(Method::GUnet, &spec(10.0), &cfg(), &[10.0], &[4.0], &f.train, &f.test, &f.store, &opts())
            .unwrap();
    assert_eq!(single, vec![vec![evaluate(&model(10.0), 4.0, &f.test, &opts()).unwrap()]]);
}

#[test]
fn missing_cells_are_listed_when_training_is_disabled() {
    let f = fixture();
    let err = robustness_grid(
        Method::GUnet,
        &spec(10.0),
        &cfg(),
        &[1.0, 3.0, 5.0],
        &[1.0],
        &f.train,
        &f.test,
        &f.store,
        &opts(),
    )
    .unwrap_err();
    match err {
        JsccError::MissingCells(cells) => {
            assert_eq!(cells, vec!["g_unet/synthetic-40-32x32/r0.0833_snr3", "g_unet/synthetic-40-32x32/r0.0833_snr5"])
        }
        other => panic!("{other}"),
    }
}

#[test]
fn comparison_of_one_method_is_its_sweep() {
    let f = fixture();
    let snrs = [1.0, 10.0];
    let cmp =
        compare_methods(&[Method::GUnet], &spec(10.0), &cfg(), &snrs, &f.train, &f.test, &f.store, &opts()).unwrap();
    assert_eq!(cmp.rows, snr_sweep(&model(10.0), &snrs, &f.test, &opts()).unwrap());
    // Originals row plus one row per method, eight samples wide, 2-pixel gutters.
    assert_eq!(cmp.grid.dimensions(), (8 * 34 + 2, 2 * 34 + 2));
}

#[test]
fn comparison_grid_has_a_row_per_method() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let store = ModelStore { root: dir.path().to_path_buf(), train_missing: true, workers: 1 };
    let quick = TrainConfig { epochs: 1, ..cfg() };
    let methods = [Method::GUnet, Method::Baseline, Method::Cgan];
    let cmp = compare_methods(&methods, &spec(10.0), &quick, &[10.0], &f.train, &f.test, &store, &opts()).unwrap();
    assert_eq!(cmp.rows.len(), 3);
    assert_eq!(cmp.grid.height(), 4 * 34 + 2);
    assert!("deep_jscc".parse::<Method>().is_err());
}

#[test]
fn flops_grow_with_every_width_and_kernel() {
    let total = |s: &jscc::nets::NetworkSpec| flops_report(s).unwrap().total;
    assert!(total(&encoder_spec(32, 32, 3, 4)) > total(&encoder_spec(32, 32, 3, 2)));
    assert!(total(&generator_spec(16, 16, 4, 3)) > total(&generator_spec(16, 16, 2, 3)));
    let base = generator_spec(16, 16, 2, 3);
    for i in 0..base.layers.len() {
        let mut wider = base.clone();
        wider.layers[i].filters += 1;
        assert!(total(&wider) > total(&base), "filters of layer {i}");
        let mut bigger = base.clone();
        bigger.layers[i].kernel += 2;
        if bigger.shapes().is_ok() {
            assert!(total(&bigger) > total(&base), "kernel of layer {i}");
        }
    }
    let g = flops_report(&build_generator(&spec(10.0)).unwrap()).unwrap();
    let tconv3 = g.entries.iter().find(|e| e.layer == "tconv3").unwrap();
    assert_eq!((tconv3.k_in, tconv3.k_out), (128, 64));
}
