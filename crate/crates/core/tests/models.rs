//! Model behaviour on small fixtures: fits, persistence and determinism.

mod common;

use driftbench::metrics::{compute_metrics, confusion};
use driftbench::models::{
    fit, predict, Family, GbdtParams, Hyperparams, KnnParams, MlpParams, ModelArtifact, NbParams,
    RfParams, SvmParams,
};
use driftbench::synthgen::SynthSpec;
use driftbench::{SparseDataset, View};

use common::synth_dataset;

fn every_family() -> Vec<Hyperparams> {
    vec![
        Hyperparams::Nb(NbParams { alpha: 1.0 }),
        Hyperparams::Knn(KnnParams { k: 5 }),
        Hyperparams::Svm(SvmParams::default()),
        Hyperparams::Rf(RfParams {
            n_trees: 25,
            ..Default::default()
        }),
        Hyperparams::Gbdt(GbdtParams {
            iterations: 50,
            ..Default::default()
        }),
        Hyperparams::Mlp(MlpParams {
            hidden: vec![16],
            epochs: 30,
            ..Default::default()
        }),
    ]
}

fn small_synth() -> SparseDataset {
    synth_dataset(&SynthSpec {
        seed: 21,
        n_apps: 1500,
        vocab_size: 60,
        ..SynthSpec::default()
    })
}

fn f1_on(model: &ModelArtifact, view: &View<'_>) -> f64 {
    let pred = predict(&model.score(view).unwrap(), 0.5).unwrap();
    compute_metrics(&confusion(&view.labels, &pred).unwrap())
        .unwrap()
        .f1
}

#[test]
fn forest_learns_xor() {
    // label = f0 xor f1, with f2 as noise; each pattern repeated
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for rep in 0..10u32 {
        for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
            let mut r = Vec::new();
            if a {
                r.push(0);
            }
            if b {
                r.push(1);
            }
            if rep % 2 == 0 {
                r.push(2);
            }
            rows.push(r);
            labels.push(u8::from(a != b));
        }
    }
    let view = View::from_rows(3, &rows, &labels);
    let hp = Hyperparams::Rf(RfParams {
        n_trees: 15,
        feature_fraction: Some(1.0),
        bootstrap: false,
        ..Default::default()
    });
    let model = fit(&hp, &view, 3).unwrap();
    assert_eq!(predict(&model.score(&view).unwrap(), 0.5).unwrap(), labels);
}

#[test]
fn every_family_separates_synthetic_classes() {
    let ds = small_synth();
    let (train, test): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|i| i % 4 != 0);
    for hp in every_family() {
        let model = fit(&hp, &ds.view(&train), 8).unwrap();
        let f1 = f1_on(&model, &ds.view(&test));
        assert!(f1 > 0.85, "{}: F1 {f1:.3}", hp.family());
    }
}

#[test]
fn artifacts_round_trip_through_text() {
    let ds = small_synth();
    let rows: Vec<usize> = (0..600).collect();
    let view = ds.view(&rows);
    let probe = ds.view(&(600..900).collect::<Vec<_>>());
    for hp in every_family() {
        let model = fit(&hp, &view, 4).unwrap();
        let back = ModelArtifact::from_text(&model.to_text()).unwrap();
        assert_eq!(back, model, "{}", hp.family());
        assert_eq!(back.score(&probe).unwrap(), model.score(&probe).unwrap());
    }
    assert!(ModelArtifact::from_text("not a model\n{}").is_err());
}

#[test]
fn fits_ignore_pool_size() {
    let ds = small_synth();
    let rows: Vec<usize> = (0..900).collect();
    let probe: Vec<usize> = (900..ds.len()).collect();
    for hp in every_family() {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let m = fit(&hp, &ds.view(&rows), 77).unwrap();
                (m.state.clone(), m.score(&ds.view(&probe)).unwrap())
            })
        };
        let one = run(1);
        assert_eq!(one, run(3), "{}", hp.family());
    }
}

#[test]
fn single_class_training_is_refused_where_meaningless() {
    let rows = vec![vec![0], vec![1]];
    let view = View::from_rows(2, &rows, &[0, 0]);
    for hp in every_family() {
        let res = fit(&hp, &view, 0);
        match hp.family() {
            Family::Nb | Family::Knn => {
                if let Ok(m) = res {
                    assert!(m.score(&view).unwrap().iter().all(|&p| p < 0.5));
                }
            }
            f => assert!(res.is_err(), "{f} trained on one class"),
        }
    }
}
