//! End-to-end training checks on synthetic data.

use fedlab_core::client::{local_train, ClientConfig};
use fedlab_core::data::{normalize, synth_dataset};
use fedlab_core::nn::{init_params, NetworkSpec};
use fedlab_core::orchestrator::evaluate;

fn central(dim: usize, hidden: usize, per_class: usize, epochs: usize, seed: u64) -> f64 {
    let (ds, _) = normalize(&synth_dataset(10, per_class, dim, seed)).unwrap();
    let spec = NetworkSpec::new(vec![dim, hidden, 10]).unwrap();
    let w0 = init_params(&spec, seed);
    let cfg = ClientConfig {
        eta: 0.05,
        lambda: 0.0,
        batch_size: 50,
        epochs,
        mu: 0.0,
    };
    let trained = local_train(&w0, &spec, &ds, &cfg, seed, 0).unwrap().trained;
    evaluate(&trained, &spec, &ds).unwrap()
}

#[test]
fn synthetic_blobs_are_learnable_centrally() {
    for seed in 0..3 {
        let acc = central(20, 32, 200, 50, seed);
        assert!(acc >= 0.90, "seed {seed}: train accuracy {acc}");
    }
}

#[test]
fn small_set_is_memorized() {
    // 30 points in 20 dimensions with a wide hidden layer
    let acc = central(20, 64, 3, 300, 4);
    assert_eq!(acc, 1.0);
}

#[test]
fn accuracy_ignores_row_order() {
    let (ds, _) = normalize(&synth_dataset(4, 25, 6, 2)).unwrap();
    let spec = NetworkSpec::new(vec![6, 8, 4]).unwrap();
    let w = init_params(&spec, 9);
    let reversed: Vec<usize> = (0..ds.len()).rev().collect();
    let a = evaluate(&w, &spec, &ds).unwrap();
    let b = evaluate(&w, &spec, &ds.subset(&reversed)).unwrap();
    assert_eq!(a, b);
}
