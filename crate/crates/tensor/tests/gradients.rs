//! Analytic gradients of every recorded operation against central finite differences.

mod support;

use fpnr_tensor::gradcheck::{self, GradSample};
use fpnr_tensor::{ConvSpec, Graph, ParamId, ParamStore, Result, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::oracles::random_tensor;

const TOL: f64 = 1e-4;

fn assert_within(samples: &[GradSample]) {
    assert!(!samples.is_empty());
    for s in samples {
        assert!(
            s.rel_error <= TOL,
            "{}[{}]: analytic {} vs numeric {} (rel {})",
            s.param,
            s.index,
            s.analytic,
            s.numeric,
            s.rel_error
        );
    }
}

/// Weighted sum with fixed random weights so every output element carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), g.value(y).shape());
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn store_with(shapes: &[(&str, &[usize])], seed: u64) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|(n, s)| store.add(*n, random_tensor(&mut rng, s)))
        .collect();
    (store, ids)
}

fn check_all(
    store: &mut ParamStore<f64>,
    f: impl FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) {
    let samples = gradcheck::all_elements(store);
    assert_within(&gradcheck::check(store, &samples, f).unwrap());
}

#[test]
fn conv2d_gradients() {
    for (i, spec) in [
        ConvSpec::same(2, 3, 3, 1),
        ConvSpec::same(2, 3, 3, 2),
        ConvSpec::same(3, 2, 1, 1),
        ConvSpec {
            stride: 2,
            ..ConvSpec::same(2, 2, 3, 1)
        },
    ]
    .into_iter()
    .enumerate()
    {
        let ws = spec.weight_shape();
        let (mut store, ids) = store_with(
            &[
                ("x", &[2, spec.in_channels, 5, 6]),
                ("w", &ws),
                ("b", &[spec.out_channels]),
            ],
            i as u64,
        );
        check_all(&mut store, |g, s| {
            let x = g.param(s, ids[0]);
            let w = g.param(s, ids[1]);
            let b = g.param(s, ids[2]);
            let y = g.conv2d(x, w, b, spec)?;
            weighted_sum(g, y, 100)
        });
    }
}

#[test]
fn max_pool_gradients() {
    for shape in [[1, 2, 6, 6], [2, 1, 5, 7]] {
        let (mut store, ids) = store_with(&[("x", &shape)], 3);
        check_all(&mut store, |g, s| {
            let x = g.param(s, ids[0]);
            let y = g.max_pool2(x)?;
            weighted_sum(g, y, 101)
        });
    }
}

#[test]
fn global_avg_pool_gradients() {
    let (mut store, ids) = store_with(&[("x", &[2, 3, 4, 5])], 4);
    check_all(&mut store, |g, s| {
        let x = g.param(s, ids[0]);
        let y = g.global_avg_pool(x)?;
        weighted_sum(g, y, 102)
    });
}

#[test]
fn dense_gradients() {
    let (mut store, ids) = store_with(&[("x", &[3, 4]), ("w", &[4, 5]), ("b", &[5])], 5);
    check_all(&mut store, |g, s| {
        let x = g.param(s, ids[0]);
        let w = g.param(s, ids[1]);
        let b = g.param(s, ids[2]);
        let y = g.dense(x, w, b)?;
        weighted_sum(g, y, 103)
    });
}

#[test]
fn activation_gradients() {
    let (mut store, ids) = store_with(&[("x", &[1, 2, 4, 4])], 6);
    check_all(&mut store, |g, s| {
        let x = g.param(s, ids[0]);
        let r = g.relu(x);
        let sg = g.sigmoid(x);
        let y = g.add(r, sg)?;
        weighted_sum(g, y, 104)
    });
}

#[test]
fn concat_and_shuffle_gradients() {
    let (mut store, ids) = store_with(&[("a", &[2, 4, 3, 3]), ("b", &[2, 1, 6, 6])], 7);
    check_all(&mut store, |g, s| {
        let a = g.param(s, ids[0]);
        let b = g.param(s, ids[1]);
        let up = g.pixel_shuffle(a, 2)?;
        let y = g.concat_channels(&[b, up, b])?;
        weighted_sum(g, y, 105)
    });
}

#[test]
fn elementwise_gradients() {
    let (mut store, ids) = store_with(
        &[("a", &[2, 3, 3, 4]), ("b", &[2, 3, 3, 4]), ("s", &[2, 3])],
        8,
    );
    check_all(&mut store, |g, st| {
        let a = g.param(st, ids[0]);
        let b = g.param(st, ids[1]);
        let s = g.param(st, ids[2]);
        let m = g.mul(a, b)?;
        let c = g.mul_channels(m, s)?;
        let d = g.add(c, a)?;
        let e = g.scale(d, 1.7);
        weighted_sum(g, e, 106)
    });
}

#[test]
fn mse_gradients() {
    let (mut store, ids) = store_with(&[("x", &[2, 1, 4, 4])], 9);
    let target = random_tensor(&mut ChaCha8Rng::seed_from_u64(99), &[2, 1, 4, 4]);
    check_all(&mut store, |g, s| {
        let x = g.param(s, ids[0]);
        g.mse(x, target.clone())
    });
}

#[test]
fn constant_inputs_receive_no_gradient_entry() {
    let (mut store, ids) = store_with(&[("w", &[1, 1, 3, 3]), ("b", &[1]), ("idle", &[4])], 10);
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 4, 4], 1.0));
    let w = g.param(&store, ids[0]);
    let b = g.param(&store, ids[1]);
    let y = g.conv2d(x, w, b, ConvSpec::same(1, 1, 3, 1)).unwrap();
    let l = g.sum(y);
    g.backward(l, &mut store).unwrap();
    assert!(store.get(ids[2]).grad.data().iter().all(|&v| v == 0.0));
    assert_eq!(store.get(ids[1]).grad.data(), &[16.0]);
}

#[test]
fn refinement_steps_past_a_nearby_kink() {
    // relu(x - 1.00003) has its kink inside the first window around x = 1
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::full(&[1], 1.0));
    let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
        let x = g.param(s, id);
        let shift = g.constant(Tensor::full(&[1], -0.99997));
        let z = g.add(x, shift)?;
        let r = g.relu(z);
        Ok(g.sum(r))
    };
    let plain = gradcheck::check_with_step(&mut store, &[(id, 0)], 1e-4, loss).unwrap();
    assert!(!plain[0].is_smooth(1e-6));
    let refined = gradcheck::check_refined(&mut store, &[(id, 0)], 1e-4, 4, 1e-6, loss).unwrap();
    assert!(refined[0].is_smooth(1e-6) && refined[0].is_resolved(1e-6));
    assert!(refined[0].rel_error < 1e-9, "{:?}", refined[0]);
}

proptest! {
    #[test]
    fn shuffle_then_unshuffle_is_identity(b in 1usize..3, c in 1usize..4, r in 1usize..4, h in 1usize..5, w in 1usize..5, seed in 0u64..1000) {
        let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[b, c * r * r, h, w]);
        let y = fpnr_tensor::ops::pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(fpnr_tensor::ops::pixel_unshuffle(&y, r).unwrap(), x);
    }

    #[test]
    fn activation_ranges(v in -1000.0f64..1000.0) {
        use fpnr_tensor::Activation;
        let s = Activation::Sigmoid.apply(v);
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!(Activation::Relu.apply(v) >= 0.0);
    }
}
