use proptest::prelude::*;
use warn_core::gradcheck::{grad_check, grad_check_many};
use warn_core::init::Rng64;
use warn_core::ops::RunningStats;
use warn_core::{Graph, Tensor, Var};

fn rand64(rng: &mut Rng64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Weighted sum with fixed random coefficients, so every output element
/// contributes a distinct gradient.
fn probe(g: &mut Graph<f64>, v: Var, seed: u64) -> warn_core::Result<Var> {
    let shape = g.shape(v).to_vec();
    let mut rng = Rng64::new(seed ^ 0x5eed);
    let w = g.constant(rand64(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn shape_for(rng: &mut Rng64) -> (usize, usize, usize, usize) {
    (1 + rng.below(3), 1 + rng.below(3), 2 + rng.below(4), 2 + rng.below(4))
}

#[test]
fn every_op_passes_grad_check_on_seeded_shapes() {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..24u64 {
        let mut rng = Rng64::new(seed);
        let (n, c, h, w) = shape_for(&mut rng);
        let x4 = rand64(&mut rng, &[n, c, h, w], -1.5, 1.5);
        let mut check = |name: &'static str, e: f64| {
            assert!(e < TOL, "{} seed {} shape {:?}: {:e}", name, seed, (n, c, h, w), e);
            match worst.iter_mut().find(|(k, _)| *k == name) {
                Some(slot) => slot.1 = slot.1.max(e),
                None => worst.push((name, e)),
            }
        };

        let e = grad_check(|g, v| { let y = g.tanh(v); probe(g, y, seed) }, &x4, EPS).unwrap();
        check("tanh", e.max_rel_error);
        let e = grad_check(|g, v| { let y = g.sigmoid(v); probe(g, y, seed) }, &x4, EPS).unwrap();
        check("sigmoid", e.max_rel_error);
        // keep inputs away from the kink
        let away = x4.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let e = grad_check(|g, v| { let y = g.relu(v); probe(g, y, seed) }, &away, EPS).unwrap();
        check("relu", e.max_rel_error);
        let e = grad_check(|g, v| { let y = g.softmax(v, 1)?; probe(g, y, seed) }, &x4, EPS).unwrap();
        check("softmax", e.max_rel_error);
        let e = grad_check(|g, v| { let y = g.spatial_softmax(v)?; probe(g, y, seed) }, &x4, EPS).unwrap();
        check("spatial_softmax", e.max_rel_error);
        let e = grad_check(|g, v| { let y = g.global_avg_pool(v)?; probe(g, y, seed) }, &x4, EPS).unwrap();
        check("global_avg_pool", e.max_rel_error);
        let e = grad_check(|g, v| { let y = g.mean(v); let s = g.scale(y, 3.0); Ok(g.mul(s, s)?) }, &x4, EPS).unwrap();
        check("mean/scale", e.max_rel_error);
        let pos = x4.map(|v| v.abs() + 0.2);
        let e = grad_check(|g, v| { let y = g.normalize(v, 3)?; probe(g, y, seed) }, &pos, EPS).unwrap();
        check("normalize", e.max_rel_error);

        let other = rand64(&mut rng, &[n, c, h, w], -1.0, 1.0);
        let e = grad_check_many(|g, v| { let y = g.mul(v[0], v[1])?; let z = g.add(y, v[0])?; probe(g, z, seed) }, &[x4.clone(), other], EPS).unwrap();
        check("add/mul", e.max_rel_error);

        let cout = 1 + rng.below(3);
        let k = [1, 3][rng.below(2)];
        let wt = rand64(&mut rng, &[cout, c, k, k], -0.5, 0.5);
        let b = rand64(&mut rng, &[cout], -0.5, 0.5);
        let stride = 1 + rng.below(2);
        let e = grad_check_many(
            |g, v| { let y = g.conv2d(v[0], v[1], Some(v[2]), stride, k / 2)?; probe(g, y, seed) },
            &[x4.clone(), wt, b],
            EPS,
        )
        .unwrap();
        check("conv2d", e.max_rel_error);

        if h >= 2 && w >= 2 {
            // distinct values: no ties in any window
            let mut distinct = x4.clone();
            for (i, v) in distinct.data_mut().iter_mut().enumerate() {
                *v += i as f64 * 1e-3;
            }
            let e = grad_check(|g, v| { let y = g.max_pool2d(v, 2)?; probe(g, y, seed) }, &distinct, EPS).unwrap();
            check("max_pool2d", e.max_rel_error);
        }

        let fin = c * h;
        let xl = rand64(&mut rng, &[n, fin], -1.0, 1.0);
        let wl = rand64(&mut rng, &[3, fin], -1.0, 1.0);
        let bl = rand64(&mut rng, &[3], -1.0, 1.0);
        let e = grad_check_many(|g, v| { let y = g.linear(v[0], v[1], Some(v[2]))?; probe(g, y, seed) }, &[xl, wl, bl], EPS).unwrap();
        check("linear", e.max_rel_error);

        if n * h * w > 1 {
            let gamma = rand64(&mut rng, &[c], 0.5, 1.5);
            let beta = rand64(&mut rng, &[c], -0.5, 0.5);
            let e = grad_check_many(
                |g, v| {
                    let mut mean = vec![0.0; c];
                    let mut var = vec![1.0; c];
                    let y = g.batch_norm2d(v[0], v[1], v[2], RunningStats { mean: &mut mean, var: &mut var }, true)?;
                    probe(g, y, seed)
                },
                &[x4.clone(), gamma, beta],
                EPS,
            )
            .unwrap();
            check("batch_norm2d", e.max_rel_error);
        }

        let kh = 1 + rng.below(3);
        let labels = 2 + rng.below(3);
        let masks = rand64(&mut rng, &[n, kh, h, w], -1.0, 1.0);
        let maps = rand64(&mut rng, &[n, kh, labels, h, w], -1.0, 1.0);
        let e = grad_check_many(|g, v| { let y = g.weighted_spatial_sum(v[0], v[1])?; probe(g, y, seed) }, &[masks.clone(), maps], EPS).unwrap();
        check("weighted_spatial_sum", e.max_rel_error);
        let e = grad_check(|g, v| g.head_regularizer(v), &masks, EPS).unwrap();
        check("head_regularizer", e.max_rel_error);

        let gates = rand64(&mut rng, &[n, kh], -1.0, 1.0);
        let vals = rand64(&mut rng, &[n, kh, labels], -1.0, 1.0);
        let e = grad_check_many(|g, v| { let y = g.gate_combine(v[0], v[1])?; probe(g, y, seed) }, &[gates, vals], EPS).unwrap();
        check("gate_combine", e.max_rel_error);

        let logits = rand64(&mut rng, &[n, labels], -2.0, 2.0);
        let targets: Vec<usize> = (0..n).map(|i| (i + seed as usize) % labels).collect();
        let e = grad_check(|g, v| { let p = g.softmax(v, 1)?; g.nll_from_probs(p, &targets) }, &logits, EPS).unwrap();
        check("nll_from_probs", e.max_rel_error);
    }
    assert!(worst.len() >= 15);
}

#[test]
fn conv_softmax_pooling_chain() {
    let mut rng = Rng64::new(4);
    let x = rand64(&mut rng, &[2, 3, 6, 6], -1.0, 1.0);
    let w = rand64(&mut rng, &[2, 3, 3, 3], -0.5, 0.5);
    let maps = rand64(&mut rng, &[2, 2, 4, 6, 6], -1.0, 1.0);
    let r = grad_check_many(
        |g, v| {
            let logits = g.conv2d(v[0], v[1], None, 1, 1)?;
            let masks = g.spatial_softmax(logits)?;
            let out = g.weighted_spatial_sum(masks, v[2])?;
            probe(g, out, 4)
        },
        &[x, w, maps],
        // some entries have gradients near 1e-6; a smaller step drowns them in rounding
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "{:?}", r);
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = Rng64::new(10);
        let mut g = Graph::<f32>::new();
        let x = g.constant(rand64(&mut rng, &[2, 3, 9, 9], -1.0, 1.0).cast());
        let w = g.param(rand64(&mut rng, &[4, 3, 3, 3], -1.0, 1.0).cast());
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.spatial_softmax(y).unwrap();
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn sums_to_one(t: &Tensor<f64>, len: usize) -> bool {
    t.data().chunks(len).all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-5) && t.data().iter().all(|&v| v >= 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmaxes_normalize_even_at_extremes(
        vals in proptest::collection::vec(prop_oneof![-1e4f64..1e4, -5.0f64..5.0, Just(1e4), Just(-1e4)], 24),
    ) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[2, 3, 2, 2], vals).unwrap());
        let s = g.spatial_softmax(x).unwrap();
        let r = g.reshape(x, &[6, 4]).unwrap();
        let a = g.softmax(r, 1).unwrap();
        let b = g.softmax(x, 1).unwrap();
        prop_assert!(sums_to_one(g.value(s), 4));
        prop_assert!(sums_to_one(g.value(a), 4));
        // axis 1 of [2,3,2,2]: gather each (n, y, x) column
        let t = g.value(b);
        for n in 0..2 {
            for p in 0..4 {
                let s: f64 = (0..3).map(|c| t.data()[(n * 3 + c) * 4 + p]).sum();
                prop_assert!((s - 1.0).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn softmax_preserves_argmax(vals in proptest::collection::vec(-50.0f64..50.0, 7)) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[1, 7], vals.clone()).unwrap());
        let y = g.softmax(x, 1).unwrap();
        prop_assert_eq!(g.value(x).argmax_rows(), g.value(y).argmax_rows());
    }

    #[test]
    fn regularizer_is_nonnegative(vals in proptest::collection::vec(-3.0f64..3.0, 2 * 3 * 9)) {
        let mut g = Graph::<f64>::new();
        let m = g.constant(Tensor::from_vec(&[2, 3, 3, 3], vals).unwrap());
        let r = g.head_regularizer(m).unwrap();
        prop_assert!(g.value(r).data()[0] >= 0.0);
    }
}
