mod common;

use common::{check, random, SEEDS};
use mgdfis_core::diffops::{DpamOp, FuseInputs, FuseOp, FuseParams, MgdfisOp, Pair};
use mgdfis_core::dpam::{dpam, mgdfis_fuse, DpamParams, FusionWeights};
use mgdfis_core::ftssa::FtssaShape;
use mgdfis_core::gdim::{AggregateParams, DmmParams, GdimParams, GmmParams};
use mgdfis_core::gradcheck::{grad_check, GradCheckOptions};
use mgdfis_core::{mgdfis, MgdfisParams, Tensor, TensorError};
use mgdfis_oracle::{dpam as oracle, Fixture};

fn pipeline_params(
    fx: &mut Fixture,
    f1: [usize; 4],
    f2: [usize; 4],
    k: usize,
) -> MgdfisParams<f64> {
    let [_, c, h, w] = f1;
    let shape = FtssaShape {
        channels: c,
        heads: fx.int(1, 2),
        head_dim: fx.int(1, 2),
        mona_ratio: 4,
        seff_base: fx.pick(&[2, 4]),
    };
    random(
        fx,
        MgdfisParams {
            gdim: GdimParams {
                agg: AggregateParams::zeros_for(f1, f2),
                gmm: GmmParams::zeros(c, h, w, k).unwrap(),
                dmm: DmmParams::zeros(shape, 4),
            },
            dpam: DpamParams::zeros(c),
            fusion: FusionWeights::default(),
        },
    )
}

#[test]
fn dpam_examples() {
    let mut fx = Fixture::new(3);
    let p = DpamParams::<f64>::zeros(3);
    let (a, b) = (fx.tensor([2, 3, 4, 5], 1.0), fx.tensor([2, 3, 4, 5], 1.0));
    let m = dpam(&a, &b, &p).unwrap();
    assert_eq!(m.dims(), [2, 3, 4, 5]);
    assert!(m.data().iter().all(|&v| v == 0.5));

    let p = random(&mut fx, DpamParams::zeros(3));
    let (a, b) = (fx.tensor([1, 3, 6, 6], 1e3), fx.tensor([1, 3, 6, 6], 1e3));
    let m = dpam(&a, &b, &p).unwrap();
    assert!(m
        .data()
        .iter()
        .all(|&v| v.is_finite() && (0.0..=1.0).contains(&v)));

    let p = random(&mut fx, DpamParams::zeros(2));
    let (a, b) = (fx.tensor([1, 2, 5, 5], 1.0), fx.tensor([1, 2, 5, 5], 1.0));
    assert!(
        dpam(&a, &b, &p)
            .unwrap()
            .max_abs_diff(&oracle::dpam(&a, &b, &p))
            .unwrap()
            < 1e-12
    );

    let b = fx.tensor([1, 2, 5, 4], 1.0);
    match dpam(&a, &b, &p) {
        Err(TensorError::ShapeMismatch { axis, .. }) => assert_eq!(axis, "width"),
        other => panic!("expected a width mismatch, got {other:?}"),
    }
}

#[test]
fn dpam_matches_oracle() {
    let mut fx = Fixture::new(5);
    for _ in 0..50 {
        let dims = [fx.int(1, 2), fx.int(1, 4), fx.int(1, 8), fx.int(1, 8)];
        let p = random(&mut fx, DpamParams::zeros(dims[1]));
        let (a, b) = (fx.tensor(dims, 1.0), fx.tensor(dims, 1.0));
        assert!(
            dpam(&a, &b, &p)
                .unwrap()
                .max_abs_diff(&oracle::dpam(&a, &b, &p))
                .unwrap()
                < 1e-12
        );
    }
}

#[test]
fn attention_map_stays_inside_unit_interval() {
    let mut fx = Fixture::new(7);
    for _ in 0..1000 {
        let dims = [1, fx.int(1, 3), fx.int(1, 4), fx.int(1, 4)];
        let p = random(&mut fx, DpamParams::zeros(dims[1]));
        let (a, b) = (fx.tensor(dims, 3.0), fx.tensor(dims, 3.0));
        let m = dpam(&a, &b, &p).unwrap();
        assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn fusion_endpoints() {
    let mut fx = Fixture::new(11);
    let dims = [1, 3, 4, 4];
    let (h, x1, x2) = (
        fx.tensor(dims, 1.0),
        fx.tensor(dims, 1.0),
        fx.tensor([1, 2, 2, 2], 1.0),
    );
    let agg = random(&mut fx, AggregateParams::zeros_for(dims, [1, 2, 2, 2]));
    let w = FusionWeights::default();

    // A saturated conv bias drives the map to exactly 1.
    let mut p = DpamParams::<f64>::zeros(3);
    p.conv.bias = vec![40.0; 3];
    let ones = dpam(&h, &h, &p).unwrap();
    assert!(ones.data().iter().all(|&v| v == 1.0));
    assert_eq!(mgdfis_fuse(&ones, &h, &x1, &x2, &w, &agg).unwrap(), h);

    let zeros = ones.zeros_like();
    let out = mgdfis_fuse(&zeros, &h, &x1, &x2, &w, &agg).unwrap();
    let want = oracle::mgdfis_fuse(&zeros, &h, &x1, &x2, &w, &agg);
    assert!(out.max_abs_diff(&want).unwrap() < 1e-15);

    let half = Tensor::full(dims, 0.5);
    let none = AggregateParams::none();
    let out = mgdfis_fuse(&half, &h, &h, &h, &w, &none).unwrap();
    assert!(out.max_abs_diff(&h).unwrap() < 1e-15);
}

#[test]
fn fusion_is_monotone_in_the_map() {
    let mut fx = Fixture::new(13);
    let none = AggregateParams::none();
    for _ in 0..200 {
        let dims = [1, fx.int(1, 3), fx.int(1, 4), fx.int(1, 4)];
        let w = FusionWeights {
            w_map: fx.uniform(0.1, 2.0),
            w_x1: fx.uniform(-1.0, 1.0),
            w_x2: fx.uniform(-1.0, 1.0),
        };
        let (x1, x2) = (fx.tensor(dims, 1.0), fx.tensor(dims, 1.0));
        // F̂ dominates the background term everywhere.
        let h = Tensor::from_fn(dims, |i| {
            w.w_x1 * x1.get(i) + w.w_x2 * x2.get(i) + fx.uniform(0.0, 1.0)
        });
        let lo = Tensor::from_fn(dims, |_| fx.uniform(0.0, 1.0));
        let hi = Tensor::from_fn(dims, |i| lo.get(i) + fx.uniform(0.0, 1.0 - lo.get(i)));
        let a = mgdfis_fuse(&lo, &h, &x1, &x2, &w, &none).unwrap();
        let b = mgdfis_fuse(&hi, &h, &x1, &x2, &w, &none).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(a, b)| a <= b));
    }
}

#[test]
fn fusion_and_pipeline_match_oracle() {
    let mut fx = Fixture::new(17);
    for _ in 0..20 {
        let k = fx.pick(&[1, 2]);
        let c = k * fx.int(1, 2);
        let d1 = [1, c, fx.int(2, 5), fx.int(2, 5)];
        let d2 = [1, fx.int(1, 4), fx.int(1, 5), fx.int(1, 5)];
        let p = pipeline_params(&mut fx, d1, d2, k);
        let (f1, f2) = (fx.tensor(d1, 1.0), fx.tensor(d2, 1.0));

        let amap = Tensor::from_fn(d1, |_| fx.uniform(0.0, 1.0));
        let h = fx.tensor(d1, 1.0);
        let got = mgdfis_fuse(&amap, &h, &f1, &f2, &p.fusion, &p.gdim.agg).unwrap();
        let want = oracle::mgdfis_fuse(&amap, &h, &f1, &f2, &p.fusion, &p.gdim.agg);
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);

        let out = mgdfis(&f1, &f2, &p).unwrap();
        assert_eq!(out.dims(), d1);
        assert!(out.max_abs_diff(&oracle::mgdfis(&f1, &f2, &p)).unwrap() < 1e-9);
    }
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..SEEDS {
        let mut fx = Fixture::new(3000 + seed);
        let k = fx.pick(&[1, 2]);
        let c = k * fx.int(1, 2);
        let d1 = [1, c, fx.int(2, 5), fx.int(2, 5)];
        let d2 = [1, fx.int(1, 3), fx.int(2, 6), fx.int(2, 6)];

        let pair = Pair {
            first: fx.tensor(d1, 1.0),
            second: fx.tensor(d1, 1.0),
        };
        check(seed, &DpamOp, &pair, &random(&mut fx, DpamParams::zeros(c)));

        let inputs = FuseInputs {
            amap: Tensor::from_fn(d1, |_| fx.uniform(0.05, 0.95)),
            f_hat: fx.tensor(d1, 1.0),
            x1: fx.tensor(d1, 1.0),
            x2: fx.tensor(d2, 1.0),
        };
        let params = FuseParams {
            weights: random(&mut fx, FusionWeights::default()),
            agg: random(&mut fx, AggregateParams::zeros_for(d1, d2)),
        };
        check(seed, &FuseOp, &inputs, &params);
    }
}

/// End to end, the gate's spectral weights sit several nonlinearities deep and
/// their gradients are often around 1e-10. At that size central differences
/// carry about 1e-12 of rounding noise, so an element passes either on relative
/// error or on an absolute discrepancy under 1e-11.
#[test]
fn pipeline_gradients_match_central_differences() {
    const NOISE: f64 = 1e-11;
    for seed in 0..SEEDS {
        let mut fx = Fixture::new(4000 + seed);
        let k = fx.pick(&[1, 2]);
        let c = k * fx.int(1, 2);
        let d1 = [1, c, fx.int(2, 5), fx.int(2, 5)];
        let d2 = [1, fx.int(1, 3), fx.int(2, 6), fx.int(2, 6)];
        let pair = Pair {
            first: fx.tensor(d1, 1.0),
            second: fx.tensor(d2, 1.0),
        };
        let p = pipeline_params(&mut fx, d1, d2, k);
        let opts = GradCheckOptions {
            loss_weights: Some(Fixture::new(seed).tensor(d1, 1.0)),
            noise_floor: NOISE,
            ..Default::default()
        };
        let r = grad_check(&MgdfisOp, &pair, &p, &opts);
        assert!(r.passed(), "seed {seed}: {r:?}");
    }
}
