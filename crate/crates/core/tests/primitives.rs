use mgdfis_core::diffops::{ActivationOp, Conv2dOp, GapOp, LinearOp, SoftmaxOp};
use mgdfis_core::fft::{fft2, ifft2, ifft2_complex};
use mgdfis_core::ops::{activation, global_avg_pool, linear, softmax};
use mgdfis_core::{
    conv2d, conv2d_im2col, grad_check, Activation, Conv, ConvSpec, GradCheckOptions, Matrix,
    Padding, Tensor, TensorError,
};
use mgdfis_oracle::{naive, Fixture};

// Reference values computed at 40 significant digits.
const GELU_1: f64 = 0.841_344_746_068_542_9;
const SILU_1: f64 = 0.731_058_578_630_004_9;
const TANH_1: f64 = 0.761_594_155_955_764_9;
const SOFTMAX_HALF_ONEHALF_MINUS1: [f64; 3] = [
    0.253_716_181_635_025_2,
    0.689_672_086_124_503_5,
    0.056_611_732_240_471_28,
];

#[test]
fn pointwise_identity_kernel() {
    let x = Tensor::from_fn([2, 1, 3, 4], |[b, _, h, w]| {
        (b * 12 + h * 4 + w) as f64 - 5.5
    });
    let spec = ConvSpec::pointwise(1, 1);
    let y = conv2d(&x, &Tensor::ones([1, 1, 1, 1]), &[0.0], &spec).unwrap();
    assert_eq!(y, x);
}

#[test]
fn all_ones_kernel_on_constant_field() {
    let c = 1.75;
    let x = Tensor::full([1, 1, 5, 5], c);
    let spec = ConvSpec::new(1, 1, (3, 3)).with_padding(Padding::uniform(1));
    let y = conv2d(&x, &Tensor::ones([1, 1, 3, 3]), &[], &spec).unwrap();
    for h in 1..4 {
        for w in 1..4 {
            assert_eq!(y.get([0, 0, h, w]), 9.0 * c);
        }
    }
    assert_eq!(y.get([0, 0, 0, 0]), 4.0 * c);
}

#[test]
fn dilated_depthwise_matches_naive_on_ramp() {
    let x = Tensor::from_fn([1, 1, 5, 5], |[_, _, h, w]| (h * 5 + w) as f64);
    let spec = ConvSpec::depthwise(1, (3, 3))
        .with_dilation((2, 2))
        .with_same_padding();
    let weight = Tensor::from_fn(spec.weight_dims(), |[_, _, i, j]| {
        (i * 3 + j) as f64 * 0.5 - 1.0
    });
    let got = conv2d(&x, &weight, &[0.25], &spec).unwrap();
    let want = naive::conv2d(&x, &weight, &[0.25], &spec);
    assert_eq!(got.dims(), [1, 1, 5, 5]);
    assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
}

fn random_spec(fx: &mut Fixture) -> (ConvSpec, [usize; 4]) {
    let groups = fx.pick(&[1, 2]);
    let cin = groups * fx.int(1, 3);
    let cout = groups * fx.int(1, 3);
    let kernel = (fx.int(1, 4), fx.int(1, 4));
    let dilation = (fx.int(1, 2), fx.int(1, 2));
    let padding = Padding {
        top: fx.int(0, 2),
        bottom: fx.int(0, 2),
        left: fx.int(0, 2),
        right: fx.int(0, 2),
    };
    let spec = ConvSpec::new(cin, cout, kernel)
        .with_groups(groups)
        .with_dilation(dilation)
        .with_padding(padding)
        .with_stride((fx.int(1, 2), fx.int(1, 2)));
    let span_h = dilation.0 * (kernel.0 - 1) + 1;
    let span_w = dilation.1 * (kernel.1 - 1) + 1;
    let h = fx.int(span_h.max(1), 8);
    let w = fx.int(span_w.max(1), 8);
    (spec, [fx.int(1, 2), cin, h, w])
}

#[test]
fn conv_matches_seven_loop_reference() {
    let mut fx = Fixture::new(11);
    for _ in 0..200 {
        let (spec, dims) = random_spec(&mut fx);
        let x = fx.tensor(dims, 1.0);
        let w = fx.tensor(spec.weight_dims(), 1.0);
        let bias: Vec<f64> = (0..spec.out_channels)
            .map(|_| fx.uniform(-1.0, 1.0))
            .collect();
        let want = naive::conv2d(&x, &w, &bias, &spec);
        let direct = conv2d(&x, &w, &bias, &spec).unwrap();
        let im2col = conv2d_im2col(&x, &w, &bias, &spec).unwrap();
        assert!(direct.max_abs_diff(&want).unwrap() < 1e-12, "{spec:?}");
        assert!(im2col.max_abs_diff(&want).unwrap() < 1e-12, "{spec:?}");
    }
}

#[test]
fn conv_errors_name_the_axis() {
    let spec = ConvSpec::same(3, 2, (3, 3));
    let err = conv2d(
        &Tensor::<f64>::zeros([1, 2, 4, 4]),
        &Tensor::zeros(spec.weight_dims()),
        &[],
        &spec,
    )
    .unwrap_err();
    match err {
        TensorError::ShapeMismatch {
            axis,
            expected,
            actual,
            ..
        } => {
            assert_eq!((axis, expected, actual), ("channel", 3, 2));
        }
        other => panic!("unexpected {other:?}"),
    }
    let bad = ConvSpec::new(3, 4, (1, 1)).with_groups(2);
    let err = conv2d(
        &Tensor::<f64>::zeros([1, 3, 2, 2]),
        &Tensor::zeros([4, 1, 1, 1]),
        &[],
        &bad,
    )
    .unwrap_err();
    assert!(matches!(err, TensorError::Config(_)));
}

#[test]
fn even_kernels_keep_size_with_extra_bottom_right() {
    let pad = Padding::same((4, 6), (1, 1));
    assert_eq!((pad.top, pad.bottom, pad.left, pad.right), (1, 2, 2, 3));
    for k in [(4, 6), (6, 4)] {
        let spec = ConvSpec::same(2, 2, k);
        assert_eq!(spec.output_hw(7, 5).unwrap(), (7, 5));
    }
}

#[test]
fn linear_examples() {
    let mut fx = Fixture::new(3);
    let x = Matrix::from_fn(3, 4, |_, _| fx.uniform(-1.0, 1.0));
    assert_eq!(linear(&x, &Matrix::identity(4), &[0.0; 4]).unwrap(), x);
    let b = [0.5, -2.0];
    let w = Matrix::from_fn(4, 2, |_, _| fx.uniform(-1.0, 1.0));
    let z = linear(&Matrix::zeros(3, 4), &w, &b).unwrap();
    for r in 0..3 {
        assert_eq!(z.row(r), &b);
    }
    let got = linear(&x, &w, &b).unwrap();
    let want = naive::linear(&x, &w, &b);
    for (a, e) in got.data().iter().zip(want.data()) {
        assert!((a - e).abs() < 1e-14);
    }
    assert!(linear(&x, &Matrix::zeros(3, 2), &[]).is_err());
}

#[test]
fn softmax_examples() {
    let y = softmax(
        &Tensor::<f64>::from_vec([1, 3, 1, 1], vec![1.0, 1.0, 1.0]).unwrap(),
        1,
    )
    .unwrap();
    assert!(y.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    let y = softmax(
        &Tensor::<f64>::from_vec([1, 1, 1, 2], vec![1000.0, 0.0]).unwrap(),
        3,
    )
    .unwrap();
    assert!(y.is_finite());
    assert!((y.data()[0] - 1.0).abs() < 1e-15 && y.data()[1] < 1e-300);
    let y = softmax(
        &Tensor::from_vec([1, 1, 3, 1], vec![0.5, 1.5, -1.0]).unwrap(),
        2,
    )
    .unwrap();
    for (a, e) in y.data().iter().zip(SOFTMAX_HALF_ONEHALF_MINUS1) {
        assert!((a - e).abs() < 1e-15, "{a} vs {e}");
    }
}

#[test]
fn softmax_rows_and_shift_invariance() {
    let mut fx = Fixture::new(5);
    for axis in 0..4 {
        let x = fx.tensor([2, 3, 4, 5], 5.0);
        let y = softmax(&x, axis).unwrap();
        let shifted = softmax(&x.map(|v| v + 123.25), axis).unwrap();
        assert!(y.max_abs_diff(&shifted).unwrap() < 1e-12);
        let dims = x.dims();
        let mut sums = std::collections::HashMap::new();
        for b in 0..dims[0] {
            for c in 0..dims[1] {
                for h in 0..dims[2] {
                    for w in 0..dims[3] {
                        let mut key = [b, c, h, w];
                        key[axis] = 0;
                        *sums.entry(key).or_insert(0.0) += y.get([b, c, h, w]);
                    }
                }
            }
        }
        assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-6));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
    assert!(softmax(&Tensor::<f64>::zeros([1, 1, 1, 1]), 4).is_err());
}

#[test]
fn activation_examples() {
    let zero = Tensor::<f64>::zeros([1, 1, 1, 1]);
    assert_eq!(activation(Activation::Sigmoid, &zero).data()[0], 0.5);
    for kind in [Activation::Silu, Activation::Tanh, Activation::Gelu] {
        assert_eq!(activation(kind, &zero).data()[0], 0.0);
    }
    for (kind, want) in [
        (Activation::Gelu, GELU_1),
        (Activation::Silu, SILU_1),
        (Activation::Tanh, TANH_1),
    ] {
        let got = kind.eval(1.0f64);
        assert!((got - want).abs() < 1e-15, "{kind:?}: {got} vs {want}");
    }
}

#[test]
fn monotone_activations() {
    let xs: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.025).collect();
    for kind in [Activation::Tanh, Activation::Sigmoid] {
        for pair in xs.windows(2) {
            assert!(kind.eval(pair[1]) > kind.eval(pair[0]));
        }
    }
    for &x in &xs {
        let s = Activation::Sigmoid.eval(x);
        assert!(s > 0.0 && s < 1.0);
    }
}

#[test]
fn gap_examples() {
    let c = Tensor::full([2, 3, 4, 5], -0.75);
    assert!(global_avg_pool(&c).data().iter().all(|&v| v == -0.75));
    let t = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(global_avg_pool(&t).data(), &[2.5]);
    let x = Fixture::new(9).tensor([2, 3, 4, 4], 1.0);
    assert!(
        global_avg_pool(&x)
            .max_abs_diff(&naive::global_avg_pool(&x))
            .unwrap()
            < 1e-15
    );
}

#[test]
fn fft_examples() {
    let c = 0.3f64;
    let spec = fft2(&Tensor::full([1, 1, 4, 6], c));
    assert!((spec.data()[0].re - c * 24.0).abs() < 1e-12);
    assert!(spec.data()[1..].iter().all(|z| z.norm() < 1e-12));
    let mut delta = Tensor::<f64>::zeros([1, 1, 5, 3]);
    delta.set([0, 0, 0, 0], 1.0);
    assert!(fft2(&delta)
        .data()
        .iter()
        .all(|z| (z.re - 1.0).abs() < 1e-15 && z.im.abs() < 1e-15));

    let x = Fixture::new(21).tensor([1, 1, 6, 5], 1.0);
    let got = fft2(&x);
    let want = naive::dft2(&x);
    for (z, (re, im)) in got.data().iter().zip(&want[0]) {
        assert!((z.re - re).abs() < 1e-12 && (z.im - im).abs() < 1e-12);
    }
}

#[test]
fn fft_round_trip_and_parseval_all_sizes() {
    let mut fx = Fixture::new(33);
    for h in 1..=16 {
        for w in 1..=16 {
            let x = fx.tensor([1, 2, h, w], 1.0);
            let spec = fft2(&x);
            let back = ifft2(&spec);
            let norm = x.data().iter().map(|v| v * v).sum::<f64>();
            let err = back
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            assert!((err / norm).sqrt() < 1e-6, "{h}x{w}");
            let energy = spec.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (h * w) as f64;
            assert!((energy - norm).abs() / norm < 1e-6, "{h}x{w}");
            let imag = ifft2_complex(&spec).im();
            assert!(imag.data().iter().all(|v| v.abs() < 1e-9));
        }
    }
}

#[test]
fn grad_check_examples() {
    let mut fx = Fixture::new(1);
    let x = Matrix::from_fn(3, 4, |_, _| fx.uniform(-1.0, 1.0));
    let mut lin = mgdfis_core::Linear::zeros(4, 2, true);
    fx.randomize(&mut lin, 1.0, 0.5);
    let r = grad_check(&LinearOp, &x, &lin, &GradCheckOptions::default());
    assert!(r.passed(), "{r:?}");

    let spec = ConvSpec::depthwise(3, (3, 3));
    let mut conv = Conv::zeros(spec);
    fx.randomize(&mut conv, 1.0, 0.5);
    let x = fx.tensor([1, 3, 5, 5], 1.0);
    let r = grad_check(&Conv2dOp { spec }, &x, &conv, &GradCheckOptions::default());
    assert!(r.passed(), "{r:?}");
    assert_eq!(r.leaves.len(), 3);
}

#[test]
fn primitive_grad_checks_over_seeds() {
    for seed in 0..20 {
        let mut fx = Fixture::new(100 + seed);
        let x = fx.tensor([2, 3, 3, 4], 1.5);
        for kind in [
            Activation::Tanh,
            Activation::Gelu,
            Activation::Silu,
            Activation::Sigmoid,
        ] {
            let r = grad_check(
                &ActivationOp { kind },
                &x,
                &(),
                &GradCheckOptions::default(),
            );
            assert!(r.passed(), "{r:?}");
        }
        assert!(grad_check(&GapOp, &x, &(), &GradCheckOptions::default()).passed());
        let opts = GradCheckOptions {
            loss_weights: Some(fx.tensor(x.dims(), 1.0)),
            ..Default::default()
        };
        for axis in 0..4 {
            let r = grad_check(&SoftmaxOp { axis }, &x, &(), &opts);
            assert!(r.passed(), "{r:?}");
        }
        let (spec, dims) = random_spec(&mut fx);
        let mut conv = Conv::zeros(spec);
        fx.randomize(&mut conv, 1.0, 0.5);
        let r = grad_check(
            &Conv2dOp { spec },
            &fx.tensor(dims, 1.0),
            &conv,
            &GradCheckOptions::default(),
        );
        assert!(r.passed(), "{spec:?} {r:?}");
    }
}

#[test]
fn ops_are_bit_deterministic() {
    let mut fx = Fixture::new(8);
    let x = fx.tensor([1, 4, 7, 6], 1.0);
    let spec = ConvSpec::same(4, 4, (4, 6));
    let w = fx.tensor(spec.weight_dims(), 1.0);
    let a = conv2d(&x, &w, &[], &spec).unwrap();
    let b = conv2d(&x, &w, &[], &spec).unwrap();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    let s1 = fft2(&x);
    let s2 = fft2(&x);
    assert!(s1
        .data()
        .iter()
        .zip(s2.data())
        .all(|(p, q)| p.re.to_bits() == q.re.to_bits() && p.im.to_bits() == q.im.to_bits()));
}
