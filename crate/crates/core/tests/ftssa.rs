mod common;

use common::{check, random, SEEDS};
use mgdfis_core::diffops::{
    DaffOp, DytOp, FtssaOp, MonaOp, MonaOpOp, SeffOp, SerrOp, TssaOp, XmonaOp,
};
use mgdfis_core::ftssa::tssa::tssa_trace;
use mgdfis_core::ftssa::{
    daff, dyt, ftssa, mona, mona_op, seff, serr, tssa, DaffParams, DyTParams, FtssaParams,
    FtssaShape, MonaParams, NormAxis, PiMode, SeffParams, SerrParams, TssaParams,
};
use mgdfis_core::{Conv, Linear, Matrix, Tensor};
use mgdfis_oracle::{ftssa as oracle, Fixture};

const DYT_HALF_2_1_AT_2: f64 = 2.523_188_311_911_529_7;

fn shape(fx: &mut Fixture, channels: usize) -> FtssaShape {
    FtssaShape {
        channels,
        heads: fx.int(1, 2),
        head_dim: fx.int(1, 3),
        mona_ratio: 4,
        seff_base: fx.pick(&[2, 4, 8]),
    }
}

fn dims(fx: &mut Fixture, max_batch: usize, c: usize, max_side: usize) -> [usize; 4] {
    [
        fx.int(1, max_batch),
        c,
        fx.int(1, max_side),
        fx.int(1, max_side),
    ]
}

fn random_tssa(fx: &mut Fixture, c: usize) -> TssaParams<f64> {
    let s = shape(fx, c);
    let mut p = random(fx, TssaParams::zeros(c, s.heads, s.head_dim));
    p.pi_mode = fx.pick(&[PiMode::Constant, PiMode::Distribution]);
    p.norm_axis = fx.pick(&[NormAxis::Tokens, NormAxis::Features]);
    p
}

#[test]
fn dyt_examples() {
    let mut p = DyTParams::<f64>::new(1);
    p.alpha = 1.0;
    assert_eq!(
        dyt(&Tensor::zeros([1, 1, 1, 1]), &p).unwrap().data(),
        &[0.0]
    );

    let mut p = DyTParams::new(2);
    p.alpha = 50.0;
    p.gamma = vec![1.5, -0.5];
    p.beta = vec![0.25, 2.0];
    let x = Tensor::<f64>::from_vec([1, 2, 1, 3], vec![1.0, -1.0, 4.0, -2.0, 1.5, 1.0]).unwrap();
    let y = dyt(&x, &p).unwrap();
    for (i, &v) in y.data().iter().enumerate() {
        let c = i / 3;
        let want = p.gamma[c] * x.data()[i].signum() + p.beta[c];
        assert!((v - want).abs() < 1e-8);
    }

    let mut p = DyTParams::new(1);
    p.alpha = 0.5;
    p.gamma = vec![2.0];
    p.beta = vec![1.0];
    let y = dyt(&Tensor::full([1, 1, 1, 1], 2.0), &p).unwrap();
    assert!((y.data()[0] - DYT_HALF_2_1_AT_2).abs() < 1e-15);
}

#[test]
fn tssa_zero_weights_give_zero() {
    let p = TssaParams::<f64>::zeros(3, 2, 4);
    let x = Fixture::new(4).tensor([2, 3, 4, 4], 1.0);
    assert!(tssa(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
}

/// One token: every per-head moment sum is equal, so `Π` is uniform and
/// the whole pipeline reduces to scalar arithmetic.
#[test]
fn tssa_single_token_by_hand() {
    let mut fx = Fixture::new(17);
    for _ in 0..20 {
        let c = fx.int(1, 4);
        let mut p = random_tssa(&mut fx, c);
        p.norm_axis = NormAxis::Tokens;
        let x = fx.tensor([1, c, 1, 1], 2.0);
        let trace = tssa_trace(&x, &p).unwrap();
        let (heads, d) = (p.heads, p.head_dim);
        let inner = heads * d;
        let f: Vec<f64> = (0..inner)
            .map(|j| (0..c).map(|i| x.data()[i] * p.qkv.weight.get(i, j)).sum())
            .collect();
        for h in 0..heads {
            assert!((trace.pi.get(0, h) - 1.0 / heads as f64).abs() < 1e-6);
        }
        let y = tssa(&x, &p).unwrap();
        for o in 0..c {
            let mut want = p.out.bias[o];
            for (j, &fj) in f.iter().enumerate() {
                let pi = trace.pi.get(0, j / d);
                let attn = 1.0 / (1.0 + pi / (pi + 1e-8) * fj * fj);
                let factor = match p.pi_mode {
                    PiMode::Constant => std::f64::consts::PI,
                    PiMode::Distribution => pi,
                };
                want -= fj * factor * attn * p.out.weight.get(j, o);
            }
            assert!(
                (y.data()[o] - want).abs() < 1e-9,
                "{} vs {want}",
                y.data()[o]
            );
        }
    }
}

#[test]
fn tssa_two_tokens_hand_set_weights() {
    let mut p = TssaParams::<f64>::zeros(2, 1, 2);
    p.qkv.weight = Matrix::from_vec(2, 2, vec![1.0, 0.5, -0.25, 2.0]).unwrap();
    p.out.weight = Matrix::from_vec(2, 2, vec![0.75, -1.0, 0.5, 0.25]).unwrap();
    p.out.bias = vec![0.1, -0.2];
    let x = Tensor::from_vec([1, 2, 1, 2], vec![0.3, -1.2, 0.8, 0.4]).unwrap();
    for axis in [NormAxis::Tokens, NormAxis::Features] {
        for mode in [PiMode::Constant, PiMode::Distribution] {
            p.norm_axis = axis;
            p.pi_mode = mode;
            let got = tssa(&x, &p).unwrap();
            let want = oracle::tssa(&x, &p);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
        }
    }
}

#[test]
fn tssa_matches_straight_line_oracle() {
    let mut fx = Fixture::new(23);
    for _ in 0..100 {
        let c = fx.int(1, 4);
        let p = random_tssa(&mut fx, c);
        let dims = [fx.int(1, 2), c, fx.int(1, 3), fx.int(1, 3)];
        let x = fx.tensor(dims, 2.0);
        let got = tssa(&x, &p).unwrap();
        assert!(got.max_abs_diff(&oracle::tssa(&x, &p)).unwrap() < 1e-9);
    }
}

#[test]
fn tssa_statistics_are_well_formed() {
    let mut fx = Fixture::new(29);
    for _ in 0..200 {
        let c = fx.int(1, 4);
        let p = random_tssa(&mut fx, c);
        let d = dims(&mut fx, 2, c, 6);
        let x = fx.tensor(d, 10.0);
        let tr = tssa_trace(&x, &p).unwrap();
        for t in 0..tr.pi.rows() {
            let s: f64 = tr.pi.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(tr.dots.iter().all(|&d| d >= 0.0));
        assert!(tr.attn.iter().all(|&a| a > 0.0 && a <= 1.0));
    }
}

fn mona_params(fx: &mut Fixture, c: usize) -> MonaParams<f64> {
    random(fx, MonaParams::zeros(c, (c / 4).max(1)))
}

#[test]
fn mona_examples() {
    let mut fx = Fixture::new(31);
    let c = 4;
    let mut p = MonaParams::<f64>::zeros(c, 2);
    let z = fx.tensor([1, 2, 5, 5], 1.0);
    assert_eq!(mona_op(&z, &p).unwrap(), z);
    assert!(mona_op(&Tensor::zeros([1, 2, 5, 5]), &p)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));

    let x = fx.tensor([1, c, 4, 4], 1.0);
    assert!(mona(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
    p.xmona = Linear::identity(c, true);
    p.xmona_scale = 1e-6;
    let ones = mgdfis_core::ftssa::xmona(&Tensor::ones([1, c, 2, 2]), &p).unwrap();
    assert!(ones.data().iter().all(|&v| v == 1e-6));
    let y = mona(&x, &p).unwrap();
    assert!(y.max_abs_diff(&x.scale(1e-6)).unwrap() < 1e-21);
    p.xmona_scale = 0.0;
    assert!(mgdfis_core::ftssa::xmona(&x, &p)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn mona_matches_oracle() {
    let mut fx = Fixture::new(37);
    for _ in 0..50 {
        let c = fx.int(1, 4);
        let p = mona_params(&mut fx, c);
        let d = dims(&mut fx, 1, p.reduced(), 8);
        let z = fx.tensor(d, 1.0);
        assert!(
            mona_op(&z, &p)
                .unwrap()
                .max_abs_diff(&oracle::mona_op(&z, &p))
                .unwrap()
                < 1e-12
        );
        let d = dims(&mut fx, 2, c, 6);
        let x = fx.tensor(d, 1.0);
        assert!(
            mona(&x, &p)
                .unwrap()
                .max_abs_diff(&oracle::mona(&x, &p))
                .unwrap()
                < 1e-12
        );
        let skip = mgdfis_core::ftssa::xmona(&x, &p).unwrap();
        assert!(skip.max_abs_diff(&oracle::xmona(&x, &p)).unwrap() < 1e-14);
    }
}

#[test]
fn seff_examples_and_oracle() {
    let p = SeffParams::<f64>::zeros(2, 8);
    assert!(seff(&Tensor::zeros([1, 2, 4, 4]), &p)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));

    let mut fx = Fixture::new(41);
    for _ in 0..50 {
        let c = fx.int(1, 3);
        let base = fx.pick(&[2, 4, 8]);
        let p = random(&mut fx, SeffParams::zeros(c, base));
        let d = dims(&mut fx, 2, c, 6);
        let x = fx.tensor(d, 1.0);
        let got = seff(&x, &p).unwrap();
        assert!(got.max_abs_diff(&oracle::seff(&x, &p)).unwrap() < 1e-9);
    }
}

fn skip_only(p: &mut MonaParams<f64>) {
    *p = MonaParams::zeros(p.channels(), p.reduced());
    p.xmona = Linear::identity(p.channels(), true);
    p.xmona_scale = 1e-6;
}

#[test]
fn stage_examples() {
    let mut fx = Fixture::new(43);
    let s = FtssaShape::new(4);
    let x = fx.tensor([1, 4, 5, 5], 1.0);

    let mut p = DaffParams::<f64>::zeros(s);
    p.dyt.alpha = 3.0;
    assert!(daff(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
    skip_only(&mut p.mona);
    assert!(daff(&x, &p).unwrap().max_abs_diff(&x.scale(1e-6)).unwrap() < 1e-21);

    let mut p = SerrParams::<f64>::zeros(s);
    assert!(serr(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
    skip_only(&mut p.mona);
    assert!(serr(&x, &p).unwrap().max_abs_diff(&x.scale(1e-6)).unwrap() < 1e-21);

    let p = FtssaParams::<f64>::zeros(FtssaShape::new(8));
    let y = ftssa(&fx.tensor([2, 8, 6, 6], 1.0), &p).unwrap();
    assert_eq!(y.dims(), [2, 8, 6, 6]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn composed_stages_match_oracle() {
    let mut fx = Fixture::new(47);
    for _ in 0..20 {
        let c = fx.int(1, 4);
        let s = shape(&mut fx, c);
        let mut p = random(&mut fx, FtssaParams::zeros(s));
        p.daff.tssa.pi_mode = fx.pick(&[PiMode::Constant, PiMode::Distribution]);
        let d = dims(&mut fx, 1, c, 5);
        let x = fx.tensor(d, 1.0);
        let d = daff(&x, &p.daff).unwrap();
        assert!(d.max_abs_diff(&oracle::daff(&x, &p.daff)).unwrap() < 1e-9);
        assert!(
            serr(&d, &p.serr)
                .unwrap()
                .max_abs_diff(&oracle::serr(&d, &p.serr))
                .unwrap()
                < 1e-9
        );
        assert!(
            ftssa(&x, &p)
                .unwrap()
                .max_abs_diff(&oracle::ftssa(&x, &p))
                .unwrap()
                < 1e-9
        );
    }
}

#[test]
fn dyt_bounds_hold() {
    let mut fx = Fixture::new(53);
    for _ in 0..1000 {
        let c = fx.int(1, 4);
        let mut p = DyTParams::new(c);
        p.alpha = fx.uniform(-5.0, 5.0);
        p.gamma = (0..c).map(|_| fx.uniform(-3.0, 3.0)).collect();
        p.beta = (0..c).map(|_| fx.uniform(-3.0, 3.0)).collect();
        let x = fx.tensor([1, c, 2, 3], 100.0);
        let y = dyt(&x, &p).unwrap();
        for (i, &v) in y.data().iter().enumerate() {
            let ch = i / 6;
            assert!(v >= p.beta[ch] - p.gamma[ch].abs() - 1e-12);
            assert!(v <= p.beta[ch] + p.gamma[ch].abs() + 1e-12);
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..SEEDS {
        let mut fx = Fixture::new(1000 + seed);
        let c = fx.int(1, 4);
        let dims = [1, c, fx.int(2, 5), fx.int(2, 5)];
        let x = fx.tensor(dims, 1.0);
        let s = shape(&mut fx, c);

        check(seed, &DytOp, &x, &random(&mut fx, DyTParams::new(c)));
        check(seed, &TssaOp, &x, &random_tssa(&mut fx, c));
        let m = mona_params(&mut fx, c);
        let z = fx.tensor([1, m.reduced(), dims[2], dims[3]], 1.0);
        check(seed, &MonaOpOp, &z, &m);
        check(seed, &XmonaOp, &x, &m);
        check(seed, &MonaOp, &x, &m);
        check(
            seed,
            &SeffOp,
            &x,
            &random(&mut fx, SeffParams::zeros(c, s.seff_base)),
        );
        check(seed, &DaffOp, &x, &random(&mut fx, DaffParams::zeros(s)));
        check(seed, &SerrOp, &x, &random(&mut fx, SerrParams::zeros(s)));
        check(seed, &FtssaOp, &x, &random(&mut fx, FtssaParams::zeros(s)));
    }
}

#[test]
fn conv_identity_helper() {
    let id = Conv::<f64>::identity_pointwise(3);
    let x = Fixture::new(2).tensor([1, 3, 2, 2], 1.0);
    assert_eq!(id.forward(&x).unwrap(), x);
}
