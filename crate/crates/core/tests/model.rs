mod common;

use common::{rel_err, rng};
use proptest::prelude::*;
use psgf_core::data::Window;
use psgf_core::gradcore::{Tape, Tensor};
use psgf_core::model::{
    attention, detokenize, flatten, metaformer_block, param_count, revin_denormalize, revin_normalize, unflatten,
    AttentionVars, BlockKind, BlockVars, ForecastConfig, Forecaster, MixerVars, ParamLayout,
};
use rand::Rng;

fn tiny() -> ForecastConfig {
    ForecastConfig {
        lookback: 32,
        horizon: 2,
        channels: 1,
        patch_len: 8,
        stride: 4,
        d_model: 8,
        heads: 2,
        d_k: 4,
        mlp_hidden: 16,
        blocks: vec![BlockKind::Id, BlockKind::Id, BlockKind::Attention],
    }
}

fn random_windows(seed: u64, count: usize, cfg: &ForecastConfig) -> Vec<Window> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| Window {
            input: (0..cfg.lookback * cfg.channels).map(|_| r.random_range(-2.0..2.0)).collect(),
            target: (0..cfg.horizon * cfg.channels).map(|_| r.random_range(-2.0..2.0)).collect(),
        })
        .collect()
}

fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

#[test]
fn full_forward_gradient_matches_finite_differences() {
    let cfg = tiny();
    let model = Forecaster::new(cfg.clone()).unwrap();
    let h = 1e-5;
    for seed in 0..20 {
        let mut params = model.layout().init(seed).into_inner();
        // Perturb every entry so layernorm gains and zero biases are exercised too.
        let mut r = rng(seed + 1000);
        for p in params.iter_mut() {
            *p += r.random_range(-0.1..0.1);
        }
        let windows = random_windows(seed, 3, &cfg);
        let batch: Vec<&Window> = windows.iter().collect();
        let (_, grad) = model.loss_and_grad(&params, &batch).unwrap();
        let mut worst = 0.0f64;
        for j in 0..params.len() {
            let mut plus = params.clone();
            plus[j] += h;
            let mut minus = params.clone();
            minus[j] -= h;
            let fd = (model.loss(&plus, &windows).unwrap() - model.loss(&minus, &windows).unwrap()) / (2.0 * h);
            worst = worst.max(rel_err(grad[j], fd));
        }
        assert!(worst <= 1e-4, "seed {seed}: worst relative error {worst}");
    }
}

#[test]
fn token_count_law() {
    assert_eq!(ForecastConfig::desk(2).tokens(), 16);
    for l in [16usize, 17, 31, 64, 128] {
        for s in 1..=8usize {
            let cfg = ForecastConfig { lookback: l, stride: s, patch_len: 8, ..tiny() };
            let mut tape = Tape::new();
            let model = Forecaster::new(cfg.clone()).unwrap();
            let params = model.layout().init(0);
            let vars = model.bind(&mut tape, &params).unwrap();
            let x = tape.constant(Tensor::zeros(&[1, l]));
            let tok = psgf_core::model::tokenize(&mut tape, x, &vars, &cfg).unwrap();
            assert_eq!(tape.value(tok).shape(), &[1, l / s, cfg.d_model]);
        }
    }
}

#[test]
fn zero_input_zero_bias_gives_zero_tokens() {
    let cfg = tiny();
    let model = Forecaster::new(cfg.clone()).unwrap();
    let params = model.layout().init(1);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, &params).unwrap();
    let x = tape.constant(Tensor::zeros(&[2, cfg.lookback]));
    let tok = psgf_core::model::tokenize(&mut tape, x, &vars, &cfg).unwrap();
    assert!(tape.value(tok).data().iter().all(|&v| v == 0.0));
}

#[test]
fn positional_add_and_its_gradient() {
    let mut tape = Tape::new();
    let xp = tape.param(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let zero = tape.param(Tensor::zeros(&[2, 2]));
    let xd = psgf_core::model::add_positional(&mut tape, xp, zero).unwrap();
    assert_eq!(tape.value(xd).data(), &[1.0, 2.0, 3.0, 4.0]);
    let w = tape.constant(m(2, 2, &[1.0, -2.0, 0.5, 3.0]));
    let prod = tape.mul(xd, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(xp), g.wrt(zero));
}

#[test]
fn attention_uniform_when_keys_vanish() {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::new(&[1, 3, 2], vec![1.0, 2.0, -1.0, 0.5, 3.0, 1.0]).unwrap());
    let k = tape.constant(Tensor::zeros(&[1, 3, 2]));
    let v = tape.constant(Tensor::new(&[1, 3, 2], vec![1.0, 10.0, 2.0, 20.0, 6.0, 60.0]).unwrap());
    let (out, w) = attention(&mut tape, q, k, v).unwrap();
    for row in tape.value(w).data().chunks(3) {
        for &x in row {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    for row in tape.value(out).data().chunks(2) {
        assert!((row[0] - 3.0).abs() < 1e-12 && (row[1] - 30.0).abs() < 1e-12);
    }
}

#[test]
fn attention_single_token_returns_value() {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::new(&[1, 1, 2], vec![0.3, -0.7]).unwrap());
    let k = tape.constant(Tensor::new(&[1, 1, 2], vec![2.0, 5.0]).unwrap());
    let v = tape.constant(Tensor::new(&[1, 1, 3], vec![4.0, 5.0, 6.0]).unwrap());
    let (out, _) = attention(&mut tape, q, k, v).unwrap();
    assert_eq!(tape.value(out).data(), &[4.0, 5.0, 6.0]);
}

#[test]
fn attention_two_by_two_by_hand() {
    // q = k = [[1],[0]] with d_k = 1, v = [[1,0],[0,1]].
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::new(&[1, 2, 1], vec![1.0, 0.0]).unwrap());
    let k = tape.constant(Tensor::new(&[1, 2, 1], vec![1.0, 0.0]).unwrap());
    let v = tape.constant(Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let (out, _) = attention(&mut tape, q, k, v).unwrap();
    let e = std::f64::consts::E;
    let a = e / (e + 1.0);
    let expect = [a, 1.0 - a, 0.5, 0.5];
    for (x, y) in tape.value(out).data().iter().zip(expect) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let mut r = rng(5);
    let mut tape = Tape::new();
    let mk = |r: &mut rand_chacha::ChaCha8Rng, s: &[usize]| {
        Tensor::new(s, (0..s.iter().product()).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap()
    };
    let q = tape.constant(mk(&mut r, &[4, 6, 3]));
    let k = tape.constant(mk(&mut r, &[4, 6, 3]));
    let v = tape.constant(mk(&mut r, &[4, 6, 5]));
    let (_, w) = attention(&mut tape, q, k, v).unwrap();
    for row in tape.value(w).data().chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn layernorm_ref(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
}

fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[test]
fn attention_block_matches_straight_line_evaluation() {
    // One head, D=2, d_k=1, N=2, hidden width 2, unit gains.
    let x = [[0.5, -1.0], [2.0, 0.25]];
    let wq = [0.7, -0.3];
    let wk = [0.2, 0.9];
    let wv = [[1.0, 0.5], [-0.5, 2.0]];
    let wo = [[0.3, -0.2], [0.1, 0.4]];
    let bo = [0.05, -0.05];
    let w1 = [[0.6, -0.4], [0.2, 0.8]];
    let b1 = [0.1, 0.0];
    let w2 = [[-0.3, 0.5], [0.7, 0.1]];
    let b2 = [0.0, 0.2];

    // Oracle.
    let z: Vec<Vec<f64>> = x.iter().map(|r| layernorm_ref(r)).collect();
    let q: Vec<f64> = z.iter().map(|r| r[0] * wq[0] + r[1] * wq[1]).collect();
    let k: Vec<f64> = z.iter().map(|r| r[0] * wk[0] + r[1] * wk[1]).collect();
    let v: Vec<[f64; 2]> = z
        .iter()
        .map(|r| [r[0] * wv[0][0] + r[1] * wv[1][0], r[0] * wv[0][1] + r[1] * wv[1][1]])
        .collect();
    let mut u = [[0.0; 2]; 2];
    for i in 0..2 {
        let s: Vec<f64> = (0..2).map(|j| q[i] * k[j]).collect();
        let mx = s[0].max(s[1]);
        let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
        let a: Vec<f64> = e.iter().map(|v| v / (e[0] + e[1])).collect();
        let o = [a[0] * v[0][0] + a[1] * v[1][0], a[0] * v[0][1] + a[1] * v[1][1]];
        for c in 0..2 {
            u[i][c] = x[i][c] + o[0] * wo[0][c] + o[1] * wo[1][c] + bo[c];
        }
    }
    let mut expect = Vec::new();
    for row in &u {
        let z = layernorm_ref(row);
        let h: Vec<f64> = (0..2).map(|c| gelu_ref(z[0] * w1[0][c] + z[1] * w1[1][c] + b1[c])).collect();
        for c in 0..2 {
            expect.push(row[c] + h[0] * w2[0][c] + h[1] * w2[1][c] + b2[c]);
        }
    }

    let cfg = ForecastConfig { d_model: 2, heads: 1, d_k: 1, mlp_hidden: 2, ..tiny() };
    let mut tape = Tape::new();
    let flat2 = |a: [[f64; 2]; 2]| m(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]);
    let ones = || Tensor::filled(&[2], 1.0);
    let block = BlockVars {
        norm1: (tape.param(ones()), tape.param(Tensor::zeros(&[2]))),
        mixer: MixerVars::Attention(AttentionVars {
            wq: tape.param(m(2, 1, &wq)),
            wk: tape.param(m(2, 1, &wk)),
            wv: tape.param(flat2(wv)),
            wo: tape.param(flat2(wo)),
            bo: tape.param(Tensor::vector(bo.to_vec())),
        }),
        norm2: (tape.param(ones()), tape.param(Tensor::zeros(&[2]))),
        mlp_w1: tape.param(flat2(w1)),
        mlp_b1: tape.param(Tensor::vector(b1.to_vec())),
        mlp_w2: tape.param(flat2(w2)),
        mlp_b2: tape.param(Tensor::vector(b2.to_vec())),
    };
    let xv = tape.constant(Tensor::new(&[1, 2, 2], vec![x[0][0], x[0][1], x[1][0], x[1][1]]).unwrap());
    let out = metaformer_block(&mut tape, xv, &block, &cfg).unwrap();
    for (a, b) in tape.value(out).data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

fn degenerate_block(tape: &mut Tape, d: usize, f: usize, mixer: MixerVars) -> BlockVars {
    BlockVars {
        norm1: (tape.param(Tensor::zeros(&[d])), tape.param(Tensor::zeros(&[d]))),
        mixer,
        norm2: (tape.param(Tensor::zeros(&[d])), tape.param(Tensor::zeros(&[d]))),
        mlp_w1: tape.param(Tensor::filled(&[d, f], 0.3)),
        mlp_b1: tape.param(Tensor::filled(&[f], 0.1)),
        mlp_w2: tape.param(Tensor::zeros(&[f, d])),
        mlp_b2: tape.param(Tensor::zeros(&[d])),
    }
}

#[test]
fn id_block_with_zero_branches_is_identity() {
    let cfg = tiny();
    let mut tape = Tape::new();
    let block = degenerate_block(&mut tape, 8, 16, MixerVars::Identity);
    let mut r = rng(2);
    let x = common::random_tensor(&mut r, &[3, 8, 8]);
    let xv = tape.constant(x.clone());
    let out = metaformer_block(&mut tape, xv, &block, &cfg).unwrap();
    assert_eq!(tape.value(out).data(), x.data());
}

#[test]
fn single_token_attention_mixer_is_projected_value() {
    // With norm1 = (1, 0) and one token, the mixer output is LN(x)·Wv·Wo + bo.
    let cfg = ForecastConfig { d_model: 2, heads: 1, d_k: 1, mlp_hidden: 2, ..tiny() };
    let mut tape = Tape::new();
    let mut block = degenerate_block(&mut tape, 2, 2, MixerVars::Identity);
    block.norm1 = (tape.param(Tensor::filled(&[2], 1.0)), tape.param(Tensor::zeros(&[2])));
    block.mixer = MixerVars::Attention(AttentionVars {
        wq: tape.param(m(2, 1, &[5.0, -1.0])),
        wk: tape.param(m(2, 1, &[0.3, 2.0])),
        wv: tape.param(m(2, 2, &[1.0, 2.0, 3.0, 4.0])),
        wo: tape.param(m(2, 2, &[1.0, 0.0, 0.0, 1.0])),
        bo: tape.param(Tensor::vector(vec![0.5, -0.5])),
    });
    let xv = tape.constant(Tensor::new(&[1, 1, 2], vec![3.0, 1.0]).unwrap());
    let out = metaformer_block(&mut tape, xv, &block, &cfg).unwrap();
    let z = layernorm_ref(&[3.0, 1.0]);
    let expect = [3.0 + z[0] * 1.0 + z[1] * 3.0 + 0.5, 1.0 + z[0] * 2.0 + z[1] * 4.0 - 0.5];
    for (a, b) in tape.value(out).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn time_mlp_block_mixes_tokens() {
    let cfg = ForecastConfig { blocks: vec![BlockKind::TimeMlp], ..tiny() };
    let model = Forecaster::new(cfg.clone()).unwrap();
    let params = model.layout().init(4);
    let windows = random_windows(8, 2, &cfg);
    let batch: Vec<&Window> = windows.iter().collect();
    let (_, g) = model.loss_and_grad(&params, &batch).unwrap();
    let spec = model.layout().get("blocks.0.mixer.w1").unwrap();
    assert!(g[spec.range()].iter().any(|&v| v != 0.0));
}

#[test]
fn detokenize_examples() {
    let mut tape = Tape::new();
    let hidden = tape.constant(Tensor::new(&[1, 2, 1], vec![2.0, 3.0]).unwrap());
    let w = tape.param(m(2, 1, &[1.0, 1.0]));
    let b = tape.param(Tensor::vector(vec![0.0]));
    let y = detokenize(&mut tape, hidden, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0]);

    let zw = tape.param(Tensor::zeros(&[2, 3]));
    let bias = tape.param(Tensor::vector(vec![1.0, -2.0, 0.5]));
    let y = detokenize(&mut tape, hidden, zw, bias).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, -2.0, 0.5]);

    // Swapping tokens changes the output for an asymmetric head.
    let w = tape.param(m(2, 1, &[1.0, 2.0]));
    let a = detokenize(&mut tape, hidden, w, b).unwrap();
    let swapped = tape.constant(Tensor::new(&[1, 2, 1], vec![3.0, 2.0]).unwrap());
    let c = detokenize(&mut tape, swapped, w, b).unwrap();
    assert_ne!(tape.value(a).data(), tape.value(c).data());
}

#[test]
fn constant_input_continues_the_mean() {
    let cfg = ForecastConfig { channels: 1, ..tiny() };
    let model = Forecaster::new(cfg.clone()).unwrap();
    let params = model.layout().init(0);
    // Zero-initialised biases everywhere; the head sees zero-normalised input
    // only through W_pos and the blocks, so zero the head weights as well.
    let mut p = params.clone().into_inner();
    let head = model.layout().get("head.weight").unwrap();
    for v in &mut p[head.range()] {
        *v = 0.0;
    }
    let out = model.forecast(&p, &[4.5; 32]).unwrap();
    assert_eq!(out, vec![4.5, 4.5]);
}

#[test]
fn desk_shapes() {
    let cfg = ForecastConfig { d_model: 16, heads: 4, d_k: 4, mlp_hidden: 32, ..ForecastConfig::desk(4) };
    let model = Forecaster::new(cfg).unwrap();
    let params = model.layout().init(0);
    let x: Vec<f64> = (0..128).map(|i| (i as f64 * 0.3).sin()).collect();
    assert_eq!(model.forecast(&params, &x).unwrap().len(), 4);
}

#[test]
fn channels_are_independent() {
    let cfg = ForecastConfig { channels: 3, ..tiny() };
    let model = Forecaster::new(cfg.clone()).unwrap();
    let params = model.layout().init(9);
    let mut r = rng(11);
    let series: Vec<Vec<f64>> = (0..3).map(|_| (0..32).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let input: Vec<f64> = series.concat();
    let out = model.forecast(&params, &input).unwrap();
    let perm = [2usize, 0, 1];
    let permuted: Vec<f64> = perm.iter().flat_map(|&c| series[c].clone()).collect();
    let out_p = model.forecast(&params, &permuted).unwrap();
    for (i, &c) in perm.iter().enumerate() {
        assert_eq!(&out_p[i * 2..i * 2 + 2], &out[c * 2..c * 2 + 2]);
    }
}

#[test]
fn mse_loss_examples() {
    let mut tape = Tape::new();
    let p = tape.constant(m(1, 2, &[1.0, 1.0]));
    let t = tape.constant(m(1, 2, &[0.0, 0.0]));
    let l = psgf_core::model::mse_loss(&mut tape, p, t).unwrap();
    assert_eq!(tape.value(l).data(), &[2.0]);
    let l = psgf_core::model::mse_loss(&mut tape, p, p).unwrap();
    assert_eq!(tape.value(l).data(), &[0.0]);
    let p3 = tape.constant(m(1, 2, &[3.0, 3.0]));
    let l = psgf_core::model::mse_loss(&mut tape, p3, t).unwrap();
    assert_eq!(tape.value(l).data(), &[18.0]);
}

#[test]
fn flatten_round_trip_and_bijection() {
    let layout = ParamLayout::for_config(&tiny()).unwrap();
    let v = layout.init(21);
    let named = unflatten(&layout, &v).unwrap();
    assert_eq!(flatten(&layout, &named).unwrap(), v);
    assert_eq!(v.len(), param_count(&tiny()).unwrap());
    assert!(unflatten(&layout, &v[1..]).is_err());
    for k in [0, 100, v.len() / 2, v.len() - 1] {
        let mut w = v.clone();
        w[k] += 1.0;
        let changed = unflatten(&layout, &w).unwrap();
        let diffs: usize = named
            .tensors
            .iter()
            .zip(&changed.tensors)
            .map(|((_, a), (_, b))| a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count())
            .sum();
        assert_eq!(diffs, 1);
    }
}

#[test]
fn revin_round_trip_thousand_series() {
    let mut r = rng(77);
    for _ in 0..1000 {
        let len = r.random_range(2..64);
        let x: Vec<f64> = (0..len).map(|_| r.random_range(-100.0..100.0)).collect();
        let (z, s) = revin_normalize(&x);
        let back = revin_denormalize(&z, s);
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-9);
    }
    let (z, _) = revin_normalize(&[1.0, 3.0]);
    assert!((z[0] + 1.0).abs() < 1e-8 && (z[1] - 1.0).abs() < 1e-8);
}

#[test]
fn desk_parameter_ratio() {
    let cfg = ForecastConfig::desk(4);
    let ours = param_count(&cfg).unwrap() as f64;
    let twin = param_count(&cfg.all_attention_twin()).unwrap() as f64;
    assert!(ours / twin <= 0.60, "ratio {}", ours / twin);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn id_blocks_always_cheaper(
        d_k in 1usize..6, heads in 1usize..4, p in 1usize..9, s in 1usize..9,
        extra in 0usize..40, t in 1usize..5, n_blocks in 1usize..4,
    ) {
        let d = d_k * heads;
        let cfg = ForecastConfig {
            lookback: p.max(s) + extra, horizon: t, channels: 1, patch_len: p, stride: s,
            d_model: d, heads, d_k, mlp_hidden: 2 * d, blocks: vec![BlockKind::Id; n_blocks],
        };
        prop_assert!(param_count(&cfg).unwrap() < param_count(&cfg.all_attention_twin()).unwrap());
    }
}
