mod common;

use common::{matmul_ref, rng, rows, softmax_ref, uniform};
use tqd::decoder::{
    attention, decoder_forward, init_queries, multi_head_attention, sinusoidal_pe, AttentionParams,
    DecoderConfig, DecoderLayerParams, QueryBank,
};
use tqd::losses::gram_softmax;
use tqd::metrics::diagonality;
use tqd::params::{bind, Linear, Norm, ParamTree};
use tqd::tensor::{grad_check, Graph, Tensor};
use tqd::ErrorCategory;

#[test]
fn query_variance_is_respected() {
    let bank = init_queries::<f64>(64, 64, 5.0, 1).unwrap();
    let v = bank.embeddings.data();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var - 5.0).abs() < 0.5, "sample variance {var}");

    let unit = init_queries::<f64>(64, 64, 1.0, 2).unwrap();
    let u = unit.embeddings.data();
    let m = u.iter().sum::<f64>() / n;
    let var = u.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(m.abs() < 0.06 && (var - 1.0).abs() < 0.1);

    assert_eq!(bank, init_queries::<f64>(64, 64, 5.0, 1).unwrap());
    for bad in [0.0, -1.0, f64::NAN] {
        let e = init_queries::<f64>(4, 8, bad, 0).unwrap_err();
        assert_eq!(e.category(), ErrorCategory::Config);
    }
}

#[test]
fn sinusoidal_pe_matches_reference() {
    let pe = sinusoidal_pe::<f64>(4, 8).unwrap();
    for p in 0..4 {
        for i in 0..4 {
            let freq = 1.0 / 10000f64.powf((2 * i) as f64 / 8.0);
            assert!((pe.at(p, 2 * i) - (p as f64 * freq).sin()).abs() < 1e-14);
            assert!((pe.at(p, 2 * i + 1) - (p as f64 * freq).cos()).abs() < 1e-14);
        }
    }
    for j in 0..8 {
        assert_eq!(pe.at(0, j), if j % 2 == 0 { 0.0 } else { 1.0 });
    }
    let big = sinusoidal_pe::<f64>(50, 64).unwrap();
    assert!(big.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(
        sinusoidal_pe::<f64>(4, 7).unwrap_err().category(),
        ErrorCategory::Config
    );
}

fn identity_attention(g: &mut Graph<f64>, d: usize) -> AttentionParams<tqd::tensor::Var> {
    bind(g, &AttentionParams::<Tensor<f64>>::identity(d))
}

#[test]
fn single_memory_slot_gets_all_weight() {
    let mut r = rng(4);
    let mut g = Graph::new();
    let q = g.constant(uniform(&mut r, 5, 8));
    let m = g.constant(uniform(&mut r, 1, 8));
    let p = bind(&mut g, &AttentionParams::<Tensor<f64>>::init(8, &mut r));
    let (_, w) = multi_head_attention(&mut g, q, m, &p, 4).unwrap();
    assert!(w.data().iter().all(|&x| x == 1.0));
}

#[test]
fn identical_queries_give_identical_rows() {
    let mut r = rng(5);
    let row = uniform(&mut r, 1, 8);
    let q = Tensor::from_fn(3, 8, |_, j| row.at(0, j));
    let mut g = Graph::new();
    let qv = g.constant(q);
    let m = g.constant(uniform(&mut r, 6, 8));
    let p = bind(&mut g, &AttentionParams::<Tensor<f64>>::init(8, &mut r));
    let (out, _) = multi_head_attention(&mut g, qv, m, &p, 2).unwrap();
    let o = g.value(out);
    assert_eq!(o.row(0), o.row(1));
    assert_eq!(o.row(1), o.row(2));
}

#[test]
fn identity_projection_attention_matches_dense_oracle() {
    let mut r = rng(6);
    let qt = uniform(&mut r, 2, 4);
    let mt = uniform(&mut r, 3, 4);
    let mut g = Graph::new();
    let q = g.constant(qt.clone());
    let m = g.constant(mt.clone());
    let p = identity_attention(&mut g, 4);
    let (out, w) = multi_head_attention(&mut g, q, m, &p, 1).unwrap();

    let (q, m) = (rows(&qt), rows(&mt));
    let scores: Vec<Vec<f64>> = q
        .iter()
        .map(|qi| {
            m.iter()
                .map(|mj| qi.iter().zip(mj).map(|(a, b)| a * b).sum::<f64>() / 2.0)
                .collect()
        })
        .collect();
    let weights: Vec<Vec<f64>> = scores.iter().map(|s| softmax_ref(s)).collect();
    let expected = matmul_ref(&weights, &m);
    for i in 0..2 {
        for j in 0..3 {
            assert!((w.at(i, j) - weights[i][j]).abs() < 1e-12);
        }
        for j in 0..4 {
            assert!((g.value(out).at(i, j) - expected[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn multi_head_matches_per_head_oracle() {
    let mut r = rng(7);
    let (d, h) = (8, 4);
    let qt = uniform(&mut r, 3, d);
    let mt = uniform(&mut r, 5, d);
    let mut g = Graph::new();
    let q = g.constant(qt.clone());
    let m = g.constant(mt.clone());
    let p = identity_attention(&mut g, d);
    let (out, w) = multi_head_attention(&mut g, q, m, &p, h).unwrap();
    let dh = d / h;
    let mut avg = vec![vec![0.0; 5]; 3];
    for head in 0..h {
        let cols = head * dh..(head + 1) * dh;
        let qh: Vec<Vec<f64>> = rows(&qt).iter().map(|r| r[cols.clone()].to_vec()).collect();
        let mh: Vec<Vec<f64>> = rows(&mt).iter().map(|r| r[cols.clone()].to_vec()).collect();
        for i in 0..3 {
            let s: Vec<f64> = mh
                .iter()
                .map(|mj| {
                    qh[i].iter().zip(mj).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                })
                .collect();
            let wi = softmax_ref(&s);
            for (j, v) in wi.iter().enumerate() {
                avg[i][j] += v / h as f64;
            }
            for c in 0..dh {
                let e: f64 = wi.iter().zip(&mh).map(|(a, mj)| a * mj[c]).sum();
                assert!((g.value(out).at(i, head * dh + c) - e).abs() < 1e-12);
            }
        }
    }
    for i in 0..3 {
        for j in 0..5 {
            assert!((w.at(i, j) - avg[i][j]).abs() < 1e-12);
        }
        assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn attention_shape_errors() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(Tensor::zeros(&[2, 8]));
    let m = g.constant(Tensor::zeros(&[3, 6]));
    let p = identity_attention(&mut g, 8);
    let e = multi_head_attention(&mut g, q, m, &p, 2).unwrap_err();
    assert_eq!(e.category(), ErrorCategory::Numeric);
    let m = g.constant(Tensor::zeros(&[3, 8]));
    let e = attention(&mut g, q, m, m, &p, 3).unwrap_err();
    assert_eq!(e.category(), ErrorCategory::Config);
}

fn layer_norm_ref(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
}

fn attend_ref(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let s: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let w = softmax_ref(&s);
            (0..v[0].len())
                .map(|c| w.iter().zip(v).map(|(a, vj)| a * vj[c]).sum())
                .collect()
        })
        .collect()
}

fn plain_layer(d: usize) -> DecoderLayerParams<Tensor<f64>> {
    DecoderLayerParams {
        self_attn: AttentionParams::identity(d),
        cross_attn: AttentionParams::identity(d),
        ff_in: Linear::zero(d, 2 * d),
        ff_out: Linear::zero(2 * d, d),
        norm_self: Norm::init(d),
        norm_cross: Norm::init(d),
        norm_ff: Norm::init(d),
    }
}

#[test]
fn one_layer_decoder_matches_dense_oracle() {
    let (k, d, l) = (3, 6, 5);
    let mut r = rng(8);
    let bank = init_queries::<f64>(k, d, 1.0, 9).unwrap();
    let mem = uniform(&mut r, l, d);
    let cfg = DecoderConfig {
        heads: 1,
        dropout: 0.0,
        ..DecoderConfig::default()
    };
    let mut g = Graph::new();
    let b = bind(&mut g, &bank);
    let layers = bind(&mut g, &vec![plain_layer(d)]);
    let m = g.constant(mem.clone());
    let (out, trace) = decoder_forward(&mut g, &b, m, &layers, &cfg, None).unwrap();

    let add = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
            .collect()
    };
    let pe = rows(&bank.pos_encoding);
    let x = rows(&bank.embeddings);
    let q = add(&x, &pe);
    let sa = attend_ref(&q, &q, &x);
    let x1: Vec<Vec<f64>> = add(&x, &sa).iter().map(|r| layer_norm_ref(r)).collect();
    let q = add(&x1, &pe);
    let m = rows(&mem);
    let ca = attend_ref(&q, &m, &m);
    let y: Vec<Vec<f64>> = add(&x1, &ca).iter().map(|r| layer_norm_ref(r)).collect();
    let expected: Vec<Vec<f64>> = y.iter().map(|r| layer_norm_ref(r)).collect();

    for i in 0..k {
        for j in 0..d {
            assert!((g.value(out).at(i, j) - expected[i][j]).abs() < 1e-10);
            assert!((g.value(trace.self_outputs[0]).at(i, j) - sa[i][j]).abs() < 1e-12);
            assert!((g.value(trace.cross_outputs[0]).at(i, j) - ca[i][j]).abs() < 1e-12);
        }
    }
}

fn random_stack(seed: u64, d: usize, n: usize) -> Vec<DecoderLayerParams<Tensor<f64>>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| DecoderLayerParams::init(d, &mut r))
        .collect()
}

#[test]
fn trace_has_one_entry_per_layer_and_stochastic_weights() {
    let mut r = rng(10);
    let bank = init_queries::<f64>(8, 16, 5.0, 0).unwrap();
    let stack = random_stack(11, 16, 2);
    let mut g = Graph::new();
    let b = bind(&mut g, &bank);
    let layers = bind(&mut g, &stack);
    let m = g.constant(uniform(&mut r, 12, 16));
    let cfg = DecoderConfig::default();
    let (_, trace) = decoder_forward(&mut g, &b, m, &layers, &cfg, None).unwrap();
    assert_eq!(trace.num_layers(), 2);
    assert_eq!(trace.cross_outputs.len(), 2);
    assert_eq!(trace.self_weights.len(), 2);
    for w in trace.self_weights.iter().chain(&trace.cross_weights) {
        for i in 0..w.rows() {
            assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(w.row(i).iter().all(|&v| v >= 0.0));
        }
    }
    assert_eq!(trace.cross_weights[0].shape(), &[8, 12]);
}

#[test]
fn eval_forward_is_bit_identical() {
    let run = || {
        let mut r = rng(12);
        let bank = init_queries::<f64>(8, 16, 5.0, 3).unwrap();
        let stack = random_stack(13, 16, 2);
        let mut g = Graph::new();
        let b = bind(&mut g, &bank);
        let layers = bind(&mut g, &stack);
        let m = g.constant(uniform(&mut r, 7, 16));
        let (out, _) =
            decoder_forward(&mut g, &b, m, &layers, &DecoderConfig::default(), None).unwrap();
        g.value(out)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn permuting_memory_permutes_cross_weights_only() {
    let (l, d) = (9, 16);
    let mut r = rng(14);
    let mem = uniform(&mut r, l, d);
    let perm: Vec<usize> = vec![3, 0, 8, 1, 7, 2, 6, 4, 5];
    let permuted = Tensor::from_fn(l, d, |i, j| mem.at(perm[i], j));
    let bank = init_queries::<f64>(6, d, 5.0, 15).unwrap();
    let stack = random_stack(16, d, 2);
    let run = |m: &Tensor<f64>| {
        let mut g = Graph::new();
        let b = bind(&mut g, &bank);
        let layers = bind(&mut g, &stack);
        let mv = g.constant(m.clone());
        let (out, trace) =
            decoder_forward(&mut g, &b, mv, &layers, &DecoderConfig::default(), None).unwrap();
        (g.value(out).clone(), trace.cross_weights)
    };
    let (o1, w1) = run(&mem);
    let (o2, w2) = run(&permuted);
    assert!(o1.max_abs_diff(&o2).unwrap() < 1e-12);
    for (a, b) in w1.iter().zip(&w2) {
        for i in 0..a.rows() {
            for j in 0..l {
                assert!((b.at(i, j) - a.at(i, perm[j])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn empty_memory_is_a_data_error() {
    let bank = init_queries::<f64>(4, 8, 1.0, 0).unwrap();
    let stack = random_stack(1, 8, 1);
    let mut g = Graph::new();
    let b = bind(&mut g, &bank);
    let layers = bind(&mut g, &stack);
    let m = g.constant(Tensor::zeros(&[0, 8]));
    let e = decoder_forward(&mut g, &b, m, &layers, &DecoderConfig::default(), None).unwrap_err();
    assert_eq!(e.category(), ErrorCategory::Data);
}

#[test]
fn scaled_queries_are_more_diagonal_on_average() {
    let mean_diag = |scale: f64| {
        let mut total = 0.0;
        for seed in 0..100 {
            let bank = init_queries::<f64>(8, 16, 1.0, seed).unwrap();
            let mut g = Graph::new();
            let a = g.constant(bank.embeddings.scaled(scale));
            let map = gram_softmax(&mut g, a).unwrap();
            total += diagonality(g.value(map)).unwrap();
        }
        total / 100.0
    };
    let base = mean_diag(0.3);
    for s in [0.5, 1.0, 2.0] {
        let next = mean_diag(s);
        assert!(next > mean_diag(s * 0.8), "scale {s}");
        assert!(next > base);
    }
}

#[test]
fn decoder_output_gradient_wrt_queries() {
    let d = 8;
    let stack = random_stack(17, d, 2);
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let bank = init_queries::<f64>(4, d, 1.0, seed).unwrap();
        let mem = uniform(&mut r, 5, d);
        let weights = uniform(&mut r, 4, d);
        let report = grad_check(
            |g, e| {
                let mut b = bind(g, &bank);
                b.embeddings = e;
                let layers = bind(g, &stack);
                let m = g.constant(mem.clone());
                let cfg = DecoderConfig {
                    heads: 2,
                    ..DecoderConfig::default()
                };
                let (out, _) = decoder_forward(g, &b, m, &layers, &cfg, None)?;
                let w = g.constant(weights.clone());
                let p = g.mul(out, w)?;
                Ok(g.sum(p))
            },
            &bank.embeddings,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {report:?}");
    }
}

#[test]
fn pos_encoding_is_trainable_only_when_learned() {
    let mut bank: QueryBank<Tensor<f64>> = init_queries(4, 8, 1.0, 0).unwrap();
    assert_eq!(tqd::params::param_names(&bank), vec!["embeddings"]);
    bank.learned_pe = true;
    assert_eq!(
        tqd::params::param_names(&bank),
        vec!["embeddings", "pos_encoding"]
    );
    let mut n = 0;
    bank.visit("q", &mut |_, t| n += t.len());
    assert_eq!(n, 64);
}
