use eal_core::attention::{
    band_index, band_len, sparse_alpha_materialize, AttentionConfig, AttentionLayer, EasyAttention, SelfAttention,
    Variant,
};
use eal_core::gradcheck::param_gradcheck;
use eal_core::models::{AttentionModel, SequenceModel};
use eal_core::seed::rng_for;
use eal_core::tensor::{ParamStore, Tape, Tensor};

fn input(n: usize, d: usize, label: &str) -> Tensor {
    Tensor::uniform(&[n, d], 1.0, &mut rng_for(5, label))
}

fn matmul_loop(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m, p) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            for k in 0..m {
                out[i * p + j] += a.at(i, k) * b.at(k, j);
            }
        }
    }
    Tensor::matrix(n, p, out).unwrap()
}

fn cols(t: &Tensor, start: usize, len: usize) -> Tensor {
    Tensor::from_fn(&[t.rows(), len], |i| t.at(i / len, start + i % len))
}

fn hcat(parts: &[Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let width: usize = parts.iter().map(Tensor::cols).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::matrix(rows, width, data).unwrap()
}

/// Scaled dot-product attention computed entry by entry.
fn self_attention_loop(x: &Tensor, store: &ParamStore, layer: &SelfAttention) -> Tensor {
    let cfg = layer.config();
    let (h, k) = (cfg.heads, cfg.head_width());
    let q = matmul_loop(x, store.get(layer.w_q));
    let kk = matmul_loop(x, store.get(layer.w_k));
    let v = matmul_loop(x, store.get(layer.w_v));
    let n = x.rows();
    let mut heads = Vec::new();
    for head in 0..h {
        let (qh, kh, vh) = (cols(&q, head * k, k), cols(&kk, head * k, k), cols(&v, head * k, k));
        let mut alpha = vec![0.0; n * n];
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| (0..k).map(|c| qh.at(i, c) * kh.at(j, c)).sum::<f64>() / (k as f64).sqrt())
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
            for j in 0..n {
                alpha[i * n + j] = (logits[j] - top).exp() / z;
            }
        }
        heads.push(matmul_loop(&Tensor::matrix(n, n, alpha).unwrap(), &vh));
    }
    matmul_loop(&hcat(&heads), store.get(layer.w_c))
}

fn easy_attention_loop(x: &Tensor, store: &ParamStore, layer: &EasyAttention) -> Tensor {
    let cfg = layer.config();
    let (h, k) = (cfg.heads, cfg.head_width());
    let v = matmul_loop(x, store.get(layer.w_v));
    let heads: Vec<Tensor> = (0..h)
        .map(|head| matmul_loop(&layer.alpha_matrix(store, head).unwrap(), &cols(&v, head * k, k)))
        .collect();
    hcat(&heads)
}

fn run_layer(model: &AttentionModel, x: &Tensor) -> (Tensor, Vec<&'static str>) {
    let mut tape = Tape::with_params(model.params());
    let xv = tape.constant(x.clone()).unwrap();
    let y = model.forward(&mut tape, xv).unwrap();
    (tape.value(y).clone(), tape.op_names())
}

fn model(variant: Variant, n: usize, d: usize, heads: usize, band_l: usize, seed: u64) -> AttentionModel {
    let cfg = AttentionConfig {
        band_l,
        ..AttentionConfig::new(variant, n, d, heads)
    };
    AttentionModel::new(variant.label(), &cfg, &mut rng_for(seed, "init")).unwrap()
}

#[test]
fn self_attention_matches_scalar_loops() {
    for (n, d, h) in [(3, 3, 1), (5, 4, 2), (6, 8, 4)] {
        let m = model(Variant::SelfAttention, n, d, h, 0, 1);
        let AttentionLayer::SelfAttention(layer) = &m.layer else {
            panic!()
        };
        let x = input(n, d, "x");
        let (out, _) = run_layer(&m, &x);
        let oracle = self_attention_loop(&x, m.params(), layer);
        assert!(out.max_abs_diff(&oracle) < 1e-12, "n={n} d={d} h={h}");
    }
}

#[test]
fn easy_attention_matches_scalar_loops() {
    for (variant, n, d, h, l) in [
        (Variant::EasyDense, 3, 3, 1, 0),
        (Variant::EasyDense, 5, 4, 2, 0),
        (Variant::EasySparse, 6, 4, 2, 1),
        (Variant::EasySparse, 7, 3, 1, 0),
    ] {
        let m = model(variant, n, d, h, l, 2);
        let AttentionLayer::Easy(layer) = &m.layer else {
            panic!()
        };
        let x = input(n, d, "x");
        let (out, _) = run_layer(&m, &x);
        let oracle = easy_attention_loop(&x, m.params(), layer);
        assert!(out.max_abs_diff(&oracle) < 1e-12, "{variant:?} n={n} d={d} h={h}");
    }
}

#[test]
fn easy_attention_records_no_scores_pipeline() {
    for variant in [Variant::EasyDense, Variant::EasySparse] {
        let m = model(variant, 4, 4, 2, 1, 3);
        let (_, ops) = run_layer(&m, &input(4, 4, "x"));
        assert!(!ops.contains(&"softmax_rows"), "{ops:?}");
        assert!(!ops.contains(&"matmul_nt"), "{ops:?}");
    }
    let m = model(Variant::SelfAttention, 4, 4, 2, 0, 3);
    let (_, ops) = run_layer(&m, &input(4, 4, "x"));
    assert!(ops.contains(&"softmax_rows"));
}

#[test]
fn easy_attention_is_linear_in_the_input() {
    let m = model(Variant::EasyDense, 5, 3, 1, 0, 4);
    let (a, b) = (input(5, 3, "a"), input(5, 3, "b"));
    let combo = Tensor::from_fn(&[5, 3], |i| 2.0 * a.data()[i] - 0.5 * b.data()[i]);
    let (ya, _) = run_layer(&m, &a);
    let (yb, _) = run_layer(&m, &b);
    let (yc, _) = run_layer(&m, &combo);
    let expect = Tensor::from_fn(&[5, 3], |i| 2.0 * ya.data()[i] - 0.5 * yb.data()[i]);
    assert!(yc.max_abs_diff(&expect) < 1e-13);
}

#[test]
fn identity_scores_and_values_pass_input_through() {
    let mut m = model(Variant::EasyDense, 4, 3, 1, 0, 5);
    let AttentionLayer::Easy(layer) = m.layer.clone() else {
        panic!()
    };
    *m.params_mut().get_mut(layer.alpha_params()[0]) = Tensor::identity(4);
    *m.params_mut().get_mut(layer.w_v) = Tensor::identity(3);
    let x = input(4, 3, "x");
    let (y, _) = run_layer(&m, &x);
    assert!(y.max_abs_diff(&x) < 1e-15);
}

#[test]
fn zero_queries_give_uniform_scores() {
    let mut m = model(Variant::SelfAttention, 5, 3, 1, 0, 6);
    let AttentionLayer::SelfAttention(layer) = m.layer.clone() else {
        panic!()
    };
    *m.params_mut().get_mut(layer.w_q) = Tensor::zeros(&[3, 3]);
    let mut tape = Tape::with_params(m.params());
    let x = tape.constant(input(5, 3, "x")).unwrap();
    let (_, scores) = layer.forward_with_scores(&mut tape, x).unwrap();
    assert!(tape.value(scores[0]).data().iter().all(|a| (a - 0.2).abs() < 1e-15));
}

#[test]
fn permuting_heads_permutes_output_blocks() {
    let m = model(Variant::EasyDense, 4, 4, 2, 0, 7);
    let AttentionLayer::Easy(layer) = m.layer.clone() else {
        panic!()
    };
    let x = input(4, 4, "x");
    let (y, _) = run_layer(&m, &x);
    let mut swapped = m.clone();
    let (a0, a1) = (layer.alpha_params()[0], layer.alpha_params()[1]);
    let (t0, t1) = (m.params().get(a0).clone(), m.params().get(a1).clone());
    *swapped.params_mut().get_mut(a0) = t1;
    *swapped.params_mut().get_mut(a1) = t0;
    let wv = m.params().get(layer.w_v);
    let perm = Tensor::from_fn(&[4, 4], |i| wv.at(i / 4, (i % 4 + 2) % 4));
    *swapped.params_mut().get_mut(layer.w_v) = perm;
    let (z, _) = run_layer(&swapped, &x);
    for r in 0..4 {
        for c in 0..4 {
            assert!((z.at(r, c) - y.at(r, (c + 2) % 4)).abs() < 1e-14);
        }
    }
}

#[test]
fn band_entries_only_touch_their_diagonals() {
    let (n, l) = (6, 1);
    let m = model(Variant::EasySparse, n, 2, 1, l, 8);
    let AttentionLayer::Easy(layer) = m.layer.clone() else {
        panic!()
    };
    let band_id = layer.alpha_params()[0];
    let base = layer.alpha_matrix(m.params(), 0).unwrap();
    for i in 0..n {
        for j in 0..n {
            if (i as isize - j as isize).abs() > l as isize {
                assert_eq!(base.at(i, j), 0.0);
            }
        }
    }
    let idx = band_index(n, l);
    for (k, &pos) in idx.iter().enumerate() {
        let mut p = m.clone();
        p.params_mut().get_mut(band_id).data_mut()[k] += 1.0;
        let changed = layer.alpha_matrix(p.params(), 0).unwrap();
        for q in 0..n * n {
            let delta = changed.data()[q] - base.data()[q];
            assert_eq!(delta, if q == pos { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn band_storage_sizes() {
    assert_eq!(band_len(64, 0), 64);
    assert_eq!(band_len(6, 5), 36);
    assert_eq!(band_index(6, 5).len(), 36);
    let full = sparse_alpha_materialize(&(0..9).map(f64::from).collect::<Vec<_>>(), 3, 2).unwrap();
    assert_eq!(full.data().iter().sum::<f64>(), 36.0);
    assert!(sparse_alpha_materialize(&[1.0], 3, 0).is_err());
    assert!(sparse_alpha_materialize(&[1.0; 9], 3, 3).is_err());
}

#[test]
fn reference_counts() {
    let easy = AttentionConfig::new(Variant::EasyDense, 3, 3, 1);
    let selfa = AttentionConfig::new(Variant::SelfAttention, 3, 3, 1);
    assert_eq!((easy.param_count(), selfa.param_count()), (18, 36));
    assert_eq!((easy.flops_estimate(), selfa.flops_estimate()), (45, 81));
    for (n, d, h) in [(3, 3, 1), (8, 8, 2), (64, 64, 4), (10, 6, 3)] {
        let e = AttentionConfig::new(Variant::EasyDense, n, d, h).flops_estimate();
        let s = AttentionConfig::new(Variant::SelfAttention, n, d, h).flops_estimate();
        assert!(e < s, "{n} {d} {h}");
    }
}

#[test]
fn layer_gradchecks() {
    for (variant, l) in [
        (Variant::SelfAttention, 0),
        (Variant::EasyDense, 0),
        (Variant::EasySparse, 1),
    ] {
        let m = model(variant, 5, 4, 2, l, 9);
        let x = input(5, 4, "x");
        let target = input(5, 4, "t");
        let report = param_gradcheck(m.params(), 1e-6, |tape| {
            let xv = tape.constant(x.clone())?;
            let y = m.forward(tape, xv)?;
            let t = tape.constant(target.clone())?;
            tape.mse_loss(y, t)
        })
        .unwrap();
        assert!(
            report.worst < 1e-5,
            "{variant:?}: {} {}",
            report.worst_name,
            report.worst
        );
    }
}

#[test]
fn wrong_window_length_is_rejected() {
    let m = model(Variant::EasyDense, 4, 3, 1, 0, 10);
    let mut tape = Tape::with_params(m.params());
    let x = tape.constant(input(5, 3, "x")).unwrap();
    assert!(m.forward(&mut tape, x).is_err());
}
