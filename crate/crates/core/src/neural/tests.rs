use super::*;
use crate::rng::{stream, uniform, Purpose, StreamRng};

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut StreamRng) -> Tensor<f64> {
    Tensor::from_rows(rows, cols, (0..rows * cols).map(|_| uniform(rng, lo, hi)).collect())
}

/// Builds the loss with `f`, differentiates it, and compares against
/// central differences over every parameter entry.
fn check<F>(store: &mut ParamStore<f64>, f: F) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    let grads = g.backward(loss).param_grads(store.len());
    grad_check(store, &grads, STEP, |s| {
        let mut g = Graph::new();
        let l = f(&mut g, s);
        Ok(g.value(l).item())
    })
    .unwrap()
}

/// Scalar projection `sum(out * r)` with a fixed random `r`.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let t = g.value(out);
    let mut rng = stream(seed, Purpose::Data);
    let r = g.constant(random(t.rows(), t.cols(), -1.0, 1.0, &mut rng));
    let m = g.mul(out, r);
    g.sum(m)
}

#[test]
fn grad_check_polynomial_and_constant() {
    let mut store = ParamStore::<f64>::new();
    let x = store.add_const("x", 1, 1, 3.0);
    let mut grads = Gradients::new(1);
    grads.accumulate(x, &Tensor::scalar(6.0));
    let rep = grad_check(&mut store, &grads, 1e-4, |s| Ok(s.get(x).item().powi(2))).unwrap();
    assert!(rep.max_rel_error < 1e-6 / 6.0 * 6.0, "{rep:?}");

    let zero = Gradients::new(1);
    let rep = grad_check(&mut store, &zero, 1e-4, |_| Ok(42.0)).unwrap();
    assert_eq!(rep.max_rel_error, 0.0);

    let err = grad_check(&mut store, &zero, 1e-4, |_| Ok(f64::NAN)).unwrap_err();
    assert!(matches!(err, crate::Error::NonFiniteLoss(_)));
}

#[test]
fn elementwise_and_matrix_ops_pass_grad_check() {
    for seed in 0..3 {
        let mut rng = stream(seed, Purpose::Init);
        let mut store = ParamStore::new();
        let a = store.add("a", random(3, 4, -1.0, 1.0, &mut rng));
        let b = store.add("b", random(4, 5, -1.0, 1.0, &mut rng));
        let c = store.add("c", random(3, 5, 0.5, 2.0, &mut rng));
        let r = store.add("r", random(1, 5, -1.0, 1.0, &mut rng));
        let rep = check(&mut store, |g, s| {
            let (a, b, c, r) = (g.param(s, a), g.param(s, b), g.param(s, c), g.param(s, r));
            let ab = g.matmul(a, b);
            let abr = g.add_row(ab, r);
            let gl = g.gelu(abr);
            let lc = g.ln(c);
            let m = g.mul(gl, lc);
            let sc = g.scale(m, 0.7);
            let bt = g.matmul_bt(sc, b);
            let sum = g.add(bt, a);
            let mr = g.mean_rows(sum);
            let rs = g.reshape(mr, 2, 2);
            project(g, rs, seed)
        });
        assert!(rep.max_rel_error < TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn softmax_layer_norm_and_cross_entropy_pass_grad_check() {
    for seed in 0..3 {
        let mut rng = stream(seed + 10, Purpose::Init);
        let mut store = ParamStore::new();
        let x = store.add("x", random(4, 6, -2.0, 2.0, &mut rng));
        let gain = store.add("gain", random(1, 6, 0.5, 1.5, &mut rng));
        let bias = store.add("bias", random(1, 6, -0.5, 0.5, &mut rng));
        let mask = [false, true, false, false, true, false];
        let rep = check(&mut store, |g, s| {
            let (x, gain, bias) = (g.param(s, x), g.param(s, gain), g.param(s, bias));
            let ln = g.layer_norm(x, gain, bias);
            let sm = g.softmax_masked(ln, Some(&mask));
            let p = project(g, sm, seed);
            let ce = g.cross_entropy(ln, &[0, 5, 2, 3]);
            g.add(p, ce)
        });
        assert!(rep.max_rel_error < TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn structural_ops_pass_grad_check() {
    for seed in 0..3 {
        let mut rng = stream(seed + 20, Purpose::Init);
        let mut store = ParamStore::new();
        let x = store.add("x", random(5, 4, -1.0, 1.0, &mut rng));
        let fill = store.add("fill", random(1, 4, -1.0, 1.0, &mut rng));
        let y = store.add("y", random(5, 4, -1.0, 1.0, &mut rng));
        let rep = check(&mut store, |g, s| {
            let (x, fill, y) = (g.param(s, x), g.param(s, fill), g.param(s, y));
            let rep = g.replace_rows(x, fill, &[false, true, false, true, false]);
            let left = g.slice_cols(rep, 0, 3);
            let right = g.slice_cols(y, 1, 2);
            let cat = g.concat_cols(&[left, right]);
            let gathered = g.gather_rows(cat, &[4, 0, 0, 2]);
            let a = g.slice_cols(gathered, 0, 4);
            let b = g.gather_rows(y, &[1, 1, 3, 0]);
            let cos = g.row_cosine(a, b);
            let p = project(g, cos, seed);
            let q = project(g, gathered, seed + 1);
            g.add(p, q)
        });
        assert!(rep.max_rel_error < TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn conv1d_passes_grad_check_and_matches_direct_sum() {
    for seed in 0..3 {
        let mut rng = stream(seed + 30, Purpose::Init);
        let mut store = ParamStore::new();
        let x = store.add("x", random(23, 2, -1.0, 1.0, &mut rng));
        let w = store.add("w", random(3 * 2, 4, -1.0, 1.0, &mut rng));
        let b = store.add("b", random(1, 4, -1.0, 1.0, &mut rng));
        let rep = check(&mut store, |g, s| {
            let (x, w, b) = (g.param(s, x), g.param(s, w), g.param(s, b));
            let y = g.conv1d(x, w, b, 3, 2);
            project(g, y, seed)
        });
        assert!(rep.max_rel_error < TOL, "seed {seed}: {rep:?}");

        let mut g = Graph::new();
        let (xv, wv, bv) = (g.param(&store, x), g.param(&store, w), g.param(&store, b));
        let y = g.conv1d(xv, wv, bv, 3, 2);
        let out = g.value(y);
        assert_eq!(out.rows(), (23 - 3) / 2 + 1);
        let (xt, wt, bt) = (store.get(x), store.get(w), store.get(b));
        for t in 0..out.rows() {
            for o in 0..4 {
                let mut acc = bt.values()[o];
                for j in 0..3 {
                    for c in 0..2 {
                        acc += xt.get(t * 2 + j, c) * wt.get(j * 2 + c, o);
                    }
                }
                assert!((acc - out.get(t, o)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn dropout_with_zero_probability_is_identity() {
    let mut rng = stream(1, Purpose::Data);
    let mut g = Graph::<f64>::new();
    let x = g.input(random(3, 3, -1.0, 1.0, &mut rng));
    let mut drop_rng = stream(1, Purpose::Dropout);
    let y = g.dropout(x, 0.0, &mut drop_rng);
    assert_eq!(g.value(x), g.value(y));
}

#[test]
fn dropout_gradient_uses_the_same_mask() {
    let mut rng = stream(2, Purpose::Init);
    let mut store = ParamStore::new();
    let x = store.add("x", random(4, 4, -1.0, 1.0, &mut rng));
    let rep = check(&mut store, |g, s| {
        let x = g.param(s, x);
        let mut d = stream(99, Purpose::Dropout);
        let y = g.dropout(x, 0.3, &mut d);
        project(g, y, 5)
    });
    assert!(rep.max_rel_error < TOL);
}

#[test]
fn softmax_rows_sum_to_one_over_wide_range() {
    let mut rng = stream(4, Purpose::Data);
    for _ in 0..100 {
        let mut g = Graph::<f64>::new();
        let x = g.input(random(5, 9, -30.0, 30.0, &mut rng));
        let y = g.softmax(x);
        for r in 0..5 {
            let s: f64 = g.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = stream(6, Purpose::Data);
    let x = random(8, 16, -3.0, 3.0, &mut rng);
    let (xhat, _) = normalize_rows(&x);
    for r in 0..8 {
        let row = &xhat[r * 16..(r + 1) * 16];
        let mean: f64 = row.iter().sum::<f64>() / 16.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
    }
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding::<f64>(512, 64).unwrap();
    assert!(pe.row(0).iter().enumerate().all(|(i, &v)| v == if i % 2 == 0 { 0.0 } else { 1.0 }));
    assert!((pe.get(1, 0) - 0.841_471).abs() < 1e-6);
    assert!(pe.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(matches!(positional_encoding::<f64>(4, 7), Err(crate::Error::OddDimension(7))));
    let pe32 = positional_encoding::<f32>(3, 4).unwrap();
    assert_eq!(pe32.get(0, 1), 1.0f32);
}

fn attention_fixture(seed: u64, d: usize, heads: usize) -> (ParamStore<f64>, AttentionParams) {
    let mut rng = stream(seed, Purpose::Init);
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "attn", d, heads, &mut rng);
    (store, p)
}

#[test]
fn single_token_attends_to_itself() {
    let (store, p) = attention_fixture(1, 8, 2);
    let mut rng = stream(1, Purpose::Data);
    let xt = random(1, 8, -1.0, 1.0, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(xt.clone());
    let att = self_attention(&mut g, &store, x, &p, None).unwrap();
    for w in &att.weights {
        assert_eq!(g.value(*w).values(), &[1.0]);
    }
    // output = value projection passed through the output projection
    let v = xt.matmul(store.get(p.value.w));
    let v: Vec<f64> = v.values().iter().zip(store.get(p.value.b).values()).map(|(a, b)| a + b).collect();
    let o = Tensor::from_rows(1, 8, v).matmul(store.get(p.output.w));
    for (i, val) in o.values().iter().enumerate() {
        let expected = val + store.get(p.output.b).values()[i];
        assert!((g.value(att.output).values()[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn identical_rows_give_uniform_attention() {
    let (store, p) = attention_fixture(2, 8, 2);
    let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(5, 8, row.repeat(5)));
    let att = self_attention(&mut g, &store, x, &p, None).unwrap();
    for w in &att.weights {
        assert!(g.value(*w).values().iter().all(|v| (v - 0.2).abs() < 1e-12));
    }
}

#[test]
fn attention_rows_normalize_and_input_gradient_checks() {
    for seed in 0..3 {
        let (mut store, p) = attention_fixture(seed, 8, 2);
        let mut rng = stream(seed, Purpose::Data);
        let x = store.add("x", random(4, 8, -1.0, 1.0, &mut rng));
        let mut g = Graph::new();
        let xv = g.param(&store, x);
        let att = self_attention(&mut g, &store, xv, &p, None).unwrap();
        for w in &att.weights {
            for r in 0..4 {
                assert!((g.value(*w).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let rep = check(&mut store, |g, s| {
            let xv = g.param(s, x);
            let att = self_attention(g, s, xv, &p, None).unwrap();
            project(g, att.output, seed)
        });
        assert!(rep.max_rel_error < TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn masked_keys_receive_no_weight() {
    let (store, p) = attention_fixture(3, 8, 4);
    let mut rng = stream(3, Purpose::Data);
    let mut g = Graph::new();
    let x = g.constant(random(4, 8, -1.0, 1.0, &mut rng));
    let mask = [false, false, true, true];
    let att = self_attention(&mut g, &store, x, &p, Some(&mask)).unwrap();
    for w in &att.weights {
        for r in 0..4 {
            assert_eq!(g.value(*w).get(r, 2), 0.0);
            assert_eq!(g.value(*w).get(r, 3), 0.0);
        }
    }
    let all = [true; 4];
    assert!(self_attention(&mut g, &store, x, &p, Some(&all)).is_err());
}

#[test]
fn attention_is_permutation_equivariant() {
    let (store, p) = attention_fixture(4, 8, 2);
    let mut rng = stream(4, Purpose::Data);
    let xt = random(6, 8, -1.0, 1.0, &mut rng);
    let perm = [3, 0, 5, 1, 4, 2];
    let mut g = Graph::new();
    let x = g.constant(xt.clone());
    let y = self_attention(&mut g, &store, x, &p, None).unwrap().output;
    let xp = g.constant(xt.gather_rows(&perm));
    let yp = self_attention(&mut g, &store, xp, &p, None).unwrap().output;
    let expected = g.value(y).gather_rows(&perm);
    for (a, b) in expected.values().iter().zip(g.value(yp).values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_shape_errors() {
    let (store, p) = attention_fixture(5, 8, 2);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(3, 6));
    assert!(matches!(self_attention(&mut g, &store, x, &p, None), Err(crate::Error::ShapeMismatch(_))));
    let x = g.constant(Tensor::zeros(3, 8));
    assert!(self_attention(&mut g, &store, x, &p, Some(&[false])).is_err());
}

fn block_fixture(seed: u64) -> (ParamStore<f64>, EncoderBlockParams) {
    let mut rng = stream(seed, Purpose::Init);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig { d_model: 8, heads: 2, layers: 1, ff_mult: 4, dropout: 0.1 };
    let p = EncoderBlockParams::new(&mut store, "blk", &cfg, &mut rng).unwrap();
    (store, p)
}

#[test]
fn encoder_block_inference_is_deterministic() {
    let (store, p) = block_fixture(1);
    let mut rng = stream(1, Purpose::Data);
    let xt = random(4, 8, -1.0, 1.0, &mut rng);
    let run = |seed: u64| {
        let mut g = Graph::new();
        let x = g.constant(xt.clone());
        let mut d = stream(seed, Purpose::Dropout);
        let y = encoder_block(&mut g, &store, x, &p, None, false, &mut d).unwrap();
        g.value(y).clone()
    };
    let a = run(1);
    assert_eq!(a, run(2));
    assert_eq!(a.shape(), &[4, 8]);
}

#[test]
fn encoder_block_parameters_pass_grad_check() {
    for seed in 0..3 {
        let (mut store, p) = block_fixture(seed);
        let mut rng = stream(seed, Purpose::Data);
        let x = store.add("x", random(4, 8, -1.0, 1.0, &mut rng));
        let rep = check(&mut store, |g, s| {
            let xv = g.param(s, x);
            let mut d = stream(seed, Purpose::Dropout);
            let y = encoder_block(g, s, xv, &p, None, true, &mut d).unwrap();
            project(g, y, seed)
        });
        assert!(rep.max_rel_error < TOL, "seed {seed}: {rep:?}");
        assert_eq!(rep.checked, store.num_values());
    }
}

#[test]
fn two_block_encoder_with_cross_entropy_passes_grad_check() {
    for seed in 0..3 {
        let mut rng = stream(seed, Purpose::Init);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig { d_model: 8, heads: 2, layers: 2, ff_mult: 4, dropout: 0.0 };
        let enc = Encoder::new(&mut store, "enc", cfg, &mut rng).unwrap();
        let head = Linear::new(&mut store, "head", 8, 3, &mut rng);
        let mut data = stream(seed, Purpose::Data);
        let x = store.add("x", random(5, 8, -1.0, 1.0, &mut data));
        let targets: Vec<usize> = (0..5).map(|i| (i * 7 + seed as usize) % 3).collect();
        let rep = check(&mut store, |g, s| {
            let xv = g.param(s, x);
            let mut d = stream(seed, Purpose::Dropout);
            let h = enc.forward(g, s, xv, None, true, &mut d).unwrap();
            let logits = head.forward(g, s, h);
            g.cross_entropy(logits, &targets)
        });
        assert!(rep.max_rel_error < TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn invalid_encoder_geometry() {
    let mut rng = stream(0, Purpose::Init);
    let mut store = ParamStore::<f64>::new();
    let cfg = EncoderConfig { d_model: 10, heads: 3, layers: 1, ff_mult: 4, dropout: 0.1 };
    assert!(Encoder::new(&mut store, "e", cfg, &mut rng).is_err());
    let cfg = EncoderConfig { d_model: 8, heads: 2, layers: 1, ff_mult: 4, dropout: 1.0 };
    assert!(Encoder::new(&mut store, "e", cfg, &mut rng).is_err());
}
