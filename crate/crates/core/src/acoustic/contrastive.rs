use rand::Rng;

use super::SpanMask;
use crate::error::{Error, Result};
use crate::neural::{Graph, Tensor, Var};
use crate::rng::StreamRng;

fn check_rows(t: &Tensor<f64>, rows: &[usize]) -> Result<()> {
    for &r in rows {
        if t.row(r).iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateVector);
        }
    }
    Ok(())
}

/// Masked-prediction loss: for each masked frame `t`, cross-entropy of
/// picking the true quantized vector `q_t` among `q_t` and `distractors`
/// draws, scored by `cos(c_t, q) / kappa`. Averaged over masked frames.
///
/// Distractors are drawn uniformly, with replacement, from the other masked
/// frames. When no other masked frame exists they come from the remaining
/// frames, and for a single-frame input the target itself is used.
pub fn contrastive_loss(
    g: &mut Graph<f64>,
    context: Var,
    targets: Var,
    mask: &SpanMask,
    distractors: usize,
    kappa: f64,
    rng: &mut StreamRng,
) -> Result<Var> {
    let (tc, tq) = (g.value(context), g.value(targets));
    if tc.rows() != tq.rows() || tc.cols() != tq.cols() || mask.len() != tc.rows() {
        return Err(Error::ShapeMismatch(format!(
            "context {:?}, targets {:?}, mask {}",
            tc.shape(),
            tq.shape(),
            mask.len()
        )));
    }
    let masked = mask.indices();
    if masked.is_empty() || distractors == 0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let frames = tc.rows();
    let mut ctx_idx = Vec::with_capacity(masked.len() * (distractors + 1));
    let mut cand_idx = Vec::with_capacity(ctx_idx.capacity());
    for &t in &masked {
        let pool: Vec<usize> = if masked.len() > 1 {
            masked.iter().copied().filter(|&u| u != t).collect()
        } else if frames > 1 {
            (0..frames).filter(|&u| u != t).collect()
        } else {
            vec![t]
        };
        ctx_idx.extend(std::iter::repeat_n(t, distractors + 1));
        cand_idx.push(t);
        cand_idx.extend((0..distractors).map(|_| pool[rng.random_range(0..pool.len())]));
    }
    check_rows(tc, &masked)?;
    check_rows(tq, &cand_idx)?;
    let c = g.gather_rows(context, &ctx_idx);
    let q = g.gather_rows(targets, &cand_idx);
    let cos = g.row_cosine(c, q);
    let logits = g.reshape(cos, masked.len(), distractors + 1);
    let logits = g.scale(logits, 1.0 / kappa);
    Ok(g.cross_entropy(logits, &vec![0; masked.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{grad_check, ParamStore};
    use crate::rng::{stream, uniform, Purpose};

    #[test]
    fn closed_form_with_orthogonal_distractors() {
        // c = q = e0 and every distractor orthogonal: loss = -ln(e^10 / (e^10 + K))
        let k = 5;
        let mut ctx = Tensor::zeros(k + 1, 6);
        let mut tgt = Tensor::zeros(k + 1, 6);
        ctx.row_mut(0)[0] = 1.0;
        tgt.row_mut(0)[0] = 1.0;
        for i in 1..=k {
            ctx.row_mut(i)[i] = 1.0;
            tgt.row_mut(i)[i] = 1.0;
        }
        // only frame 0 is scored; distractors come from frames 1..=K
        let mut g = Graph::new();
        let c = g.constant(ctx);
        let q = g.constant(tgt.clone());
        let mask = SpanMask::from_flags(vec![true, false, false, false, false, false]);
        let mut rng = stream(1, Purpose::Distractors);
        let loss = contrastive_loss(&mut g, c, q, &mask, k, 0.1, &mut rng).unwrap();
        let expected = -(10f64.exp() / (10f64.exp() + k as f64)).ln();
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
        assert!((expected - 2.27e-4).abs() < 5e-7);
    }

    #[test]
    fn zero_distractors_or_no_mask_give_zero() {
        let mut rng = stream(2, Purpose::Data);
        let t = Tensor::from_rows(4, 3, (0..12).map(|_| uniform(&mut rng, -1.0, 1.0)).collect());
        let mut g = Graph::new();
        let c = g.constant(t.clone());
        let q = g.constant(t);
        let all = SpanMask::from_flags(vec![true; 4]);
        let l = contrastive_loss(&mut g, c, q, &all, 0, 0.1, &mut rng).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let l = contrastive_loss(&mut g, c, q, &SpanMask::none(4), 5, 0.1, &mut rng).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let l = contrastive_loss(&mut g, c, q, &all, 3, 0.1, &mut rng).unwrap();
        assert!(g.value(l).item() > 0.0);
    }

    #[test]
    fn zero_vector_is_degenerate() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::zeros(3, 2));
        let q = g.constant(Tensor::full(3, 2, 1.0));
        let mask = SpanMask::from_flags(vec![true, true, false]);
        let mut rng = stream(3, Purpose::Data);
        assert!(matches!(contrastive_loss(&mut g, c, q, &mask, 2, 0.1, &mut rng), Err(Error::DegenerateVector)));
    }

    #[test]
    fn gradient_wrt_context_and_targets_checks() {
        for seed in 0..3 {
            let mut rng = stream(seed, Purpose::Data);
            let mut store = ParamStore::new();
            let c = store.add("c", Tensor::from_rows(8, 5, (0..40).map(|_| uniform(&mut rng, -1.0, 1.0)).collect()));
            let q = store.add("q", Tensor::from_rows(8, 5, (0..40).map(|_| uniform(&mut rng, -1.0, 1.0)).collect()));
            let mask = SpanMask::from_flags(vec![false, true, true, true, false, true, true, false]);
            let build = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let (cv, qv) = (g.param(s, c), g.param(s, q));
                let mut d = stream(seed, Purpose::Distractors);
                contrastive_loss(g, cv, qv, &mask, 3, 0.5, &mut d).unwrap()
            };
            let mut g = Graph::new();
            let l = build(&mut g, &store);
            assert!(g.value(l).item() > 0.0);
            let grads = g.backward(l).param_grads(store.len());
            let rep = grad_check(&mut store, &grads, 1e-4, |s| {
                let mut g = Graph::new();
                let l = build(&mut g, s);
                Ok(g.value(l).item())
            })
            .unwrap();
            assert!(rep.max_rel_error < 1e-4, "seed {seed}: {rep:?}");
        }
    }
}
