//! Contrastive and token-LM loss kernels with exact gradients. All math is
//! f64; callers own batching and scaling.

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// InfoNCE over one example: −log( e^{q·s} / (e^{q·s} + Σ_t e^{q·t}) ),
/// stabilized by max-subtraction, with gradients for the query, the positive,
/// and every negative.
pub struct InfoNce {
    pub loss: f64,
    pub dq: Vec<f64>,
    pub ds: Vec<f64>,
    pub dnegs: Vec<Vec<f64>>,
}

pub fn infonce_loss(q: &[f64], s: &[f64], negs: &[&[f64]]) -> Result<InfoNce> {
    let d = q.len();
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(q) || !finite(s) || negs.iter().any(|t| !finite(t)) {
        return Err(Error::NonFinite("infonce input vectors".into()));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let pos_logit = dot(q, s);
    let neg_logits: Vec<f64> = negs.iter().map(|t| dot(q, t)).collect();
    let m = neg_logits.iter().copied().fold(pos_logit, f64::max);
    let e_pos = (pos_logit - m).exp();
    let e_negs: Vec<f64> = neg_logits.iter().map(|&l| (l - m).exp()).collect();
    let z = e_pos + e_negs.iter().sum::<f64>();
    let loss = z.ln() - (pos_logit - m);

    let p_pos = e_pos / z;
    let mut dq = vec![0.0; d];
    for (a, b) in dq.iter_mut().zip(s) {
        *a += (p_pos - 1.0) * b;
    }
    let mut dnegs = Vec::with_capacity(negs.len());
    for (t, &e) in negs.iter().zip(&e_negs) {
        let p = e / z;
        for (a, b) in dq.iter_mut().zip(*t) {
            *a += p * b;
        }
        dnegs.push(q.iter().map(|&x| p * x).collect());
    }
    let ds = q.iter().map(|&x| (p_pos - 1.0) * x).collect();
    Ok(InfoNce { loss, dq, ds, dnegs })
}

/// Full-vocabulary cross-entropy of the next token: logits are rows of the
/// token-target matrix dotted with the query. `dlogits` is the softmax minus
/// the one-hot target; the caller scatters `dlogits[v] · q` into embedding
/// rows and receives `dq` ready-made.
pub struct TokenCe {
    pub loss: f64,
    pub dq: Vec<f64>,
    pub dlogits: Vec<f64>,
}

pub fn token_loss(q: &[f64], target: TokenId, tok_emb: &[f64], vocab: usize, dim: usize) -> TokenCe {
    debug_assert_eq!(q.len(), dim);
    debug_assert_eq!(tok_emb.len(), vocab * dim);
    debug_assert!((target as usize) < vocab);
    let mut logits = vec![0.0; vocab];
    for (v, l) in logits.iter_mut().enumerate() {
        let row = &tok_emb[v * dim..(v + 1) * dim];
        *l = row.iter().zip(q).map(|(a, b)| a * b).sum();
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in &logits {
        z += (l - m).exp();
    }
    let log_z = z.ln() + m;
    let loss = log_z - logits[target as usize];

    let mut dlogits = logits;
    for l in dlogits.iter_mut() {
        *l = (*l - log_z).exp();
    }
    dlogits[target as usize] -= 1.0;
    let mut dq = vec![0.0; dim];
    for (v, &dl) in dlogits.iter().enumerate() {
        if dl != 0.0 {
            let row = &tok_emb[v * dim..(v + 1) * dim];
            for (a, b) in dq.iter_mut().zip(row) {
                *a += dl * b;
            }
        }
    }
    TokenCe { loss, dq, dlogits }
}

/// The combined objective: phrase term plus α times the token term.
pub fn combined(l_p: f64, l_t: f64, alpha: f64) -> f64 {
    l_p + alpha * l_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn infonce_with_no_negatives_is_zero() {
        let out = infonce_loss(&[0.3, -0.7], &[1.0, 2.0], &[]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.dq.iter().all(|&x| x == 0.0));
        assert!(out.ds.iter().all(|&x| x == 0.0));
        assert!(out.dnegs.is_empty());
    }

    #[test]
    fn infonce_symmetric_negative_is_ln2() {
        // q·s = q·t = 0.3 → probabilities are 1/2 each.
        let q = vec![1.0, 0.0];
        let s = vec![0.3, 0.4];
        let t = vec![0.3, -0.9];
        let out = infonce_loss(&q, &s, &[&t]).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn infonce_rejects_non_finite() {
        let q = vec![f64::NAN, 0.0];
        assert!(matches!(
            infonce_loss(&q, &[1.0, 2.0], &[]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn infonce_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 5;
        for _ in 0..10 {
            let q = randv(&mut rng, d);
            let s = randv(&mut rng, d);
            let negs: Vec<Vec<f64>> = (0..3).map(|_| randv(&mut rng, d)).collect();
            let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
            let out = infonce_loss(&q, &s, &refs).unwrap();

            let eval = |q: &[f64], s: &[f64], negs: &[Vec<f64>]| {
                let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
                infonce_loss(q, s, &refs).unwrap().loss
            };
            let h = 1e-6;
            for i in 0..d {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                let num = (eval(&qp, &s, &negs) - eval(&qm, &s, &negs)) / (2.0 * h);
                assert!((num - out.dq[i]).abs() < 1e-6, "dq[{i}]: {num} vs {}", out.dq[i]);

                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[i] += h;
                sm[i] -= h;
                let num = (eval(&q, &sp, &negs) - eval(&q, &sm, &negs)) / (2.0 * h);
                assert!((num - out.ds[i]).abs() < 1e-6);

                let mut np = negs.clone();
                let mut nm = negs.clone();
                np[1][i] += h;
                nm[1][i] -= h;
                let num = (eval(&q, &s, &np) - eval(&q, &s, &nm)) / (2.0 * h);
                assert!((num - out.dnegs[1][i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn token_loss_single_vocab_is_zero() {
        let out = token_loss(&[0.5, 0.5], 0, &[0.3, 0.4], 1, 2);
        assert!(out.loss.abs() < 1e-15);
    }

    #[test]
    fn token_loss_uniform_logits_is_ln_vocab() {
        // Zero embeddings give equal logits over 8 tokens.
        let out = token_loss(&[1.0, -2.0, 0.5], 3, &vec![0.0; 8 * 3], 8, 3);
        assert!((out.loss - (8.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn token_loss_matches_scalar_log_sum_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (vocab, dim) = (13, 4);
        let emb = randv(&mut rng, vocab * dim);
        let q = randv(&mut rng, dim);
        let target = 5u32;
        let out = token_loss(&q, target, &emb, vocab, dim);

        // Independent scalar evaluation.
        let logits: Vec<f64> = (0..vocab)
            .map(|v| (0..dim).map(|i| emb[v * dim + i] * q[i]).sum())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
        let expected = -(logits[target as usize] - m - z.ln());
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn token_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (vocab, dim) = (6, 3);
        let emb = randv(&mut rng, vocab * dim);
        let q = randv(&mut rng, dim);
        let target = 2u32;
        let out = token_loss(&q, target, &emb, vocab, dim);

        let h = 1e-6;
        for i in 0..dim {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let num = (token_loss(&qp, target, &emb, vocab, dim).loss
                - token_loss(&qm, target, &emb, vocab, dim).loss)
                / (2.0 * h);
            assert!((num - out.dq[i]).abs() < 1e-6);
        }
        for v in 0..vocab {
            for i in 0..dim {
                let mut ep = emb.clone();
                let mut em = emb.clone();
                ep[v * dim + i] += h;
                em[v * dim + i] -= h;
                let num = (token_loss(&q, target, &ep, vocab, dim).loss
                    - token_loss(&q, target, &em, vocab, dim).loss)
                    / (2.0 * h);
                let ana = out.dlogits[v] * q[i];
                assert!((num - ana).abs() < 1e-6, "emb[{v},{i}]");
            }
        }
    }

    #[test]
    fn combined_arithmetic() {
        assert_eq!(combined(0.5, 0.25, 0.0), 0.5);
        assert_eq!(combined(0.5, 0.25, 1.0), 0.75);
        assert_eq!(combined(2.0, 3.0, 0.5), 3.5);
    }
}
